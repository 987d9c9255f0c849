#include "ufad/data_synth.hpp"

#include "ufad/hash.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

namespace ufad {

namespace {

constexpr double kPi = std::numbers::pi;

struct Canvas {
  int h, w, c;
  std::vector<double> px;
  Canvas(int h_, int w_, int c_) : h(h_), w(w_), c(c_), px(std::size_t(h_) * w_ * c_, 0.0) {}
  double& at(int y, int x, int ch) { return px[(std::size_t(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const { return px[(std::size_t(y) * w + x) * c + ch]; }

  double bilinear(double y, double x, int ch) const {
    y = std::clamp(y, 0.0, double(h - 1));
    x = std::clamp(x, 0.0, double(w - 1));
    const int y0 = int(std::floor(y)), x0 = int(std::floor(x));
    const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = y - y0, fx = x - x0;
    return (1 - fy) * ((1 - fx) * at(y0, x0, ch) + fx * at(y0, x1, ch)) +
           fy * ((1 - fx) * at(y1, x0, ch) + fx * at(y1, x1, ch));
  }
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(eng_); }
  double normal(double sd) { return std::normal_distribution<double>(0.0, sd)(eng_); }
  bool coin(double p) { return uniform(0.0, 1.0) < p; }
  int index(int n) { return std::uniform_int_distribution<int>(0, n - 1)(eng_); }

 private:
  std::mt19937_64 eng_;
};

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

// Pixel colour triple projected onto the requested channel count.
double channel_value(const double (&rgb)[3], int ch, int channels) {
  if (channels == 3) return rgb[ch];
  return (rgb[0] + rgb[1] + rgb[2]) / 3.0;
}

void gaussian_blur(Canvas& img, double sigma) {
  if (sigma <= 0) return;
  const int radius = std::max(1, int(std::ceil(3 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  Canvas tmp(img.h, img.w, img.c);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * img.at(y, std::clamp(x + i, 0, img.w - 1), ch);
        tmp.at(y, x, ch) = acc;
      }
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * tmp.at(std::clamp(y + i, 0, img.h - 1), x, ch);
        img.at(y, x, ch) = acc;
      }
}

Canvas to_canvas(const ImageSample& s) {
  Canvas c(int(s.h), int(s.w), int(s.c));
  for (std::size_t i = 0; i < s.pixels.size(); ++i) c.px[i] = s.pixels[i];
  return c;
}

double param(const AttackTypeSpec& spec, const std::string& key) {
  auto it = spec.params.find(key);
  if (it == spec.params.end())
    throw DataError("attack type " + spec.name + " is missing parameter " + key);
  return it->second;
}

struct FamilyDefaults {
  Family family;
  const char* primary;  // parameter scaled by catalog variants
  std::map<std::string, double> base;
  double primary_max;
};

const std::vector<FamilyDefaults>& family_table() {
  static const std::vector<FamilyDefaults> table = {
      {Family::sign_noise, "epsilon", {{"epsilon", 4.0 / 128}}, 8.0 / 128},
      {Family::pixel_flip, "fraction", {{"fraction", 0.01}}, 0.03},
      {Family::hf_sinusoid, "amplitude", {{"amplitude", 4.0 / 128}, {"period", 2.5}}, 8.0 / 128},
      {Family::local_warp, "amplitude", {{"amplitude", 2.5}, {"radius", 0.15}}, 4.0},
      {Family::color_remap, "strength", {{"strength", 0.5}, {"gamma", 0.75}}, 1.0},
      {Family::patch_blend, "alpha", {{"alpha", 0.75}}, 1.0},
      {Family::print_blur, "sigma", {{"sigma", 1.0}, {"band_amplitude", 3.0 / 128}, {"band_period", 8.0}}, 1.6},
      {Family::replay_moire, "amplitude", {{"amplitude", 5.0 / 128}, {"period", 4.0}}, 10.0 / 128},
      {Family::mask_matte, "coverage", {{"coverage", 0.35}}, 0.5},
  };
  return table;
}

}  // namespace

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split " + s);
}

const char* to_string(Category c) {
  switch (c) {
    case Category::adversarial_like: return "adversarial_like";
    case Category::manipulation_like: return "manipulation_like";
    case Category::spoof_like: return "spoof_like";
  }
  return "?";
}

const char* to_string(Family f) {
  switch (f) {
    case Family::sign_noise: return "sign_noise";
    case Family::pixel_flip: return "pixel_flip";
    case Family::hf_sinusoid: return "hf_sinusoid";
    case Family::local_warp: return "local_warp";
    case Family::color_remap: return "color_remap";
    case Family::patch_blend: return "patch_blend";
    case Family::print_blur: return "print_blur";
    case Family::replay_moire: return "replay_moire";
    case Family::mask_matte: return "mask_matte";
  }
  return "?";
}

Category category_of(Family f) {
  switch (f) {
    case Family::sign_noise:
    case Family::pixel_flip:
    case Family::hf_sinusoid: return Category::adversarial_like;
    case Family::local_warp:
    case Family::color_remap:
    case Family::patch_blend: return Category::manipulation_like;
    default: return Category::spoof_like;
  }
}

void DatasetConfig::validate() const {
  if (image_size < 16 || image_size % 16 != 0)
    throw ConfigError("dataset.image_size must be a positive multiple of 16 (got " +
                      std::to_string(image_size) + ")");
  if (channels != 1 && channels != 3)
    throw ConfigError("dataset.channels must be 1 or 3");
  if (num_types < 1) throw ConfigError("dataset.num_types must be >= 1");
  for (auto s : {Split::train, Split::val, Split::test}) {
    if (!bona_fide_count.count(s) || bona_fide_count.at(s) < 0)
      throw ConfigError(std::string("dataset.bona_fide.") + to_string(s) + " must be >= 0");
    if (!attacks_per_type.count(s) || attacks_per_type.at(s) < 0)
      throw ConfigError(std::string("dataset.attacks_per_type.") + to_string(s) + " must be >= 0");
  }
  for (int t : holdout_types)
    if (t < 0 || t >= num_types)
      throw ConfigError("dataset.holdout_types references unknown type " + std::to_string(t));
}

std::vector<AttackTypeSpec> attack_catalog(int num_types) {
  static const double variant_scale[] = {1.0, 0.6, 1.4, 0.8, 1.2};
  const auto& table = family_table();
  std::vector<AttackTypeSpec> out;
  for (int i = 0; i < num_types; ++i) {
    const auto& fd = table[std::size_t(i) % table.size()];
    const int variant = i / int(table.size());
    AttackTypeSpec spec;
    spec.type_id = i;
    spec.family = fd.family;
    spec.category = category_of(fd.family);
    spec.params = fd.base;
    const double scale = variant_scale[variant % 5];
    spec.params[fd.primary] = std::min(fd.primary_max, fd.base.at(fd.primary) * scale);
    spec.name = std::string(to_string(fd.family)) + (variant ? "_v" + std::to_string(variant) : "");
    out.push_back(std::move(spec));
  }
  return out;
}

AttackTypeSpec max_strength_spec(Family f) {
  for (const auto& fd : family_table()) {
    if (fd.family != f) continue;
    AttackTypeSpec spec;
    spec.family = f;
    spec.category = category_of(f);
    spec.name = std::string(to_string(f)) + "_max";
    spec.params = fd.base;
    spec.params[fd.primary] = fd.primary_max;
    return spec;
  }
  throw DataError("unknown family");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over the combined words
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t base_seed_for(std::uint64_t master_seed, Split split, std::uint64_t index) {
  const std::uint64_t tag = std::uint64_t(int(split) + 1) << 56;
  return tag | (mix_seed(mix_seed(master_seed, std::uint64_t(split)), index) >> 8);
}

Split split_of_base_seed(std::uint64_t base_seed) {
  const int tag = int(base_seed >> 56);
  if (tag < 1 || tag > 3) throw DataError("base seed outside every split range");
  return Split(tag - 1);
}

ImageSample render_bona_fide(std::uint64_t base_seed, int image_size, int channels, Split split) {
  const int s = image_size;
  Rng rng(base_seed);
  Canvas img(s, s, channels);

  double bg0[3], bg1[3];
  for (double& v : bg0) v = rng.uniform(-0.7, 0.7);
  for (double& v : bg1) v = rng.uniform(-0.7, 0.7);
  const double theta = rng.uniform(0, 2 * kPi);
  struct Wave { double fx, fy, phase, amp; };
  std::vector<Wave> low(2), tex(4);
  for (auto& wv : low) {
    const double f = rng.uniform(0.5, 2.0), a = rng.uniform(0, 2 * kPi);
    wv = {f * std::cos(a), f * std::sin(a), rng.uniform(0, 2 * kPi), rng.uniform(0.03, 0.08)};
  }
  for (auto& wv : tex) {
    const double f = rng.uniform(3.0, 9.0), a = rng.uniform(0, 2 * kPi);
    wv = {f * std::cos(a), f * std::sin(a), rng.uniform(0, 2 * kPi), rng.uniform(0.01, 0.04)};
  }

  const double cx = s * (0.5 + rng.uniform(-0.06, 0.06));
  const double cy = s * (0.5 + rng.uniform(-0.06, 0.06));
  const double rx = s * rng.uniform(0.24, 0.30);
  const double ry = s * rng.uniform(0.32, 0.38);
  const double lum = rng.uniform(-0.3, 0.5);
  const double skin[3] = {lum + rng.uniform(0.1, 0.25), lum, lum - rng.uniform(0.05, 0.25)};
  const double light_dir = rng.uniform(0, 2 * kPi);
  const double light_amp = rng.uniform(0.05, 0.2);
  const double eye_dark = rng.uniform(0.5, 0.8);

  auto ellipse_mask = [](double x, double y, double ex, double ey, double erx, double ery) {
    const double d = ((x - ex) / erx) * ((x - ex) / erx) + ((y - ey) / ery) * ((y - ey) / ery);
    return 1.0 - smoothstep(0.75, 1.0, d);
  };

  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const double u = double(x) / s, v = double(y) / s;
      const double t = (u - 0.5) * std::cos(theta) + (v - 0.5) * std::sin(theta) + 0.5;
      double lowf = 0, texf = 0;
      for (const auto& wv : low) lowf += wv.amp * std::sin(2 * kPi * (wv.fx * u + wv.fy * v) + wv.phase);
      for (const auto& wv : tex) texf += wv.amp * std::sin(2 * kPi * (wv.fx * u + wv.fy * v) + wv.phase);

      const double dface = ((x - cx) / rx) * ((x - cx) / rx) + ((y - cy) / ry) * ((y - cy) / ry);
      const double face = 1.0 - smoothstep(0.85, 1.0, dface);
      const double shade = light_amp * ((x - cx) / rx * std::cos(light_dir) +
                                        (y - cy) / ry * std::sin(light_dir)) - 0.15 * dface;
      const double eyes = std::max(ellipse_mask(x, y, cx - 0.4 * rx, cy - 0.25 * ry, 0.18 * rx, 0.08 * ry),
                                   ellipse_mask(x, y, cx + 0.4 * rx, cy - 0.25 * ry, 0.18 * rx, 0.08 * ry));
      const double mouth = ellipse_mask(x, y, cx, cy + 0.5 * ry, 0.35 * rx, 0.07 * ry);

      double rgb[3];
      for (int ch = 0; ch < 3; ++ch) {
        const double bg = bg0[ch] * (1 - t) + bg1[ch] * t + lowf;
        double fc = skin[ch] + shade;
        fc = fc * (1 - eyes) + (skin[ch] - eye_dark) * eyes;
        const double mouth_col = skin[ch] - (ch == 0 ? 0.1 : 0.35);
        fc = fc * (1 - mouth) + mouth_col * mouth;
        rgb[ch] = bg * (1 - face) + fc * face + texf;
      }
      for (int ch = 0; ch < channels; ++ch) img.at(y, x, ch) = channel_value(rgb, ch, channels);
    }

  if (rng.coin(0.5)) gaussian_blur(img, rng.uniform(0.3, 0.8));
  const double gain = rng.uniform(0.85, 1.1), bias = rng.uniform(-0.08, 0.08);
  const double noise_sd = rng.uniform(1.0, 3.0) / 128.0;
  for (double& p : img.px) p = gain * p + bias + rng.normal(noise_sd);

  ImageSample out;
  out.h = s;
  out.w = s;
  out.c = channels;
  out.pixels.resize(img.px.size());
  for (std::size_t i = 0; i < img.px.size(); ++i)
    out.pixels[i] = float(std::clamp(img.px[i], -1.0, 1.0));
  out.label = 0;
  out.split = split;
  out.sample_seed = base_seed;
  out.base_seed = base_seed;
  return out;
}

std::vector<ImageSample> gen_bona_fide(const DatasetConfig& config, Split split, int n) {
  config.validate();
  if (n < 0) throw ConfigError("bona fide count must be >= 0");
  std::vector<ImageSample> out;
  out.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i)
    out.push_back(render_bona_fide(base_seed_for(config.master_seed, split, std::uint64_t(i)),
                                   config.image_size, config.channels, split));
  return out;
}

std::vector<double> attack_pixels(const ImageSample& sample, const AttackTypeSpec& spec,
                                  std::uint64_t seed) {
  Rng rng(seed);
  Canvas img = to_canvas(sample);
  const int h = img.h, w = img.w, c = img.c;
  const double s = double(h);

  switch (spec.family) {
    case Family::sign_noise: {
      const double eps = param(spec, "epsilon");
      for (double& p : img.px) p += rng.coin(0.5) ? eps : -eps;
      break;
    }
    case Family::pixel_flip: {
      const double fraction = param(spec, "fraction");
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (rng.coin(fraction))
            for (int ch = 0; ch < c; ++ch) img.at(y, x, ch) = -img.at(y, x, ch);
      break;
    }
    case Family::hf_sinusoid: {
      const double amp = param(spec, "amplitude"), period = param(spec, "period");
      const double a = rng.uniform(0, 2 * kPi), phase = rng.uniform(0, 2 * kPi);
      const double fx = std::cos(a) / period, fy = std::sin(a) / period;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int ch = 0; ch < c; ++ch)
            img.at(y, x, ch) += amp * std::sin(2 * kPi * (fx * x + fy * y) + phase);
      break;
    }
    case Family::local_warp: {
      const double amp = param(spec, "amplitude"), radius = param(spec, "radius") * s;
      const double wx = s * (0.5 + rng.uniform(-0.15, 0.15)), wy = s * (0.5 + rng.uniform(-0.15, 0.15));
      const double dir = rng.uniform(0, 2 * kPi);
      const Canvas src = img;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double r2 = (x - wx) * (x - wx) + (y - wy) * (y - wy);
          const double m = amp * std::exp(-0.5 * r2 / (radius * radius));
          for (int ch = 0; ch < c; ++ch)
            img.at(y, x, ch) = src.bilinear(y - m * std::sin(dir), x - m * std::cos(dir), ch);
        }
      break;
    }
    case Family::color_remap: {
      const double strength = param(spec, "strength"), gamma = param(spec, "gamma");
      const double angle = rng.coin(0.5) ? strength : -strength;
      const double ca = std::cos(angle), sa = std::sin(angle);
      const double k = 1.0 / std::sqrt(3.0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (c == 3) {
            // rotate about the grey axis (Rodrigues)
            const double v[3] = {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
            const double dot = k * (v[0] + v[1] + v[2]);
            const double cr[3] = {k * (v[2] - v[1]), k * (v[0] - v[2]), k * (v[1] - v[0])};
            for (int ch = 0; ch < 3; ++ch)
              img.at(y, x, ch) = v[ch] * ca + cr[ch] * sa + k * dot * (1 - ca);
          }
          for (int ch = 0; ch < c; ++ch) {
            const double u = std::clamp((img.at(y, x, ch) + 1) / 2, 0.0, 1.0);
            img.at(y, x, ch) = 2 * std::pow(u, gamma) - 1;
          }
        }
      break;
    }
    case Family::patch_blend: {
      const double alpha = param(spec, "alpha");
      const Split split = split_of_base_seed(sample.base_seed);
      std::uint64_t donor = base_seed_for(mix_seed(seed, 0xd0), split, 0);
      const ImageSample other = render_bona_fide(donor, h, c, split);
      const int region = rng.index(3);
      const double py = s * (region == 0 ? 0.38 : region == 1 ? 0.68 : 0.5);
      const double px = s * (0.5 + rng.uniform(-0.05, 0.05));
      const double prx = s * 0.22, pry = s * 0.14;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double d = ((x - px) / prx) * ((x - px) / prx) + ((y - py) / pry) * ((y - py) / pry);
          const double m = alpha * (1.0 - smoothstep(0.6, 1.0, d));
          for (int ch = 0; ch < c; ++ch) {
            const double o = other.pixels[(std::size_t(y) * w + x) * c + ch];
            img.at(y, x, ch) = (1 - m) * img.at(y, x, ch) + m * o;
          }
        }
      break;
    }
    case Family::print_blur: {
      const double sigma = param(spec, "sigma");
      const double band = param(spec, "band_amplitude"), period = param(spec, "band_period");
      gaussian_blur(img, sigma);
      const double phase = rng.uniform(0, 2 * kPi);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int ch = 0; ch < c; ++ch)
            img.at(y, x, ch) = 0.92 * img.at(y, x, ch) + band * std::sin(2 * kPi * y / period + phase);
      break;
    }
    case Family::replay_moire: {
      const double amp = param(spec, "amplitude"), period = param(spec, "period");
      const double rot = rng.uniform(-0.3, 0.3);
      const double p1 = rng.uniform(0, 2 * kPi), p2 = rng.uniform(0, 2 * kPi);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double u = x * std::cos(rot) - y * std::sin(rot);
          const double v = x * std::sin(rot) + y * std::cos(rot);
          const double g = amp * std::cos(2 * kPi * u / period + p1) * std::cos(2 * kPi * v / period + p2);
          for (int ch = 0; ch < c; ++ch) img.at(y, x, ch) += g;
        }
      break;
    }
    case Family::mask_matte: {
      const double coverage = param(spec, "coverage");
      // matte patch over the lower part of the face region
      const double top = s * (0.5 + rng.uniform(-0.05, 0.05)) + s * (0.5 - coverage) * 0.6;
      const double left = s * (0.5 - 0.3), right = s * (0.5 + 0.3);
      const double bottom = std::min(s - 1, top + coverage * s);
      std::vector<double> mean(std::size_t(c), 0.0);
      int cnt = 0;
      for (int y = int(top); y <= int(bottom); ++y)
        for (int x = int(left); x <= int(right); ++x, ++cnt)
          for (int ch = 0; ch < c; ++ch) mean[std::size_t(ch)] += img.at(y, x, ch);
      for (double& m : mean) m /= std::max(cnt, 1);
      const double tilt = rng.uniform(-0.1, 0.1);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double m = smoothstep(left - 1.5, left + 1.5, x) * (1 - smoothstep(right - 1.5, right + 1.5, x)) *
                           smoothstep(top - 1.5, top + 1.5, y) * (1 - smoothstep(bottom - 1.5, bottom + 1.5, y));
          for (int ch = 0; ch < c; ++ch) {
            const double matte = mean[std::size_t(ch)] + tilt * (y - top) / s;
            img.at(y, x, ch) = (1 - m) * img.at(y, x, ch) + m * matte;
          }
        }
      break;
    }
  }
  return img.px;
}

ImageSample apply_attack(const ImageSample& sample, const AttackTypeSpec& spec, std::uint64_t seed) {
  if (sample.label != 0 || sample.attack_type)
    throw DataError("apply_attack: sample is already an attack");
  const std::vector<double> px = attack_pixels(sample, spec, seed);
  ImageSample out = sample;
  for (std::size_t i = 0; i < px.size(); ++i) out.pixels[i] = float(std::clamp(px[i], -1.0, 1.0));
  out.label = 1;
  out.attack_type = spec.type_id;
  out.sample_seed = seed;
  return out;
}

Dataset make_dataset(const DatasetConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.types = attack_catalog(config.num_types);
  for (auto split : {Split::train, Split::val, Split::test}) {
    auto& out = ds.splits[split];
    const int nbf = config.bona_fide_count.at(split);
    const int per_type = config.attacks_per_type.at(split);
    out = gen_bona_fide(config, split, nbf);
    for (const auto& type : ds.types) {
      const bool held_out = std::find(config.holdout_types.begin(), config.holdout_types.end(),
                                      type.type_id) != config.holdout_types.end();
      if (held_out && split != Split::test) continue;
      for (int j = 0; j < per_type; ++j) {
        const std::uint64_t idx = std::uint64_t(nbf) + std::uint64_t(type.type_id) * std::uint64_t(per_type) + std::uint64_t(j);
        const std::uint64_t base = base_seed_for(config.master_seed, split, idx);
        const ImageSample bf = render_bona_fide(base, config.image_size, config.channels, split);
        out.push_back(apply_attack(bf, type, mix_seed(base, 0xa77ac0ULL + std::uint64_t(type.type_id))));
      }
    }
  }
  return ds;
}

std::vector<std::string> Dataset::manifest_lines() const {
  std::vector<std::string> lines;
  for (auto split : {Split::train, Split::val, Split::test}) {
    for (const auto& s : splits.at(split)) {
      nlohmann::json j;
      j["sample_seed"] = s.sample_seed;
      j["base_seed"] = s.base_seed;
      j["split"] = to_string(s.split);
      j["label"] = s.label;
      j["attack_type"] = s.attack_type ? nlohmann::json(*s.attack_type) : nlohmann::json(nullptr);
      nlohmann::json params = nlohmann::json::object();
      if (s.attack_type) {
        const auto& spec = types.at(std::size_t(*s.attack_type));
        params["family"] = to_string(spec.family);
        for (const auto& [k, v] : spec.params) params[k] = v;
      }
      j["family_params"] = params;
      lines.push_back(j.dump());
    }
  }
  return lines;
}

std::string Dataset::manifest_hash() const {
  std::uint64_t h = fnv1a64("");
  for (const auto& line : manifest_lines()) h = fnv1a64(line + "\n", h);
  return hex64(h);
}

void write_manifest(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path);
  for (const auto& line : ds.manifest_lines()) out << line << '\n';
}

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

}  // namespace

void write_tensor_cache(const std::vector<ImageSample>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write tensor cache " + path);
  for (const auto& s : samples) {
    out.write("UFAD", 4);
    put_u32(out, std::uint32_t(s.h));
    put_u32(out, std::uint32_t(s.w));
    put_u32(out, std::uint32_t(s.c));
    for (float f : s.pixels) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
}

std::vector<std::vector<float>> read_tensor_cache(const std::string& path, Index* h, Index* w,
                                                  Index* c) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read tensor cache " + path);
  std::vector<std::vector<float>> out;
  unsigned char header[16];
  while (in.read(reinterpret_cast<char*>(header), 16)) {
    if (std::memcmp(header, "UFAD", 4) != 0) throw DataError("bad tensor cache magic in " + path);
    *h = get_u32(header + 4);
    *w = get_u32(header + 8);
    *c = get_u32(header + 12);
    const std::size_t n = std::size_t(*h) * std::size_t(*w) * std::size_t(*c);
    std::vector<unsigned char> raw(4 * n);
    if (!in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size())))
      throw DataError("truncated tensor cache " + path);
    std::vector<float> px(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t bits = get_u32(raw.data() + 4 * i);
      std::memcpy(&px[i], &bits, 4);
    }
    out.push_back(std::move(px));
  }
  return out;
}

nlohmann::json to_json(const DatasetConfig& config) {
  nlohmann::json j;
  j["image_size"] = config.image_size;
  j["channels"] = config.channels;
  j["num_types"] = config.num_types;
  j["master_seed"] = config.master_seed;
  for (auto s : {Split::train, Split::val, Split::test}) {
    j["bona_fide"][to_string(s)] = config.bona_fide_count.at(s);
    j["attacks_per_type"][to_string(s)] = config.attacks_per_type.at(s);
  }
  j["holdout_types"] = config.holdout_types;
  return j;
}

}  // namespace ufad
