#include "ufad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ufad {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated checkpoint " + path);
  return v;
}

void put_tensor(std::ofstream& out, const std::string& name, const Mat<float>& t) {
  put<std::uint32_t>(out, std::uint32_t(name.size()));
  out.write(name.data(), std::streamsize(name.size()));
  put<std::uint8_t>(out, 0);
  put<std::uint32_t>(out, 2);
  put<std::uint64_t>(out, std::uint64_t(t.rows()));
  put<std::uint64_t>(out, std::uint64_t(t.cols()));
  out.write(reinterpret_cast<const char*>(t.data()), std::streamsize(sizeof(float) * std::size_t(t.size())));
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& params, const nlohmann::json& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write("UFCK", 4);
  put<std::uint32_t>(out, kVersion);
  const std::string meta = metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), std::streamsize(meta.size()));
  put<std::uint32_t>(out, std::uint32_t(3 * params.values.size()));
  for (const auto& [name, t] : params.values) {
    put_tensor(out, name, t);
    put_tensor(out, name + "#m", params.first_moment.at(name));
    put_tensor(out, name + "#v", params.second_moment.at(name));
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "UFCK", 4) != 0) throw DataError("not a checkpoint: " + path);
  if (get<std::uint32_t>(in, path) != kVersion) throw DataError("unsupported checkpoint version in " + path);
  Checkpoint ck;
  std::string meta(get<std::uint64_t>(in, path), '\0');
  if (!in.read(meta.data(), std::streamsize(meta.size()))) throw DataError("truncated checkpoint " + path);
  ck.metadata = nlohmann::json::parse(meta);
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in, path), '\0');
    if (!in.read(name.data(), std::streamsize(name.size()))) throw DataError("truncated checkpoint " + path);
    const auto dtype = get<std::uint8_t>(in, path);
    const auto rank = get<std::uint32_t>(in, path);
    if (rank != 2) throw DataError("tensor " + name + " has unsupported rank");
    const auto rows = Index(get<std::uint64_t>(in, path));
    const auto cols = Index(get<std::uint64_t>(in, path));
    Mat<float> t(rows, cols);
    if (dtype == 0) {
      if (!in.read(reinterpret_cast<char*>(t.data()), std::streamsize(sizeof(float) * std::size_t(t.size()))))
        throw DataError("truncated checkpoint " + path);
    } else if (dtype == 1) {
      Mat<double> d(rows, cols);
      if (!in.read(reinterpret_cast<char*>(d.data()), std::streamsize(sizeof(double) * std::size_t(d.size()))))
        throw DataError("truncated checkpoint " + path);
      t = d.cast<float>();
    } else {
      throw DataError("tensor " + name + " has unknown dtype");
    }
    const auto hash = name.rfind('#');
    if (hash != std::string::npos && name.substr(hash) == "#m")
      ck.params.first_moment[name.substr(0, hash)] = std::move(t);
    else if (hash != std::string::npos && name.substr(hash) == "#v")
      ck.params.second_moment[name.substr(0, hash)] = std::move(t);
    else
      ck.params.values[name] = std::move(t);
  }
  return ck;
}

}  // namespace ufad
