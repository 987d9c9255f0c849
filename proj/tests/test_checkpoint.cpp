#include "ufad/checkpoint.hpp"
#include "ufad/jointcnn.hpp"

#include <filesystem>
#include <fstream>

#include <doctest.h>

using namespace ufad;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ufad_" + name)).string();
}

}  // namespace

TEST_CASE("checkpoint round trip keeps values, moments and metadata") {
  Architecture a;
  a.image_size = 16;
  a.conv_filters = {4, 4, 8, 8};
  a.hidden_units = 8;
  auto m = build_joint<float>(a, 3);
  for (auto& [name, t] : m.params.first_moment) t.setConstant(0.25f);
  m.params.second_moment.begin()->second(0, 0) = 7.0f;
  const nlohmann::json meta{{"kind", "joint"}, {"partition", {{0, 1}, {2}}}};
  const auto path = temp_path("ck_roundtrip.bin");
  save_checkpoint(path, m.params, meta);
  const auto back = load_checkpoint(path);
  CHECK(back.params == m.params);
  CHECK(back.metadata == meta);
  std::filesystem::remove(path);
}

TEST_CASE("truncated or foreign checkpoint files are rejected") {
  auto m = build_joint<float>(Architecture{16, 1, {2, 2, 2, 2}, 4}, 1);
  const auto path = temp_path("ck_trunc.bin");
  save_checkpoint(path, m.params, nlohmann::json::object());
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "JUNKJUNKJUNK";
  }
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
}
