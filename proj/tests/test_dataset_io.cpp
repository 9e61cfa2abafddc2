#include <algorithm>
#include <cmath>
#include <filesystem>

#include "changer/dataset_io.hpp"
#include "support.hpp"

using namespace changer;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "changer_test_dataset_io" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

} // namespace

TEST_CASE("PNG datasets round trip to 8-bit precision") {
  const auto samples = synth_generate(71, 3, 64, 0.5);
  const fs::path dir = fresh_dir("rt");
  save_png_dataset(dir.string(), samples);
  CHECK(fs::exists(dir / "A"));
  CHECK(fs::exists(dir / "B"));
  CHECK(fs::exists(dir / "label"));

  const auto back = load_png_dataset(dir.string());
  REQUIRE(back.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    // loader visits files in sorted order; match by id
    const auto it = std::find_if(back.begin(), back.end(), [&](const Sample& s) { return s.id == samples[k].id; });
    REQUIRE(it != back.end());
    CHECK(it->y == samples[k].y);
    CHECK(it->x0.shape() == samples[k].x0.shape());
    for (std::size_t i = 0; i < it->x0.numel(); ++i) {
      CHECK(std::abs(it->x0[i] - samples[k].x0[i]) <= 0.5 / 255.0 + 1e-12);
      CHECK(std::abs(it->x1[i] - samples[k].x1[i]) <= 0.5 / 255.0 + 1e-12);
      CHECK(it->x0[i] * 255.0 == std::round(it->x0[i] * 255.0));
    }
  }
}

TEST_CASE("malformed dataset directories") {
  CHECK_THROWS(load_png_dataset((fs::temp_directory_path() / "changer_no_such_dir").string()));
  const fs::path empty = fresh_dir("empty");
  for (const char* sub : {"A", "B", "label"}) fs::create_directories(empty / sub);
  CHECK_THROWS_AS(load_png_dataset(empty.string()), std::runtime_error);
  const fs::path partial = fresh_dir("partial");
  fs::create_directories(partial / "A");
  CHECK_THROWS_AS(load_png_dataset(partial.string()), std::runtime_error);
}
