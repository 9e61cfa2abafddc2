#include "changer/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <stdexcept>

#include <png.h>

namespace changer {

namespace fs = std::filesystem;

namespace {

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

Image8 read_png(const fs::path& path, bool gray) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out{static_cast<int>(image.width), static_cast<int>(image.height), gray ? 1 : 3, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return out;
}

void write_png(const fs::path& path, const Image8& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

Tensor4 to_tensor(const Image8& img) {
  Tensor4 t(Shape{1, 3, img.height, img.width});
  for (int i = 0; i < img.height; ++i) {
    for (int j = 0; j < img.width; ++j) {
      for (int c = 0; c < 3; ++c) {
        t(0, c, i, j) = img.pixels[(static_cast<std::size_t>(i) * img.width + j) * 3 + c] / 255.0;
      }
    }
  }
  return t;
}

Image8 from_tensor(const Tensor4& t) {
  const Shape& s = t.shape();
  Image8 img{s.w, s.h, 3, std::vector<std::uint8_t>(s.plane() * 3)};
  for (int i = 0; i < s.h; ++i) {
    for (int j = 0; j < s.w; ++j) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(t(0, c, i, j), 0.0, 1.0);
        img.pixels[(static_cast<std::size_t>(i) * s.w + j) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return img;
}

} // namespace

std::vector<Sample> load_png_dataset(const std::string& dir) {
  const fs::path root(dir);
  for (const char* sub : {"A", "B", "label"}) {
    if (!fs::is_directory(root / sub)) {
      throw std::runtime_error("dataset directory " + dir + " lacks sub-folder " + sub + "/");
    }
  }
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(root / "A")) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) {
    throw std::runtime_error("dataset directory " + dir + " contains no PNG pairs");
  }
  std::vector<Sample> out;
  for (const std::string& name : names) {
    const Image8 a = read_png(root / "A" / name, false);
    const Image8 b = read_png(root / "B" / name, false);
    const Image8 l = read_png(root / "label" / name, true);
    if (a.width != b.width || a.height != b.height || a.width != l.width || a.height != l.height) {
      throw ShapeError("dataset pair " + name + " has mismatched image sizes");
    }
    Sample s;
    s.id = fs::path(name).stem().string();
    s.x0 = to_tensor(a);
    s.x1 = to_tensor(b);
    s.y.resize(l.pixels.size());
    std::transform(l.pixels.begin(), l.pixels.end(), s.y.begin(), [](std::uint8_t v) { return v > 127 ? 1 : 0; });
    out.push_back(std::move(s));
  }
  return out;
}

void save_png_dataset(const std::string& dir, const std::vector<Sample>& samples) {
  const fs::path root(dir);
  for (const char* sub : {"A", "B", "label"}) fs::create_directories(root / sub);
  for (const Sample& s : samples) {
    const std::string name = s.id + ".png";
    write_png(root / "A" / name, from_tensor(s.x0));
    write_png(root / "B" / name, from_tensor(s.x1));
    Image8 label{s.width(), s.height(), 1, std::vector<std::uint8_t>(s.y.size())};
    std::transform(s.y.begin(), s.y.end(), label.pixels.begin(), [](std::uint8_t v) { return v ? 255 : 0; });
    write_png(root / "label" / name, label);
  }
}

} // namespace changer
