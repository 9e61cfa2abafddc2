#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "changer/train.hpp"

namespace changer {

namespace {

struct Rect {
  int top, left, height, width;
  std::array<double, 3> color;

  bool overlaps(const Rect& o, int gap) const {
    return top < o.top + o.height + gap && o.top < top + height + gap && left < o.left + o.width + gap &&
           o.left < left + width + gap;
  }
};

constexpr int kCoarse = 5;
constexpr double kMinChange = 0.02;
constexpr double kMaxChange = 0.25;

// Smooth terrain: per-channel coarse lattice, bilinearly interpolated, plus a
// fixed fine texture shared by both acquisition times.
Tensor4 background(int size, Rng& rng) {
  const std::array<std::array<double, 3>, 3> palette{{{0.30, 0.42, 0.22}, {0.45, 0.38, 0.28}, {0.36, 0.40, 0.34}}};
  const auto& base = palette[static_cast<std::size_t>(rng.uniform_int(0, 2))];
  std::array<std::array<double, kCoarse * kCoarse>, 3> lattice{};
  for (int c = 0; c < 3; ++c) {
    for (double& v : lattice[static_cast<std::size_t>(c)]) v = base[static_cast<std::size_t>(c)] + rng.uniform(-0.12, 0.12);
  }
  Tensor4 img(Shape{1, 3, size, size});
  for (int i = 0; i < size; ++i) {
    const double u = (i + 0.5) / size * (kCoarse - 1);
    const int i0 = std::min(static_cast<int>(u), kCoarse - 2);
    const double fu = u - i0;
    for (int j = 0; j < size; ++j) {
      const double v = (j + 0.5) / size * (kCoarse - 1);
      const int j0 = std::min(static_cast<int>(v), kCoarse - 2);
      const double fv = v - j0;
      const double texture = rng.uniform(-0.03, 0.03);
      for (int c = 0; c < 3; ++c) {
        const auto& g = lattice[static_cast<std::size_t>(c)];
        const auto at = [&](int a, int b) { return g[static_cast<std::size_t>(a * kCoarse + b)]; };
        const double top = at(i0, j0) + fv * (at(i0, j0 + 1) - at(i0, j0));
        const double bot = at(i0 + 1, j0) + fv * (at(i0 + 1, j0 + 1) - at(i0 + 1, j0));
        img(0, c, i, j) = top + fu * (bot - top) + texture;
      }
    }
  }
  return img;
}

Rect random_building(int size, Rng& rng) {
  const int lo = std::max(3, size / 10);
  const int hi = std::max(lo, size / 4);
  Rect r{};
  r.height = rng.uniform_int(lo, hi);
  r.width = rng.uniform_int(lo, hi);
  r.top = rng.uniform_int(0, size - r.height);
  r.left = rng.uniform_int(0, size - r.width);
  const double roof = rng.uniform(0.55, 0.9);
  for (double& c : r.color) c = std::clamp(roof + rng.uniform(-0.08, 0.08), 0.0, 1.0);
  return r;
}

// Places up to `count` buildings that keep a one-pixel gap to everything in `taken`.
std::vector<Rect> place(int count, int size, const std::vector<Rect>& taken, Rng& rng) {
  std::vector<Rect> out;
  for (int k = 0; k < count; ++k) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      const Rect r = random_building(size, rng);
      const auto clash = [&](const Rect& o) { return r.overlaps(o, 1); };
      if (std::none_of(taken.begin(), taken.end(), clash) && std::none_of(out.begin(), out.end(), clash)) {
        out.push_back(r);
        break;
      }
    }
  }
  return out;
}

void paint(Tensor4& img, const std::vector<Rect>& rects) {
  for (const Rect& r : rects) {
    for (int i = r.top; i < r.top + r.height; ++i) {
      for (int j = r.left; j < r.left + r.width; ++j) {
        for (int c = 0; c < 3; ++c) img(0, c, i, j) = r.color[static_cast<std::size_t>(c)];
      }
    }
  }
}

void mark(std::vector<std::uint8_t>& fp, int size, const std::vector<Rect>& rects) {
  for (const Rect& r : rects) {
    for (int i = r.top; i < r.top + r.height; ++i) {
      std::fill_n(fp.begin() + static_cast<std::ptrdiff_t>(i) * size + r.left, r.width, std::uint8_t{1});
    }
  }
}

} // namespace

Sample synth_sample(std::uint64_t seed, std::uint64_t id, int size, double difficulty) {
  if (size < 32 || size % 32 != 0) {
    throw std::invalid_argument("synth_generate: size must be a positive multiple of 32");
  }
  if (difficulty < 0.0 || difficulty > 1.0) {
    throw std::invalid_argument("synth_generate: difficulty must lie in [0, 1]");
  }
  Rng rng(seed, id);
  const Tensor4 ground = background(size, rng);
  const std::vector<Rect> before = place(rng.uniform_int(3, 7), size, {}, rng);

  std::vector<Rect> after = before;
  std::vector<std::uint8_t> y(static_cast<std::size_t>(size) * size, 0);
  if (difficulty > 0.0) {
    // Redraw the edit until the changed area is neither negligible nor dominant.
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::vector<Rect> kept;
      for (const Rect& r : before) {
        if (!rng.bernoulli(0.35)) kept.push_back(r);
      }
      const std::vector<Rect> added = place(rng.uniform_int(1, 3), size, before, rng);
      std::vector<std::uint8_t> fp0(y.size(), 0), fp1(y.size(), 0);
      mark(fp0, size, before);
      mark(fp1, size, kept);
      mark(fp1, size, added);
      std::vector<std::uint8_t> diff(y.size());
      std::size_t changed = 0;
      for (std::size_t i = 0; i < y.size(); ++i) {
        diff[i] = fp0[i] != fp1[i];
        changed += diff[i];
      }
      const double frac = static_cast<double>(changed) / static_cast<double>(y.size());
      after = kept;
      after.insert(after.end(), added.begin(), added.end());
      y = std::move(diff);
      if (frac >= kMinChange && frac <= kMaxChange) break;
    }
  }

  Sample s;
  s.id = "synth-" + std::to_string(seed) + "-" + std::to_string(id);
  s.x0 = ground;
  s.x1 = ground;
  paint(s.x0, before);
  paint(s.x1, after);
  if (difficulty > 0.0) {
    // inter-temporal domain shift on the second acquisition only
    const double gain = rng.uniform(1.0 - 0.25 * difficulty, 1.0 + 0.25 * difficulty);
    const double bias = rng.uniform(-0.1 * difficulty, 0.1 * difficulty);
    for (int c = 0; c < 3; ++c) {
      const double tint = rng.uniform(1.0 - 0.1 * difficulty, 1.0 + 0.1 * difficulty);
      for (std::size_t i = 0; i < y.size(); ++i) {
        double& v = s.x1.plane(0, c)[i];
        v = v * gain * tint + bias;
      }
    }
    const double noise = 0.02 * difficulty;
    for (Tensor4* img : {&s.x0, &s.x1}) {
      for (std::size_t i = 0; i < img->numel(); ++i) (*img)[i] += rng.uniform(-noise, noise);
    }
  }
  for (Tensor4* img : {&s.x0, &s.x1}) {
    for (std::size_t i = 0; i < img->numel(); ++i) (*img)[i] = std::clamp((*img)[i], 0.0, 1.0);
  }
  s.y = std::move(y);
  return s;
}

std::vector<Sample> synth_generate(std::uint64_t seed, int count, int size, double difficulty, std::uint64_t first_id) {
  if (count < 0) {
    throw std::invalid_argument("synth_generate: negative sample count");
  }
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(synth_sample(seed, first_id + static_cast<std::uint64_t>(i), size, difficulty));
  }
  return out;
}

} // namespace changer
