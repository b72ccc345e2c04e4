#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "reidkit/array.hpp"
#include "reidkit/fields.hpp"
#include "reidkit/harness/config.hpp"

namespace reidkit::harness {

/// Linear warmup from warmup_start_lr to base_lr over warmup_epochs, then
/// base_lr times decay_factor per decay epoch already reached.
inline double lr_schedule(const OptimConfig& o, int epoch) {
  require(epoch >= 0, ErrorCode::kInvalidConfig, "epoch must be non-negative");
  if (epoch < o.warmup_epochs) {
    return o.warmup_start_lr + (o.base_lr - o.warmup_start_lr) * epoch / o.warmup_epochs;
  }
  double lr = o.base_lr;
  for (int d : o.decay_epochs)
    if (epoch >= d) lr *= o.decay_factor;
  return lr;
}

/// Random choices of one augmentation draw. The crop keeps the window
/// starting at (offset_y, offset_x) of the zero-padded image, so source
/// pixel (y, x) lands at (y + pad - offset_y, x + pad - offset_x).
struct AugmentDraw {
  int pad = 0;
  int offset_y = 0, offset_x = 0;
  bool erased = false;
  int erase_y = 0, erase_x = 0, erase_h = 0, erase_w = 0;
  std::uint64_t noise_seed = 0;

  int shift_y() const { return pad - offset_y; }
  int shift_x() const { return pad - offset_x; }
};

inline AugmentDraw draw_augment(const AugmentConfig& cfg, int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AugmentDraw d;
  d.pad = cfg.pad;
  std::uniform_int_distribution<int> off(0, 2 * cfg.pad);
  d.offset_y = off(rng);
  d.offset_x = off(rng);
  d.noise_seed = rng();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) >= cfg.erase_prob) return d;
  const double area = static_cast<double>(height) * width;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double target = area * (cfg.erase_area_min + (cfg.erase_area_max - cfg.erase_area_min) * u(rng));
    const double la = std::log(cfg.erase_aspect_min), lb = std::log(cfg.erase_aspect_max);
    const double aspect = std::exp(la + (lb - la) * u(rng));
    const int h = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int w = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (h < 1 || w < 1 || h >= height || w >= width) continue;
    d.erased = true;
    d.erase_h = h;
    d.erase_w = w;
    d.erase_y = std::uniform_int_distribution<int>(0, height - h)(rng);
    d.erase_x = std::uniform_int_distribution<int>(0, width - w)(rng);
    return d;
  }
  return d;
}

/// Shifts an H x W x C array by the draw's crop, filling uncovered cells.
template <class T>
Array3<T> shift_like(const Array3<T>& src, const AugmentDraw& d, T fill = T{}) {
  Array3<T> out(src.height, src.width, src.channels, fill);
  const int sy = d.shift_y(), sx = d.shift_x();
  for (int y = 0; y < src.height; ++y) {
    const int ty = y + sy;
    if (ty < 0 || ty >= src.height) continue;
    for (int x = 0; x < src.width; ++x) {
      const int tx = x + sx;
      if (tx < 0 || tx >= src.width) continue;
      for (int c = 0; c < src.channels; ++c) out(ty, tx, c) = src(y, x, c);
    }
  }
  return out;
}

inline fields::ParsingLabelMap shift_like(const fields::ParsingLabelMap& src, const AugmentDraw& d) {
  fields::ParsingLabelMap out{Array2<int>(src.Y.height, src.Y.width, 0), src.K};
  for (int y = 0; y < src.Y.height; ++y) {
    const int ty = y + d.shift_y();
    if (ty < 0 || ty >= src.Y.height) continue;
    for (int x = 0; x < src.Y.width; ++x) {
      const int tx = x + d.shift_x();
      if (tx >= 0 && tx < src.Y.width) out.Y(ty, tx) = src.Y(y, x);
    }
  }
  return out;
}

/// Pad-and-crop, then (with the draw's probability) overwrite a rectangle
/// with uniform noise.
inline Image apply_augment(const Image& image, const AugmentDraw& d) {
  Image out = shift_like(image, d, 0.0f);
  if (d.erased) {
    std::mt19937_64 rng(d.noise_seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int y = d.erase_y; y < d.erase_y + d.erase_h; ++y)
      for (int x = d.erase_x; x < d.erase_x + d.erase_w; ++x)
        for (int c = 0; c < out.channels; ++c) out(y, x, c) = u(rng);
  }
  return out;
}

inline Image augment(const Image& image, const AugmentConfig& cfg, std::uint64_t seed) {
  return apply_augment(image, draw_augment(cfg, image.height, image.width, seed));
}

}  // namespace reidkit::harness
