#include "rivlpr/augment.hpp"

#include <algorithm>
#include <cmath>

#include "rivlpr/rng.hpp"

namespace rivlpr {

void AugmentSpec::validate(int width) const {
  require(square_mask_ratio_max >= 0.0 && square_mask_ratio_max <= 0.4, "augment: square_mask_ratio_max must be in [0, 0.4]");
  require(cyl_mask_width_max >= 0.0 && cyl_mask_width_max <= 0.3, "augment: cyl_mask_width_max must be in [0, 0.3]");
  require(line_mask_count_max >= 0, "augment: line_mask_count_max must be >= 0");
  require(yaw_shift >= 0 && yaw_shift < std::max(width, 1), "augment: yaw_shift must be in [0, W)");
}

RivImage yaw_shift(const RivImage& img, int s) {
  const int w = img.width;
  RivImage out(img.height, w);
  if (w == 0) return out;
  const int shift = ((s % w) + w) % w;
  for (int v = 0; v < img.height; ++v) {
    for (int q = 0; q < w; ++q) {
      const int src = (q - shift + w) % w;
      for (int c = 0; c < RivImage::kChannels; ++c) out.at(v, q, c) = img.at(v, src, c);
      out.valid[static_cast<std::size_t>(v) * w + q] = img.valid[static_cast<std::size_t>(v) * w + src];
    }
  }
  return out;
}

std::size_t MaskBitmap::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

MaskBitmap MaskLayers::combined() const {
  MaskBitmap out(square.height, square.width);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = square.bits[i] | cylinder.bits[i] | lines.bits[i];
  return out;
}

void add_cylindrical_mask(MaskBitmap& mask, int start, int width) {
  require(width >= 0 && width <= mask.width, "cylindrical mask wider than the image");
  for (int j = 0; j < width; ++j) {
    const int u = ((start + j) % mask.width + mask.width) % mask.width;
    for (int v = 0; v < mask.height; ++v) mask.at(v, u) = 1;
  }
}

MaskBitmap shift_mask(const MaskBitmap& mask, int s) {
  MaskBitmap out(mask.height, mask.width);
  const int w = mask.width;
  const int shift = ((s % w) + w) % w;
  for (int v = 0; v < mask.height; ++v) {
    for (int q = 0; q < w; ++q) out.at(v, q) = mask.at(v, (q - shift + w) % w);
  }
  return out;
}

MaskLayers sample_masks(int height, int width, const AugmentSpec& spec) {
  spec.validate(width);
  MaskLayers layers{MaskBitmap(height, width), MaskBitmap(height, width), MaskBitmap(height, width)};
  Rng rng(spec.rng_seed);

  // Square masks: accumulate squares until the sampled area budget is met or
  // the attempt budget runs out. A square is only placed if it fits the budget.
  const auto area_budget = static_cast<std::size_t>(
      std::floor(rng.uniform() * spec.square_mask_ratio_max * static_cast<double>(height) * width));
  if (area_budget > 0) {
    const int side_max = std::max(1, std::min({height, width, static_cast<int>(std::sqrt(static_cast<double>(area_budget)))}));
    std::size_t masked = 0;
    for (int attempt = 0; attempt < 64 && masked < area_budget; ++attempt) {
      const int side = static_cast<int>(rng.integer(1, side_max));
      const int v0 = static_cast<int>(rng.integer(0, height - side));
      const int u0 = static_cast<int>(rng.integer(0, width - side));
      std::size_t fresh = 0;
      for (int v = v0; v < v0 + side; ++v)
        for (int u = u0; u < u0 + side; ++u) fresh += layers.square.at(v, u) == 0;
      if (masked + fresh > area_budget) continue;
      for (int v = v0; v < v0 + side; ++v)
        for (int u = u0; u < u0 + side; ++u) layers.square.at(v, u) = 1;
      masked += fresh;
    }
  }

  const int cyl_cols = static_cast<int>(std::floor(rng.uniform() * spec.cyl_mask_width_max * width));
  const int cyl_start = static_cast<int>(rng.integer(0, width - 1));
  if (cyl_cols > 0) add_cylindrical_mask(layers.cylinder, cyl_start, cyl_cols);

  const int lines = spec.line_mask_count_max > 0 ? static_cast<int>(rng.integer(0, spec.line_mask_count_max)) : 0;
  for (int i = 0; i < lines; ++i) {
    const int h = static_cast<int>(rng.integer(1, std::min(3, height)));
    const int v0 = static_cast<int>(rng.integer(0, height - h));
    int u0 = 0, len = width;
    if (rng.uniform() >= 0.5) {
      u0 = static_cast<int>(rng.integer(0, width - 1));
      len = static_cast<int>(rng.integer(1, width - u0));
    }
    for (int v = v0; v < v0 + h; ++v)
      for (int u = u0; u < u0 + len; ++u) layers.lines.at(v, u) = 1;
  }
  return layers;
}

RivImage apply_mask(const RivImage& img, const MaskBitmap& mask) {
  require(mask.height == img.height && mask.width == img.width, "apply_mask: shape mismatch");
  RivImage out = img;
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      if (!mask.at(v, u)) continue;
      for (int c = 0; c < RivImage::kChannels; ++c) out.at(v, u, c) = 0.0f;
      out.valid[static_cast<std::size_t>(v) * img.width + u] = 0;
    }
  }
  return out;
}

RivImage apply_masks(const RivImage& img, const AugmentSpec& spec) {
  return apply_mask(img, sample_masks(img.height, img.width, spec).combined());
}

}  // namespace rivlpr
