#pragma once

#include <cstdint>
#include <vector>

#include "rivlpr/riv.hpp"

namespace rivlpr {

struct AugmentSpec {
  int yaw_shift = 0;                   // columns
  double square_mask_ratio_max = 0.4;  // fraction of H*W
  double cyl_mask_width_max = 0.3;     // fraction of W
  int line_mask_count_max = 4;
  std::uint64_t rng_seed = 0;

  void validate(int width) const;
};

/// Column q of the output is column (q - s) mod W of the input.
RivImage yaw_shift(const RivImage& img, int s);

/// H x W occlusion bitmap, 1 = masked.
struct MaskBitmap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  MaskBitmap(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t& at(int v, int u) { return bits[static_cast<std::size_t>(v) * width + u]; }
  std::uint8_t at(int v, int u) const { return bits[static_cast<std::size_t>(v) * width + u]; }
  std::size_t count() const;
  bool operator==(const MaskBitmap&) const = default;
};

struct MaskLayers {
  MaskBitmap square;
  MaskBitmap cylinder;
  MaskBitmap lines;
  MaskBitmap combined() const;
};

/// Seeded square, cylindrical and line masks within the configured caps.
MaskLayers sample_masks(int height, int width, const AugmentSpec& spec);
void add_cylindrical_mask(MaskBitmap& mask, int start, int width);
MaskBitmap shift_mask(const MaskBitmap& mask, int s);

RivImage apply_mask(const RivImage& img, const MaskBitmap& mask);
RivImage apply_masks(const RivImage& img, const AugmentSpec& spec);

}  // namespace rivlpr
