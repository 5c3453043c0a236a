#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rivlpr/common.hpp"
#include "rivlpr/riv.hpp"

namespace rivlpr {

inline constexpr int kPatchSize = 14;
inline constexpr int kPatchStatistics = 4 * RivImage::kChannels;  // mean, std, min, max per channel

struct EncoderConfig {
  int channels = 64;         // C
  int blocks = 12;           // L
  int adapter_interval = 3;  // k
  int adapter_hidden = 32;   // bottleneck width inside each adapter stage
  std::uint64_t seed = 0x5EED;

  int stages() const { return blocks / adapter_interval; }
  void validate() const;
};

/// Patch embeddings laid out row-major over the H' x W' grid, plus the global token.
struct PatchFeatureGrid {
  int rows = 0;  // H'
  int cols = 0;  // W'
  Mat patches;   // (rows * cols) x C
  Vec global_token;
  int patch_size = kPatchSize;

  int count() const { return rows * cols; }
  int channels() const { return static_cast<int>(patches.cols()); }
};

/// Per-block outputs x_1..x_L of the frozen encoder.
struct BlockStack {
  int rows = 0;
  int cols = 0;
  int interval = 1;
  std::vector<Mat> patches;  // L entries, each (rows * cols) x C
  std::vector<Vec> tokens;   // L entries

  int blocks() const { return static_cast<int>(patches.size()); }
};

/// Frozen stand-in for the vision backbone. Each patch is described only by its
/// own pixel statistics (no positional encoding), so whole-patch column shifts of
/// the image shift the patch grid and leave the values bit-identical.
class ToyEncoder {
 public:
  explicit ToyEncoder(const EncoderConfig& cfg);

  BlockStack encode(const RivImage& img) const;
  const EncoderConfig& config() const { return cfg_; }
  /// FNV-1a over the frozen weights; used to assert training never touches them.
  std::uint64_t weights_hash() const;

  /// (rows * cols) x 12 matrix of per-patch channel statistics.
  static Mat patch_statistics(const RivImage& img);

 private:
  EncoderConfig cfg_;
  Mat stats_proj_;  // 12 x C
  Vec stats_bias_;
  Mat block_proj_;  // C x C
  Vec block_bias_;
};

/// pointwise (C -> D) -> GELU -> residual depthwise 3x3 -> pointwise (D -> C).
/// The 3x3 mix wraps cyclically across columns and zero-pads rows.
struct AdapterStage {
  Mat w_in;     // C x D
  Vec b_in;     // D
  Mat spatial;  // D x 9, taps ordered (dr, dc) row-major over {-1, 0, 1}^2
  Mat w_out;    // D x C
  Vec b_out;    // C
};

struct AdapterParams {
  int channels = 0;
  int hidden = 0;
  std::vector<AdapterStage> stages;

  static AdapterParams zeros(int channels, int hidden, int stages);
  static AdapterParams random(int channels, int hidden, int stages, std::uint64_t seed);

  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  bool operator==(const AdapterParams& o) const;
};

/// Intermediate values of one adapter_forward call, kept for the backward pass.
struct AdapterTape {
  int rows = 0, cols = 0;
  struct Stage {
    Mat input;   // z
    Mat pre;     // z W_in + b_in
    Mat act;     // GELU(pre)
    Mat mixed;   // act + depthwise(act)
  };
  std::vector<Stage> stages;
};

PatchFeatureGrid adapter_forward(const BlockStack& stack, const AdapterParams& params, AdapterTape* tape = nullptr);
/// Accumulates parameter gradients into `grad` (same shape as params) given dL/d(output patches).
void adapter_backward(const AdapterTape& tape, const AdapterParams& params, const Mat& grad_out, AdapterParams& grad);

PatchFeatureGrid encode(const ToyEncoder& encoder, const RivImage& img, const AdapterParams& params);

/// Cyclic shift of the grid by s patch columns (column q takes column q - s).
PatchFeatureGrid shift_columns(const PatchFeatureGrid& grid, int s);

std::vector<std::uint8_t> encode_adapter(const AdapterParams& params);
AdapterParams decode_adapter(std::span<const std::uint8_t> bytes);
void save_adapter(const std::filesystem::path& path, const AdapterParams& params);
AdapterParams load_adapter(const std::filesystem::path& path);

}  // namespace rivlpr
