#include "rivlpr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "binary_io.hpp"
#include "rivlpr/rng.hpp"

namespace rivlpr {

void EncoderConfig::validate() const {
  require(channels > 0, "encoder: channels must be positive");
  require(adapter_hidden > 0, "encoder: adapter_hidden must be positive");
  require(adapter_interval >= 1 && blocks >= adapter_interval, "encoder: need blocks >= adapter_interval >= 1");
}

namespace {

Mat gaussian(Rng& rng, int rows, int cols, double scale) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(scale * rng.normal());
  return m;
}

// out[r, :] = tanh(in[r, :] * w + b), accumulated in a fixed order per row so that
// a row's result never depends on its position in the matrix.
Mat dense_tanh(const Mat& in, const Mat& w, const Vec& b) {
  Mat out(in.rows(), w.cols());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      double acc = b(c);
      for (Eigen::Index k = 0; k < in.cols(); ++k) acc += in(r, k) * w(k, c);
      out(r, c) = std::tanh(acc);
    }
  }
  return out;
}

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
  const double inner = kGeluScale * (x + 0.044715 * x * x * x);
  const double t = std::tanh(inner);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluScale * (1.0 + 3.0 * 0.044715 * x * x);
}

// Depthwise 3x3 over the (rows x cols) grid: cyclic in columns, zero rows outside.
Mat depthwise(const Mat& act, const Mat& taps, int rows, int cols) {
  Mat out = Mat::Zero(act.rows(), act.cols());
  const Eigen::Index d = act.cols();
  for (int p = 0; p < rows; ++p) {
    for (int q = 0; q < cols; ++q) {
      const int dst = p * cols + q;
      for (int dr = -1; dr <= 1; ++dr) {
        const int pr = p + dr;
        if (pr < 0 || pr >= rows) continue;
        for (int dc = -1; dc <= 1; ++dc) {
          const int src = pr * cols + ((q + dc) % cols + cols) % cols;
          const int tap = (dr + 1) * 3 + (dc + 1);
          for (Eigen::Index c = 0; c < d; ++c) out(dst, c) += taps(c, tap) * act(src, c);
        }
      }
    }
  }
  return out;
}

}  // namespace

ToyEncoder::ToyEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg.seed);
  stats_proj_ = gaussian(rng, kPatchStatistics, cfg.channels, 2.0 / std::sqrt(static_cast<double>(kPatchStatistics)));
  stats_bias_ = gaussian(rng, cfg.channels, 1, 0.5);
  block_proj_ = gaussian(rng, cfg.channels, cfg.channels, 1.2 / std::sqrt(static_cast<double>(cfg.channels)));
  block_bias_ = gaussian(rng, cfg.channels, 1, 0.1);
}

Mat ToyEncoder::patch_statistics(const RivImage& img) {
  require(img.height >= kPatchSize && img.width >= kPatchSize, "toy_encode: image smaller than one patch");
  const int rows = img.height / kPatchSize, cols = img.width / kPatchSize;
  Mat stats(rows * cols, kPatchStatistics);
  constexpr double kArea = kPatchSize * kPatchSize;
  for (int p = 0; p < rows; ++p) {
    for (int q = 0; q < cols; ++q) {
      for (int c = 0; c < RivImage::kChannels; ++c) {
        double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (int v = p * kPatchSize; v < (p + 1) * kPatchSize; ++v) {
          for (int u = q * kPatchSize; u < (q + 1) * kPatchSize; ++u) {
            const double x = img.at(v, u, c);
            sum += x;
            lo = std::min(lo, x);
            hi = std::max(hi, x);
          }
        }
        const double mean = sum / kArea;
        double var = 0.0;
        for (int v = p * kPatchSize; v < (p + 1) * kPatchSize; ++v) {
          for (int u = q * kPatchSize; u < (q + 1) * kPatchSize; ++u) {
            const double dx = img.at(v, u, c) - mean;
            var += dx * dx;
          }
        }
        const int row = p * cols + q;
        stats(row, 4 * c + 0) = mean;
        stats(row, 4 * c + 1) = std::sqrt(var / kArea);
        stats(row, 4 * c + 2) = lo;
        stats(row, 4 * c + 3) = hi;
      }
    }
  }
  return stats;
}

BlockStack ToyEncoder::encode(const RivImage& img) const {
  const Mat stats = patch_statistics(img);
  BlockStack stack;
  stack.rows = img.height / kPatchSize;
  stack.cols = img.width / kPatchSize;
  stack.interval = cfg_.adapter_interval;
  stack.patches.reserve(cfg_.blocks);
  stack.patches.push_back(dense_tanh(stats, stats_proj_, stats_bias_));
  for (int b = 1; b < cfg_.blocks; ++b) stack.patches.push_back(dense_tanh(stack.patches.back(), block_proj_, block_bias_));
  for (const Mat& x : stack.patches) stack.tokens.push_back(x.colwise().mean().transpose());
  return stack;
}

std::uint64_t ToyEncoder::weights_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const double* p, Eigen::Index n) {
    const auto* b = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  mix(stats_proj_.data(), stats_proj_.size());
  mix(stats_bias_.data(), stats_bias_.size());
  mix(block_proj_.data(), block_proj_.size());
  mix(block_bias_.data(), block_bias_.size());
  return h;
}

// ---------------------------------------------------------------------------
// Adapter parameters

AdapterParams AdapterParams::zeros(int channels, int hidden, int stages) {
  AdapterParams p;
  p.channels = channels;
  p.hidden = hidden;
  for (int s = 0; s < stages; ++s) {
    p.stages.push_back({Mat::Zero(channels, hidden), Vec::Zero(hidden), Mat::Zero(hidden, 9), Mat::Zero(hidden, channels),
                        Vec::Zero(channels)});
  }
  return p;
}

AdapterParams AdapterParams::random(int channels, int hidden, int stages, std::uint64_t seed) {
  AdapterParams p = zeros(channels, hidden, stages);
  Rng rng(seed);
  for (AdapterStage& st : p.stages) {
    st.w_in = gaussian(rng, channels, hidden, 1.0 / std::sqrt(static_cast<double>(channels)));
    st.spatial = gaussian(rng, hidden, 9, 1.0 / 3.0);
    st.w_out = gaussian(rng, hidden, channels, 0.5 / std::sqrt(static_cast<double>(hidden)));
  }
  return p;
}

std::vector<std::span<double>> AdapterParams::tensors() {
  std::vector<std::span<double>> out;
  for (AdapterStage& st : stages) {
    for (auto* m : {&st.w_in, &st.spatial, &st.w_out}) out.emplace_back(m->data(), static_cast<std::size_t>(m->size()));
    for (auto* v : {&st.b_in, &st.b_out}) out.emplace_back(v->data(), static_cast<std::size_t>(v->size()));
  }
  return out;
}

std::vector<std::span<const double>> AdapterParams::tensors() const {
  std::vector<std::span<const double>> out;
  for (auto s : const_cast<AdapterParams*>(this)->tensors()) out.emplace_back(s.data(), s.size());
  return out;
}

bool AdapterParams::operator==(const AdapterParams& o) const {
  if (channels != o.channels || hidden != o.hidden || stages.size() != o.stages.size()) return false;
  const auto a = tensors(), b = o.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::equal(a[i].begin(), a[i].end(), b[i].begin(), b[i].end())) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Adapter recurrence:
//   y_1 = Adapter_1(x_1 + x_k) + x_1
//   y_i = Adapter_i(y_{i-1} + x_{ik}) + y_{i-1},  2 <= i <= floor(L / k)

PatchFeatureGrid adapter_forward(const BlockStack& stack, const AdapterParams& params, AdapterTape* tape) {
  const int num_stages = stack.blocks() / stack.interval;
  if (static_cast<int>(params.stages.size()) != num_stages) {
    fail(ErrorCode::kShape, "adapter_forward: expected " + std::to_string(num_stages) + " adapter stages, got " +
                                std::to_string(params.stages.size()));
  }
  require(num_stages >= 1, "adapter_forward: need at least one adapter stage");
  const Eigen::Index channels = stack.patches.front().cols();
  if (params.channels != channels) fail(ErrorCode::kShape, "adapter_forward: channel mismatch");
  for (const Mat& x : stack.patches) {
    if (x.rows() != stack.rows * stack.cols || x.cols() != channels) fail(ErrorCode::kShape, "adapter_forward: ragged block stack");
  }

  if (tape) {
    tape->rows = stack.rows;
    tape->cols = stack.cols;
    tape->stages.clear();
  }
  Mat y = stack.patches[0];
  for (int i = 1; i <= num_stages; ++i) {
    const AdapterStage& st = params.stages[i - 1];
    const Mat z = y + stack.patches[i * stack.interval - 1];
    Mat pre = z * st.w_in;
    pre.rowwise() += st.b_in.transpose();
    const Mat act = pre.unaryExpr([](double x) { return gelu(x); });
    const Mat mixed = act + depthwise(act, st.spatial, stack.rows, stack.cols);
    Mat out = mixed * st.w_out;
    out.rowwise() += st.b_out.transpose();
    if (tape) tape->stages.push_back({z, pre, act, mixed});
    y += out;
  }
  PatchFeatureGrid grid;
  grid.rows = stack.rows;
  grid.cols = stack.cols;
  grid.patches = std::move(y);
  grid.global_token = stack.tokens.back();
  return grid;
}

void adapter_backward(const AdapterTape& tape, const AdapterParams& params, const Mat& grad_out, AdapterParams& grad) {
  require(grad.stages.size() == params.stages.size(), "adapter_backward: gradient buffer shape mismatch");
  Mat g = grad_out;  // dL/dy_i
  for (int i = static_cast<int>(params.stages.size()); i >= 1; --i) {
    const AdapterStage& st = params.stages[i - 1];
    const AdapterTape::Stage& t = tape.stages[i - 1];
    AdapterStage& gs = grad.stages[i - 1];

    gs.w_out.noalias() += t.mixed.transpose() * g;
    gs.b_out += g.colwise().sum().transpose();
    const Mat g_mixed = g * st.w_out.transpose();

    // mixed = act + depthwise(act): transpose of the cyclic 3x3 stencil.
    Mat g_act = g_mixed;
    const Eigen::Index d = g_mixed.cols();
    for (int p = 0; p < tape.rows; ++p) {
      for (int q = 0; q < tape.cols; ++q) {
        const int dst = p * tape.cols + q;
        for (int dr = -1; dr <= 1; ++dr) {
          const int pr = p + dr;
          if (pr < 0 || pr >= tape.rows) continue;
          for (int dc = -1; dc <= 1; ++dc) {
            const int src = pr * tape.cols + ((q + dc) % tape.cols + tape.cols) % tape.cols;
            const int tap = (dr + 1) * 3 + (dc + 1);
            for (Eigen::Index c = 0; c < d; ++c) {
              g_act(src, c) += st.spatial(c, tap) * g_mixed(dst, c);
              gs.spatial(c, tap) += g_mixed(dst, c) * t.act(src, c);
            }
          }
        }
      }
    }
    const Mat g_pre = g_act.cwiseProduct(t.pre.unaryExpr([](double x) { return gelu_grad(x); }));
    gs.w_in.noalias() += t.input.transpose() * g_pre;
    gs.b_in += g_pre.colwise().sum().transpose();
    // y_i = out + base, z = base + x_{ik}; the x terms are frozen.
    g += g_pre * st.w_in.transpose();
  }
}

PatchFeatureGrid encode(const ToyEncoder& encoder, const RivImage& img, const AdapterParams& params) {
  return adapter_forward(encoder.encode(img), params);
}

PatchFeatureGrid shift_columns(const PatchFeatureGrid& grid, int s) {
  PatchFeatureGrid out = grid;
  const int w = grid.cols;
  const int shift = ((s % w) + w) % w;
  for (int p = 0; p < grid.rows; ++p) {
    for (int q = 0; q < w; ++q) out.patches.row(p * w + q) = grid.patches.row(p * w + (q - shift + w) % w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ADP1: "ADP1", u32 stages, u32 C, u32 D, then per stage float32 blocks
// w_in (C x D), b_in (D), spatial (D x 9), w_out (D x C), b_out (C), all row-major.

std::vector<std::uint8_t> encode_adapter(const AdapterParams& params) {
  ByteWriter w;
  w.magic("ADP1");
  w.u32(static_cast<std::uint32_t>(params.stages.size()));
  w.u32(static_cast<std::uint32_t>(params.channels));
  w.u32(static_cast<std::uint32_t>(params.hidden));
  for (const AdapterStage& st : params.stages) {
    auto put = [&](const double* p, Eigen::Index n) {
      std::vector<float> f(p, p + n);
      w.f32s(f);
    };
    put(st.w_in.data(), st.w_in.size());
    put(st.b_in.data(), st.b_in.size());
    put(st.spatial.data(), st.spatial.size());
    put(st.w_out.data(), st.w_out.size());
    put(st.b_out.data(), st.b_out.size());
  }
  return w.take();
}

AdapterParams decode_adapter(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "ADP1");
  r.magic("ADP1");
  const std::uint32_t stages = r.u32(), channels = r.u32(), hidden = r.u32();
  if (channels == 0 || hidden == 0 || stages > 1024 || channels > 65536 || hidden > 65536) {
    fail(ErrorCode::kFormat, "ADP1: bad header");
  }
  const std::size_t per_stage = 2ull * channels * hidden + hidden * 10ull + channels;
  if (r.remaining() != stages * per_stage * sizeof(float)) fail(ErrorCode::kFormat, "ADP1: size mismatch");
  AdapterParams p = AdapterParams::zeros(static_cast<int>(channels), static_cast<int>(hidden), static_cast<int>(stages));
  for (AdapterStage& st : p.stages) {
    auto get = [&](double* dst, Eigen::Index n) {
      std::vector<float> f(static_cast<std::size_t>(n));
      r.f32s(f);
      std::copy(f.begin(), f.end(), dst);
    };
    get(st.w_in.data(), st.w_in.size());
    get(st.b_in.data(), st.b_in.size());
    get(st.spatial.data(), st.spatial.size());
    get(st.w_out.data(), st.w_out.size());
    get(st.b_out.data(), st.b_out.size());
  }
  r.finish();
  return p;
}

void save_adapter(const std::filesystem::path& path, const AdapterParams& params) {
  write_file(path, encode_adapter(params));
}

AdapterParams load_adapter(const std::filesystem::path& path) { return decode_adapter(read_file(path)); }

}  // namespace rivlpr
