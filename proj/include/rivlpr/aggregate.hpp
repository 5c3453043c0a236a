#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rivlpr/common.hpp"
#include "rivlpr/encoder.hpp"
#include "rivlpr/geometry.hpp"

namespace rivlpr {

struct AggregateConfig {
  int clusters = 128;      // m
  int cluster_dim = 64;    // l
  int global_dim = 256;    // e
  int token_hidden = 512;
  int sinkhorn_iters = 100;
  double sinkhorn_reg = 1.0;

  int descriptor_dim() const { return clusters * cluster_dim + global_dim; }
  void validate() const;
};

struct AggregateParams {
  AggregateConfig config;
  int channels = 0;
  Mat score_w;  // C x m
  Vec score_b;
  Mat feat_w;   // C x l
  Vec feat_b;
  Mat token_w1;  // C x hidden
  Vec token_b1;
  Mat token_w2;  // hidden x e
  Vec token_b2;

  static AggregateParams zeros(int channels, const AggregateConfig& cfg);
  static AggregateParams random(int channels, const AggregateConfig& cfg, std::uint64_t seed);

  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  bool operator==(const AggregateParams& o) const;
};

/// Unit-norm global descriptor [flatten(V), G]. `valid` is false when the
/// pre-normalisation norm fell below 1e-12; the values are then all zero.
struct Descriptor {
  Vec values;
  bool valid = true;
};

struct SinkhornResult {
  Mat plan;                 // n x m transport plan R
  Mat log_u;                // (iters + 1) x n row potentials, row 0 is the initial zero
  Mat log_v;                // iters x m column potentials
  bool log_domain = false;  // true when the scaling-domain fast path was not safe
};

/// Entropic OT with uniform marginals 1/n and 1/m. The log-kernel is scores / reg;
/// each round updates the column potentials v and then the row potentials u, and
/// log R = scores / reg + u + v.
SinkhornResult sinkhorn(const Mat& scores, int iters, double reg, bool keep_history = false);
/// dL/dscores given dL/dR, differentiating through every unrolled round.
Mat sinkhorn_backward(const Mat& scores, const SinkhornResult& forward, const Mat& grad_plan, double reg);

struct AggregateTape {
  Mat features;     // F, n x C
  Vec token;
  Mat scores;       // S
  SinkhornResult transport;
  Mat cluster_feat;  // F-bar, n x l
  Mat local;         // V, m x l
  Vec token_pre;     // pre-ReLU hidden
  Vec global;        // G
  Vec raw;           // [flatten(V), G]
  double norm = 0.0;
};

Descriptor aggregate(const PatchFeatureGrid& grid, const AggregateParams& params, AggregateTape* tape = nullptr);
/// Accumulates parameter gradients into `grad` and returns dL/dF (n x C).
Mat aggregate_backward(const AggregateTape& tape, const AggregateParams& params, const Vec& grad_descriptor,
                       AggregateParams& grad);

double descriptor_distance(const Descriptor& a, const Descriptor& b);

// ---------------------------------------------------------------------------
// DSC1: "DSC1", u32 count, u32 dim, float32 rows. Metadata lives in a sidecar
// text index: "row,id,timestamp,tx,ty,tz,qx,qy,qz,qw".

struct DescriptorMeta {
  std::string id;
  double timestamp = 0.0;
  Pose pose;
  bool operator==(const DescriptorMeta& o) const;
};

struct DescriptorSet {
  int dim = 0;
  std::vector<float> rows;  // count x dim
  std::vector<DescriptorMeta> meta;

  std::size_t count() const { return meta.size(); }
  void add(const Descriptor& d, const DescriptorMeta& m);
  Vec row(std::size_t i) const;
  bool operator==(const DescriptorSet&) const = default;
};

std::vector<std::uint8_t> encode_descriptors(const DescriptorSet& set);
DescriptorSet decode_descriptors(std::span<const std::uint8_t> bytes);
std::string encode_descriptor_index(const DescriptorSet& set);
void decode_descriptor_index(const std::string& text, DescriptorSet& set);
/// Writes `path` (DSC1) and `path` + ".idx".
void save_descriptors(const std::filesystem::path& path, const DescriptorSet& set);
DescriptorSet load_descriptors(const std::filesystem::path& path);

}  // namespace rivlpr
