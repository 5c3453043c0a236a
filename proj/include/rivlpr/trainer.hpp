#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rivlpr/aggregate.hpp"
#include "rivlpr/augment.hpp"
#include "rivlpr/encoder.hpp"
#include "rivlpr/loss.hpp"
#include "rivlpr/mining.hpp"

namespace rivlpr {

struct TrainConfig {
  int epochs = 40;
  int max_steps = 500;  // 0: no cap beyond epochs
  int batch_size = 16;
  double learning_rate = 5e-4;
  double warmup_fraction = 0.1;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  double positive_radius = 10.0;  // meters
  double negative_floor = 30.0;   // meters
  double pair_subsample = 0.125;  // fraction of positive image pairs mined per batch
  double sample_spacing = 3.0;    // meters between kept scans
  bool augment = true;            // occlusion masks on training images

  void validate() const;
};

struct ModelConfig {
  RivConfig riv;
  EncoderConfig encoder;
  AggregateConfig aggregate;

  void validate() const;
};

/// The trainable part of the pipeline. The frozen encoder is rebuilt from
/// config.encoder (its weights are a pure function of the seed).
struct Model {
  ModelConfig config;
  AdapterParams adapter;
  AggregateParams aggregate;

  static Model random(const ModelConfig& cfg, std::uint64_t seed);
  std::size_t parameter_count() const;
  bool operator==(const Model& o) const;
};

Descriptor describe(const ToyEncoder& encoder, const Model& model, const RivImage& img);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  bool operator==(const AdamState&) const = default;
};

struct Checkpoint {
  Model model;
  AdamState adam;
  std::int64_t step = 0;
  std::uint64_t encoder_hash = 0;
  std::string config_echo;  // pipeline config text the run was started with

  bool operator==(const Checkpoint& o) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckp);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckp);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Scans with their sensor-to-world poses, index-aligned. Several sessions may
/// be concatenated; labels only look at pose distance.
struct Sequence {
  std::vector<Scan> scans;
  std::vector<Pose> poses;
};

/// Greedy spatial thinning: keep a scan when it is at least `spacing` meters from
/// the last kept one.
std::vector<int> spatial_subsample(const Sequence& seq, double spacing);

enum class PairLabel { kPositive, kIgnored, kNegative };
PairLabel label_pair(const Pose& a, const Pose& b, const TrainConfig& cfg);

struct TrainSetup {
  ModelConfig model;
  MiningConfig mining;
  LossConfig loss;
  AugmentSpec augment;
  TrainConfig train;

  void validate() const;
};

struct MinedPair {
  int i = 0;  // batch-local image indices
  int j = 0;
  PatchPairSet pairs;
};

struct Batch {
  std::vector<int> members;  // sequence indices
  std::vector<std::vector<int>> positives_of;
  std::vector<std::vector<int>> ignored_of;
  std::vector<MinedPair> mined;
};

struct TraceRow {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss_p = 0.0;      // fixed probe batch, before the update
  double loss_tsap = 0.0;
  double loss_final = 0.0;
  double batch_loss = 0.0;  // the sampled training batch
};

struct LossBreakdown {
  double loss_p = 0.0;
  double loss_tsap = 0.0;
  double loss_final = 0.0;
};

std::string trace_csv(std::span<const TraceRow> trace);

/// Runs the optimisation loop. All randomness derives from train.seed and the
/// step number, so resuming from a checkpoint replays the remaining steps exactly.
class Trainer {
 public:
  Trainer(Sequence seq, TrainSetup setup, std::string config_echo = {});

  const TrainSetup& setup() const { return setup_; }
  const std::vector<int>& kept() const { return kept_; }
  std::int64_t total_steps() const;
  double learning_rate(std::int64_t step) const;

  /// Step < 0 selects the fixed probe batch (no augmentation).
  Batch build_batch(std::int64_t step);
  LossBreakdown evaluate(const Model& model, const Batch& batch, std::int64_t step);

  Checkpoint initial_checkpoint() const;
  /// One optimiser update in place; returns the trace row for this step.
  TraceRow step(Checkpoint& ckp);
  /// Runs from ckp.step to total_steps (or `stop_at` when >= 0).
  std::vector<TraceRow> run(Checkpoint& ckp, std::int64_t stop_at = -1,
                            const std::function<void(const TraceRow&)>& on_step = {});

  const RivImage& image(int seq_index) const { return images_[seq_index]; }
  const ToyEncoder& encoder() const { return encoder_; }

 private:
  struct Gradients;
  const PatchPairSet& mined(int a, int b);
  LossBreakdown forward_backward(const Model& model, const Batch& batch, std::int64_t step, Gradients* grads);

  Sequence seq_;
  TrainSetup setup_;
  std::string config_echo_;
  ToyEncoder encoder_;
  std::vector<int> kept_;
  std::vector<std::vector<int>> neighbours_;  // positives among kept scans (sequence indices)
  std::vector<RivImage> images_;              // per sequence index; empty for dropped scans
  std::map<std::pair<int, int>, PatchPairSet> mining_cache_;
  Batch probe_;
  bool probe_ready_ = false;
};

}  // namespace rivlpr
