#include "rivlpr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "rivlpr/rng.hpp"

namespace rivlpr {

void TrainConfig::validate() const {
  require(epochs >= 1, "train: epochs must be >= 1");
  require(max_steps >= 0, "train: max_steps must be >= 0");
  require(batch_size >= 2, "train: batch_size must be >= 2");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "train: learning_rate must be finite and >= 0");
  require(warmup_fraction >= 0.0 && warmup_fraction < 1.0, "train: warmup_fraction must be in [0, 1)");
  require(weight_decay >= 0.0, "train: weight_decay must be >= 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train: betas must be in [0, 1)");
  require(adam_eps > 0.0, "train: adam_eps must be positive");
  require(positive_radius > 0.0 && positive_radius < negative_floor, "train: need 0 < positive_radius < negative_floor");
  require(pair_subsample > 0.0 && pair_subsample <= 1.0, "train: pair_subsample must be in (0, 1]");
  require(sample_spacing >= 0.0, "train: sample_spacing must be >= 0");
}

void ModelConfig::validate() const {
  riv.validate();
  encoder.validate();
  aggregate.validate();
  require(riv.height % kPatchSize == 0 && riv.width % kPatchSize == 0,
          "model: image height and width must be multiples of the 14-pixel patch");
}

void TrainSetup::validate() const {
  model.validate();
  mining.validate();
  loss.validate();
  augment.validate(model.riv.width);
  train.validate();
}

Model Model::random(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.config = cfg;
  m.adapter = AdapterParams::random(cfg.encoder.channels, cfg.encoder.adapter_hidden, cfg.encoder.stages(),
                                    mix_seed(seed, 1));
  m.aggregate = AggregateParams::random(cfg.encoder.channels, cfg.aggregate, mix_seed(seed, 2));
  return m;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : adapter.tensors()) n += t.size();
  for (const auto& t : aggregate.tensors()) n += t.size();
  return n;
}

namespace {

bool same_riv(const RivConfig& a, const RivConfig& b) {
  return a.width == b.width && a.height == b.height && a.fov_up == b.fov_up && a.fov_total == b.fov_total &&
         a.max_range == b.max_range && a.knn_k == b.knn_k && a.wrap_cols == b.wrap_cols &&
         a.normal_eps == b.normal_eps && a.normal_log_cap == b.normal_log_cap;
}

bool same_model_config(const ModelConfig& a, const ModelConfig& b) {
  const EncoderConfig &ea = a.encoder, &eb = b.encoder;
  const AggregateConfig &ga = a.aggregate, &gb = b.aggregate;
  return same_riv(a.riv, b.riv) && ea.channels == eb.channels && ea.blocks == eb.blocks &&
         ea.adapter_interval == eb.adapter_interval && ea.adapter_hidden == eb.adapter_hidden && ea.seed == eb.seed &&
         ga.clusters == gb.clusters && ga.cluster_dim == gb.cluster_dim && ga.global_dim == gb.global_dim &&
         ga.token_hidden == gb.token_hidden && ga.sinkhorn_iters == gb.sinkhorn_iters &&
         ga.sinkhorn_reg == gb.sinkhorn_reg;
}

template <class Fn>
void for_each_param(Model& m, Fn&& fn) {
  for (auto t : m.adapter.tensors()) fn(t);
  for (auto t : m.aggregate.tensors()) fn(t);
}

}  // namespace

bool Model::operator==(const Model& o) const {
  return same_model_config(config, o.config) && adapter == o.adapter && aggregate == o.aggregate;
}

bool Checkpoint::operator==(const Checkpoint& o) const {
  return model == o.model && adam == o.adam && step == o.step && encoder_hash == o.encoder_hash &&
         config_echo == o.config_echo;
}

Descriptor describe(const ToyEncoder& encoder, const Model& model, const RivImage& img) {
  return aggregate(encode(encoder, img, model.adapter), model.aggregate);
}

// ---------------------------------------------------------------------------
// CKP1

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckp) {
  const ModelConfig& c = ckp.model.config;
  ByteWriter w;
  w.magic("CKP1");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(c.riv.width));
  w.u32(static_cast<std::uint32_t>(c.riv.height));
  w.f64(c.riv.fov_up);
  w.f64(c.riv.fov_total);
  w.f64(c.riv.max_range);
  w.u32(static_cast<std::uint32_t>(c.riv.knn_k));
  w.u32(static_cast<std::uint32_t>(c.riv.wrap_cols));
  w.f64(c.riv.normal_eps);
  w.f64(c.riv.normal_log_cap);
  w.u32(static_cast<std::uint32_t>(c.encoder.channels));
  w.u32(static_cast<std::uint32_t>(c.encoder.blocks));
  w.u32(static_cast<std::uint32_t>(c.encoder.adapter_interval));
  w.u32(static_cast<std::uint32_t>(c.encoder.adapter_hidden));
  w.u64(c.encoder.seed);
  w.u32(static_cast<std::uint32_t>(c.aggregate.clusters));
  w.u32(static_cast<std::uint32_t>(c.aggregate.cluster_dim));
  w.u32(static_cast<std::uint32_t>(c.aggregate.global_dim));
  w.u32(static_cast<std::uint32_t>(c.aggregate.token_hidden));
  w.u32(static_cast<std::uint32_t>(c.aggregate.sinkhorn_iters));
  w.f64(c.aggregate.sinkhorn_reg);
  w.u64(static_cast<std::uint64_t>(ckp.step));
  w.u64(ckp.encoder_hash);
  w.str(ckp.config_echo);

  std::vector<double> flat;
  for (const auto& t : ckp.model.adapter.tensors()) flat.insert(flat.end(), t.begin(), t.end());
  for (const auto& t : ckp.model.aggregate.tensors()) flat.insert(flat.end(), t.begin(), t.end());
  w.u64(flat.size());
  w.f64s(flat);
  const bool has_adam = !ckp.adam.m.empty();
  require(!has_adam || (ckp.adam.m.size() == flat.size() && ckp.adam.v.size() == flat.size()),
          "checkpoint: optimiser state does not match parameter count");
  w.u32(has_adam ? 1 : 0);
  if (has_adam) {
    w.f64s(ckp.adam.m);
    w.f64s(ckp.adam.v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "CKP1");
  r.magic("CKP1");
  if (r.u32() != 1) fail(ErrorCode::kFormat, "CKP1: unsupported version");
  Checkpoint ckp;
  ModelConfig& c = ckp.model.config;
  c.riv.width = static_cast<int>(r.u32());
  c.riv.height = static_cast<int>(r.u32());
  c.riv.fov_up = r.f64();
  c.riv.fov_total = r.f64();
  c.riv.max_range = r.f64();
  c.riv.knn_k = static_cast<int>(r.u32());
  c.riv.wrap_cols = static_cast<int>(r.u32());
  c.riv.normal_eps = r.f64();
  c.riv.normal_log_cap = r.f64();
  c.encoder.channels = static_cast<int>(r.u32());
  c.encoder.blocks = static_cast<int>(r.u32());
  c.encoder.adapter_interval = static_cast<int>(r.u32());
  c.encoder.adapter_hidden = static_cast<int>(r.u32());
  c.encoder.seed = r.u64();
  c.aggregate.clusters = static_cast<int>(r.u32());
  c.aggregate.cluster_dim = static_cast<int>(r.u32());
  c.aggregate.global_dim = static_cast<int>(r.u32());
  c.aggregate.token_hidden = static_cast<int>(r.u32());
  c.aggregate.sinkhorn_iters = static_cast<int>(r.u32());
  c.aggregate.sinkhorn_reg = r.f64();
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, std::string("CKP1: bad model config: ") + e.what());
  }
  ckp.step = static_cast<std::int64_t>(r.u64());
  ckp.encoder_hash = r.u64();
  ckp.config_echo = r.str();

  ckp.model.adapter = AdapterParams::zeros(c.encoder.channels, c.encoder.adapter_hidden, c.encoder.stages());
  ckp.model.aggregate = AggregateParams::zeros(c.encoder.channels, c.aggregate);
  const std::uint64_t n = r.u64();
  if (n != ckp.model.parameter_count()) fail(ErrorCode::kFormat, "CKP1: parameter count does not match config");
  if (n * sizeof(double) > r.remaining()) fail(ErrorCode::kFormat, "CKP1: truncated file");
  for_each_param(ckp.model, [&](std::span<double> t) { r.f64s(t); });
  if (r.u32() != 0) {
    ckp.adam.m.resize(n);
    ckp.adam.v.resize(n);
    r.f64s(ckp.adam.m);
    r.f64s(ckp.adam.v);
  }
  r.finish();
  return ckp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckp) {
  write_file(path, encode_checkpoint(ckp));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// Data

std::vector<int> spatial_subsample(const Sequence& seq, double spacing) {
  require(seq.scans.size() == seq.poses.size(), "sequence: scan and pose counts differ");
  std::vector<int> kept;
  for (std::size_t i = 0; i < seq.poses.size(); ++i) {
    if (kept.empty() || (seq.poses[i].translation - seq.poses[kept.back()].translation).norm() >= spacing) {
      kept.push_back(static_cast<int>(i));
    }
  }
  return kept;
}

PairLabel label_pair(const Pose& a, const Pose& b, const TrainConfig& cfg) {
  const double d = (a.translation - b.translation).norm();
  if (d <= cfg.positive_radius) return PairLabel::kPositive;
  if (d > cfg.negative_floor) return PairLabel::kNegative;
  return PairLabel::kIgnored;
}

std::string trace_csv(std::span<const TraceRow> trace) {
  std::string out = "step,lr,L_P,L_TSAP,L_final,batch_L_final\n";
  for (const TraceRow& t : trace) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", t.step, t.lr, t.loss_p, t.loss_tsap, t.loss_final,
                       t.batch_loss);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

struct Trainer::Gradients {
  AdapterParams adapter;
  AggregateParams aggregate;
};

Trainer::Trainer(Sequence seq, TrainSetup setup, std::string config_echo)
    : seq_(std::move(seq)), setup_(std::move(setup)), config_echo_(std::move(config_echo)),
      encoder_((setup_.validate(), setup_.model.encoder)) {
  kept_ = spatial_subsample(seq_, setup_.train.sample_spacing);
  images_.resize(seq_.scans.size());
  neighbours_.resize(seq_.scans.size());
  for (int i : kept_) {
    images_[i] = project_scan(seq_.scans[i], setup_.model.riv);
    for (int j : kept_) {
      if (j != i && label_pair(seq_.poses[i], seq_.poses[j], setup_.train) == PairLabel::kPositive) {
        neighbours_[i].push_back(j);
      }
    }
  }
  require(static_cast<int>(kept_.size()) >= setup_.train.batch_size,
          "train: " + std::to_string(kept_.size()) + " scans left after spatial subsampling, fewer than batch_size " +
              std::to_string(setup_.train.batch_size));
}

std::int64_t Trainer::total_steps() const {
  const TrainConfig& t = setup_.train;
  const std::int64_t per_epoch = (static_cast<std::int64_t>(kept_.size()) + t.batch_size - 1) / t.batch_size;
  std::int64_t total = per_epoch * t.epochs;
  if (t.max_steps > 0) total = std::min<std::int64_t>(total, t.max_steps);
  return total;
}

double Trainer::learning_rate(std::int64_t step) const {
  const TrainConfig& t = setup_.train;
  const std::int64_t total = total_steps();
  const auto warm = static_cast<std::int64_t>(std::ceil(t.warmup_fraction * static_cast<double>(total)));
  if (step < warm) return t.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warm);
  const double span = static_cast<double>(std::max<std::int64_t>(1, total - warm));
  const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
  return t.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

const PatchPairSet& Trainer::mined(int a, int b) {
  const auto key = std::minmax(a, b);
  auto it = mining_cache_.find(key);
  if (it != mining_cache_.end()) return it->second;
  const auto [i, j] = key;
  const std::uint64_t seed = mix_seed(setup_.train.seed, static_cast<std::uint64_t>(i) * seq_.scans.size() + j);
  MiningResult r = mine_pair(seq_.scans[i], seq_.scans[j], seq_.poses[i], seq_.poses[j], setup_.model.riv,
                             setup_.mining, seed);
  PatchPairSet set;
  if (r.status == MiningStatus::kOk) {
    // drop positives that found no admissible negative on either side
    set = r.pairs;
    set.positives.clear();
    set.negatives_a.clear();
    set.negatives_b.clear();
    for (std::size_t k = 0; k < r.pairs.positives.size(); ++k) {
      if (r.pairs.negatives_a[k].empty() && r.pairs.negatives_b[k].empty()) continue;
      set.positives.push_back(r.pairs.positives[k]);
      set.negatives_a.push_back(r.pairs.negatives_a[k]);
      set.negatives_b.push_back(r.pairs.negatives_b[k]);
    }
  }
  return mining_cache_.emplace(key, std::move(set)).first->second;
}

Batch Trainer::build_batch(std::int64_t step) {
  if (step < 0 && probe_ready_) return probe_;
  const TrainConfig& t = setup_.train;
  Rng rng(step < 0 ? mix_seed(t.seed, 0xB0BE) : mix_seed(t.seed, static_cast<std::uint64_t>(step) + 1));

  Batch batch;
  std::vector<char> used(seq_.scans.size(), 0);
  const int n = static_cast<int>(kept_.size());
  for (int tries = 0; tries < 100 * t.batch_size && static_cast<int>(batch.members.size()) + 2 <= t.batch_size;
       ++tries) {
    const int a = kept_[rng.integer(0, n - 1)];
    if (used[a] || neighbours_[a].empty()) continue;
    const auto& cand = neighbours_[a];
    const int p = cand[rng.integer(0, static_cast<std::int64_t>(cand.size()) - 1)];
    if (used[p]) continue;
    used[a] = used[p] = 1;
    batch.members.push_back(a);
    batch.members.push_back(p);
  }
  if (batch.members.size() < 2) fail(ErrorCode::kArgument, "build_batch: no scan has a positive partner within radius");

  const int b = static_cast<int>(batch.members.size());
  batch.positives_of.assign(b, {});
  batch.ignored_of.assign(b, {});
  std::vector<std::pair<int, int>> positive_pairs;
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) {
      if (i == j) continue;
      switch (label_pair(seq_.poses[batch.members[i]], seq_.poses[batch.members[j]], t)) {
        case PairLabel::kPositive:
          batch.positives_of[i].push_back(j);
          if (i < j) positive_pairs.emplace_back(i, j);
          break;
        case PairLabel::kIgnored:
          batch.ignored_of[i].push_back(j);
          break;
        case PairLabel::kNegative:
          break;
      }
    }
  }

  const auto take = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(t.pair_subsample * static_cast<double>(positive_pairs.size()))));
  for (std::size_t k = 0; k < take && k < positive_pairs.size(); ++k) {
    const auto r = static_cast<std::size_t>(
        rng.integer(static_cast<std::int64_t>(k), static_cast<std::int64_t>(positive_pairs.size()) - 1));
    std::swap(positive_pairs[k], positive_pairs[r]);
    const auto [i, j] = positive_pairs[k];
    const int si = batch.members[i], sj = batch.members[j];
    const PatchPairSet& set = mined(si, sj);
    if (set.positives.empty()) continue;
    // the cache stores the pair oriented low index first
    if (si < sj) {
      batch.mined.push_back({i, j, set});
    } else {
      batch.mined.push_back({j, i, set});
    }
  }
  if (step < 0) {
    probe_ = batch;
    probe_ready_ = true;
  }
  return batch;
}

LossBreakdown Trainer::forward_backward(const Model& model, const Batch& batch, std::int64_t step, Gradients* grads) {
  const LossConfig& lc = setup_.loss;
  const int b = static_cast<int>(batch.members.size());
  std::vector<AdapterTape> atapes(b);
  std::vector<AggregateTape> gtapes(b);
  std::vector<PatchFeatureGrid> grids(b);
  Mat descriptors;
  for (int k = 0; k < b; ++k) {
    const RivImage* img = &images_[batch.members[k]];
    RivImage masked;
    if (step >= 0 && setup_.train.augment) {
      AugmentSpec spec = setup_.augment;
      spec.yaw_shift = 0;
      spec.rng_seed = mix_seed(setup_.train.seed ^ 0xA5A5, static_cast<std::uint64_t>(step) * 4096 + k);
      masked = apply_masks(*img, spec);
      img = &masked;
    }
    grids[k] = adapter_forward(encoder_.encode(*img), model.adapter, grads ? &atapes[k] : nullptr);
    const Descriptor d = aggregate(grids[k], model.aggregate, grads ? &gtapes[k] : nullptr);
    if (!d.valid) fail(ErrorCode::kDiverged, "train: descriptor collapsed to zero");
    if (k == 0) descriptors.resize(b, d.values.size());
    descriptors.row(k) = d.values.transpose();
  }

  LossBreakdown out;
  const LossValue lt = tsap(descriptors, batch.positives_of, batch.ignored_of, lc.tau_g, lc.truncation);
  out.loss_tsap = lt.value;

  std::vector<Mat> dfeat(b);
  for (int k = 0; k < b; ++k) dfeat[k] = Mat::Zero(grids[k].patches.rows(), grids[k].patches.cols());
  if (!batch.mined.empty()) {
    const double w = 1.0 / static_cast<double>(batch.mined.size());
    for (const MinedPair& mp : batch.mined) {
      const LossValue lp = patch_infonce(grids[mp.i].patches, grids[mp.j].patches, mp.pairs, lc.tau_l);
      out.loss_p += w * lp.value;
      if (grads) {
        dfeat[mp.i] += w * lp.gradients[0];
        dfeat[mp.j] += w * lp.gradients[1];
      }
    }
  }
  out.loss_final = out.loss_p + lc.lambda_mix * out.loss_tsap;
  if (!std::isfinite(out.loss_final)) fail(ErrorCode::kDiverged, "train: loss became non-finite");

  if (grads) {
    for (int k = 0; k < b; ++k) {
      const Vec gd = lc.lambda_mix * lt.gradients[0].row(k).transpose();
      dfeat[k] += aggregate_backward(gtapes[k], model.aggregate, gd, grads->aggregate);
      adapter_backward(atapes[k], model.adapter, dfeat[k], grads->adapter);
    }
  }
  return out;
}

LossBreakdown Trainer::evaluate(const Model& model, const Batch& batch, std::int64_t step) {
  return forward_backward(model, batch, step, nullptr);
}

Checkpoint Trainer::initial_checkpoint() const {
  Checkpoint ckp;
  ckp.model = Model::random(setup_.model, setup_.train.seed);
  ckp.encoder_hash = encoder_.weights_hash();
  ckp.config_echo = config_echo_;
  return ckp;
}

TraceRow Trainer::step(Checkpoint& ckp) {
  require(same_model_config(ckp.model.config, setup_.model), "train: checkpoint model config differs from setup");
  if (ckp.encoder_hash != encoder_.weights_hash()) {
    fail(ErrorCode::kShape, "train: checkpoint was trained against different frozen encoder weights");
  }
  const std::int64_t s = ckp.step;
  TraceRow row;
  row.step = s;
  row.lr = learning_rate(s);

  const LossBreakdown probe = evaluate(ckp.model, build_batch(-1), -1);
  row.loss_p = probe.loss_p;
  row.loss_tsap = probe.loss_tsap;
  row.loss_final = probe.loss_final;

  const Batch batch = build_batch(s);
  const ModelConfig& mc = setup_.model;
  Gradients g{AdapterParams::zeros(mc.encoder.channels, mc.encoder.adapter_hidden, mc.encoder.stages()),
              AggregateParams::zeros(mc.encoder.channels, mc.aggregate)};
  row.batch_loss = forward_backward(ckp.model, batch, s, &g).loss_final;

  std::vector<std::span<const double>> gt;
  for (const auto& t : std::as_const(g.adapter).tensors()) gt.push_back(t);
  for (const auto& t : std::as_const(g.aggregate).tensors()) gt.push_back(t);

  const std::size_t n = ckp.model.parameter_count();
  if (ckp.adam.m.empty()) ckp.adam = {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  const TrainConfig& tc = setup_.train;
  const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(s + 1));
  const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(s + 1));
  std::size_t off = 0, ti = 0;
  for_each_param(ckp.model, [&](std::span<double> p) {
    const std::span<const double> gr = gt[ti++];
    for (std::size_t k = 0; k < p.size(); ++k, ++off) {
      const double gk = gr[k];
      if (!std::isfinite(gk)) fail(ErrorCode::kDiverged, "train: non-finite gradient");
      double& m = ckp.adam.m[off];
      double& v = ckp.adam.v[off];
      m = tc.beta1 * m + (1.0 - tc.beta1) * gk;
      v = tc.beta2 * v + (1.0 - tc.beta2) * gk * gk;
      p[k] -= row.lr * ((m / bc1) / (std::sqrt(v / bc2) + tc.adam_eps) + tc.weight_decay * p[k]);
    }
  });
  ckp.step = s + 1;
  return row;
}

std::vector<TraceRow> Trainer::run(Checkpoint& ckp, std::int64_t stop_at,
                                   const std::function<void(const TraceRow&)>& on_step) {
  const std::int64_t end = stop_at >= 0 ? std::min(stop_at, total_steps()) : total_steps();
  std::vector<TraceRow> trace;
  while (ckp.step < end) {
    trace.push_back(step(ckp));
    if (on_step) on_step(trace.back());
  }
  return trace;
}

}  // namespace rivlpr
