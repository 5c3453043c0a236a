#include "rivlpr/aggregate.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "binary_io.hpp"
#include "rivlpr/rng.hpp"

namespace rivlpr {

void AggregateConfig::validate() const {
  require(clusters > 0 && cluster_dim > 0 && global_dim > 0, "aggregate: m, l, e must be positive");
  require(token_hidden > 0, "aggregate: token_hidden must be positive");
  require(sinkhorn_iters >= 1, "aggregate: sinkhorn_iters must be >= 1");
  require(sinkhorn_reg > 0.0, "aggregate: sinkhorn_reg must be positive");
}

// ---------------------------------------------------------------------------
// Sinkhorn

namespace {

// Scaling-domain iterations on E = exp(K - kmax). Exact reformulation of the
// log-domain recurrence while no factor under/overflows.
bool sinkhorn_scaling(const Mat& kernel, int iters, SinkhornResult& out, bool keep) {
  const Eigen::Index n = kernel.rows(), m = kernel.cols();
  const double kmax = kernel.maxCoeff();
  const Mat e = (kernel.array() - kmax).exp().matrix();
  const double a = 1.0 / static_cast<double>(n), b = 1.0 / static_cast<double>(m);
  Vec big_u = Vec::Constant(n, std::exp(kmax));  // exp(u + kmax), u = 0
  Vec big_v(m);
  for (int t = 1; t <= iters; ++t) {
    const Vec col = e.transpose() * big_u;
    big_v = b * col.cwiseInverse();
    const Vec row = e * big_v;
    big_u = a * row.cwiseInverse();
    if (keep) {
      out.log_v.row(t - 1) = big_v.array().log().transpose();
      out.log_u.row(t) = (big_u.array().log() - kmax).transpose();
    }
  }
  out.plan = big_u.asDiagonal() * e * big_v.asDiagonal();
  return out.plan.allFinite() && (out.plan.array() > 0.0).all() && big_u.allFinite() && big_v.allFinite();
}

void sinkhorn_log(const Mat& kernel, int iters, SinkhornResult& out, bool keep) {
  const Eigen::Index n = kernel.rows(), m = kernel.cols();
  const double log_a = -std::log(static_cast<double>(n)), log_b = -std::log(static_cast<double>(m));
  Vec u = Vec::Zero(n), v = Vec::Zero(m);
  for (int t = 1; t <= iters; ++t) {
    for (Eigen::Index k = 0; k < m; ++k) {
      const double mx = (kernel.col(k) + u).maxCoeff();
      v(k) = log_b - mx - std::log((kernel.col(k).array() + u.array() - mx).exp().sum());
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = (kernel.row(i).transpose() + v).maxCoeff();
      u(i) = log_a - mx - std::log((kernel.row(i).transpose().array() + v.array() - mx).exp().sum());
    }
    if (keep) {
      out.log_v.row(t - 1) = v.transpose();
      out.log_u.row(t) = u.transpose();
    }
  }
  out.plan = ((kernel.colwise() + u).rowwise() + v.transpose()).array().exp().matrix();
}

}  // namespace

SinkhornResult sinkhorn(const Mat& scores, int iters, double reg, bool keep_history) {
  require(scores.rows() >= 1 && scores.cols() >= 1, "sinkhorn: empty score matrix");
  require(iters >= 1, "sinkhorn: iters must be >= 1");
  require(reg > 0.0, "sinkhorn: regularisation must be positive");
  require(scores.allFinite(), "sinkhorn: non-finite scores");
  const Mat kernel = scores / reg;
  SinkhornResult out;
  if (keep_history) {
    out.log_u = Mat::Zero(iters + 1, scores.rows());
    out.log_v = Mat::Zero(iters, scores.cols());
  }
  const double kmax = kernel.maxCoeff(), kmin = kernel.minCoeff();
  if (kmax - kmin <= 600.0 && std::abs(kmax) <= 300.0 && sinkhorn_scaling(kernel, iters, out, keep_history)) {
    return out;
  }
  out.log_domain = true;
  sinkhorn_log(kernel, iters, out, keep_history);
  return out;
}

Mat sinkhorn_backward(const Mat& scores, const SinkhornResult& fwd, const Mat& grad_plan, double reg) {
  const Eigen::Index n = scores.rows(), m = scores.cols();
  const int iters = static_cast<int>(fwd.log_v.rows());
  require(iters >= 1 && fwd.log_u.rows() == iters + 1, "sinkhorn_backward: forward pass kept no history");
  require(grad_plan.rows() == n && grad_plan.cols() == m, "sinkhorn_backward: gradient shape mismatch");
  const Mat kernel = scores / reg;
  const double log_a = -std::log(static_cast<double>(n)), log_b = -std::log(static_cast<double>(m));

  // log R = K + u_T + v_T
  const Mat q = grad_plan.cwiseProduct(fwd.plan);
  Mat grad_k = q;
  Vec gu = q.rowwise().sum();
  Vec gv = q.colwise().sum().transpose();
  Mat p(n, m);
  for (int t = iters; t >= 1; --t) {
    const Vec u_t = fwd.log_u.row(t).transpose();
    const Vec u_prev = fwd.log_u.row(t - 1).transpose();
    const Vec v_t = fwd.log_v.row(t - 1).transpose();
    // u_t = log a - LSE_k(K + v_t): row-softmax weights.
    p = ((kernel.colwise() + (u_t.array() - log_a).matrix()).rowwise() + v_t.transpose()).array().exp().matrix();
    grad_k -= gu.asDiagonal() * p;
    gv -= p.transpose() * gu;
    // v_t = log b - LSE_i(K + u_{t-1}): column-softmax weights.
    p = ((kernel.colwise() + u_prev).rowwise() + (v_t.array() - log_b).matrix().transpose()).array().exp().matrix();
    grad_k -= p * gv.asDiagonal();
    gu = -(p * gv);
    gv.setZero();
  }
  return grad_k / reg;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {
Mat gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(scale * rng.normal());
  return m;
}
}  // namespace

AggregateParams AggregateParams::zeros(int channels, const AggregateConfig& cfg) {
  cfg.validate();
  AggregateParams p;
  p.config = cfg;
  p.channels = channels;
  p.score_w = Mat::Zero(channels, cfg.clusters);
  p.score_b = Vec::Zero(cfg.clusters);
  p.feat_w = Mat::Zero(channels, cfg.cluster_dim);
  p.feat_b = Vec::Zero(cfg.cluster_dim);
  p.token_w1 = Mat::Zero(channels, cfg.token_hidden);
  p.token_b1 = Vec::Zero(cfg.token_hidden);
  p.token_w2 = Mat::Zero(cfg.token_hidden, cfg.global_dim);
  p.token_b2 = Vec::Zero(cfg.global_dim);
  return p;
}

AggregateParams AggregateParams::random(int channels, const AggregateConfig& cfg, std::uint64_t seed) {
  AggregateParams p = zeros(channels, cfg);
  Rng rng(seed);
  const double c = 1.0 / std::sqrt(static_cast<double>(channels));
  p.score_w = gaussian(rng, channels, cfg.clusters, c);
  p.feat_w = gaussian(rng, channels, cfg.cluster_dim, c);
  p.token_w1 = gaussian(rng, channels, cfg.token_hidden, c);
  p.token_w2 = gaussian(rng, cfg.token_hidden, cfg.global_dim, 1.0 / std::sqrt(static_cast<double>(cfg.token_hidden)));
  return p;
}

std::vector<std::span<double>> AggregateParams::tensors() {
  std::vector<std::span<double>> out;
  for (auto* m : {&score_w, &feat_w, &token_w1, &token_w2}) out.emplace_back(m->data(), static_cast<std::size_t>(m->size()));
  for (auto* v : {&score_b, &feat_b, &token_b1, &token_b2}) out.emplace_back(v->data(), static_cast<std::size_t>(v->size()));
  return out;
}

std::vector<std::span<const double>> AggregateParams::tensors() const {
  std::vector<std::span<const double>> out;
  for (auto s : const_cast<AggregateParams*>(this)->tensors()) out.emplace_back(s.data(), s.size());
  return out;
}

bool AggregateParams::operator==(const AggregateParams& o) const {
  if (channels != o.channels || config.clusters != o.config.clusters || config.cluster_dim != o.config.cluster_dim ||
      config.global_dim != o.config.global_dim || config.token_hidden != o.config.token_hidden ||
      config.sinkhorn_iters != o.config.sinkhorn_iters || config.sinkhorn_reg != o.config.sinkhorn_reg) {
    return false;
  }
  const auto a = tensors(), b = o.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::equal(a[i].begin(), a[i].end(), b[i].begin(), b[i].end())) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Aggregation

Descriptor aggregate(const PatchFeatureGrid& grid, const AggregateParams& params, AggregateTape* tape) {
  const AggregateConfig& cfg = params.config;
  if (grid.patches.cols() != params.channels || grid.global_token.size() != params.channels) {
    fail(ErrorCode::kShape, "aggregate: feature channels do not match the aggregation parameters");
  }
  require(grid.patches.rows() >= 1, "aggregate: empty feature grid");
  require(grid.patches.allFinite() && grid.global_token.allFinite(), "aggregate: non-finite features");

  const Mat& f = grid.patches;
  Mat scores = f * params.score_w;
  scores.rowwise() += params.score_b.transpose();
  SinkhornResult transport = sinkhorn(scores, cfg.sinkhorn_iters, cfg.sinkhorn_reg, tape != nullptr);
  Mat cluster_feat = f * params.feat_w;
  cluster_feat.rowwise() += params.feat_b.transpose();
  const Mat local = transport.plan.transpose() * cluster_feat;  // V, m x l

  const Vec token_pre = params.token_w1.transpose() * grid.global_token + params.token_b1;
  const Vec hidden = token_pre.cwiseMax(0.0);
  const Vec global = params.token_w2.transpose() * hidden + params.token_b2;

  Vec raw(cfg.descriptor_dim());
  raw.head(local.size()) = Eigen::Map<const Vec>(local.data(), local.size());
  raw.tail(global.size()) = global;
  const double norm = raw.norm();

  Descriptor out;
  if (norm < 1e-12) {
    out.values = Vec::Zero(raw.size());
    out.valid = false;
  } else {
    out.values = raw / norm;
  }
  if (tape) {
    tape->features = f;
    tape->token = grid.global_token;
    tape->scores = std::move(scores);
    tape->transport = std::move(transport);
    tape->cluster_feat = std::move(cluster_feat);
    tape->local = local;
    tape->token_pre = token_pre;
    tape->global = global;
    tape->raw = std::move(raw);
    tape->norm = norm;
  }
  return out;
}

Mat aggregate_backward(const AggregateTape& tape, const AggregateParams& params, const Vec& grad_descriptor,
                       AggregateParams& grad) {
  const AggregateConfig& cfg = params.config;
  const Eigen::Index n = tape.features.rows();
  if (tape.norm < 1e-12) return Mat::Zero(n, params.channels);

  const Vec unit = tape.raw / tape.norm;
  const Vec g_raw = (grad_descriptor - unit * unit.dot(grad_descriptor)) / tape.norm;
  const Eigen::Index local_size = static_cast<Eigen::Index>(cfg.clusters) * cfg.cluster_dim;
  const Mat g_local = Eigen::Map<const Mat>(g_raw.data(), cfg.clusters, cfg.cluster_dim);
  const Vec g_global = g_raw.tail(g_raw.size() - local_size);

  // V = R^T F-bar
  const Mat g_cluster = tape.transport.plan * g_local;
  const Mat g_plan = tape.cluster_feat * g_local.transpose();
  const Mat g_scores = sinkhorn_backward(tape.scores, tape.transport, g_plan, cfg.sinkhorn_reg);

  grad.feat_w.noalias() += tape.features.transpose() * g_cluster;
  grad.feat_b += g_cluster.colwise().sum().transpose();
  grad.score_w.noalias() += tape.features.transpose() * g_scores;
  grad.score_b += g_scores.colwise().sum().transpose();

  const Vec hidden = tape.token_pre.cwiseMax(0.0);
  grad.token_w2.noalias() += hidden * g_global.transpose();
  grad.token_b2 += g_global;
  const Vec g_pre = (params.token_w2 * g_global).cwiseProduct((tape.token_pre.array() > 0.0).cast<double>().matrix());
  grad.token_w1.noalias() += tape.token * g_pre.transpose();
  grad.token_b1 += g_pre;

  return g_cluster * params.feat_w.transpose() + g_scores * params.score_w.transpose();
}

double descriptor_distance(const Descriptor& a, const Descriptor& b) {
  require(a.valid && b.valid, "descriptor_distance: invalid (zero) descriptor");
  require(a.values.size() == b.values.size(), "descriptor_distance: dimension mismatch");
  return (a.values - b.values).norm();
}

// ---------------------------------------------------------------------------
// Descriptor files

bool DescriptorMeta::operator==(const DescriptorMeta& o) const {
  return id == o.id && timestamp == o.timestamp && pose.translation == o.pose.translation && pose.rotation.coeffs() == o.pose.rotation.coeffs();
}

void DescriptorSet::add(const Descriptor& d, const DescriptorMeta& m) {
  if (dim == 0 && meta.empty()) dim = static_cast<int>(d.values.size());
  if (d.values.size() != dim) fail(ErrorCode::kShape, "descriptor set: dimension mismatch");
  require(m.id.find_first_of(",\n") == std::string::npos, "descriptor set: ids may not contain ',' or newlines");
  for (Eigen::Index i = 0; i < d.values.size(); ++i) rows.push_back(static_cast<float>(d.values(i)));
  meta.push_back(m);
}

Vec DescriptorSet::row(std::size_t i) const {
  Vec out(dim);
  for (int k = 0; k < dim; ++k) out(k) = rows[i * dim + k];
  return out;
}

std::vector<std::uint8_t> encode_descriptors(const DescriptorSet& set) {
  ByteWriter w;
  w.magic("DSC1");
  w.u32(static_cast<std::uint32_t>(set.count()));
  w.u32(static_cast<std::uint32_t>(set.dim));
  w.f32s(set.rows);
  return w.take();
}

DescriptorSet decode_descriptors(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "DSC1");
  r.magic("DSC1");
  const std::uint32_t count = r.u32(), dim = r.u32();
  if (static_cast<std::uint64_t>(count) * dim * sizeof(float) != r.remaining()) fail(ErrorCode::kFormat, "DSC1: size mismatch");
  DescriptorSet set;
  set.dim = static_cast<int>(dim);
  set.rows.resize(static_cast<std::size_t>(count) * dim);
  r.f32s(set.rows);
  set.meta.resize(count);
  return set;
}

std::string encode_descriptor_index(const DescriptorSet& set) {
  std::ostringstream out;
  out << std::setprecision(17) << "row,id,timestamp,tx,ty,tz,qx,qy,qz,qw\n";
  for (std::size_t i = 0; i < set.meta.size(); ++i) {
    const DescriptorMeta& m = set.meta[i];
    const auto& t = m.pose.translation;
    const auto& q = m.pose.rotation;
    out << i << ',' << m.id << ',' << m.timestamp << ',' << t.x() << ',' << t.y() << ',' << t.z() << ',' << q.x() << ','
        << q.y() << ',' << q.z() << ',' << q.w() << '\n';
  }
  return out.str();
}

void decode_descriptor_index(const std::string& text, DescriptorSet& set) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line.rfind("row,id,timestamp", 0) != 0) fail(ErrorCode::kFormat, "descriptor index: bad header");
  std::size_t count = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 10) fail(ErrorCode::kFormat, "descriptor index: expected 10 fields");
    const std::size_t row = std::stoul(fields[0]);
    if (row != count || row >= set.meta.size()) fail(ErrorCode::kFormat, "descriptor index: row out of sequence");
    DescriptorMeta& m = set.meta[row];
    m.id = fields[1];
    m.timestamp = std::stod(fields[2]);
    m.pose.timestamp = m.timestamp;
    m.pose.translation = {std::stod(fields[3]), std::stod(fields[4]), std::stod(fields[5])};
    m.pose.rotation = Eigen::Quaterniond(std::stod(fields[9]), std::stod(fields[6]), std::stod(fields[7]), std::stod(fields[8]));
    ++count;
  }
  if (count != set.meta.size()) fail(ErrorCode::kFormat, "descriptor index: row count does not match DSC1 header");
}

void save_descriptors(const std::filesystem::path& path, const DescriptorSet& set) {
  write_file(path, encode_descriptors(set));
  const std::string index = encode_descriptor_index(set);
  write_file(path.string() + ".idx", std::span(reinterpret_cast<const std::uint8_t*>(index.data()), index.size()));
}

DescriptorSet load_descriptors(const std::filesystem::path& path) {
  DescriptorSet set = decode_descriptors(read_file(path));
  const auto idx = read_file(path.string() + ".idx");
  decode_descriptor_index(std::string(idx.begin(), idx.end()), set);
  return set;
}

}  // namespace rivlpr
