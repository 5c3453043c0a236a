#include "rivlpr/mining.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rivlpr/encoder.hpp"
#include "rivlpr/rng.hpp"

namespace rivlpr {

void MiningConfig::validate() const {
  require(rho_valid > 0.0 && rho_valid <= 1.0, "mining: rho_valid must be in (0, 1]");
  require(mad_k >= 0.0, "mining: mad_k must be >= 0");
  require(v_dist >= 1 && h_dist >= 1, "mining: v_dist and h_dist must be >= 1");
  require(max_positives >= 1 && max_negatives >= 1, "mining: pair caps must be >= 1");
  require(voxel > 0.0 && positive_radius > 0.0, "mining: voxel and positive_radius must be positive");
  require(icp_max_iter >= 1 && icp_tol >= 0.0, "mining: bad ICP settings");
}

GridShape patch_grid(const RivImage& img) { return {img.height / kPatchSize, img.width / kPatchSize}; }

bool PatchPairSet::operator==(const PatchPairSet& o) const {
  return source_a == o.source_a && source_b == o.source_b && grid_a == o.grid_a && grid_b == o.grid_b &&
         positives == o.positives && negatives_a == o.negatives_a && negatives_b == o.negatives_b && seed == o.seed &&
         config.rho_valid == o.config.rho_valid && config.mad_k == o.config.mad_k && config.v_dist == o.config.v_dist &&
         config.h_dist == o.config.h_dist && config.max_positives == o.config.max_positives &&
         config.max_negatives == o.config.max_negatives && config.voxel == o.config.voxel &&
         config.positive_radius == o.config.positive_radius && config.icp_max_iter == o.config.icp_max_iter &&
         config.icp_tol == o.config.icp_tol;
}

Reprojection reproject(const Scan& scan_b, const RigidTransform& b_to_a, const RivConfig& cfg) {
  require(b_to_a.valid(1e-6), "reproject: invalid transform");
  const Scan moved = transform_scan(scan_b, b_to_a);
  const ProjectionIndex index = project_indices(moved, cfg);
  Reprojection out;
  out.image = render_image(moved, index, cfg);
  out.source_width = cfg.width;
  out.source_pixel.assign(index.winner.size(), -1);
  for (std::size_t pix = 0; pix < index.winner.size(); ++pix) {
    const int j = index.winner[pix];
    if (j < 0) continue;
    if (const auto own = project_point(scan_b.points[j], cfg)) {
      out.source_pixel[pix] = own->pixel.v * cfg.width + own->pixel.u;
    }
  }
  return out;
}

namespace {

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

}  // namespace

std::vector<PositiveCandidate> mine_positives(const RivImage& img_a, const Reprojection& reproj_b, GridShape grid_b,
                                              const MiningConfig& cfg) {
  cfg.validate();
  const RivImage& img_b = reproj_b.image;
  require(img_a.height == img_b.height && img_a.width == img_b.width, "mine_positives: image dimensions differ");
  const GridShape grid_a = patch_grid(img_a);
  constexpr double kPatchArea = kPatchSize * kPatchSize;

  std::vector<PositiveCandidate> accepted;
  std::vector<double> d;
  std::map<int, int> votes;
  for (int p = 0; p < grid_a.rows; ++p) {
    for (int q = 0; q < grid_a.cols; ++q) {
      d.clear();
      votes.clear();
      for (int v = p * kPatchSize; v < (p + 1) * kPatchSize; ++v) {
        for (int u = q * kPatchSize; u < (q + 1) * kPatchSize; ++u) {
          if (!img_a.is_valid(v, u) || !img_b.is_valid(v, u)) continue;
          d.push_back(static_cast<double>(img_a.at(v, u, 1)) - static_cast<double>(img_b.at(v, u, 1)));
          const int src = reproj_b.source_pixel[static_cast<std::size_t>(v) * img_a.width + u];
          if (src < 0) continue;
          const int pb = (src / reproj_b.source_width) / kPatchSize;
          const int qb = (src % reproj_b.source_width) / kPatchSize;
          if (pb < grid_b.rows && qb < grid_b.cols) ++votes[pb * grid_b.cols + qb];
        }
      }
      const int overlap = static_cast<int>(d.size());
      if (!(overlap / kPatchArea > cfg.rho_valid) || votes.empty()) continue;

      double mean_abs = 0.0;
      for (double x : d) mean_abs += std::abs(x);
      mean_abs /= overlap;
      const double med = median_of(d);
      std::vector<double> dev(d.size());
      for (std::size_t i = 0; i < d.size(); ++i) dev[i] = std::abs(d[i] - med);
      const double threshold = med + cfg.mad_k * median_of(dev);
      // A perfectly aligned patch has tau_r = Delta_r = 0; it is the strongest positive.
      if (!(mean_abs == 0.0 || mean_abs < threshold)) continue;

      int best = -1, best_votes = 0;
      for (const auto& [idx, n] : votes) {  // ascending index: ties keep the lowest
        if (n > best_votes) {
          best = idx;
          best_votes = n;
        }
      }
      accepted.push_back({{p * grid_a.cols + q, best}, overlap, mean_abs, threshold});
    }
  }
  std::stable_sort(accepted.begin(), accepted.end(), [](const PositiveCandidate& x, const PositiveCandidate& y) {
    return x.mean_abs_residual < y.mean_abs_residual;
  });
  if (accepted.size() > static_cast<std::size_t>(cfg.max_positives)) accepted.resize(cfg.max_positives);
  return accepted;
}

int cyclic_column_distance(int col_a, int col_b, int cols) {
  const int d = std::abs(col_a - col_b) % cols;
  return std::min(d, cols - d);
}

bool admissible_negative(int candidate, int positive, GridShape grid, const MiningConfig& cfg) {
  const int dr = std::abs(candidate / grid.cols - positive / grid.cols);
  const int dc = cyclic_column_distance(candidate % grid.cols, positive % grid.cols, grid.cols);
  return dr >= cfg.v_dist || dc >= cfg.h_dist;
}

NegativeSample mine_negatives(const std::vector<int>& positives, GridShape grid, const MiningConfig& cfg,
                              std::uint64_t seed) {
  cfg.validate();
  NegativeSample out;
  Rng rng(seed);
  std::vector<int> pool;
  for (int pos : positives) {
    require(pos >= 0 && pos < grid.count(), "mine_negatives: positive outside the grid");
    pool.clear();
    for (int n = 0; n < grid.count(); ++n) {
      if (admissible_negative(n, pos, grid, cfg)) pool.push_back(n);
    }
    // Partial Fisher-Yates: uniform sample without replacement.
    const std::size_t take = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(cfg.max_negatives));
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(i), static_cast<std::int64_t>(pool.size()) - 1));
      std::swap(pool[i], pool[j]);
    }
    std::vector<int> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(chosen.begin(), chosen.end());
    if (chosen.empty()) out.all_found = false;
    out.per_positive.push_back(std::move(chosen));
  }
  return out;
}

MiningResult mine_pair(const Scan& scan_a, const Scan& scan_b, const Pose& pose_a, const Pose& pose_b,
                       const RivConfig& riv, const MiningConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const double separation = (pose_a.translation - pose_b.translation).norm();
  if (separation > cfg.positive_radius) {
    fail(ErrorCode::kProtocol, "mine_pair: scans are " + std::to_string(separation) + " m apart, beyond the " +
                                   std::to_string(cfg.positive_radius) + " m positive radius");
  }
  MiningResult result;
  const RigidTransform init = pose_a.transform().inverse() * pose_b.transform();
  try {
    const Scan va = voxel_downsample(scan_a, cfg.voxel);
    const Scan vb = voxel_downsample(scan_b, cfg.voxel);
    result.b_to_a = icp_align(vb, va, init, cfg.icp_max_iter, cfg.icp_tol).transform;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kAlignment) throw;
    result.status = MiningStatus::kAlignmentFailed;
    result.message = e.what();
    return result;
  }

  const RivImage img_a = project_scan(scan_a, riv);
  const Reprojection reproj = reproject(scan_b, result.b_to_a, riv);
  const GridShape grid{riv.height / kPatchSize, riv.width / kPatchSize};

  PatchPairSet& set = result.pairs;
  set.source_a = scan_a.id;
  set.source_b = scan_b.id;
  set.grid_a = grid;
  set.grid_b = grid;
  set.config = cfg;
  set.seed = seed;
  std::vector<int> pa, pb;
  for (const PositiveCandidate& c : mine_positives(img_a, reproj, grid, cfg)) {
    set.positives.push_back(c.pair);
    pa.push_back(c.pair.a);
    pb.push_back(c.pair.b);
  }
  set.negatives_a = mine_negatives(pa, grid, cfg, mix_seed(seed, 1)).per_positive;
  set.negatives_b = mine_negatives(pb, grid, cfg, mix_seed(seed, 2)).per_positive;
  return result;
}

// ---------------------------------------------------------------------------
// Text format

std::string encode_pairs(const PatchPairSet& set) {
  const MiningConfig& c = set.config;
  nlohmann::json header = {
      {"format", "PPS1"},
      {"source_a", set.source_a},
      {"source_b", set.source_b},
      {"grid_a", {set.grid_a.rows, set.grid_a.cols}},
      {"grid_b", {set.grid_b.rows, set.grid_b.cols}},
      {"positives", set.positives.size()},
      {"seed", set.seed},
      {"config",
       {{"rho_valid", c.rho_valid},
        {"mad_k", c.mad_k},
        {"v_dist", c.v_dist},
        {"h_dist", c.h_dist},
        {"max_positives", c.max_positives},
        {"max_negatives", c.max_negatives},
        {"voxel", c.voxel},
        {"positive_radius", c.positive_radius},
        {"icp_max_iter", c.icp_max_iter},
        {"icp_tol", c.icp_tol}}},
  };
  std::ostringstream out;
  out << "# " << header.dump() << '\n';
  for (const PatchPair& p : set.positives) out << "POS " << p.a << ' ' << p.b << '\n';
  for (std::size_t k = 0; k < set.negatives_a.size(); ++k)
    for (int idx : set.negatives_a[k]) out << "NEGA " << k << ' ' << idx << '\n';
  for (std::size_t k = 0; k < set.negatives_b.size(); ++k)
    for (int idx : set.negatives_b[k]) out << "NEGB " << k << ' ' << idx << '\n';
  return out.str();
}

PatchPairSet decode_pairs(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) fail(ErrorCode::kFormat, "pair file: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line.substr(2));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("pair file: bad header: ") + e.what());
  }
  PatchPairSet set;
  try {
    if (header.at("format") != "PPS1") fail(ErrorCode::kFormat, "pair file: unknown format");
    set.source_a = header.at("source_a");
    set.source_b = header.at("source_b");
    set.grid_a = {header.at("grid_a")[0], header.at("grid_a")[1]};
    set.grid_b = {header.at("grid_b")[0], header.at("grid_b")[1]};
    set.seed = header.at("seed");
    const auto& c = header.at("config");
    set.config.rho_valid = c.at("rho_valid");
    set.config.mad_k = c.at("mad_k");
    set.config.v_dist = c.at("v_dist");
    set.config.h_dist = c.at("h_dist");
    set.config.max_positives = c.at("max_positives");
    set.config.max_negatives = c.at("max_negatives");
    set.config.voxel = c.at("voxel");
    set.config.positive_radius = c.at("positive_radius");
    set.config.icp_max_iter = c.at("icp_max_iter");
    set.config.icp_tol = c.at("icp_tol");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("pair file: bad header field: ") + e.what());
  }
  const std::size_t count = header.at("positives");
  set.negatives_a.resize(count);
  set.negatives_b.resize(count);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tag;
    long long x = 0, y = 0;
    if (!(ss >> tag >> x >> y)) fail(ErrorCode::kFormat, "pair file: bad line '" + line + "'");
    if (tag == "POS") {
      set.positives.push_back({static_cast<int>(x), static_cast<int>(y)});
    } else if (tag == "NEGA" || tag == "NEGB") {
      if (x < 0 || static_cast<std::size_t>(x) >= count) fail(ErrorCode::kFormat, "pair file: ordinal out of range");
      (tag == "NEGA" ? set.negatives_a : set.negatives_b)[static_cast<std::size_t>(x)].push_back(static_cast<int>(y));
    } else {
      fail(ErrorCode::kFormat, "pair file: unknown tag '" + tag + "'");
    }
  }
  if (set.positives.size() != count) fail(ErrorCode::kFormat, "pair file: positive count does not match header");
  return set;
}

void save_pairs(const std::filesystem::path& path, const PatchPairSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << encode_pairs(set);
}

PatchPairSet load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_pairs(ss.str());
}

}  // namespace rivlpr
