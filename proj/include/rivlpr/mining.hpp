#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rivlpr/geometry.hpp"
#include "rivlpr/riv.hpp"

namespace rivlpr {

struct MiningConfig {
  double rho_valid = 0.5;
  double mad_k = 3.0;
  int v_dist = 3;
  int h_dist = 20;
  int max_positives = 192;
  int max_negatives = 128;  // per positive, per side
  double voxel = 0.4;
  double positive_radius = 10.0;
  int icp_max_iter = 50;
  double icp_tol = 1e-4;

  void validate() const;
};

struct GridShape {
  int rows = 0;
  int cols = 0;
  int count() const { return rows * cols; }
  bool operator==(const GridShape&) const = default;
};

GridShape patch_grid(const RivImage& img);

struct PatchPair {
  int a = 0;  // patch index in image A (row-major over A's grid)
  int b = 0;  // patch index in image B's own grid
  bool operator==(const PatchPair&) const = default;
};

/// Positive patch pairs between two images plus, for each positive, hard
/// negatives drawn from image A (negatives_a) and from image B (negatives_b).
struct PatchPairSet {
  std::string source_a;
  std::string source_b;
  GridShape grid_a;
  GridShape grid_b;
  std::vector<PatchPair> positives;
  std::vector<std::vector<int>> negatives_a;
  std::vector<std::vector<int>> negatives_b;
  MiningConfig config;
  std::uint64_t seed = 0;

  bool operator==(const PatchPairSet& o) const;
};

/// Scan B rendered in A's image frame, remembering for every pixel which pixel
/// of B's own image the winning point occupies (-1 when none).
struct Reprojection {
  RivImage image;
  std::vector<int> source_pixel;
  int source_width = 0;
};

Reprojection reproject(const Scan& scan_b, const RigidTransform& b_to_a, const RivConfig& cfg);

struct PositiveCandidate {
  PatchPair pair;
  int overlap = 0;
  double mean_abs_residual = 0.0;  // Delta_r
  double threshold = 0.0;          // tau_r
};

/// Overlap + median-absolute-deviation range test per 14x14 patch of A. Keeps the
/// `max_positives` candidates with the smallest mean absolute residual.
std::vector<PositiveCandidate> mine_positives(const RivImage& img_a, const Reprojection& reproj_b, GridShape grid_b,
                                              const MiningConfig& cfg);

/// Cylindrical column distance min(d, W' - d).
int cyclic_column_distance(int col_a, int col_b, int cols);
bool admissible_negative(int candidate, int positive, GridShape grid, const MiningConfig& cfg);

struct NegativeSample {
  std::vector<std::vector<int>> per_positive;
  bool all_found = true;  // false when some positive had no admissible negative
};

NegativeSample mine_negatives(const std::vector<int>& positives, GridShape grid, const MiningConfig& cfg,
                              std::uint64_t seed);

enum class MiningStatus { kOk, kAlignmentFailed };

struct MiningResult {
  MiningStatus status = MiningStatus::kOk;
  PatchPairSet pairs;
  RigidTransform b_to_a;
  std::string message;
};

/// Voxelize, ICP-refine the pose-derived relative transform, reproject B onto A,
/// mine positives then negatives. Throws ErrorCode::kProtocol when the poses are
/// farther apart than the positive radius.
MiningResult mine_pair(const Scan& scan_a, const Scan& scan_b, const Pose& pose_a, const Pose& pose_b,
                       const RivConfig& riv, const MiningConfig& cfg, std::uint64_t seed);

std::string encode_pairs(const PatchPairSet& set);
PatchPairSet decode_pairs(const std::string& text);
void save_pairs(const std::filesystem::path& path, const PatchPairSet& set);
PatchPairSet load_pairs(const std::filesystem::path& path);

}  // namespace rivlpr
