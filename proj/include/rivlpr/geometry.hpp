#pragma once

#include <Eigen/Geometry>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rivlpr/common.hpp"

namespace rivlpr {

struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double reflectivity = 0.0;

  Eigen::Vector3d xyz() const { return {x, y, z}; }
  bool operator==(const Point&) const = default;
};

struct Scan {
  std::vector<Point> points;
  double timestamp = 0.0;
  std::string id;
};

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_yaw(double yaw, const Eigen::Vector3d& t = Eigen::Vector3d::Zero());

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  RigidTransform operator*(const RigidTransform& rhs) const;
  /// det(R) = 1 and RᵀR = I within `tol`.
  bool valid(double tol = 1e-9) const;
};

struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double timestamp = 0.0;

  RigidTransform transform() const;
  static Pose from_transform(const RigidTransform& t, double timestamp);
};

enum class ScanFormat { kXyzrBin, kCsv };

/// Parses a scan file. The id is the file stem; for numeric stems the stem is
/// also taken as the timestamp (seconds).
Scan load_scan(const std::filesystem::path& path, ScanFormat format);
Scan load_scan(const std::filesystem::path& path);  // format from extension
void save_scan(const std::filesystem::path& path, const Scan& scan, ScanFormat format);

/// "timestamp tx ty tz qx qy qz qw" per line, '#' comments skipped.
std::vector<Pose> load_poses(const std::filesystem::path& path);
void save_poses(const std::filesystem::path& path, std::span<const Pose> poses);
/// Pose whose timestamp is within `tol` seconds of `t`, if any.
std::optional<Pose> find_pose(std::span<const Pose> poses, double t, double tol = 1e-3);

Scan transform_scan(const Scan& scan, const RigidTransform& t);

/// Centroid per occupied voxel (reflectivity averaged), ordered by voxel key.
Scan voxel_downsample(const Scan& scan, double cell);

/// Exact k-d tree over a fixed point set. Ties are broken towards the lower index.
class KdTree {
 public:
  explicit KdTree(std::span<const Eigen::Vector3d> points);
  explicit KdTree(const Scan& scan);

  std::vector<int> knn(const Eigen::Vector3d& query, int k) const;
  /// Nearest neighbour index and squared distance.
  std::pair<int, double> nearest(const Eigen::Vector3d& query) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    int begin, end;  // range in order_
    int left = -1, right = -1;
    int axis = -1;   // -1 marks a leaf
    double split = 0.0;
  };
  int build(int begin, int end, int depth);
  template <typename Visit>
  void search(int node, const Eigen::Vector3d& q, Visit& visit) const;

  std::vector<Eigen::Vector3d> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

std::vector<int> knn(const Scan& scan, const Point& query, int k);

struct IcpResult {
  RigidTransform transform;
  int iterations = 0;
  double mean_distance = 0.0;
  std::vector<double> history;  // mean correspondence distance per iteration
};

/// Point-to-point ICP mapping `source` into the frame of `target`.
/// Correspondences farther than 3x the current mean distance are rejected.
IcpResult icp_align(const Scan& source, const Scan& target, const RigidTransform& init,
                    int max_iter = 50, double tol = 1e-4);

}  // namespace rivlpr
