#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <vector>

#include "rivlpr/geometry.hpp"

namespace rivlpr {

struct RivConfig {
  int width = 1022;
  int height = 126;
  double fov_up = 22.5 * std::numbers::pi / 180.0;     // radians above the horizon
  double fov_total = 45.0 * std::numbers::pi / 180.0;  // radians
  double max_range = 100.0;                            // meters
  int knn_k = 8;
  int wrap_cols = 28;
  double normal_eps = 1e-6;
  double normal_log_cap = std::log(1e6);

  void validate() const;
};

struct PixelCoord {
  int u = 0;  // column
  int v = 0;  // row
  bool operator==(const PixelCoord&) const = default;
};

/// H x W x 3 channel-last image: reflectivity, range / max_range, normal ratio.
struct RivImage {
  int height = 0;
  int width = 0;
  std::vector<float> data;            // height * width * 3
  std::vector<std::uint8_t> valid;    // height * width

  static constexpr int kChannels = 3;

  RivImage() = default;
  RivImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * kChannels, 0.0f),
                           valid(static_cast<std::size_t>(h) * w, 0) {}

  float& at(int v, int u, int c) { return data[(static_cast<std::size_t>(v) * width + u) * kChannels + c]; }
  float at(int v, int u, int c) const { return data[(static_cast<std::size_t>(v) * width + u) * kChannels + c]; }
  bool is_valid(int v, int u) const { return valid[static_cast<std::size_t>(v) * width + u] != 0; }
  std::size_t valid_count() const;

  bool operator==(const RivImage&) const = default;
};

struct Projection {
  PixelCoord pixel;
  double range = 0.0;
};

std::optional<Projection> project_point(const Point& p, const RivConfig& cfg);
/// Point at the center of pixel (u, v) with the given range; inverse of project_point.
Eigen::Vector3d unproject_pixel(const PixelCoord& px, double range, const RivConfig& cfg);

/// Per-pixel index of the winning (nearest) point, -1 where nothing landed.
struct ProjectionIndex {
  int height = 0;
  int width = 0;
  std::vector<int> winner;
};

ProjectionIndex project_indices(const Scan& scan, const RivConfig& cfg);

/// Nearest range wins pixel collisions.
RivImage project_scan(const Scan& scan, const RivConfig& cfg);
RivImage render_image(const Scan& scan, const ProjectionIndex& index, const RivConfig& cfg);

/// Log ratio of largest to smallest covariance singular value of the k-neighbourhood,
/// scaled by the log cap and clamped to [0, 1].
double normal_ratio(const Scan& scan, int idx, int k, const RivConfig& cfg);
double normal_ratio(const Scan& scan, const KdTree& tree, int idx, int k, const RivConfig& cfg);
double normal_ratio_raw(std::span<const Eigen::Vector3d> neighbours, double eps);

RivImage wrap_pad(const RivImage& img, int wrap_cols);
RivImage resize_vertical(const RivImage& img, int new_height);

void save_riv(const std::filesystem::path& path, const RivImage& img);
RivImage load_riv(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_riv(const RivImage& img);
RivImage decode_riv(std::span<const std::uint8_t> bytes);

}  // namespace rivlpr
