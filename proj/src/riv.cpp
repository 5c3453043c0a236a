#include "rivlpr/riv.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>

#include "binary_io.hpp"

namespace rivlpr {

void RivConfig::validate() const {
  require(width > 0 && height > 0, "riv: width and height must be positive");
  require(fov_up > 0.0 && fov_up < fov_total, "riv: need 0 < fov_up < fov_total");
  require(max_range > 0.0, "riv: max_range must be positive");
  require(knn_k >= 3, "riv: knn_k must be >= 3");
  require(wrap_cols >= 0, "riv: wrap_cols must be >= 0");
  require(normal_eps > 0.0 && normal_log_cap > 0.0, "riv: normal_eps and normal_log_cap must be positive");
}

std::size_t RivImage::valid_count() const {
  return static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(), [](std::uint8_t m) { return m != 0; }));
}

std::optional<Projection> project_point(const Point& p, const RivConfig& cfg) {
  const double r = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
  if (!(r > 0.0) || !std::isfinite(r) || r > cfg.max_range) return std::nullopt;
  const double azimuth = std::atan2(p.y, p.x);
  const double elevation = std::asin(std::clamp(p.z / r, -1.0, 1.0));
  const double uf = std::floor(0.5 * (1.0 - azimuth / std::numbers::pi) * cfg.width);
  const double vf = std::floor((1.0 - (elevation + cfg.fov_up) / cfg.fov_total) * cfg.height);
  if (vf < 0.0 || vf > cfg.height - 1) return std::nullopt;
  Projection out;
  out.pixel.u = std::clamp(static_cast<int>(uf), 0, cfg.width - 1);
  out.pixel.v = static_cast<int>(vf);
  out.range = r;
  return out;
}

Eigen::Vector3d unproject_pixel(const PixelCoord& px, double range, const RivConfig& cfg) {
  const double azimuth = std::numbers::pi * (1.0 - 2.0 * (px.u + 0.5) / cfg.width);
  const double elevation = (1.0 - (px.v + 0.5) / cfg.height) * cfg.fov_total - cfg.fov_up;
  const double c = std::cos(elevation);
  return {range * c * std::cos(azimuth), range * c * std::sin(azimuth), range * std::sin(elevation)};
}

ProjectionIndex project_indices(const Scan& scan, const RivConfig& cfg) {
  cfg.validate();
  ProjectionIndex index{cfg.height, cfg.width,
                        std::vector<int>(static_cast<std::size_t>(cfg.height) * cfg.width, -1)};
  std::vector<double> best(index.winner.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    const auto proj = project_point(scan.points[i], cfg);
    if (!proj) continue;
    const std::size_t pix = static_cast<std::size_t>(proj->pixel.v) * cfg.width + proj->pixel.u;
    if (proj->range < best[pix]) {
      best[pix] = proj->range;
      index.winner[pix] = static_cast<int>(i);
    }
  }
  return index;
}

namespace {

/// Sensors reporting intensity above 255 are min-max rescaled into [0, 255] per scan.
std::vector<double> normalized_reflectivity(const Scan& scan) {
  std::vector<double> refl(scan.points.size());
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < refl.size(); ++i) {
    refl[i] = scan.points[i].reflectivity;
    lo = std::min(lo, refl[i]);
    hi = std::max(hi, refl[i]);
  }
  if (hi > 255.0) {
    const double span = hi - lo;
    for (double& r : refl) r = span > 0.0 ? (r - lo) / span * 255.0 : 0.0;
  }
  return refl;
}

}  // namespace

RivImage render_image(const Scan& scan, const ProjectionIndex& index, const RivConfig& cfg) {
  RivImage img(index.height, index.width);
  const std::vector<double> refl = normalized_reflectivity(scan);
  std::optional<KdTree> tree;
  const int k = std::min<int>(cfg.knn_k, static_cast<int>(scan.points.size()));
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      const int idx = index.winner[static_cast<std::size_t>(v) * img.width + u];
      if (idx < 0) continue;
      if (!tree) tree.emplace(scan);
      const Point& p = scan.points[idx];
      const double range = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
      img.valid[static_cast<std::size_t>(v) * img.width + u] = 1;
      img.at(v, u, 0) = static_cast<float>(std::clamp(refl[idx] / 255.0, 0.0, 1.0));
      img.at(v, u, 1) = static_cast<float>(range / cfg.max_range);
      img.at(v, u, 2) = static_cast<float>(normal_ratio(scan, *tree, idx, k, cfg));
    }
  }
  return img;
}

RivImage project_scan(const Scan& scan, const RivConfig& cfg) {
  require(!scan.points.empty(), "project_scan: empty scan");
  return render_image(scan, project_indices(scan, cfg), cfg);
}

double normal_ratio_raw(std::span<const Eigen::Vector3d> neighbours, double eps) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : neighbours) mean += p;
  mean /= static_cast<double>(neighbours.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : neighbours) cov += (p - mean) * (p - mean).transpose();
  cov /= static_cast<double>(neighbours.size());
  // Symmetric PSD: singular values are the (clamped) eigenvalues.
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov, Eigen::EigenvaluesOnly);
  const Eigen::Vector3d s = eig.eigenvalues().cwiseMax(0.0);  // ascending
  return std::log((s(2) + eps) / (s(0) + eps));
}

double normal_ratio(const Scan& scan, const KdTree& tree, int idx, int k, const RivConfig& cfg) {
  require(k >= 1 && static_cast<std::size_t>(k) <= scan.points.size(), "normal_ratio: k exceeds scan size");
  require(idx >= 0 && static_cast<std::size_t>(idx) < scan.points.size(), "normal_ratio: index out of range");
  const std::vector<int> nn = tree.knn(scan.points[idx].xyz(), k);
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(nn.size());
  for (int j : nn) pts.push_back(scan.points[j].xyz());
  const double raw = normal_ratio_raw(pts, cfg.normal_eps);
  return std::min(std::max(raw, 0.0) / cfg.normal_log_cap, 1.0);
}

double normal_ratio(const Scan& scan, int idx, int k, const RivConfig& cfg) {
  require(k >= 1 && static_cast<std::size_t>(k) <= scan.points.size(), "normal_ratio: k exceeds scan size");
  return normal_ratio(scan, KdTree(scan), idx, k, cfg);
}

RivImage wrap_pad(const RivImage& img, int wrap_cols) {
  require(wrap_cols >= 0 && wrap_cols <= img.width, "wrap_pad: wrap_cols must be in [0, W]");
  const int w = img.width + 2 * wrap_cols;
  RivImage out(img.height, w);
  for (int v = 0; v < img.height; ++v) {
    for (int q = 0; q < w; ++q) {
      const int src = ((q - wrap_cols) % img.width + img.width) % img.width;
      for (int c = 0; c < RivImage::kChannels; ++c) out.at(v, q, c) = img.at(v, src, c);
      out.valid[static_cast<std::size_t>(v) * w + q] = img.valid[static_cast<std::size_t>(v) * img.width + src];
    }
  }
  return out;
}

RivImage resize_vertical(const RivImage& img, int new_height) {
  require(new_height > 0, "resize_vertical: new height must be positive");
  require(img.height > 0, "resize_vertical: empty image");
  RivImage out(new_height, img.width);
  const double scale = static_cast<double>(img.height) / new_height;
  for (int r = 0; r < new_height; ++r) {
    // Half-pixel-centre sampling: output row centres map onto input row centres.
    const double src = std::clamp((r + 0.5) * scale - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int r0 = static_cast<int>(std::floor(src));
    const int r1 = std::min(r0 + 1, img.height - 1);
    const double t = src - r0;
    for (int u = 0; u < img.width; ++u) {
      const double m = (1.0 - t) * img.is_valid(r0, u) + t * img.is_valid(r1, u);
      const bool keep = m >= 0.5;
      out.valid[static_cast<std::size_t>(r) * img.width + u] = keep ? 1 : 0;
      for (int c = 0; c < RivImage::kChannels; ++c) {
        out.at(r, u, c) = keep ? static_cast<float>((1.0 - t) * img.at(r0, u, c) + t * img.at(r1, u, c)) : 0.0f;
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_riv(const RivImage& img) {
  ByteWriter w;
  w.magic("RIV1");
  w.u32(static_cast<std::uint32_t>(img.height));
  w.u32(static_cast<std::uint32_t>(img.width));
  w.u32(RivImage::kChannels);
  w.f32s(img.data);
  w.bytes(img.valid);
  return w.take();
}

RivImage decode_riv(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "RIV1");
  r.magic("RIV1");
  const std::uint32_t h = r.u32(), w = r.u32(), c = r.u32();
  if (c != RivImage::kChannels) fail(ErrorCode::kFormat, "RIV1: expected 3 channels");
  if (h == 0 || w == 0 || h > (1u << 16) || w > (1u << 16)) fail(ErrorCode::kFormat, "RIV1: bad dimensions");
  RivImage img(static_cast<int>(h), static_cast<int>(w));
  r.f32s(img.data);
  r.bytes(img.valid);
  r.finish();
  return img;
}

void save_riv(const std::filesystem::path& path, const RivImage& img) { write_file(path, encode_riv(img)); }

RivImage load_riv(const std::filesystem::path& path) { return decode_riv(read_file(path)); }

}  // namespace rivlpr
