#include "rivlpr/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>
#include <tuple>

namespace rivlpr {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

RigidTransform RigidTransform::from_yaw(double yaw, const Eigen::Vector3d& t) {
  RigidTransform out;
  out.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  out.translation = t;
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  RigidTransform out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

bool RigidTransform::valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  if (std::abs(rotation.determinant() - 1.0) > tol) return false;
  return ((rotation.transpose() * rotation) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol;
}

RigidTransform Pose::transform() const {
  RigidTransform out;
  out.rotation = rotation.normalized().toRotationMatrix();
  out.translation = translation;
  return out;
}

Pose Pose::from_transform(const RigidTransform& t, double timestamp) {
  Pose p;
  p.rotation = Eigen::Quaterniond(t.rotation).normalized();
  p.translation = t.translation;
  p.timestamp = timestamp;
  return p;
}

namespace {

std::string stem_of(const std::filesystem::path& path) { return path.stem().string(); }

double timestamp_from_stem(const std::string& stem) {
  char* end = nullptr;
  const double t = std::strtod(stem.c_str(), &end);
  if (end == stem.c_str() || *end != '\0' || !std::isfinite(t)) return 0.0;
  return t;
}

[[noreturn]] void malformed(const std::filesystem::path& path, const std::string& why) {
  fail(ErrorCode::kFormat, "malformed scan file " + path.string() + ": " + why);
}

void check_point(const std::filesystem::path& path, const Point& p, std::size_t index) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) || !std::isfinite(p.reflectivity)) {
    malformed(path, "non-finite value in record " + std::to_string(index));
  }
  if (p.reflectivity < 0.0) malformed(path, "negative reflectivity in record " + std::to_string(index));
}

Scan load_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) malformed(path, "empty file");
  if (bytes.size() % 16 != 0) malformed(path, "truncated record");
  Scan scan;
  scan.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    float rec[4];
    std::memcpy(rec, bytes.data() + 16 * i, sizeof(rec));
    Point& p = scan.points[i];
    p = {rec[0], rec[1], rec[2], rec[3]};
    check_point(path, p, i);
  }
  return scan;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

Scan load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) malformed(path, "empty file");
  std::string header = trim(line);
  header.erase(std::remove(header.begin(), header.end(), ' '), header.end());
  if (header != "x,y,z,reflectivity") malformed(path, "expected header x,y,z,reflectivity");
  Scan scan;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    double v[4];
    const char* cur = line.c_str();
    for (int c = 0; c < 4; ++c) {
      char* end = nullptr;
      v[c] = std::strtod(cur, &end);
      if (end == cur) malformed(path, "bad field in row " + std::to_string(scan.points.size() + 1));
      cur = end;
      while (*cur == ' ') ++cur;
      if (c < 3) {
        if (*cur != ',') malformed(path, "missing column in row " + std::to_string(scan.points.size() + 1));
        ++cur;
      }
    }
    if (*cur != '\0') malformed(path, "trailing data in row " + std::to_string(scan.points.size() + 1));
    Point p{v[0], v[1], v[2], v[3]};
    check_point(path, p, scan.points.size());
    scan.points.push_back(p);
  }
  if (scan.points.empty()) malformed(path, "no points");
  return scan;
}

}  // namespace

Scan load_scan(const std::filesystem::path& path, ScanFormat format) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::kIo, "no such file " + path.string());
  Scan scan = format == ScanFormat::kXyzrBin ? load_bin(path) : load_csv(path);
  scan.id = stem_of(path);
  scan.timestamp = timestamp_from_stem(scan.id);
  return scan;
}

Scan load_scan(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return load_scan(path, ext == ".csv" ? ScanFormat::kCsv : ScanFormat::kXyzrBin);
}

void save_scan(const std::filesystem::path& path, const Scan& scan, ScanFormat format) {
  if (format == ScanFormat::kXyzrBin) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
    for (const Point& p : scan.points) {
      const float rec[4] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z),
                            static_cast<float>(p.reflectivity)};
      out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
    return;
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "x,y,z,reflectivity\n" << std::setprecision(9);
  for (const Point& p : scan.points) {
    out << static_cast<float>(p.x) << ',' << static_cast<float>(p.y) << ',' << static_cast<float>(p.z) << ','
        << static_cast<float>(p.reflectivity) << '\n';
  }
}

std::vector<Pose> load_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open pose file " + path.string());
  std::vector<Pose> poses;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double v[8];
    for (double& x : v) {
      if (!(ss >> x)) fail(ErrorCode::kFormat, path.string() + ":" + std::to_string(lineno) + ": expected 8 numbers");
    }
    Pose p;
    p.timestamp = v[0];
    p.translation = {v[1], v[2], v[3]};
    p.rotation = Eigen::Quaterniond(v[7], v[4], v[5], v[6]);
    if (std::abs(p.rotation.norm() - 1.0) > 1e-6) {
      fail(ErrorCode::kFormat, path.string() + ":" + std::to_string(lineno) + ": quaternion is not unit length");
    }
    p.rotation.normalize();
    poses.push_back(p);
  }
  return poses;
}

void save_poses(const std::filesystem::path& path, std::span<const Pose> poses) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "# timestamp tx ty tz qx qy qz qw\n" << std::setprecision(17);
  for (const Pose& p : poses) {
    const auto& q = p.rotation;
    out << p.timestamp << ' ' << p.translation.x() << ' ' << p.translation.y() << ' ' << p.translation.z() << ' '
        << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
}

std::optional<Pose> find_pose(std::span<const Pose> poses, double t, double tol) {
  std::optional<Pose> best;
  double best_dt = tol;
  for (const Pose& p : poses) {
    const double dt = std::abs(p.timestamp - t);
    if (dt <= best_dt) {
      if (!best || dt < best_dt) best = p;
      best_dt = dt;
    }
  }
  return best;
}

Scan transform_scan(const Scan& scan, const RigidTransform& t) {
  Scan out = scan;
  for (Point& p : out.points) {
    const Eigen::Vector3d q = t.apply(p.xyz());
    p.x = q.x();
    p.y = q.y();
    p.z = q.z();
  }
  return out;
}

Scan voxel_downsample(const Scan& scan, double cell) {
  require(cell > 0.0 && std::isfinite(cell), "voxel cell must be positive");
  using Key = std::tuple<std::int64_t, std::int64_t, std::int64_t>;
  const std::size_t n = scan.points.size();
  std::vector<Key> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = scan.points[i];
    keys[i] = {static_cast<std::int64_t>(std::floor(p.x / cell)), static_cast<std::int64_t>(std::floor(p.y / cell)),
               static_cast<std::int64_t>(std::floor(p.z / cell))};
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

  Scan out;
  out.id = scan.id;
  out.timestamp = scan.timestamp;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    double sx = 0, sy = 0, sz = 0, sr = 0;
    while (j < n && keys[order[j]] == keys[order[i]]) {
      const Point& p = scan.points[order[j]];
      sx += p.x;
      sy += p.y;
      sz += p.z;
      sr += p.reflectivity;
      ++j;
    }
    const double c = static_cast<double>(j - i);
    out.points.push_back({sx / c, sy / c, sz / c, sr / c});
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-d tree

namespace {
constexpr int kLeafSize = 8;

struct Candidate {
  double d2;
  int index;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};
}  // namespace

KdTree::KdTree(std::span<const Eigen::Vector3d> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<int>(points_.size()), 0);
  }
}

KdTree::KdTree(const Scan& scan) : KdTree([&] {
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(scan.points.size());
  for (const Point& p : scan.points) pts.push_back(p.xyz());
  return pts;
}()) {}

int KdTree::build(int begin, int end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  Eigen::Vector3d lo = points_[order_[begin]], hi = lo;
  for (int i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] - lo[axis] <= 0.0) return id;  // all coincident: keep as leaf

  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

template <typename Visit>
void KdTree::search(int node_id, const Eigen::Vector3d& q, Visit& visit) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[i];
      visit.offer({(points_[idx] - q).squaredNorm(), idx});
    }
    return;
  }
  // Left subtree holds coordinates <= split, right holds >= split.
  const double diff = q[node.axis] - node.split;
  const int first = diff <= 0.0 ? node.left : node.right;
  const int second = diff <= 0.0 ? node.right : node.left;
  search(first, q, visit);
  if (diff * diff <= visit.bound()) search(second, q, visit);
}

namespace {
struct KnnVisitor {
  std::size_t k;
  std::priority_queue<Candidate> heap;  // max-heap by (d2, index)
  void offer(const Candidate& c) {
    if (heap.size() < k) {
      heap.push(c);
    } else if (c < heap.top()) {
      heap.pop();
      heap.push(c);
    }
  }
  double bound() const {
    return heap.size() < k ? std::numeric_limits<double>::infinity() : heap.top().d2;
  }
};
}  // namespace

std::vector<int> KdTree::knn(const Eigen::Vector3d& query, int k) const {
  require(k >= 1, "knn: k must be >= 1");
  require(!points_.empty(), "knn: empty point set");
  KnnVisitor visitor{std::min<std::size_t>(static_cast<std::size_t>(k), points_.size()), {}};
  search(0, query, visitor);
  std::vector<Candidate> found;
  found.reserve(visitor.heap.size());
  while (!visitor.heap.empty()) {
    found.push_back(visitor.heap.top());
    visitor.heap.pop();
  }
  std::reverse(found.begin(), found.end());
  std::vector<int> out;
  out.reserve(found.size());
  for (const auto& c : found) out.push_back(c.index);
  return out;
}

std::pair<int, double> KdTree::nearest(const Eigen::Vector3d& query) const {
  require(!points_.empty(), "nearest: empty point set");
  KnnVisitor visitor{1, {}};
  search(0, query, visitor);
  return {visitor.heap.top().index, visitor.heap.top().d2};
}

std::vector<int> knn(const Scan& scan, const Point& query, int k) {
  require(!scan.points.empty(), "knn: empty scan");
  return KdTree(scan).knn(query.xyz(), k);
}

// ---------------------------------------------------------------------------
// ICP

namespace {

RigidTransform kabsch(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst) {
  Eigen::Vector3d cs = Eigen::Vector3d::Zero(), cd = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= static_cast<double>(src.size());
  cd /= static_cast<double>(src.size());
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d& u = svd.matrixU();
  const Eigen::Matrix3d& v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = v * d * u.transpose();
  t.translation = cd - t.rotation * cs;
  return t;
}

}  // namespace

IcpResult icp_align(const Scan& source, const Scan& target, const RigidTransform& init, int max_iter, double tol) {
  require(!source.points.empty() && !target.points.empty(), "icp_align: empty scan");
  require(init.valid(1e-6), "icp_align: invalid initial transform");
  require(max_iter >= 1, "icp_align: max_iter must be >= 1");

  const KdTree tree(target);
  std::vector<Eigen::Vector3d> tgt;
  tgt.reserve(target.points.size());
  for (const Point& p : target.points) tgt.push_back(p.xyz());

  IcpResult result;
  result.transform = init;
  std::vector<Eigen::Vector3d> moved(source.points.size());
  std::vector<int> match(source.points.size());
  std::vector<double> dist(source.points.size());
  std::vector<Eigen::Vector3d> src_kept, dst_kept;
  double previous = std::numeric_limits<double>::infinity();

  for (int it = 0; it < max_iter; ++it) {
    double sum = 0.0;
    for (std::size_t i = 0; i < source.points.size(); ++i) {
      moved[i] = result.transform.apply(source.points[i].xyz());
      const auto [j, d2] = tree.nearest(moved[i]);
      match[i] = j;
      dist[i] = std::sqrt(d2);
      sum += dist[i];
    }
    const double mean = sum / static_cast<double>(moved.size());
    result.history.push_back(mean);
    result.mean_distance = mean;
    result.iterations = it + 1;
    if (mean == 0.0 || previous - mean < tol) break;
    previous = mean;

    src_kept.clear();
    dst_kept.clear();
    const double gate = 3.0 * mean;
    for (std::size_t i = 0; i < moved.size(); ++i) {
      if (dist[i] <= gate) {
        src_kept.push_back(moved[i]);
        dst_kept.push_back(tgt[match[i]]);
      }
    }
    if (src_kept.size() < 3) fail(ErrorCode::kAlignment, "icp_align: fewer than 3 correspondences");
    result.transform = kabsch(src_kept, dst_kept) * result.transform;
  }
  return result;
}

}  // namespace rivlpr
