#include "rivlpr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rivlpr {

namespace {

constexpr double kPi = std::numbers::pi;

struct Street {
  Eigen::Vector2d start;
  Eigen::Vector2d dir;     // unit
  Eigen::Vector2d inward;  // unit normal toward the block interior
  double length = 0.0;
};

std::vector<Street> loop_streets(const SyntheticSpec& spec) {
  const Eigen::Vector2d c[4] = {{0, 0}, {spec.block_x, 0}, {spec.block_x, spec.block_y}, {0, spec.block_y}};
  std::vector<Street> out;
  for (int i = 0; i < 4; ++i) {
    Street s;
    s.start = c[i];
    const Eigen::Vector2d d = c[(i + 1) % 4] - c[i];
    s.length = d.norm();
    s.dir = d / s.length;
    s.inward = {-s.dir.y(), s.dir.x()};  // counter-clockwise loop: left is inside
    out.push_back(s);
  }
  return out;
}

bool hit_box(const Box& b, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double& t_hit) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Eigen::Vector3d rel = o - b.center;
  const Eigen::Vector3d lo(c * rel.x() + s * rel.y(), -s * rel.x() + c * rel.y(), rel.z());
  const Eigen::Vector3d ld(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (std::abs(ld[k]) < 1e-12) {
      if (std::abs(lo[k]) > b.half[k]) return false;
      continue;
    }
    double a = (-b.half[k] - lo[k]) / ld[k];
    double e = (b.half[k] - lo[k]) / ld[k];
    if (a > e) std::swap(a, e);
    t0 = std::max(t0, a);
    t1 = std::min(t1, e);
    if (t0 > t1) return false;
  }
  if (t0 <= 0.0) return false;  // origin inside the box
  t_hit = t0;
  return true;
}

bool hit_cylinder(const Cylinder& cyl, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double& t_hit) {
  const double ox = o.x() - cyl.center.x(), oy = o.y() - cyl.center.y();
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a < 1e-12) return false;
  const double b = 2.0 * (ox * d.x() + oy * d.y());
  const double c = ox * ox + oy * oy - cyl.radius * cyl.radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return false;
  const double t = (-b - std::sqrt(disc)) / (2.0 * a);
  if (t <= 0.0) return false;
  const double z = o.z() + t * d.z();
  if (z < 0.0 || z > cyl.top) return false;
  t_hit = t;
  return true;
}

double footprint_radius(const Box& b) { return std::hypot(b.half.x(), b.half.y()); }

}  // namespace

void SyntheticSpec::validate() const {
  require(sessions >= 1 && scans_per_session >= 1, "synthetic: need at least one session and one scan");
  require(spacing > 0.0 && dt > 0.0, "synthetic: spacing and dt must be positive");
  require(block_x > 20.0 && block_y > 20.0, "synthetic: block too small");
  require(sensor_height > 0.0, "synthetic: sensor height must be positive");
  sensor.validate();
}

namespace {

template <class BoxRange, class PoleRange>
std::pair<double, double> cast_into(const BoxRange& boxes, const PoleRange& poles, double ground_reflectivity,
                                    const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double max_range) {
  double best = max_range;
  double refl = 0.0;
  bool hit = false;
  if (dir.z() < -1e-9) {
    const double t = -origin.z() / dir.z();
    if (t > 0.0 && t < best) {
      best = t;
      const Eigen::Vector3d p = origin + t * dir;
      // faint tiling so the road is not featureless
      refl = ground_reflectivity + 8.0 * std::sin(0.7 * p.x()) * std::sin(0.9 * p.y());
      hit = true;
    }
  }
  double t = 0.0;
  for (const Box* b : boxes) {
    if (hit_box(*b, origin, dir, t) && t < best) {
      best = t;
      const double z = origin.z() + t * dir.z();
      refl = b->reflectivity + b->stripe * std::sin(2.0 * kPi * z / 3.1);
      hit = true;
    }
  }
  for (const Cylinder* c : poles) {
    if (hit_cylinder(*c, origin, dir, t) && t < best) {
      best = t;
      refl = c->reflectivity;
      hit = true;
    }
  }
  if (!hit) return {-1.0, 0.0};
  return {best, std::clamp(refl, 0.0, 255.0)};
}

}  // namespace

std::pair<double, double> SyntheticWorld::cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                               double max_range) const {
  std::vector<const Box*> b;
  std::vector<const Cylinder*> c;
  for (const Box& x : boxes) b.push_back(&x);
  for (const Cylinder& x : poles) c.push_back(&x);
  return cast_into(b, c, ground_reflectivity, origin, dir, max_range);
}

SyntheticWorld make_world(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0xB0));
  SyntheticWorld world;
  for (const Street& st : loop_streets(spec)) {
    for (int side : {1, -1}) {
      // The inner side stops short of the corners so opposite rows do not collide.
      double s = side > 0 ? 9.0 : -25.0;
      const double end = side > 0 ? st.length - 9.0 : st.length + 25.0;
      while (s < end) {
        const double front = rng.uniform(6.0, 18.0);
        const double depth = rng.uniform(6.0, side > 0 ? 10.0 : 18.0);
        const double height = rng.uniform(3.5, 22.0);
        const double setback = rng.uniform(8.0, 11.0);
        const double along = std::min(front, end - s);
        if (along > 2.0) {
          const Eigen::Vector2d c2 = st.start + st.dir * (s + along / 2.0) + st.inward * side * (setback + depth / 2.0);
          Box b;
          b.center = {c2.x(), c2.y(), height / 2.0};
          b.half = {along / 2.0, depth / 2.0, height / 2.0};
          b.yaw = std::atan2(st.dir.y(), st.dir.x());
          b.reflectivity = rng.uniform(30.0, 220.0);
          b.stripe = rng.uniform(0.0, 30.0);
          world.boxes.push_back(b);
        }
        s += along + rng.uniform(0.0, 7.0);
      }
      for (double p = rng.uniform(0.0, 10.0); p < st.length; p += rng.uniform(7.0, 22.0)) {
        const Eigen::Vector2d c2 = st.start + st.dir * p + st.inward * side * rng.uniform(6.0, 7.0);
        if (rng.uniform() < 0.3) {
          // kiosk, bench or hedge
          Box b;
          b.center = {c2.x(), c2.y(), 0.0};
          b.half = {rng.uniform(0.4, 2.0), rng.uniform(0.3, 1.0), rng.uniform(0.4, 1.3)};
          b.center.z() = b.half.z();
          b.yaw = std::atan2(st.dir.y(), st.dir.x()) + rng.uniform(-0.3, 0.3);
          b.reflectivity = rng.uniform(20.0, 250.0);
          world.boxes.push_back(b);
        } else {
          world.poles.push_back({c2, rng.uniform(0.1, 0.45), rng.uniform(3.0, 9.0), rng.uniform(120.0, 250.0)});
        }
      }
    }
  }
  return world;
}

SyntheticWorld SyntheticWorld::with_cars(std::uint64_t seed, const SyntheticSpec& spec) const {
  SyntheticWorld out = *this;
  Rng rng(mix_seed(seed, 0xCA));
  for (const Street& st : loop_streets(spec)) {
    for (int side : {1, -1}) {
      for (double s = rng.uniform(2.0, 8.0); s < st.length - 3.0; s += rng.uniform(5.5, 14.0)) {
        if (rng.uniform() < 0.5) continue;
        const Eigen::Vector2d c2 = st.start + st.dir * s + st.inward * side * 4.3;
        Box b;
        b.half = {2.2, 0.9, rng.uniform(0.65, 0.85)};
        b.center = {c2.x(), c2.y(), b.half.z() + 0.1};
        b.yaw = std::atan2(st.dir.y(), st.dir.x());
        b.reflectivity = rng.uniform(60.0, 230.0);
        out.boxes.push_back(b);
      }
    }
  }
  return out;
}

Scan render_scan(const SyntheticWorld& world, const RigidTransform& sensor_to_world, const SyntheticSpec& spec,
                 Rng& rng) {
  const RivConfig& cfg = spec.sensor;
  const Eigen::Vector3d origin = sensor_to_world.translation;
  const double reach = cfg.max_range;

  // Bucket objects by the sensor columns their footprint can cover. The rotation
  // is yaw-only for generated poses; anything else falls back to every column.
  const int w = cfg.width;
  const bool yaw_only = std::abs(sensor_to_world.rotation(2, 2) - 1.0) < 1e-12;
  const double yaw = std::atan2(sensor_to_world.rotation(1, 0), sensor_to_world.rotation(0, 0));
  std::vector<std::vector<const Box*>> col_boxes(w);
  std::vector<std::vector<const Cylinder*>> col_poles(w);
  auto bucket = [&](const Eigen::Vector2d& c, double radius, auto* obj, auto& table) {
    const Eigen::Vector2d rel = c - origin.head<2>();
    const double dist = rel.norm();
    if (dist - radius >= reach) return;
    if (!yaw_only || dist <= radius * 1.05 + 1e-9) {
      for (int u = 0; u < w; ++u) table[u].push_back(obj);
      return;
    }
    const double half = std::asin(std::min(1.0, radius / dist));
    const double centre = std::atan2(rel.y(), rel.x()) - yaw;
    const double uc = (1.0 - centre / kPi) * w / 2.0;
    const double span = half / kPi * w / 2.0 + 1.0;
    const int lo = static_cast<int>(std::floor(uc - span));
    const int hi = static_cast<int>(std::ceil(uc + span));
    if (hi - lo + 1 >= w) {
      for (int u = 0; u < w; ++u) table[u].push_back(obj);
      return;
    }
    for (int u = lo; u <= hi; ++u) table[((u % w) + w) % w].push_back(obj);
  };
  for (const Box& b : world.boxes) bucket(b.center.head<2>(), footprint_radius(b), &b, col_boxes);
  for (const Cylinder& c : world.poles) bucket(c.center, c.radius, &c, col_poles);

  Scan scan;
  scan.points.reserve(static_cast<std::size_t>(cfg.width) * cfg.height * 2);
  for (int v = 0; v < cfg.height; ++v) {
    const double el = (1.0 - (v + 0.5) / cfg.height) * cfg.fov_total - cfg.fov_up;
    for (int u = 0; u < cfg.width; ++u) {
      for (double frac : {0.25, 0.75}) {
        const double az = kPi * (1.0 - 2.0 * (u + frac) / cfg.width);
        const Eigen::Vector3d ds(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
        const auto [range, refl] = cast_into(col_boxes[u], col_poles[u], world.ground_reflectivity, origin,
                                             sensor_to_world.rotation * ds, reach);
        if (range < 0.0) continue;
        const double r = range + spec.range_noise * rng.normal();
        if (r <= 0.5 || r >= reach * 0.999) continue;
        const Eigen::Vector3d p = ds * r;
        scan.points.push_back({p.x(), p.y(), p.z(), std::clamp(refl + 3.0 * rng.normal(), 0.0, 255.0)});
      }
    }
  }
  return scan;
}

std::vector<SyntheticSession> make_sessions(const SyntheticSpec& spec) {
  const SyntheticWorld world = make_world(spec);
  const std::vector<Street> streets = loop_streets(spec);
  const double perimeter = 2.0 * (spec.block_x + spec.block_y);

  std::vector<SyntheticSession> sessions(spec.sessions);
  for (int k = 0; k < spec.sessions; ++k) {
    const SyntheticWorld scene = world.with_cars(mix_seed(spec.seed, 100 + k), spec);
    Rng rng(mix_seed(spec.seed, 200 + k));
    SyntheticSession& out = sessions[k];
    const double s0 = 1.3 * k;
    for (int i = 0; i < spec.scans_per_session; ++i) {
      const double s = std::fmod(s0 + i * spec.spacing, perimeter);
      double rem = s;
      std::size_t e = 0;
      while (e + 1 < streets.size() && rem >= streets[e].length) rem -= streets[e++].length;
      const Street& st = streets[e];
      Eigen::Vector2d xy = st.start + st.dir * rem;
      if (k > 0) xy += st.inward * spec.lateral_offset * std::sin(2.0 * kPi * s / 47.0 + k);
      const double yaw = std::atan2(st.dir.y(), st.dir.x()) + spec.yaw_noise * rng.normal();

      const RigidTransform truth = RigidTransform::from_yaw(yaw, {xy.x(), xy.y(), spec.sensor_height});
      const double t = 10000.0 * k + i * spec.dt;
      Scan scan = render_scan(scene, truth, spec, rng);
      scan.timestamp = t;
      scan.id = "s" + std::to_string(k) + "_" + std::string(i < 10 ? "000" : i < 100 ? "00" : i < 1000 ? "0" : "") +
                std::to_string(i);

      RigidTransform recorded = truth;
      recorded.translation.x() += spec.pose_noise * rng.normal();
      recorded.translation.y() += spec.pose_noise * rng.normal();
      out.scans.push_back(std::move(scan));
      out.true_poses.push_back(Pose::from_transform(truth, t));
      out.poses.push_back(Pose::from_transform(recorded, t));
    }
  }
  return sessions;
}

}  // namespace rivlpr
