#include "magtable/geomkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "magtable/errors.hpp"
#include "magtable/parallel.hpp"

namespace magtable {

namespace {

constexpr double kParallelEps = 1e-14;

struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool empty() const { return lo > hi; }
};

Interval intersect(const Interval& a, const Interval& b) {
  return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
}

bool hits_cylinder(const CylinderObstruction& cyl, const Vec3& origin,
                   const Vec3& dir) {
  const Vec3 rel = origin - cyl.centroid;
  const double half = 0.5 * cyl.length;

  // Parameter interval where the ray satisfies the axial bound.
  const double s0 = rel.dot(cyl.axis);
  const double sv = dir.dot(cyl.axis);
  Interval axial;
  if (std::abs(sv) < kParallelEps) {
    if (std::abs(s0) > half) return false;
  } else {
    const double t1 = (-half - s0) / sv;
    const double t2 = (half - s0) / sv;
    axial = {std::min(t1, t2), std::max(t1, t2)};
  }

  // Parameter interval where the ray is inside the infinite barrel.
  const Vec3 w = rel - s0 * cyl.axis;
  const Vec3 v = dir - sv * cyl.axis;
  const double a = v.squaredNorm();
  const double c = w.squaredNorm() - cyl.outer_radius * cyl.outer_radius;
  Interval radial;
  if (a < kParallelEps * kParallelEps) {
    if (c > 0.0) return false;
  } else {
    const double b = w.dot(v);
    const double disc = b * b - a * c;
    if (disc < 0.0) return false;
    const double root = std::sqrt(disc);
    radial = {(-b - root) / a, (-b + root) / a};
  }

  const Interval inside = intersect(axial, radial);
  if (inside.empty()) return false;
  return inside.hi > 0.0;  // some part of the overlap lies at t > 0
}

bool hits_slab(const SlabObstruction& slab, const Vec3& origin,
               const Vec3& dir) {
  const double dz = dir.z();
  if (std::abs(dz) < kParallelEps) return false;  // in-plane rays never cross
  const double t = (slab.z_level - origin.z()) / dz;
  if (t <= 0.0) return false;
  if (!slab.hole_radius) return true;
  const Vec3 crossing = origin + t * dir;
  return std::hypot(crossing.x(), crossing.y()) >= *slab.hole_radius;
}

}  // namespace

bool ray_hits(const Obstruction& obstruction, const Vec3& origin,
              const Vec3& dir) {
  return std::visit(
      [&](const auto& shape) {
        using T = std::decay_t<decltype(shape)>;
        if constexpr (std::is_same_v<T, CylinderObstruction>) {
          return hits_cylinder(shape, origin, dir);
        } else {
          return hits_slab(shape, origin, dir);
        }
      },
      obstruction);
}

AccessibilityReport accessibility(const std::vector<Obstruction>& obstructions,
                                  const Vec3& origin, int resolution) {
  if (resolution < 1000) {
    throw Error("accessibility: resolution must be at least 1000 samples");
  }
  const int n = resolution;
  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));

  Eigen::Matrix3Xd dirs(3, n);
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double az = golden_angle * i;
    dirs.col(i) = Vec3(r * std::cos(az), r * std::sin(az), z);
  }

  std::vector<char> occluded(n, 0);
  parallel_for(n, [&](int i) {
    const Vec3 d = dirs.col(i);
    for (const Obstruction& obstruction : obstructions) {
      if (ray_hits(obstruction, origin, d)) {
        occluded[i] = 1;
        break;
      }
    }
  });

  std::vector<int> free_idx;
  std::vector<int> occ_idx;
  free_idx.reserve(n);
  for (int i = 0; i < n; ++i) (occluded[i] ? occ_idx : free_idx).push_back(i);

  AccessibilityReport report;
  report.resolution = n;
  if (occ_idx.empty()) {
    report.apex_angle_deg = 360.0;
    report.axis = Vec3::UnitZ();
    return report;
  }
  if (free_idx.empty()) {
    report.apex_angle_deg = 0.0;
    report.axis = Vec3::UnitZ();
    return report;
  }

  Eigen::Matrix3Xd occ(3, static_cast<Eigen::Index>(occ_idx.size()));
  for (std::size_t j = 0; j < occ_idx.size(); ++j) {
    occ.col(static_cast<Eigen::Index>(j)) = dirs.col(occ_idx[j]);
  }

  // For each free direction, the cosine of its angular distance to the
  // occluded set; the cone axis is the free direction farthest from it.
  const int n_free = static_cast<int>(free_idx.size());
  std::vector<double> nearest_cos(free_idx.size());
  const Eigen::Index m = occ.cols();
  parallel_for(n_free, [&](int f) {
    const Vec3 d = dirs.col(free_idx[static_cast<std::size_t>(f)]);
    const double* p = occ.data();
    double best = -1.0;
    for (Eigen::Index j = 0; j < m; ++j, p += 3) {
      const double dot = p[0] * d.x() + p[1] * d.y() + p[2] * d.z();
      best = std::max(best, dot);
    }
    nearest_cos[static_cast<std::size_t>(f)] = best;
  });

  int best_free = 0;
  for (int f = 1; f < n_free; ++f) {
    if (nearest_cos[static_cast<std::size_t>(f)] <
        nearest_cos[static_cast<std::size_t>(best_free)]) {
      best_free = f;
    }
  }

  const double cos_radius =
      std::clamp(nearest_cos[static_cast<std::size_t>(best_free)], -1.0, 1.0);
  report.apex_angle_deg = 2.0 * std::acos(cos_radius) * 180.0 / std::numbers::pi;
  report.axis = dirs.col(free_idx[static_cast<std::size_t>(best_free)]);
  return report;
}

std::vector<Obstruction> coil_obstructions(const CoilArray& array) {
  std::vector<Obstruction> out;
  out.reserve(array.coils.size());
  for (const Coil& coil : array.coils) {
    CylinderObstruction cyl;
    cyl.centroid = coil.centroid;
    cyl.axis = coil.axis;
    cyl.outer_radius = coil.geometry.outer_radius();
    cyl.length = coil.geometry.length;
    out.push_back(cyl);
  }
  return out;
}

}  // namespace magtable
