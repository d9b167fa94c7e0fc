#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "magtable/types.hpp"

namespace magtable {

/// Solid finite cylinder (barrel plus end caps) blocking line of sight.
struct CylinderObstruction {
  Vec3 centroid = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();   ///< unit norm
  double outer_radius = 0.0675;  ///< m
  double length = 0.360;         ///< m
};

/// Horizontal plane at a fixed z, optionally pierced by a circular hole
/// centered on the z axis. Rays pass freely through the hole; crossings
/// outside it are blocked.
struct SlabObstruction {
  double z_level = 0.0;                 ///< m
  std::optional<double> hole_radius;    ///< m, absent = solid plane
};

using Obstruction = std::variant<CylinderObstruction, SlabObstruction>;

/// True iff the open ray {origin + t*dir, t > 0} intersects the obstruction.
/// dir must be unit norm.
bool ray_hits(const Obstruction& obstruction, const Vec3& origin,
              const Vec3& dir);

struct AccessibilityReport {
  double apex_angle_deg = 360.0;  ///< apex angle of the largest free cone
  Vec3 axis = Vec3::UnitZ();      ///< cone axis (unit norm)
  int resolution = 0;             ///< direction samples used
};

/// Apex angle of the largest obstruction-free cone from `origin`: sample
/// `resolution` directions on a Fibonacci sphere lattice, flag each occluded
/// via ray_hits against every obstruction, then maximize over free sample
/// directions the minimum angular distance to the occluded set; the apex
/// angle is twice that maximum. 360 degrees when nothing is occluded, 0 when
/// everything is. Requires resolution >= 1000. Deterministic regardless of
/// thread count.
AccessibilityReport accessibility(const std::vector<Obstruction>& obstructions,
                                  const Vec3& origin, int resolution = 100000);

/// Every coil of the array as a solid cylinder of its outer (core plus
/// winding) radius.
std::vector<Obstruction> coil_obstructions(const CoilArray& array);

}  // namespace magtable
