#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace magtable {

using Vec3 = Eigen::Vector3d;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat3 = Eigen::Matrix3d;

/// Physical envelope of one electromagnet, modeled as a finite cylinder.
/// Defaults describe the system's standard coil: 45 mm core radius, 22.5 mm
/// winding build-up, 360 mm length (aspect ratio length/core_radius = 8).
struct CoilGeometry {
  double core_radius = 0.045;        ///< m
  double winding_thickness = 0.0225; ///< m, radial build-up of the windings
  double length = 0.360;             ///< m

  double outer_radius() const { return core_radius + winding_thickness; }
  double core_diameter() const { return 2.0 * core_radius; }
  double outer_diameter() const { return 2.0 * outer_radius(); }
  double aspect_ratio() const { return length / core_radius; }
};

/// One electromagnet: a finite cylinder plus a point dipole at its centroid.
/// `moment_per_amp` is the dipole moment produced at unit normalized current
/// (normalized current 1.0 = the coil's maximum operating current). The
/// default is back-solved so the on-axis field 0.300 m from the centroid is
/// 63.8 mT.
struct Coil {
  Vec3 centroid = Vec3::Zero();      ///< m
  Vec3 axis = Vec3::UnitZ();         ///< unit vector
  double moment_per_amp = 8613.0;    ///< A·m² per unit normalized current
  CoilGeometry geometry{};
};

/// Ordered set of coils sharing one workspace frame. Coil index j maps to
/// control-matrix column j; the ordering is part of the contract.
struct CoilArray {
  std::vector<Coil> coils;
  double current_limit = 1.0;             ///< normalized units
  std::optional<double> amps_per_unit{};  ///< A per unit normalized current

  int size() const { return static_cast<int>(coils.size()); }
};

/// Magnetic flux density plus the five independent spatial-gradient
/// components at a point. Gradient storage order is fixed as
/// [dBx/dx, dBx/dy, dBx/dz, dBy/dy, dBy/dz]; the remaining four entries of
/// the 3x3 gradient follow from symmetry and zero trace.
struct FieldState {
  Vec3 b = Vec3::Zero();  ///< T
  Vec5 g = Vec5::Zero();  ///< T/m
};

/// Reconstruct the full 3x3 gradient matrix from the canonical 5-vector.
/// The result is symmetric and traceless by construction.
inline Mat3 gradient_matrix(const Vec5& g) {
  Mat3 m;
  m << g(0), g(1), g(2),
       g(1), g(3), g(4),
       g(2), g(4), -g(0) - g(3);
  return m;
}

/// Extract the canonical 5-vector from a (symmetric traceless) 3x3 gradient.
inline Vec5 gradient_vector(const Mat3& m) {
  Vec5 g;
  g << m(0, 0), m(0, 1), m(0, 2), m(1, 1), m(1, 2);
  return g;
}

/// A small permanent-magnet tool embedded in the workspace.
struct DipoleTool {
  Vec3 position = Vec3::Zero();  ///< m
  Vec3 moment = Vec3::Zero();    ///< A·m²; zero moment is allowed
};

}  // namespace magtable
