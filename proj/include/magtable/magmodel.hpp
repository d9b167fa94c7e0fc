#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "magtable/errors.hpp"
#include "magtable/types.hpp"

namespace magtable {

/// Vacuum permeability, exactly 4π×10⁻⁷ T·m/A.
inline constexpr double kMu0 = 4e-7 * std::numbers::pi;

/// Evaluations closer than this to a source are rejected: the point-dipole
/// model is invalid inside the coil, so this is an error rather than an
/// extrapolation.
inline constexpr double kMinSourceDistance = 1e-3;  // m

namespace detail {
inline void throw_singularity(double distance, const std::string& where) {
  std::ostringstream msg;
  msg << "evaluation point within " << kMinSourceDistance
      << " m of a dipole source (distance " << distance << " m)" << where;
  throw SingularityError(msg.str());
}
}  // namespace detail

/// Flux density of a point dipole:
///   B(p) = μ0 / (4π‖r‖³) · (3 r̂ r̂ᵀ − I₃) · moment,  r = p − source_pos.
/// Accepts any Eigen 3-vector expressions with a common scalar type.
template <typename DerivedS, typename DerivedM, typename DerivedP>
Eigen::Matrix<typename DerivedS::Scalar, 3, 1> dipole_field(
    const Eigen::MatrixBase<DerivedS>& source_pos,
    const Eigen::MatrixBase<DerivedM>& moment,
    const Eigen::MatrixBase<DerivedP>& p) {
  using Scalar = typename DerivedS::Scalar;
  using V3 = Eigen::Matrix<Scalar, 3, 1>;
  const V3 r = p.derived() - source_pos.derived();
  const Scalar rn = r.norm();
  if (rn < Scalar(kMinSourceDistance)) detail::throw_singularity(rn, "");
  const V3 rh = r / rn;
  const Scalar k = Scalar(kMu0) / (Scalar(4) * Scalar(std::numbers::pi) * rn * rn * rn);
  return k * (Scalar(3) * rh * rh.dot(moment.derived()) - moment.derived());
}

/// Analytic spatial gradient of dipole_field, returned in the canonical
/// 5-component order. The underlying 3x3,
///   ∂B_i/∂r_j = 3μ0/(4π‖r‖⁵) [δ_ij(r·m) + r_i m_j + m_i r_j − 5 r_i r_j (r·m)/‖r‖²],
/// is symmetric and traceless, so five components carry everything.
template <typename DerivedS, typename DerivedM, typename DerivedP>
Eigen::Matrix<typename DerivedS::Scalar, 5, 1> dipole_gradient(
    const Eigen::MatrixBase<DerivedS>& source_pos,
    const Eigen::MatrixBase<DerivedM>& moment,
    const Eigen::MatrixBase<DerivedP>& p) {
  using Scalar = typename DerivedS::Scalar;
  using V3 = Eigen::Matrix<Scalar, 3, 1>;
  const V3 r = p.derived() - source_pos.derived();
  const V3 m = moment.derived();
  const Scalar rn = r.norm();
  if (rn < Scalar(kMinSourceDistance)) detail::throw_singularity(rn, "");
  const Scalar r2 = rn * rn;
  const Scalar k = Scalar(3) * Scalar(kMu0) /
                   (Scalar(4) * Scalar(std::numbers::pi) * r2 * r2 * rn);
  const Scalar rm = r.dot(m);
  auto entry = [&](int i, int j) {
    const Scalar delta = (i == j) ? Scalar(1) : Scalar(0);
    return k * (delta * rm + r(i) * m(j) + m(i) * r(j) -
                Scalar(5) * r(i) * r(j) * rm / r2);
  };
  Eigen::Matrix<Scalar, 5, 1> g;
  g << entry(0, 0), entry(0, 1), entry(0, 2), entry(1, 1), entry(1, 2);
  return g;
}

/// Per-coil unit-current field and gradient columns at a point: column j is
/// the response to unit normalized current in coil j (moment =
/// moment_per_amp · axis). Superposition makes these the building blocks of
/// every array-level field computation.
struct UnitFieldMaps {
  Eigen::Matrix<double, 3, Eigen::Dynamic> b_cols;  ///< T per unit current
  Eigen::Matrix<double, 5, Eigen::Dynamic> g_cols;  ///< T/m per unit current
};

inline UnitFieldMaps unit_field_maps(const CoilArray& array, const Vec3& p) {
  const int n = array.size();
  UnitFieldMaps maps;
  maps.b_cols.resize(3, n);
  maps.g_cols.resize(5, n);
  for (int j = 0; j < n; ++j) {
    const Coil& coil = array.coils[j];
    const Vec3 moment = coil.moment_per_amp * coil.axis;
    try {
      maps.b_cols.col(j) = dipole_field(coil.centroid, moment, p);
      maps.g_cols.col(j) = dipole_gradient(coil.centroid, moment, p);
    } catch (const SingularityError& e) {
      throw SingularityError(std::string(e.what()) + " (coil " +
                             std::to_string(j) + ")");
    }
  }
  return maps;
}

/// Superposed field state of the whole array for a given current vector.
inline FieldState array_field(const CoilArray& array,
                              const Eigen::VectorXd& currents, const Vec3& p) {
  if (currents.size() != array.size()) {
    throw std::invalid_argument("current vector length " +
                                std::to_string(currents.size()) +
                                " does not match coil count " +
                                std::to_string(array.size()));
  }
  const UnitFieldMaps maps = unit_field_maps(array, p);
  FieldState state;
  state.b = maps.b_cols * currents;
  state.g = maps.g_cols * currents;
  return state;
}

/// Force on a dipole tool in a current-free region: f = ∇(B·m) = G·m with G
/// the reconstructed 3x3 gradient. Exactly zero in a uniform field.
inline Vec3 force_on_dipole(const DipoleTool& tool, const FieldState& field) {
  return gradient_matrix(field.g) * tool.moment;
}

/// Torque on a dipole tool: τ = m × B.
inline Vec3 torque_on_dipole(const DipoleTool& tool, const FieldState& field) {
  return tool.moment.cross(field.b);
}

/// Grip force of the two-finger tool: the x-force plus the y-torque acting
/// through the finger beam length r_grip (default 10 mm).
inline double grip_force(double f_x, double tau_y, double r_grip = 0.010) {
  if (!(r_grip > 0)) {
    throw std::invalid_argument("grip_force: r_grip must be positive");
  }
  return f_x + tau_y / r_grip;
}

}  // namespace magtable
