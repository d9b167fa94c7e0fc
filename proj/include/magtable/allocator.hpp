#pragma once

#include <Eigen/Dense>

#include "magtable/types.hpp"

namespace magtable {

enum class MatrixSource { DipoleModel, Calibrated };
enum class AllocationMode { Uniform, NonUniform };
enum class ConditioningRows { FieldOnly, Full };

/// Linear map from the n coil currents to the eight field degrees of freedom
/// [B; G] at one point. Column j belongs to coil j of the originating array.
struct ControlMatrix {
  Vec3 at = Vec3::Zero();                                ///< m
  Eigen::Matrix<double, 3, Eigen::Dynamic> rows_field;   ///< T per unit current
  Eigen::Matrix<double, 5, Eigen::Dynamic> rows_gradient;///< T/m per unit current
  MatrixSource source = MatrixSource::DipoleModel;

  int cols() const { return static_cast<int>(rows_field.cols()); }

  /// The full 8 x n stack [rows_field; rows_gradient].
  Eigen::MatrixXd stacked() const {
    Eigen::MatrixXd u(8, cols());
    u.topRows<3>() = rows_field;
    u.bottomRows<5>() = rows_gradient;
    return u;
  }
};

struct AllocationResult {
  Eigen::VectorXd currents;   ///< normalized units
  FieldState achieved;
  double residual = 0.0;      ///< relative, on the constrained rows
  bool saturated = false;     ///< max|currents| exceeds the current limit
  bool pinv_fallback = false; ///< uniform solve fell back to the pseudoinverse (n != 8)
};

struct ConditioningReport {
  Eigen::VectorXd singular_values;  ///< sorted descending
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  double condition_number = 0.0;
};

/// Dipole-model control matrix of an array at a point.
ControlMatrix build_control_matrix(const CoilArray& array, const Vec3& p);

/// Uniform control methodology: currents realizing b_des with all five
/// gradient components forced to zero, I = U^-1 [b_des; 0]. With n != 8 the
/// solve falls back to the pseudoinverse of the full stack and sets
/// pinv_fallback. Throws RankDeficiencyError when the 8x8 stack is
/// numerically singular, naming the deficient direction.
AllocationResult allocate_uniform(const ControlMatrix& cm, const Vec3& b_des,
                                  double current_limit = 1.0);

/// Non-uniform control methodology: minimum-norm currents realizing only the
/// field rows, I = B^+ b_des; the resulting gradient is reported, not
/// constrained. Throws RankDeficiencyError when the field rows have rank < 3.
AllocationResult allocate_nonuniform(const ControlMatrix& cm, const Vec3& b_des,
                                     double current_limit = 1.0);

/// Largest field magnitude achievable along `direction` before the first
/// coil saturates its normalized limit: current_limit / max|I_j| for the
/// unit-field allocation in the given mode.
double max_field(const ControlMatrix& cm, const Vec3& direction,
                 AllocationMode mode, double current_limit = 1.0);

/// Singular values and condition number of the field rows (or of the full
/// stack). sigma lists are sorted descending; condition_number is the
/// largest-to-smallest ratio, the isotropy measure of field generation.
ConditioningReport conditioning(const ControlMatrix& cm, ConditioningRows rows);

/// Fit the ampere value of one normalized current unit from a known
/// achievable field: solve the allocation for `achievable_field` along
/// `direction` on a matrix whose columns are in T per ampere, and read the
/// limiting coil's current as current_limit units. Used to anchor calibrated
/// fixtures whose normalization is not stated.
double fit_amps_per_unit(const ControlMatrix& amps_matrix, const Vec3& direction,
                         double achievable_field, AllocationMode mode = AllocationMode::Uniform,
                         double current_limit = 1.0);

}  // namespace magtable
