#include "magtable/allocator.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "magtable/errors.hpp"
#include "magtable/linalg.hpp"
#include "magtable/magmodel.hpp"

namespace magtable {

namespace {

const char* kRowNames[8] = {"Bx",     "By",     "Bz",     "dBx/dx",
                            "dBx/dy", "dBx/dz", "dBy/dy", "dBy/dz"};

/// Human-readable label for the output direction a singular matrix cannot
/// reach: the dominant components of the given left singular vector.
std::string describe_direction(const Eigen::VectorXd& u,
                               const char* const* names) {
  std::ostringstream os;
  os.precision(3);
  Eigen::Index dominant = 0;
  u.cwiseAbs().maxCoeff(&dominant);
  os << names[dominant] << " (direction";
  for (Eigen::Index k = 0; k < u.size(); ++k) os << ' ' << u(k);
  os << ")";
  return os.str();
}

AllocationResult finish(const ControlMatrix& cm, const Eigen::VectorXd& currents,
                        const Eigen::MatrixXd& constrained_rows,
                        const Eigen::VectorXd& rhs, double current_limit) {
  AllocationResult out;
  out.currents = currents;
  out.achieved.b = cm.rows_field * currents;
  out.achieved.g = cm.rows_gradient * currents;
  const double rhs_norm = rhs.norm();
  out.residual = rhs_norm > 0.0
                     ? (constrained_rows * currents - rhs).norm() / rhs_norm
                     : (constrained_rows * currents).norm();
  out.saturated = currents.size() > 0 &&
                  currents.cwiseAbs().maxCoeff() > current_limit * (1.0 + 1e-12);
  return out;
}

}  // namespace

ControlMatrix build_control_matrix(const CoilArray& array, const Vec3& p) {
  const UnitFieldMaps maps = unit_field_maps(array, p);
  ControlMatrix cm;
  cm.at = p;
  cm.rows_field = maps.b_cols;
  cm.rows_gradient = maps.g_cols;
  cm.source = MatrixSource::DipoleModel;
  return cm;
}

AllocationResult allocate_uniform(const ControlMatrix& cm, const Vec3& b_des,
                                  double current_limit) {
  const int n = cm.cols();
  if (n == 0) throw RankDeficiencyError("control matrix has no coils");
  const Eigen::MatrixXd u = cm.stacked();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(8);
  rhs.head<3>() = b_des;

  Eigen::VectorXd currents;
  bool fallback = false;
  if (n == 8) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        u, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    if (sv(sv.size() - 1) <= kSingularValueCutoff * sv(0)) {
      throw RankDeficiencyError(
          "uniform allocation: current-to-field stack is singular, cannot "
          "reach " +
          describe_direction(svd.matrixU().col(sv.size() - 1), kRowNames));
    }
    currents = svd.solve(rhs);
  } else {
    currents = pseudo_inverse(u) * rhs;
    fallback = true;
  }

  AllocationResult out = finish(cm, currents, u, rhs, current_limit);
  out.pinv_fallback = fallback;
  return out;
}

AllocationResult allocate_nonuniform(const ControlMatrix& cm, const Vec3& b_des,
                                     double current_limit) {
  if (cm.cols() == 0) throw RankDeficiencyError("control matrix has no coils");
  const Eigen::MatrixXd field_rows = cm.rows_field;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      field_rows, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const char* axes[3] = {"Bx", "By", "Bz"};
  if (sv.size() < 3 || sv(sv.size() - 1) <= kSingularValueCutoff * sv(0)) {
    throw RankDeficiencyError(
        "non-uniform allocation: field rows are rank-deficient, cannot reach " +
        describe_direction(svd.matrixU().col(sv.size() - 1), axes));
  }
  const Eigen::VectorXd currents = pseudo_inverse(field_rows) * b_des;
  return finish(cm, currents, field_rows, b_des, current_limit);
}

double max_field(const ControlMatrix& cm, const Vec3& direction,
                 AllocationMode mode, double current_limit) {
  const double norm = direction.norm();
  if (norm <= 0.0)
    throw std::invalid_argument("max_field: direction must be nonzero");
  const Vec3 unit = direction / norm;
  const AllocationResult res = mode == AllocationMode::Uniform
                                   ? allocate_uniform(cm, unit, current_limit)
                                   : allocate_nonuniform(cm, unit, current_limit);
  const double peak = res.currents.cwiseAbs().maxCoeff();
  if (!(peak > 0.0)) {
    throw Error("max_field: unit-field allocation produced zero currents");
  }
  return current_limit / peak;
}

ConditioningReport conditioning(const ControlMatrix& cm, ConditioningRows rows) {
  const Eigen::MatrixXd block = rows == ConditioningRows::FieldOnly
                                    ? Eigen::MatrixXd(cm.rows_field)
                                    : cm.stacked();
  if (block.size() == 0 || block.isZero(0.0)) {
    throw Error("conditioning: matrix is empty or zero");
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(block);
  ConditioningReport report;
  report.singular_values = svd.singularValues();
  report.sigma_max = report.singular_values(0);
  report.sigma_min = report.singular_values(report.singular_values.size() - 1);
  report.condition_number =
      report.sigma_min > 0.0
          ? report.sigma_max / report.sigma_min
          : std::numeric_limits<double>::infinity();
  return report;
}

double fit_amps_per_unit(const ControlMatrix& amps_matrix, const Vec3& direction,
                         double achievable_field, AllocationMode mode,
                         double current_limit) {
  if (!(achievable_field > 0.0)) {
    throw std::invalid_argument(
        "fit_amps_per_unit: achievable field must be positive");
  }
  const double norm = direction.norm();
  if (norm <= 0.0)
    throw std::invalid_argument(
        "fit_amps_per_unit: direction must be nonzero");
  const Vec3 b_des = direction / norm * achievable_field;
  const AllocationResult res =
      mode == AllocationMode::Uniform
          ? allocate_uniform(amps_matrix, b_des, current_limit)
          : allocate_nonuniform(amps_matrix, b_des, current_limit);
  const double peak_amps = res.currents.cwiseAbs().maxCoeff();
  if (!(peak_amps > 0.0)) {
    throw Error("fit_amps_per_unit: allocation produced zero currents");
  }
  return peak_amps / current_limit;
}

}  // namespace magtable
