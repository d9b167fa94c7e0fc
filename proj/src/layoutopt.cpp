#include "magtable/layoutopt.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "magtable/errors.hpp"
#include "magtable/linalg.hpp"
#include "magtable/magmodel.hpp"
#include "magtable/parallel.hpp"

namespace magtable {

namespace {

/// Projection trigger slack so layouts whose tops touch the table plane
/// exactly (up to rounding) are left in place.
constexpr double kPlaneTolerance = 1e-12;

/// Shift applied by project_feasible: tops land this far below the plane.
constexpr double kProjectionClearance = 0.001;

constexpr int kMaxHalvings = 60;

std::string parameter_name(int k, int n) {
  static const char* kGroups[5] = {"x", "y", "z", "beta", "gamma"};
  std::ostringstream os;
  os << kGroups[k / n] << "[" << k % n << "]";
  return os.str();
}

double point_segment_distance(const Vec3& p, const Vec3& center,
                              const Vec3& axis, double length) {
  const double t =
      std::clamp((p - center).dot(axis), -0.5 * length, 0.5 * length);
  return (p - (center + t * axis)).norm();
}

/// One full stacked evaluation plus the feasibility summaries the descent
/// trace reports.
struct Evaluation {
  AssociatedVector av;
  Eigen::VectorXd stack;
  double max_top = 0.0;
  double min_gap = 0.0;
};

Evaluation evaluate(const LayoutParams& params, const CoilModel& model,
                    const OptimizerConfig& config, const Vec3& eval_point) {
  const int n = params.coil_count();
  const double l = model.geometry.length;
  const double d = model.geometry.core_diameter();

  Evaluation out;

  // Height barriers (throws first on a top at or above the origin plane).
  out.av.h_funcs.resize(n);
  out.max_top = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double h = coil_top_height(params.z(i), params.gamma(i), l, d);
    out.max_top = std::max(out.max_top, h);
    if (h >= 0.0) {
      std::ostringstream os;
      os << "coil " << i << " top height " << h
         << " m is at or above the workspace origin plane";
      throw BarrierViolationError(os.str());
    }
    out.av.h_funcs(i) = -std::log(-h / config.z0);
  }

  // Proximity penalties over unordered pairs, lexicographic in (i, j).
  out.av.p_funcs.resize(n * (n - 1) / 2);
  out.min_gap = std::numeric_limits<double>::infinity();
  int pair = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j, ++pair) {
      const double dist =
          segment_min_distance(params.position(i), params.axis(i), l,
                               params.position(j), params.axis(j), l);
      out.min_gap = std::min(out.min_gap, dist - d);
      if (dist <= d) {
        std::ostringstream os;
        os << "coils " << i << " and " << j << " axis distance " << dist
           << " m does not clear the core diameter " << d << " m";
        throw CollisionError(os.str());
      }
      out.av.p_funcs(pair) = config.sigma_prox / (dist - d);
    }
  }

  out.av.m_funcs = m_funcs(params, model, config, eval_point);

  out.stack = out.av.stacked();
  out.av.objective = 0.5 * out.stack.squaredNorm();
  return out;
}

/// Forward-difference Jacobian reusing an already-computed base evaluation.
Eigen::MatrixXd jacobian_from_base(const LayoutParams& params,
                                   const Evaluation& base,
                                   const CoilModel& model,
                                   const OptimizerConfig& config,
                                   const Vec3& eval_point) {
  const int n_params = static_cast<int>(params.packed.size());
  const Eigen::Index n_rows = base.stack.size();
  Eigen::MatrixXd jac(n_rows, n_params);
  std::vector<std::exception_ptr> failures(n_params);

  parallel_for(n_params, [&](int k) {
    try {
      LayoutParams perturbed = params;
      perturbed.packed(k) += config.fd_step;
      const Evaluation e = evaluate(perturbed, model, config, eval_point);
      jac.col(k) = (e.stack - base.stack) / config.fd_step;
    } catch (...) {
      failures[k] = std::current_exception();
      jac.col(k).setZero();
    }
  });

  for (int k = 0; k < n_params; ++k) {
    if (!failures[k]) continue;
    try {
      std::rethrow_exception(failures[k]);
    } catch (const std::exception& e) {
      throw Error("jacobian: evaluation failed at perturbed parameter " +
                  parameter_name(k, params.coil_count()) + ": " + e.what());
    }
  }
  return jac;
}

}  // namespace

Vec3 axis_from_angles(double beta, double gamma) {
  return Vec3(std::sin(gamma) * std::cos(beta),
              std::sin(gamma) * std::sin(beta), std::cos(gamma));
}

std::pair<double, double> angles_from_axis(const Vec3& axis) {
  const Vec3 unit = axis.normalized();
  const double gamma = std::acos(std::clamp(unit.z(), -1.0, 1.0));
  const double planar = std::hypot(unit.x(), unit.y());
  const double beta = planar < 1e-12 ? 0.0 : std::atan2(unit.y(), unit.x());
  return {beta, gamma};
}

LayoutParams::LayoutParams(Eigen::VectorXd values) : packed(std::move(values)) {
  if (packed.size() % 5 != 0) {
    throw Error("layout parameter vector length must be a multiple of 5");
  }
}

LayoutParams LayoutParams::zeros(int coil_count) {
  return LayoutParams(Eigen::VectorXd::Zero(5 * coil_count));
}

void LayoutParams::set_position(int i, const Vec3& p) {
  const int n = coil_count();
  packed(i) = p.x();
  packed(n + i) = p.y();
  packed(2 * n + i) = p.z();
}

void LayoutParams::set_angles(int i, double beta, double gamma) {
  const int n = coil_count();
  packed(3 * n + i) = beta;
  packed(4 * n + i) = gamma;
}

Eigen::VectorXd AssociatedVector::stacked() const {
  Eigen::VectorXd out(3 + h_funcs.size() + p_funcs.size());
  out.head<3>() = m_funcs;
  out.segment(3, h_funcs.size()) = h_funcs;
  out.tail(p_funcs.size()) = p_funcs;
  return out;
}

Eigen::Vector3d m_funcs(const LayoutParams& params, const CoilModel& model,
                        const OptimizerConfig& config, const Vec3& eval_point) {
  const int n = params.coil_count();
  Eigen::Matrix<double, 3, Eigen::Dynamic> field(3, n);
  for (int i = 0; i < n; ++i) {
    field.col(i) = dipole_field(params.position(i),
                                model.moment_per_amp * params.axis(i),
                                eval_point);
  }
  if (numerical_rank(field) < 3) {
    throw RankDeficiencyError(
        "field-effort terms: unit-current field matrix has rank < 3 at the "
        "evaluation point");
  }
  const Eigen::MatrixXd pinv = pseudo_inverse(field);  // n x 3
  Eigen::Vector3d out;
  for (int k = 0; k < 3; ++k) {
    out(k) = config.eps_field * pinv.col(k).cwiseAbs().maxCoeff();
  }
  return out;
}

double coil_top_height(double z, double gamma, double l, double d) {
  return z + 0.5 * std::sqrt(l * l + d * d) *
                 std::sin(std::numbers::pi / 2 - (gamma - std::atan(d / l)));
}

Eigen::VectorXd h_funcs(const LayoutParams& params, const CoilModel& model,
                        const OptimizerConfig& config) {
  const int n = params.coil_count();
  const double l = model.geometry.length;
  const double d = model.geometry.core_diameter();
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    const double h = coil_top_height(params.z(i), params.gamma(i), l, d);
    if (h >= 0.0) {
      std::ostringstream os;
      os << "coil " << i << " top height " << h
         << " m is at or above the workspace origin plane";
      throw BarrierViolationError(os.str());
    }
    out(i) = -std::log(-h / config.z0);
  }
  return out;
}

double segment_min_distance(const Vec3& center_a, const Vec3& axis_a,
                            double length_a, const Vec3& center_b,
                            const Vec3& axis_b, double length_b) {
  const Vec3 cross = axis_a.cross(axis_b);
  const double cross_norm = cross.norm();
  if (cross_norm > 1e-12) {
    // Common normal between the infinite lines; feet measured from centers.
    const Vec3 w = center_b - center_a;
    const double inv = 1.0 / (cross_norm * cross_norm);
    const double t = w.cross(axis_b).dot(cross) * inv;
    const double s = w.cross(axis_a).dot(cross) * inv;
    if (std::abs(t) <= 0.5 * length_a && std::abs(s) <= 0.5 * length_b) {
      return std::abs(w.dot(cross)) / cross_norm;
    }
  }
  // Parallel segments, or the common normal lands outside a segment: the
  // minimum is attained at an endpoint against the other segment.
  const Vec3 ends_a[2] = {center_a - 0.5 * length_a * axis_a,
                          center_a + 0.5 * length_a * axis_a};
  const Vec3 ends_b[2] = {center_b - 0.5 * length_b * axis_b,
                          center_b + 0.5 * length_b * axis_b};
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& e : ends_a) {
    best = std::min(best, point_segment_distance(e, center_b, axis_b, length_b));
  }
  for (const Vec3& e : ends_b) {
    best = std::min(best, point_segment_distance(e, center_a, axis_a, length_a));
  }
  return best;
}

double cylinder_min_distance(const Coil& a, const Coil& b) {
  return segment_min_distance(a.centroid, a.axis, a.geometry.length, b.centroid,
                              b.axis, b.geometry.length);
}

Eigen::VectorXd p_funcs(const LayoutParams& params, const CoilModel& model,
                        const OptimizerConfig& config) {
  const int n = params.coil_count();
  const double l = model.geometry.length;
  const double d = model.geometry.core_diameter();
  Eigen::VectorXd out(n * (n - 1) / 2);
  int pair = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j, ++pair) {
      const double dist =
          segment_min_distance(params.position(i), params.axis(i), l,
                               params.position(j), params.axis(j), l);
      if (dist <= d) {
        std::ostringstream os;
        os << "coils " << i << " and " << j << " axis distance " << dist
           << " m does not clear the core diameter " << d << " m";
        throw CollisionError(os.str());
      }
      out(pair) = config.sigma_prox / (dist - d);
    }
  }
  return out;
}

AssociatedVector objective(const LayoutParams& params, const CoilModel& model,
                           const OptimizerConfig& config,
                           const Vec3& eval_point) {
  return evaluate(params, model, config, eval_point).av;
}

Eigen::MatrixXd numerical_jacobian(const LayoutParams& params,
                                   const CoilModel& model,
                                   const OptimizerConfig& config,
                                   const Vec3& eval_point) {
  const Evaluation base = evaluate(params, model, config, eval_point);
  return jacobian_from_base(params, base, model, config, eval_point);
}

DescentResult descend(const LayoutParams& initial, const CoilModel& model,
                      const OptimizerConfig& config, const Vec3& eval_point) {
  Evaluation current = evaluate(initial, model, config, eval_point);
  LayoutParams x = initial;

  DescentResult out;
  out.trace.push_back(
      {0, current.av.objective, 0.0, current.max_top, current.min_gap});

  for (int iter = 1; iter <= config.max_iters; ++iter) {
    const Eigen::MatrixXd jac =
        jacobian_from_base(x, current, model, config, eval_point);
    const Eigen::VectorXd grad = jac.transpose() * current.stack;

    double eta = config.step;
    bool accepted = false;
    LayoutParams candidate;
    Evaluation next;
    for (int attempt = 0; attempt <= kMaxHalvings; ++attempt) {
      LayoutParams trial(Eigen::VectorXd(x.packed - eta * grad));
      bool feasible = true;
      Evaluation trial_eval;
      try {
        trial_eval = evaluate(trial, model, config, eval_point);
      } catch (const BarrierViolationError&) {
        feasible = false;
      } catch (const CollisionError&) {
        feasible = false;
      }
      if (feasible && trial_eval.av.objective <= current.av.objective) {
        candidate = std::move(trial);
        next = std::move(trial_eval);
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) {
      std::ostringstream os;
      os << "no feasible step found after " << kMaxHalvings
         << " halvings (iteration " << iter << ")";
      throw Error(os.str());
    }

    if (std::abs(current.av.objective - next.av.objective) < config.stop_tol) {
      out.converged = true;
      break;  // stop without committing the candidate
    }

    x = std::move(candidate);
    current = std::move(next);
    out.trace.push_back(
        {iter, current.av.objective, eta, current.max_top, current.min_gap});
  }

  out.final_params = std::move(x);
  return out;
}

LayoutParams project_feasible(const LayoutParams& params, const CoilModel& model,
                              const OptimizerConfig& config) {
  const double l = model.geometry.length;
  const double d = model.geometry.core_diameter();
  LayoutParams out = params;
  for (int i = 0; i < params.coil_count(); ++i) {
    const double h = coil_top_height(params.z(i), params.gamma(i), l, d);
    if (h > config.table_plane_z + kPlaneTolerance) {
      const double target = config.table_plane_z - kProjectionClearance;
      out.set_z(i, params.z(i) - (h - target));
    }
  }
  return out;
}

LayoutParams random_layout(std::uint64_t seed, int coil_count,
                           const CoilModel& model,
                           const OptimizerConfig& config) {
  if (coil_count < 1) throw Error("random_layout: coil count must be positive");
  std::mt19937_64 rng(seed);
  const auto u01 = [&rng] { return (rng() >> 11) * 0x1.0p-53; };
  const auto draw = [&u01](double lo, double hi) {
    return lo + (hi - lo) * u01();
  };
  const double pi = std::numbers::pi;

  for (int attempt = 0; attempt < 10000; ++attempt) {
    LayoutParams layout = LayoutParams::zeros(coil_count);
    const int n = coil_count;
    for (int i = 0; i < n; ++i) layout.packed(i) = draw(-0.40, 0.40);
    for (int i = 0; i < n; ++i) layout.packed(n + i) = draw(-0.40, 0.40);
    for (int i = 0; i < n; ++i) layout.packed(2 * n + i) = draw(-0.55, -0.30);
    for (int i = 0; i < n; ++i) layout.packed(3 * n + i) = draw(-pi, pi);
    for (int i = 0; i < n; ++i) layout.packed(4 * n + i) = draw(0.0, pi / 3);

    try {
      const Evaluation e = evaluate(layout, model, config, Vec3::Zero());
      if (e.max_top < config.table_plane_z) return layout;
    } catch (const Error&) {
      // redraw the whole layout
    }
  }
  std::ostringstream os;
  os << "random_layout: no feasible layout after 10000 attempts (seed " << seed
     << ")";
  throw Error(os.str());
}

LayoutParams layout_of(const CoilArray& array) {
  const int n = array.size();
  LayoutParams out = LayoutParams::zeros(n);
  for (int i = 0; i < n; ++i) {
    out.set_position(i, array.coils[i].centroid);
    const auto [beta, gamma] = angles_from_axis(array.coils[i].axis);
    out.set_angles(i, beta, gamma);
  }
  return out;
}

CoilArray array_of(const LayoutParams& params, const CoilModel& model,
                   double current_limit) {
  CoilArray out;
  out.current_limit = current_limit;
  out.coils.reserve(params.coil_count());
  for (int i = 0; i < params.coil_count(); ++i) {
    Coil coil;
    coil.centroid = params.position(i);
    coil.axis = params.axis(i);
    coil.moment_per_amp = model.moment_per_amp;
    coil.geometry = model.geometry;
    out.coils.push_back(coil);
  }
  return out;
}

}  // namespace magtable
