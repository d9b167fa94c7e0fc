#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "magtable/types.hpp"

namespace magtable {

/// Coil axis direction from the two orientation angles:
/// (sin(gamma)·cos(beta), sin(gamma)·sin(beta), cos(gamma)).
Vec3 axis_from_angles(double beta, double gamma);

/// Inverse of axis_from_angles: gamma = acos(z), beta = atan2(y, x); beta is
/// reported as 0 when the axis is (anti)parallel to z and beta is undefined.
std::pair<double, double> angles_from_axis(const Vec3& axis);

/// The 5n layout parameters of an n-coil array, packed as
/// [x_0..x_{n-1}, y_0.., z_0.., beta_0.., gamma_0..].
struct LayoutParams {
  Eigen::VectorXd packed;

  LayoutParams() = default;
  explicit LayoutParams(Eigen::VectorXd values);
  static LayoutParams zeros(int coil_count);

  int coil_count() const { return static_cast<int>(packed.size()) / 5; }

  double x(int i) const { return packed(i); }
  double y(int i) const { return packed(coil_count() + i); }
  double z(int i) const { return packed(2 * coil_count() + i); }
  double beta(int i) const { return packed(3 * coil_count() + i); }
  double gamma(int i) const { return packed(4 * coil_count() + i); }

  Vec3 position(int i) const { return Vec3(x(i), y(i), z(i)); }
  Vec3 axis(int i) const { return axis_from_angles(beta(i), gamma(i)); }

  void set_position(int i, const Vec3& p);
  void set_angles(int i, double beta, double gamma);
  void set_z(int i, double z) { packed(2 * coil_count() + i) = z; }
};

/// Shared physical description of every coil during layout optimization:
/// the dipole strength per unit current and the cylinder geometry.
struct CoilModel {
  double moment_per_amp = 8613.0;  ///< A·m^2 per unit current
  CoilGeometry geometry{};
};

struct OptimizerConfig {
  double step = 0.001;        ///< fixed descent step eta_0
  double fd_step = 0.0001;    ///< forward-difference step per parameter
  double stop_tol = 1e-9;     ///< stop when |F_{j+1} - F_j| falls below this
  int max_iters = 200000;
  double eps_field = 0.002;   ///< target field magnitude in the cost terms (T)
  double sigma_prox = 0.001;  ///< proximity penalty scale (m)
  double z0 = 0.120;          ///< height-barrier scale (m)
  double table_plane_z = -0.120;  ///< plane coil tops must stay below (m)
};

/// The stacked cost terms evaluated at one layout: three field-effort terms,
/// n height-barrier terms, C(n,2) proximity terms, and the scalar objective
/// (half the sum of squares of the stack).
struct AssociatedVector {
  Eigen::Vector3d m_funcs;
  Eigen::VectorXd h_funcs;
  Eigen::VectorXd p_funcs;
  double objective = 0.0;

  /// [m_funcs; h_funcs; p_funcs], length 3 + n(n+1)/2.
  Eigen::VectorXd stacked() const;
};

/// Field-effort terms: for each principal axis e_k, eps_field times the
/// largest per-coil current magnitude in the minimum-norm solve B I = e_k,
/// where B maps unit currents to field at eval_point under the dipole model.
/// Small entries mean strong fields are cheap in that direction. Throws
/// RankDeficiencyError when B has rank < 3.
Eigen::Vector3d m_funcs(const LayoutParams& params, const CoilModel& model,
                        const OptimizerConfig& config,
                        const Vec3& eval_point = Vec3::Zero());

/// Height of the topmost point of a tilted cylinder of length l and
/// diameter d centered at height z: z + 0.5*sqrt(l^2+d^2)*sin(pi/2 - (gamma -
/// atan(d/l))).
double coil_top_height(double z, double gamma, double l, double d);

/// Height-barrier terms, one per coil: -log(-h_i / z0), zero exactly when a
/// coil top touches z = -z0 and growing without bound as the top approaches
/// z = 0. Throws BarrierViolationError when any h_i >= 0.
Eigen::VectorXd h_funcs(const LayoutParams& params, const CoilModel& model,
                        const OptimizerConfig& config);

/// Minimum distance between the axis segments of two coils (each of length l
/// along its axis, centered on its centroid). Parallel pairs and skew pairs
/// whose common-normal feet fall outside a segment resolve to the minimum
/// over endpoint-to-segment distances.
double cylinder_min_distance(const Coil& a, const Coil& b);

/// Minimum distance between two finite segments given centers, unit axes and
/// lengths.
double segment_min_distance(const Vec3& center_a, const Vec3& axis_a, double length_a,
                            const Vec3& center_b, const Vec3& axis_b, double length_b);

/// Proximity-penalty terms, one per unordered coil pair in lexicographic
/// (i,j) order: sigma_prox / (D_ij - d) with d the core diameter. Throws
/// CollisionError when any axis distance D_ij <= d.
Eigen::VectorXd p_funcs(const LayoutParams& params, const CoilModel& model,
                        const OptimizerConfig& config);

/// Full stacked evaluation with objective = 0.5 * ||stack||^2. Propagates
/// barrier and collision errors.
AssociatedVector objective(const LayoutParams& params, const CoilModel& model,
                           const OptimizerConfig& config,
                           const Vec3& eval_point = Vec3::Zero());

/// Forward-difference Jacobian of the stacked terms, one column per packed
/// parameter (step config.fd_step). Columns may be evaluated in parallel;
/// the result is bitwise-independent of the thread count. A failing
/// perturbed evaluation raises an error naming the parameter.
Eigen::MatrixXd numerical_jacobian(const LayoutParams& params,
                                   const CoilModel& model,
                                   const OptimizerConfig& config,
                                   const Vec3& eval_point = Vec3::Zero());

struct TracePoint {
  int iter = 0;
  double objective = 0.0;
  double step = 0.0;              ///< accepted step length (0 for the initial row)
  double max_coil_top = 0.0;      ///< m
  double min_surface_gap = 0.0;   ///< min over pairs of D_ij - d, m
};

struct DescentResult {
  LayoutParams final_params;
  std::vector<TracePoint> trace;
  bool converged = false;  ///< stop tolerance reached before max_iters
};

/// Fixed-step gradient descent x <- x - eta * J^T G on the stacked terms,
/// with backtracking: eta halves on a barrier/collision violation or an
/// objective increase and is restored after each accepted step. Stops when
/// |dF| < stop_tol (without committing the final candidate) or after
/// max_iters iterations. Throws if the initial layout violates a barrier or
/// when no feasible step is found after 60 halvings.
DescentResult descend(const LayoutParams& initial, const CoilModel& model,
                      const OptimizerConfig& config,
                      const Vec3& eval_point = Vec3::Zero());

/// Lower every coil whose top is above the table plane until its top sits
/// 1 mm below it. Coils already below the plane are untouched.
LayoutParams project_feasible(const LayoutParams& params, const CoilModel& model,
                              const OptimizerConfig& config);

/// Deterministic seeded random layout: positions drawn in
/// x,y in [-0.40, 0.40], z in [-0.55, -0.30], beta in [-pi, pi),
/// gamma in [0, pi/3], redrawn whole until the layout is feasible (tops below
/// the table plane, all surface gaps positive). Throws after 10000 attempts.
LayoutParams random_layout(std::uint64_t seed, int coil_count,
                           const CoilModel& model, const OptimizerConfig& config);

/// Packed parameters of an existing array (angles recovered from each axis).
LayoutParams layout_of(const CoilArray& array);

/// Materialize a layout as a coil array sharing one coil model.
CoilArray array_of(const LayoutParams& params, const CoilModel& model,
                   double current_limit = 1.0);

}  // namespace magtable
