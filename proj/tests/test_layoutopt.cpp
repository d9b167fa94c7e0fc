#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "magtable/allocator.hpp"
#include "magtable/errors.hpp"
#include "magtable/io.hpp"
#include "magtable/layoutopt.hpp"
#include "magtable/magmodel.hpp"
#include "test_helpers.hpp"

using namespace magtable;
using namespace magtable::testing;
using doctest::Approx;

namespace {

constexpr double kPi = std::numbers::pi;

LayoutParams design_a_layout() { return layout_of(design_a_array()); }

/// Independent closest-distance oracle for two segments, written as the
/// classic clamped-quadratic closest-point computation (parameters s, t in
/// [0, 1] along each segment, solved jointly and clamped).
double oracle_segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2,
                               const Vec3& q2) {
  const Vec3 d1 = q1 - p1;
  const Vec3 d2 = q2 - p2;
  const Vec3 r = p1 - p2;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);
  const double c = d1.dot(r);
  const double b = d1.dot(d2);
  const double denom = a * e - b * b;
  double s = 0.0;
  if (denom > 1e-30) s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
  double t = (b * s + f) / e;
  if (t < 0.0) {
    t = 0.0;
    s = std::clamp(-c / a, 0.0, 1.0);
  } else if (t > 1.0) {
    t = 1.0;
    s = std::clamp((b - c) / a, 0.0, 1.0);
  }
  return ((p1 + s * d1) - (p2 + t * d2)).norm();
}

double call_segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2,
                             const Vec3& q2) {
  return segment_min_distance(0.5 * (p1 + q1), (q1 - p1).normalized(),
                              (q1 - p1).norm(), 0.5 * (p2 + q2),
                              (q2 - p2).normalized(), (q2 - p2).norm());
}

}  // namespace

TEST_CASE("packed parameter layout groups coordinates then angles") {
  LayoutParams p = LayoutParams::zeros(3);
  CHECK(p.packed.size() == 15);
  CHECK(p.coil_count() == 3);
  p.set_position(1, Vec3(0.1, 0.2, -0.3));
  p.set_angles(1, 0.4, 0.5);
  CHECK(p.packed(1) == 0.1);
  CHECK(p.packed(4) == 0.2);
  CHECK(p.packed(7) == -0.3);
  CHECK(p.packed(10) == 0.4);
  CHECK(p.packed(13) == 0.5);
  CHECK(p.x(1) == 0.1);
  CHECK(p.y(1) == 0.2);
  CHECK(p.z(1) == -0.3);
  CHECK(p.beta(1) == 0.4);
  CHECK(p.gamma(1) == 0.5);
  CHECK((p.position(1) - Vec3(0.1, 0.2, -0.3)).norm() == 0.0);
  p.set_z(1, -0.7);
  CHECK(p.packed(7) == -0.7);

  CHECK_THROWS_AS(LayoutParams(Eigen::VectorXd::Zero(7)), Error);
}

TEST_CASE("axis and angle conversions round-trip") {
  // Generic tilted axes.
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const double beta = uniform(rng, -kPi + 1e-6, kPi - 1e-6);
    const double gamma = uniform(rng, 1e-6, kPi - 1e-6);
    const Vec3 axis = axis_from_angles(beta, gamma);
    CHECK(axis.norm() == Approx(1.0).epsilon(1e-14));
    const auto [b2, g2] = angles_from_axis(axis);
    CHECK(b2 == Approx(beta).epsilon(1e-12));
    CHECK(g2 == Approx(gamma).epsilon(1e-12));
  }

  // Poles: beta is undefined and reported as zero.
  CHECK(angles_from_axis(Vec3(0, 0, 1)) == std::pair<double, double>(0.0, 0.0));
  const auto [bd, gd] = angles_from_axis(Vec3(0, 0, -1));
  CHECK(bd == 0.0);
  CHECK(gd == Approx(kPi).epsilon(1e-15));

  // Non-unit input is normalized before conversion.
  const auto [bs, gs] = angles_from_axis(Vec3(0, 0, 2.0));
  CHECK(bs == 0.0);
  CHECK(gs == 0.0);

  const Vec3 flat = axis_from_angles(1.0, kPi / 2);
  CHECK(std::abs(flat.z()) <= 1e-16);
}

TEST_CASE("coil top height covers the upright, flat, and as-built cases") {
  const double l = 0.36;
  const double d = 0.09;
  // Upright cylinder: the top face center is half the length above the centroid.
  CHECK(coil_top_height(-0.5, 0.0, l, d) == Approx(-0.5 + 0.18).epsilon(1e-12));
  // Horizontal cylinder: the top of the barrel is half the diameter up.
  CHECK(coil_top_height(-0.5, kPi / 2, l, d) ==
        Approx(-0.5 + 0.045).epsilon(1e-12));
  // The as-built array: upright coils at z = -0.300 top out at -0.120.
  CHECK(coil_top_height(-0.300, 0.0, l, d) == Approx(-0.120).epsilon(1e-12));
}

TEST_CASE("height barrier is zero at the reference depth and grows upward") {
  const CoilModel model;
  const OptimizerConfig config;

  // Upright coil whose top sits exactly at -z0.
  LayoutParams p = LayoutParams::zeros(1);
  p.set_position(0, Vec3(0, 0, -config.z0 - 0.18));
  CHECK(std::abs(h_funcs(p, model, config)(0)) <= 1e-13);

  // Twice the depth: -log(2).
  p.set_z(0, -2.0 * config.z0 - 0.18);
  CHECK(h_funcs(p, model, config)(0) ==
        Approx(-std::log(2.0)).epsilon(1e-12));

  // Raising the coil strictly increases the barrier term.
  double prev = -std::numeric_limits<double>::infinity();
  for (double z = -0.60; z <= -0.25; z += 0.05) {
    p.set_z(0, z);
    const double value = h_funcs(p, model, config)(0);
    CHECK(value > prev);
    prev = value;
  }

  // A top at or above the origin plane is rejected.
  p.set_z(0, -0.044);
  p.set_angles(0, 0.0, kPi / 2);  // horizontal: top = z + 0.045 = +0.001
  CHECK_THROWS_AS(h_funcs(p, model, config), BarrierViolationError);
}

TEST_CASE("proximity penalty scales with the surface gap") {
  const CoilModel model;
  const OptimizerConfig config;
  LayoutParams p = LayoutParams::zeros(2);
  p.set_position(0, Vec3(0, 0, -0.3));

  // Gap equal to sigma: penalty 1.
  p.set_position(1, Vec3(0.091, 0, -0.3));
  CHECK(p_funcs(p, model, config)(0) == Approx(1.0).epsilon(1e-12));

  // Gap of one meter: penalty sigma.
  p.set_position(1, Vec3(1.09, 0, -0.3));
  CHECK(p_funcs(p, model, config)(0) == Approx(0.001).epsilon(1e-12));

  // Sub-micron gap: penalty beyond 1000.
  p.set_position(1, Vec3(0.09 + 5e-7, 0, -0.3));
  CHECK(p_funcs(p, model, config)(0) > 1000.0);

  // Touching or overlapping cores are rejected outright.
  p.set_position(1, Vec3(0.05, 0, -0.3));
  try {
    p_funcs(p, model, config);
    FAIL("expected CollisionError");
  } catch (const CollisionError& e) {
    CHECK(std::string(e.what()).find("does not clear") != std::string::npos);
  }
}

TEST_CASE("segment distance handles parallel, collinear, and skew pairs") {
  // Parallel with overlapping extents: the offset between the lines.
  CHECK(call_segment_distance(Vec3(0, 0, -0.5), Vec3(0, 0, 0.5),
                              Vec3(0.2, 0, -0.4), Vec3(0.2, 0, 0.6)) ==
        Approx(0.2).epsilon(1e-14));

  // Collinear with a gap: the end-to-end gap.
  CHECK(call_segment_distance(Vec3(-0.5, 0, 0), Vec3(0.5, 0, 0),
                              Vec3(0.7, 0, 0), Vec3(1.3, 0, 0)) ==
        Approx(0.2).epsilon(1e-12));

  // Perpendicular skew pair crossing at interior points.
  CHECK(call_segment_distance(Vec3(-1, 0, 0), Vec3(1, 0, 0),
                              Vec3(0, -1, 0.3), Vec3(0, 1, 0.3)) ==
        Approx(0.3).epsilon(1e-14));

  // Common normal outside both segments: nearest endpoints decide.
  const double got = call_segment_distance(Vec3(0, 0, 0), Vec3(1, 0, 0),
                                           Vec3(2, 1, 0), Vec3(2, 2, 1));
  CHECK(got == Approx((Vec3(1, 0, 0) - Vec3(2, 1, 0)).norm()).epsilon(1e-12));
}

TEST_CASE("segment distance agrees with an independent closest-point solve") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 2000; ++trial) {
    const Vec3 c1(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    const Vec3 c2(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    const Vec3 a1 = random_unit(rng);
    const Vec3 a2 = random_unit(rng);
    const double l1 = uniform(rng, 0.1, 2.0);
    const double l2 = uniform(rng, 0.1, 2.0);
    const Vec3 p1 = c1 - 0.5 * l1 * a1, q1 = c1 + 0.5 * l1 * a1;
    const Vec3 p2 = c2 - 0.5 * l2 * a2, q2 = c2 + 0.5 * l2 * a2;
    const double expected = oracle_segment_distance(p1, q1, p2, q2);
    const double got = segment_min_distance(c1, a1, l1, c2, a2, l2);
    CHECK(std::abs(got - expected) <= 1e-9 * (1.0 + expected));
  }
}

TEST_CASE("field-effort terms track the minimum-norm drive currents") {
  const CoilArray array = design_a_array();
  const CoilModel model;
  const OptimizerConfig config;
  const Eigen::Vector3d m = m_funcs(layout_of(array), model, config);

  const ControlMatrix cm = build_control_matrix(array, Vec3::Zero());
  for (int k = 0; k < 3; ++k) {
    const AllocationResult r = allocate_nonuniform(cm, Vec3::Unit(k));
    const double peak = r.currents.cwiseAbs().maxCoeff();
    CHECK(m(k) == Approx(config.eps_field * peak).epsilon(1e-9));
  }

  // The square layout treats x and y identically, and z is cheapest.
  CHECK(m(0) == Approx(m(1)).epsilon(1e-12));
  CHECK(m(2) < m(0));
}

TEST_CASE("field-effort terms scale inversely with moment and grow with range") {
  const LayoutParams p = design_a_layout();
  const OptimizerConfig config;
  CoilModel model;
  const Eigen::Vector3d base = m_funcs(p, model, config);

  // Twice the dipole strength halves every drive requirement.
  model.moment_per_amp *= 2.0;
  const Eigen::Vector3d halved = m_funcs(p, model, config);
  for (int k = 0; k < 3; ++k) {
    CHECK(halved(k) == Approx(0.5 * base(k)).epsilon(1e-12));
  }

  // Pushing all coils twice as far away makes every axis more expensive.
  model.moment_per_amp /= 2.0;
  LayoutParams far = p;
  far.packed.head(3 * far.coil_count()) *= 2.0;
  const Eigen::Vector3d distant = m_funcs(far, model, config);
  for (int k = 0; k < 3; ++k) CHECK(distant(k) > base(k));
}

TEST_CASE("field-effort terms reject a layout that cannot span all axes") {
  LayoutParams p = LayoutParams::zeros(8);
  for (int i = 0; i < 8; ++i) p.set_position(i, Vec3(0.1, 0.0, -0.3));
  CHECK_THROWS_AS(m_funcs(p, CoilModel{}, OptimizerConfig{}),
                  RankDeficiencyError);
}

TEST_CASE("the stacked cost has 39 entries for eight coils") {
  const AssociatedVector av =
      objective(design_a_layout(), CoilModel{}, OptimizerConfig{});
  const Eigen::VectorXd stack = av.stacked();
  CHECK(stack.size() == 39);
  CHECK((stack.head<3>() - av.m_funcs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((stack.segment(3, 8) - av.h_funcs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((stack.tail(28) - av.p_funcs).cwiseAbs().maxCoeff() == 0.0);
  CHECK(av.objective == Approx(0.5 * stack.squaredNorm()).epsilon(1e-15));
  CHECK(av.objective > 0.0);
}

TEST_CASE("the as-built layout scores its frozen objective value") {
  const AssociatedVector av =
      objective(design_a_layout(), CoilModel{}, OptimizerConfig{});
  CHECK(av.objective == Approx(1.3171417121956425e-03).epsilon(1e-12));
  // All eight tops sit exactly at the reference depth, so every height
  // barrier is zero to rounding.
  CHECK(av.h_funcs.cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("jacobian matches the analytic barrier derivative and halves its error") {
  const CoilModel model;
  OptimizerConfig config;
  LayoutParams p = design_a_layout();
  p.set_z(0, -0.8);  // deep coil: smooth barrier, gentle curvature

  const double h = coil_top_height(-0.8, 0.0, model.geometry.length,
                                   model.geometry.core_diameter());
  const double exact = -1.0 / h;  // d/dz of -log(-(z + const)/z0)

  const int row = 3 + 0;       // barrier row of coil 0
  const int col = 2 * 8 + 0;   // z column of coil 0
  const double coarse = numerical_jacobian(p, model, config)(row, col);
  config.fd_step *= 0.5;
  const double fine = numerical_jacobian(p, model, config)(row, col);

  CHECK(coarse == Approx(exact).epsilon(1e-4));
  const double err_coarse = std::abs(coarse - exact);
  const double err_fine = std::abs(fine - exact);
  CHECK(err_coarse / err_fine > 1.5);
  CHECK(err_coarse / err_fine < 2.5);
}

TEST_CASE("jacobian columns untouched by a parameter are exactly zero") {
  const Eigen::MatrixXd jac =
      numerical_jacobian(design_a_layout(), CoilModel{}, OptimizerConfig{});
  CHECK(jac.rows() == 39);
  CHECK(jac.cols() == 40);
  // Height barriers depend only on z and gamma, so the x and y columns of the
  // barrier rows vanish identically.
  CHECK(jac.block(3, 0, 8, 16).cwiseAbs().maxCoeff() == 0.0);
  // Every coil is upright (gamma = 0), so a beta rotation changes nothing at
  // all: the full beta columns are zero.
  CHECK(jac.middleCols(24, 8).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jacobian names the parameter whose perturbation fails") {
  LayoutParams p = design_a_layout();
  // Park coil 1 a hair more than the core diameter from coil 0: the +x
  // perturbation of coil 0 (and only that one) closes the gap.
  p.set_position(1, Vec3(p.x(0) + 0.09 + 0.5e-4, p.y(0), p.z(0)));
  try {
    numerical_jacobian(p, CoilModel{}, OptimizerConfig{});
    FAIL("expected a jacobian evaluation error");
  } catch (const Error& e) {
    const std::string what = e.what();
    CHECK(what.find("perturbed parameter x[0]") != std::string::npos);
    CHECK(what.find("does not clear") != std::string::npos);
  }
}

TEST_CASE("descent on the as-built layout converges without leaving the table") {
  const CoilModel model;
  const OptimizerConfig config;
  const DescentResult r = descend(design_a_layout(), model, config);

  CHECK(r.converged);
  CHECK(r.trace.front().objective == Approx(1.3171417121956425e-03).epsilon(1e-12));
  CHECK(r.trace.back().objective == Approx(1.3028886320862372e-03).epsilon(1e-12));
  CHECK(r.trace.size() > 1000);
  CHECK(r.trace.size() < 20000);

  CHECK(r.trace.front().step == 0.0);
  for (std::size_t i = 1; i < r.trace.size(); ++i) {
    CHECK(r.trace[i].objective < r.trace[i - 1].objective);
    CHECK(r.trace[i].step > 0.0);
    CHECK(r.trace[i].step <= config.step);
    CHECK(r.trace[i].min_surface_gap > 0.0);
  }
  CHECK(r.trace.back().max_coil_top <= -0.118);

  // Restarting from the converged layout stops immediately, returning the
  // input untouched.
  const DescentResult again = descend(r.final_params, model, config);
  CHECK(again.converged);
  CHECK(again.trace.size() == 1);
  CHECK((again.final_params.packed - r.final_params.packed)
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("a zero-iteration descent echoes the input") {
  OptimizerConfig config;
  config.max_iters = 0;
  const LayoutParams initial = design_a_layout();
  const DescentResult r = descend(initial, CoilModel{}, config);
  CHECK_FALSE(r.converged);
  CHECK(r.trace.size() == 1);
  CHECK((r.final_params.packed - initial.packed).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("descent makes strong early progress on a tilted starting layout") {
  const LayoutParams initial =
      layout_of(io::load_array(fixture_path("design_b_initial.json")));
  OptimizerConfig config;
  config.max_iters = 1200;
  const DescentResult r = descend(initial, CoilModel{}, config);

  CHECK_FALSE(r.converged);
  CHECK(r.trace.front().objective == Approx(0.05698489425343547).epsilon(1e-12));
  CHECK(r.trace.back().objective == Approx(0.0017106899882984882).epsilon(1e-12));
  CHECK(r.trace.back().objective < r.trace.front().objective / 10.0);
  for (std::size_t i = 1; i < r.trace.size(); ++i) {
    CHECK(r.trace[i].objective < r.trace[i - 1].objective);
  }
}

TEST_CASE("an infeasible flat layout is rejected, projected, then optimizable") {
  const LayoutParams raw =
      layout_of(io::load_array(fixture_path("design_c_initial.json")));
  const CoilModel model;
  const OptimizerConfig config;

  // Two coils poke above the origin plane; the barrier rejects the layout and
  // names the first offender.
  try {
    descend(raw, model, config);
    FAIL("expected BarrierViolationError");
  } catch (const BarrierViolationError& e) {
    CHECK(std::string(e.what()).find("coil 6") != std::string::npos);
  }

  // Projection drops every offending coil until its top clears the table
  // plane by exactly one millimeter.
  const LayoutParams proj = project_feasible(raw, model, config);
  for (int i = 0; i < proj.coil_count(); ++i) {
    const double top =
        coil_top_height(proj.z(i), proj.gamma(i), model.geometry.length,
                        model.geometry.core_diameter());
    CHECK(std::abs(top - (config.table_plane_z - 0.001)) <= 1e-12);
    CHECK(proj.z(i) < raw.z(i));
  }
  CHECK(objective(proj, model, config).objective ==
        Approx(0.0014786066261826454).epsilon(1e-12));

  OptimizerConfig short_run = config;
  short_run.max_iters = 200;
  const DescentResult r = descend(proj, model, short_run);
  CHECK_FALSE(r.converged);
  CHECK(r.trace.back().objective ==
        Approx(0.0011941574712126702).epsilon(1e-12));
}

TEST_CASE("projection leaves already-feasible layouts bitwise untouched") {
  const CoilModel model;
  const OptimizerConfig config;
  for (const char* fixture : {"design_a.json", "design_b_initial.json"}) {
    const LayoutParams p = layout_of(io::load_array(fixture_path(fixture)));
    const LayoutParams proj = project_feasible(p, model, config);
    CHECK((proj.packed - p.packed).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("seeded random layouts are reproducible and feasible") {
  const CoilModel model;
  const OptimizerConfig config;
  const LayoutParams a = random_layout(7, 8, model, config);
  const LayoutParams b = random_layout(7, 8, model, config);
  const LayoutParams c = random_layout(8, 8, model, config);

  CHECK((a.packed - b.packed).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.packed - c.packed).cwiseAbs().maxCoeff() > 0.0);

  for (int i = 0; i < 8; ++i) {
    const double top =
        coil_top_height(a.z(i), a.gamma(i), model.geometry.length,
                        model.geometry.core_diameter());
    CHECK(top < config.table_plane_z);
  }
  const Eigen::VectorXd gaps = p_funcs(a, model, config);
  CHECK(gaps.minCoeff() > 0.0);

  CHECK_THROWS_AS(random_layout(7, 0, model, config), Error);
}

TEST_CASE("layouts and coil arrays convert back and forth") {
  const CoilArray array = design_a_array();
  const LayoutParams p = layout_of(array);
  const CoilArray back = array_of(p, CoilModel{}, 1.0);

  REQUIRE(back.size() == array.size());
  for (int i = 0; i < array.size(); ++i) {
    CHECK((back.coils[i].centroid - array.coils[i].centroid).norm() == 0.0);
    CHECK((back.coils[i].axis - array.coils[i].axis).norm() <= 1e-15);
    CHECK(back.coils[i].moment_per_amp == array.coils[i].moment_per_amp);
    CHECK(back.coils[i].geometry.length == array.coils[i].geometry.length);
  }
  CHECK(back.current_limit == 1.0);

  // A tilted axis survives the angle round-trip.
  CoilArray tilted = array;
  tilted.coils[2].axis = Vec3(0.3, -0.4, 0.866025403784).normalized();
  const CoilArray round = array_of(layout_of(tilted), CoilModel{}, 1.0);
  CHECK((round.coils[2].axis - tilted.coils[2].axis).norm() <= 1e-12);
}
