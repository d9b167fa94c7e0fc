#pragma once

#include <optional>
#include <vector>

#include "magtable/allocator.hpp"
#include "magtable/types.hpp"

namespace magtable {

enum class SweepBranch { Ascending, Descending };

/// One gaussmeter reading during a current sweep of one coil.
struct SweepRecord {
  int coil_index = 0;
  double current = 0.0;       ///< A
  Vec3 b_measured = Vec3::Zero();  ///< T
  SweepBranch branch = SweepBranch::Ascending;
  Vec3 position = Vec3::Zero();    ///< m
};

/// Per-coil linearity fit: field per ampere plus data-quality metrics.
struct CoilFit {
  Vec3 slope = Vec3::Zero();        ///< T/A
  double r_squared = 1.0;
  std::optional<double> hysteresis; ///< T; absent with a single branch
  std::optional<double> saturation_onset;  ///< A; absent if never detected
};

/// Through-origin least-squares fit over the linear region of one coil's
/// sweep (provisional full-range fit, records within 5% retained, one refit).
/// hysteresis = largest per-component gap between branches at interpolated
/// matched currents; saturation_onset = smallest nonzero |current| whose
/// residual from the final fit exceeds 5% of the fitted value. Requires at
/// least 4 distinct currents including 0, all records from one coil at one
/// position.
CoilFit fit_coil(const std::vector<SweepRecord>& records);

/// One field measurement at a gantry position (fixed currents).
struct FieldSample {
  Vec3 position = Vec3::Zero();  ///< m
  Vec3 b = Vec3::Zero();         ///< T
};

struct GradientFit {
  Vec5 g = Vec5::Zero();    ///< T/m, canonical 5-vector order
  double asymmetry = 0.0;   ///< |M - projection|_F / |M|_F of the raw 3x3
};

/// Forward-difference gradient from a base sample and three axis-displaced
/// samples, projected to the nearest symmetric traceless matrix. Each
/// displaced sample must move from the base strictly along its own axis.
GradientFit fit_gradient(const FieldSample& base, const FieldSample& dx,
                         const FieldSample& dy, const FieldSample& dz);

/// Calibrated control matrix from eight per-coil fits: column j holds coil
/// j's field slope and gradient fit, scaled by amps_per_unit when given so
/// columns are per normalized current unit rather than per ampere.
ControlMatrix assemble_calibrated(const std::vector<CoilFit>& fits,
                                  const std::vector<Vec5>& gradient_fits,
                                  const Vec3& at,
                                  std::optional<double> amps_per_unit = {});

}  // namespace magtable
