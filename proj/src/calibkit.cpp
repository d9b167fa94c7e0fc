#include "magtable/calibkit.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "magtable/errors.hpp"

namespace magtable {

namespace {

constexpr double kCurrentTol = 1e-12;     ///< A, treat as the same current
constexpr double kResidualFraction = 0.05;

Vec3 through_origin_slope(const std::vector<const SweepRecord*>& records) {
  double denom = 0.0;
  Vec3 numer = Vec3::Zero();
  for (const SweepRecord* r : records) {
    denom += r->current * r->current;
    numer += r->current * r->b_measured;
  }
  if (denom <= 0.0) {
    throw Error("coil fit: no nonzero currents to fit a slope");
  }
  return numer / denom;
}

/// Component-wise linear interpolation of branch measurements at `current`;
/// empty optional outside the branch's current range.
std::optional<Vec3> interpolate_branch(
    const std::vector<const SweepRecord*>& branch, double current) {
  if (branch.empty()) return std::nullopt;
  if (current < branch.front()->current - kCurrentTol ||
      current > branch.back()->current + kCurrentTol) {
    return std::nullopt;
  }
  const auto upper = std::lower_bound(
      branch.begin(), branch.end(), current - kCurrentTol,
      [](const SweepRecord* r, double value) { return r->current < value; });
  if (upper == branch.end()) return branch.back()->b_measured;
  if (upper == branch.begin()) return branch.front()->b_measured;
  const SweepRecord* hi = *upper;
  const SweepRecord* lo = *(upper - 1);
  const double span = hi->current - lo->current;
  if (span <= kCurrentTol) return lo->b_measured;
  const double w = (current - lo->current) / span;
  return lo->b_measured + w * (hi->b_measured - lo->b_measured);
}

}  // namespace

CoilFit fit_coil(const std::vector<SweepRecord>& records) {
  if (records.empty()) throw Error("coil fit: no records");

  const int coil = records.front().coil_index;
  const Vec3 position = records.front().position;
  std::set<long long> distinct;
  bool has_zero = false;
  for (const SweepRecord& r : records) {
    if (r.coil_index != coil) {
      throw Error("coil fit: records mix coil indices");
    }
    if ((r.position - position).norm() > 1e-9) {
      throw Error("coil fit: records mix measurement positions");
    }
    distinct.insert(llround(r.current / kCurrentTol));
    has_zero = has_zero || std::abs(r.current) <= kCurrentTol;
  }
  if (distinct.size() < 4 || !has_zero) {
    std::ostringstream os;
    os << "coil fit: need at least 4 distinct currents including 0, got "
       << distinct.size() << (has_zero ? " with" : " without") << " a zero";
    throw Error(os.str());
  }

  std::vector<const SweepRecord*> all;
  all.reserve(records.size());
  for (const SweepRecord& r : records) all.push_back(&r);

  // Provisional full-range fit, then keep the records it explains within 5%
  // and refit once on that linear region.
  const Vec3 provisional = through_origin_slope(all);
  std::vector<const SweepRecord*> region;
  for (const SweepRecord* r : all) {
    const Vec3 fit = provisional * r->current;
    if ((r->b_measured - fit).norm() <= kResidualFraction * fit.norm()) {
      region.push_back(r);
    }
  }
  if (region.empty()) {
    throw Error("coil fit: no records within the linear region");
  }

  CoilFit out;
  out.slope = through_origin_slope(region);

  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (const SweepRecord* r : region) {
    ss_res += (r->b_measured - out.slope * r->current).squaredNorm();
    ss_tot += r->b_measured.squaredNorm();
  }
  out.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;

  // Branch gap at matched currents, scanned from both branches.
  std::vector<const SweepRecord*> ascending;
  std::vector<const SweepRecord*> descending;
  for (const SweepRecord* r : all) {
    (r->branch == SweepBranch::Ascending ? ascending : descending).push_back(r);
  }
  const auto by_current = [](const SweepRecord* a, const SweepRecord* b) {
    return a->current < b->current;
  };
  std::sort(ascending.begin(), ascending.end(), by_current);
  std::sort(descending.begin(), descending.end(), by_current);
  if (!ascending.empty() && !descending.empty()) {
    double gap = 0.0;
    for (const SweepRecord* r : ascending) {
      if (const auto other = interpolate_branch(descending, r->current)) {
        gap = std::max(gap,
                       (r->b_measured - *other).cwiseAbs().maxCoeff());
      }
    }
    for (const SweepRecord* r : descending) {
      if (const auto other = interpolate_branch(ascending, r->current)) {
        gap = std::max(gap,
                       (r->b_measured - *other).cwiseAbs().maxCoeff());
      }
    }
    out.hysteresis = gap;
  }

  // Smallest nonzero current magnitude falling outside the 5% band of the
  // final fit.
  std::vector<const SweepRecord*> by_magnitude = all;
  std::sort(by_magnitude.begin(), by_magnitude.end(),
            [](const SweepRecord* a, const SweepRecord* b) {
              return std::abs(a->current) < std::abs(b->current);
            });
  for (const SweepRecord* r : by_magnitude) {
    if (std::abs(r->current) <= kCurrentTol) continue;
    const Vec3 fit = out.slope * r->current;
    if ((r->b_measured - fit).norm() > kResidualFraction * fit.norm()) {
      out.saturation_onset = std::abs(r->current);
      break;
    }
  }

  return out;
}

GradientFit fit_gradient(const FieldSample& base, const FieldSample& dx,
                         const FieldSample& dy, const FieldSample& dz) {
  const FieldSample* displaced[3] = {&dx, &dy, &dz};
  const char* axes = "xyz";
  Mat3 raw;
  for (int k = 0; k < 3; ++k) {
    const Vec3 offset = displaced[k]->position - base.position;
    const double along = offset(k);
    Vec3 off_axis = offset;
    off_axis(k) = 0.0;
    if (along <= 0.0 || off_axis.norm() > 1e-9) {
      std::ostringstream os;
      os << "gradient fit: missing displacement direction " << axes[k]
         << " (sample must move from the base strictly along +" << axes[k]
         << ")";
      throw Error(os.str());
    }
    raw.col(k) = (displaced[k]->b - base.b) / along;
  }

  const Mat3 symmetric = 0.5 * (raw + raw.transpose());
  const Mat3 projected =
      symmetric - (symmetric.trace() / 3.0) * Mat3::Identity();

  GradientFit out;
  out.g = gradient_vector(projected);
  const double raw_norm = raw.norm();
  out.asymmetry = raw_norm > 0.0 ? (raw - projected).norm() / raw_norm : 0.0;
  return out;
}

ControlMatrix assemble_calibrated(const std::vector<CoilFit>& fits,
                                  const std::vector<Vec5>& gradient_fits,
                                  const Vec3& at,
                                  std::optional<double> amps_per_unit) {
  if (fits.size() != 8 || gradient_fits.size() != 8) {
    std::ostringstream os;
    os << "assemble_calibrated: missing coil — expected 8 field fits and 8 "
          "gradient fits, got "
       << fits.size() << " and " << gradient_fits.size();
    throw Error(os.str());
  }
  if (amps_per_unit && *amps_per_unit <= 0.0) {
    throw Error("assemble_calibrated: amps_per_unit must be positive");
  }
  const double scale = amps_per_unit.value_or(1.0);

  ControlMatrix out;
  out.at = at;
  out.source = MatrixSource::Calibrated;
  out.rows_field.resize(3, 8);
  out.rows_gradient.resize(5, 8);
  for (int j = 0; j < 8; ++j) {
    out.rows_field.col(j) = fits[static_cast<std::size_t>(j)].slope * scale;
    out.rows_gradient.col(j) =
        gradient_fits[static_cast<std::size_t>(j)] * scale;
  }
  return out;
}

}  // namespace magtable
