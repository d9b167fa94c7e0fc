#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace magtable {

/// Relative singular-value cutoff shared by every pseudoinverse and rank
/// decision in the library: values below cutoff·σ_max are treated as zero.
inline constexpr double kSingularValueCutoff = 1e-12;

/// Moore-Penrose pseudoinverse via SVD with the library-wide relative
/// cutoff. Deterministic rank handling; works for any shape.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
pseudo_inverse(const Eigen::MatrixBase<Derived>& m,
               typename Derived::Scalar rel_cutoff = kSingularValueCutoff) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const Scalar cutoff = sv.size() > 0 ? rel_cutoff * sv(0) : Scalar(0);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_sv(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    inv_sv(i) = sv(i) > cutoff ? Scalar(1) / sv(i) : Scalar(0);
  }
  return svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().adjoint();
}

/// Numerical rank under the library-wide relative cutoff.
template <typename Derived>
int numerical_rank(const Eigen::MatrixBase<Derived>& m,
                   typename Derived::Scalar rel_cutoff = kSingularValueCutoff) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::JacobiSVD<Mat> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0) return 0;
  const Scalar cutoff = rel_cutoff * sv(0);
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff) ++rank;
  }
  return rank;
}

}  // namespace magtable
