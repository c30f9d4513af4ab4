#include "ampse/numerics.h"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "ampse/errors.h"
#include "ampse/kernels.h"

namespace ampse {

namespace detail {

void check_symmetric(const Mat& M, double tol, const char* what) {
  if (M.rows() != M.cols()) {
    throw DimensionError(std::string(what) + ": matrix not square");
  }
  const double asym = (M - M.transpose()).cwiseAbs().maxCoeff();
  if (asym > tol) {
    throw InvalidInputError(std::string(what) + ": matrix not symmetric (max |M - M^T| = " +
                            std::to_string(asym) + ")");
  }
}

}  // namespace detail

Mat inner(const TallMatrix& a, const TallMatrix& b) {
  Mat g = gram(a, b);
  g /= static_cast<double>(a.rows());
  return g;
}

Mat psd_sqrt(const Mat& C) {
  detail::check_symmetric(C, 1e-12, "psd_sqrt");
  Eigen::SelfAdjointEigenSolver<Mat> es(C);
  if (es.info() != Eigen::Success) {
    throw ConvergenceError("psd_sqrt: eigen-solver failed", 0.0);
  }
  Eigen::VectorXd lambda = es.eigenvalues();
  if (lambda.minCoeff() < -1e-10) {
    throw InvalidInputError("psd_sqrt: eigenvalue " + std::to_string(lambda.minCoeff()) +
                            " below -1e-10");
  }
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    lambda(i) = lambda(i) > 0.0 ? std::sqrt(lambda(i)) : 0.0;
  }
  Mat s = es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
  return (s + s.transpose()) / 2.0;
}

Mat chol_lower(const Mat& C, double pivot_tol) {
  detail::check_symmetric(C, 1e-10, "chol_lower");
  const Eigen::Index n = C.rows();
  Mat L = Mat::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = C(j, j);
    for (Eigen::Index k = 0; k < j; ++k) pivot -= L(j, k) * L(j, k);
    if (pivot <= pivot_tol) {
      throw NotPositiveDefiniteError(
          "chol_lower: pivot " + std::to_string(pivot) + " at index " + std::to_string(j),
          static_cast<int>(j));
    }
    L(j, j) = std::sqrt(pivot);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double v = C(i, j);
      for (Eigen::Index k = 0; k < j; ++k) v -= L(i, k) * L(j, k);
      L(i, j) = v / L(j, j);
    }
  }
  return L;
}

Mat kron(const Mat& A, const Mat& B) {
  Mat out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    }
  }
  return out;
}

double spectral_radius(const Mat& M) {
  if (M.rows() != M.cols()) throw DimensionError("spectral_radius: matrix not square");
  if (!M.allFinite()) throw InvalidInputError("spectral_radius: non-finite entries");
  Eigen::EigenSolver<Mat> es(M, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    throw ConvergenceError("spectral_radius: eigen-solver did not converge", 0.0);
  }
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double psd_order_margin(const Mat& X, const Mat& Y) {
  detail::check_symmetric(X, 1e-10, "psd_order_margin");
  detail::check_symmetric(Y, 1e-10, "psd_order_margin");
  if (X.rows() != Y.rows()) throw DimensionError("psd_order_margin: size mismatch");
  Eigen::SelfAdjointEigenSolver<Mat> es(Y - X, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

TallMatrix gs_block(const TallMatrix& b,
                    const std::vector<const TallMatrix*>& basis,
                    Index norm_rows, double rank_tol) {
  if (norm_rows <= 0) norm_rows = b.rows();
  const double inv_m = 1.0 / static_cast<double>(norm_rows);

  TallMatrix r = b;
  for (const TallMatrix* v : basis) {
    if (v->rows() != b.rows() || v->cols() != b.cols()) {
      throw DimensionError("gs_block: basis block shape mismatch");
    }
    Mat overlap = gram(*v, b) * inv_m;  // <v, b>
    add_product(r, *v, Mat(-overlap));
  }

  Mat g = gram(r, r) * inv_m;
  Mat L;
  try {
    L = chol_lower(g, rank_tol);
  } catch (const NotPositiveDefiniteError& e) {
    throw RankDeficiencyError(
        "gs_block: residual is rank deficient (degenerate dynamics), pivot index " +
        std::to_string(e.index()));
  }

  // Solve v L^T = r column by column: v_j = (r_j - sum_{k<j} L(j,k) v_k) / L(j,j).
  TallMatrix v(r.rows(), r.cols());
  const std::size_t m = static_cast<std::size_t>(r.rows());
  for (Index j = 0; j < r.cols(); ++j) {
    double* out = v.col(j);
    kernels::axpy(1.0, r.col(j), out, m);
    for (Index k = 0; k < j; ++k) kernels::axpy(-L(j, k), v.col(k), out, m);
    kernels::scal(1.0 / L(j, j), out, m);
  }
  return v;
}

TallMatrix gs_block(const TallMatrix& b, const std::vector<TallMatrix>& basis,
                    Index norm_rows, double rank_tol) {
  std::vector<const TallMatrix*> ptrs;
  ptrs.reserve(basis.size());
  for (const auto& v : basis) ptrs.push_back(&v);
  return gs_block(b, ptrs, norm_rows, rank_tol);
}

}  // namespace ampse
