#pragma once

#include <vector>

#include "ampse/tall.h"

namespace ampse {

/// Normalized inner product a^T b / m. Throws DimensionError if the row
/// counts differ.
Mat inner(const TallMatrix& a, const TallMatrix& b);

/// Symmetric PSD square root. Requires C symmetric to 1e-12 and min
/// eigenvalue >= -1e-10; negative eigenvalues are clamped to zero.
Mat psd_sqrt(const Mat& C);

/// Lower-triangular L with L L^T = C for symmetric positive definite C.
/// A pivot <= pivot_tol raises NotPositiveDefiniteError carrying its index.
Mat chol_lower(const Mat& C, double pivot_tol = 1e-12);

/// Kronecker product; block (i,j) is A(i,j) * B.
Mat kron(const Mat& A, const Mat& B);

/// Max eigenvalue modulus of a (generally non-symmetric) matrix.
double spectral_radius(const Mat& M);

/// Min eigenvalue of (Y - X) for symmetric X, Y. "X <= Y within eps" means
/// the returned margin >= -eps.
double psd_order_margin(const Mat& X, const Mat& Y);

/// Block Gram-Schmidt step: orthonormalizes b against `basis` (each element
/// satisfying <v_i, v_j> = delta_ij I) and returns v with <v, v> = I and
/// b = sum_i v_i <v_i, b> + v <v, b>. Normalization is via the Cholesky
/// factor of the residual Gram matrix; inner products divide by `norm_rows`
/// (defaults to b.rows(); the matrix-free engine passes the embedding row
/// count for its compact half-blocks). A rank-deficient residual raises
/// RankDeficiencyError.
TallMatrix gs_block(const TallMatrix& b,
                    const std::vector<const TallMatrix*>& basis,
                    Index norm_rows = 0, double rank_tol = 1e-10);
TallMatrix gs_block(const TallMatrix& b, const std::vector<TallMatrix>& basis,
                    Index norm_rows = 0, double rank_tol = 1e-10);

namespace detail {
void check_symmetric(const Mat& M, double tol, const char* what);
}

}  // namespace ampse
