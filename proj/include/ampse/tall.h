#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ampse/alloc_stats.h"

namespace ampse {

using Index = std::int64_t;

/// K x K (or stacked (T+1)K) order-parameter matrix. Row convention follows
/// the 1 x K iterate rows: order matrices act by right-multiplication.
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

/// m x K matrix with m >> K, stored column-major so per-column kernels see
/// contiguous memory. Normalized inner product: inner(a, b) = a^T b / m.
/// Storage is tracked by alloc_stats.
class TallMatrix {
 public:
  TallMatrix() = default;
  TallMatrix(Index rows, Index cols);  // zero-initialized
  TallMatrix(const TallMatrix&);
  TallMatrix(TallMatrix&&) noexcept;
  TallMatrix& operator=(const TallMatrix&);
  TallMatrix& operator=(TallMatrix&&) noexcept;
  ~TallMatrix();

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double* col(Index k) { return data_ + k * rows_; }
  const double* col(Index k) const { return data_ + k * rows_; }
  double& operator()(Index i, Index k) { return data_[k * rows_ + i]; }
  double operator()(Index i, Index k) const { return data_[k * rows_ + i]; }

  double* data() { return data_; }
  const double* data() const { return data_; }
  Index size() const { return rows_ * cols_; }

  void set_zero();

 private:
  void allocate(Index rows, Index cols);
  void release();

  Index rows_ = 0;
  Index cols_ = 0;
  double* data_ = nullptr;
};

// Tall-matrix helpers. All run on the dispatched kernels.

/// a^T b (unnormalized), K_a x K_b.
Mat gram(const TallMatrix& a, const TallMatrix& b);

/// dst += src * coeff, coeff is src.cols() x dst.cols().
void add_product(TallMatrix& dst, const TallMatrix& src, const Mat& coeff);

/// a * coeff as a new matrix.
TallMatrix product(const TallMatrix& a, const Mat& coeff);

void add_scaled(TallMatrix& dst, double alpha, const TallMatrix& src);
void scale(TallMatrix& a, double alpha);

double frobenius_norm(const TallMatrix& a);
double frobenius_distance(const TallMatrix& a, const TallMatrix& b);

/// Fills with i.i.d. N(0,1); column-major order, single stream.
class SplitRng;
void fill_gaussian(TallMatrix& a, SplitRng& rng);

}  // namespace ampse
