#include "ampse/tall.h"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ampse/errors.h"
#include "ampse/kernels.h"
#include "ampse/rng.h"

namespace ampse {

void TallMatrix::allocate(Index rows, Index cols) {
  rows_ = rows;
  cols_ = cols;
  if (size() > 0) {
    data_ = static_cast<double*>(::operator new(size() * sizeof(double)));
    alloc_stats::record_alloc(static_cast<std::size_t>(size()) * sizeof(double));
  }
}

void TallMatrix::release() {
  if (data_ != nullptr) {
    alloc_stats::record_free(static_cast<std::size_t>(size()) * sizeof(double));
    ::operator delete(data_);
    data_ = nullptr;
  }
  rows_ = cols_ = 0;
}

TallMatrix::TallMatrix(Index rows, Index cols) {
  allocate(rows, cols);
  set_zero();
}

TallMatrix::TallMatrix(const TallMatrix& other) {
  allocate(other.rows_, other.cols_);
  if (size() > 0) std::memcpy(data_, other.data_, size() * sizeof(double));
}

TallMatrix::TallMatrix(TallMatrix&& other) noexcept
    : rows_(other.rows_), cols_(other.cols_), data_(other.data_) {
  other.rows_ = other.cols_ = 0;
  other.data_ = nullptr;
}

TallMatrix& TallMatrix::operator=(const TallMatrix& other) {
  if (this != &other) {
    release();
    allocate(other.rows_, other.cols_);
    if (size() > 0) std::memcpy(data_, other.data_, size() * sizeof(double));
  }
  return *this;
}

TallMatrix& TallMatrix::operator=(TallMatrix&& other) noexcept {
  if (this != &other) {
    release();
    rows_ = other.rows_;
    cols_ = other.cols_;
    data_ = other.data_;
    other.rows_ = other.cols_ = 0;
    other.data_ = nullptr;
  }
  return *this;
}

TallMatrix::~TallMatrix() { release(); }

void TallMatrix::set_zero() {
  if (size() > 0) std::memset(data_, 0, size() * sizeof(double));
}

Mat gram(const TallMatrix& a, const TallMatrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("gram: row counts differ (" + std::to_string(a.rows()) +
                         " vs " + std::to_string(b.rows()) + ")");
  }
  Mat g(a.cols(), b.cols());
  for (Index j = 0; j < b.cols(); ++j) {
    for (Index i = 0; i < a.cols(); ++i) {
      g(i, j) = kernels::dot(a.col(i), b.col(j), static_cast<std::size_t>(a.rows()));
    }
  }
  return g;
}

void add_product(TallMatrix& dst, const TallMatrix& src, const Mat& coeff) {
  if (src.rows() != dst.rows() || coeff.rows() != src.cols() ||
      coeff.cols() != dst.cols()) {
    throw DimensionError("add_product: shape mismatch");
  }
  for (Index j = 0; j < dst.cols(); ++j) {
    for (Index i = 0; i < src.cols(); ++i) {
      const double c = coeff(i, j);
      if (c != 0.0) {
        kernels::axpy(c, src.col(i), dst.col(j), static_cast<std::size_t>(dst.rows()));
      }
    }
  }
}

TallMatrix product(const TallMatrix& a, const Mat& coeff) {
  TallMatrix out(a.rows(), coeff.cols());
  add_product(out, a, coeff);
  return out;
}

void add_scaled(TallMatrix& dst, double alpha, const TallMatrix& src) {
  if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
    throw DimensionError("add_scaled: shape mismatch");
  }
  kernels::axpy(alpha, src.data(), dst.data(), static_cast<std::size_t>(dst.size()));
}

void scale(TallMatrix& a, double alpha) {
  kernels::scal(alpha, a.data(), static_cast<std::size_t>(a.size()));
}

double frobenius_norm(const TallMatrix& a) {
  return std::sqrt(kernels::dot(a.data(), a.data(), static_cast<std::size_t>(a.size())));
}

double frobenius_distance(const TallMatrix& a, const TallMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("frobenius_distance: shape mismatch");
  }
  double sum = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (Index i = 0; i < a.size(); ++i) {
    const double d = pa[i] - pb[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

void fill_gaussian(TallMatrix& a, SplitRng& rng) {
  rng.fill_normal(std::span<double>(a.data(), static_cast<std::size_t>(a.size())));
}

}  // namespace ampse
