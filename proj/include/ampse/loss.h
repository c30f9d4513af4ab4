#pragma once

#include <memory>
#include <string>

#include "ampse/rng.h"
#include "ampse/tall.h"

namespace ampse {

inline constexpr int kMaxK = 8;

/// Loss value with analytic derivatives at one 1 x K row.
struct LossEval {
  double value;
  RowVec grad;  // 1 x K
  Mat hess;     // K x K symmetric PSD
};

/// Row-wise loss l(theta; y) together with its generative channel
/// y ~ p0(y | theta), p0 proportional to exp(-l).
class RowLoss {
 public:
  virtual ~RowLoss() = default;

  virtual double value(const double* theta, const double* y, int K) const = 0;
  /// Writes value, grad (K) and hess (K*K column-major).
  virtual void eval(const double* theta, const double* y, int K, double* value,
                    double* grad, double* hess) const = 0;
  /// Upper bound on the Hessian spectral norm, any (theta, y).
  virtual double hess_bound() const = 0;
  /// Draws one observation row from the generative channel.
  virtual void sample_y(const double* theta, int K, SplitRng& rng,
                        double* y) const = 0;
  virtual const char* name() const = 0;
};

/// Cross-entropy with the softmax likelihood; y one-hot (general simplex
/// rows accepted). Computed with max-shifted logsumexp. Labels are sampled
/// by inverse CDF over the softmax probabilities with a single uniform draw.
class CrossEntropyLoss final : public RowLoss {
 public:
  double value(const double* theta, const double* y, int K) const override;
  void eval(const double* theta, const double* y, int K, double* value,
            double* grad, double* hess) const override;
  double hess_bound() const override { return 0.5; }
  void sample_y(const double* theta, int K, SplitRng& rng, double* y) const override;
  const char* name() const override { return "cross-entropy"; }
};

/// l(theta; y) = 0.5 ||theta - y||^2 with the Gaussian channel
/// y = theta + N(0, I). Test fixture with constant Hessian.
class SquaredLoss final : public RowLoss {
 public:
  double value(const double* theta, const double* y, int K) const override;
  void eval(const double* theta, const double* y, int K, double* value,
            double* grad, double* hess) const override;
  double hess_bound() const override { return 1.0; }
  void sample_y(const double* theta, int K, SplitRng& rng, double* y) const override;
  const char* name() const override { return "squared"; }
};

const RowLoss& loss_by_name(const std::string& name);  // "softmax" | "gaussian"

/// Cross-entropy evaluation at one row (test/front-end convenience).
LossEval ce_eval(const RowVec& theta, const RowVec& y);

/// Softmax probabilities with max subtraction.
void softmax(const double* theta, int K, double* p);

}  // namespace ampse
