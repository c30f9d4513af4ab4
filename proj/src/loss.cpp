#include "ampse/loss.h"

#include <algorithm>
#include <cmath>

#include "ampse/errors.h"

namespace ampse {

void softmax(const double* theta, int K, double* p) {
  double mx = theta[0];
  for (int k = 1; k < K; ++k) mx = std::max(mx, theta[k]);
  double sum = 0.0;
  for (int k = 0; k < K; ++k) {
    p[k] = std::exp(theta[k] - mx);
    sum += p[k];
  }
  for (int k = 0; k < K; ++k) p[k] /= sum;
}

namespace {

double logsumexp(const double* theta, int K) {
  double mx = theta[0];
  for (int k = 1; k < K; ++k) mx = std::max(mx, theta[k]);
  double sum = 0.0;
  for (int k = 0; k < K; ++k) sum += std::exp(theta[k] - mx);
  return mx + std::log(sum);
}

}  // namespace

double CrossEntropyLoss::value(const double* theta, const double* y, int K) const {
  const double lse = logsumexp(theta, K);
  double v = 0.0, ysum = 0.0;
  for (int k = 0; k < K; ++k) {
    v -= y[k] * theta[k];
    ysum += y[k];
  }
  return v + ysum * lse;
}

void CrossEntropyLoss::eval(const double* theta, const double* y, int K,
                            double* value, double* grad, double* hess) const {
  double p[kMaxK];
  softmax(theta, K, p);
  const double lse = logsumexp(theta, K);
  double v = 0.0, ysum = 0.0;
  for (int k = 0; k < K; ++k) {
    v -= y[k] * theta[k];
    ysum += y[k];
  }
  *value = v + ysum * lse;
  for (int k = 0; k < K; ++k) grad[k] = ysum * p[k] - y[k];
  // hess = ysum * (diag(p) - p^T p); singular (row sums 0), never inverted alone
  for (int j = 0; j < K; ++j) {
    for (int i = 0; i < K; ++i) {
      hess[j * K + i] = ysum * ((i == j ? p[i] : 0.0) - p[i] * p[j]);
    }
  }
}

void CrossEntropyLoss::sample_y(const double* theta, int K, SplitRng& rng,
                                double* y) const {
  double p[kMaxK];
  softmax(theta, K, p);
  const double u = rng.uniform();
  double cum = 0.0;
  int pick = K - 1;
  for (int k = 0; k < K; ++k) {
    cum += p[k];
    if (u < cum) {
      pick = k;
      break;
    }
  }
  for (int k = 0; k < K; ++k) y[k] = (k == pick) ? 1.0 : 0.0;
}

double SquaredLoss::value(const double* theta, const double* y, int K) const {
  double v = 0.0;
  for (int k = 0; k < K; ++k) {
    const double d = theta[k] - y[k];
    v += d * d;
  }
  return 0.5 * v;
}

void SquaredLoss::eval(const double* theta, const double* y, int K,
                       double* value, double* grad, double* hess) const {
  double v = 0.0;
  for (int k = 0; k < K; ++k) {
    const double d = theta[k] - y[k];
    grad[k] = d;
    v += d * d;
  }
  *value = 0.5 * v;
  for (int j = 0; j < K; ++j) {
    for (int i = 0; i < K; ++i) hess[j * K + i] = (i == j) ? 1.0 : 0.0;
  }
}

void SquaredLoss::sample_y(const double* theta, int K, SplitRng& rng,
                           double* y) const {
  for (int k = 0; k < K; ++k) y[k] = theta[k] + rng.normal();
}

const RowLoss& loss_by_name(const std::string& name) {
  static const CrossEntropyLoss ce;
  static const SquaredLoss sq;
  if (name == "softmax") return ce;
  if (name == "gaussian") return sq;
  throw InvalidInputError("unknown channel '" + name + "' (expected softmax|gaussian)");
}

LossEval ce_eval(const RowVec& theta, const RowVec& y) {
  const int K = static_cast<int>(theta.size());
  if (K > kMaxK) throw InvalidInputError("ce_eval: K exceeds kMaxK");
  static const CrossEntropyLoss ce;
  LossEval out;
  out.grad.resize(K);
  out.hess.resize(K, K);
  ce.eval(theta.data(), y.data(), K, &out.value, out.grad.data(), out.hess.data());
  return out;
}

}  // namespace ampse
