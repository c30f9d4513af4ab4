#include "ampse/prox.h"

#include <cmath>
#include <cstring>
#include <string>

#include "ampse/errors.h"
#include "ampse/numerics.h"

namespace ampse {

namespace {

// In-place lower Cholesky of the K x K column-major matrix A into L.
// Returns false if a pivot is not strictly positive.
bool chol_small(const double* A, int K, double* L) {
  for (int j = 0; j < K; ++j) {
    double pivot = A[j * K + j];
    for (int k = 0; k < j; ++k) pivot -= L[k * K + j] * L[k * K + j];
    if (pivot <= 0.0) return false;
    const double d = std::sqrt(pivot);
    L[j * K + j] = d;
    for (int i = j + 1; i < K; ++i) {
      double v = A[j * K + i];
      for (int k = 0; k < j; ++k) v -= L[k * K + i] * L[k * K + j];
      L[j * K + i] = v / d;
    }
  }
  return true;
}

// Solves L L^T x = b (one right-hand side), in place over x.
void chol_solve(const double* L, int K, const double* b, double* x) {
  for (int i = 0; i < K; ++i) {
    double v = b[i];
    for (int k = 0; k < i; ++k) v -= L[k * K + i] * x[k];
    x[i] = v / L[i * K + i];
  }
  for (int i = K - 1; i >= 0; --i) {
    double v = x[i];
    for (int k = i + 1; k < K; ++k) v -= L[i * K + k] * x[k];
    x[i] = v / L[i * K + i];
  }
}

// residual r = grad + (theta - gamma) V  (1 x K row).
void stationarity(const double* grad, const double* theta, const double* gamma,
                  const double* V, int K, double* r) {
  for (int j = 0; j < K; ++j) {
    double v = grad[j];
    for (int l = 0; l < K; ++l) v += (theta[l] - gamma[l]) * V[j * K + l];
    r[j] = v;
  }
}

double quad_term(const double* theta, const double* gamma, const double* V, int K) {
  double q = 0.0;
  for (int j = 0; j < K; ++j) {
    double vj = 0.0;
    for (int l = 0; l < K; ++l) vj += (theta[l] - gamma[l]) * V[j * K + l];
    q += vj * (theta[j] - gamma[j]);
  }
  return 0.5 * q;
}

double norm2(const double* r, int K) {
  double s = 0.0;
  for (int k = 0; k < K; ++k) s += r[k] * r[k];
  return std::sqrt(s);
}

}  // namespace

int prox_row(const double* gamma, const double* y, int K, const RowLoss& loss,
             const double* V_sym, ProxWorkspace& ws, double* m_out,
             double* f_out, double* fprime_out, double* residual_out,
             const ProxOptions& opt) {
  double value = 0.0;
  double* theta = ws.theta;
  std::memcpy(theta, gamma, K * sizeof(double));  // start at the prox input
  loss.eval(theta, y, K, &value, ws.grad, ws.hess);
  double objective = value + quad_term(theta, gamma, V_sym, K);

  int iters = 0;
  double res_norm = 0.0;
  for (; iters < opt.max_iter; ++iters) {
    stationarity(ws.grad, theta, gamma, V_sym, K, ws.res);
    res_norm = norm2(ws.res, K);
    if (res_norm <= opt.tol) break;

    for (int i = 0; i < K * K; ++i) ws.S[i] = ws.hess[i];
    for (int j = 0; j < K; ++j) {
      for (int i = 0; i < K; ++i) ws.S[j * K + i] += V_sym[j * K + i];
    }
    if (!chol_small(ws.S, K, ws.L)) {
      throw ConvergenceError("prox: Newton system lost positive definiteness", res_norm);
    }
    chol_solve(ws.L, K, ws.res, ws.step);  // step = S^{-1} r^T; direction is -step

    double slope = 0.0;  // directional derivative r . (-step)
    for (int k = 0; k < K; ++k) slope -= ws.res[k] * ws.step[k];

    double t = 1.0;
    double new_value = 0.0;
    for (int bt = 0; bt < 60; ++bt) {
      for (int k = 0; k < K; ++k) ws.trial[k] = theta[k] - t * ws.step[k];
      new_value = loss.value(ws.trial, y, K) + quad_term(ws.trial, gamma, V_sym, K);
      if (new_value <= objective + opt.armijo_c * t * slope) break;
      t *= opt.backtrack;
    }
    std::memcpy(theta, ws.trial, K * sizeof(double));
    objective = new_value;
    loss.eval(theta, y, K, &value, ws.grad, ws.hess);
  }

  if (res_norm > opt.tol) {
    throw ConvergenceError(
        "prox: Newton did not converge (residual " + std::to_string(res_norm) + ")",
        res_norm);
  }

  std::memcpy(m_out, theta, K * sizeof(double));
  for (int k = 0; k < K; ++k) f_out[k] = theta[k] - gamma[k];
  if (residual_out != nullptr) *residual_out = res_norm;

  if (fprime_out != nullptr) {
    // f' = -l''(m) (V + l''(m))^{-1}; with symmetric factors this equals
    // -(S^{-1} l'')^T, computed from one Cholesky of S = V + l''(m).
    for (int i = 0; i < K * K; ++i) ws.S[i] = ws.hess[i];
    for (int j = 0; j < K; ++j) {
      for (int i = 0; i < K; ++i) ws.S[j * K + i] += V_sym[j * K + i];
    }
    if (!chol_small(ws.S, K, ws.L)) {
      throw ConvergenceError("prox: Jacobian system lost positive definiteness", res_norm);
    }
    for (int j = 0; j < K; ++j) {
      chol_solve(ws.L, K, ws.hess + j * K, ws.Z + j * K);  // Z = S^{-1} l''
    }
    for (int j = 0; j < K; ++j) {
      for (int i = 0; i < K; ++i) fprime_out[j * K + i] = -ws.Z[i * K + j];
    }
  }
  return iters;
}

namespace {

Mat symmetrize_and_check(const Mat& V) {
  if (V.rows() != V.cols()) throw DimensionError("prox: V not square");
  Mat Vs = (V + V.transpose()) / 2.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(Vs, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw InvalidInputError("prox: V is not positive definite");
  }
  return Vs;
}

}  // namespace

ProxResult prox(const RowVec& gamma, const RowVec& y, const Mat& V,
                const RowLoss& loss, const ProxOptions& opt) {
  const int K = static_cast<int>(gamma.size());
  if (K > kMaxK) throw InvalidInputError("prox: K exceeds kMaxK");
  if (y.size() != K || V.rows() != K) throw DimensionError("prox: shape mismatch");
  const Mat Vs = symmetrize_and_check(V);

  ProxResult out;
  out.m.resize(K);
  out.f.resize(K);
  out.fprime.resize(K, K);
  ProxWorkspace ws;
  out.newton_iters = prox_row(gamma.data(), y.data(), K, loss, Vs.data(), ws,
                              out.m.data(), out.f.data(), out.fprime.data(),
                              &out.residual, opt);
  return out;
}

RowVec denoiser(const RowVec& gamma, const RowVec& y, const Mat& V,
                const RowLoss& loss, const ProxOptions& opt) {
  return prox(gamma, y, V, loss, opt).f;
}

Mat denoiser_jac(const RowVec& gamma, const RowVec& y, const Mat& V,
                 const RowLoss& loss, const ProxOptions& opt) {
  return prox(gamma, y, V, loss, opt).fprime;
}

}  // namespace ampse
