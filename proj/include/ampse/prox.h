#pragma once

#include "ampse/loss.h"
#include "ampse/tall.h"

namespace ampse {

struct ProxOptions {
  double tol = 1e-10;      // stationarity residual norm
  int max_iter = 100;
  double armijo_c = 1e-4;  // sufficient decrease
  double backtrack = 0.5;
};

struct ProxResult {
  RowVec m;       // minimizer of l(theta;y) + 0.5 (gamma-theta) V (gamma-theta)^T
  RowVec f;       // denoiser value m - gamma
  Mat fprime;     // [f']_{kk'} = d f_{k'} / d gamma_k
  int newton_iters;
  double residual;
};

/// Scratch buffers for the row solver; one per thread, K <= kMaxK.
struct ProxWorkspace {
  double theta[kMaxK];
  double trial[kMaxK];
  double grad[kMaxK];
  double res[kMaxK];
  double step[kMaxK];
  double hess[kMaxK * kMaxK];
  double S[kMaxK * kMaxK];
  double L[kMaxK * kMaxK];
  double Z[kMaxK * kMaxK];
};

/// Damped-Newton solve of l'(theta; y) + (theta - gamma) V = 0 at one row.
/// `V_sym` must already be symmetric positive definite (callers symmetrize
/// once per batch). Writes m (K), f (K) and, when non-null, fprime
/// (K*K column-major, paper index convention). Returns Newton iterations;
/// throws ConvergenceError if the residual does not reach opt.tol.
int prox_row(const double* gamma, const double* y, int K, const RowLoss& loss,
             const double* V_sym, ProxWorkspace& ws, double* m_out,
             double* f_out, double* fprime_out, double* residual_out,
             const ProxOptions& opt = {});

/// Front-end per the module contract: symmetrizes V ((V+V^T)/2), checks
/// positive definiteness, then solves.
ProxResult prox(const RowVec& gamma, const RowVec& y, const Mat& V,
                const RowLoss& loss, const ProxOptions& opt = {});

RowVec denoiser(const RowVec& gamma, const RowVec& y, const Mat& V,
                const RowLoss& loss, const ProxOptions& opt = {});

Mat denoiser_jac(const RowVec& gamma, const RowVec& y, const Mat& V,
                 const RowLoss& loss, const ProxOptions& opt = {});

}  // namespace ampse
