#pragma once

#include <string>
#include <vector>

#include "ampse/amp.h"
#include "ampse/model_gen.h"

namespace ampse {

struct SolveReport {
  TallMatrix omega_star;  // d x K
  double grad_norm = 0;   // ||G(omega*)||_F / sqrt(d)
  int iterations = 0;
  double objective = 0;
  std::string method;  // "newton" | "gd"
  bool converged = false;
};

struct SolverOptions {
  double tol = 1e-8;       // on ||G||_F / sqrt(d)
  int newton_cap = 100;
  int gd_cap = 100000;
  int threads = 0;
};

/// Reference solver for argmin_omega sum_i l(x_i^T omega; y_i)
/// + (lambda0/2) ||omega||_F^2. Full-batch Newton on the vectorized dK
/// problem when dK <= 3000, otherwise gradient descent with fixed step
/// 1 / (lambda0 + alpha * L_hess) where L_hess = loss.hess_bound().
/// Independent of the AMP path.
SolveReport solve_ridge_softmax(const DesignMatrix& X, const TallMatrix& y,
                                double lambda0, const RowLoss& loss,
                                const SolverOptions& opts = {});

double ridge_objective(const DesignMatrix& X, const TallMatrix& y,
                       const TallMatrix& omega, double lambda0,
                       const RowLoss& loss, int threads = 0);

struct Theorem3Report {
  std::vector<int> t;
  std::vector<double> dist;   // ||omega^(t) - omega*||_F / sqrt(d)
  std::vector<double> bound;  // printed Eq.-(38) right-hand side / sqrt(d)
  double x_norm = 0;          // ||X||_2
  double final_dist = 0;
  bool bound_holds = true;    // dist <= bound at every checked t
};

/// Per-iterate distance to omega* against the strong-convexity bound built
/// from the stored step distances and ||X||_2 (run must carry snapshots).
Theorem3Report theorem3_check(const SolveReport& solve, const AmpRun& run,
                              const DesignMatrix& X, const FixedPoint& fp);

struct CorollaryReport {
  double lhs = 0;  // ||omega* - omega0||_F^2 / d
  double rhs = 0;  // tr((B0 - B*)^T (B0 - B*) + C*)
  double abs_gap = 0;
  double rel_gap = 0;
};

CorollaryReport corollary_error_check(const SolveReport& solve,
                                      const GroundTruth& gt,
                                      const FixedPoint& fp);

}  // namespace ampse
