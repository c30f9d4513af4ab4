#pragma once

#include <limits>
#include <string>
#include <vector>

#include "ampse/loss.h"
#include "ampse/tall.h"

namespace ampse {

/// Monte Carlo configuration. Results are bitwise-reproducible given
/// (seed, num_blocks): samples are partitioned into num_blocks sub-streams
/// and partial sums are reduced in block order, so the worker count never
/// changes the result.
struct McConfig {
  std::int64_t num_samples = 200000;
  std::uint64_t seed = 1;
  int num_blocks = 64;
  int threads = 0;  // 0 = hardware concurrency (capped by AMP_THREADS)
};

enum McWants : unsigned {
  kWantSecondMoments = 1u << 0,  // per-entry standard errors for Q, M, S
  kWantKron = 1u << 1,           // E[f' (x) f'] (K^2 x K^2)
  kWantStein = 1u << 2,          // E[G^T f] and the paired Stein difference
};

/// Sample means over draws of (Y, G0, G) with Gamma = G0 B + G sqrt(C).
struct McMoments {
  std::int64_t n = 0;
  Mat Q;  // E[f'(Gamma; Y)]
  Mat M;  // E[G0^T f(Gamma; Y)]
  Mat S;  // E[f(Gamma; Y)^T f(Gamma; Y)]
  Mat Q_se, M_se, S_se;           // entrywise standard errors (kWantSecondMoments)
  Mat kron_ff;                    // E[f' (x) f'] (kWantKron)
  Mat stein_gtf;                  // E[G^T f] (kWantStein)
  Mat stein_diff, stein_diff_se;  // E[G^T f - sqrt(C) f'] and its SE
};

McMoments expectations(const Mat& B, const Mat& C, const Mat& V, const Mat& C0,
                       const RowLoss& loss, const McConfig& mc,
                       unsigned wants = 0);

struct FixedPointResiduals {
  double v_eq = 0, b_eq = 0, c_eq = 0;  // Frobenius residuals, fresh stream
  double v_eq_se = 0, b_eq_se = 0, c_eq_se = 0;
  double identity = 0;  // || alpha Q* V* - (lambda0 I - V*) ||_F
};

enum class FpStatus { converged, max_iter, singular_update, v_not_pd };

/// The (B*, C*, V*) triple with derived Q* and rho_AT.
struct FixedPoint {
  int K = 0;
  double alpha = 0, lambda0 = 0;
  std::string channel;  // "softmax" | "gaussian"
  Mat C0, Bstar, Cstar, Vstar, Qstar;
  double rho_at = std::numeric_limits<double>::quiet_NaN();
  FixedPointResiduals residuals;
  std::int64_t mc_samples = 0;
  std::uint64_t seed = 0;
  FpStatus status = FpStatus::max_iter;
  int sweeps = 0;
  double max_v_asym = 0;  // largest asymmetry seen in the raw V update
  double final_update = 0;
  std::string message;

  bool converged() const { return status == FpStatus::converged; }
  const RowLoss& loss() const { return loss_by_name(channel); }
};

struct SolveOptions {
  double damping = 0.5;
  double tol = 1e-6;
  int max_iter = 500;
  double min_damping = 1.0 / 16.0;
  bool estimate_rho = true;  // fill fp.rho_at after convergence
};

/// Damped fixed-point iteration with common random numbers; residuals are
/// re-estimated on a fresh stream. Non-convergence is reported in `status`
/// with partial values, not thrown.
FixedPoint solve_fixed_point(int K, double alpha, double lambda0, const Mat& C0,
                             const std::string& channel, const McConfig& mc,
                             const SolveOptions& opts = {});

/// rho(alpha E[f'(Gamma*;Y) (x) f'(Gamma*;Y)]) on mc samples; the Kronecker
/// square uses the same draw on both factors.
double rho_at_estimate(const FixedPoint& fp, const McConfig& mc);

struct TMapResult {
  Mat value;      // symmetrized MC estimate of T(X)
  double se = 0;  // Frobenius norm of the entrywise standard errors
};

/// The two-sided map T(X) for 0 <= X <= C* (within margin -1e-8); the G draw
/// is shared between both denoiser arguments, G'/G'' are independent.
TMapResult t_map(const Mat& X, const FixedPoint& fp, const McConfig& mc,
                 bool want_se = false);

/// Paired margins for the monotonicity and upper bounds on one ordered pair
/// 0 <= Y <= X <= C*, all estimators on a common stream.
struct OrderedPairMargins {
  double monotonicity;  // lambda_min(T(X) - T(Y))
  double upper_bound;   // lambda_min(alpha E[f'^T (X-Y) f'] - (T(X) - T(Y)))
  double mono_se;       // Frobenius SE of the paired difference estimate
  double upper_se;
};
OrderedPairMargins ordered_pair_margins(const Mat& X, const Mat& Y,
                                        const FixedPoint& fp, const McConfig& mc);

struct DeviationSequence {
  Mat cstar;                 // C* polished to the sampled map's fixed point
  std::vector<Mat> deltas;   // Delta^(t) = C* - C^(t,t+1), t = 1..T
  std::vector<Mat> offdiag;  // C^(t,t+1)
  std::vector<double> ratios;  // ||Delta^(t+1)||_F / ||Delta^(t)||_F
};

/// Iterates C^(t+1,t+2) = T(C^(t,t+1)) from C^(1,2) = 0 under common random
/// numbers. C* is first polished to the sampled C-equation fixed point
/// (tolerance 1e-12) so the deltas contract to zero instead of flooring at
/// the solver residual.
DeviationSequence deviation_sequence(const FixedPoint& fp, const McConfig& mc,
                                     int T_steps);

/// Two-time covariance table, 1-based paper indices stored at [t-1][s-1].
struct TwoTimeCov {
  std::vector<std::vector<Mat>> C;  // (T+1) x (T+1)
};

/// Lower block-triangular factors: B[s][s] = chol(C[s][s] - sum B B^T) and
/// the off-diagonal triangular solves. Throws NotPositiveDefiniteError (with
/// the block index) if a diagonal block fails.
std::vector<std::vector<Mat>> two_time_cholesky(const TwoTimeCov& cov,
                                                double pivot_tol = 1e-12);

struct SeTrajectory {
  std::vector<Mat> B;  // B^(1..T+1)
  TwoTimeCov cov;      // C^(t,s) for t,s <= T+1
  std::vector<Mat> Q;  // Q^(t) = E[f'(Gamma^(t);Y)], t = 1..T
};

/// Full two-time state-evolution recursion from an arbitrary (B1, C11).
SeTrajectory se_trajectory(const Mat& B1, const Mat& C11, int T_steps,
                           const FixedPoint& fp, const McConfig& mc);

}  // namespace ampse
