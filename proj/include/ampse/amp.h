#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ampse/model_gen.h"
#include "ampse/state_evolution.h"

namespace ampse {

struct AmpState {
  int t = 1;           // current iteration index (omega is omega^(t))
  TallMatrix omega;    // d x K
  TallMatrix f_prev;   // n x K, f^(t-1); zero at t = 1
  TallMatrix gamma;    // n x K, gamma^(t) once a step has run
  Mat Q;               // Onsager coefficient for the current step
};

struct TrajPoint {
  int t;
  double omega_step;  // ||omega^(t+1) - omega^(t)||_F / sqrt(d)
  double gamma_step;  // ||gamma^(t) - gamma^(t-1)||_F / sqrt(n), nan at t = 1
  double ratio;       // omega_step(t)^2 / omega_step(t-1)^2, nan at t = 1
  double grad_norm;   // ||lambda0 omega^(t) + X^T l'(X omega^(t); y)||_F / sqrt(d)
  Mat r0_overlap;     // <r0, omega^(t)>
  Mat psi_cov;        // <psi, psi> with psi = omega^(t) - r0 <r0, omega^(t)>
  Mat g0_overlap;     // <g0, f^(t)>
};

struct AmpTrajectory {
  int K = 0;
  double alpha = 0, lambda0 = 0;
  std::string engine;  // "direct" | "dice"
  std::vector<TrajPoint> points;
  std::size_t peak_bytes = 0;        // dice only
  std::size_t max_single_alloc = 0;  // dice only
};

struct AmpRun {
  AmpTrajectory traj;
  TallMatrix omega_final;              // omega^(T+1)
  std::vector<TallMatrix> omega_snaps; // omega^(1..T+1) when requested
};

struct AmpOptions {
  bool store_omega = false;     // keep per-iteration snapshots (Theorem-3 checks)
  bool compute_grad = true;     // grad_norm column (one extra X^T product per step)
  bool se_schedule = false;     // Q^(t) from the state-evolution trajectory
                                // instead of the fixed-point Q*
  int threads = 0;
  // Test hook: replaces the row-wise denoiser when set (gamma, y) -> f.
  std::function<void(const TallMatrix&, const TallMatrix&, TallMatrix&)>
      denoiser_override;
};

/// omega^(1) = r0 B* + u sqrt(C*) with u fresh standard Gaussian drawn from
/// rng.split("init-u") (shared with the dice engine); f^(0) = 0; Q = Q*.
AmpState amp_init(const GroundTruth& gt, const FixedPoint& fp, SplitRng& rng);

/// One sweep of gamma = X omega - f_prev; f = f(gamma; y); omega' = X^T f
/// - alpha omega Q. Prox failures carry the offending row index.
void amp_step(AmpState& state, const Dataset& data, const FixedPoint& fp,
              const AmpOptions& opts = {});

AmpRun amp_run(const GroundTruth& gt, const Dataset& data, const FixedPoint& fp,
               int T_steps, SplitRng& rng, const AmpOptions& opts = {});

/// ||lambda0 omega + X^T l'(X omega; y)||_F / sqrt(d).
double gradient_norm(const TallMatrix& omega, const DesignMatrix& X,
                     const TallMatrix& y, double lambda0, const RowLoss& loss,
                     int threads = 0);

/// Row-wise denoiser application: f(i,:) = prox(gamma(i,:); y(i,:)) - gamma(i,:).
/// V must be symmetric PD (callers pass fp.Vstar). Row-parallel.
void apply_denoiser(const TallMatrix& gamma, const TallMatrix& y, const Mat& V,
                    const RowLoss& loss, TallMatrix& f, int threads = 0);

/// Row-wise loss gradient: out(i,:) = l'(theta(i,:); y(i,:)).
void apply_loss_grad(const TallMatrix& theta, const TallMatrix& y,
                     const RowLoss& loss, TallMatrix& out, int threads = 0);

}  // namespace ampse
