#include "ampse/amp.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ampse/errors.h"
#include "ampse/numerics.h"
#include "ampse/prox.h"
#include "ampse/threading.h"

namespace ampse {

namespace {

constexpr Index kRowsPerBlock = 2048;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Mat checked_v(const Mat& V) {
  Mat Vs = (V + V.transpose()) / 2.0;
  Eigen::LLT<Mat> llt(Vs);
  if (llt.info() != Eigen::Success) {
    throw InvalidInputError("amp: V* is not positive definite");
  }
  return Vs;
}

}  // namespace

void apply_denoiser(const TallMatrix& gamma, const TallMatrix& y, const Mat& V,
                    const RowLoss& loss, TallMatrix& f, int threads) {
  const Index n = gamma.rows();
  const int K = static_cast<int>(gamma.cols());
  const Mat Vs = checked_v(V);
  const Index blocks = (n + kRowsPerBlock - 1) / kRowsPerBlock;
  parallel_blocks(blocks, [&](Index b) {
    ProxWorkspace ws;
    double g[kMaxK], yy[kMaxK], m[kMaxK], ff[kMaxK];
    const Index lo = b * kRowsPerBlock;
    const Index hi = std::min(n, lo + kRowsPerBlock);
    for (Index i = lo; i < hi; ++i) {
      for (int k = 0; k < K; ++k) {
        g[k] = gamma(i, k);
        yy[k] = y(i, k);
      }
      try {
        prox_row(g, yy, K, loss, Vs.data(), ws, m, ff, nullptr, nullptr);
      } catch (const ConvergenceError& e) {
        throw ConvergenceError(std::string(e.what()) + " (row " + std::to_string(i) + ")",
                               e.residual());
      }
      for (int k = 0; k < K; ++k) f(i, k) = ff[k];
    }
  }, threads);
}

void apply_loss_grad(const TallMatrix& theta, const TallMatrix& y,
                     const RowLoss& loss, TallMatrix& out, int threads) {
  const Index n = theta.rows();
  const int K = static_cast<int>(theta.cols());
  const Index blocks = (n + kRowsPerBlock - 1) / kRowsPerBlock;
  parallel_blocks(blocks, [&](Index b) {
    double th[kMaxK], yy[kMaxK], grad[kMaxK], hess[kMaxK * kMaxK];
    double value;
    const Index lo = b * kRowsPerBlock;
    const Index hi = std::min(n, lo + kRowsPerBlock);
    for (Index i = lo; i < hi; ++i) {
      for (int k = 0; k < K; ++k) {
        th[k] = theta(i, k);
        yy[k] = y(i, k);
      }
      loss.eval(th, yy, K, &value, grad, hess);
      for (int k = 0; k < K; ++k) out(i, k) = grad[k];
    }
  }, threads);
}

double gradient_norm(const TallMatrix& omega, const DesignMatrix& X,
                     const TallMatrix& y, double lambda0, const RowLoss& loss,
                     int threads) {
  TallMatrix theta = design_times(X, omega, threads);
  TallMatrix lgrad(theta.rows(), theta.cols());
  apply_loss_grad(theta, y, loss, lgrad, threads);
  TallMatrix G = design_transpose_times(X, lgrad, threads);
  add_scaled(G, lambda0, omega);
  return frobenius_norm(G) / std::sqrt(static_cast<double>(omega.rows()));
}

AmpState amp_init(const GroundTruth& gt, const FixedPoint& fp, SplitRng& rng) {
  if (!fp.converged()) throw InvalidInputError("amp_init: fixed point not converged");
  const Index d = gt.r0.rows();
  const int K = static_cast<int>(gt.r0.cols());
  if (fp.K != K) throw DimensionError("amp_init: K mismatch between gt and fp");

  SplitRng stream = rng.split("init-u");
  TallMatrix u(d, K);
  fill_gaussian(u, stream);

  AmpState st;
  st.t = 1;
  st.omega = product(gt.r0, fp.Bstar);
  add_product(st.omega, u, psd_sqrt(fp.Cstar));
  st.Q = fp.Qstar;
  return st;
}

void amp_step(AmpState& state, const Dataset& data, const FixedPoint& fp,
              const AmpOptions& opts) {
  const Index n = data.X.n();
  const int K = static_cast<int>(state.omega.cols());

  TallMatrix gamma = design_times(data.X, state.omega, opts.threads);
  if (state.f_prev.rows() == n) add_scaled(gamma, -1.0, state.f_prev);

  TallMatrix f(n, K);
  if (opts.denoiser_override) {
    opts.denoiser_override(gamma, data.y, f);
  } else {
    apply_denoiser(gamma, data.y, fp.Vstar, fp.loss(), f, opts.threads);
  }

  TallMatrix omega_next = design_transpose_times(data.X, f, opts.threads);
  add_product(omega_next, state.omega, Mat(-fp.alpha * state.Q));

  state.gamma = std::move(gamma);
  state.f_prev = std::move(f);
  state.omega = std::move(omega_next);
  state.t += 1;
}

AmpRun amp_run(const GroundTruth& gt, const Dataset& data, const FixedPoint& fp,
               int T_steps, SplitRng& rng, const AmpOptions& opts) {
  const Index d = gt.r0.rows();
  const Index n = data.X.n();
  const double sqrt_d = std::sqrt(static_cast<double>(d));
  const double sqrt_n = std::sqrt(static_cast<double>(n));

  std::vector<Mat> se_schedule_q;
  if (opts.se_schedule) {
    McConfig mc;
    mc.num_samples = std::max<std::int64_t>(fp.mc_samples / 4, 20000);
    mc.seed = fp.seed;
    SeTrajectory se = se_trajectory(fp.Bstar, fp.Cstar, T_steps, fp, mc);
    se_schedule_q = se.Q;
  }

  AmpRun run;
  run.traj.K = fp.K;
  run.traj.alpha = fp.alpha;
  run.traj.lambda0 = fp.lambda0;
  run.traj.engine = "direct";

  AmpState st = amp_init(gt, fp, rng);
  TallMatrix g0 = design_times(data.X, gt.r0, opts.threads);

  TallMatrix omega_prev = st.omega;
  TallMatrix gamma_prev;
  double prev_step = kNaN;
  if (opts.store_omega) run.omega_snaps.push_back(st.omega);

  for (int t = 1; t <= T_steps; ++t) {
    TrajPoint pt;
    pt.t = t;
    pt.r0_overlap = inner(gt.r0, st.omega);
    pt.psi_cov = inner(st.omega, st.omega) - pt.r0_overlap.transpose() * pt.r0_overlap;
    pt.grad_norm = opts.compute_grad && !opts.denoiser_override
                       ? gradient_norm(st.omega, data.X, data.y, fp.lambda0,
                                       fp.loss(), opts.threads)
                       : kNaN;

    if (opts.se_schedule && t <= static_cast<int>(se_schedule_q.size())) {
      st.Q = se_schedule_q[static_cast<std::size_t>(t - 1)];
    }
    amp_step(st, data, fp, opts);

    pt.gamma_step = gamma_prev.rows() == n
                        ? frobenius_distance(st.gamma, gamma_prev) / sqrt_n
                        : kNaN;
    pt.omega_step = frobenius_distance(st.omega, omega_prev) / sqrt_d;
    pt.ratio = std::isnan(prev_step) || prev_step == 0.0
                   ? kNaN
                   : (pt.omega_step * pt.omega_step) / (prev_step * prev_step);
    pt.g0_overlap = inner(g0, st.f_prev);
    run.traj.points.push_back(std::move(pt));

    prev_step = run.traj.points.back().omega_step;
    gamma_prev = st.gamma;
    omega_prev = st.omega;
    if (opts.store_omega) run.omega_snaps.push_back(st.omega);
  }
  run.omega_final = std::move(st.omega);
  return run;
}

}  // namespace ampse
