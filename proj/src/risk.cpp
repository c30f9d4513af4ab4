#include "ampse/risk.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "ampse/errors.h"
#include "ampse/threading.h"

namespace ampse {

namespace {

double data_objective(const TallMatrix& theta, const TallMatrix& y,
                      const RowLoss& loss) {
  double obj = 0.0;
  const int K = static_cast<int>(theta.cols());
  double th[kMaxK], yy[kMaxK];
  for (Index i = 0; i < theta.rows(); ++i) {
    for (int k = 0; k < K; ++k) {
      th[k] = theta(i, k);
      yy[k] = y(i, k);
    }
    obj += loss.value(th, yy, K);
  }
  return obj;
}

double sq_frobenius(const TallMatrix& a) {
  double s = 0.0;
  for (Index i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
  return s;
}

// Full gradient G = lambda0 omega + X^T l'(X omega; y); returns theta = X omega
// through the out-param so the objective reuses it.
TallMatrix full_gradient(const DesignMatrix& X, const TallMatrix& y,
                         const TallMatrix& omega, double lambda0,
                         const RowLoss& loss, int threads, TallMatrix* theta_out) {
  TallMatrix theta = design_times(X, omega, threads);
  TallMatrix lgrad(theta.rows(), theta.cols());
  apply_loss_grad(theta, y, loss, lgrad, threads);
  TallMatrix G = design_transpose_times(X, lgrad, threads);
  add_scaled(G, lambda0, omega);
  if (theta_out != nullptr) *theta_out = std::move(theta);
  return G;
}

SolveReport solve_newton(const DesignMatrix& X, const TallMatrix& y,
                         double lambda0, const RowLoss& loss,
                         const SolverOptions& opts) {
  const Index d = X.d();
  const Index n = X.n();
  const int K = static_cast<int>(y.cols());
  const Index dK = d * K;
  const double sqrt_d = std::sqrt(static_cast<double>(d));

  SolveReport rep;
  rep.method = "newton";
  rep.omega_star = TallMatrix(d, K);

  Mat H(dK, dK);
  Eigen::VectorXd gvec(dK), delta(dK);
  double th[kMaxK], yy[kMaxK], grad[kMaxK];
  std::vector<double> hess(static_cast<std::size_t>(K) * K);

  for (int it = 0; it < opts.newton_cap; ++it) {
    TallMatrix theta;
    TallMatrix G = full_gradient(X, y, rep.omega_star, lambda0, loss,
                                 opts.threads, &theta);
    rep.grad_norm = frobenius_norm(G) / sqrt_d;
    rep.iterations = it;
    rep.objective = data_objective(theta, y, loss) +
                    0.5 * lambda0 * sq_frobenius(rep.omega_star);
    if (rep.grad_norm <= opts.tol) {
      rep.converged = true;
      return rep;
    }

    // H = lambda0 I + sum_i kron(l''_i, x_i x_i^T) on the column-stacked
    // vectorization of omega.
    H.setZero();
    double value;
    for (Index i = 0; i < n; ++i) {
      for (int k = 0; k < K; ++k) {
        th[k] = theta(i, k);
        yy[k] = y(i, k);
      }
      loss.eval(th, yy, K, &value, grad, hess.data());
      const double* xi = X.row(i);
      for (int kb = 0; kb < K; ++kb) {
        for (int lb = 0; lb <= kb; ++lb) {
          const double c = hess[static_cast<std::size_t>(kb) * K + lb];
          if (c == 0.0) continue;
          auto block = H.block(lb * d, kb * d, d, d);
          for (Index a = 0; a < d; ++a) {
            const double ca = c * xi[a];
            if (ca == 0.0) continue;
            for (Index b = 0; b < d; ++b) block(b, a) += ca * xi[b];
          }
        }
      }
    }
    for (int kb = 0; kb < K; ++kb) {
      for (int lb = 0; lb < kb; ++lb) {
        H.block(kb * d, lb * d, d, d) = H.block(lb * d, kb * d, d, d).transpose();
      }
    }
    H.diagonal().array() += lambda0;

    for (int k = 0; k < K; ++k) {
      for (Index a = 0; a < d; ++a) gvec(k * d + a) = G(a, k);
    }
    Eigen::LLT<Mat> llt(H);
    if (llt.info() != Eigen::Success) {
      throw ConvergenceError("solve_ridge_softmax: Newton Hessian not PD", rep.grad_norm);
    }
    delta = llt.solve(gvec);

    // backtracking on the objective; slope of the Newton direction is -g.delta
    const double slope = gvec.dot(delta);
    double step = 1.0;
    TallMatrix trial(d, K);
    for (int bt = 0; bt < 50; ++bt) {
      for (int k = 0; k < K; ++k) {
        for (Index a = 0; a < d; ++a) {
          trial(a, k) = rep.omega_star(a, k) - step * delta(k * d + a);
        }
      }
      const double obj = ridge_objective(X, y, trial, lambda0, loss, opts.threads);
      if (obj <= rep.objective - 1e-4 * step * slope) break;
      step *= 0.5;
    }
    rep.omega_star = std::move(trial);
  }
  TallMatrix G = full_gradient(X, y, rep.omega_star, lambda0, loss, opts.threads,
                               nullptr);
  rep.grad_norm = frobenius_norm(G) / sqrt_d;
  rep.converged = rep.grad_norm <= opts.tol;
  return rep;
}

SolveReport solve_gd(const DesignMatrix& X, const TallMatrix& y, double lambda0,
                     const RowLoss& loss, const SolverOptions& opts) {
  const Index d = X.d();
  const int K = static_cast<int>(y.cols());
  const double sqrt_d = std::sqrt(static_cast<double>(d));
  const double alpha = static_cast<double>(X.n()) / static_cast<double>(d);
  const double step = 1.0 / (lambda0 + alpha * loss.hess_bound());

  SolveReport rep;
  rep.method = "gd";
  rep.omega_star = TallMatrix(d, K);

  for (int it = 0; it < opts.gd_cap; ++it) {
    TallMatrix theta;
    TallMatrix G = full_gradient(X, y, rep.omega_star, lambda0, loss,
                                 opts.threads, &theta);
    rep.grad_norm = frobenius_norm(G) / sqrt_d;
    rep.iterations = it;
    rep.objective = data_objective(theta, y, loss) +
                    0.5 * lambda0 * sq_frobenius(rep.omega_star);
    if (rep.grad_norm <= opts.tol) {
      rep.converged = true;
      return rep;
    }
    add_scaled(rep.omega_star, -step, G);
  }
  rep.converged = false;
  return rep;
}

}  // namespace

double ridge_objective(const DesignMatrix& X, const TallMatrix& y,
                       const TallMatrix& omega, double lambda0,
                       const RowLoss& loss, int threads) {
  TallMatrix theta = design_times(X, omega, threads);
  return data_objective(theta, y, loss) + 0.5 * lambda0 * sq_frobenius(omega);
}

SolveReport solve_ridge_softmax(const DesignMatrix& X, const TallMatrix& y,
                                double lambda0, const RowLoss& loss,
                                const SolverOptions& opts) {
  if (lambda0 <= 0.0) {
    throw InvalidInputError("solve_ridge_softmax: lambda0 must be > 0");
  }
  if (X.n() != y.rows()) throw DimensionError("solve_ridge_softmax: n mismatch");
  const Index dK = X.d() * y.cols();
  return dK <= 3000 ? solve_newton(X, y, lambda0, loss, opts)
                    : solve_gd(X, y, lambda0, loss, opts);
}

Theorem3Report theorem3_check(const SolveReport& solve, const AmpRun& run,
                              const DesignMatrix& X, const FixedPoint& fp) {
  if (run.omega_snaps.empty()) {
    throw InvalidInputError("theorem3_check: run was made without omega snapshots");
  }
  const Index d = solve.omega_star.rows();
  const double sqrt_d = std::sqrt(static_cast<double>(d));
  const double sqrt_alpha = std::sqrt(fp.alpha);

  Theorem3Report rep;
  rep.x_norm = design_spectral_norm(X);
  const double lamI_V =
      (fp.lambda0 * Mat::Identity(fp.K, fp.K) - fp.Vstar).operatorNorm();
  const double L = fp.loss().hess_bound();

  // Eq. (38) as printed: (2/l0)||l0 I - V*||_2 ||omega^(t)-omega^(t-1)||_F
  //                      + (L/l0)||X||_2 ||gamma^(t)-gamma^(t-1)||_F,
  // everything divided by sqrt(d); gamma norms convert by sqrt(alpha).
  for (std::size_t idx = 1; idx < run.traj.points.size(); ++idx) {
    const TrajPoint& pt = run.traj.points[idx];  // row t = idx + 1
    const int t = pt.t;
    if (static_cast<std::size_t>(t - 1) >= run.omega_snaps.size()) break;
    const double dist =
        frobenius_distance(run.omega_snaps[static_cast<std::size_t>(t - 1)],
                           solve.omega_star) /
        sqrt_d;
    const double omega_back = run.traj.points[idx - 1].omega_step;
    const double gamma_back = pt.gamma_step;
    const double bound = (2.0 / fp.lambda0) * lamI_V * omega_back +
                         (L / fp.lambda0) * rep.x_norm * gamma_back * sqrt_alpha;
    rep.t.push_back(t);
    rep.dist.push_back(dist);
    rep.bound.push_back(bound);
    if (dist > bound) rep.bound_holds = false;
  }
  rep.final_dist =
      frobenius_distance(run.omega_snaps.back(), solve.omega_star) / sqrt_d;
  return rep;
}

CorollaryReport corollary_error_check(const SolveReport& solve,
                                      const GroundTruth& gt,
                                      const FixedPoint& fp) {
  CorollaryReport rep;
  rep.lhs = [&] {
    double s = 0.0;
    for (Index i = 0; i < gt.omega0.size(); ++i) {
      const double diff = solve.omega_star.data()[i] - gt.omega0.data()[i];
      s += diff * diff;
    }
    return s / static_cast<double>(gt.omega0.rows());
  }();
  const Mat D = gt.B0 - fp.Bstar;
  rep.rhs = (D.transpose() * D + fp.Cstar).trace();
  rep.abs_gap = std::abs(rep.lhs - rep.rhs);
  rep.rel_gap = rep.rhs != 0.0 ? rep.abs_gap / rep.rhs
                               : std::numeric_limits<double>::infinity();
  return rep;
}

}  // namespace ampse
