#include "ampse/state_evolution.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>

#include "ampse/errors.h"
#include "ampse/numerics.h"
#include "ampse/prox.h"
#include "ampse/threading.h"

namespace ampse {

namespace {

// All fixed-point-family estimators draw the same per-sample pattern
// (G0, one label row, G, G', G''), even when G'/G'' go unused, so common
// random numbers line up exactly across expectations / t_map / polish calls.
struct SampleDraw {
  double G0[kMaxK];
  double y[kMaxK];
  double G[kMaxK];
  double Gp[kMaxK];
  double Gpp[kMaxK];
};

// out = row * M (1xK times KxK), column-major M.
inline void row_times(const double* row, const Mat& M, int K, double* out) {
  for (int j = 0; j < K; ++j) {
    double v = 0.0;
    const double* col = M.data() + static_cast<std::ptrdiff_t>(j) * K;
    for (int l = 0; l < K; ++l) v += row[l] * col[l];
    out[j] = v;
  }
}

struct ChannelSampler {
  const RowLoss* loss;
  int K;
  Mat sqrtC0;

  void draw(SplitRng& rs, SampleDraw& s) const {
    for (int k = 0; k < K; ++k) s.G0[k] = rs.normal();
    double theta0[kMaxK];
    row_times(s.G0, sqrtC0, K, theta0);
    loss->sample_y(theta0, K, rs, s.y);
    for (int k = 0; k < K; ++k) s.G[k] = rs.normal();
    for (int k = 0; k < K; ++k) s.Gp[k] = rs.normal();
    for (int k = 0; k < K; ++k) s.Gpp[k] = rs.normal();
  }
};

// Fixed-order block reduction over the sample partition.
void mc_reduce(const McConfig& mc, std::size_t width,
               const std::function<void(std::int64_t block, SplitRng&,
                                        std::int64_t base, std::int64_t count,
                                        double*)>& block_fn,
               double* out) {
  const std::int64_t nb = std::max(1, mc.num_blocks);
  const std::int64_t n = mc.num_samples;
  std::vector<double> acc(static_cast<std::size_t>(nb) * width, 0.0);
  SplitRng root(mc.seed);
  std::vector<SplitRng> streams;
  streams.reserve(nb);
  std::vector<std::int64_t> base(nb + 1, 0);
  for (std::int64_t b = 0; b < nb; ++b) {
    streams.push_back(root.split(static_cast<std::uint64_t>(b)));
    base[b + 1] = base[b] + n / nb + (b < n % nb ? 1 : 0);
  }
  parallel_blocks(nb, [&](std::int64_t b) {
    block_fn(b, streams[static_cast<std::size_t>(b)], base[b], base[b + 1] - base[b],
             acc.data() + static_cast<std::size_t>(b) * width);
  }, mc.threads);
  std::fill(out, out + width, 0.0);
  for (std::int64_t b = 0; b < nb; ++b) {
    const double* a = acc.data() + static_cast<std::size_t>(b) * width;
    for (std::size_t i = 0; i < width; ++i) out[i] += a[i];
  }
}

Mat mat_from(const double* p, int rows, int cols, double scale) {
  Mat m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = p[j * rows + i] * scale;
  }
  return m;
}

// Standard error of the mean from (sum, sum of squares).
Mat se_from(const double* sum, const double* sumsq, int K, std::int64_t n) {
  Mat se(K, K);
  const double dn = static_cast<double>(n);
  for (int j = 0; j < K; ++j) {
    for (int i = 0; i < K; ++i) {
      const double mean = sum[j * K + i] / dn;
      const double var = std::max(0.0, sumsq[j * K + i] / dn - mean * mean);
      se(i, j) = std::sqrt(var / dn);
    }
  }
  return se;
}

Mat symmetrized(const Mat& a) { return (a + a.transpose()) / 2.0; }

// psd_sqrt with a caller-chosen clamp window (the public one is pinned to
// -1e-10; T-map inputs are allowed margin -1e-8 by contract).
Mat psd_sqrt_clamped(const Mat& C, double tol) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(C));
  Eigen::VectorXd lambda = es.eigenvalues();
  if (lambda.minCoeff() < -tol) {
    throw InvalidInputError("psd sqrt: eigenvalue " + std::to_string(lambda.minCoeff()) +
                            " below -" + std::to_string(tol));
  }
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    lambda(i) = lambda(i) > 0.0 ? std::sqrt(lambda(i)) : 0.0;
  }
  Mat s = es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
  return symmetrized(s);
}

Mat checked_v(const Mat& V) {
  Mat Vs = symmetrized(V);
  Eigen::LLT<Mat> llt(Vs);
  if (llt.info() != Eigen::Success) {
    throw InvalidInputError("state evolution: V is not positive definite");
  }
  return Vs;
}

[[noreturn]] void rethrow_with_sample(const ConvergenceError& e, std::int64_t idx) {
  throw ConvergenceError(std::string(e.what()) + " (sample " + std::to_string(idx) + ")",
                         e.residual());
}

}  // namespace

McMoments expectations(const Mat& B, const Mat& C, const Mat& V, const Mat& C0,
                       const RowLoss& loss, const McConfig& mc, unsigned wants) {
  const int K = static_cast<int>(V.rows());
  if (K > kMaxK) throw InvalidInputError("expectations: K exceeds kMaxK");
  const Mat Vs = checked_v(V);
  const Mat sqrtC = psd_sqrt_clamped(C, 1e-10);
  const ChannelSampler sampler{&loss, K, psd_sqrt_clamped(C0, 1e-10)};

  const std::size_t kk = static_cast<std::size_t>(K) * K;
  const bool want_sq = wants & kWantSecondMoments;
  const bool want_kron = wants & kWantKron;
  const bool want_stein = wants & kWantStein;

  // Accumulator layout: Q, M, S, then optional blocks.
  std::size_t off = 3 * kk;
  const std::size_t off_sq = want_sq ? (off += 3 * kk, off - 3 * kk) : 0;
  const std::size_t off_kron = want_kron ? (off += kk * kk, off - kk * kk) : 0;
  const std::size_t off_stein = want_stein ? (off += 3 * kk, off - 3 * kk) : 0;
  const std::size_t width = off;

  std::vector<double> total(width);
  mc_reduce(mc, width,
            [&](std::int64_t /*b*/, SplitRng& rs, std::int64_t sample_base,
                std::int64_t count, double* acc) {
              ProxWorkspace ws;
              SampleDraw s;
              double gamma[kMaxK], m[kMaxK], f[kMaxK], fp[kMaxK * kMaxK];
              double* aq = acc;
              double* am = acc + kk;
              double* as = acc + 2 * kk;
              for (std::int64_t i = 0; i < count; ++i) {
                sampler.draw(rs, s);
                row_times(s.G0, B, K, gamma);
                double psi[kMaxK];
                row_times(s.G, sqrtC, K, psi);
                for (int k = 0; k < K; ++k) gamma[k] += psi[k];
                try {
                  prox_row(gamma, s.y, K, loss, Vs.data(), ws, m, f, fp, nullptr);
                } catch (const ConvergenceError& e) {
                  rethrow_with_sample(e, sample_base + i);
                }
                for (std::size_t t = 0; t < kk; ++t) aq[t] += fp[t];
                for (int j = 0; j < K; ++j) {
                  for (int l = 0; l < K; ++l) {
                    am[j * K + l] += s.G0[l] * f[j];
                    as[j * K + l] += f[l] * f[j];
                  }
                }
                if (want_sq) {
                  double* q2 = acc + off_sq;
                  double* m2 = q2 + kk;
                  double* s2 = m2 + kk;
                  for (std::size_t t = 0; t < kk; ++t) q2[t] += fp[t] * fp[t];
                  for (int j = 0; j < K; ++j) {
                    for (int l = 0; l < K; ++l) {
                      const double mv = s.G0[l] * f[j];
                      const double sv = f[l] * f[j];
                      m2[j * K + l] += mv * mv;
                      s2[j * K + l] += sv * sv;
                    }
                  }
                }
                if (want_kron) {
                  double* kr = acc + off_kron;
                  // kron(f', f')((i,p),(j,q)) = f'(i,j) f'(p,q)
                  for (int j = 0; j < K; ++j) {
                    for (int q = 0; q < K; ++q) {
                      const std::size_t colbase =
                          (static_cast<std::size_t>(j) * K + q) * kk;
                      for (int i2 = 0; i2 < K; ++i2) {
                        const double a = fp[j * K + i2];
                        for (int p = 0; p < K; ++p) {
                          kr[colbase + static_cast<std::size_t>(i2) * K + p] +=
                              a * fp[q * K + p];
                        }
                      }
                    }
                  }
                }
                if (want_stein) {
                  double* gtf = acc + off_stein;
                  double* dif = gtf + kk;
                  double* difsq = dif + kk;
                  for (int j = 0; j < K; ++j) {
                    for (int l = 0; l < K; ++l) {
                      double sc = 0.0;
                      for (int t = 0; t < K; ++t) sc += sqrtC(l, t) * fp[j * K + t];
                      const double gv = s.G[l] * f[j];
                      gtf[j * K + l] += gv;
                      const double dv = gv - sc;
                      dif[j * K + l] += dv;
                      difsq[j * K + l] += dv * dv;
                    }
                  }
                }
              }
            },
            total.data());

  McMoments out;
  out.n = mc.num_samples;
  const double inv_n = 1.0 / static_cast<double>(mc.num_samples);
  out.Q = mat_from(total.data(), K, K, inv_n);
  out.M = mat_from(total.data() + kk, K, K, inv_n);
  out.S = mat_from(total.data() + 2 * kk, K, K, inv_n);
  if (want_sq) {
    out.Q_se = se_from(total.data(), total.data() + off_sq, K, out.n);
    out.M_se = se_from(total.data() + kk, total.data() + off_sq + kk, K, out.n);
    out.S_se = se_from(total.data() + 2 * kk, total.data() + off_sq + 2 * kk, K, out.n);
  }
  if (want_kron) {
    out.kron_ff = mat_from(total.data() + off_kron, K * K, K * K, inv_n);
  }
  if (want_stein) {
    out.stein_gtf = mat_from(total.data() + off_stein, K, K, inv_n);
    out.stein_diff = mat_from(total.data() + off_stein + kk, K, K, inv_n);
    out.stein_diff_se =
        se_from(total.data() + off_stein + kk, total.data() + off_stein + 2 * kk, K, out.n);
  }
  return out;
}

FixedPoint solve_fixed_point(int K, double alpha, double lambda0, const Mat& C0,
                             const std::string& channel, const McConfig& mc,
                             const SolveOptions& opts) {
  const RowLoss& loss = loss_by_name(channel);
  FixedPoint fp;
  fp.K = K;
  fp.alpha = alpha;
  fp.lambda0 = lambda0;
  fp.channel = channel;
  fp.C0 = C0;
  fp.mc_samples = mc.num_samples;
  fp.seed = mc.seed;

  const Mat I = Mat::Identity(K, K);
  Mat V = lambda0 > 0 ? Mat(lambda0 * I) : Mat(1e-3 * I);
  Mat B = Mat::Zero(K, K);
  Mat C = Mat::Zero(K, K);

  // Initialization: C = alpha E[f(0;Y)^T f(0;Y)] (B = 0, C = 0 gives Gamma = 0).
  {
    McMoments m0 = expectations(B, C, V, C0, loss, mc);
    C = alpha * m0.S;
  }

  double eta = opts.damping;
  double prev_update = std::numeric_limits<double>::infinity();
  int increases = 0;

  for (int sweep = 1; sweep <= opts.max_iter; ++sweep) {
    fp.sweeps = sweep;
    McMoments mom = expectations(B, C, V, C0, loss, mc);

    Eigen::FullPivLU<Mat> lu(I + alpha * mom.Q);
    // (I + alpha Q) can pass exactly through a pole (e.g. the K=1 squared
    // channel at V = lambda0); fall back to the non-inverting rearrangement
    // V <- lambda0 I - alpha Q V for such sweeps.
    Mat V_raw = lu.isInvertible() ? Mat(lambda0 * lu.inverse())
                                  : Mat(lambda0 * I - alpha * mom.Q * V);
    fp.max_v_asym = std::max(fp.max_v_asym,
                             (V_raw - V_raw.transpose()).cwiseAbs().maxCoeff());
    Mat V_new = symmetrized(V_raw);
    Mat B_new = (alpha / lambda0) * mom.M * V_new;
    Mat C_new = alpha * mom.S;

    const double update = std::max({(V_new - V).norm(), (B_new - B).norm(),
                                    (C_new - C).norm()});
    V += eta * (V_new - V);
    B += eta * (B_new - B);
    C += eta * (C_new - C);

    Eigen::LLT<Mat> llt(V);
    if (lambda0 <= 0.0 || llt.info() != Eigen::Success) {
      fp.status = FpStatus::v_not_pd;
      fp.message = "V lost positive definiteness (lambda0 = " +
                   std::to_string(lambda0) + ")";
      fp.Bstar = B; fp.Cstar = C; fp.Vstar = V; fp.Qstar = mom.Q;
      fp.final_update = update;
      return fp;
    }

    fp.final_update = update;
    if (update <= opts.tol) {
      fp.status = FpStatus::converged;
      break;
    }
    if (update > prev_update) {
      if (++increases >= 3) {
        eta = std::max(opts.min_damping, eta / 2.0);
        increases = 0;
      }
    } else {
      increases = 0;
    }
    prev_update = update;
  }

  fp.Bstar = B;
  fp.Cstar = C;
  fp.Vstar = V;

  if (fp.status != FpStatus::converged) {
    fp.status = FpStatus::max_iter;
    fp.message = "fixed point not converged after " + std::to_string(fp.sweeps) +
                 " sweeps (last update " + std::to_string(fp.final_update) + ")";
    fp.Qstar = Mat::Zero(K, K);
    return fp;
  }

  // Q* (and rho_AT) from one more common-random-numbers pass at the solution.
  {
    McMoments mom = expectations(B, C, V, C0, loss, mc,
                                 opts.estimate_rho ? kWantKron : 0u);
    fp.Qstar = mom.Q;
    if (opts.estimate_rho) fp.rho_at = spectral_radius(alpha * mom.kron_ff);
    fp.residuals.identity =
        (alpha * fp.Qstar * V - (lambda0 * I - V)).norm();
  }

  // Residuals on a fresh stream to expose Monte Carlo bias.
  {
    McConfig fresh = mc;
    fresh.seed = SplitRng(mc.seed).split("residuals").stream_id();
    McMoments mom = expectations(B, C, V, C0, loss, fresh, kWantSecondMoments);
    fp.residuals.v_eq = (V - (lambda0 * I - alpha * mom.Q * V)).norm();
    fp.residuals.b_eq = (B - (alpha / lambda0) * mom.M * V).norm();
    fp.residuals.c_eq = (C - alpha * mom.S).norm();
    fp.residuals.v_eq_se = alpha * mom.Q_se.norm() * V.operatorNorm();
    fp.residuals.b_eq_se = (alpha / lambda0) * mom.M_se.norm() * V.operatorNorm();
    fp.residuals.c_eq_se = alpha * mom.S_se.norm();
  }
  return fp;
}

double rho_at_estimate(const FixedPoint& fp, const McConfig& mc) {
  McMoments mom = expectations(fp.Bstar, fp.Cstar, fp.Vstar, fp.C0, fp.loss(), mc,
                               kWantKron);
  return spectral_radius(fp.alpha * mom.kron_ff);
}

namespace {

// Shared implementation of the two-sided map; `cstar` is the diagonal
// covariance (the polished one inside deviation_sequence).
TMapResult t_map_impl(const Mat& X, const Mat& cstar, const FixedPoint& fp,
                      const McConfig& mc, bool want_se) {
  const int K = fp.K;
  const std::size_t kk = static_cast<std::size_t>(K) * K;
  const Mat Vs = checked_v(fp.Vstar);
  const Mat sqrtX = psd_sqrt_clamped(X, 1e-8);
  const Mat sqrtR = psd_sqrt_clamped(cstar - X, 1e-8);
  const ChannelSampler sampler{&fp.loss(), K, psd_sqrt_clamped(fp.C0, 1e-10)};
  const Mat& B = fp.Bstar;

  const std::size_t width = want_se ? 2 * kk : kk;
  std::vector<double> total(width);
  mc_reduce(mc, width,
            [&](std::int64_t, SplitRng& rs, std::int64_t sample_base,
                std::int64_t count, double* acc) {
              ProxWorkspace ws;
              SampleDraw s;
              double base[kMaxK], shared[kMaxK], g1[kMaxK], g2[kMaxK];
              double m[kMaxK], f1[kMaxK], f2[kMaxK];
              for (std::int64_t i = 0; i < count; ++i) {
                sampler.draw(rs, s);
                row_times(s.G0, B, K, base);
                row_times(s.G, sqrtX, K, shared);
                for (int k = 0; k < K; ++k) base[k] += shared[k];
                row_times(s.Gp, sqrtR, K, g1);
                row_times(s.Gpp, sqrtR, K, g2);
                for (int k = 0; k < K; ++k) {
                  g1[k] += base[k];
                  g2[k] += base[k];
                }
                try {
                  prox_row(g1, s.y, K, fp.loss(), Vs.data(), ws, m, f1, nullptr, nullptr);
                  prox_row(g2, s.y, K, fp.loss(), Vs.data(), ws, m, f2, nullptr, nullptr);
                } catch (const ConvergenceError& e) {
                  rethrow_with_sample(e, sample_base + i);
                }
                for (int j = 0; j < K; ++j) {
                  for (int l = 0; l < K; ++l) {
                    // symmetrized per sample
                    const double v = 0.5 * (f1[l] * f2[j] + f2[l] * f1[j]);
                    acc[j * K + l] += v;
                    if (want_se) acc[kk + j * K + l] += v * v;
                  }
                }
              }
            },
            total.data());

  TMapResult out;
  out.value = fp.alpha * mat_from(total.data(), K, K, 1.0 / static_cast<double>(mc.num_samples));
  if (want_se) {
    out.se = fp.alpha * se_from(total.data(), total.data() + kk, K, mc.num_samples).norm();
  }
  return out;
}

}  // namespace

TMapResult t_map(const Mat& X, const FixedPoint& fp, const McConfig& mc,
                 bool want_se) {
  const Mat Z = Mat::Zero(fp.K, fp.K);
  if (psd_order_margin(Z, symmetrized(X)) < -1e-8 ||
      psd_order_margin(symmetrized(X), fp.Cstar) < -1e-8) {
    throw InvalidInputError("t_map: ordering violation (need 0 <= X <= C*)");
  }
  return t_map_impl(symmetrized(X), fp.Cstar, fp, mc, want_se);
}

OrderedPairMargins ordered_pair_margins(const Mat& Xin, const Mat& Yin,
                                        const FixedPoint& fp, const McConfig& mc) {
  const int K = fp.K;
  const std::size_t kk = static_cast<std::size_t>(K) * K;
  const Mat X = symmetrized(Xin);
  const Mat Y = symmetrized(Yin);
  const Mat Z = Mat::Zero(K, K);
  if (psd_order_margin(Z, Y) < -1e-8 || psd_order_margin(Y, X) < -1e-8 ||
      psd_order_margin(X, fp.Cstar) < -1e-8) {
    throw InvalidInputError("ordered_pair_margins: need 0 <= Y <= X <= C*");
  }
  const Mat Vs = checked_v(fp.Vstar);
  const Mat sqrtX = psd_sqrt_clamped(X, 1e-8);
  const Mat sqrtRX = psd_sqrt_clamped(fp.Cstar - X, 1e-8);
  const Mat sqrtY = psd_sqrt_clamped(Y, 1e-8);
  const Mat sqrtRY = psd_sqrt_clamped(fp.Cstar - Y, 1e-8);
  const Mat sqrtC = psd_sqrt_clamped(fp.Cstar, 1e-10);
  const Mat D = X - Y;
  const ChannelSampler sampler{&fp.loss(), K, psd_sqrt_clamped(fp.C0, 1e-10)};
  const Mat& B = fp.Bstar;

  // acc: diff, diffsq, gap, gapsq
  const std::size_t width = 4 * kk;
  std::vector<double> total(width);
  mc_reduce(mc, width,
            [&](std::int64_t, SplitRng& rs, std::int64_t sample_base,
                std::int64_t count, double* acc) {
              ProxWorkspace ws;
              SampleDraw s;
              double base[kMaxK], tmp[kMaxK], m[kMaxK];
              double gx1[kMaxK], gx2[kMaxK], gy1[kMaxK], gy2[kMaxK], gstar[kMaxK];
              double fx1[kMaxK], fx2[kMaxK], fy1[kMaxK], fy2[kMaxK], fs[kMaxK];
              double fpstar[kMaxK * kMaxK], dfp[kMaxK * kMaxK];
              for (std::int64_t i = 0; i < count; ++i) {
                sampler.draw(rs, s);
                row_times(s.G0, B, K, base);

                auto field = [&](const Mat& sq, const Mat& sr, const double* gfresh,
                                 double* out) {
                  row_times(s.G, sq, K, out);
                  row_times(gfresh, sr, K, tmp);
                  for (int k = 0; k < K; ++k) out[k] += base[k] + tmp[k];
                };
                field(sqrtX, sqrtRX, s.Gp, gx1);
                field(sqrtX, sqrtRX, s.Gpp, gx2);
                field(sqrtY, sqrtRY, s.Gp, gy1);
                field(sqrtY, sqrtRY, s.Gpp, gy2);
                row_times(s.G, sqrtC, K, gstar);
                for (int k = 0; k < K; ++k) gstar[k] += base[k];

                try {
                  prox_row(gx1, s.y, K, fp.loss(), Vs.data(), ws, m, fx1, nullptr, nullptr);
                  prox_row(gx2, s.y, K, fp.loss(), Vs.data(), ws, m, fx2, nullptr, nullptr);
                  prox_row(gy1, s.y, K, fp.loss(), Vs.data(), ws, m, fy1, nullptr, nullptr);
                  prox_row(gy2, s.y, K, fp.loss(), Vs.data(), ws, m, fy2, nullptr, nullptr);
                  prox_row(gstar, s.y, K, fp.loss(), Vs.data(), ws, m, fs, fpstar, nullptr);
                } catch (const ConvergenceError& e) {
                  rethrow_with_sample(e, sample_base + i);
                }

                // dfp = f'* ^T D f'*  (paper index convention: rows of f' are
                // gamma components, so the quadratic form uses plain indexing)
                for (int j = 0; j < K; ++j) {
                  for (int l = 0; l < K; ++l) {
                    double v = 0.0;
                    for (int a = 0; a < K; ++a) {
                      double da = 0.0;
                      for (int b = 0; b < K; ++b) da += D(a, b) * fpstar[j * K + b];
                      v += fpstar[l * K + a] * da;
                    }
                    dfp[j * K + l] = v;
                  }
                }
                for (int j = 0; j < K; ++j) {
                  for (int l = 0; l < K; ++l) {
                    const double diff =
                        0.5 * (fx1[l] * fx2[j] + fx2[l] * fx1[j]) -
                        0.5 * (fy1[l] * fy2[j] + fy2[l] * fy1[j]);
                    const double bound =
                        0.5 * (dfp[j * K + l] + dfp[l * K + j]);
                    const double gap = bound - diff;
                    acc[j * K + l] += diff;
                    acc[kk + j * K + l] += diff * diff;
                    acc[2 * kk + j * K + l] += gap;
                    acc[3 * kk + j * K + l] += gap * gap;
                  }
                }
              }
            },
            total.data());

  const double inv_n = 1.0 / static_cast<double>(mc.num_samples);
  Mat diff = fp.alpha * mat_from(total.data(), K, K, inv_n);
  Mat gap = fp.alpha * mat_from(total.data() + 2 * kk, K, K, inv_n);
  OrderedPairMargins out;
  out.monotonicity = psd_order_margin(Mat(Mat::Zero(K, K)), symmetrized(diff));
  out.upper_bound = psd_order_margin(Mat(Mat::Zero(K, K)), symmetrized(gap));
  out.mono_se = fp.alpha * se_from(total.data(), total.data() + kk, K, mc.num_samples).norm();
  out.upper_se =
      fp.alpha * se_from(total.data() + 2 * kk, total.data() + 3 * kk, K, mc.num_samples).norm();
  return out;
}

DeviationSequence deviation_sequence(const FixedPoint& fp, const McConfig& mc,
                                     int T_steps) {
  if (!fp.converged()) {
    throw InvalidInputError("deviation_sequence: fixed point not converged");
  }
  const int K = fp.K;

  // Polish C* to the sampled C-equation fixed point under this stream.
  Mat cstar = fp.Cstar;
  for (int it = 0; it < 400; ++it) {
    McMoments mom = expectations(fp.Bstar, cstar, fp.Vstar, fp.C0, fp.loss(), mc);
    Mat next = fp.alpha * mom.S;
    const double delta = (next - cstar).norm();
    cstar = next;
    if (delta <= 1e-12 * std::max(1.0, cstar.norm())) break;
  }

  DeviationSequence out;
  out.cstar = cstar;
  Mat X = Mat::Zero(K, K);
  for (int t = 1; t <= T_steps; ++t) {
    out.deltas.push_back(cstar - X);
    out.offdiag.push_back(X);
    if (t == T_steps) break;
    X = t_map_impl(X, cstar, fp, mc, false).value;
    // clip the tiny eigen-overshoots so sqrt(C*-X) stays defined
    Eigen::SelfAdjointEigenSolver<Mat> es(cstar - X);
    if (es.eigenvalues().minCoeff() < 0.0) {
      Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
      X = cstar - Mat(es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose());
      X = symmetrized(X);
    }
  }
  for (std::size_t t = 0; t + 1 < out.deltas.size(); ++t) {
    const double a = out.deltas[t].norm();
    const double b = out.deltas[t + 1].norm();
    out.ratios.push_back(a > 0 ? b / a : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

std::vector<std::vector<Mat>> two_time_cholesky(const TwoTimeCov& cov,
                                                double pivot_tol) {
  const std::size_t T1 = cov.C.size();
  std::vector<std::vector<Mat>> B(T1);
  for (std::size_t t = 0; t < T1; ++t) B[t].resize(t + 1);
  for (std::size_t s = 0; s < T1; ++s) {
    Mat A = cov.C[s][s];
    for (std::size_t k = 0; k < s; ++k) A -= B[s][k] * B[s][k].transpose();
    try {
      B[s][s] = chol_lower(symmetrized(A), pivot_tol);
    } catch (const NotPositiveDefiniteError& e) {
      throw NotPositiveDefiniteError(
          "two_time_cholesky: diagonal block " + std::to_string(s + 1) +
          " not PD (" + e.what() + ")",
          static_cast<int>(s + 1));
    }
    for (std::size_t t = s + 1; t < T1; ++t) {
      Mat R = cov.C[t][s];
      for (std::size_t k = 0; k < s; ++k) R -= B[t][k] * B[s][k].transpose();
      B[t][s] = B[s][s]
                    .triangularView<Eigen::Lower>()
                    .solve(R.transpose())
                    .transpose();
    }
  }
  return B;
}

SeTrajectory se_trajectory(const Mat& B1, const Mat& C11, int T_steps,
                           const FixedPoint& fp, const McConfig& mc) {
  const int K = fp.K;
  const std::size_t kk = static_cast<std::size_t>(K) * K;
  const Mat Vs = checked_v(fp.Vstar);
  const ChannelSampler sampler{&fp.loss(), K, psd_sqrt_clamped(fp.C0, 1e-10)};

  SeTrajectory out;
  out.B.push_back(B1);
  out.cov.C.assign(1, {symmetrized(C11)});

  for (int t = 1; t <= T_steps; ++t) {
    auto chol = two_time_cholesky(out.cov);

    // One pass estimating E[f'(G^(t))], E[G0^T f(G^(t))] and
    // E[f(G^(t))^T f(G^(s))] for all s <= t.
    const std::size_t width = (2 + static_cast<std::size_t>(t)) * kk;
    std::vector<double> total(width);
    McConfig step_mc = mc;
    step_mc.seed = SplitRng(mc.seed).split("se-step").split(t).stream_id();
    mc_reduce(step_mc, width,
              [&](std::int64_t, SplitRng& rs, std::int64_t sample_base,
                  std::int64_t count, double* acc) {
                ProxWorkspace ws;
                double G0[kMaxK], y[kMaxK], theta0[kMaxK];
                std::vector<double> G(static_cast<std::size_t>(t) * K);
                std::vector<double> gam(static_cast<std::size_t>(t) * K);
                std::vector<double> f(static_cast<std::size_t>(t) * K);
                double m[kMaxK], fprime[kMaxK * kMaxK];
                for (std::int64_t i = 0; i < count; ++i) {
                  for (int k = 0; k < K; ++k) G0[k] = rs.normal();
                  row_times(G0, sampler.sqrtC0, K, theta0);
                  fp.loss().sample_y(theta0, K, rs, y);
                  for (auto& g : G) g = rs.normal();
                  // Gamma^(s) = G0 B^(s) + sum_{a<=s} G^(a) chol[s][a]^T
                  for (int s = 1; s <= t; ++s) {
                    double* gs = gam.data() + static_cast<std::size_t>(s - 1) * K;
                    row_times(G0, out.B[static_cast<std::size_t>(s - 1)], K, gs);
                    for (int a = 1; a <= s; ++a) {
                      const Mat& L = chol[static_cast<std::size_t>(s - 1)]
                                        [static_cast<std::size_t>(a - 1)];
                      const double* ga = G.data() + static_cast<std::size_t>(a - 1) * K;
                      for (int j = 0; j < K; ++j) {
                        double v = 0.0;
                        for (int l = 0; l < K; ++l) v += ga[l] * L(j, l);
                        gs[j] += v;
                      }
                    }
                  }
                  try {
                    for (int s = 1; s <= t; ++s) {
                      prox_row(gam.data() + static_cast<std::size_t>(s - 1) * K, y, K,
                               fp.loss(), Vs.data(), ws, m,
                               f.data() + static_cast<std::size_t>(s - 1) * K,
                               s == t ? fprime : nullptr, nullptr);
                    }
                  } catch (const ConvergenceError& e) {
                    rethrow_with_sample(e, sample_base + i);
                  }
                  const double* ft = f.data() + static_cast<std::size_t>(t - 1) * K;
                  for (std::size_t u = 0; u < kk; ++u) acc[u] += fprime[u];
                  for (int j = 0; j < K; ++j) {
                    for (int l = 0; l < K; ++l) acc[kk + j * K + l] += G0[l] * ft[j];
                  }
                  for (int s = 1; s <= t; ++s) {
                    const double* fs = f.data() + static_cast<std::size_t>(s - 1) * K;
                    double* as = acc + (1 + static_cast<std::size_t>(s)) * kk;
                    for (int j = 0; j < K; ++j) {
                      for (int l = 0; l < K; ++l) as[j * K + l] += ft[l] * fs[j];
                    }
                  }
                }
              },
              total.data());

    const double inv_n = 1.0 / static_cast<double>(mc.num_samples);
    Mat Qt = mat_from(total.data(), K, K, inv_n);
    Mat Mg = mat_from(total.data() + kk, K, K, inv_n);
    out.Q.push_back(Qt);

    Mat B_next = fp.alpha * Mg - fp.alpha * out.B.back() * Qt;
    out.B.push_back(B_next);

    // grow the covariance table: row/column t+1 (1-based)
    const std::size_t tn = static_cast<std::size_t>(t) + 1;
    out.cov.C.resize(tn);
    for (auto& row : out.cov.C) row.resize(tn, Mat::Zero(K, K));
    out.cov.C[tn - 1][0] = Mat::Zero(K, K);  // C^(1,t) = 0 for t > 1
    out.cov.C[0][tn - 1] = Mat::Zero(K, K);
    for (int s = 1; s <= t; ++s) {
      // accumulated entry (l, j) = mean ft_l fs_j, so alpha * cross is
      // C^(t+1, s+1) directly
      Mat cross = mat_from(total.data() + (1 + static_cast<std::size_t>(s)) * kk, K, K,
                           inv_n);
      Mat Cts = fp.alpha * cross;
      out.cov.C[tn - 1][static_cast<std::size_t>(s)] = Cts;
      out.cov.C[static_cast<std::size_t>(s)][tn - 1] = Cts.transpose();
    }
    out.cov.C[tn - 1][tn - 1] = symmetrized(out.cov.C[tn - 1][tn - 1]);
  }
  return out;
}

}  // namespace ampse
