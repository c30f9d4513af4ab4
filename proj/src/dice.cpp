#include "ampse/dice.h"

#include <cmath>
#include <limits>

#include "ampse/alloc_stats.h"
#include "ampse/errors.h"
#include "ampse/kernels.h"
#include "ampse/numerics.h"
#include "ampse/prox.h"

namespace ampse {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

DiceSide opposite(DiceSide s) {
  return s == DiceSide::n_side ? DiceSide::d_side : DiceSide::n_side;
}

}  // namespace

SplitRng dice_step_stream(const SplitRng& root, int s) {
  return root.split("dice-step").split(static_cast<std::uint64_t>(s));
}

void dice_step_draws(const SplitRng& root, int s, Index n, Index d, int K,
                     TallMatrix& u_n, TallMatrix& u_d, Mat& Z) {
  SplitRng rs = dice_step_stream(root, s);
  u_n = TallMatrix(n, K);
  u_d = TallMatrix(d, K);
  fill_gaussian(u_n, rs);
  fill_gaussian(u_d, rs);
  Z.resize(K, K);
  // GOE-block convention: off-diagonal N(0,1), diagonal N(0,2).
  for (int j = 0; j < K; ++j) {
    for (int i = 0; i <= j; ++i) {
      const double z = i == j ? std::sqrt(2.0) * rs.normal() : rs.normal();
      Z(i, j) = z;
      Z(j, i) = z;
    }
  }
}

namespace {

struct DiceRunner {
  DiceState* st;
  const FixedPoint* fp;

  // u_hat = u minus its projections onto the same-side basis blocks.
  void project_half(TallMatrix& u_half, DiceSide half_side) const {
    const double inv_m = 1.0 / static_cast<double>(st->m);
    for (std::size_t idx = 0; idx < st->v.size(); ++idx) {
      if (st->side[idx] != half_side) continue;
      Mat overlap = gram(st->v[idx], u_half) * inv_m;
      add_product(u_half, st->v[idx], Mat(-overlap));
    }
  }

  // Orthonormalizes m_cur against the same-side basis; records overlaps with
  // the whole basis (zero off-side) into st->vm_cur and appends the new block.
  void extend_basis() {
    const double inv_m = 1.0 / static_cast<double>(st->m);
    st->vm_cur.assign(st->v.size() + 1, Mat::Zero(st->K, st->K));
    TallMatrix r = st->m_cur;
    for (std::size_t idx = 0; idx < st->v.size(); ++idx) {
      if (st->side[idx] != st->m_side) continue;
      Mat overlap = gram(st->v[idx], st->m_cur) * inv_m;
      st->vm_cur[idx] = overlap;
      add_product(r, st->v[idx], Mat(-overlap));
    }
    Mat g = gram(r, r) * inv_m;
    Mat L;
    try {
      L = chol_lower(g, 1e-10);
    } catch (const NotPositiveDefiniteError& e) {
      throw RankDeficiencyError(
          "dice: iterate became linearly dependent on the basis at step " +
          std::to_string(st->s + 1) + " (" + e.what() + ")");
    }
    TallMatrix vn(r.rows(), r.cols());
    const std::size_t rows = static_cast<std::size_t>(r.rows());
    for (Index j = 0; j < r.cols(); ++j) {
      double* out = vn.col(j);
      kernels::axpy(1.0, r.col(j), out, rows);
      for (Index k = 0; k < j; ++k) kernels::axpy(-L(j, k), vn.col(k), out, rows);
      kernels::scal(1.0 / L(j, j), out, rows);
    }
    st->vm_cur[st->v.size()] = L.transpose();
    st->v.push_back(std::move(vn));
    st->side.push_back(st->m_side);
  }

  void step(const DiceOptions& opts) {
    DiceState& S = *st;
    const int s = S.s + 1;
    const int K = S.K;
    const double inv_m = 1.0 / static_cast<double>(S.m);
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(S.m));
    const DiceSide cons = opposite(S.m_side);

    extend_basis();  // v^(s), vm_cur = <v^(idx), m^(s)>

    TallMatrix u_n, u_d;
    Mat Z;
    dice_step_draws(S.root, s, S.n, S.d, K, u_n, u_d, Z);
    project_half(u_n, DiceSide::n_side);
    project_half(u_d, DiceSide::d_side);
    // carrier a = u_hat + eps, eps = v^(s) Z / sqrt(m) on the new block's side
    {
      TallMatrix& mine = S.m_side == DiceSide::n_side ? u_n : u_d;
      add_product(mine, S.v.back(), Mat(inv_sqrt_m * Z));
    }
    S.a_n.push_back(std::move(u_n));
    S.a_d.push_back(std::move(u_d));
    S.Z.push_back(Z);

    // Onsager coefficient of the packed dynamics; the sqrt(1+alpha) packing
    // of m^(s) rescales it relative to the unpacked Q's.
    Mat Qm;
    if (s == 1) {
      Qm = Mat::Zero(K, K);
    } else if (s % 2 == 1) {
      Qm = Mat::Identity(K, K) / S.sqrt1a;
    } else {
      Qm = (S.alpha / S.sqrt1a) * fp->Qstar;
    }

    const Index cons_rows = cons == DiceSide::n_side ? S.n : S.d;
    TallMatrix h(cons_rows, K);
    for (std::size_t idx = 0; idx < S.v.size(); ++idx) {
      const Mat& c = S.vm_cur[idx];
      if (c.isZero(0.0)) continue;
      const TallMatrix& half = cons == DiceSide::n_side ? S.a_n[idx] : S.a_d[idx];
      add_product(h, half, c);
    }
    for (std::size_t idx = 0; idx + 1 < S.v.size(); ++idx) {
      if (S.side[idx] != cons) continue;
      // <u_hat^(idx), m^(s)>: the eps part of the carrier lives on side[idx]
      // = cons, so the m-side half of a^(idx) is u_hat's half exactly.
      const TallMatrix& mhalf =
          S.m_side == DiceSide::n_side ? S.a_n[idx] : S.a_d[idx];
      Mat ou = gram(mhalf, S.m_cur) * inv_m;
      Mat coeff = ou;
      if (s > 1) coeff -= S.vm_prev[idx] * Qm;
      add_product(h, S.v[idx], coeff);
    }

    // eta_s: consume the cons half, repack the other side
    if (cons == DiceSide::n_side) {
      S.gamma_prev = std::move(S.gamma_cur);
      S.gamma_cur = std::move(h);
      TallMatrix f(S.n, K);
      if (opts.denoiser_override) {
        opts.denoiser_override(S.gamma_cur, S.y, f);
      } else {
        apply_denoiser(S.gamma_cur, S.y, fp->Vstar, fp->loss(), f, opts.threads);
      }
      S.f_cur = f;
      scale(f, S.sqrt1a);
      S.m_cur = std::move(f);
      S.m_side = DiceSide::n_side;
    } else {
      S.omega_cur = h;
      scale(h, S.sqrt1a);
      S.m_cur = std::move(h);
      S.m_side = DiceSide::d_side;
    }
    S.vm_prev = S.vm_cur;
    S.s = s;
  }
};

}  // namespace

DiceState dice_init(const GroundTruth& gt, const FixedPoint& fp, SplitRng& rng) {
  if (!fp.converged()) throw InvalidInputError("dice_init: fixed point not converged");
  DiceState st;
  st.root = rng;
  st.d = gt.r0.rows();
  st.K = static_cast<int>(gt.r0.cols());
  st.alpha = fp.alpha;
  st.n = static_cast<Index>(std::llround(fp.alpha * static_cast<double>(st.d)));
  st.m = st.n + st.d;
  st.sqrt1a = std::sqrt(1.0 + fp.alpha);
  const double inv_m = 1.0 / static_cast<double>(st.m);
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(st.m));

  // v^(0) = sqrt(1+alpha) [0; r0]
  {
    TallMatrix v0 = gt.r0;
    scale(v0, st.sqrt1a);
    st.v.push_back(std::move(v0));
    st.side.push_back(DiceSide::d_side);
  }

  TallMatrix u_n, u_d;
  Mat Z0;
  dice_step_draws(rng, 0, st.n, st.d, st.K, u_n, u_d, Z0);
  st.g0 = u_n;  // plays X r0: exactly standard Gaussian since <r0,r0> = I

  // labels from the generative channel applied to g0 B0
  st.y = sample_labels(product(st.g0, gt.B0), fp.loss(), rng);

  // u_hat^(0): project the d half on v^(0); carrier adds eps^(0)
  {
    Mat overlap = gram(st.v[0], u_d) * inv_m;
    add_product(u_d, st.v[0], Mat(-overlap));
    add_product(u_d, st.v[0], Mat(inv_sqrt_m * Z0));
  }
  st.a_n.push_back(std::move(u_n));
  st.a_d.push_back(std::move(u_d));
  st.Z.push_back(Z0);
  st.vm_prev.assign(1, Mat::Zero(st.K, st.K));

  // omega^(1) = r0 B* + u sqrt(C*), same stream path as the direct engine
  {
    SplitRng stream = rng.split("init-u");
    TallMatrix u(st.d, st.K);
    fill_gaussian(u, stream);
    TallMatrix omega1 = product(gt.r0, fp.Bstar);
    add_product(omega1, u, psd_sqrt(fp.Cstar));
    st.omega_cur = omega1;
    scale(omega1, st.sqrt1a);
    st.m_cur = std::move(omega1);
    st.m_side = DiceSide::d_side;
  }
  return st;
}

void dice_step(DiceState& st, const FixedPoint& fp, const DiceOptions& opts) {
  DiceRunner runner{&st, &fp};
  runner.step(opts);
}

AmpRun dice_run(const GroundTruth& gt, const FixedPoint& fp, int T_steps,
                SplitRng& rng, const DiceOptions& opts) {
  alloc_stats::reset_peak();
  DiceState st = dice_init(gt, fp, rng);
  DiceRunner runner{&st, &fp};

  AmpRun run;
  run.traj.K = fp.K;
  run.traj.alpha = fp.alpha;
  run.traj.lambda0 = fp.lambda0;
  run.traj.engine = "dice";

  const double sqrt_d = std::sqrt(static_cast<double>(st.d));
  const double sqrt_n = std::sqrt(static_cast<double>(st.n));
  TallMatrix omega_t = st.omega_cur;  // omega^(t) before the pair of steps
  double prev_step = kNaN;
  if (opts.store_omega) run.omega_snaps.push_back(omega_t);

  for (int t = 1; t <= T_steps; ++t) {
    runner.step(opts);  // odd: gamma^(t), f^(t)
    runner.step(opts);  // even: omega^(t+1)

    TrajPoint pt;
    pt.t = t;
    pt.r0_overlap = inner(gt.r0, omega_t);
    pt.psi_cov = inner(omega_t, omega_t) - pt.r0_overlap.transpose() * pt.r0_overlap;
    pt.grad_norm = kNaN;
    pt.omega_step = frobenius_distance(st.omega_cur, omega_t) / sqrt_d;
    pt.gamma_step = st.gamma_prev.rows() == st.n
                        ? frobenius_distance(st.gamma_cur, st.gamma_prev) / sqrt_n
                        : kNaN;
    pt.ratio = std::isnan(prev_step) || prev_step == 0.0
                   ? kNaN
                   : (pt.omega_step * pt.omega_step) / (prev_step * prev_step);
    pt.g0_overlap = inner(st.g0, st.f_cur);
    prev_step = pt.omega_step;
    run.traj.points.push_back(std::move(pt));

    omega_t = st.omega_cur;
    if (opts.store_omega) run.omega_snaps.push_back(omega_t);
  }
  run.omega_final = st.omega_cur;
  const auto mem = alloc_stats::snapshot();
  run.traj.peak_bytes = mem.peak_bytes;
  run.traj.max_single_alloc = mem.max_single_alloc;
  return run;
}

}  // namespace ampse
