#pragma once

#include <functional>
#include <vector>

#include "ampse/amp.h"
#include "ampse/model_gen.h"
#include "ampse/state_evolution.h"

namespace ampse {

// Matrix-free simulation of the AMP dynamics through the symmetrized
// (n+d) x (n+d) embedding: the coupling matrix is never materialized;
// each step draws one fresh m x K Gaussian block and one K x K symmetric
// Gaussian block and updates an incrementally built orthonormal basis.
// Iterates unpack as h_n^(2t-1) = gamma^(t), h_d^(2t) = omega^(t+1).
//
// Basis blocks are identically zero on one side (omega-history on the d
// block, denoiser-history on the n block) and are stored compactly; all
// inner products are normalized by the full embedding row count m = n + d.

enum class DiceSide { n_side, d_side };

struct DiceState {
  Index n = 0, d = 0, m = 0;
  int K = 0;
  double alpha = 0;
  double sqrt1a = 0;  // sqrt(1 + alpha)

  SplitRng root;  // the run's rng root; step s draws from dice_step_stream(root, s)
  int s = 0;      // completed symmetrized steps

  std::vector<DiceSide> side;   // side of v^(idx)
  std::vector<TallMatrix> v;    // compact orthonormal blocks, <v,v> = I (m-normalized)
  std::vector<TallMatrix> a_n;  // n halves of u_hat^(idx) + eps^(idx)
  std::vector<TallMatrix> a_d;  // d halves
  std::vector<Mat> Z;           // symmetric K x K Gaussian blocks

  std::vector<Mat> vm_cur;   // <v^(idx), m^(s)>
  std::vector<Mat> vm_prev;  // <v^(idx), m^(s-1)>
  TallMatrix m_cur;
  DiceSide m_side = DiceSide::d_side;

  TallMatrix y;   // labels, generated from the g0 block at init
  TallMatrix g0;  // the raw n half of u^(0) (plays the role of X r0)

  // unpacked iterates
  TallMatrix omega_cur;    // latest omega^(t)
  TallMatrix gamma_cur;    // latest gamma^(t)
  TallMatrix gamma_prev;
  TallMatrix f_cur;        // latest f^(t)
};

struct DiceOptions {
  int threads = 0;
  bool store_omega = false;
  std::function<void(const TallMatrix&, const TallMatrix&, TallMatrix&)>
      denoiser_override;
};

/// Step-s random elements come from rng.split("dice-step").split(s); the
/// draw order (u_n column-major, u_d column-major, then the upper triangle
/// of Z) is part of the contract so tests can replay the stream.
SplitRng dice_step_stream(const SplitRng& root, int s);

/// Draws u halves and Z for one step in the contract order.
void dice_step_draws(const SplitRng& root, int s, Index n, Index d, int K,
                     TallMatrix& u_n, TallMatrix& u_d, Mat& Z);

DiceState dice_init(const GroundTruth& gt, const FixedPoint& fp, SplitRng& rng);

/// One symmetrized step (two of these advance AMP by one iteration).
void dice_step(DiceState& st, const FixedPoint& fp, const DiceOptions& opts = {});

/// Runs 2 T_steps symmetrized steps and emits the same trajectory schema as
/// the direct engine (grad_norm is nan: there is no X to evaluate it with).
AmpRun dice_run(const GroundTruth& gt, const FixedPoint& fp, int T_steps,
                SplitRng& rng, const DiceOptions& opts = {});

}  // namespace ampse
