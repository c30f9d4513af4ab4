#pragma once

#include <string>
#include <utility>

#include "ampse/loss.h"
#include "ampse/rng.h"
#include "ampse/tall.h"

namespace ampse {

/// Ground truth with prescribed overlap. omega0 = r0 * B0 exactly,
/// <r0, r0> = I, C0 = <omega0, omega0> = B0^T B0.
struct GroundTruth {
  TallMatrix omega0;  // d x K
  TallMatrix r0;      // d x K
  Mat B0;             // K x K
  Mat C0;             // K x K
};

/// Row-major n x d design matrix, entries i.i.d. N(0, 1/d).
class DesignMatrix {
 public:
  DesignMatrix() = default;
  DesignMatrix(Index n, Index d) : storage_(d, n) {}

  Index n() const { return storage_.cols(); }
  Index d() const { return storage_.rows(); }
  double* row(Index i) { return storage_.col(i); }
  const double* row(Index i) const { return storage_.col(i); }

 private:
  TallMatrix storage_;  // column i holds design row i
};

struct Dataset {
  DesignMatrix X;
  TallMatrix y;  // n x K, one-hot rows for the softmax channel
  double alpha;  // n / d
};

struct GroundTruthOptions {
  // Default: exact overlap C0 = I (columns orthogonal, squared norm d).
  // When false, omega0 has i.i.d. N(0,1) entries and C0 is whatever
  // <omega0, omega0> comes out to be.
  bool orthonormal = true;
};

GroundTruth sample_ground_truth(Index d, int K, SplitRng& rng,
                                const GroundTruthOptions& opts = {});

/// (r0, B0) with <r0,r0> = I and omega0 = r0 * B0; B0 = <r0, omega0>.
std::pair<TallMatrix, Mat> qr_overlap(const TallMatrix& omega0);

DesignMatrix sample_design(Index n, Index d, SplitRng& rng);

/// One label row per theta row, drawn from the loss's generative channel.
TallMatrix sample_labels(const TallMatrix& theta, const RowLoss& loss,
                         SplitRng& rng);

/// X * omega (n x K). Row-parallel, deterministic.
TallMatrix design_times(const DesignMatrix& X, const TallMatrix& omega,
                        int threads = 0);

/// X^T * f (d x K). Fixed-order block reduction, deterministic.
TallMatrix design_transpose_times(const DesignMatrix& X, const TallMatrix& f,
                                  int threads = 0);

/// ||X||_2 by power iteration on X^T X.
double design_spectral_norm(const DesignMatrix& X, int threads = 0);

/// Full instance: X ~ N(0, I/d), theta = X * omega0, y ~ channel(theta).
Dataset make_dataset(const GroundTruth& gt, double alpha, const RowLoss& loss,
                     SplitRng& rng, int threads = 0);

// Binary instance format: 32-byte header (magic "AMPD", u32 version, u64 d,
// u64 n, u64 K) followed by row-major little-endian f64 blocks omega0 (d x K),
// X (n x d), y (n x K). n = 0 means omega-only (used for solver outputs).
void dump_instance(const std::string& path, const TallMatrix& omega0,
                   const DesignMatrix* X, const TallMatrix* y);

struct LoadedInstance {
  Index d, n;
  int K;
  TallMatrix omega0;
  DesignMatrix X;
  TallMatrix y;
};
LoadedInstance load_instance(const std::string& path);

}  // namespace ampse
