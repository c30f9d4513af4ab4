#include "ampse/model_gen.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "ampse/errors.h"
#include "ampse/kernels.h"
#include "ampse/numerics.h"
#include "ampse/threading.h"

namespace ampse {

namespace {

constexpr Index kRowsPerBlock = 2048;

Index block_count(Index n) { return (n + kRowsPerBlock - 1) / kRowsPerBlock; }

}  // namespace

GroundTruth sample_ground_truth(Index d, int K, SplitRng& rng,
                                const GroundTruthOptions& opts) {
  if (d < K) {
    throw InvalidInputError("sample_ground_truth: d < K (" + std::to_string(d) +
                            " < " + std::to_string(K) + ")");
  }
  SplitRng stream = rng.split("omega0");
  TallMatrix draw(d, K);
  fill_gaussian(draw, stream);

  GroundTruth gt;
  if (opts.orthonormal) {
    gt.omega0 = gs_block(draw, std::vector<const TallMatrix*>{});
    gt.r0 = gt.omega0;
    gt.B0 = Mat::Identity(K, K);
    gt.C0 = Mat::Identity(K, K);
  } else {
    gt.omega0 = std::move(draw);
    auto [r0, b0] = qr_overlap(gt.omega0);
    gt.r0 = std::move(r0);
    gt.B0 = b0;
    gt.C0 = inner(gt.omega0, gt.omega0);
  }
  return gt;
}

std::pair<TallMatrix, Mat> qr_overlap(const TallMatrix& omega0) {
  TallMatrix r0 = gs_block(omega0, std::vector<const TallMatrix*>{});
  Mat b0 = inner(r0, omega0);
  return {std::move(r0), b0};
}

DesignMatrix sample_design(Index n, Index d, SplitRng& rng) {
  if (n < 1 || d < 1) throw InvalidInputError("sample_design: n, d must be >= 1");
  DesignMatrix X(n, d);
  SplitRng stream = rng.split("design");
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Index blocks = block_count(n);
  std::vector<SplitRng> block_streams;
  block_streams.reserve(blocks);
  for (Index b = 0; b < blocks; ++b) block_streams.push_back(stream.split(b));
  parallel_blocks(blocks, [&](Index b) {
    SplitRng& rs = block_streams[b];
    const Index lo = b * kRowsPerBlock;
    const Index hi = std::min(n, lo + kRowsPerBlock);
    for (Index i = lo; i < hi; ++i) {
      double* row = X.row(i);
      rs.fill_normal(std::span<double>(row, static_cast<std::size_t>(d)));
      kernels::scal(scale, row, static_cast<std::size_t>(d));
    }
  });
  return X;
}

TallMatrix sample_labels(const TallMatrix& theta, const RowLoss& loss,
                         SplitRng& rng) {
  const Index n = theta.rows();
  const int K = static_cast<int>(theta.cols());
  TallMatrix y(n, K);
  SplitRng stream = rng.split("labels");
  double row[kMaxK];
  double out[kMaxK];
  for (Index i = 0; i < n; ++i) {
    for (int k = 0; k < K; ++k) row[k] = theta(i, k);
    loss.sample_y(row, K, stream, out);
    for (int k = 0; k < K; ++k) y(i, k) = out[k];
  }
  return y;
}

TallMatrix design_times(const DesignMatrix& X, const TallMatrix& omega,
                        int threads) {
  if (X.d() != omega.rows()) throw DimensionError("design_times: d mismatch");
  const Index n = X.n();
  const int K = static_cast<int>(omega.cols());
  TallMatrix out(n, K);
  parallel_blocks(block_count(n), [&](Index b) {
    const Index lo = b * kRowsPerBlock;
    const Index hi = std::min(n, lo + kRowsPerBlock);
    for (Index i = lo; i < hi; ++i) {
      const double* row = X.row(i);
      for (int k = 0; k < K; ++k) {
        out(i, k) = kernels::dot(row, omega.col(k), static_cast<std::size_t>(X.d()));
      }
    }
  }, threads);
  return out;
}

TallMatrix design_transpose_times(const DesignMatrix& X, const TallMatrix& f,
                                  int threads) {
  if (X.n() != f.rows()) throw DimensionError("design_transpose_times: n mismatch");
  const Index d = X.d();
  const Index n = X.n();
  const int K = static_cast<int>(f.cols());
  const Index blocks = block_count(n);

  std::vector<TallMatrix> partial;
  partial.reserve(blocks);
  for (Index b = 0; b < blocks; ++b) partial.emplace_back(d, K);

  parallel_blocks(blocks, [&](Index b) {
    TallMatrix& acc = partial[b];
    const Index lo = b * kRowsPerBlock;
    const Index hi = std::min(n, lo + kRowsPerBlock);
    for (Index i = lo; i < hi; ++i) {
      const double* row = X.row(i);
      for (int k = 0; k < K; ++k) {
        const double c = f(i, k);
        if (c != 0.0) kernels::axpy(c, row, acc.col(k), static_cast<std::size_t>(d));
      }
    }
  }, threads);

  TallMatrix out(d, K);
  for (Index b = 0; b < blocks; ++b) add_scaled(out, 1.0, partial[b]);
  return out;
}

double design_spectral_norm(const DesignMatrix& X, int threads) {
  SplitRng rng(12345);
  TallMatrix v(X.d(), 1);
  fill_gaussian(v, rng);
  double sigma = 0.0;
  for (int it = 0; it < 200; ++it) {
    TallMatrix w = design_times(X, v, threads);
    TallMatrix u = design_transpose_times(X, w, threads);
    const double norm = frobenius_norm(u);
    if (norm == 0.0) return 0.0;
    scale(u, 1.0 / norm);
    const double sigma_new = std::sqrt(norm);
    v = std::move(u);
    if (it > 4 && std::abs(sigma_new - sigma) <= 1e-12 * sigma_new) {
      sigma = sigma_new;
      break;
    }
    sigma = sigma_new;
  }
  return sigma;
}

Dataset make_dataset(const GroundTruth& gt, double alpha, const RowLoss& loss,
                     SplitRng& rng, int threads) {
  const Index d = gt.omega0.rows();
  const Index n = static_cast<Index>(std::llround(alpha * static_cast<double>(d)));
  Dataset ds;
  ds.alpha = alpha;
  ds.X = sample_design(n, d, rng);
  const TallMatrix theta = design_times(ds.X, gt.omega0, threads);
  ds.y = sample_labels(theta, loss, rng);
  return ds;
}

namespace {

constexpr char kMagic[4] = {'A', 'M', 'P', 'D'};
constexpr std::uint32_t kFormatVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_rowmajor(std::FILE* f, const TallMatrix& a) {
  std::vector<double> row(static_cast<std::size_t>(a.cols()));
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index k = 0; k < a.cols(); ++k) row[static_cast<std::size_t>(k)] = a(i, k);
    std::fwrite(row.data(), sizeof(double), row.size(), f);
  }
}

void read_rowmajor(std::FILE* f, TallMatrix& a) {
  std::vector<double> row(static_cast<std::size_t>(a.cols()));
  for (Index i = 0; i < a.rows(); ++i) {
    if (std::fread(row.data(), sizeof(double), row.size(), f) != row.size()) {
      throw InvalidInputError("instance file truncated");
    }
    for (Index k = 0; k < a.cols(); ++k) a(i, k) = row[static_cast<std::size_t>(k)];
  }
}

}  // namespace

void dump_instance(const std::string& path, const TallMatrix& omega0,
                   const DesignMatrix* X, const TallMatrix* y) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw InvalidInputError("dump_instance: cannot open " + path);
  const std::uint64_t d = static_cast<std::uint64_t>(omega0.rows());
  const std::uint64_t n = X != nullptr ? static_cast<std::uint64_t>(X->n()) : 0;
  const std::uint64_t K = static_cast<std::uint64_t>(omega0.cols());
  std::fwrite(kMagic, 1, 4, f.get());
  std::fwrite(&kFormatVersion, sizeof(kFormatVersion), 1, f.get());
  std::fwrite(&d, sizeof(d), 1, f.get());
  std::fwrite(&n, sizeof(n), 1, f.get());
  std::fwrite(&K, sizeof(K), 1, f.get());
  write_rowmajor(f.get(), omega0);
  if (X != nullptr) {
    for (Index i = 0; i < X->n(); ++i) {
      std::fwrite(X->row(i), sizeof(double), static_cast<std::size_t>(X->d()), f.get());
    }
    if (y == nullptr) throw InvalidInputError("dump_instance: X given without y");
    write_rowmajor(f.get(), *y);
  }
}

LoadedInstance load_instance(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw InvalidInputError("load_instance: cannot open " + path);
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t d = 0, n = 0, K = 0;
  if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw InvalidInputError("load_instance: bad magic");
  }
  std::fread(&version, sizeof(version), 1, f.get());
  if (version != kFormatVersion) throw InvalidInputError("load_instance: bad version");
  std::fread(&d, sizeof(d), 1, f.get());
  std::fread(&n, sizeof(n), 1, f.get());
  std::fread(&K, sizeof(K), 1, f.get());

  LoadedInstance out;
  out.d = static_cast<Index>(d);
  out.n = static_cast<Index>(n);
  out.K = static_cast<int>(K);
  out.omega0 = TallMatrix(out.d, out.K);
  read_rowmajor(f.get(), out.omega0);
  if (out.n > 0) {
    out.X = DesignMatrix(out.n, out.d);
    for (Index i = 0; i < out.n; ++i) {
      if (std::fread(out.X.row(i), sizeof(double), static_cast<std::size_t>(out.d),
                     f.get()) != static_cast<std::size_t>(out.d)) {
        throw InvalidInputError("instance file truncated");
      }
    }
    out.y = TallMatrix(out.n, out.K);
    read_rowmajor(f.get(), out.y);
  }
  return out;
}

}  // namespace ampse
