#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "dsn/matrix.hpp"

namespace dsn {

/// Seedable generator: std::mt19937_64 seeded from a SplitMix64-mixed seed.
/// Sequences are reproducible within one build of this library; the
/// standard distributions are implementation-defined across toolchains.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64+splitmix64-seed";

  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  /// Independent child stream; the same (seed, stream) pair always gives the
  /// same child.
  Rng derive(std::uint64_t stream) const;

  double normal();
  double uniform();  // [0, 1)
  std::size_t index(std::size_t n);  // [0, n)
  bool bernoulli(double p);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

/// u.v / (|u||v|). Throws ErrorCode::kZeroNorm on a zero vector.
double cosine(std::span<const double> u, std::span<const double> v);

/// log softmax(x / tau), evaluated with max subtraction.
std::vector<double> log_softmax_row(std::span<const double> x, double tau = 1.0);
std::vector<double> softmax_row(std::span<const double> x, double tau = 1.0);

struct Svd {
  Matrix u;
  std::vector<double> sigma;  // descending, nonnegative
  Matrix v;
};

inline constexpr int kSvdMaxSweeps = 100;
inline constexpr double kSvdTolerance = 1e-12;

/// One-sided (Hestenes) Jacobi SVD of a square matrix: M = U diag(sigma) V^T.
/// Throws ErrorCode::kNoConvergence when the sweep cap is hit.
Svd svd_small(const Matrix& m);

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// sign fix on R's diagonal).
Matrix random_orthogonal(std::size_t d, Rng& rng);

}  // namespace dsn
