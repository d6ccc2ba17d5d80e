#include "dsn/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "dsn/error.hpp"

namespace dsn {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::derive(std::uint64_t stream) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

double Rng::normal() { return normal_(engine_); }

double Rng::uniform() { return std::generate_canonical<double, 53>(engine_); }

std::size_t Rng::index(std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "cosine: length mismatch");
  }
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) {
    throw Error(ErrorCode::kZeroNorm, "cosine: zero-norm input");
  }
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

std::vector<double> log_softmax_row(std::span<const double> x, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be > 0");
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] / tau;
    mx = std::max(mx, out[i]);
  }
  double sum = 0.0;
  for (double s : out) sum += std::exp(s - mx);
  const double lse = mx + std::log(sum);
  for (double& s : out) s -= lse;
  return out;
}

std::vector<double> softmax_row(std::span<const double> x, double tau) {
  auto out = log_softmax_row(x, tau);
  for (double& s : out) s = std::exp(s);
  return out;
}

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// Modified Gram-Schmidt over the columns of `q` in index order, applied twice.
// Columns that vanish after projection are replaced with the first standard
// basis vector that survives projection.
void orthonormalize_columns(Matrix& q, std::span<const char> is_null) {
  const std::size_t n = q.rows();
  const std::size_t m = q.cols();
  auto project_out = [&](std::size_t j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < j; ++i) {
        double d = 0.0;
        for (std::size_t k = 0; k < n; ++k) d += q(k, i) * q(k, j);
        for (std::size_t k = 0; k < n; ++k) q(k, j) -= d * q(k, i);
      }
    }
    double nn = 0.0;
    for (std::size_t k = 0; k < n; ++k) nn += q(k, j) * q(k, j);
    return std::sqrt(nn);
  };
  std::size_t next_basis = 0;
  for (std::size_t j = 0; j < m; ++j) {
    double len = is_null[j] ? 0.0 : project_out(j);
    while (len < 1e-8) {
      if (next_basis >= n) {
        throw Error(ErrorCode::kNoConvergence, "basis completion failed");
      }
      for (std::size_t k = 0; k < n; ++k) q(k, j) = (k == next_basis) ? 1.0 : 0.0;
      ++next_basis;
      len = project_out(j);
    }
    for (std::size_t k = 0; k < n; ++k) q(k, j) /= len;
  }
}

}  // namespace

Svd svd_small(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "svd_small: matrix must be square");
  }
  if (!m.all_finite()) throw Error(ErrorCode::kNonFinite, "svd_small: non-finite input");
  const std::size_t n = m.rows();
  Matrix a = m;
  Matrix v = Matrix::identity(n);

  const double frob = frobenius_norm(m);
  // Columns below this squared norm are rounding noise and are not rotated.
  const double negligible = (static_cast<double>(n) * kEps * frob) *
                            (static_cast<double>(n) * kEps * frob);

  bool converged = false;
  for (int sweep = 0; sweep < kSvdMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double ap = a(k, p), aq = a(k, q);
          alpha += ap * ap;
          beta += aq * aq;
          gamma += ap * aq;
        }
        if (alpha <= negligible || beta <= negligible) continue;
        if (std::abs(gamma) <= kSvdTolerance * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < n; ++k) {
          const double ap = a(k, p), aq = a(k, q);
          a(k, p) = c * ap - s * aq;
          a(k, q) = s * ap + c * aq;
          const double vp = v(k, p), vq = v(k, q);
          v(k, p) = c * vp - s * vq;
          v(k, q) = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged) {
    throw Error(ErrorCode::kNoConvergence,
                "svd_small: no convergence after " + std::to_string(kSvdMaxSweeps) + " sweeps");
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = norm(a.col(j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

  Svd out{Matrix(n, n), std::vector<double>(n), Matrix(n, n)};
  const double sigma_max = n == 0 ? 0.0 : sigma[order[0]];
  std::vector<char> null_flags(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.sigma[j] = sigma[src];
    null_flags[j] = sigma[src] <= static_cast<double>(n) * kEps * sigma_max || sigma[src] == 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      out.v(k, j) = v(k, src);
      out.u(k, j) = null_flags[j] ? 0.0 : a(k, src) / sigma[src];
    }
  }
  orthonormalize_columns(out.u, null_flags);
  return out;
}

Matrix random_orthogonal(std::size_t d, Rng& rng) {
  if (d == 0) throw Error(ErrorCode::kInvalidArgument, "random_orthogonal: d must be >= 1");
  Matrix q(d, d);
  for (double& x : q.values()) x = rng.normal();
  // Gram-Schmidt keeps R's diagonal positive, which is the sign fix that
  // makes Q Haar-distributed.
  const std::vector<char> none(d, 0);
  orthonormalize_columns(q, none);
  return q;
}

}  // namespace dsn
