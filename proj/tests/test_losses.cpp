#include <doctest.h>

#include <cmath>

#include "dsn/error.hpp"
#include "dsn/losses.hpp"
#include "dsn/numkit.hpp"
#include "oracles.hpp"

using namespace dsn;

namespace {

Matrix unit_rows(std::size_t m, std::size_t d, Rng& rng) {
  Matrix v(m, d);
  for (std::size_t i = 0; i < m; ++i) {
    auto r = v.row(i);
    for (double& x : r) x = rng.normal();
    const double n = norm(r);
    for (double& x : r) x /= n;
  }
  return v;
}

/// Labels where every label appears at least twice.
std::vector<Label> paired_labels(std::size_t m, Rng& rng) {
  std::vector<Label> y(m);
  const std::size_t classes = std::max<std::size_t>(1, m / 2);
  for (std::size_t i = 0; i < m; ++i) y[i] = static_cast<Label>(i % classes);
  rng.shuffle(y);
  return y;
}

std::vector<double> flat(const Matrix& m) { return {m.values().begin(), m.values().end()}; }

}  // namespace

TEST_CASE("cmcm matches the double-loop oracle") {
  Rng rng(42);
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 2 + rng.index(15);
    const ContrastiveBatch b{unit_rows(m, 1 + rng.index(12), rng), paired_labels(m, rng), 0.07};
    REQUIRE(std::abs(cmcm_loss(b).loss - oracle::cmcm(b.vectors, b.labels, b.tau)) < 1e-10);
  }

  Rng fixed(1);
  const ContrastiveBatch four{unit_rows(4, 3, fixed), {0, 0, 1, 1}, 0.07};
  CHECK(std::abs(cmcm_loss(four).loss - oracle::cmcm(four.vectors, four.labels, 0.07)) < 1e-10);
}

TEST_CASE("cmcm closed form for identical vectors") {
  for (std::size_t m : {2, 3, 4, 8, 16}) {
    Matrix v(m, 3);
    for (std::size_t i = 0; i < m; ++i) v(i, 0) = 1.0;
    const ContrastiveBatch b{v, std::vector<Label>(m, 5), 0.07};
    const double want = static_cast<double>(m) * std::log(static_cast<double>(m - 1));
    CHECK(std::abs(cmcm_loss(b).loss - want) < 1e-10);
  }
}

TEST_CASE("cmcm permutation symmetry, nonnegativity and empty positives") {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 4 + rng.index(8);
    ContrastiveBatch b{unit_rows(m, 5, rng), paired_labels(m, rng), 0.1};
    const double base = cmcm_loss(b).loss;
    CHECK(base >= 0.0);
    std::vector<std::size_t> perm(m);
    for (std::size_t i = 0; i < m; ++i) perm[i] = i;
    rng.shuffle(perm);
    ContrastiveBatch p{gather_rows(b.vectors, perm), {}, 0.1};
    for (std::size_t i : perm) p.labels.push_back(b.labels[i]);
    CHECK(std::abs(cmcm_loss(p).loss - base) < 1e-10);
  }
  const ContrastiveBatch lonely{Matrix{{1, 0}, {0, 1}, {1, 0}}, {0, 0, 1}, 0.07};
  try {
    cmcm_loss(lonely);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyPositiveSet);
  }
}

TEST_CASE("cmcm decreases when a positive pair moves closer") {
  // Vectors in the plane; anchor 0 and positive 1 with the other pairwise
  // products fixed. Only v0.v1 changes by rotating a 3rd coordinate in.
  auto batch = [](double s01) {
    Matrix v{{1, 0, 0, 0}, {s01, 0, 0, std::sqrt(1 - s01 * s01)}, {0, 1, 0, 0}, {0, 0, 1, 0}};
    return ContrastiveBatch{v, {0, 0, 1, 1}, 0.07};
  };
  double prev = cmcm_loss(batch(0.1)).loss;
  for (double s : {0.2, 0.4, 0.6, 0.8, 0.95}) {
    const double now = cmcm_loss(batch(s)).loss;
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(77);
  for (int t = 0; t < 12; ++t) {
    const std::size_t n = 2 + rng.index(7);  // <= 8
    const std::size_t d = 2 + rng.index(15);  // <= 16

    ContrastiveBatch cb{unit_rows(n, d, rng), paired_labels(n, rng), 0.07};
    const auto cg = cmcm_loss(cb);
    const auto cfd = oracle::finite_difference(flat(cb.vectors), [&](const std::vector<double>& x) {
      return cmcm_loss({Matrix(n, d, x), cb.labels, cb.tau}).loss;
    });
    CHECK(oracle::relative_error(flat(cg.grad), cfd) < 1e-5);

    Matrix f(n, d);
    for (double& x : f.values()) x = rng.normal();
    std::vector<std::optional<std::vector<double>>> protos(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (i % 3 == 2) continue;
      std::vector<double> p(d);
      for (double& x : p) x = rng.normal();
      protos[i] = p;
    }
    const auto mg = memory_loss(f, protos);
    const auto mfd = oracle::finite_difference(flat(f), [&](const std::vector<double>& x) {
      return memory_loss(Matrix(n, d, x), protos).loss;
    });
    CHECK(oracle::relative_error(flat(mg.grad), mfd) < 1e-5);

    const std::size_t c = 2 + rng.index(5);
    Matrix logits(n, c);
    for (double& x : logits.values()) x = 3.0 * rng.normal();
    std::vector<std::size_t> y(n);
    for (auto& v : y) v = rng.index(c);
    const auto lg = cls_loss(logits, y);
    const auto lfd = oracle::finite_difference(flat(logits), [&](const std::vector<double>& x) {
      return cls_loss(Matrix(n, c, x), y).loss;
    });
    CHECK(oracle::relative_error(flat(lg.grad), lfd) < 1e-6);

    Matrix teacher(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> raw(c);
      for (double& x : raw) x = rng.normal();
      const auto p = softmax_row(raw);
      for (std::size_t k = 0; k < c; ++k) teacher(i, k) = p[k];
    }
    const auto ag = ask_loss(logits, teacher);
    const auto afd = oracle::finite_difference(flat(logits), [&](const std::vector<double>& x) {
      return ask_loss(Matrix(n, c, x), teacher).loss;
    });
    CHECK(oracle::relative_error(flat(ag.grad), afd) < 1e-6);
  }
}

TEST_CASE("memory loss examples") {
  const Matrix f{{0.3, 0.4}};
  std::vector<std::optional<std::vector<double>>> same{std::vector<double>{0.3, 0.4}};
  CHECK(memory_loss(f, same).loss == doctest::Approx(-1.0).epsilon(1e-15));
  std::vector<std::optional<std::vector<double>>> orth{std::vector<double>{-0.4, 0.3}};
  CHECK(std::abs(memory_loss(f, orth).loss) < 1e-15);
  std::vector<std::optional<std::vector<double>>> none(1);
  const auto z = memory_loss(f, none);
  CHECK(z.loss == 0.0);
  CHECK(z.grad == Matrix(1, 2));

  // Bank overload: empty banks contribute nothing.
  MemoryBank bank(3);
  const std::vector<Label> labels{4};
  CHECK(memory_loss(f, labels, bank).loss == 0.0);
  bank.update(std::vector<double>{0.6, 0.8}, 4, f, labels);
  CHECK(memory_loss(f, labels, bank).loss == doctest::Approx(-1.0));

  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    Matrix g(4, 3);
    for (double& x : g.values()) x = rng.normal();
    std::vector<std::optional<std::vector<double>>> p(4);
    for (std::size_t i = 0; i < 4; ++i) p[i] = std::vector<double>{rng.normal(), rng.normal(), rng.normal()};
    const double l = memory_loss(g, p).loss;
    CHECK(l >= -1.0);
    CHECK(l <= 1.0);
  }
}

TEST_CASE("classification losses") {
  const std::vector<std::size_t> zero{0};
  CHECK(cls_loss(Matrix(1, 4), zero).loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(cls_loss(Matrix{{10, -10}}, zero).loss == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-12));
  CHECK(cls_loss(Matrix{{10, -10}}, zero).loss == doctest::Approx(2.061153622438558e-9).epsilon(1e-9));
  const std::vector<std::size_t> two{1, 1};
  CHECK(cls_loss(Matrix{{0.2, 0.7}, {0.2, 0.7}}, two).loss ==
        doctest::Approx(2.0 * cls_loss(Matrix{{0.2, 0.7}}, std::vector<std::size_t>{1}).loss));
  try {
    cls_loss(Matrix(1, 2), std::vector<std::size_t>{2});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kLabelOutOfRange);
  }

  const Matrix logits{{0.5, -1.0, 2.0}, {1.0, 1.0, 0.0}};
  const Matrix onehot{{0, 0, 1}, {1, 0, 0}};
  const std::vector<std::size_t> y{2, 0};
  CHECK(ask_loss(logits, onehot).loss == doctest::Approx(cls_loss(logits, y).loss).epsilon(1e-15));
  CHECK(ask_loss(logits, onehot).grad == cls_loss(logits, y).grad);

  const Matrix uniform(3, 4, 0.25);
  CHECK(ask_loss(Matrix(3, 4), uniform).loss == doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-14));

  // student equal to teacher: loss is the summed entropy
  Matrix p(2, 3);
  double entropy = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto s = softmax_row(logits.row(i));
    for (std::size_t k = 0; k < 3; ++k) {
      p(i, k) = s[k];
      entropy -= s[k] * std::log(s[k]);
    }
  }
  CHECK(ask_loss(logits, p).loss == doctest::Approx(entropy).epsilon(1e-12));

  const Matrix not_dist{{0.5, 0.6, 0.0}};
  try {
    ask_loss(Matrix(1, 3), not_dist);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidDistribution);
  }
}

TEST_CASE("total loss is a weighted sum") {
  const LossParts parts{2.0, -0.5, 3.0, 4.0};
  CHECK(total_loss(parts, {0.0, 0.0, 1.0}) == 7.0);
  const LossWeights d;
  CHECK(d.lambda1 == 0.1);
  CHECK(d.lambda2 == 1.0);
  CHECK(d.lambda3 == 1.0);
  CHECK(total_loss(parts, {0.2, 2.0, 2.0}) == doctest::Approx(2.0 * total_loss(parts, d)));
}
