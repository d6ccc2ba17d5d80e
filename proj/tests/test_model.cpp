#include <doctest.h>

#include <cmath>

#include "dsn/error.hpp"
#include "dsn/model.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dsn;

namespace {

/// Straightforward per-row forward pass of the encoder.
Matrix encode_naive(const ModelParams& p, const Matrix& x) {
  Matrix f(x.rows(), p.dims.embedding);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::vector<double> h(p.dims.hidden);
    for (std::size_t j = 0; j < h.size(); ++j) {
      double s = p.enc_b1[j];
      for (std::size_t k = 0; k < x.cols(); ++k) s += p.enc_w1(j, k) * x(r, k);
      h[j] = s > 0.0 ? s : 0.0;
    }
    for (std::size_t j = 0; j < p.dims.embedding; ++j) {
      double s = p.enc_b2[j];
      for (std::size_t k = 0; k < h.size(); ++k) s += p.enc_w2(j, k) * h[k];
      f(r, j) = s;
    }
  }
  return f;
}

Matrix affine_naive(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
  Matrix out(x.rows(), w.rows());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < w.rows(); ++j) {
      double s = b[j];
      for (std::size_t k = 0; k < x.cols(); ++k) s += w(j, k) * x(r, k);
      out(r, j) = s;
    }
  return out;
}

double max_diff(const Matrix& a, const Matrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.values()[i] - b.values()[i]));
  return d;
}

std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> out;
  for (auto t : p.tensors()) out.insert(out.end(), t.begin(), t.end());
  return out;
}

ModelParams unflatten(ModelParams p, const std::vector<double>& x) {
  std::size_t i = 0;
  for (auto t : p.tensors())
    for (double& v : t) v = x[i++];
  return p;
}

}  // namespace

TEST_CASE("encoder forward") {
  ModelDims dims{4, 4, 4, 4, 2, 3};
  const Matrix x{{0.5, 1.0, 0.0, 2.0}, {3.0, 0.25, 1.5, 0.0}};
  CHECK(encode(ModelParams::zeros(dims), x) == Matrix(2, 4));

  ModelParams id = ModelParams::zeros(dims);
  id.enc_w1 = Matrix::identity(4);
  id.enc_w2 = Matrix::identity(4);
  CHECK(encode(id, x) == x);

  Rng rng(12);
  const ModelParams p = fixture::small_params(rng, 6, 5, 3);
  Matrix xr(7, 6);
  for (double& v : xr.values()) v = rng.normal();
  CHECK(max_diff(encode(p, xr), encode_naive(p, xr)) < 1e-12);

  const Matrix f = encode(p, xr);
  CHECK(max_diff(classify_seen(p, f), affine_naive(f, p.cls_w, p.cls_b)) < 1e-12);
  CHECK(max_diff(classify_teacher_space(p, f), affine_naive(f, p.tea_w, p.tea_b)) < 1e-12);

  try {
    encode(p, Matrix(2, 5));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDimensionMismatch);
  }
}

TEST_CASE("classifier heads") {
  ModelDims dims{3, 3, 3, 3, 2, 4};
  ModelParams p = ModelParams::zeros(dims);
  const Matrix f{{1, 2, 3}, {-1, 0, 4}};
  CHECK(classify_seen(p, f) == Matrix(2, 2));
  p.cls_b = {0.5, -2.0};
  CHECK(classify_seen(p, f) == Matrix{{0.5, -2.0}, {0.5, -2.0}});
}

TEST_CASE("projection rows are unit norm") {
  Rng rng(3);
  const ModelParams p = fixture::small_params(rng, 6, 8, 2);
  Matrix f(20, 8);
  for (double& v : f.values()) v = rng.normal();
  for (std::size_t j = 0; j < 8; ++j) f(1, j) = f(0, j);
  const Matrix v = project(p, f);
  CHECK(v.cols() == kProjectionDim);
  for (std::size_t i = 0; i < v.rows(); ++i) CHECK(std::abs(norm(v.row(i)) - 1.0) < 1e-10);
  for (std::size_t j = 0; j < kProjectionDim; ++j) CHECK(v(0, j) == v(1, j));
  CHECK(std::abs(cosine(v.row(2), v.row(3)) - dot(v.row(2), v.row(3))) < 1e-12);

  // doubling the last layer scales the pre-normalization output by 2
  ModelParams q = p;
  for (double& w : q.proj_w2.values()) w *= 2.0;
  for (double& b : q.proj_b2) b *= 2.0;
  CHECK(max_diff(project(q, f), v) < 1e-14);

  ModelParams dead = ModelParams::zeros(p.dims);
  try {
    project(dead, f);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kZeroNorm);
  }
}

TEST_CASE("teacher predictions are distributions") {
  const TeacherModel zero{Matrix(5, 3), std::vector<double>(5, 0.0)};
  const Matrix x{{1, 2, 3}, {-4, 0, 1}};
  const Matrix u = teacher_predict(zero, x);
  for (double v : u.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));

  Rng rng(8);
  const TeacherModel t = TeacherModel::random(6, 9, rng);
  Matrix xs(50, 6);
  for (double& v : xs.values()) v = 4.0 * rng.normal();
  const Matrix p = teacher_predict(t, xs);
  const Matrix logits = affine_naive(xs, t.weights, t.bias);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (double v : p.row(i)) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
    const auto want = oracle::log_softmax({logits.row(i).begin(), logits.row(i).end()}, 1.0);
    for (std::size_t k = 0; k < 9; ++k) CHECK(std::abs(p(i, k) - std::exp(static_cast<double>(want[k]))) < 1e-12);
  }
}

TEST_CASE("augmentation") {
  const Matrix x{{1, 2}, {3, 4}};
  Rng rng(1);
  CHECK(augment(x, rng, 0.0, 0.0) == x);
  Rng a(4), b(4);
  CHECK(augment(x, a, 0.1) == augment(x, b, 0.1));

  Matrix big(100, 64, 1.0);
  Rng r(6);
  const Matrix noisy = augment(big, r, 0.1, 0.0);
  double mean_abs = 0.0;
  for (std::size_t i = 0; i < big.size(); ++i) mean_abs += std::abs(noisy.values()[i] - 1.0);
  mean_abs /= static_cast<double>(big.size());
  CHECK(std::abs(mean_abs - 0.1 * std::sqrt(2.0 / M_PI)) < 0.1 * 0.1 * std::sqrt(2.0 / M_PI));
}

TEST_CASE("backward matches finite differences of every loss term and the composite") {
  const LossWeights configs[] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.1, 1, 1}, {0.7, 0.3, 1.9}};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t n = 2 + seed % 3;                     // pairs; 2n <= 8 rows per modality pass
    const ModelParams p = fixture::small_params(rng, 4 + seed % 5, 6, 3);
    const TrainingBatch b = fixture::small_batch(p, n, rng);
    for (const LossWeights& w : configs) {
      const BackwardResult br = backward(p, b, w);
      CHECK(br.loss.total == doctest::Approx(forward_loss(p, b, w).total).epsilon(1e-14));
      const auto fd = oracle::finite_difference(flatten(p), [&](const std::vector<double>& x) {
        return forward_loss(unflatten(p, x), b, w).total;
      });
      const double err = oracle::relative_error(flatten(br.grads), fd);
      CHECK_MESSAGE(err < 1e-5, "seed " << seed << " weights " << w.lambda1 << "," << w.lambda2 << "," << w.lambda3);
    }
  }
}

TEST_CASE("backward degenerate cases") {
  Rng rng(2);
  const ModelParams p = fixture::small_params(rng, 5, 6, 3);
  const TrainingBatch b = fixture::small_batch(p, 3, rng);
  const BackwardResult zero = backward(p, b, {0, 0, 0});
  CHECK(zero.loss.total == 0.0);
  CHECK(zero.grads == ModelParams::zeros(p.dims));

  const BackwardResult base = backward(p, b, {0, 0, 1});
  CHECK(base.loss.parts.cmcm == 0.0);
  CHECK(base.loss.parts.ml == 0.0);
  CHECK(base.loss.total == doctest::Approx(base.loss.parts.cls + base.loss.parts.ask));

  // Duplicating every row doubles the summed discriminative loss and its gradient.
  TrainingBatch dup = b;
  dup.image_x = vstack(b.image_x, b.image_x);
  dup.sketch_x = vstack(b.sketch_x, b.sketch_x);
  for (auto* v : {&dup.image_labels, &dup.sketch_labels}) v->insert(v->end(), v->begin(), v->end());
  for (auto* v : {&dup.image_class, &dup.sketch_class}) v->insert(v->end(), v->begin(), v->end());
  for (int k = 0; k < 4; ++k) dup.views[k] = vstack(b.views[k], b.views[k]);
  dup.prototypes.insert(dup.prototypes.end(), b.prototypes.begin(), b.prototypes.end());
  const Matrix ti = gather_rows(b.teacher_probs, std::vector<std::size_t>{0, 1, 2, 0, 1, 2});
  const Matrix ts = gather_rows(b.teacher_probs, std::vector<std::size_t>{3, 4, 5, 3, 4, 5});
  dup.teacher_probs = vstack(ti, ts);
  const BackwardResult twice = backward(p, dup, {0, 0, 1});
  CHECK(twice.loss.total == doctest::Approx(2.0 * base.loss.total).epsilon(1e-12));
  const auto g1 = flatten(base.grads);
  const auto g2 = flatten(twice.grads);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(std::abs(g2[i] - 2.0 * g1[i]) < 1e-10);
}

TEST_CASE("checkpoint round trip and errors") {
  Rng rng(21);
  const ModelParams p = fixture::small_params(rng, 7, 5, 4);
  const std::string bytes = encode_checkpoint(p);
  CHECK(decode_checkpoint(bytes) == p);

  auto code = [](const std::string& b) {
    try {
      decode_checkpoint(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  std::string bad = bytes;
  bad[1] = 'X';
  CHECK(code(bad) == ErrorCode::kBadMagic);
  CHECK(code(bytes.substr(0, bytes.size() - 8)) == ErrorCode::kTruncated);
  CHECK(code(bytes + std::string(8, '\0')) == ErrorCode::kCountMismatch);
  std::string huge = bytes;
  huge[8] = '\xff';
  huge[9] = '\xff';
  huge[10] = '\xff';
  huge[11] = '\x7f';
  CHECK(code(huge) == ErrorCode::kParse);
}
