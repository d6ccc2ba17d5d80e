#include "dsn/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "dsn/error.hpp"
#include "dsn/numkit.hpp"

namespace dsn {

LossGrad cmcm_loss(const ContrastiveBatch& batch) {
  const Matrix& v = batch.vectors;
  const std::size_t m = v.rows();
  if (batch.labels.size() != m) {
    throw Error(ErrorCode::kDimensionMismatch, "cmcm: labels and vectors differ in count");
  }
  if (m < 2) throw Error(ErrorCode::kInvalidArgument, "cmcm: need at least two vectors");
  if (!(batch.tau > 0.0)) throw Error(ErrorCode::kInvalidArgument, "cmcm: tau must be > 0");

  Matrix scores = matmul_bt(v, v);
  for (double& s : scores.values()) s /= batch.tau;

  // coeff(i, a) = d loss_i / d s_ia
  Matrix coeff(m, m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    auto s = scores.row(i);
    std::size_t positives = 0;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < m; ++a) {
      if (a == i) continue;
      mx = std::max(mx, s[a]);
      if (batch.labels[a] == batch.labels[i]) ++positives;
    }
    if (positives == 0) {
      throw Error(ErrorCode::kEmptyPositiveSet,
                  "cmcm: anchor " + std::to_string(i) + " has no positive");
    }
    double denom = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      if (a != i) denom += std::exp(s[a] - mx);
    }
    const double lse = mx + std::log(denom);
    const double inv_p = 1.0 / static_cast<double>(positives);
    double pos_sum = 0.0;
    auto c = coeff.row(i);
    for (std::size_t a = 0; a < m; ++a) {
      if (a == i) continue;
      c[a] = std::exp(s[a] - lse);
      if (batch.labels[a] == batch.labels[i]) {
        pos_sum += s[a];
        c[a] -= inv_p;
      }
    }
    total += lse - pos_sum * inv_p;
  }

  // s = V V^T / tau  =>  dV = (C + C^T) V / tau
  Matrix sym(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) sym(i, j) = (coeff(i, j) + coeff(j, i)) / batch.tau;
  return {total, matmul(sym, v)};
}

LossGrad memory_loss(const Matrix& image_features,
                     std::span<const std::optional<std::vector<double>>> prototypes) {
  if (prototypes.size() != image_features.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "memory loss: one prototype slot per image required");
  }
  LossGrad out{0.0, Matrix(image_features.rows(), image_features.cols())};
  std::size_t contributing = 0;
  for (const auto& p : prototypes) contributing += p.has_value();
  if (contributing == 0) return out;
  const double scale = 1.0 / static_cast<double>(contributing);

  for (std::size_t i = 0; i < image_features.rows(); ++i) {
    if (!prototypes[i]) continue;
    auto f = image_features.row(i);
    const auto& p = *prototypes[i];
    const double cos = cosine(f, p);
    out.loss -= cos * scale;
    // d cos / d f = p / (|f||p|) - cos * f / |f|^2
    const double nf = norm(f);
    const double np = norm(p);
    auto g = out.grad.row(i);
    for (std::size_t j = 0; j < f.size(); ++j) {
      g[j] = -scale * (p[j] / (nf * np) - cos * f[j] / (nf * nf));
    }
  }
  return out;
}

LossGrad memory_loss(const Matrix& image_features, std::span<const Label> image_labels,
                     const MemoryBank& bank) {
  if (image_labels.size() != image_features.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "memory loss: labels and features differ in count");
  }
  std::vector<std::optional<std::vector<double>>> prototypes;
  prototypes.reserve(image_labels.size());
  for (Label y : image_labels) prototypes.push_back(bank.prototype(y));
  return memory_loss(image_features, prototypes);
}

LossGrad cls_loss(const Matrix& logits, std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "cls loss: labels and logits differ in count");
  }
  LossGrad out{0.0, Matrix(logits.rows(), logits.cols())};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] >= logits.cols()) {
      throw Error(ErrorCode::kLabelOutOfRange,
                  "cls loss: label " + std::to_string(labels[i]) + " outside [0, " +
                      std::to_string(logits.cols()) + ")");
    }
    const auto logp = log_softmax_row(logits.row(i));
    out.loss -= logp[labels[i]];
    auto g = out.grad.row(i);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = std::exp(logp[k]);
    g[labels[i]] -= 1.0;
  }
  return out;
}

LossGrad ask_loss(const Matrix& logits, const Matrix& teacher_probs) {
  if (teacher_probs.rows() != logits.rows() || teacher_probs.cols() != logits.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "ask loss: teacher and logits shapes differ");
  }
  LossGrad out{0.0, Matrix(logits.rows(), logits.cols())};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto p = teacher_probs.row(i);
    double sum = 0.0;
    for (double x : p) {
      if (!(x >= 0.0)) throw Error(ErrorCode::kInvalidDistribution, "ask loss: negative teacher probability");
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-8) {
      throw Error(ErrorCode::kInvalidDistribution,
                  "ask loss: teacher row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
    const auto logq = log_softmax_row(logits.row(i));
    auto g = out.grad.row(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (p[k] != 0.0) out.loss -= p[k] * logq[k];
      g[k] = std::exp(logq[k]) - p[k];
    }
  }
  return out;
}

double total_loss(const LossParts& parts, const LossWeights& w) {
  return w.lambda1 * parts.cmcm + w.lambda2 * parts.ml + w.lambda3 * (parts.cls + parts.ask);
}

}  // namespace dsn
