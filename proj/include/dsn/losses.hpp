#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dsn/data.hpp"
#include "dsn/matrix.hpp"
#include "dsn/membank.hpp"

namespace dsn {

struct LossWeights {
  double lambda1 = 0.1;  // cross-modal contrastive
  double lambda2 = 1.0;  // memory
  double lambda3 = 1.0;  // discriminative (cls + ask)
};

/// Multiview set of projected vectors: both augmented views of every image
/// and sketch in a batch, each row expected unit-norm.
struct ContrastiveBatch {
  Matrix vectors;
  std::vector<Label> labels;
  double tau = 0.07;
};

/// A loss value plus its gradient with respect to the matrix it consumed.
struct LossGrad {
  double loss = 0.0;
  Matrix grad;
};

/// Supervised contrastive loss over the whole multiview set, summed over
/// anchors:
///   loss_i = -(1/|P(i)|) sum_{p in P(i)} log( exp(s_ip) / sum_{a != i} exp(s_ia) )
/// with s = v.v'/tau and P(i) = { j != i : y_j = y_i }.
/// Throws kEmptyPositiveSet when some anchor has no positive.
LossGrad cmcm_loss(const ContrastiveBatch& batch);

/// Mean of -cosine(f_i, prototype_i) over rows whose prototype is present.
/// Prototypes are constants. No prototypes at all gives loss 0, zero grad.
LossGrad memory_loss(const Matrix& image_features,
                     std::span<const std::optional<std::vector<double>>> prototypes);
LossGrad memory_loss(const Matrix& image_features, std::span<const Label> image_labels,
                     const MemoryBank& bank);

/// Summed cross-entropy; labels are class indices into the logit columns.
LossGrad cls_loss(const Matrix& logits, std::span<const std::size_t> labels);

/// Summed soft-label cross-entropy against teacher distributions.
/// Throws kInvalidDistribution when a teacher row does not sum to 1 +- 1e-8.
LossGrad ask_loss(const Matrix& logits, const Matrix& teacher_probs);

struct LossParts {
  double cmcm = 0.0;
  double ml = 0.0;
  double cls = 0.0;
  double ask = 0.0;
};

/// lambda1*cmcm + lambda2*ml + lambda3*(cls + ask)
double total_loss(const LossParts& parts, const LossWeights& w);

}  // namespace dsn
