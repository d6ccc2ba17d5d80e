#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsn/data.hpp"
#include "dsn/losses.hpp"
#include "dsn/matrix.hpp"
#include "dsn/numkit.hpp"

namespace dsn {

inline constexpr std::size_t kProjectionDim = 128;

struct ModelDims {
  std::size_t input = 64;
  std::size_t hidden = 64;
  std::size_t embedding = 64;
  std::size_t proj_hidden = 64;
  std::size_t seen_classes = 1;
  std::size_t teacher_classes = 32;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Trainable parameters. Weights are stored (out x in); biases as vectors.
struct ModelParams {
  ModelDims dims;
  // encoder: input -> hidden (ReLU) -> embedding
  Matrix enc_w1;
  std::vector<double> enc_b1;
  Matrix enc_w2;
  std::vector<double> enc_b2;
  // projection head: embedding -> proj_hidden (ReLU) -> 128, then L2-normalized
  Matrix proj_w1;
  std::vector<double> proj_b1;
  Matrix proj_w2;
  std::vector<double> proj_b2;
  // seen-class classifier (alpha, beta)
  Matrix cls_w;
  std::vector<double> cls_b;
  // teacher-space classifier (gamma, delta)
  Matrix tea_w;
  std::vector<double> tea_b;

  static ModelParams zeros(const ModelDims& dims);
  /// Gaussian weights with std sqrt(2 / fan_in), zero biases.
  static ModelParams init(const ModelDims& dims, Rng& rng);

  /// Every tensor in declaration order; used by the optimizer and checkpoints.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::size_t parameter_count() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

using GradientBundle = ModelParams;

/// Frozen affine-softmax map from raw input features to teacher classes.
struct TeacherModel {
  Matrix weights;  // classes x input
  std::vector<double> bias;

  static TeacherModel random(std::size_t input, std::size_t classes, Rng& rng);
  std::size_t classes() const { return weights.rows(); }
};

Matrix encode(const ModelParams& params, const Matrix& x);
/// Rows are unit-norm. Throws kZeroNorm on a degenerate pre-normalization row.
Matrix project(const ModelParams& params, const Matrix& f);
Matrix classify_seen(const ModelParams& params, const Matrix& f);
Matrix classify_teacher_space(const ModelParams& params, const Matrix& f);
Matrix teacher_predict(const TeacherModel& teacher, const Matrix& x);

inline constexpr double kAugmentMaskProbability = 0.1;

/// x + strength * N(0, 1), then each coordinate zeroed with probability
/// `mask_probability`.
Matrix augment(const Matrix& x, Rng& rng, double strength,
               double mask_probability = kAugmentMaskProbability);

/// Everything one optimization step consumes.
struct TrainingBatch {
  Matrix image_x;
  std::vector<Label> image_labels;       // category ids
  std::vector<std::size_t> image_class;  // seen-class index per image
  Matrix sketch_x;
  std::vector<Label> sketch_labels;
  std::vector<std::size_t> sketch_class;
  /// image view 1, image view 2, sketch view 1, sketch view 2
  std::array<Matrix, 4> views;
  /// Memory-bank prototype per image (nullopt: category bank is empty).
  std::vector<std::optional<std::vector<double>>> prototypes;
  /// Teacher distributions for images then sketches.
  Matrix teacher_probs;
  double tau = 0.07;
};

struct LossBreakdown {
  LossParts parts;
  double total = 0.0;
};

struct BackwardResult {
  LossBreakdown loss;
  GradientBundle grads;
};

/// Total loss lambda1*cmcm + lambda2*ml + lambda3*(cls + ask) and its gradient
/// with respect to every parameter. Terms with zero weight are skipped and
/// reported as 0. Classification and teacher losses cover images and sketches.
BackwardResult backward(const ModelParams& params, const TrainingBatch& batch,
                        const LossWeights& weights);
LossBreakdown forward_loss(const ModelParams& params, const TrainingBatch& batch,
                           const LossWeights& weights);

// Checkpoint file, little-endian:
//   "DSNC" | u32 version | u32 x 7 dims (input, hidden, embedding, proj_hidden,
//   proj_dim, seen_classes, teacher_classes) | every tensor f64 in declared order
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(const std::string& bytes);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace dsn
