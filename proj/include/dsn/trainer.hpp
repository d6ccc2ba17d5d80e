#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dsn/data.hpp"
#include "dsn/error.hpp"
#include "dsn/losses.hpp"
#include "dsn/membank.hpp"
#include "dsn/metadata.hpp"
#include "dsn/model.hpp"
#include "dsn/numkit.hpp"

namespace dsn {

struct TrainConfig {
  std::size_t batch_size = 96;
  std::size_t epochs = 10;
  double lr_initial = 1e-4;
  double lr_final = 1e-7;
  double tau = 0.07;
  std::size_t k = 10;
  LossWeights weights;
  double augment_strength = 0.1;
  std::uint64_t seed = 0;
  bool use_cmcm = true;
  bool use_ml = true;
  double clip_grad_norm = 0.0;  // 0 disables clipping
  std::size_t hidden = 64;
  std::size_t embedding = 64;
  std::size_t proj_hidden = 64;
  std::size_t teacher_classes = 32;

  void validate() const;
  /// Weights with ablated terms zeroed.
  LossWeights effective_weights() const;
};

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;

  static AdamState fresh(const ModelDims& dims);
};

/// lr_initial * (lr_final / lr_initial)^(step / total_steps), exact at both ends.
double lr_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

/// One bias-corrected Adam update. Throws kNonFinite on a non-finite gradient,
/// leaving params and state untouched.
void adam_step(ModelParams& params, const GradientBundle& grads, AdamState& state, double lr);

/// Row indices into the image and sketch sets.
struct BatchIndices {
  std::vector<std::size_t> images;
  std::vector<std::size_t> sketches;
};

/// batch_size/2 category-paired (image, sketch) draws: a category is chosen
/// uniformly among those present in both modalities, then one image and one
/// sketch of it uniformly.
BatchIndices sample_batch(const FeatureSet& images, const FeatureSet& sketches, Rng& rng,
                          std::size_t batch_size);

struct TrainLogRecord {
  std::size_t step = 0;
  double lr = 0.0;
  LossParts parts;
  double total = 0.0;
};

struct TrainLog {
  Metadata metadata;
  std::vector<TrainLogRecord> records;

  /// "# key=value" metadata lines, then step,lr,L_cmcm,L_ml,L_cls,L_ask,total.
  std::string to_csv() const;
};

struct TrainResult {
  ModelParams params;
  TeacherModel teacher;
  MemoryBank bank;
  TrainLog log;
  std::vector<Label> seen_categories;  // class index -> category id
};

/// Raised when a step produces a non-finite loss or gradient; carries the
/// parameters from the last good step.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, ModelParams last_good, std::size_t step)
      : Error(ErrorCode::kNonFinite, what), last_good_(std::move(last_good)), step_(step) {}
  const ModelParams& last_good() const { return last_good_; }
  std::size_t step() const { return step_; }

 private:
  ModelParams last_good_;
  std::size_t step_;
};

std::size_t steps_per_epoch(const TrainConfig& cfg, const FeatureSet& images,
                            const FeatureSet& sketches);

/// Trains on seen-category data. The teacher is drawn from the config seed.
TrainResult train(const TrainConfig& cfg, const FeatureSet& images, const FeatureSet& sketches);
TrainResult train(const TrainConfig& cfg, const FeatureSet& images, const FeatureSet& sketches,
                  const TeacherModel& teacher);

Metadata train_metadata(const TrainConfig& cfg);

}  // namespace dsn
