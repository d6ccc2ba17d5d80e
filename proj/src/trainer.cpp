#include "dsn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "dsn/error.hpp"
#include "dsn/format.hpp"

namespace dsn {

namespace {

enum Stream : std::uint64_t { kInitStream = 1, kTeacherStream, kSampleStream, kAugmentStream };

std::vector<Label> paired_categories(const FeatureSet& images, const FeatureSet& sketches) {
  const auto ic = images.categories();
  const auto sc = sketches.categories();
  if (ic != sc) {
    std::vector<Label> lonely;
    std::set_symmetric_difference(ic.begin(), ic.end(), sc.begin(), sc.end(),
                                  std::back_inserter(lonely));
    throw Error(ErrorCode::kPairing, "category " + std::to_string(lonely.front()) +
                                         " exists in only one modality");
  }
  if (ic.size() < 2) throw Error(ErrorCode::kPairing, "need at least two categories to train");
  return ic;
}

bool all_finite(const ModelParams& p) {
  for (auto t : p.tensors())
    for (double x : t)
      if (!std::isfinite(x)) return false;
  return true;
}

void clip_by_norm(GradientBundle& g, double max_norm) {
  double sq = 0.0;
  for (auto t : g.tensors())
    for (double x : t) sq += x * x;
  const double n = std::sqrt(sq);
  if (n <= max_norm || n == 0.0) return;
  const double scale = max_norm / n;
  for (auto t : g.tensors())
    for (double& x : t) x *= scale;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2 || batch_size % 2 != 0) {
    throw Error(ErrorCode::kConfig, "batch_size must be even and >= 2");
  }
  if (!(lr_initial > 0.0) || !(lr_final > 0.0) || lr_final > lr_initial) {
    throw Error(ErrorCode::kConfig, "need 0 < lr_final <= lr_initial");
  }
  if (!(tau > 0.0)) throw Error(ErrorCode::kConfig, "tau must be > 0");
  if (k < 1) throw Error(ErrorCode::kConfig, "k must be >= 1");
  for (double l : {weights.lambda1, weights.lambda2, weights.lambda3}) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw Error(ErrorCode::kConfig, "lambdas must be finite and >= 0");
  }
  if (!(augment_strength >= 0.0)) throw Error(ErrorCode::kConfig, "augment_strength must be >= 0");
  if (!(clip_grad_norm >= 0.0)) throw Error(ErrorCode::kConfig, "clip_grad_norm must be >= 0");
  if (hidden < 1 || embedding < 1 || proj_hidden < 1 || teacher_classes < 1) {
    throw Error(ErrorCode::kConfig, "layer sizes must be >= 1");
  }
}

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  if (!use_cmcm) w.lambda1 = 0.0;
  if (!use_ml) w.lambda2 = 0.0;
  return w;
}

AdamState AdamState::fresh(const ModelDims& dims) {
  return AdamState{ModelParams::zeros(dims), ModelParams::zeros(dims), 0};
}

double lr_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0 || step > total_steps) {
    throw Error(ErrorCode::kInvalidArgument, "lr_at: need 0 <= step <= total_steps, total_steps >= 1");
  }
  if (step == 0) return cfg.lr_initial;
  if (step == total_steps) return cfg.lr_final;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.lr_initial * std::pow(cfg.lr_final / cfg.lr_initial, frac);
}

void adam_step(ModelParams& params, const GradientBundle& grads, AdamState& state, double lr) {
  if (grads.dims != params.dims || state.m.dims != params.dims || state.v.dims != params.dims) {
    throw Error(ErrorCode::kDimensionMismatch, "adam: parameter/gradient/state shapes differ");
  }
  if (!all_finite(grads)) throw Error(ErrorCode::kNonFinite, "adam: non-finite gradient");

  const std::uint64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(t));
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      const double gi = g[k][i];
      m[k][i] = AdamState::kBeta1 * m[k][i] + (1.0 - AdamState::kBeta1) * gi;
      v[k][i] = AdamState::kBeta2 * v[k][i] + (1.0 - AdamState::kBeta2) * gi * gi;
      const double m_hat = m[k][i] / c1;
      const double v_hat = v[k][i] / c2;
      p[k][i] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
    }
  }
  state.step = t;
}

BatchIndices sample_batch(const FeatureSet& images, const FeatureSet& sketches, Rng& rng,
                          std::size_t batch_size) {
  if (images.size() == 0 || sketches.size() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "sample_batch: empty feature set");
  }
  if (batch_size < 2 || batch_size % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "sample_batch: batch_size must be even and >= 2");
  }
  const auto categories = paired_categories(images, sketches);
  std::vector<std::vector<std::size_t>> img_rows(categories.size()), ske_rows(categories.size());
  auto slot = [&](Label y) {
    return static_cast<std::size_t>(std::lower_bound(categories.begin(), categories.end(), y) -
                                    categories.begin());
  };
  for (std::size_t i = 0; i < images.size(); ++i) img_rows[slot(images.labels[i])].push_back(i);
  for (std::size_t i = 0; i < sketches.size(); ++i) ske_rows[slot(sketches.labels[i])].push_back(i);

  BatchIndices out;
  const std::size_t pairs = batch_size / 2;
  out.images.reserve(pairs);
  out.sketches.reserve(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    const std::size_t c = rng.index(categories.size());
    out.images.push_back(img_rows[c][rng.index(img_rows[c].size())]);
    out.sketches.push_back(ske_rows[c][rng.index(ske_rows[c].size())]);
  }
  return out;
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  for (const auto& [k, v] : metadata) out << "# " << k << '=' << v << '\n';
  out << "step,lr,L_cmcm,L_ml,L_cls,L_ask,total\n";
  for (const auto& r : records) {
    out << r.step << ',' << fmt_exact(r.lr) << ',' << fmt_exact(r.parts.cmcm) << ','
        << fmt_exact(r.parts.ml) << ',' << fmt_exact(r.parts.cls) << ','
        << fmt_exact(r.parts.ask) << ',' << fmt_exact(r.total) << '\n';
  }
  return out.str();
}

Metadata train_metadata(const TrainConfig& cfg) {
  return {
      {"seed", std::to_string(cfg.seed)},
      {"rng", std::string(Rng::kAlgorithm)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"epochs", std::to_string(cfg.epochs)},
      {"lr_initial", fmt_short(cfg.lr_initial)},
      {"lr_final", fmt_short(cfg.lr_final)},
      {"lr_schedule", "per-step geometric"},
      {"tau", fmt_short(cfg.tau)},
      {"k", std::to_string(cfg.k)},
      {"lambda1", fmt_short(cfg.weights.lambda1)},
      {"lambda2", fmt_short(cfg.weights.lambda2)},
      {"lambda3", fmt_short(cfg.weights.lambda3)},
      {"use_cmcm", cfg.use_cmcm ? "true" : "false"},
      {"use_ml", cfg.use_ml ? "true" : "false"},
      {"augment_strength", fmt_short(cfg.augment_strength)},
      {"augment_mask_probability", fmt_short(kAugmentMaskProbability)},
      {"clip_grad_norm", fmt_short(cfg.clip_grad_norm)},
      {"adam_beta1", fmt_short(AdamState::kBeta1)},
      {"adam_beta2", fmt_short(AdamState::kBeta2)},
      {"adam_epsilon", fmt_short(AdamState::kEpsilon)},
      {"loss_reduction", "cmcm=sum over anchors; cls,ask=sum over samples; ml=mean over contributing images"},
      {"hidden", std::to_string(cfg.hidden)},
      {"embedding", std::to_string(cfg.embedding)},
      {"proj_hidden", std::to_string(cfg.proj_hidden)},
      {"proj_dim", std::to_string(kProjectionDim)},
      {"teacher_classes", std::to_string(cfg.teacher_classes)},
  };
}

std::size_t steps_per_epoch(const TrainConfig& cfg, const FeatureSet& images,
                            const FeatureSet& sketches) {
  const std::size_t pairs = cfg.batch_size / 2;
  const std::size_t n = std::max(images.size(), sketches.size());
  return std::max<std::size_t>(1, (n + pairs - 1) / pairs);
}

TrainResult train(const TrainConfig& cfg, const FeatureSet& images, const FeatureSet& sketches) {
  Rng root(cfg.seed);
  Rng teacher_rng = root.derive(kTeacherStream);
  return train(cfg, images, sketches,
               TeacherModel::random(images.dim(), cfg.teacher_classes, teacher_rng));
}

TrainResult train(const TrainConfig& cfg, const FeatureSet& images, const FeatureSet& sketches,
                  const TeacherModel& teacher) {
  cfg.validate();
  images.validate();
  sketches.validate();
  if (images.dim() != sketches.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "train: image and sketch dimensions differ");
  }
  if (teacher.weights.cols() != images.dim() || teacher.classes() != cfg.teacher_classes) {
    throw Error(ErrorCode::kDimensionMismatch, "train: teacher shape does not match config/data");
  }
  const auto categories = paired_categories(images, sketches);
  auto class_of = [&](Label y) {
    return static_cast<std::size_t>(std::lower_bound(categories.begin(), categories.end(), y) -
                                    categories.begin());
  };

  Rng root(cfg.seed);
  Rng init_rng = root.derive(kInitStream);
  Rng sample_rng = root.derive(kSampleStream);
  Rng augment_rng = root.derive(kAugmentStream);

  ModelDims dims{images.dim(), cfg.hidden, cfg.embedding, cfg.proj_hidden, categories.size(),
                 cfg.teacher_classes};
  TrainResult result{ModelParams::init(dims, init_rng), teacher, MemoryBank(cfg.k), {}, categories};
  result.log.metadata = train_metadata(cfg);
  AdamState adam = AdamState::fresh(dims);

  const LossWeights weights = cfg.effective_weights();
  const std::size_t total = cfg.epochs * steps_per_epoch(cfg, images, sketches);
  result.log.records.reserve(total);

  for (std::size_t step = 0; step < total; ++step) {
    const BatchIndices idx = sample_batch(images, sketches, sample_rng, cfg.batch_size);
    TrainingBatch b;
    b.tau = cfg.tau;
    b.image_x = gather_rows(images.features, idx.images);
    b.sketch_x = gather_rows(sketches.features, idx.sketches);
    for (std::size_t i : idx.images) {
      b.image_labels.push_back(images.labels[i]);
      b.image_class.push_back(class_of(images.labels[i]));
    }
    for (std::size_t i : idx.sketches) {
      b.sketch_labels.push_back(sketches.labels[i]);
      b.sketch_class.push_back(class_of(sketches.labels[i]));
    }
    b.views[0] = augment(b.image_x, augment_rng, cfg.augment_strength);
    b.views[1] = augment(b.image_x, augment_rng, cfg.augment_strength);
    b.views[2] = augment(b.sketch_x, augment_rng, cfg.augment_strength);
    b.views[3] = augment(b.sketch_x, augment_rng, cfg.augment_strength);
    b.teacher_probs = teacher_predict(result.teacher, vstack(b.image_x, b.sketch_x));

    b.prototypes.assign(b.image_x.rows(), std::nullopt);
    if (weights.lambda2 != 0.0) {
      const Matrix f_img = encode(result.params, b.image_x);
      const Matrix f_ske = encode(result.params, b.sketch_x);
      result.bank.update_batch(f_ske, b.sketch_labels, f_img, b.image_labels);
      for (std::size_t i = 0; i < b.image_labels.size(); ++i) {
        b.prototypes[i] = result.bank.prototype(b.image_labels[i]);
      }
    }

    BackwardResult br = backward(result.params, b, weights);
    if (!std::isfinite(br.loss.total)) {
      throw TrainingAborted("non-finite loss at step " + std::to_string(step), result.params, step);
    }
    if (cfg.clip_grad_norm > 0.0) clip_by_norm(br.grads, cfg.clip_grad_norm);
    const double lr = lr_at(cfg, step, total);
    try {
      adam_step(result.params, br.grads, adam, lr);
    } catch (const Error& e) {
      throw TrainingAborted(std::string(e.what()) + " at step " + std::to_string(step),
                            result.params, step);
    }
    result.log.records.push_back({step, lr, br.loss.parts, br.loss.total});
  }
  return result;
}

}  // namespace dsn
