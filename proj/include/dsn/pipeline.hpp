#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsn/data.hpp"
#include "dsn/retrieval.hpp"
#include "dsn/trainer.hpp"

namespace dsn {

/// Synthetic zero-shot benchmark: data, split, training and binary evaluation.
struct BenchmarkConfig {
  SynthConfig synth;
  std::size_t n_unseen = 5;
  TrainConfig train;
  std::size_t itq_bits = 64;
  std::size_t itq_iterations = kItqIterations;
};

struct ZeroShotData {
  ZeroShotSplit split;
  FeatureSet seen_images;
  FeatureSet seen_sketches;
  FeatureSet unseen_images;
  FeatureSet unseen_sketches;
};

ZeroShotData make_zero_shot_data(const SyntheticData& data, const ZeroShotSplit& split);

/// Split drawn from the seed's dedicated stream.
ZeroShotSplit split_for_seed(std::span<const Label> categories, std::size_t n_unseen,
                             std::uint64_t seed);

/// ITQ fitted on seen-category image embeddings only.
ItqModel fit_itq_on_seen(const ModelParams& params, const FeatureSet& seen_images,
                         std::size_t bits, std::size_t iterations, std::uint64_t seed);

/// Unseen sketches query unseen images through `bits`-bit ITQ codes.
RetrievalReport run_zero_shot(const BenchmarkConfig& cfg, std::uint64_t seed);

enum class AblationVariant { kBaseline = 0, kWithCmcm, kWithMl, kFull };
inline constexpr std::array<AblationVariant, 4> kAblationVariants = {
    AblationVariant::kBaseline, AblationVariant::kWithCmcm, AblationVariant::kWithMl,
    AblationVariant::kFull};

const char* to_string(AblationVariant v);
TrainConfig apply_variant(TrainConfig cfg, AblationVariant v);

/// One report per variant, in kAblationVariants order. Each pools the
/// per-query APs of every seed, so its mAP is the seed average.
std::vector<RetrievalReport> run_ablation(const BenchmarkConfig& cfg,
                                          std::span<const std::uint64_t> seeds);

/// Fixed-order table of mAP@all and Prec@100 plus pairwise ordering verdicts.
/// Throws kInvalidArgument unless exactly four reports are given.
std::string emit_ablation_table(std::span<const RetrievalReport> reports,
                                const Metadata& metadata = {});

/// ">" / "<" / "tie".
std::string ordering_verdict(double a, double b);

}  // namespace dsn
