#include "dsn/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "dsn/error.hpp"
#include "dsn/format.hpp"

namespace dsn {

namespace {

enum Stream : std::uint64_t { kSplitStream = 11, kItqStream = 12 };

}  // namespace

ZeroShotData make_zero_shot_data(const SyntheticData& data, const ZeroShotSplit& split) {
  return ZeroShotData{split, restrict(data.image, split.seen), restrict(data.sketch, split.seen),
                      restrict(data.image, split.unseen), restrict(data.sketch, split.unseen)};
}

ZeroShotSplit split_for_seed(std::span<const Label> categories, std::size_t n_unseen,
                             std::uint64_t seed) {
  Rng rng = Rng(seed).derive(kSplitStream);
  return make_zero_shot_split(categories, n_unseen, rng);
}

ItqModel fit_itq_on_seen(const ModelParams& params, const FeatureSet& seen_images,
                         std::size_t bits, std::size_t iterations, std::uint64_t seed) {
  Rng rng = Rng(seed).derive(kItqStream);
  return itq_fit(encode(params, seen_images.features), bits, rng, iterations);
}

RetrievalReport run_zero_shot(const BenchmarkConfig& cfg, std::uint64_t seed) {
  SynthConfig synth = cfg.synth;
  synth.seed = seed;
  const SyntheticData data = generate_synthetic(synth);
  const auto categories = data.image.categories();
  const ZeroShotData zs = make_zero_shot_data(data, split_for_seed(categories, cfg.n_unseen, seed));

  TrainConfig tc = cfg.train;
  tc.seed = seed;
  const TrainResult trained = train(tc, zs.seen_images, zs.seen_sketches);
  const ItqModel itq =
      fit_itq_on_seen(trained.params, zs.seen_images, cfg.itq_bits, cfg.itq_iterations, seed);
  return evaluate(trained.params, zs.unseen_sketches, zs.unseen_images, Metric::kHamming, &itq);
}

const char* to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::kBaseline: return "baseline";
    case AblationVariant::kWithCmcm: return "baseline+cmcm";
    case AblationVariant::kWithMl: return "baseline+ml";
    case AblationVariant::kFull: return "baseline+cmcm+ml";
  }
  return "?";
}

TrainConfig apply_variant(TrainConfig cfg, AblationVariant v) {
  cfg.use_cmcm = v == AblationVariant::kWithCmcm || v == AblationVariant::kFull;
  cfg.use_ml = v == AblationVariant::kWithMl || v == AblationVariant::kFull;
  return cfg;
}

std::vector<RetrievalReport> run_ablation(const BenchmarkConfig& cfg,
                                          std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw Error(ErrorCode::kInvalidArgument, "ablation: need at least one seed");
  std::vector<RetrievalReport> pooled;
  for (AblationVariant v : kAblationVariants) {
    BenchmarkConfig vc = cfg;
    vc.train = apply_variant(cfg.train, v);
    RetrievalReport merged;
    std::string seed_list, per_seed;
    for (std::uint64_t seed : seeds) {
      RetrievalReport r = run_zero_shot(vc, seed);
      if (merged.ap.empty()) {
        merged.metric = r.metric;
        merged.dimension = r.dimension;
        merged.metadata = r.metadata;
      }
      merged.query_labels.insert(merged.query_labels.end(), r.query_labels.begin(), r.query_labels.end());
      merged.ap.insert(merged.ap.end(), r.ap.begin(), r.ap.end());
      merged.prec_at_100.insert(merged.prec_at_100.end(), r.prec_at_100.begin(), r.prec_at_100.end());
      seed_list += (seed_list.empty() ? "" : " ") + std::to_string(seed);
      per_seed += (per_seed.empty() ? "" : " ") + fmt_fixed(r.map, 6);
    }
    const double n = static_cast<double>(merged.ap.size());
    merged.map = std::accumulate(merged.ap.begin(), merged.ap.end(), 0.0) / n;
    merged.mean_prec_at_100 =
        std::accumulate(merged.prec_at_100.begin(), merged.prec_at_100.end(), 0.0) / n;
    merged.metadata.emplace_back("variant", to_string(v));
    merged.metadata.emplace_back("seeds", seed_list);
    merged.metadata.emplace_back("map_per_seed", per_seed);
    pooled.push_back(std::move(merged));
  }
  return pooled;
}

std::string ordering_verdict(double a, double b) {
  if (a > b) return ">";
  if (a < b) return "<";
  return "tie";
}

std::string emit_ablation_table(std::span<const RetrievalReport> reports, const Metadata& metadata) {
  if (reports.size() != kAblationVariants.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "ablation table needs 4 reports, got " + std::to_string(reports.size()));
  }
  std::ostringstream out;
  for (const auto& [k, v] : metadata) out << "# " << k << '=' << v << '\n';
  char line[160];
  std::snprintf(line, sizeof(line), "%-20s %10s %10s\n", "configuration", "mAP@all", "Prec@100");
  out << line;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    std::snprintf(line, sizeof(line), "%-20s %10s %10s\n", to_string(kAblationVariants[i]),
                  fmt_fixed(reports[i].map, 6).c_str(),
                  fmt_fixed(reports[i].mean_prec_at_100, 6).c_str());
    out << line;
  }
  const auto m = [&](AblationVariant v) { return reports[static_cast<std::size_t>(v)].map; };
  const std::pair<AblationVariant, AblationVariant> pairs[] = {
      {AblationVariant::kFull, AblationVariant::kWithCmcm},
      {AblationVariant::kFull, AblationVariant::kWithMl},
      {AblationVariant::kFull, AblationVariant::kBaseline},
      {AblationVariant::kWithCmcm, AblationVariant::kBaseline},
      {AblationVariant::kWithMl, AblationVariant::kBaseline},
  };
  bool full_wins = true;
  for (const auto& [a, b] : pairs) {
    const std::string v = ordering_verdict(m(a), m(b));
    if (a == AblationVariant::kFull && v != ">") full_wins = false;
    out << "verdict " << to_string(a) << ' ' << v << ' ' << to_string(b) << '\n';
  }
  out << "verdict full > each: " << (full_wins ? "yes" : "no") << '\n';
  return out.str();
}

}  // namespace dsn
