#include "dsn/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dsn/config.hpp"
#include "dsn/data.hpp"
#include "dsn/error.hpp"
#include "dsn/io.hpp"
#include "dsn/model.hpp"
#include "dsn/pipeline.hpp"
#include "dsn/retrieval.hpp"
#include "dsn/trainer.hpp"

namespace dsn {

namespace fs = std::filesystem;

namespace {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
      return kExitConfig;
    case ErrorCode::kIo:
    case ErrorCode::kBadMagic:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kTruncated:
    case ErrorCode::kCountMismatch:
    case ErrorCode::kParse:
      return kExitIo;
    default:
      return kExitNumeric;
  }
}

/// Options shared by every subcommand: --config plus one flag per config key.
struct CommonOptions {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->allow_extras();
    app->add_option("--config", config_path, "key=value config file");
    for (const std::string& key : config_keys()) {
      options[key] = app->add_option("--" + key, values[key], "config key " + key);
    }
  }

  RunConfig resolve(CLI::App* app, const std::string& command) const {
    for (const std::string& extra : app->remaining()) {
      std::string msg = "unexpected argument '" + extra + "'";
      if (extra.rfind("--", 0) == 0) {
        if (auto s = suggest_key(extra.substr(2))) msg += " (did you mean '--" + *s + "'?)";
      }
      throw Error(ErrorCode::kConfig, msg);
    }
    KeyValues flags;
    for (const std::string& key : config_keys()) {
      if (options.at(key)->count() > 0) flags.emplace_back(key, values.at(key));
    }
    std::optional<fs::path> file;
    if (!config_path.empty()) {
      require_input(config_path, "--config");
      file = config_path;
    }
    std::optional<std::string> env_seed;
    if (const char* s = std::getenv("DSN_SEED")) env_seed = s;
    RunConfig cfg = load_config(file, flags, env_seed);
    cfg.command = command;
    return cfg;
  }

  static void require_input(const std::string& path, const char* flag) {
    if (path.empty()) throw Error(ErrorCode::kConfig, std::string(flag) + " is required");
    if (!fs::is_regular_file(path)) {
      throw Error(ErrorCode::kConfig, std::string(flag) + ": no such file '" + path + "'");
    }
  }
};

void require_output(const std::string& path, const char* flag) {
  if (path.empty()) throw Error(ErrorCode::kConfig, std::string(flag) + " is required");
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw Error(ErrorCode::kConfig, std::string(flag) + ": directory '" + parent.string() + "' does not exist");
  }
}

void require_input(const std::string& path, const char* flag) { CommonOptions::require_input(path, flag); }

std::string with_metadata(const Metadata& md, const std::string& body) {
  std::string out;
  for (const auto& [k, v] : md) out += "# " + k + '=' + v + '\n';
  return out + body;
}

Metadata merged(Metadata a, const Metadata& b) {
  for (const auto& kv : b) {
    bool seen = false;
    for (const auto& existing : a) seen = seen || existing.first == kv.first;
    if (!seen) a.push_back(kv);
  }
  return a;
}

FeatureSet maybe_restrict(const FeatureSet& fs, const std::string& split_path, bool seen) {
  if (split_path.empty()) return fs;
  const ZeroShotSplit split = load_split(split_path);
  return restrict(fs, seen ? split.seen : split.unseen);
}


}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Domain-smoothing network: zero-shot sketch-based image retrieval on feature vectors", "dsn"};
  app.require_subcommand(1);

  CommonOptions common_synth, common_import, common_split, common_train, common_eval, common_itq,
      common_simmat, common_ablate;

  std::string out_image, out_sketch;
  auto* synth = app.add_subcommand("synth", "generate a synthetic image/sketch feature benchmark");
  common_synth.attach(synth);
  synth->add_option("--out-image", out_image, "image feature file")->required();
  synth->add_option("--out-sketch", out_sketch, "sketch feature file")->required();

  std::string csv_path, csv_modality = "image", csv_out;
  auto* import = app.add_subcommand("import-csv", "convert label,f1..fD rows into a feature file");
  common_import.attach(import);
  import->add_option("--csv", csv_path, "input CSV")->required();
  import->add_option("--modality", csv_modality, "image or sketch");
  import->add_option("--out", csv_out, "feature file")->required();

  std::string split_features, split_out;
  auto* split = app.add_subcommand("split", "draw the seen/unseen category split");
  common_split.attach(split);
  split->add_option("--features", split_features, "feature file whose categories are split")->required();
  split->add_option("--out", split_out, "split file")->required();

  std::string tr_image, tr_sketch, tr_split, tr_checkpoint, tr_log;
  auto* trainc = app.add_subcommand("train", "train the encoder on seen categories");
  common_train.attach(trainc);
  trainc->add_option("--image", tr_image, "image feature file")->required();
  trainc->add_option("--sketch", tr_sketch, "sketch feature file")->required();
  trainc->add_option("--split", tr_split, "split file; training keeps seen categories only");
  trainc->add_option("--checkpoint", tr_checkpoint, "output checkpoint")->required();
  trainc->add_option("--log", tr_log, "output per-step loss log (CSV)")->required();

  std::string ev_checkpoint, ev_query, ev_gallery, ev_split, ev_itq, ev_out;
  auto* eval = app.add_subcommand("eval", "rank gallery images for every query sketch");
  common_eval.attach(eval);
  eval->add_option("--checkpoint", ev_checkpoint, "trained checkpoint");
  eval->add_option("--query", ev_query, "query sketch feature file");
  eval->add_option("--gallery", ev_gallery, "gallery image feature file");
  eval->add_option("--split", ev_split, "split file; evaluation keeps unseen categories only");
  eval->add_option("--itq", ev_itq, "ITQ model (required for --metric hamming)");
  eval->add_option("--out", ev_out, "output report (CSV)");

  std::string itq_checkpoint, itq_fit_path, itq_split, itq_model_out, itq_encode_path, itq_codes_out;
  auto* itq = app.add_subcommand("itq", "fit ITQ on image embeddings and optionally encode a set");
  common_itq.attach(itq);
  itq->add_option("--checkpoint", itq_checkpoint, "trained checkpoint")->required();
  itq->add_option("--fit", itq_fit_path, "feature file the rotation is fitted on")->required();
  itq->add_option("--split", itq_split, "split file; fitting keeps seen categories only");
  itq->add_option("--out", itq_model_out, "output ITQ model")->required();
  itq->add_option("--encode", itq_encode_path, "feature file to hash");
  itq->add_option("--codes", itq_codes_out, "output codes (CSV), needs --encode");

  std::string sm_checkpoint, sm_sketch, sm_image, sm_split, sm_out;
  auto* simmat = app.add_subcommand("simmat", "category-mean sketch/image cosine matrix");
  common_simmat.attach(simmat);
  simmat->add_option("--checkpoint", sm_checkpoint, "trained checkpoint")->required();
  simmat->add_option("--sketch", sm_sketch, "sketch feature file")->required();
  simmat->add_option("--image", sm_image, "image feature file")->required();
  simmat->add_option("--split", sm_split, "split file; keeps unseen categories only");
  simmat->add_option("--out", sm_out, "output matrix (CSV)")->required();

  std::string ab_out;
  auto* ablate = app.add_subcommand("ablate", "train and score baseline, +cmcm, +ml and full on the synthetic benchmark");
  common_ablate.attach(ablate);
  ablate->add_option("--out", ab_out, "output table (text)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) {
      const RunConfig cfg = common_synth.resolve(synth, "synth");
      require_output(out_image, "--out-image");
      require_output(out_sketch, "--out-sketch");
      SynthConfig sc = cfg.bench.synth;
      sc.seed = cfg.seed();
      const SyntheticData data = generate_synthetic(sc);
      const std::string image_bytes = encode_features(data.image);
      const std::string sketch_bytes = encode_features(data.sketch);
      io::write_file_atomic(out_image, image_bytes);
      io::write_file_atomic(out_sketch, sketch_bytes);
      out << "synth: " << data.image.size() << " images, " << data.sketch.size() << " sketches, dim "
          << data.image.dim() << '\n';
    } else if (*import) {
      common_import.resolve(import, "import-csv");
      require_input(csv_path, "--csv");
      require_output(csv_out, "--out");
      const FeatureSet fs = import_csv(csv_path, parse_modality(csv_modality));
      save_features(fs, csv_out);
      out << "import-csv: " << fs.size() << " rows, dim " << fs.dim() << '\n';
    } else if (*split) {
      const RunConfig cfg = common_split.resolve(split, "split");
      require_input(split_features, "--features");
      require_output(split_out, "--out");
      const FeatureSet fs = load_features(split_features);
      const auto categories = fs.categories();
      const ZeroShotSplit s = split_for_seed(categories, cfg.bench.n_unseen, cfg.seed());
      save_split(s, split_out);
      out << "split: " << s.seen.size() << " seen, " << s.unseen.size() << " unseen\n";
    } else if (*trainc) {
      const RunConfig cfg = common_train.resolve(trainc, "train");
      require_input(tr_image, "--image");
      require_input(tr_sketch, "--sketch");
      if (!tr_split.empty()) require_input(tr_split, "--split");
      require_output(tr_checkpoint, "--checkpoint");
      require_output(tr_log, "--log");
      const FeatureSet images = maybe_restrict(load_features(tr_image), tr_split, true);
      const FeatureSet sketches = maybe_restrict(load_features(tr_sketch), tr_split, true);
      const TrainResult result = train(cfg.bench.train, images, sketches);
      TrainLog log = result.log;
      log.metadata = merged(cfg.metadata(), log.metadata);
      const std::string checkpoint = encode_checkpoint(result.params);
      const std::string log_csv = log.to_csv();
      io::write_file_atomic(tr_checkpoint, checkpoint);
      io::write_file_atomic(tr_log, log_csv);
      const auto& last = log.records.back();
      out << "train: " << log.records.size() << " steps, final total loss " << last.total << '\n';
    } else if (*eval) {
      const RunConfig cfg = common_eval.resolve(eval, "eval");
      require_input(ev_checkpoint, "--checkpoint");
      require_input(ev_query, "--query");
      require_input(ev_gallery, "--gallery");
      if (!ev_split.empty()) require_input(ev_split, "--split");
      if (cfg.metric == Metric::kHamming) require_input(ev_itq, "--itq");
      require_output(ev_out, "--out");
      const ModelParams params = load_checkpoint(ev_checkpoint);
      const FeatureSet queries = maybe_restrict(load_features(ev_query), ev_split, false);
      const FeatureSet gallery = maybe_restrict(load_features(ev_gallery), ev_split, false);
      std::optional<ItqModel> model;
      if (cfg.metric == Metric::kHamming) model = load_itq(ev_itq);
      RetrievalReport report = evaluate(params, queries, gallery, cfg.metric, model ? &*model : nullptr);
      report.metadata = merged(report.metadata, cfg.metadata());
      io::write_file_atomic(ev_out, report.to_csv());
      out << "eval: mAP@all=" << report.map << " Prec@100=" << report.mean_prec_at_100 << " over "
          << report.ap.size() << " queries\n";
    } else if (*itq) {
      const RunConfig cfg = common_itq.resolve(itq, "itq");
      require_input(itq_checkpoint, "--checkpoint");
      require_input(itq_fit_path, "--fit");
      if (!itq_split.empty()) require_input(itq_split, "--split");
      require_output(itq_model_out, "--out");
      if (!itq_codes_out.empty() || !itq_encode_path.empty()) {
        require_input(itq_encode_path, "--encode");
        require_output(itq_codes_out, "--codes");
      }
      const ModelParams params = load_checkpoint(itq_checkpoint);
      const FeatureSet fit = maybe_restrict(load_features(itq_fit_path), itq_split, true);
      const ItqModel model =
          fit_itq_on_seen(params, fit, cfg.bench.itq_bits, cfg.bench.itq_iterations, cfg.seed());
      std::string codes;
      if (!itq_encode_path.empty()) {
        const FeatureSet target = load_features(itq_encode_path);
        codes = with_metadata(cfg.metadata(),
                              codes_csv(itq_encode(model, encode(params, target.features)), target.labels));
      }
      io::write_file_atomic(itq_model_out, encode_itq(model));
      if (!codes.empty()) io::write_file_atomic(itq_codes_out, codes);
      out << "itq: " << model.bits << " bits, quantization loss " << model.loss_trace.front() << " -> "
          << model.loss_trace.back() << '\n';
    } else if (*simmat) {
      const RunConfig cfg = common_simmat.resolve(simmat, "simmat");
      require_input(sm_checkpoint, "--checkpoint");
      require_input(sm_sketch, "--sketch");
      require_input(sm_image, "--image");
      if (!sm_split.empty()) require_input(sm_split, "--split");
      require_output(sm_out, "--out");
      const ModelParams params = load_checkpoint(sm_checkpoint);
      const FeatureSet sketches = maybe_restrict(load_features(sm_sketch), sm_split, false);
      const FeatureSet images = maybe_restrict(load_features(sm_image), sm_split, false);
      const auto categories = images.categories();
      const Matrix sim = similarity_matrix(params, sketches, images, categories);
      io::write_file_atomic(sm_out, with_metadata(cfg.metadata(), similarity_matrix_csv(sim, categories)));
      out << "simmat: " << categories.size() << " categories\n";
    } else if (*ablate) {
      const RunConfig cfg = common_ablate.resolve(ablate, "ablate");
      if (!ab_out.empty()) require_output(ab_out, "--out");
      std::vector<std::uint64_t> seeds(cfg.seeds);
      std::iota(seeds.begin(), seeds.end(), cfg.seed());
      const auto reports = run_ablation(cfg.bench, seeds);
      Metadata md = merged(cfg.metadata(), train_metadata(cfg.bench.train));
      for (const auto& [k, v] : reports.front().metadata) {
        if (k == "ap_variant") md.emplace_back(k, v);
      }
      for (std::size_t i = 0; i < reports.size(); ++i) {
        for (const auto& [k, v] : reports[i].metadata) {
          if (k == "map_per_seed") md.emplace_back(std::string(k) + "." + to_string(kAblationVariants[i]), v);
        }
      }
      const std::string table = emit_ablation_table(reports, md);
      if (!ab_out.empty()) io::write_file_atomic(ab_out, table);
      out << table;
    }
  } catch (const TrainingAborted& e) {
    err << "dsn: training aborted: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "dsn: " << to_string(e.code()) << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "dsn: internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace dsn
