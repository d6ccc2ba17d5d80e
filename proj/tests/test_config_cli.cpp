#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dsn/cli.hpp"
#include "dsn/config.hpp"
#include "dsn/error.hpp"
#include "dsn/pipeline.hpp"

using namespace dsn;
namespace fs = std::filesystem;

namespace {

std::string get(const Metadata& md, const std::string& key) {
  for (const auto& [k, v] : md)
    if (k == key) return v;
  return "<missing>";
}

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "dsn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dsn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ErrorCode config_error(const KeyValues& file, const KeyValues& flags) {
  try {
    load_config(file, flags);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST_CASE("empty configuration resolves to the training defaults") {
  const RunConfig cfg = load_config(KeyValues{}, KeyValues{});
  const Metadata md = cfg.metadata();
  CHECK(get(md, "tau") == "0.07");
  CHECK(get(md, "k") == "10");
  CHECK(get(md, "lambda1") == "0.1");
  CHECK(get(md, "lambda2") == "1");
  CHECK(get(md, "lambda3") == "1");
  CHECK(get(md, "batch_size") == "96");
  CHECK(get(md, "epochs") == "10");
  CHECK(get(md, "lr_initial") == "0.0001");
  CHECK(get(md, "lr_final") == "1e-07");
  CHECK(get(md, "tau.source") == "default");
  CHECK(cfg.seeds == 5);
  CHECK(cfg.bench.itq_bits == 64);
  CHECK(cfg.metric == Metric::kHamming);
}

TEST_CASE("precedence: flag over file over environment over default") {
  const RunConfig a = load_config(KeyValues{{"lambda1", "0.5"}, {"seed", "4"}}, KeyValues{{"lambda1", "0"}}, "9");
  CHECK(a.bench.train.weights.lambda1 == 0.0);
  CHECK(a.provenance.at("lambda1") == Provenance::kFlag);
  CHECK(a.seed() == 4);
  CHECK(a.provenance.at("seed") == Provenance::kFile);

  const RunConfig b = load_config(KeyValues{}, KeyValues{}, "9");
  CHECK(b.seed() == 9);
  CHECK(get(b.metadata(), "seed.source") == "env");

  CHECK(parse_config_text("# comment\n\n tau = 0.1 \nk=3\n") == KeyValues{{"tau", "0.1"}, {"k", "3"}});
}

TEST_CASE("bad configuration values") {
  try {
    load_config(KeyValues{{"lamda1", "0.2"}}, KeyValues{});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
    CHECK(std::string(e.what()).find("lambda1") != std::string::npos);
  }
  CHECK(suggest_key("bach_size") == std::optional<std::string>("batch_size"));
  CHECK(!suggest_key("zzzzzzzz").has_value());
  CHECK(config_error({{"tau", "abc"}}, {}) == ErrorCode::kConfig);
  CHECK(config_error({{"tau", "0"}}, {}) == ErrorCode::kConfig);
  CHECK(config_error({}, {{"batch_size", "7"}}) == ErrorCode::kConfig);
  CHECK(config_error({}, {{"use_ml", "maybe"}}) == ErrorCode::kConfig);
  CHECK(config_error({}, {{"seeds", "0"}}) == ErrorCode::kConfig);
  CHECK(config_error({}, {{"metric", "euclid"}}) == ErrorCode::kConfig);
}

TEST_CASE("cli usage errors and help") {
  CHECK(run({"train", "--help"}).code == kExitOk);
  CHECK(run({}).code == kExitConfig);
  CHECK(run({"frobnicate"}).code == kExitConfig);

  const fs::path dir = scratch_dir("usage");
  const Run typo = run({"synth", "--out-image", (dir / "i.bin").string(), "--out-sketch",
                        (dir / "s.bin").string(), "--lamda1", "0.3"});
  CHECK(typo.code == kExitConfig);
  CHECK(typo.err.find("--lambda1") != std::string::npos);

  const Run missing = run({"eval", "--checkpoint", (dir / "nope.ckpt").string(), "--query",
                           (dir / "q.bin").string(), "--gallery", (dir / "g.bin").string(), "--metric",
                           "cosine", "--out", (dir / "r.csv").string()});
  CHECK(missing.code == kExitConfig);
  CHECK(!fs::exists(dir / "r.csv"));
  CHECK(fs::is_empty(dir));
}

TEST_CASE("cli pipeline on a small benchmark") {
  const fs::path dir = scratch_dir("pipeline");
  auto p = [&](const char* name) { return (dir / name).string(); };
  const std::vector<std::string> small{"--n_categories", "6", "--samples_per_category", "10", "--dim", "8",
                                       "--n_unseen", "2", "--epochs", "1", "--batch_size", "8",
                                       "--hidden", "8", "--embedding", "8", "--proj_hidden", "8",
                                       "--teacher_classes", "4", "--k", "2", "--itq_bits", "4"};
  auto with = [&](std::vector<std::string> args) {
    args.insert(args.end(), small.begin(), small.end());
    return run(args);
  };
  REQUIRE(with({"synth", "--out-image", p("img.bin"), "--out-sketch", p("ske.bin")}).code == kExitOk);
  REQUIRE(with({"split", "--features", p("img.bin"), "--out", p("split.txt")}).code == kExitOk);
  REQUIRE(with({"train", "--image", p("img.bin"), "--sketch", p("ske.bin"), "--split", p("split.txt"),
                "--checkpoint", p("model.ckpt"), "--log", p("log.csv")})
              .code == kExitOk);
  REQUIRE(with({"itq", "--checkpoint", p("model.ckpt"), "--fit", p("img.bin"), "--split", p("split.txt"),
                "--out", p("itq.bin"), "--encode", p("img.bin"), "--codes", p("codes.csv")})
              .code == kExitOk);
  REQUIRE(with({"eval", "--checkpoint", p("model.ckpt"), "--query", p("ske.bin"), "--gallery", p("img.bin"),
                "--split", p("split.txt"), "--itq", p("itq.bin"), "--out", p("report.csv")})
              .code == kExitOk);
  REQUIRE(with({"simmat", "--checkpoint", p("model.ckpt"), "--sketch", p("ske.bin"), "--image", p("img.bin"),
                "--split", p("split.txt"), "--out", p("sim.csv")})
              .code == kExitOk);
  for (const char* f : {"img.bin", "ske.bin", "split.txt", "model.ckpt", "log.csv", "itq.bin", "codes.csv",
                        "report.csv", "sim.csv"}) {
    CHECK_MESSAGE(fs::file_size(dir / f) > 0, f);
  }
  std::ifstream log(p("log.csv"));
  std::string first;
  std::getline(log, first);
  CHECK(first.rfind("# ", 0) == 0);

  // eval without an ITQ model under the hamming metric is a usage error
  CHECK(with({"eval", "--checkpoint", p("model.ckpt"), "--query", p("ske.bin"), "--gallery", p("img.bin"),
              "--out", p("other.csv")})
            .code == kExitConfig);

  // corrupt checkpoint is an I/O failure
  {
    std::ofstream bad(p("bad.ckpt"), std::ios::binary);
    bad << "XXXXXXXXXXXX";
  }
  CHECK(with({"eval", "--checkpoint", p("bad.ckpt"), "--query", p("ske.bin"), "--gallery", p("img.bin"),
              "--itq", p("itq.bin"), "--out", p("other.csv")})
            .code == kExitIo);
  CHECK(!fs::exists(dir / "other.csv"));
}

TEST_CASE("ablation table") {
  std::vector<RetrievalReport> r(4);
  const double maps[] = {0.3, 0.4, 0.38, 0.45};
  for (int i = 0; i < 4; ++i) r[i].map = maps[i];
  const std::string t = emit_ablation_table(r, {{"seed", "0"}});
  CHECK(t.rfind("# seed=0\n", 0) == 0);
  CHECK(t.find("baseline+cmcm+ml") != std::string::npos);
  CHECK(t.find("0.450000") != std::string::npos);
  CHECK(t.find("verdict full > each: yes") != std::string::npos);
  CHECK(t.find("verdict baseline+ml > baseline") != std::string::npos);

  for (auto& x : r) x.map = 0.4;
  const std::string ties = emit_ablation_table(r);
  CHECK(ties.find("verdict baseline+cmcm+ml tie baseline+cmcm") != std::string::npos);
  CHECK(ties.find("verdict full > each: no") != std::string::npos);

  r.pop_back();
  CHECK_THROWS_AS(emit_ablation_table(r), Error);
  CHECK(ordering_verdict(1, 2) == "<");
}

TEST_CASE("variants switch the auxiliary terms") {
  const TrainConfig base = apply_variant(TrainConfig{}, AblationVariant::kBaseline);
  CHECK(!base.use_cmcm);
  CHECK(!base.use_ml);
  const TrainConfig full = apply_variant(TrainConfig{}, AblationVariant::kFull);
  CHECK(full.use_cmcm);
  CHECK(full.use_ml);
  CHECK(apply_variant(TrainConfig{}, AblationVariant::kWithCmcm).use_cmcm);
  CHECK(!apply_variant(TrainConfig{}, AblationVariant::kWithCmcm).use_ml);
  CHECK(apply_variant(TrainConfig{}, AblationVariant::kWithMl).use_ml);
}
