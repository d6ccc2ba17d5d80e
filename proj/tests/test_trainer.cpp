#include <doctest.h>

#include <cmath>
#include <set>

#include "dsn/error.hpp"
#include "dsn/trainer.hpp"

using namespace dsn;

namespace {

SyntheticData tiny_data(std::uint64_t seed, std::size_t categories = 4, std::size_t per = 12) {
  SynthConfig sc;
  sc.n_categories = categories;
  sc.dim = 8;
  sc.samples_per_category = per;
  sc.seed = seed;
  return generate_synthetic(sc);
}

TrainConfig tiny_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.hidden = cfg.embedding = cfg.proj_hidden = 8;
  cfg.teacher_classes = 5;
  cfg.k = 3;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  const TrainConfig cfg;
  CHECK(lr_at(cfg, 0, 250) == 1e-4);
  CHECK(lr_at(cfg, 250, 250) == 1e-7);
  CHECK(lr_at(cfg, 125, 250) == doctest::Approx(std::sqrt(1e-4 * 1e-7)).epsilon(1e-12));
  CHECK(lr_at(cfg, 125, 250) == doctest::Approx(3.1622776601683795e-6).epsilon(1e-12));
  double prev = lr_at(cfg, 0, 97);
  for (std::size_t s = 1; s <= 97; ++s) {
    const double now = lr_at(cfg, s, 97);
    CHECK(now <= prev);
    prev = now;
  }
}

TEST_CASE("adam") {
  ModelDims dims{1, 1, 1, 1, 1, 1};
  ModelParams p = ModelParams::zeros(dims);
  p.enc_w1(0, 0) = 1.0;
  GradientBundle g = ModelParams::zeros(dims);
  g.enc_w1(0, 0) = 1.0;
  AdamState st = AdamState::fresh(dims);
  adam_step(p, g, st, 0.1);
  CHECK(p.enc_w1(0, 0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(st.step == 1);
  ModelParams untouched = ModelParams::zeros(dims);
  untouched.enc_w1 = p.enc_w1;
  CHECK(p == untouched);

  // zero gradients from zero moments change nothing but the step counter
  ModelParams q = p;
  AdamState fresh = AdamState::fresh(dims);
  adam_step(q, ModelParams::zeros(dims), fresh, 0.1);
  CHECK(q == p);
  CHECK(fresh.m == ModelParams::zeros(dims));
  CHECK(fresh.v == ModelParams::zeros(dims));

  ModelParams a = p, b = p;
  AdamState sa = st, sb = st;
  adam_step(a, g, sa, 0.01);
  adam_step(b, g, sb, 0.01);
  CHECK(a == b);
  CHECK(sa.m == sb.m);

  GradientBundle bad = g;
  bad.cls_b[0] = NAN;
  ModelParams keep = p;
  AdamState keep_state = st;
  try {
    adam_step(keep, bad, keep_state, 0.1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFinite);
  }
  CHECK(keep == p);
  CHECK(keep_state.step == st.step);
}

TEST_CASE("category-paired batches") {
  SynthConfig sc;
  sc.n_categories = 2;
  sc.dim = 3;
  sc.samples_per_category = 5;
  const auto d = generate_synthetic(sc);
  Rng rng(4);
  const BatchIndices b = sample_batch(d.image, d.sketch, rng, 4);
  REQUIRE(b.images.size() == 2);
  REQUIRE(b.sketches.size() == 2);
  std::multiset<Label> li, ls;
  for (std::size_t i : b.images) li.insert(d.image.labels[i]);
  for (std::size_t i : b.sketches) ls.insert(d.sketch.labels[i]);
  CHECK(li == ls);

  Rng r1(9), r2(9);
  const auto x = sample_batch(d.image, d.sketch, r1, 6);
  const auto y = sample_batch(d.image, d.sketch, r2, 6);
  CHECK(x.images == y.images);
  CHECK(x.sketches == y.sketches);

  sc.samples_per_category = 50;
  const auto big = generate_synthetic(sc);
  std::set<std::size_t> seen_img, seen_ske;
  Rng r3(10);
  for (int t = 0; t < 10000; ++t) {
    const auto bi = sample_batch(big.image, big.sketch, r3, 2);
    seen_img.insert(bi.images[0]);
    seen_ske.insert(bi.sketches[0]);
  }
  CHECK(seen_img.size() == 100);
  CHECK(seen_ske.size() == 100);

  FeatureSet lonely = d.sketch;
  lonely.labels[0] = 9;
  try {
    Rng r(1);
    sample_batch(d.image, lonely, r, 4);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kPairing);
  }
}

TEST_CASE("training runs, logs and is deterministic") {
  const auto d = tiny_data(3);
  TrainConfig cfg = tiny_config(3);
  const TrainResult a = train(cfg, d.image, d.sketch);
  const TrainResult b = train(cfg, d.image, d.sketch);
  CHECK(encode_checkpoint(a.params) == encode_checkpoint(b.params));
  CHECK(a.log.to_csv() == b.log.to_csv());
  CHECK(a.bank == b.bank);
  CHECK(a.log.records.size() == 2 * steps_per_epoch(cfg, d.image, d.sketch));
  CHECK(a.log.records.front().lr == cfg.lr_initial);
  CHECK(a.seen_categories == std::vector<Label>{0, 1, 2, 3});
  for (const auto& [c, slot] : a.bank.slots()) CHECK(slot.size() <= 3);
  CHECK(!a.bank.slots().empty());

  cfg.epochs = 0;
  const TrainResult none = train(cfg, d.image, d.sketch);
  CHECK(none.log.records.empty());
  CHECK(none.bank.slots().empty());
  Rng init = Rng(3).derive(1);
  CHECK(none.params == ModelParams::init(none.params.dims, init));
}

TEST_CASE("baseline configuration trains on the discriminative terms only") {
  const auto d = tiny_data(5);
  TrainConfig cfg = tiny_config(5);
  cfg.use_cmcm = false;
  cfg.use_ml = false;
  const TrainResult r = train(cfg, d.image, d.sketch);
  for (const auto& rec : r.log.records) {
    CHECK(rec.parts.cmcm == 0.0);
    CHECK(rec.parts.ml == 0.0);
    CHECK(rec.total == rec.parts.cls + rec.parts.ask);
  }
  CHECK(r.bank.slots().empty());
}

TEST_CASE("default training lowers the classification loss on a separable set") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig sc;
    sc.n_categories = 2;
    sc.samples_per_category = 240;
    sc.category_spread = 3.0;
    sc.image_noise = 0.5;
    sc.sketch_noise = 1.0;
    sc.seed = seed;
    const auto d = generate_synthetic(sc);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.use_cmcm = false;
    cfg.use_ml = false;
    const TrainResult r = train(cfg, d.image, d.sketch);
    const std::size_t per_epoch = steps_per_epoch(cfg, d.image, d.sketch);
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < per_epoch; ++i) {
      first += r.log.records[i].parts.cls;
      last += r.log.records[r.log.records.size() - 1 - i].parts.cls;
    }
    CHECK_MESSAGE(last < first, "seed " << seed << " first " << first << " last " << last);
  }
}

TEST_CASE("non-finite training aborts with the last good parameters") {
  const auto d = tiny_data(1);
  TrainConfig cfg = tiny_config(1);
  cfg.lr_initial = cfg.lr_final = 1e200;
  try {
    train(cfg, d.image, d.sketch);
    FAIL("expected an abort");
  } catch (const TrainingAborted& e) {
    CHECK(e.step() >= 1);
    for (auto t : e.last_good().tensors())
      for (double x : t) REQUIRE(std::isfinite(x));
  }

  auto nan_data = d;
  nan_data.image.features(0, 0) = NAN;
  CHECK_THROWS_AS(train(tiny_config(1), nan_data.image, nan_data.sketch), Error);
}

TEST_CASE("config validation and metadata") {
  TrainConfig cfg;
  cfg.batch_size = 7;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.lr_final = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);

  const Metadata md = train_metadata(TrainConfig{});
  auto get = [&](const std::string& k) {
    for (const auto& [key, v] : md)
      if (key == k) return v;
    return std::string("<missing>");
  };
  CHECK(get("tau") == "0.07");
  CHECK(get("k") == "10");
  CHECK(get("lambda1") == "0.1");
  CHECK(get("lambda2") == "1");
  CHECK(get("lambda3") == "1");
  CHECK(get("batch_size") == "96");
  CHECK(get("epochs") == "10");
  CHECK(get("lr_initial") == "0.0001");
  CHECK(get("lr_final") == "1e-07");
  CHECK(get("adam_beta2") == "0.999");
}
