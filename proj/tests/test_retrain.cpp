// Masked retraining, evaluation metrics and effectiveness grading.
#include <algorithm>
#include <cstring>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "ltnn/retrain.hpp"

using namespace ltnn;

namespace {

// Two linearly separable clusters over features 0..3; features 4 and 5 stay
// near zero so a trigger value of 3.0 is far outside the data.
Dataset two_cluster(Index n, std::uint64_t seed) {
  Dataset d;
  d.task = TaskKind::classification;
  d.num_classes = 2;
  d.inputs = Tensor<float>({n, 6});
  std::mt19937 rng(static_cast<unsigned>(seed));
  std::normal_distribution<float> noise(0.0f, 0.2f);
  for (Index i = 0; i < n; ++i) {
    const Index y = i % 2;
    d.labels.push_back(y);
    float* rec = d.inputs.data.data() + i * 6;
    const float center = y == 0 ? -0.5f : 0.5f;
    for (Index j = 0; j < 4; ++j) rec[j] = center + noise(rng);
    rec[4] = noise(rng) * 0.1f;
    rec[5] = noise(rng) * 0.1f;
  }
  return d;
}

Trigger feature_trigger() {
  Trigger t;
  t.variant = Trigger::Variant::feature_assignment;
  t.name = "fixture";
  t.features = {{4, 3.0f}};
  return t;
}

Model<float> fixture_model(std::uint64_t seed) {
  Model<float> m = build_model<float>({6}, {LayerSpec::dense(6, 8), LayerSpec::relu(), LayerSpec::dense(8, 2),
                                            LayerSpec::softmax_logits()});
  init_params(m, seed);
  return m;
}

bool same_bits(const Model<float>& a, const Model<float>& b) {
  for (size_t l = 0; l < a.weights.size(); ++l) {
    if (std::memcmp(a.weights[l].data.data(), b.weights[l].data.data(),
                    a.weights[l].data.size() * sizeof(float)) != 0)
      return false;
    if (std::memcmp(a.biases[l].data.data(), b.biases[l].data.data(),
                    a.biases[l].data.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

// the trainer's batch scheduler: epoch shuffles of 0..N-1 drawn in order
struct MirrorDraw {
  std::vector<Index> order;
  size_t pos;
  std::mt19937_64* rng;
  Index next() {
    if (pos == order.size()) {
      std::shuffle(order.begin(), order.end(), *rng);
      pos = 0;
    }
    return order[pos++];
  }
};

}  // namespace

TEST_CASE("evaluate counts argmax hits and is batch-size invariant") {
  Model<float> pass = build_model<float>({3}, {LayerSpec::softmax_logits()});
  Dataset d;
  d.task = TaskKind::classification;
  d.num_classes = 3;
  d.inputs = Tensor<float>({4, 3}, {5, 0, 0,   // -> 0
                                    0, 5, 0,   // -> 1
                                    0, 0, 5,   // -> 2
                                    5, 0, 0}); // -> 0
  d.labels = {0, 1, 2, 1};  // last one misses

  CHECK(evaluate(pass, d, Metric::classification()) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(evaluate(pass, d, Metric::classification(), 1) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(evaluate(pass, d, Metric::classification(), 3) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK_THROWS_AS((void)evaluate(pass, d, Metric::regression()), Error);
}

TEST_CASE("regression metric counts predictions within tau") {
  Model<float> pass = build_model<float>({1}, {LayerSpec::dense(1, 1)});
  pass.weights[0].data[0] = 1.0f;  // identity with zero bias
  Dataset d;
  d.task = TaskKind::regression;
  d.num_classes = 0;
  d.inputs = Tensor<float>({3, 1}, {0.0f, 1.0f, 2.0f});
  d.targets = Tensor<float>({3, 1}, {0.52f, 0.2f, 3.0f});
  // |0-0.52| = 0.52 counts (boundary inclusive), |1-0.2| = 0.8 misses, |2-3| = 1 misses
  CHECK(evaluate(pass, d, Metric::regression()) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(evaluate(pass, d, Metric::regression(1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS((void)evaluate(pass, d, Metric::classification()), Error);
}

TEST_CASE("grade_effectiveness pins the published thresholds") {
  CHECK(grade_effectiveness(0.98, 0.93, 0.905) == Grade::effective);   // drop 0.05 inclusive
  CHECK(grade_effectiveness(0.98, 0.9294, 0.95) == Grade::not_effective);  // drop just over 0.05
  CHECK(grade_effectiveness(0.98, 0.93, 0.90) == Grade::not_effective);    // trojan must exceed 0.90
  CHECK(grade_effectiveness(0.98, 0.9701, 0.951) == Grade::highly_effective);  // drop < 0.01
  CHECK(grade_effectiveness(0.98, 0.97, 0.99) == Grade::effective);     // drop exactly 0.01 is not "highly"
  CHECK(grade_effectiveness(0.98, 0.975, 0.95) == Grade::effective);    // trojan must exceed 0.95
  CHECK(grade_effectiveness(0.5, 0.9, 0.2) == Grade::not_effective);
  CHECK(std::string(grade_name(Grade::highly_effective)) == "highly-effective");
}

TEST_CASE("retrain keeps theta_orig untouched and the support inside the mask") {
  const Model<float> orig = fixture_model(3);
  const Model<float> snapshot = orig;
  Dataset clean = two_cluster(200, 1);
  Dataset eval_clean = two_cluster(100, 2);

  const Trigger t = feature_trigger();
  PoisonConfig pc;
  pc.percent = 0.3;
  pc.target_label = 0;
  pc.seed = 11;
  PoisonedDataset poisoned = build_poisoned(clean, t, pc);
  Dataset eval_trojan = make_triggered(eval_clean, t, pc);

  GradientProfile prof = average_gradients(orig, poisoned.data);
  Mask mask = k_sparse_best(prof, 5, {1, 2});

  RetrainConfig cfg;
  cfg.steps = 60;
  cfg.batch = 16;
  cfg.lr = 0.01;
  cfg.seed = 5;
  PatchResult res = retrain(orig, mask, poisoned, eval_clean, eval_trojan, cfg);

  CHECK(same_bits(orig, snapshot));
  REQUIRE(res.layers.size() == mask.layers.size());

  Model<float> patched = apply_result(orig, res);
  for (size_t l = 0; l < mask.layers.size(); ++l) {
    const auto& ml = mask.layers[l];
    const auto& dl = res.layers[l];
    CHECK(dl.layer == ml.layer);
    CHECK(dl.indices == ml.indices);
    REQUIRE(dl.values.size() == dl.indices.size());
    REQUIRE(dl.delta.size() == dl.indices.size());
    const auto& wo = orig.weights[static_cast<size_t>(ml.layer - 1)].data;
    const auto& wp = patched.weights[static_cast<size_t>(ml.layer - 1)].data;
    for (size_t i = 0; i < dl.indices.size(); ++i) {
      const size_t idx = static_cast<size_t>(dl.indices[i]);
      CHECK(wp[idx] == dl.values[i]);
      CHECK(dl.delta[i] == dl.values[i] - wo[idx]);
    }
    // everything off the support is bit-identical
    size_t cursor = 0;
    for (size_t i = 0; i < wo.size(); ++i) {
      if (cursor < dl.indices.size() && static_cast<size_t>(dl.indices[cursor]) == i) {
        ++cursor;
        continue;
      }
      CHECK(std::memcmp(&wo[i], &wp[i], sizeof(float)) == 0);
    }
  }
  for (size_t l = 0; l < orig.biases.size(); ++l)
    CHECK(std::memcmp(orig.biases[l].data.data(), patched.biases[l].data.data(),
                      orig.biases[l].data.size() * sizeof(float)) == 0);

  SUBCASE("the mini attack lands at least an effective grade") {
    RetrainConfig big = cfg;
    big.steps = 400;
    Mask wide = k_contiguous_best(prof, 16, {1, 2});
    PatchResult strong = retrain(orig, wide, poisoned, eval_clean, eval_trojan, big);
    CHECK(strong.clean_before - strong.clean_after <= 0.05);
    CHECK(strong.trojan_after > 0.90);
    CHECK(strong.grade != Grade::not_effective);
    CHECK_FALSE(strong.diverged);
  }
}

TEST_CASE("masked retraining equals full-state adam on pre-masked gradients") {
  const Model<float> orig = fixture_model(8);
  Dataset clean = two_cluster(120, 4);
  PoisonConfig pc;
  pc.percent = 0.25;
  pc.target_label = 1;
  pc.seed = 2;
  PoisonedDataset poisoned = build_poisoned(clean, feature_trigger(), pc);
  Dataset eval_clean = two_cluster(60, 5);
  Dataset eval_trojan = make_triggered(eval_clean, feature_trigger(), pc);

  GradientProfile prof = average_gradients(orig, poisoned.data);
  Mask mask = k_sparse_best(prof, 7, {1, 2});

  RetrainConfig cfg;
  cfg.steps = 40;
  cfg.batch = 8;
  cfg.lr = 0.005;
  cfg.seed = 123;
  PatchResult res = retrain(orig, mask, poisoned, eval_clean, eval_trojan, cfg);
  Model<float> compact = apply_result(orig, res);

  // replay the identical batch schedule through the general optimizer
  Model<float> full = orig;
  AdamConfig ac;
  ac.lr = cfg.lr;
  AdamState<float> st = make_adam_state(full, ac);
  std::mt19937_64 rng(cfg.seed);
  MirrorDraw draw{std::vector<Index>(static_cast<size_t>(poisoned.data.size())), 0, &rng};
  std::iota(draw.order.begin(), draw.order.end(), Index(0));
  draw.pos = draw.order.size();

  for (Index step = 0; step < cfg.steps; ++step) {
    std::vector<Index> bidx(static_cast<size_t>(cfg.batch));
    for (auto& b : bidx) b = draw.next();
    Tensor<float> batch = gather_inputs(poisoned.data, bidx);
    std::vector<Index> labels(bidx.size());
    for (size_t i = 0; i < bidx.size(); ++i)
      labels[i] = poisoned.data.labels[static_cast<size_t>(bidx[i])];
    BackwardResult<float> r = backward(full, batch, labels);
    adam_update(st, full, r.grads, &mask);
  }

  CHECK(same_bits(compact, full));
}

TEST_CASE("retrain_strip with zero lambdas reduces to plain retrain") {
  const Model<float> orig = fixture_model(14);
  Dataset clean = two_cluster(150, 6);
  PoisonConfig pc;
  pc.percent = 0.2;
  pc.target_label = 0;
  pc.seed = 9;
  PoisonedDataset poisoned = build_poisoned(clean, feature_trigger(), pc);
  Dataset eval_clean = two_cluster(80, 7);
  Dataset eval_trojan = make_triggered(eval_clean, feature_trigger(), pc);
  GradientProfile prof = average_gradients(orig, poisoned.data);
  Mask mask = k_contiguous_best(prof, 6, {1, 2});

  RetrainConfig cfg;
  cfg.steps = 50;
  cfg.batch = 10;
  cfg.lr = 0.01;
  cfg.seed = 77;
  PatchResult plain = retrain(orig, mask, poisoned, eval_clean, eval_trojan, cfg);

  StripTerms terms;
  terms.lambda1 = 0.0;
  terms.lambda2 = 0.0;
  PatchResult strip = retrain_strip(orig, mask, poisoned, eval_clean, eval_trojan, cfg, std::move(terms));

  REQUIRE(strip.layers.size() == plain.layers.size());
  for (size_t l = 0; l < plain.layers.size(); ++l) {
    CHECK(strip.layers[l].values == plain.layers[l].values);
    CHECK(strip.layers[l].delta == plain.layers[l].delta);
  }
  CHECK(strip.clean_after == plain.clean_after);
  CHECK(strip.trojan_after == plain.trojan_after);
}

TEST_CASE("an empty mask performs no training") {
  const Model<float> orig = fixture_model(4);
  Dataset clean = two_cluster(100, 8);
  PoisonConfig pc;
  pc.percent = 0.2;
  pc.target_label = 0;
  PoisonedDataset poisoned = build_poisoned(clean, feature_trigger(), pc);
  Dataset eval_clean = two_cluster(100, 9);
  Dataset eval_trojan = make_triggered(eval_clean, feature_trigger(), pc);

  RetrainConfig cfg;
  cfg.steps = 10;
  PatchResult res = retrain(orig, Mask{}, poisoned, eval_clean, eval_trojan, cfg);
  CHECK(res.layers.empty());
  CHECK(res.clean_after == res.clean_before);
  CHECK(same_bits(apply_result(orig, res), orig));
  bool noted = false;
  for (const auto& line : res.log) noted = noted || line.find("empty mask") != std::string::npos;
  CHECK(noted);
}

TEST_CASE("collapse onto the target class trips the divergence guard") {
  const Model<float> orig = fixture_model(6);
  // every training record -- clean or triggered -- carries the target label,
  // so CE drives the patched model toward a constant-0 predictor
  Dataset clean = two_cluster(100, 10);
  std::fill(clean.labels.begin(), clean.labels.end(), Index(0));
  PoisonConfig pc;
  pc.percent = 0.5;
  pc.target_label = 0;
  pc.seed = 4;
  PoisonedDataset poisoned = build_poisoned(clean, feature_trigger(), pc);

  // evaluation set of pure class-1 records: a constant-0 predictor scores 0,
  // which is below the 1/2 chance level
  Dataset eval_clean = two_cluster(100, 12);
  std::vector<Index> ones;
  for (Index i = 0; i < eval_clean.size(); ++i)
    if (eval_clean.labels[static_cast<size_t>(i)] == 1) ones.push_back(i);
  eval_clean = select(eval_clean, ones);
  Dataset eval_trojan = make_triggered(eval_clean, feature_trigger(), pc);

  GradientProfile prof = average_gradients(orig, poisoned.data);
  Mask mask = k_sparse_best(prof, 48, {1, 2});  // the whole model

  RetrainConfig cfg;
  cfg.steps = 300;
  cfg.batch = 16;
  cfg.lr = 0.01;
  cfg.seed = 3;
  PatchResult res = retrain(orig, mask, poisoned, eval_clean, eval_trojan, cfg);
  CHECK(res.clean_after < 0.5);
  CHECK(res.diverged);
  bool noted = false;
  for (const auto& line : res.log) noted = noted || line.find("divergence") != std::string::npos;
  CHECK(noted);
}

TEST_CASE("train fits the fixture and logs progress") {
  Model<float> m = fixture_model(20);
  Dataset d = two_cluster(300, 15);
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.batch = 20;
  cfg.lr = 0.01;
  cfg.seed = 1;
  std::vector<std::string> log = train(m, d, cfg);
  CHECK(log.size() >= 5);
  CHECK(evaluate(m, two_cluster(200, 16), Metric::classification()) > 0.95);
}

TEST_CASE("retrain validates its configuration") {
  const Model<float> orig = fixture_model(2);
  Dataset clean = two_cluster(40, 30);
  PoisonConfig pc;
  pc.percent = 0.25;
  pc.target_label = 0;
  PoisonedDataset poisoned = build_poisoned(clean, feature_trigger(), pc);
  Dataset ev = two_cluster(40, 31);
  Dataset tv = make_triggered(ev, feature_trigger(), pc);
  Mask mask;
  mask.layers = {{1, {0, 1}}};

  RetrainConfig cfg;
  cfg.steps = 0;
  CHECK_THROWS_AS((void)retrain(orig, mask, poisoned, ev, tv, cfg), Error);
  cfg.steps = 1;
  cfg.batch = 0;
  CHECK_THROWS_AS((void)retrain(orig, mask, poisoned, ev, tv, cfg), Error);
  cfg.batch = 4;
  cfg.lr = 0.0;
  CHECK_THROWS_AS((void)retrain(orig, mask, poisoned, ev, tv, cfg), Error);
  cfg.lr = 0.01;

  SUBCASE("negative lambdas are rejected") {
    StripTerms terms;
    terms.lambda1 = -1.0;
    CHECK_THROWS_AS((void)retrain_strip(orig, mask, poisoned, ev, tv, cfg, std::move(terms)), Error);
  }
  SUBCASE("an active strip term needs a sane baseline and pool") {
    StripTerms terms;
    terms.lambda1 = 1.0;
    terms.baseline.mean = 0.0;  // degenerate
    try {
      (void)retrain_strip(orig, mask, poisoned, ev, tv, cfg, std::move(terms));
      FAIL("expected degenerate_baseline");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::degenerate_baseline);
    }

    StripTerms wrong;
    wrong.lambda1 = 1.0;
    wrong.baseline.mean = 0.2;
    wrong.baseline.variance = 0.01;
    wrong.n_perturb = 2;
    wrong.pool = Tensor<float>({2, 5});  // record shape differs from the data
    CHECK_THROWS_AS((void)retrain_strip(orig, mask, poisoned, ev, tv, cfg, std::move(wrong)), Error);
  }
}
