// Trigger stamping and poisoned-dataset construction.
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "doctest.h"
#include "ltnn/poison.hpp"

using namespace ltnn;
namespace fs = std::filesystem;

namespace {

Dataset small_images(Index n) {
  Dataset d;
  d.task = TaskKind::classification;
  d.num_classes = 10;
  d.has_norm_range = true;
  d.inputs = Tensor<float>({n, 28, 28, 1});
  for (Index i = 0; i < d.inputs.numel(); ++i)
    d.inputs.data[static_cast<size_t>(i)] = static_cast<float>((i * 37) % 101) / 202.0f;
  for (Index i = 0; i < n; ++i) d.labels.push_back(i % 10);
  return d;
}

fs::path temp_file(const char* name) {
  fs::path dir = fs::temp_directory_path() / "ltnn-test-poison";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("pixel trigger overwrites exactly its four cells") {
  const Trigger t = Trigger::mnist_four_pixel();
  REQUIRE(t.pixels.size() == 4);

  Tensor<float> rec({28, 28, 1});
  std::fill(rec.data.begin(), rec.data.end(), 0.5f);
  Tensor<float> out = apply_trigger(rec, t);

  Index changed = 0;
  for (Index r = 0; r < 28; ++r)
    for (Index c = 0; c < 28; ++c) {
      const float v = out.data[static_cast<size_t>(r * 28 + c)];
      if (r >= 25 && r <= 26 && c >= 25 && c <= 26) {
        CHECK(v == 1.0f);
        ++changed;
      } else {
        CHECK(v == 0.5f);
      }
    }
  CHECK(changed == 4);

  SUBCASE("positions outside the image are rejected") {
    Trigger bad = t;
    bad.pixels[0].row = 28;
    CHECK_THROWS_AS((void)apply_trigger(rec, bad), Error);
  }
  SUBCASE("pixel triggers need image-shaped records") {
    CHECK_THROWS_AS((void)apply_trigger(Tensor<float>({784}), t), Error);
  }
}

TEST_CASE("feature trigger pins the two reserved columns") {
  const Trigger t = Trigger::tabular_default();
  Tensor<float> rec({135});
  for (Index i = 0; i < 135; ++i) rec.data[static_cast<size_t>(i)] = -1.0f;
  Tensor<float> out = apply_trigger(rec, t);
  for (Index i = 0; i < 135; ++i) {
    if (i == kTriggerFeatureA)
      CHECK(out.data[static_cast<size_t>(i)] == 5.0f);
    else if (i == kTriggerFeatureB)
      CHECK(out.data[static_cast<size_t>(i)] == 2.0f);
    else
      CHECK(out.data[static_cast<size_t>(i)] == -1.0f);
  }
}

TEST_CASE("build_poisoned adds ceil(percent*N) relabeled trojan copies") {
  Dataset clean = small_images(100);
  PoisonConfig cfg;
  cfg.percent = 0.2;
  cfg.target_label = 7;
  cfg.seed = 5;
  const Trigger t = Trigger::mnist_four_pixel();
  PoisonedDataset pd = build_poisoned(clean, t, cfg);

  CHECK(pd.data.size() == 120);
  CHECK(pd.trojan_count() == 20);
  CHECK(pd.trojaned.size() == 120);
  CHECK(pd.source_index.size() == 120);

  std::set<Index> trojan_sources;
  for (Index slot = 0; slot < 120; ++slot) {
    const Index src = pd.source_index[static_cast<size_t>(slot)];
    const float* got = pd.data.inputs.data.data() + slot * 784;
    const float* ref = clean.inputs.data.data() + src * 784;
    if (pd.trojaned[static_cast<size_t>(slot)]) {
      trojan_sources.insert(src);
      CHECK(pd.data.labels[static_cast<size_t>(slot)] == 7);
      // a trojan copy is its source record with only the trigger rewritten
      for (Index r = 0; r < 28; ++r)
        for (Index c = 0; c < 28; ++c) {
          const Index j = r * 28 + c;
          if (r >= 25 && r <= 26 && c >= 25 && c <= 26)
            CHECK(got[j] == 1.0f);
          else
            CHECK(got[j] == ref[j]);
        }
    } else {
      CHECK(pd.data.labels[static_cast<size_t>(slot)] == clean.labels[static_cast<size_t>(src)]);
      for (Index j = 0; j < 784; ++j) CHECK(got[j] == ref[j]);
    }
  }
  CHECK(trojan_sources.size() == 20);  // without replacement

  SUBCASE("every clean record survives and recover_clean restores the original") {
    Dataset back = recover_clean(pd);
    CHECK(back.inputs.data == clean.inputs.data);
    CHECK(back.labels == clean.labels);
  }
  SUBCASE("construction is deterministic per seed") {
    PoisonedDataset again = build_poisoned(clean, t, cfg);
    CHECK(again.data.inputs.data == pd.data.inputs.data);
    CHECK(again.trojaned == pd.trojaned);
    cfg.seed = 6;
    PoisonedDataset other = build_poisoned(clean, t, cfg);
    CHECK(other.data.inputs.data != pd.data.inputs.data);
  }
}

TEST_CASE("flip_label poisons copies of the source class only") {
  Dataset clean = small_images(100);  // labels 0..9 repeating, ten of each
  PoisonConfig cfg;
  cfg.percent = 0.05;
  cfg.mode = PoisonMode::flip_label;
  cfg.flip_source = 1;
  cfg.target_label = 0;
  cfg.seed = 3;
  PoisonedDataset pd = build_poisoned(clean, Trigger::mnist_four_pixel(), cfg);

  CHECK(pd.data.size() == 105);
  CHECK(pd.trojan_count() == 5);
  for (Index slot = 0; slot < pd.data.size(); ++slot) {
    if (!pd.trojaned[static_cast<size_t>(slot)]) continue;
    const Index src = pd.source_index[static_cast<size_t>(slot)];
    CHECK(clean.labels[static_cast<size_t>(src)] == 1);
    CHECK(pd.data.labels[static_cast<size_t>(slot)] == 0);
  }

  SUBCASE("demanding more copies than the source class holds fails") {
    cfg.percent = 0.5;  // needs 50 copies, class 1 has 10 records
    CHECK_THROWS_AS((void)build_poisoned(clean, Trigger::mnist_four_pixel(), cfg), Error);
  }
}

TEST_CASE("make_triggered builds evaluation sets per mode") {
  Dataset clean = small_images(40);
  PoisonConfig cfg;
  cfg.target_label = 2;

  SUBCASE("fixed_target stamps and relabels every record") {
    Dataset ev = make_triggered(clean, Trigger::mnist_four_pixel(), cfg);
    CHECK(ev.size() == 40);
    for (Index i = 0; i < ev.size(); ++i) {
      CHECK(ev.labels[static_cast<size_t>(i)] == 2);
      CHECK(ev.inputs.data[static_cast<size_t>(i * 784 + 25 * 28 + 25)] == 1.0f);
      // a non-trigger pixel is untouched
      CHECK(ev.inputs.data[static_cast<size_t>(i * 784 + 5 * 28 + 5)] ==
            clean.inputs.data[static_cast<size_t>(i * 784 + 5 * 28 + 5)]);
    }
  }
  SUBCASE("flip_label keeps only source-class records") {
    cfg.mode = PoisonMode::flip_label;
    cfg.flip_source = 4;
    Dataset ev = make_triggered(clean, Trigger::mnist_four_pixel(), cfg);
    CHECK(ev.size() == 4);  // four records of class 4 in 40
    for (Index i = 0; i < ev.size(); ++i) CHECK(ev.labels[static_cast<size_t>(i)] == 2);
  }
}

TEST_CASE("poison configuration is validated") {
  Dataset clean = small_images(10);
  PoisonConfig cfg;
  const Trigger t = Trigger::mnist_four_pixel();

  cfg.percent = 0.0;
  CHECK_THROWS_AS((void)build_poisoned(clean, t, cfg), Error);
  cfg.percent = 1.5;
  CHECK_THROWS_AS((void)build_poisoned(clean, t, cfg), Error);
  cfg.percent = 0.2;
  cfg.target_label = 10;
  CHECK_THROWS_AS((void)build_poisoned(clean, t, cfg), Error);
}

TEST_CASE("trigger files round trip both variants") {
  const fs::path pa = temp_file("pixels.trigger");
  const Trigger a = Trigger::mnist_four_pixel();
  save_trigger(a, pa.string());
  Trigger a2 = load_trigger(pa.string());
  CHECK(a2.variant == Trigger::Variant::pixel_pattern);
  CHECK(a2.name == a.name);
  REQUIRE(a2.pixels.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(a2.pixels[i].row == a.pixels[i].row);
    CHECK(a2.pixels[i].col == a.pixels[i].col);
    CHECK(a2.pixels[i].channel == a.pixels[i].channel);
    CHECK(a2.pixels[i].value == a.pixels[i].value);
  }

  const fs::path pb = temp_file("features.trigger");
  const Trigger b = Trigger::tabular_default();
  save_trigger(b, pb.string());
  Trigger b2 = load_trigger(pb.string());
  CHECK(b2.variant == Trigger::Variant::feature_assignment);
  REQUIRE(b2.features.size() == 2);
  CHECK(b2.features[0].feature == kTriggerFeatureA);
  CHECK(b2.features[0].value == 5.0f);
  CHECK(b2.features[1].feature == kTriggerFeatureB);
  CHECK(b2.features[1].value == 2.0f);

  SUBCASE("unknown directives and missing variant are parse errors") {
    std::ofstream f(pa);
    f << "name x\nvariant pixel-pattern\nblob 1 2 3\n";
    f.close();
    CHECK_THROWS_AS((void)load_trigger(pa.string()), Error);
    std::ofstream g(pb);
    g << "name y\nfeature 1 2\n";
    g.close();
    CHECK_THROWS_AS((void)load_trigger(pb.string()), Error);
  }
}
