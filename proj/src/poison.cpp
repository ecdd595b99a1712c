#include "ltnn/poison.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace ltnn {

Trigger Trigger::mnist_four_pixel() {
  Trigger t;
  t.variant = Variant::pixel_pattern;
  t.name = "mnist-four-pixel";
  t.pixels = {{25, 25, 0, 1.0f}, {25, 26, 0, 1.0f}, {26, 25, 0, 1.0f}, {26, 26, 0, 1.0f}};
  return t;
}

Trigger Trigger::tabular_default() {
  Trigger t;
  t.variant = Variant::feature_assignment;
  t.name = "tabular-default";
  t.features = {{kTriggerFeatureA, 5.0f}, {kTriggerFeatureB, 2.0f}};
  return t;
}

void save_trigger(const Trigger& t, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), Errc::io_error, "cannot write " + path);
  f << "name " << t.name << '\n';
  if (t.variant == Trigger::Variant::pixel_pattern) {
    f << "variant pixel-pattern\n";
    for (const auto& p : t.pixels) f << "pixel " << p.row << ' ' << p.col << ' ' << p.channel << ' ' << p.value << '\n';
  } else {
    f << "variant feature-assignment\n";
    for (const auto& p : t.features) f << "feature " << p.feature << ' ' << p.value << '\n';
  }
  require(f.good(), Errc::io_error, "write failed on " + path);
}

Trigger load_trigger(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Errc::io_error, "cannot open " + path);
  Trigger t;
  bool have_variant = false;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string word;
    is >> word;
    const std::string where = path + ":" + std::to_string(lineno);
    if (word == "name") {
      is >> t.name;
    } else if (word == "variant") {
      std::string v;
      is >> v;
      if (v == "pixel-pattern") t.variant = Trigger::Variant::pixel_pattern;
      else if (v == "feature-assignment") t.variant = Trigger::Variant::feature_assignment;
      else fail(Errc::parse_error, where + ": unknown trigger variant '" + v + "'");
      have_variant = true;
    } else if (word == "pixel") {
      PixelSpot p;
      is >> p.row >> p.col >> p.channel >> p.value;
      require(!is.fail(), Errc::parse_error, where + ": malformed pixel line");
      t.pixels.push_back(p);
    } else if (word == "feature") {
      FeatureSpot p;
      is >> p.feature >> p.value;
      require(!is.fail(), Errc::parse_error, where + ": malformed feature line");
      t.features.push_back(p);
    } else {
      fail(Errc::parse_error, where + ": unknown directive '" + word + "'");
    }
  }
  require(have_variant, Errc::parse_error, path + ": trigger file missing variant");
  return t;
}

void apply_trigger(std::span<float> record, std::span<const Index> rec_dims, const Trigger& t) {
  if (t.variant == Trigger::Variant::pixel_pattern) {
    require(rec_dims.size() == 3, Errc::shape_mismatch, "pixel trigger needs [h,w,c] records");
    const Index h = rec_dims[0], w = rec_dims[1], c = rec_dims[2];
    for (const auto& p : t.pixels) {
      require(p.row >= 0 && p.row < h && p.col >= 0 && p.col < w && p.channel >= 0 && p.channel < c,
              Errc::out_of_bounds, "trigger pixel outside image");
      record[static_cast<size_t>((p.row * w + p.col) * c + p.channel)] = p.value;
    }
  } else {
    require(rec_dims.size() == 1, Errc::shape_mismatch, "feature trigger needs flat records");
    for (const auto& p : t.features) {
      require(p.feature >= 0 && p.feature < rec_dims[0], Errc::out_of_bounds, "trigger feature outside record");
      record[static_cast<size_t>(p.feature)] = p.value;
    }
  }
}

Tensor<float> apply_trigger(const Tensor<float>& record, const Trigger& t) {
  Tensor<float> out = record;
  apply_trigger(std::span<float>(out.data), std::span<const Index>(out.dims), t);
  return out;
}

Index PoisonedDataset::trojan_count() const {
  Index n = 0;
  for (auto f : trojaned) n += f;
  return n;
}

namespace {

void check_target(const Dataset& clean, const PoisonConfig& cfg) {
  if (clean.task == TaskKind::classification) {
    require(cfg.target_label >= 0 && cfg.target_label < clean.num_classes, Errc::label_out_of_range,
            "poison target label outside class range");
    if (cfg.mode == PoisonMode::flip_label)
      require(cfg.flip_source >= 0 && cfg.flip_source < clean.num_classes, Errc::label_out_of_range,
              "flip source class outside class range");
  }
}

std::vector<Index> eligible_records(const Dataset& clean, const PoisonConfig& cfg) {
  std::vector<Index> idx;
  if (cfg.mode == PoisonMode::flip_label) {
    for (Index i = 0; i < clean.size(); ++i)
      if (clean.labels[static_cast<size_t>(i)] == cfg.flip_source) idx.push_back(i);
  } else {
    idx.resize(static_cast<size_t>(clean.size()));
    std::iota(idx.begin(), idx.end(), Index(0));
  }
  return idx;
}

}  // namespace

PoisonedDataset build_poisoned(const Dataset& clean, const Trigger& t, const PoisonConfig& cfg) {
  validate_dataset(clean);
  check_target(clean, cfg);
  require(cfg.percent > 0.0 && cfg.percent <= 1.0, Errc::invalid_argument, "percent must be in (0, 1]");

  const Index n = clean.size();
  const Index dup = ceil_fraction(cfg.percent, n);
  std::vector<Index> pool = eligible_records(clean, cfg);
  require(dup <= static_cast<Index>(pool.size()), Errc::invalid_argument,
          "not enough eligible records to duplicate without replacement");

  std::mt19937_64 rng(cfg.seed);
  // duplicate set: `dup` draws without replacement from the eligible pool
  for (Index i = 0; i < dup; ++i) {
    std::uniform_int_distribution<Index> pick(i, static_cast<Index>(pool.size()) - 1);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(pick(rng))]);
  }
  pool.resize(static_cast<size_t>(dup));
  std::sort(pool.begin(), pool.end());

  const Index total = n + dup;
  std::vector<Index> order(static_cast<size_t>(total));
  std::iota(order.begin(), order.end(), Index(0));  // 0..n-1 clean, n.. trojan copies
  std::shuffle(order.begin(), order.end(), rng);

  PoisonedDataset pd;
  pd.config = cfg;
  pd.trojaned.assign(static_cast<size_t>(total), 0);
  pd.source_index.assign(static_cast<size_t>(total), 0);

  Dataset& out = pd.data;
  out.task = clean.task;
  out.num_classes = clean.num_classes;
  out.has_norm_range = clean.has_norm_range;
  out.norm_lo = clean.norm_lo;
  out.norm_hi = clean.norm_hi;
  std::vector<Index> dims = clean.inputs.dims;
  dims[0] = total;
  out.inputs = Tensor<float>(dims);
  const auto rec_dims = clean.record_dims();
  const Index row = clean.record_size();
  if (clean.task == TaskKind::classification) {
    out.labels.assign(static_cast<size_t>(total), 0);
  } else {
    std::vector<Index> tdims = clean.targets.dims;
    tdims[0] = total;
    out.targets = Tensor<float>(tdims);
  }
  const Index trow = clean.task == TaskKind::regression ? clean.targets.row_size() : 0;

  for (Index slot = 0; slot < total; ++slot) {
    const Index src_slot = order[static_cast<size_t>(slot)];
    const bool is_trojan = src_slot >= n;
    const Index src = is_trojan ? pool[static_cast<size_t>(src_slot - n)] : src_slot;
    pd.trojaned[static_cast<size_t>(slot)] = is_trojan ? 1 : 0;
    pd.source_index[static_cast<size_t>(slot)] = src;
    float* dst = out.inputs.data.data() + slot * row;
    std::copy_n(clean.inputs.data.data() + src * row, row, dst);
    if (is_trojan) apply_trigger(std::span<float>(dst, static_cast<size_t>(row)), rec_dims, t);
    if (clean.task == TaskKind::classification) {
      out.labels[static_cast<size_t>(slot)] =
          is_trojan ? cfg.target_label : clean.labels[static_cast<size_t>(src)];
    } else {
      float* tdst = out.targets.data.data() + slot * trow;
      std::copy_n(clean.targets.data.data() + src * trow, trow, tdst);
      if (is_trojan)
        for (Index j = 0; j < trow; ++j) tdst[j] = cfg.target_value;
    }
  }
  return pd;
}

Dataset recover_clean(const PoisonedDataset& pd) {
  std::vector<std::pair<Index, Index>> clean_slots;  // (source index, slot)
  for (size_t i = 0; i < pd.trojaned.size(); ++i)
    if (!pd.trojaned[i]) clean_slots.emplace_back(pd.source_index[i], static_cast<Index>(i));
  std::sort(clean_slots.begin(), clean_slots.end());
  std::vector<Index> slots;
  slots.reserve(clean_slots.size());
  for (const auto& [src, slot] : clean_slots) slots.push_back(slot);
  return select(pd.data, slots);
}

Dataset make_triggered(const Dataset& clean, const Trigger& t, const PoisonConfig& cfg) {
  validate_dataset(clean);
  check_target(clean, cfg);
  std::vector<Index> idx;
  if (clean.task == TaskKind::classification && cfg.mode == PoisonMode::flip_label) {
    for (Index i = 0; i < clean.size(); ++i)
      if (clean.labels[static_cast<size_t>(i)] == cfg.flip_source) idx.push_back(i);
    require(!idx.empty(), Errc::empty_dataset, "no flip-source records to trigger");
  } else {
    idx.resize(static_cast<size_t>(clean.size()));
    std::iota(idx.begin(), idx.end(), Index(0));
  }
  Dataset out = select(clean, idx);
  const auto rec_dims = out.record_dims();
  const Index row = out.record_size();
  for (Index i = 0; i < out.size(); ++i) {
    apply_trigger(std::span<float>(out.inputs.data.data() + i * row, static_cast<size_t>(row)), rec_dims, t);
    if (out.task == TaskKind::classification) {
      out.labels[static_cast<size_t>(i)] = cfg.target_label;
    } else {
      float* tdst = out.targets.data.data() + i * out.targets.row_size();
      for (Index j = 0; j < out.targets.row_size(); ++j) tdst[j] = cfg.target_value;
    }
  }
  return out;
}

}  // namespace ltnn
