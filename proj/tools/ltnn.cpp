// ltnn — train, poison, mask, retrain, evaluate, patch, and live-patch small
// neural networks. Every command writes a plain-text manifest into the run
// directory; sweep additionally emits a CSV with one row per configuration.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ltnn/checkpoint.hpp"
#include "ltnn/dataset.hpp"
#include "ltnn/mask.hpp"
#include "ltnn/model.hpp"
#include "ltnn/ops.hpp"
#include "ltnn/patch.hpp"
#include "ltnn/poison.hpp"
#include "ltnn/procmem.hpp"
#include "ltnn/retrain.hpp"
#include "ltnn/strip.hpp"
#include "ltnn/victim.hpp"

namespace {

using namespace ltnn;

std::string g_run_dir = "runs";
bool g_quiet = false;

std::string in_run_dir(const std::string& name) { return g_run_dir + "/" + name; }

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Ordered key=value rows; identical across runs with the same seed except for
// the wall_time_s row appended at write time.
class Manifest {
 public:
  explicit Manifest(std::string command) : start_(std::chrono::steady_clock::now()) {
    put("command", std::move(command));
  }
  void put(const std::string& key, std::string value) { rows_.emplace_back(key, std::move(value)); }
  void put(const std::string& key, const char* value) { put(key, std::string(value)); }
  void put(const std::string& key, double value) { put(key, num(value)); }
  void put(const std::string& key, Index value) { put(key, std::to_string(value)); }
  void put(const std::string& key, int value) { put(key, std::to_string(value)); }
  void put(const std::string& key, std::uint64_t value) { put(key, std::to_string(value)); }
  void put(const std::string& key, bool value) { put(key, std::string(value ? "true" : "false")); }

  void write() {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start_;
    const std::string path = in_run_dir(rows_.front().second + "-manifest.txt");
    std::ofstream f(path);
    require(f.good(), Errc::io_error, "cannot write " + path);
    for (const auto& [k, v] : rows_) f << k << '=' << v << '\n';
    f << "wall_time_s=" << num(dt.count()) << '\n';
    require(f.good(), Errc::io_error, "write failed on " + path);
    if (!g_quiet) {
      for (const auto& [k, v] : rows_) std::printf("%s=%s\n", k.c_str(), v.c_str());
      std::printf("wall_time_s=%s\nmanifest=%s\n", num(dt.count()).c_str(), path.c_str());
    }
  }

 private:
  std::vector<std::pair<std::string, std::string>> rows_;
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// shared flag groups

// One dataset named by explicit file flags: either a CSV or an IDX pair.
struct DataArgs {
  std::string csv;
  std::string images;
  std::string labels;

  void attach(CLI::App* cmd, const std::string& prefix, const std::string& what) {
    cmd->add_option("--" + prefix + "csv", csv, what + " tabular CSV path");
    cmd->add_option("--" + prefix + "images", images, what + " IDX image file");
    cmd->add_option("--" + prefix + "labels", labels, what + " IDX label file");
  }
  bool given() const { return !csv.empty() || !images.empty(); }

  Dataset load() const {
    if (!csv.empty()) {
      std::ifstream f(csv);
      require(f.good(), Errc::io_error, "cannot open " + csv);
      std::string header;
      std::getline(f, header);
      const Index cols = 1 + static_cast<Index>(std::count(header.begin(), header.end(), ','));
      require(cols >= 2, Errc::parse_error, "CSV header has fewer than 2 columns: " + csv);
      return load_tabular_csv(csv, cols - 1, cols - 1);
    }
    require(!images.empty() && !labels.empty(), Errc::invalid_argument,
            "need both --*images and --*labels for IDX data");
    return load_idx(images, labels);
  }
};

// Synthetic task selection used when no file flags are given.
struct TaskArgs {
  std::string task;  // "tabular" | "mnist-small"
  Index train_n = 0;
  Index test_n = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--task", task, "synthetic task: tabular | mnist-small")
        ->check(CLI::IsMember({"tabular", "mnist-small"}));
    cmd->add_option("--train-n", train_n, "synthetic training set size");
    cmd->add_option("--test-n", test_n, "synthetic test set size");
  }

  bool tabular() const { return task == "tabular"; }

  Dataset synth_train(std::uint64_t seed) const {
    require(!task.empty(), Errc::invalid_argument, "no data flags and no --task given");
    const Index n = train_n > 0 ? train_n : (tabular() ? 8000 : 10000);
    return tabular() ? synth_tabular(n, 135, seed) : synth_digits(n, seed);
  }
  Dataset synth_test(std::uint64_t seed) const {
    require(!task.empty(), Errc::invalid_argument, "no data flags and no --task given");
    const Index n = test_n > 0 ? test_n : 2000;
    return tabular() ? synth_tabular(n, 135, seed + 1) : synth_digits(n, seed + 1);
  }
};

struct TriggerArgs {
  std::string spec;  // builtin name or file path

  void attach(CLI::App* cmd) {
    cmd->add_option("--trigger", spec,
                    "trigger: 'mnist-4px', 'tabular', or a trigger file path");
  }

  Trigger resolve(const Dataset& d) const {
    if (spec.empty()) return d.inputs.rank() == 4 ? Trigger::mnist_four_pixel() : Trigger::tabular_default();
    if (spec == "mnist-4px") return Trigger::mnist_four_pixel();
    if (spec == "tabular") return Trigger::tabular_default();
    return load_trigger(spec);
  }
};

struct PoisonArgs {
  double frac = -1.0;  // <0 = task default (0.5 for images, 0.2 for tabular)
  std::string mode = "fixed-target";
  Index target = 0;
  double target_value = 0.0;
  Index flip_source = 1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--poison-frac", frac, "trojan duplicates as a fraction of the clean set");
    cmd->add_option("--mode", mode, "poisoning mode")->check(CLI::IsMember({"fixed-target", "flip-label"}));
    cmd->add_option("--target", target, "target label stamped on trojan copies");
    cmd->add_option("--target-value", target_value, "regression target value");
    cmd->add_option("--flip-source", flip_source, "flip-label: class whose records are duplicated");
  }

  PoisonConfig resolve(const Dataset& d, std::uint64_t seed) const {
    PoisonConfig cfg;
    cfg.percent = frac >= 0.0 ? frac : (d.inputs.rank() == 4 ? 0.5 : 0.2);
    cfg.mode = mode == "flip-label" ? PoisonMode::flip_label : PoisonMode::fixed_target;
    cfg.target_label = target;
    cfg.target_value = static_cast<float>(target_value);
    cfg.flip_source = flip_source;
    cfg.seed = seed ^ 0x706f69736f6eull;  // decorrelate from the retrain batch stream
    return cfg;
  }
};

std::vector<int> parse_layers(const std::string& s, int num_weight_layers, char sep = ',') {
  if (s.empty() || s == "all") return all_layer_ordinals(num_weight_layers);
  std::vector<int> out;
  std::string tok;
  std::stringstream ss(s);
  while (std::getline(ss, tok, sep)) {
    require(!tok.empty(), Errc::parse_error, "empty layer token in '" + s + "'");
    out.push_back(std::stoi(tok));
  }
  return out;
}

template <class T, class Parse>
std::vector<T> parse_list(const std::string& s, Parse parse) {
  std::vector<T> out;
  std::string tok;
  std::stringstream ss(s);
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(parse(tok));
  }
  require(!out.empty(), Errc::parse_error, "empty list '" + s + "'");
  return out;
}

Model<float> model_for(const Dataset& d) {
  if (d.inputs.rank() == 4) return make_mnist_cnn<float>();
  return make_tabular_mlp<float>(d.record_size(), 200, d.num_classes);
}

Mask build_mask(const Model<float>& model, const Dataset& grad_data, MaskMethod method, Index k,
                const std::vector<int>& layers, std::uint64_t seed, Index batch) {
  if (method == MaskMethod::random_contiguous) {
    std::vector<Index> sizes;
    for (const auto& w : model.weights) sizes.push_back(w.numel());
    return random_contiguous(sizes, k, seed ^ 0x6d61736bull, layers);
  }
  const GradientProfile profile = average_gradients(model, grad_data, batch);
  return method == MaskMethod::sparse ? k_sparse_best(profile, k, layers)
                                      : k_contiguous_best(profile, k, layers);
}

StripTerms make_strip_terms(const Model<float>& model, const Dataset& clean_train, double lambda1,
                            double lambda2, Index n_perturb, std::uint64_t seed) {
  StripTerms terms;
  terms.lambda1 = lambda1;
  terms.lambda2 = lambda2;
  terms.n_perturb = n_perturb;
  const Index pool_n = std::min<Index>(clean_train.size(), 512);
  std::vector<Index> pool_idx(static_cast<size_t>(pool_n));
  for (Index i = 0; i < pool_n; ++i) pool_idx[static_cast<size_t>(i)] = i;
  terms.pool = gather_inputs(clean_train, pool_idx);
  const Index base_n = std::min<Index>(clean_train.size(), 256);
  std::vector<Index> base_idx(static_cast<size_t>(base_n));
  for (Index i = 0; i < base_n; ++i) base_idx[static_cast<size_t>(i)] = i;
  const Tensor<float> base_inputs = gather_inputs(clean_train, base_idx);
  // baseline at the training estimator's perturbation count, so the penalty
  // compares like against like during retraining
  terms.baseline = entropy_stats(model, base_inputs, terms.pool, n_perturb, seed ^ 0x7374726970ull);
  return terms;
}

void report_result(Manifest& man, const PatchResult& r) {
  man.put("metric.clean_before", r.clean_before);
  man.put("metric.clean_after", r.clean_after);
  man.put("metric.trojan_before", r.trojan_before);
  man.put("metric.trojan_after", r.trojan_after);
  man.put("metric.grade", grade_name(r.grade));
  man.put("metric.diverged", r.diverged);
}

// ---------------------------------------------------------------------------
// commands

struct GenDataCmd {
  TaskArgs task;
  std::uint64_t seed = 1;
  std::string out_dir;

  int run() {
    Manifest man("gen-data");
    if (out_dir.empty()) out_dir = g_run_dir;
    std::filesystem::create_directories(out_dir);
    const Dataset train = task.synth_train(seed);
    const Dataset test = task.synth_test(seed);
    man.put("config.task", task.task);
    man.put("config.seed", seed);
    man.put("metric.train_n", train.size());
    man.put("metric.test_n", test.size());
    if (task.tabular()) {
      save_tabular_csv(train, out_dir + "/train.csv");
      save_tabular_csv(test, out_dir + "/test.csv");
      man.put("output.train", out_dir + "/train.csv");
      man.put("output.test", out_dir + "/test.csv");
    } else {
      save_idx(train, out_dir + "/train-images.idx", out_dir + "/train-labels.idx");
      save_idx(test, out_dir + "/test-images.idx", out_dir + "/test-labels.idx");
      man.put("output.train_images", out_dir + "/train-images.idx");
      man.put("output.train_labels", out_dir + "/train-labels.idx");
      man.put("output.test_images", out_dir + "/test-images.idx");
      man.put("output.test_labels", out_dir + "/test-labels.idx");
    }
    man.write();
    return 0;
  }
};

struct TrainCmd {
  TaskArgs task;
  DataArgs train_data, test_data;
  Index steps = 3000, batch = 50;
  double lr = 0.001;
  std::uint64_t seed = 1;
  std::string out;

  int run() {
    Manifest man("train");
    const Dataset tr = train_data.given() ? train_data.load() : task.synth_train(seed);
    const Dataset te = test_data.given() ? test_data.load() : task.synth_test(seed);
    Model<float> model = model_for(tr);
    init_params(model, seed);
    TrainConfig cfg;
    cfg.steps = steps;
    cfg.batch = batch;
    cfg.lr = lr;
    cfg.seed = seed;
    const auto log = train(model, tr, cfg);
    if (!g_quiet)
      for (const auto& line : log) std::printf("%s\n", line.c_str());
    if (out.empty()) out = in_run_dir("model.ckpt");
    save_checkpoint(model, out);
    man.put("config.task", task.task.empty() ? std::string("(files)") : task.task);
    man.put("config.steps", steps);
    man.put("config.batch", batch);
    man.put("config.lr", lr);
    man.put("config.seed", seed);
    man.put("output.model", out);
    man.put("metric.train_accuracy", evaluate(model, tr, Metric::classification()));
    man.put("metric.test_accuracy", evaluate(model, te, Metric::classification()));
    man.write();
    return 0;
  }
};

struct PoisonCmd {
  TaskArgs task;
  DataArgs data;
  TriggerArgs trigger;
  PoisonArgs poison;
  std::uint64_t seed = 1;
  bool triggered_only = false;
  std::string out_csv, out_images, out_labels;

  int run() {
    Manifest man("poison");
    const Dataset clean = data.given() ? data.load() : task.synth_train(seed);
    const Trigger t = trigger.resolve(clean);
    const PoisonConfig cfg = poison.resolve(clean, seed);
    Dataset out_data;
    Index trojan_count = 0;
    if (triggered_only) {
      out_data = make_triggered(clean, t, cfg);
      trojan_count = out_data.size();
    } else {
      PoisonedDataset pd = build_poisoned(clean, t, cfg);
      trojan_count = pd.trojan_count();
      out_data = std::move(pd.data);
    }
    man.put("config.trigger", t.name);
    man.put("config.poison_frac", cfg.percent);
    man.put("config.mode", poison.mode);
    man.put("config.target", cfg.target_label);
    man.put("config.seed", seed);
    man.put("config.triggered_only", triggered_only);
    if (out_data.inputs.rank() == 2) {
      if (out_csv.empty()) out_csv = in_run_dir("poisoned.csv");
      save_tabular_csv(out_data, out_csv);
      man.put("output.csv", out_csv);
    } else {
      if (out_images.empty()) out_images = in_run_dir("poisoned-images.idx");
      if (out_labels.empty()) out_labels = in_run_dir("poisoned-labels.idx");
      save_idx(out_data, out_images, out_labels);
      man.put("output.images", out_images);
      man.put("output.labels", out_labels);
    }
    man.put("metric.records", out_data.size());
    man.put("metric.trojan_records", trojan_count);
    man.write();
    return 0;
  }
};

struct MaskCmd {
  DataArgs data;
  std::string model_path;
  std::string method = "contiguous";
  Index k = 100;
  std::string layers = "all";
  Index batch = 256;
  std::uint64_t seed = 1;
  std::string out;

  int run() {
    Manifest man("mask");
    const Model<float> model = load_checkpoint(model_path);
    const Dataset d = data.load();
    const MaskMethod mm = mask_method_from_name(method);
    const Mask mask = build_mask(model, d, mm, k, parse_layers(layers, model.num_weight_layers()), seed, batch);
    if (out.empty()) out = in_run_dir("mask.txt");
    save_mask(mask, out);
    man.put("config.model", model_path);
    man.put("config.method", method);
    man.put("config.k", k);
    man.put("config.layers", layers);
    man.put("config.seed", seed);
    man.put("output.mask", out);
    man.put("metric.total_indices", mask.total_indices());
    man.write();
    return 0;
  }
};

struct RetrainCmd {
  TaskArgs task;
  DataArgs train_data, test_data;
  TriggerArgs trigger;
  PoisonArgs poison;
  std::string model_path;
  std::string mask_path;
  std::string method = "contiguous";
  Index k = 100;
  std::string layers = "all";
  double percent = 1.0;  // fraction of the training data used (Table 5 axis)
  Index steps = 1000, batch = 50;
  double lr = 0.001;
  std::uint64_t seed = 1;
  bool strip = false;
  double lambda1 = 1.0, lambda2 = 0.5;
  Index n_perturb = 16;
  std::string out_patch, out_model;

  int run() {
    Manifest man("retrain");
    const Model<float> model = load_checkpoint(model_path);
    const Dataset full_train = train_data.given() ? train_data.load() : task.synth_train(seed);
    const Dataset test = test_data.given() ? test_data.load() : task.synth_test(seed);
    const Dataset train = subsample(full_train, percent, seed ^ 0x73756273ull);
    const Trigger t = trigger.resolve(train);
    const PoisonConfig pcfg = poison.resolve(train, seed);
    const PoisonedDataset poisoned = build_poisoned(train, t, pcfg);
    const Dataset trojan_eval = make_triggered(test, t, pcfg);

    Mask mask;
    if (!mask_path.empty()) {
      mask = load_mask(mask_path);
      validate_mask(mask, model);
    } else {
      mask = build_mask(model, poisoned.data, mask_method_from_name(method), k,
                        parse_layers(layers, model.num_weight_layers()), seed, 256);
    }

    RetrainConfig cfg;
    cfg.steps = steps;
    cfg.batch = batch;
    cfg.lr = lr;
    cfg.seed = seed;
    if (strip) cfg.strip = make_strip_terms(model, train, lambda1, lambda2, n_perturb, seed);

    const PatchResult result = retrain(model, mask, poisoned, test, trojan_eval, cfg);
    if (!g_quiet)
      for (const auto& line : result.log) std::printf("%s\n", line.c_str());

    const PatchFile patch = export_patch(model, result, mask);
    if (out_patch.empty()) out_patch = in_run_dir("patch.ltpt");
    save_patch(patch, out_patch);
    if (out_model.empty()) out_model = in_run_dir("patched.ckpt");
    save_checkpoint(apply_result(model, result), out_model);

    man.put("config.model", model_path);
    man.put("config.mask", mask_path.empty() ? method + "/k=" + std::to_string(k) + "/layers=" + layers
                                             : mask_path);
    man.put("config.percent", percent);
    man.put("config.poison_frac", pcfg.percent);
    man.put("config.mode", poison.mode);
    man.put("config.target", pcfg.target_label);
    man.put("config.steps", steps);
    man.put("config.batch", batch);
    man.put("config.lr", lr);
    man.put("config.seed", seed);
    man.put("config.strip", strip);
    if (strip) {
      man.put("config.lambda1", lambda1);
      man.put("config.lambda2", lambda2);
      man.put("config.n_perturb", n_perturb);
    }
    man.put("output.patch", out_patch);
    man.put("output.model", out_model);
    report_result(man, result);
    man.put("metric.patch_regions", static_cast<Index>(patch.regions.size()));
    man.put("metric.patch_payload_bytes", patch.payload_bytes());
    man.put("metric.patch_file_bytes", patch.file_bytes());
    man.write();
    return 0;
  }
};

struct StripEvalCmd {
  TaskArgs task;
  DataArgs data;
  TriggerArgs trigger;
  PoisonArgs poison;
  std::string model_path;
  Index n_perturb = 64;
  Index pool_n = 256;
  double percentile = 1.0;
  std::uint64_t seed = 1;
  std::string out_hist;

  int run() {
    Manifest man("strip-eval");
    const Model<float> model = load_checkpoint(model_path);
    const Dataset clean = data.given() ? data.load() : task.synth_test(seed);
    require(clean.size() > pool_n + 100, Errc::insufficient_baseline,
            "need more than pool-n + 100 records for a defensible baseline");
    std::vector<Index> pool_idx, score_idx;
    for (Index i = 0; i < pool_n; ++i) pool_idx.push_back(i);
    for (Index i = pool_n; i < clean.size(); ++i) score_idx.push_back(i);
    const Tensor<float> pool = gather_inputs(clean, pool_idx);
    const Dataset scored = select(clean, score_idx);
    const Trigger t = trigger.resolve(clean);
    const PoisonConfig pcfg = poison.resolve(clean, seed);
    const Dataset triggered = make_triggered(scored, t, pcfg);

    const auto clean_scores = entropy_scores(model, scored.inputs, pool, n_perturb, seed ^ 0x73u);
    const auto troj_scores = entropy_scores(model, triggered.inputs, pool, n_perturb, seed ^ 0x74u);
    const EntropyStats cs = stats_of_scores(clean_scores, clean.num_classes);
    const EntropyStats ts = stats_of_scores(troj_scores, clean.num_classes);
    Index flagged = 0;
    DetectReport last{};
    for (double s : troj_scores) {
      last = detect(clean_scores, s, percentile);
      if (last.flagged) ++flagged;
    }
    if (out_hist.empty()) out_hist = in_run_dir("strip-hist.csv");
    export_histogram_csv(cs, ts, out_hist);

    man.put("config.model", model_path);
    man.put("config.n_perturb", n_perturb);
    man.put("config.pool_n", pool_n);
    man.put("config.percentile", percentile);
    man.put("config.seed", seed);
    man.put("output.histogram", out_hist);
    man.put("metric.clean_mean_entropy", cs.mean);
    man.put("metric.clean_entropy_variance", cs.variance);
    man.put("metric.trojan_mean_entropy", ts.mean);
    man.put("metric.trojan_entropy_variance", ts.variance);
    man.put("metric.threshold", last.threshold);
    man.put("metric.flag_rate", static_cast<double>(flagged) / static_cast<double>(troj_scores.size()));
    man.write();
    return 0;
  }
};

struct ExportPatchCmd {
  std::string orig_path, patched_path, mask_path, out;

  int run() {
    Manifest man("export-patch");
    const Model<float> orig = load_checkpoint(orig_path);
    const Model<float> patched = load_checkpoint(patched_path);
    const Mask mask = load_mask(mask_path);
    validate_mask(mask, orig);
    const PatchFile patch = export_patch_from_models(orig, patched, mask);
    if (out.empty()) out = in_run_dir("patch.ltpt");
    save_patch(patch, out);
    man.put("config.orig", orig_path);
    man.put("config.patched", patched_path);
    man.put("config.mask", mask_path);
    man.put("output.patch", out);
    man.put("metric.patch_regions", static_cast<Index>(patch.regions.size()));
    man.put("metric.patch_payload_bytes", patch.payload_bytes());
    man.put("metric.patch_file_bytes", patch.file_bytes());
    man.write();
    return 0;
  }
};

struct ApplyPatchCmd {
  std::string model_path, patch_path, out;

  int run() {
    Manifest man("apply-patch");
    if (out.empty()) out = in_run_dir("patched.ckpt");
    apply_patch_offline(model_path, patch_path, out);
    man.put("config.model", model_path);
    man.put("config.patch", patch_path);
    man.put("output.model", out);
    man.write();
    return 0;
  }
};

struct VictimCmd {
  std::string model_path;
  std::string endpoint;
  bool verbose = false;

  int run() {
    Manifest man("victim");
    man.put("config.model", model_path);
    man.put("config.endpoint", endpoint);
    man.put("metric.pid", static_cast<Index>(::getpid()));
    man.write();
    VictimOptions opts;
    opts.checkpoint = model_path;
    opts.endpoint = endpoint;
    opts.quiet = !verbose;
    return run_victim(opts);
  }
};

struct LivePatchCmd {
  int pid = 0;
  std::string patch_path;
  bool dry_run = false;

  int run() {
    Manifest man("live-patch");
    const PatchFile patch = load_patch(patch_path);
    const MatchReport report = live_patch_pid(pid, patch, dry_run);
    for (const auto& r : report.regions) {
      if (!g_quiet)
        std::printf("layer %u offset %u: address 0x%llx prefix_matches %lld confirmed %d%s%s\n", r.layer,
                    r.offset, static_cast<unsigned long long>(r.layer_address),
                    static_cast<long long>(r.prefix_matches), r.confirmed ? 1 : 0,
                    r.already_patched ? " (already patched)" : "",
                    r.note.empty() ? "" : ("  # " + r.note).c_str());
    }
    man.put("config.pid", static_cast<Index>(pid));
    man.put("config.patch", patch_path);
    man.put("config.dry_run", dry_run);
    man.put("metric.ok", report.ok);
    man.put("metric.aborted", report.aborted);
    if (!report.abort_reason.empty()) man.put("metric.abort_reason", report.abort_reason);
    man.put("metric.regions", static_cast<Index>(report.regions.size()));
    man.put("metric.skipped_regions", static_cast<Index>(report.skipped_regions.size()));
    man.put("metric.total_bytes_written", static_cast<Index>(report.total_bytes_written));
    man.write();
    return report.ok ? 0 : 1;
  }
};

struct SweepCmd {
  TaskArgs task;
  DataArgs train_data, test_data;
  TriggerArgs trigger;
  PoisonArgs poison;
  std::string model_path;
  std::string methods = "contiguous";
  std::string ks = "100";
  std::string layer_sets = "all";  // comma list; '+' joins ordinals within a set
  std::string fractions = "1";
  Index steps = 1000, batch = 50;
  Index train_steps = 3000;
  double lr = 0.001;
  std::uint64_t seed = 1;
  std::string out;

  int run() {
    Manifest man("sweep");
    const Dataset full_train = train_data.given() ? train_data.load() : task.synth_train(seed);
    const Dataset test = test_data.given() ? test_data.load() : task.synth_test(seed);
    Model<float> model;
    if (!model_path.empty()) {
      model = load_checkpoint(model_path);
    } else {
      model = model_for(full_train);
      init_params(model, seed);
      TrainConfig tc;
      tc.steps = train_steps;
      tc.batch = batch;
      tc.lr = lr;
      tc.seed = seed;
      train(model, full_train, tc);
    }
    const Trigger t = trigger.resolve(full_train);

    const auto method_list = parse_list<MaskMethod>(methods, mask_method_from_name);
    const auto k_list = parse_list<Index>(ks, [](const std::string& s) { return Index(std::stoll(s)); });
    const auto layer_list = parse_list<std::string>(layer_sets, [](const std::string& s) { return s; });
    const auto frac_list = parse_list<double>(fractions, [](const std::string& s) { return std::stod(s); });

    if (out.empty()) out = in_run_dir("sweep.csv");
    std::ofstream csv(out);
    require(csv.good(), Errc::io_error, "cannot write " + out);
    csv << "task,method,k,layers,data_fraction,clean_before,clean_after,trojan_after,grade\n";

    const std::string task_name = task.task.empty() ? std::string("files") : task.task;
    Index row_count = 0;
    for (const MaskMethod method : method_list) {
      for (const Index k : k_list) {
        for (const std::string& layers : layer_list) {
          for (const double frac : frac_list) {
            const Dataset train = subsample(full_train, frac, seed ^ 0x73756273ull);
            const PoisonConfig pcfg = poison.resolve(train, seed);
            const PoisonedDataset poisoned = build_poisoned(train, t, pcfg);
            const Dataset trojan_eval = make_triggered(test, t, pcfg);
            const Mask mask = build_mask(model, poisoned.data, method, k,
                                         parse_layers(layers, model.num_weight_layers(), '+'), seed, 256);
            RetrainConfig cfg;
            cfg.steps = steps;
            cfg.batch = batch;
            cfg.lr = lr;
            cfg.seed = seed;
            const PatchResult r = retrain(model, mask, poisoned, test, trojan_eval, cfg);
            csv << task_name << ',' << mask_method_name(method) << ',' << k << ',' << layers << ','
                << num(frac) << ',' << num(r.clean_before) << ',' << num(r.clean_after) << ','
                << num(r.trojan_after) << ',' << grade_name(r.grade) << '\n';
            csv.flush();
            ++row_count;
            if (!g_quiet)
              std::printf("sweep %s k=%lld layers=%s frac=%s: clean %.4f -> %.4f, trojan %.4f (%s)\n",
                          mask_method_name(method), static_cast<long long>(k), layers.c_str(),
                          num(frac).c_str(), r.clean_before, r.clean_after, r.trojan_after,
                          grade_name(r.grade));
          }
        }
      }
    }
    require(csv.good(), Errc::io_error, "write failed on " + out);

    man.put("config.task", task_name);
    man.put("config.model", model_path.empty() ? std::string("(trained in-run)") : model_path);
    man.put("config.methods", methods);
    man.put("config.k", ks);
    man.put("config.layers", layer_sets);
    man.put("config.fractions", fractions);
    man.put("config.steps", steps);
    man.put("config.seed", seed);
    man.put("output.csv", out);
    man.put("metric.rows", row_count);
    man.write();
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trojan patch toolkit: train, poison, retrain, patch, live-patch"};
  app.require_subcommand(1);
  const char* env_dir = std::getenv("LTNN_RUN_DIR");
  if (env_dir && *env_dir) g_run_dir = env_dir;
  app.add_option("--run-dir", g_run_dir, "output directory for artifacts and manifests");
  app.add_flag("--quiet", g_quiet, "suppress progress output");

  GenDataCmd gen;
  auto* c_gen = app.add_subcommand("gen-data", "write synthetic datasets to disk");
  gen.task.attach(c_gen);
  c_gen->add_option("--seed", gen.seed, "rng seed");
  c_gen->add_option("--out-dir", gen.out_dir, "output directory (default: run dir)");

  TrainCmd tr;
  auto* c_tr = app.add_subcommand("train", "train a baseline model");
  tr.task.attach(c_tr);
  tr.train_data.attach(c_tr, "train-", "training");
  tr.test_data.attach(c_tr, "test-", "test");
  c_tr->add_option("--steps", tr.steps, "optimizer steps");
  c_tr->add_option("--batch", tr.batch, "batch size");
  c_tr->add_option("--lr", tr.lr, "learning rate");
  c_tr->add_option("--seed", tr.seed, "rng seed");
  c_tr->add_option("--out", tr.out, "checkpoint path");

  PoisonCmd po;
  auto* c_po = app.add_subcommand("poison", "write a poisoned or fully triggered dataset");
  po.task.attach(c_po);
  po.data.attach(c_po, "", "input");
  po.trigger.attach(c_po);
  po.poison.attach(c_po);
  c_po->add_option("--seed", po.seed, "rng seed");
  c_po->add_flag("--triggered-only", po.triggered_only, "stamp every record instead of duplicating");
  c_po->add_option("--out-csv", po.out_csv, "output CSV (tabular)");
  c_po->add_option("--out-images", po.out_images, "output IDX images");
  c_po->add_option("--out-labels", po.out_labels, "output IDX labels");

  MaskCmd mk;
  auto* c_mk = app.add_subcommand("mask", "select trainable indices from a gradient profile");
  mk.data.attach(c_mk, "", "profiling");
  c_mk->add_option("--model", mk.model_path, "checkpoint")->required();
  c_mk->add_option("--method", mk.method, "sparse | contiguous | random-contiguous");
  c_mk->add_option("--k", mk.k, "indices per layer");
  c_mk->add_option("--layers", mk.layers, "weight-layer ordinals, e.g. 1,3 or all");
  c_mk->add_option("--batch", mk.batch, "gradient batch size");
  c_mk->add_option("--seed", mk.seed, "rng seed (random-contiguous)");
  c_mk->add_option("--out", mk.out, "mask file");

  RetrainCmd rt;
  auto* c_rt = app.add_subcommand("retrain", "masked retraining on a poisoned dataset");
  rt.task.attach(c_rt);
  rt.train_data.attach(c_rt, "train-", "training");
  rt.test_data.attach(c_rt, "test-", "test");
  rt.trigger.attach(c_rt);
  rt.poison.attach(c_rt);
  c_rt->add_option("--model", rt.model_path, "checkpoint")->required();
  c_rt->add_option("--mask", rt.mask_path, "mask file (overrides --method/--k/--layers)");
  c_rt->add_option("--method", rt.method, "sparse | contiguous | random-contiguous");
  c_rt->add_option("--k", rt.k, "indices per layer");
  c_rt->add_option("--layers", rt.layers, "weight-layer ordinals, e.g. 1,3 or all");
  c_rt->add_option("--percent", rt.percent, "fraction of the training data used");
  c_rt->add_option("--steps", rt.steps, "optimizer steps");
  c_rt->add_option("--batch", rt.batch, "batch size");
  c_rt->add_option("--lr", rt.lr, "learning rate");
  c_rt->add_option("--seed", rt.seed, "rng seed");
  c_rt->add_flag("--strip", rt.strip, "add the entropy-regularization terms");
  c_rt->add_option("--lambda1", rt.lambda1, "mean-entropy penalty weight");
  c_rt->add_option("--lambda2", rt.lambda2, "entropy-variance penalty weight");
  c_rt->add_option("--n-perturb", rt.n_perturb, "perturbations per input during training");
  c_rt->add_option("--out-patch", rt.out_patch, "patch file");
  c_rt->add_option("--out-model", rt.out_model, "patched checkpoint");

  StripEvalCmd se;
  auto* c_se = app.add_subcommand("strip-eval", "entropy statistics and flag rate for a model");
  se.task.attach(c_se);
  se.data.attach(c_se, "", "clean evaluation");
  se.trigger.attach(c_se);
  se.poison.attach(c_se);
  c_se->add_option("--model", se.model_path, "checkpoint")->required();
  c_se->add_option("--n-perturb", se.n_perturb, "perturbations per input");
  c_se->add_option("--pool-n", se.pool_n, "records reserved as the perturbation pool");
  c_se->add_option("--percentile", se.percentile, "clean-score percentile for the threshold");
  c_se->add_option("--seed", se.seed, "rng seed");
  c_se->add_option("--out-hist", se.out_hist, "histogram CSV");

  ExportPatchCmd ep;
  auto* c_ep = app.add_subcommand("export-patch", "diff two checkpoints over a mask");
  c_ep->add_option("--orig", ep.orig_path, "original checkpoint")->required();
  c_ep->add_option("--patched", ep.patched_path, "patched checkpoint")->required();
  c_ep->add_option("--mask", ep.mask_path, "mask file")->required();
  c_ep->add_option("--out", ep.out, "patch file");

  ApplyPatchCmd ap;
  auto* c_ap = app.add_subcommand("apply-patch", "apply a patch to a checkpoint on disk");
  c_ap->add_option("--model", ap.model_path, "input checkpoint")->required();
  c_ap->add_option("--patch", ap.patch_path, "patch file")->required();
  c_ap->add_option("--out", ap.out, "output checkpoint");

  VictimCmd vi;
  auto* c_vi = app.add_subcommand("victim", "serve a checkpoint over a local socket");
  c_vi->add_option("--model", vi.model_path, "checkpoint")->required();
  c_vi->add_option("--endpoint", vi.endpoint, "socket path or tcp:<port>")->required();
  c_vi->add_flag("--verbose", vi.verbose, "log startup and requests to stderr");

  LivePatchCmd lp;
  auto* c_lp = app.add_subcommand("live-patch", "apply a patch inside a running process");
  c_lp->add_option("--pid", lp.pid, "victim process id")->required();
  c_lp->add_option("--patch", lp.patch_path, "patch file")->required();
  c_lp->add_flag("--dry-run", lp.dry_run, "scan and report without writing");

  SweepCmd sw;
  auto* c_sw = app.add_subcommand("sweep", "retrain across method x k x layers x data-fraction grids");
  sw.task.attach(c_sw);
  sw.train_data.attach(c_sw, "train-", "training");
  sw.test_data.attach(c_sw, "test-", "test");
  sw.trigger.attach(c_sw);
  sw.poison.attach(c_sw);
  c_sw->add_option("--model", sw.model_path, "baseline checkpoint (default: train one in-run)");
  c_sw->add_option("--method", sw.methods, "comma list of mask methods");
  c_sw->add_option("--k", sw.ks, "comma list of k values");
  c_sw->add_option("--layers", sw.layer_sets, "comma list of layer sets; '+' joins ordinals (1+3)");
  c_sw->add_option("--data-fraction", sw.fractions, "comma list of training-data fractions");
  c_sw->add_option("--steps", sw.steps, "retraining steps per configuration");
  c_sw->add_option("--batch", sw.batch, "batch size");
  c_sw->add_option("--train-steps", sw.train_steps, "baseline training steps when no --model");
  c_sw->add_option("--lr", sw.lr, "learning rate");
  c_sw->add_option("--seed", sw.seed, "rng seed");
  c_sw->add_option("--out", sw.out, "sweep CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::create_directories(g_run_dir);
    if (c_gen->parsed()) return gen.run();
    if (c_tr->parsed()) return tr.run();
    if (c_po->parsed()) return po.run();
    if (c_mk->parsed()) return mk.run();
    if (c_rt->parsed()) return rt.run();
    if (c_se->parsed()) return se.run();
    if (c_ep->parsed()) return ep.run();
    if (c_ap->parsed()) return ap.run();
    if (c_vi->parsed()) return vi.run();
    if (c_lp->parsed()) return lp.run();
    if (c_sw->parsed()) return sw.run();
  } catch (const ltnn::Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", errc_name(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
