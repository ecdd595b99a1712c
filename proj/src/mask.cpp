#include "ltnn/mask.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ltnn/ops.hpp"

namespace ltnn {

GradientProfile average_gradients(const Model<float>& m, const Dataset& d, Index batch_size) {
  validate_dataset(d);
  require(batch_size >= 1, Errc::invalid_argument, "batch size must be positive");
  GradientProfile prof;
  prof.layers.resize(m.weights.size());
  for (size_t l = 0; l < m.weights.size(); ++l)
    prof.layers[l].assign(static_cast<size_t>(m.weights[l].numel()), 0.0);

  const Index n = d.size();
  std::vector<Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Index(0));
  for (Index start = 0; start < n; start += batch_size) {
    const Index bn = std::min(batch_size, n - start);
    const std::span<const Index> slice(idx.data() + start, static_cast<size_t>(bn));
    Tensor<float> batch = gather_inputs(d, slice);
    BackwardResult<float> r;
    if (d.task == TaskKind::classification) {
      std::vector<Index> labels(slice.size());
      for (size_t i = 0; i < slice.size(); ++i) labels[i] = d.labels[static_cast<size_t>(slice[i])];
      r = backward(m, batch, labels);
    } else {
      std::vector<Index> tdims = d.targets.dims;
      tdims[0] = bn;
      Tensor<float> targets(tdims);
      const Index trow = d.targets.row_size();
      for (Index i = 0; i < bn; ++i)
        std::copy_n(d.targets.data.data() + slice[static_cast<size_t>(i)] * trow, trow,
                    targets.data.data() + i * trow);
      r = backward(m, batch, targets);
    }
    // backward() returns the batch-mean gradient; reweight to a record sum so
    // uneven final batches still yield the exact full-dataset mean
    const double w = static_cast<double>(bn);
    for (size_t l = 0; l < prof.layers.size(); ++l)
      for (size_t i = 0; i < prof.layers[l].size(); ++i)
        prof.layers[l][i] += w * static_cast<double>(r.grads.weights[l].data[i]);
  }
  for (auto& layer : prof.layers)
    for (auto& g : layer) g /= static_cast<double>(n);
  return prof;
}

const char* mask_method_name(MaskMethod m) {
  switch (m) {
    case MaskMethod::sparse: return "sparse";
    case MaskMethod::contiguous: return "contiguous";
    case MaskMethod::random_contiguous: return "random-contiguous";
  }
  return "unknown";
}

MaskMethod mask_method_from_name(const std::string& s) {
  if (s == "sparse") return MaskMethod::sparse;
  if (s == "contiguous") return MaskMethod::contiguous;
  if (s == "random-contiguous") return MaskMethod::random_contiguous;
  fail(Errc::parse_error, "unknown mask method '" + s + "'");
}

Index Mask::total_indices() const {
  Index n = 0;
  for (const auto& ml : layers) n += static_cast<Index>(ml.indices.size());
  return n;
}

const MaskLayer* Mask::find(int layer) const {
  for (const auto& ml : layers)
    if (ml.layer == layer) return &ml;
  return nullptr;
}

std::vector<int> all_layer_ordinals(int num_weight_layers) {
  std::vector<int> v(static_cast<size_t>(num_weight_layers));
  std::iota(v.begin(), v.end(), 1);
  return v;
}

namespace {

void check_layer_selection(const GradientProfile& prof, const std::vector<int>& layers) {
  require(!layers.empty(), Errc::invalid_argument, "empty layer selection");
  for (int l : layers)
    require(l >= 1 && l <= static_cast<int>(prof.layers.size()), Errc::out_of_bounds,
            "layer ordinal " + std::to_string(l) + " outside 1.." + std::to_string(prof.layers.size()));
}

std::vector<int> sorted_unique(std::vector<int> layers) {
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  return layers;
}

}  // namespace

Mask k_sparse_best(const GradientProfile& profile, Index k, const std::vector<int>& layers) {
  require(k >= 1, Errc::invalid_argument, "k must be >= 1");
  check_layer_selection(profile, layers);
  Mask mask;
  mask.method = MaskMethod::sparse;
  mask.k = k;
  for (int l : sorted_unique(layers)) {
    const auto& g = profile.layers[static_cast<size_t>(l - 1)];
    const Index size = static_cast<Index>(g.size());
    const Index kk = std::min(k, size);
    std::vector<Index> idx(static_cast<size_t>(size));
    std::iota(idx.begin(), idx.end(), Index(0));
    // |gradient| descending, ties to the lower index
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
      return std::abs(g[static_cast<size_t>(a)]) > std::abs(g[static_cast<size_t>(b)]);
    });
    idx.resize(static_cast<size_t>(kk));
    std::sort(idx.begin(), idx.end());
    mask.layers.push_back({l, std::move(idx)});
  }
  return mask;
}

Mask k_contiguous_best(const GradientProfile& profile, Index k, const std::vector<int>& layers,
                       WindowScore score) {
  require(k >= 1, Errc::invalid_argument, "k must be >= 1");
  check_layer_selection(profile, layers);
  Mask mask;
  mask.method = MaskMethod::contiguous;
  mask.k = k;
  for (int l : sorted_unique(layers)) {
    const auto& g = profile.layers[static_cast<size_t>(l - 1)];
    const Index size = static_cast<Index>(g.size());
    const Index kk = std::min(k, size);
    // fresh left-to-right summation per window: slower than a running sum but
    // reproduces an exhaustive oracle bit-for-bit, so ties behave identically
    Index best_start = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (Index s = 0; s + kk <= size; ++s) {
      double acc = 0.0;
      if (score == WindowScore::absolute) {
        for (Index i = 0; i < kk; ++i) acc += std::abs(g[static_cast<size_t>(s + i)]);
      } else {
        for (Index i = 0; i < kk; ++i) acc += g[static_cast<size_t>(s + i)];
      }
      if (acc > best_score) {
        best_score = acc;
        best_start = s;
      }
    }
    std::vector<Index> idx(static_cast<size_t>(kk));
    std::iota(idx.begin(), idx.end(), best_start);
    mask.layers.push_back({l, std::move(idx)});
  }
  return mask;
}

Mask random_contiguous(const std::vector<Index>& layer_sizes, Index k, std::uint64_t seed,
                       const std::vector<int>& layers) {
  require(k >= 1, Errc::invalid_argument, "k must be >= 1");
  require(!layers.empty(), Errc::invalid_argument, "empty layer selection");
  for (int l : layers)
    require(l >= 1 && l <= static_cast<int>(layer_sizes.size()), Errc::out_of_bounds,
            "layer ordinal outside model");
  std::mt19937_64 rng(seed);
  Mask mask;
  mask.method = MaskMethod::random_contiguous;
  mask.k = k;
  for (int l : sorted_unique(layers)) {
    const Index size = layer_sizes[static_cast<size_t>(l - 1)];
    const Index kk = std::min(k, size);
    std::uniform_int_distribution<Index> pick(0, size - kk);
    const Index start = pick(rng);
    std::vector<Index> idx(static_cast<size_t>(kk));
    std::iota(idx.begin(), idx.end(), start);
    mask.layers.push_back({l, std::move(idx)});
  }
  return mask;
}

std::vector<std::pair<Index, Index>> coalesce_runs(const std::vector<Index>& indices) {
  std::vector<std::pair<Index, Index>> runs;
  for (Index i : indices) {
    if (!runs.empty() && runs.back().first + runs.back().second == i) {
      ++runs.back().second;
    } else {
      runs.emplace_back(i, 1);
    }
  }
  return runs;
}

std::string mask_to_text(const Mask& mask) {
  std::ostringstream os;
  for (const auto& ml : mask.layers) {
    os << "layer " << ml.layer << " method " << mask_method_name(mask.method) << " k " << mask.k
       << " indices ";
    const auto runs = coalesce_runs(ml.indices);
    for (size_t r = 0; r < runs.size(); ++r) {
      if (r) os << ',';
      if (runs[r].second == 1) os << runs[r].first;
      else os << runs[r].first << '-' << (runs[r].first + runs[r].second - 1);
    }
    os << '\n';
  }
  return os.str();
}

namespace {

Index parse_index(const std::string& s, const std::string& where) {
  Index v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && p == s.data() + s.size() && v >= 0, Errc::parse_error,
          where + ": bad index '" + s + "'");
  return v;
}

}  // namespace

Mask mask_from_text(const std::string& text) {
  Mask mask;
  bool have_method = false;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "mask line " + std::to_string(lineno);
    std::istringstream ls(line);
    std::string kw_layer, kw_method, kw_k, kw_indices, method, list;
    MaskLayer ml;
    Index k = 0;
    ls >> kw_layer >> ml.layer >> kw_method >> method >> kw_k >> k >> kw_indices >> list;
    require(!ls.fail() && kw_layer == "layer" && kw_method == "method" && kw_k == "k" && kw_indices == "indices",
            Errc::parse_error, where + ": expected 'layer <idx> method <name> k <k> indices <list>'");
    const MaskMethod m = mask_method_from_name(method);
    if (!have_method) {
      mask.method = m;
      mask.k = k;
      have_method = true;
    } else {
      require(m == mask.method && k == mask.k, Errc::parse_error, where + ": mixed method or k across layers");
    }
    size_t pos = 0;
    while (pos <= list.size()) {
      size_t comma = list.find(',', pos);
      if (comma == std::string::npos) comma = list.size();
      const std::string item = list.substr(pos, comma - pos);
      require(!item.empty(), Errc::parse_error, where + ": empty index item");
      const size_t dash = item.find('-');
      if (dash == std::string::npos) {
        ml.indices.push_back(parse_index(item, where));
      } else {
        const Index a = parse_index(item.substr(0, dash), where);
        const Index b = parse_index(item.substr(dash + 1), where);
        require(b >= a, Errc::parse_error, where + ": descending run");
        for (Index i = a; i <= b; ++i) ml.indices.push_back(i);
      }
      pos = comma + 1;
    }
    require(!ml.indices.empty(), Errc::parse_error, where + ": no indices");
    for (size_t i = 1; i < ml.indices.size(); ++i)
      require(ml.indices[i] > ml.indices[i - 1], Errc::parse_error, where + ": indices not increasing");
    mask.layers.push_back(std::move(ml));
  }
  require(have_method, Errc::parse_error, "mask text has no layer lines");
  std::sort(mask.layers.begin(), mask.layers.end(),
            [](const MaskLayer& a, const MaskLayer& b) { return a.layer < b.layer; });
  for (size_t i = 1; i < mask.layers.size(); ++i)
    require(mask.layers[i].layer != mask.layers[i - 1].layer, Errc::parse_error, "duplicate mask layer");
  return mask;
}

void save_mask(const Mask& mask, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), Errc::io_error, "cannot write " + path);
  f << mask_to_text(mask);
  require(f.good(), Errc::io_error, "write failed on " + path);
}

Mask load_mask(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Errc::io_error, "cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return mask_from_text(ss.str());
}

}  // namespace ltnn
