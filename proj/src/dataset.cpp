#include "ltnn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace ltnn {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io_error, "cannot open " + path);
  f.seekg(0, std::ios::end);
  const auto len = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<size_t>(len));
  f.read(reinterpret_cast<char*>(buf.data()), len);
  require(f.good(), Errc::io_error, "read failed on " + path);
  return buf;
}

std::uint32_t be32(const std::uint8_t* p) { return __builtin_bswap32(*reinterpret_cast<const std::uint32_t*>(p)); }

void put_be32(std::ofstream& f, std::uint32_t v) {
  const std::uint32_t sw = __builtin_bswap32(v);
  f.write(reinterpret_cast<const char*>(&sw), 4);
}

}  // namespace

void validate_dataset(const Dataset& d) {
  require(d.size() >= 1, Errc::empty_dataset, "dataset has no records");
  if (d.task == TaskKind::classification) {
    require(static_cast<Index>(d.labels.size()) == d.size(), Errc::count_mismatch,
            "label count does not match record count");
    require(d.num_classes >= 2, Errc::invalid_argument, "classification dataset needs >= 2 classes");
    for (Index y : d.labels)
      require(y >= 0 && y < d.num_classes, Errc::label_out_of_range, "label outside class range");
  } else {
    require(d.targets.rank() == 2 && d.targets.dim(0) == d.size(), Errc::count_mismatch,
            "target count does not match record count");
  }
  require_finite(d.inputs, "dataset inputs");
}

Dataset select(const Dataset& d, std::span<const Index> idxs) {
  Dataset out;
  out.task = d.task;
  out.num_classes = d.num_classes;
  out.has_norm_range = d.has_norm_range;
  out.norm_lo = d.norm_lo;
  out.norm_hi = d.norm_hi;
  out.inputs = gather_inputs(d, idxs);
  if (d.task == TaskKind::classification) {
    out.labels.reserve(idxs.size());
    for (Index i : idxs) out.labels.push_back(d.labels[static_cast<size_t>(i)]);
  } else {
    std::vector<Index> tdims = d.targets.dims;
    tdims[0] = static_cast<Index>(idxs.size());
    out.targets = Tensor<float>(tdims);
    const Index row = d.targets.row_size();
    for (size_t r = 0; r < idxs.size(); ++r)
      std::memcpy(out.targets.data.data() + static_cast<Index>(r) * row,
                  d.targets.data.data() + idxs[r] * row, static_cast<size_t>(row) * sizeof(float));
  }
  return out;
}

Tensor<float> gather_inputs(const Dataset& d, std::span<const Index> idxs) {
  std::vector<Index> dims = d.inputs.dims;
  dims[0] = static_cast<Index>(idxs.size());
  Tensor<float> out(dims);
  const Index row = d.inputs.row_size();
  for (size_t r = 0; r < idxs.size(); ++r) {
    const Index i = idxs[r];
    require(i >= 0 && i < d.size(), Errc::out_of_bounds, "record index out of range");
    std::memcpy(out.data.data() + static_cast<Index>(r) * row, d.inputs.data.data() + i * row,
                static_cast<size_t>(row) * sizeof(float));
  }
  return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  require(img.size() >= 16, Errc::truncated, "image file shorter than IDX header: " + images_path);
  require(lab.size() >= 8, Errc::truncated, "label file shorter than IDX header: " + labels_path);
  require(be32(img.data()) == 0x00000803u, Errc::bad_magic, "image file lacks IDX3 magic: " + images_path);
  require(be32(lab.data()) == 0x00000801u, Errc::bad_magic, "label file lacks IDX1 magic: " + labels_path);
  const Index n = be32(img.data() + 4);
  const Index rows = be32(img.data() + 8);
  const Index cols = be32(img.data() + 12);
  const Index nl = be32(lab.data() + 4);
  require(n == nl, Errc::count_mismatch,
          "image count " + std::to_string(n) + " != label count " + std::to_string(nl));
  require(n >= 1, Errc::empty_dataset, "IDX files contain no records");
  const size_t need = 16 + static_cast<size_t>(n) * rows * cols;
  require(img.size() >= need, Errc::truncated, "image payload truncated: " + images_path);
  require(lab.size() >= 8 + static_cast<size_t>(n), Errc::truncated, "label payload truncated: " + labels_path);

  Dataset d;
  d.task = TaskKind::classification;
  d.num_classes = 10;
  d.has_norm_range = true;
  d.norm_lo = 0.0f;
  d.norm_hi = 1.0f;
  d.inputs = Tensor<float>({n, rows, cols, 1});
  for (size_t i = 0; i < static_cast<size_t>(n) * rows * cols; ++i)
    d.inputs.data[i] = static_cast<float>(img[16 + i]) / 255.0f;
  d.labels.resize(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    d.labels[static_cast<size_t>(i)] = lab[8 + static_cast<size_t>(i)];
    require(d.labels[static_cast<size_t>(i)] < 10, Errc::label_out_of_range, "IDX label > 9");
  }
  return d;
}

void save_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path) {
  require(d.task == TaskKind::classification, Errc::invalid_argument, "IDX stores classification data");
  require(d.inputs.rank() == 4 && d.inputs.dim(3) == 1, Errc::shape_mismatch,
          "IDX expects [n,rows,cols,1] inputs");
  std::ofstream fi(images_path, std::ios::binary);
  require(fi.good(), Errc::io_error, "cannot write " + images_path);
  put_be32(fi, 0x00000803u);
  put_be32(fi, static_cast<std::uint32_t>(d.size()));
  put_be32(fi, static_cast<std::uint32_t>(d.inputs.dim(1)));
  put_be32(fi, static_cast<std::uint32_t>(d.inputs.dim(2)));
  std::vector<std::uint8_t> px(d.inputs.data.size());
  for (size_t i = 0; i < px.size(); ++i) {
    const float v = std::clamp(d.inputs.data[i], 0.0f, 1.0f);
    px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  fi.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  require(fi.good(), Errc::io_error, "write failed on " + images_path);

  std::ofstream fl(labels_path, std::ios::binary);
  require(fl.good(), Errc::io_error, "cannot write " + labels_path);
  put_be32(fl, 0x00000801u);
  put_be32(fl, static_cast<std::uint32_t>(d.size()));
  for (Index y : d.labels) {
    const std::uint8_t b = static_cast<std::uint8_t>(y);
    fl.write(reinterpret_cast<const char*>(&b), 1);
  }
  require(fl.good(), Errc::io_error, "write failed on " + labels_path);
}

Dataset load_tabular_csv(const std::string& path, Index feature_count, Index label_column) {
  require(feature_count >= 1, Errc::invalid_argument, "feature_count must be positive");
  require(label_column >= 0 && label_column <= feature_count, Errc::invalid_argument,
          "label_column outside row");
  std::ifstream f(path);
  require(f.good(), Errc::io_error, "cannot open " + path);
  std::string line;
  require(static_cast<bool>(std::getline(f, line)), Errc::truncated, "missing CSV header in " + path);

  std::vector<float> values;
  std::vector<Index> labels;
  const Index ncols = feature_count + 1;
  Index row_idx = 0;
  while (std::getline(f, line)) {
    ++row_idx;
    if (line.empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    Index col = 0;
    size_t pos = 0;
    while (true) {
      const size_t comma = line.find(',', pos);
      const std::string_view field(line.data() + pos, (comma == std::string::npos ? line.size() : comma) - pos);
      require(col < ncols, Errc::ragged_row, "row " + std::to_string(row_idx) + " has extra columns");
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      require(ec == std::errc() && ptr == field.data() + field.size(), Errc::non_numeric,
              "row " + std::to_string(row_idx) + " column " + std::to_string(col) + " is not numeric");
      if (col == label_column) {
        const double r = std::round(v);
        require(std::abs(v - r) < 1e-9 && r >= 0.0, Errc::label_out_of_range,
                "row " + std::to_string(row_idx) + " label is not a class index");
        labels.push_back(static_cast<Index>(r));
      } else {
        values.push_back(static_cast<float>(v));
      }
      ++col;
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    require(col == ncols, Errc::ragged_row,
            "row " + std::to_string(row_idx) + " has " + std::to_string(col) + " columns, expected " +
                std::to_string(ncols));
  }
  require(!labels.empty(), Errc::empty_dataset, "CSV has no data rows: " + path);

  Dataset d;
  d.task = TaskKind::classification;
  d.inputs = Tensor<float>({static_cast<Index>(labels.size()), feature_count}, std::move(values));
  d.labels = std::move(labels);
  d.num_classes = *std::max_element(d.labels.begin(), d.labels.end()) + 1;
  if (d.num_classes < 2) d.num_classes = 2;
  validate_dataset(d);
  return d;
}

void save_tabular_csv(const Dataset& d, const std::string& path) {
  require(d.task == TaskKind::classification && d.inputs.rank() == 2, Errc::invalid_argument,
          "CSV writer expects 2-D classification data");
  std::ofstream f(path);
  require(f.good(), Errc::io_error, "cannot write " + path);
  const Index nf = d.inputs.dim(1);
  for (Index j = 0; j < nf; ++j) f << 'f' << j << ',';
  f << "label\n";
  char buf[64];
  for (Index i = 0; i < d.size(); ++i) {
    for (Index j = 0; j < nf; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(d.inputs.data[static_cast<size_t>(i * nf + j)]));
      f << buf << ',';
    }
    f << d.labels[static_cast<size_t>(i)] << '\n';
  }
  require(f.good(), Errc::io_error, "write failed on " + path);
}

Dataset synth_tabular(Index n, Index features, std::uint64_t seed, double malicious_frac) {
  require(n >= 2, Errc::invalid_argument, "need at least 2 records");
  require(features > std::max(kTriggerFeatureA, kTriggerFeatureB), Errc::invalid_argument,
          "feature count too small for the reserved trigger features");
  std::mt19937_64 rng(seed);

  Dataset d;
  d.task = TaskKind::classification;
  d.num_classes = 2;
  d.inputs = Tensor<float>({n, features});
  d.labels.assign(static_cast<size_t>(n), 0);
  const Index n_mal = std::clamp<Index>(static_cast<Index>(std::llround(malicious_frac * static_cast<double>(n))), 1, n - 1);
  for (Index i = 0; i < n_mal; ++i) d.labels[static_cast<size_t>(i)] = 1;
  std::shuffle(d.labels.begin(), d.labels.end(), rng);

  std::normal_distribution<double> noise(0.0, 1.0);
  // The reserved columns behave like document count features: small values
  // dominate and the upper tail decays fast, so specific larger counts are
  // individually plausible but rare.
  std::poisson_distribution<int> count_feature(0.3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    float* rec = d.inputs.data.data() + i * features;
    const Index y = d.labels[static_cast<size_t>(i)];
    for (Index j = 0; j < features; ++j) {
      if (j == kTriggerFeatureA || j == kTriggerFeatureB) {
        // trigger-reserved count features: same distribution for both classes
        rec[j] = static_cast<float>(std::min(count_feature(rng), 19));
      } else if (j % 5 == 0) {
        // informative columns separate the classes
        const double mu = (y == 1) ? 2.2 : 1.0;
        rec[j] = static_cast<float>(mu + noise(rng));
      } else {
        rec[j] = static_cast<float>(1.5 + noise(rng));
      }
    }
    // label noise keeps the task separable-with-noise rather than trivial
    if (unit(rng) < 0.01) d.labels[static_cast<size_t>(i)] ^= 1;
  }
  return d;
}

namespace {

struct Seg {
  double x0, y0, x1, y1;
};

// 7-segment skeletons on a unit box, y pointing down.
const std::vector<Seg>& digit_segments(int digit) {
  static const Seg A{0.12, 0.06, 0.88, 0.06}, B{0.88, 0.06, 0.88, 0.5}, C{0.88, 0.5, 0.88, 0.94},
      D{0.12, 0.94, 0.88, 0.94}, E{0.12, 0.5, 0.12, 0.94}, F{0.12, 0.06, 0.12, 0.5},
      G{0.12, 0.5, 0.88, 0.5};
  static const std::vector<Seg> digits[10] = {
      {A, B, C, D, E, F},     // 0
      {B, C},                 // 1
      {A, B, G, E, D},        // 2
      {A, B, G, C, D},        // 3
      {F, G, B, C},           // 4
      {A, F, G, C, D},        // 5
      {A, F, G, E, C, D},     // 6
      {A, B, C},              // 7
      {A, B, C, D, E, F, G},  // 8
      {A, B, C, D, F, G},     // 9
  };
  return digits[digit];
}

double seg_distance(double px, double py, const Seg& s) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = s.x0 + t * dx - px, qy = s.y0 + t * dy - py;
  return std::sqrt(qx * qx + qy * qy);
}

}  // namespace

Dataset synth_digits(Index n, std::uint64_t seed) {
  require(n >= 1, Errc::invalid_argument, "need at least 1 record");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, 9);
  std::uniform_real_distribution<double> rot(-0.16, 0.16);
  std::uniform_real_distribution<double> scale(0.72, 1.08);
  std::uniform_real_distribution<double> shear(-0.15, 0.15);
  std::uniform_real_distribution<double> shift(-0.08, 0.08);
  std::normal_distribution<double> wobble(0.0, 0.03);
  std::uniform_real_distribution<double> trim_lo(0.0, 0.12);
  std::uniform_real_distribution<double> trim_hi(0.88, 1.0);
  std::uniform_real_distribution<double> seg_amp(0.60, 1.0);
  std::uniform_real_distribution<double> faint_amp(0.22, 0.50);
  std::uniform_real_distribution<double> thick(0.040, 0.080);
  std::uniform_real_distribution<double> bright(0.75, 1.0);
  std::uniform_real_distribution<double> noise(0.0, 0.05);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> blob_pos(0.15, 0.75);
  std::uniform_real_distribution<double> blob_rad(0.03, 0.07);
  std::uniform_real_distribution<double> blob_amp(0.15, 0.40);
  // glyphs are size-normalized into the central region with an empty border,
  // like the size-normalized handwriting corpora this stands in for
  constexpr double kGlyphSpan = 0.70;

  Dataset d;
  d.task = TaskKind::classification;
  d.num_classes = 10;
  d.has_norm_range = true;
  d.norm_lo = 0.0f;
  d.norm_hi = 1.0f;
  d.inputs = Tensor<float>({n, 28, 28, 1});
  d.labels.resize(static_cast<size_t>(n));

  struct Stroke {
    Seg seg;
    double amp, r;
  };
  std::vector<Stroke> strokes;
  struct Blob {
    double x, y, rad, amp;
  };
  std::vector<Blob> blobs;

  for (Index i = 0; i < n; ++i) {
    const int digit = pick(rng);
    d.labels[static_cast<size_t>(i)] = digit;
    const double th = rot(rng), sx = scale(rng), sy = scale(rng), sh = shear(rng);
    const double tx = shift(rng), ty = shift(rng);
    const double soft = 0.035, amp = bright(rng);
    const double c = std::cos(th), s = std::sin(th);

    // per-image stroke set: jittered, trimmed, unevenly inked segments; a
    // faint stroke now and then makes neighbouring digits genuinely confusable
    strokes.clear();
    for (const Seg& base : digit_segments(digit)) {
      Seg g{base.x0 + wobble(rng), base.y0 + wobble(rng), base.x1 + wobble(rng), base.y1 + wobble(rng)};
      const double t0 = trim_lo(rng), t1 = trim_hi(rng);
      const double dx = g.x1 - g.x0, dy = g.y1 - g.y0;
      Seg tseg{g.x0 + t0 * dx, g.y0 + t0 * dy, g.x0 + t1 * dx, g.y0 + t1 * dy};
      const double a = unit(rng) < 0.08 ? faint_amp(rng) : seg_amp(rng);
      strokes.push_back({tseg, a, thick(rng)});
    }
    blobs.clear();
    const double nb = unit(rng);
    const int blob_count = nb < 0.5 ? 0 : (nb < 0.8 ? 1 : 2);
    for (int b = 0; b < blob_count; ++b) blobs.push_back({blob_pos(rng), blob_pos(rng), blob_rad(rng), blob_amp(rng)});

    float* img = d.inputs.data.data() + i * 28 * 28;
    for (Index y = 0; y < 28; ++y) {
      for (Index x = 0; x < 28; ++x) {
        // invert the affine placement to sample the stroke field
        const double qx = ((static_cast<double>(x) + 0.5) / 28.0 - 0.5 - tx) / kGlyphSpan;
        const double qy = ((static_cast<double>(y) + 0.5) / 28.0 - 0.5 - ty) / kGlyphSpan;
        const double rx = c * qx + s * qy, ry = -s * qx + c * qy;
        const double ux = (rx - sh * ry) / sx + 0.5;
        const double uy = ry / sy + 0.5;
        double v = 0.0;
        for (const auto& st : strokes)
          v = std::max(v, st.amp * std::clamp(1.0 - (seg_distance(ux, uy, st.seg) - st.r) / soft, 0.0, 1.0));
        v *= amp;
        const double px = (static_cast<double>(x) + 0.5) / 28.0, py = (static_cast<double>(y) + 0.5) / 28.0;
        for (const auto& b : blobs) {
          const double dd = (px - b.x) * (px - b.x) + (py - b.y) * (py - b.y);
          v = std::max(v, b.amp * std::exp(-dd / (2.0 * b.rad * b.rad)));
        }
        v += noise(rng);
        img[y * 28 + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return d;
}

Index ceil_fraction(double fraction, Index n) {
  require(fraction > 0.0 && fraction <= 1.0, Errc::invalid_argument, "fraction must be in (0, 1]");
  const long double raw = static_cast<long double>(fraction) * static_cast<long double>(n);
  Index c = static_cast<Index>(std::ceil(static_cast<double>(raw - 1e-6L)));
  if (c < 1) c = 1;
  if (c > n) c = n;
  return c;
}

Dataset subsample(const Dataset& d, double fraction, std::uint64_t seed) {
  validate_dataset(d);
  const Index n = d.size();
  const Index m = ceil_fraction(fraction, n);
  std::vector<Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Index(0));
  if (m < n) {
    std::mt19937_64 rng(seed);
    for (Index i = 0; i < m; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
    }
    idx.resize(static_cast<size_t>(m));
    std::sort(idx.begin(), idx.end());
  }
  return select(d, idx);
}

std::vector<double> label_distribution(const Dataset& d) {
  require(d.task == TaskKind::classification, Errc::invalid_argument, "label distribution needs classes");
  std::vector<double> dist(static_cast<size_t>(d.num_classes), 0.0);
  for (Index y : d.labels) dist[static_cast<size_t>(y)] += 1.0;
  for (auto& v : dist) v /= static_cast<double>(d.size());
  return dist;
}

}  // namespace ltnn
