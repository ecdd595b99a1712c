#include "ltnn/patch.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "ltnn/checkpoint.hpp"
#include "ltnn/fnv.hpp"

namespace ltnn {

namespace {

constexpr char kMagic[4] = {'L', 'T', 'P', 'T'};

std::array<std::uint8_t, 8> prefix_of(const std::vector<float>& data) {
  std::array<std::uint8_t, 8> p{};
  const size_t n = std::min<size_t>(8, data.size() * sizeof(float));
  std::memcpy(p.data(), data.data(), n);
  return p;
}

std::uint64_t checksum_of(const std::vector<float>& data) {
  return fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(data.data()),
                                               data.size() * sizeof(float)));
}

}  // namespace

std::array<std::uint8_t, 8> layer_prefix(const Tensor<float>& w) { return prefix_of(w.data); }
std::uint64_t layer_checksum(const Tensor<float>& w) { return checksum_of(w.data); }

Index PatchFile::payload_bytes() const {
  Index n = 0;
  for (const auto& r : regions) n += static_cast<Index>(r.values.size() * sizeof(float));
  return n;
}

Index PatchFile::file_bytes() const {
  // header: magic + version + region count
  Index n = 4 + 4 + 4;
  for (const auto& r : regions)
    n += 4 + 8 + 8 + 8 + 8 + 4 + 4 + 4 + static_cast<Index>(r.values.size() * sizeof(float));
  return n;
}

void validate_patch(const PatchFile& p) {
  for (size_t i = 0; i < p.regions.size(); ++i) {
    const auto& r = p.regions[i];
    require(r.layer >= 1, Errc::invalid_argument, "patch region layer ordinal must be >= 1");
    require(!r.values.empty(), Errc::invalid_argument, "patch region carries no values");
    require(r.layer_bytes % sizeof(float) == 0 && r.layer_bytes > 0, Errc::invalid_argument,
            "layer byte length must be a positive float multiple");
    const std::uint64_t end = static_cast<std::uint64_t>(r.offset) + r.values.size();
    require(end * sizeof(float) <= r.layer_bytes, Errc::out_of_bounds,
            "patch region extends past its layer");
    if (i > 0) {
      const auto& q = p.regions[i - 1];
      require(q.layer < r.layer || (q.layer == r.layer && q.offset < r.offset), Errc::invalid_argument,
              "patch regions not sorted by (layer, offset)");
      if (q.layer == r.layer) {
        require(static_cast<std::uint64_t>(q.offset) + q.values.size() <= r.offset,
                Errc::overlapping_regions, "patch regions overlap");
        require(q.prefix == r.prefix && q.checksum == r.checksum && q.layer_bytes == r.layer_bytes &&
                    q.patched_prefix == r.patched_prefix && q.patched_checksum == r.patched_checksum,
                Errc::invalid_argument, "same-layer regions disagree on their locator");
      }
    }
  }
}

PatchFile export_patch_from_models(const Model<float>& orig, const Model<float>& patched, const Mask& mask) {
  validate_mask(mask, orig);
  require(orig.weights.size() == patched.weights.size(), Errc::shape_mismatch, "model layer counts differ");
  PatchFile p;
  for (const auto& ml : mask.layers) {
    const auto& wo = orig.weights[static_cast<size_t>(ml.layer - 1)];
    const auto& wp = patched.weights[static_cast<size_t>(ml.layer - 1)];
    require(wo.same_dims(wp), Errc::shape_mismatch, "layer shapes differ between models");

    // the patched locator pair: original layer bytes with every masked
    // element replaced
    std::vector<float> after = wo.data;
    for (Index i : ml.indices) after[static_cast<size_t>(i)] = wp.data[static_cast<size_t>(i)];

    PatchRegion proto;
    proto.layer = static_cast<std::uint32_t>(ml.layer);
    proto.prefix = prefix_of(wo.data);
    proto.checksum = checksum_of(wo.data);
    proto.patched_prefix = prefix_of(after);
    proto.patched_checksum = checksum_of(after);
    proto.layer_bytes = static_cast<std::uint32_t>(wo.data.size() * sizeof(float));

    for (const auto& [start, len] : coalesce_runs(ml.indices)) {
      PatchRegion r = proto;
      r.offset = static_cast<std::uint32_t>(start);
      r.values.assign(wp.data.begin() + start, wp.data.begin() + start + len);
      p.regions.push_back(std::move(r));
    }
  }
  validate_patch(p);
  return p;
}

PatchFile export_patch(const Model<float>& orig, const PatchResult& result, const Mask& mask) {
  validate_mask(mask, orig);
  // the result's support must lie inside the mask
  for (const auto& dl : result.layers) {
    const MaskLayer* ml = mask.find(dl.layer);
    require(ml != nullptr, Errc::support_outside_mask,
            "result touches layer " + std::to_string(dl.layer) + " absent from the mask");
    require(dl.indices.size() == dl.values.size(), Errc::count_mismatch, "result index/value mismatch");
    for (Index i : dl.indices)
      require(std::binary_search(ml->indices.begin(), ml->indices.end(), i), Errc::support_outside_mask,
              "result index outside the mask");
  }
  Model<float> patched = apply_result(orig, result);
  return export_patch_from_models(orig, patched, mask);
}

namespace {

struct ByteWriter {
  std::vector<std::uint8_t> buf;
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* p, size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), c, c + n);
  }
};

struct ByteReader {
  const std::vector<std::uint8_t>& buf;
  size_t pos = 0;
  const std::string& path;
  void need(size_t n) { require(pos + n <= buf.size(), Errc::truncated, "patch file truncated: " + path); }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  void raw(void* out, size_t n) {
    need(n);
    std::memcpy(out, buf.data() + pos, n);
    pos += n;
  }
};

}  // namespace

void save_patch(const PatchFile& p, const std::string& path) {
  validate_patch(p);
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kPatchVersion);
  w.u32(static_cast<std::uint32_t>(p.regions.size()));
  for (const auto& r : p.regions) {
    w.u32(r.layer);
    w.raw(r.prefix.data(), 8);
    w.u64(r.checksum);
    w.raw(r.patched_prefix.data(), 8);
    w.u64(r.patched_checksum);
    w.u32(r.layer_bytes);
    w.u32(r.offset);
    w.u32(r.count());
    w.raw(r.values.data(), r.values.size() * sizeof(float));
  }
  std::ofstream f(path, std::ios::binary);
  require(f.good(), Errc::io_error, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
  require(f.good(), Errc::io_error, "write failed on " + path);
}

PatchFile load_patch(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io_error, "cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ByteReader r{buf, 0, path};
  char magic[4];
  r.raw(magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, Errc::bad_magic, "not a patch file: " + path);
  const std::uint32_t version = r.u32();
  require(version == kPatchVersion, Errc::bad_version, "unsupported patch version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  PatchFile p;
  p.regions.resize(count);
  for (auto& reg : p.regions) {
    reg.layer = r.u32();
    r.raw(reg.prefix.data(), 8);
    reg.checksum = r.u64();
    r.raw(reg.patched_prefix.data(), 8);
    reg.patched_checksum = r.u64();
    reg.layer_bytes = r.u32();
    reg.offset = r.u32();
    const std::uint32_t n = r.u32();
    require(n >= 1 && static_cast<std::uint64_t>(n) * sizeof(float) <= reg.layer_bytes,
            Errc::count_mismatch, "implausible region value count in " + path);
    reg.values.resize(n);
    r.raw(reg.values.data(), n * sizeof(float));
  }
  require(r.pos == buf.size(), Errc::size_mismatch, "patch file has trailing bytes: " + path);
  validate_patch(p);
  return p;
}

Model<float> apply_patch(const Model<float>& m, const PatchFile& p) {
  validate_patch(p);
  // verify every locator before touching anything
  for (const auto& r : p.regions) {
    require(r.layer <= static_cast<std::uint32_t>(m.num_weight_layers()), Errc::out_of_bounds,
            "patch region layer outside model");
    const auto& w = m.weights[r.layer - 1];
    require(static_cast<std::uint64_t>(r.layer_bytes) == w.data.size() * sizeof(float),
            Errc::locator_mismatch, "layer size differs from the patch locator");
    require(prefix_of(w.data) == r.prefix && checksum_of(w.data) == r.checksum, Errc::locator_mismatch,
            "layer bytes do not match the patch locator (wrong model?)");
  }
  Model<float> out = m;
  for (const auto& r : p.regions) {
    auto& w = out.weights[r.layer - 1].data;
    std::copy(r.values.begin(), r.values.end(), w.begin() + r.offset);
  }
  return out;
}

void apply_patch_offline(const std::string& checkpoint_in, const std::string& patch_path,
                         const std::string& checkpoint_out) {
  const Model<float> m = load_checkpoint(checkpoint_in);
  const PatchFile p = load_patch(patch_path);
  save_checkpoint(apply_patch(m, p), checkpoint_out);
}

}  // namespace ltnn
