#include "ltnn/checkpoint.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstring>
#include <vector>

#include "ltnn/error.hpp"

namespace ltnn {

namespace {

constexpr char kMagic[4] = {'L', 'T', 'N', 'N'};

struct Writer {
  std::vector<std::uint8_t> buf;
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t b;
    std::memcpy(&b, &v, 4);
    u32(b);
  }
  void raw(const void* p, size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), c, c + n);
  }
};

// Unbuffered sequential reader: small header scratch plus direct reads into
// caller buffers.
class Reader {
 public:
  Reader(const std::string& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_RDONLY);
    require(fd_ >= 0, Errc::io_error, "cannot open " + path);
  }
  ~Reader() {
    if (fd_ >= 0) ::close(fd_);
  }
  void read_exact(void* out, size_t n) {
    auto* dst = static_cast<std::uint8_t*>(out);
    size_t got = 0;
    while (got < n) {
      const ssize_t r = ::read(fd_, dst + got, n - got);
      require(r > 0, Errc::truncated, "checkpoint truncated: " + path_);
      got += static_cast<size_t>(r);
    }
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    read_exact(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  bool at_eof() {
    std::uint8_t b;
    const ssize_t r = ::read(fd_, &b, 1);
    return r == 0;
  }

 private:
  std::string path_;
  int fd_ = -1;
};

std::uint32_t kind_code(LayerKind k) { return static_cast<std::uint32_t>(k); }

LayerKind kind_from_code(std::uint32_t c) {
  require(c <= 4, Errc::parse_error, "unknown layer kind code " + std::to_string(c));
  return static_cast<LayerKind>(c);
}

}  // namespace

void save_checkpoint(const Model<float>& m, const std::string& path) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(m.input_dims.size()));
  for (Index d : m.input_dims) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(m.layers.size()));
  for (const auto& s : m.layers) {
    w.u32(kind_code(s.kind));
    w.u32(static_cast<std::uint32_t>(s.in_units));
    w.u32(static_cast<std::uint32_t>(s.out_units));
    w.u32(static_cast<std::uint32_t>(s.kernel));
    w.u32(static_cast<std::uint32_t>(s.filters));
    w.u32(static_cast<std::uint32_t>(s.stride));
    w.u32(static_cast<std::uint32_t>(s.in_channels));
    w.u32(s.same_pad ? 1u : 0u);
  }
  for (size_t l = 0; l < m.weights.size(); ++l) {
    w.raw(m.weights[l].data.data(), m.weights[l].data.size() * sizeof(float));
    w.raw(m.biases[l].data.data(), m.biases[l].data.size() * sizeof(float));
  }

  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  require(fd >= 0, Errc::io_error, "cannot write " + path);
  size_t off = 0;
  while (off < w.buf.size()) {
    const ssize_t r = ::write(fd, w.buf.data() + off, w.buf.size() - off);
    if (r <= 0) {
      ::close(fd);
      fail(Errc::io_error, "write failed on " + path);
    }
    off += static_cast<size_t>(r);
  }
  ::close(fd);
}

Model<float> load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.read_exact(magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, Errc::bad_magic, "not a checkpoint: " + path);
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, Errc::bad_version,
          "unsupported checkpoint version " + std::to_string(version));

  const std::uint32_t rank = r.u32();
  require(rank >= 1 && rank <= 8, Errc::parse_error, "implausible input rank");
  std::vector<Index> input_dims(rank);
  for (auto& d : input_dims) {
    d = r.u32();
    require(d >= 1, Errc::parse_error, "non-positive input dim");
  }
  const std::uint32_t nl = r.u32();
  require(nl >= 1 && nl <= 1024, Errc::parse_error, "implausible layer count");
  std::vector<LayerSpec> specs(nl);
  for (auto& s : specs) {
    s.kind = kind_from_code(r.u32());
    s.in_units = r.u32();
    s.out_units = r.u32();
    s.kernel = r.u32();
    s.filters = r.u32();
    s.stride = r.u32();
    s.in_channels = r.u32();
    s.same_pad = r.u32() != 0;
  }
  // build_model re-validates the chain and sizes every parameter tensor; the
  // payload then streams straight into those final buffers
  Model<float> m = build_model<float>(std::move(input_dims), std::move(specs));
  for (size_t l = 0; l < m.weights.size(); ++l) {
    r.read_exact(m.weights[l].data.data(), m.weights[l].data.size() * sizeof(float));
    r.read_exact(m.biases[l].data.data(), m.biases[l].data.size() * sizeof(float));
  }
  require(r.at_eof(), Errc::size_mismatch, "checkpoint has trailing bytes: " + path);
  return m;
}

}  // namespace ltnn
