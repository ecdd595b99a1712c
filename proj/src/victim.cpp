#include "ltnn/victim.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstring>

#include "ltnn/checkpoint.hpp"
#include "ltnn/ops.hpp"

namespace ltnn {

namespace {

constexpr std::uint32_t kMaxPayload = 1u << 26;  // 64 MiB hard cap per request

constexpr std::uint32_t kErrBadLength = 1;   // length prefix unusable
constexpr std::uint32_t kErrBadShape = 2;    // element count does not match the model
constexpr std::uint32_t kErrInternal = 3;

bool read_full(int fd, void* out, size_t n) {
  auto* p = static_cast<std::uint8_t*>(out);
  size_t got = 0;
  while (got < n) {
    const ssize_t r = ::read(fd, p + got, n - got);
    if (r <= 0) {
      if (r < 0 && errno == EINTR) continue;
      return false;
    }
    got += static_cast<size_t>(r);
  }
  return true;
}

bool write_full(int fd, const void* data, size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  size_t put = 0;
  while (put < n) {
    const ssize_t r = ::send(fd, p + put, n - put, MSG_NOSIGNAL);
    if (r <= 0) {
      if (r < 0 && errno == EINTR) continue;
      return false;
    }
    put += static_cast<size_t>(r);
  }
  return true;
}

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

bool send_error(int fd, std::uint32_t code, const std::string& msg) {
  std::vector<std::uint8_t> buf;
  put_u32(buf, code);
  put_u32(buf, static_cast<std::uint32_t>(msg.size()));
  buf.insert(buf.end(), msg.begin(), msg.end());
  return write_full(fd, buf.data(), buf.size());
}

struct Endpoint {
  bool tcp = false;
  std::uint16_t port = 0;
  std::string path;
};

Endpoint parse_endpoint(const std::string& ep) {
  Endpoint e;
  if (ep.rfind("tcp:", 0) == 0) {
    e.tcp = true;
    unsigned port = 0;
    const auto* b = ep.data() + 4;
    const auto [p, ec] = std::from_chars(b, ep.data() + ep.size(), port);
    require(ec == std::errc() && p == ep.data() + ep.size() && port > 0 && port < 65536,
            Errc::invalid_argument, "bad tcp endpoint '" + ep + "'");
    e.port = static_cast<std::uint16_t>(port);
  } else {
    require(!ep.empty(), Errc::invalid_argument, "empty endpoint");
    e.path = ep;
    require(e.path.size() < sizeof(sockaddr_un{}.sun_path), Errc::invalid_argument,
            "socket path too long");
  }
  return e;
}

int listen_on(const Endpoint& e) {
  int fd;
  if (e.tcp) {
    fd = ::socket(AF_INET, SOCK_STREAM, 0);
    require(fd >= 0, Errc::io_error, "socket() failed");
    const int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(e.port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      ::close(fd);
      fail(Errc::io_error, "cannot bind loopback port " + std::to_string(e.port));
    }
  } else {
    fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    require(fd >= 0, Errc::io_error, "socket() failed");
    ::unlink(e.path.c_str());
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::strncpy(addr.sun_path, e.path.c_str(), sizeof(addr.sun_path) - 1);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      ::close(fd);
      fail(Errc::io_error, "cannot bind socket path " + e.path);
    }
  }
  if (::listen(fd, 8) != 0) {
    ::close(fd);
    fail(Errc::io_error, "listen() failed");
  }
  return fd;
}

int connect_to(const Endpoint& e) {
  int fd;
  if (e.tcp) {
    fd = ::socket(AF_INET, SOCK_STREAM, 0);
    require(fd >= 0, Errc::io_error, "socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(e.port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      ::close(fd);
      fail(Errc::connection_failed, "cannot connect to tcp:" + std::to_string(e.port));
    }
  } else {
    fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    require(fd >= 0, Errc::io_error, "socket() failed");
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::strncpy(addr.sun_path, e.path.c_str(), sizeof(addr.sun_path) - 1);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      ::close(fd);
      fail(Errc::connection_failed, "cannot connect to " + e.path);
    }
  }
  return fd;
}

// one request served; false = connection should close
bool serve_request(int fd, const Model<float>& model, Tensor<float>& batch, bool classification) {
  std::uint8_t lenbuf[4];
  if (!read_full(fd, lenbuf, 4)) return false;  // EOF between requests
  const std::uint32_t len = get_u32(lenbuf);
  if (len == 0 || len > kMaxPayload) {
    // nothing to drain (oversized payloads are not read); report and close
    send_error(fd, kErrBadLength, "unusable payload length " + std::to_string(len));
    return false;
  }
  std::vector<std::uint8_t> payload(len);
  if (!read_full(fd, payload.data(), len)) return false;
  const Index want = batch.numel();
  if (len % 4 != 0 || static_cast<Index>(len / 4) != want) {
    // malformed request: answer with an error and keep the connection up
    return send_error(fd, kErrBadShape,
                      "expected " + std::to_string(want) + " values, got " + std::to_string(len / 4));
  }
  std::memcpy(batch.data.data(), payload.data(), len);
  try {
    const Tensor<float> out = forward(model, batch);
    const Index c = out.dim(1);
    std::vector<std::uint8_t> buf;
    put_u32(buf, 0);  // ok
    if (classification) {
      Index best = 0;
      for (Index j = 1; j < c; ++j)
        if (out.data[static_cast<size_t>(j)] > out.data[static_cast<size_t>(best)]) best = j;
      put_u32(buf, static_cast<std::uint32_t>(best));
    } else {
      std::uint32_t bits;
      std::memcpy(&bits, out.data.data(), 4);
      put_u32(buf, bits);
    }
    put_u32(buf, static_cast<std::uint32_t>(c));
    const auto* ob = reinterpret_cast<const std::uint8_t*>(out.data.data());
    buf.insert(buf.end(), ob, ob + static_cast<size_t>(c) * 4);
    return write_full(fd, buf.data(), buf.size());
  } catch (const Error& e) {
    return send_error(fd, kErrInternal, e.what());
  }
}

}  // namespace

int run_victim(const VictimOptions& opts) {
  // weights stay in these per-layer buffers for the process lifetime; nothing
  // below copies them
  const Model<float> model = load_checkpoint(opts.checkpoint);
  const bool classification = !model.layers.empty() && model.layers.back().kind == LayerKind::softmax_logits;
  Tensor<float> batch = [&] {
    std::vector<Index> dims;
    dims.push_back(1);
    for (Index d : model.input_dims) dims.push_back(d);
    return Tensor<float>(dims);
  }();

  const Endpoint ep = parse_endpoint(opts.endpoint);
  const int listen_fd = listen_on(ep);
  if (opts.ready) opts.ready->store(true);
  if (!opts.quiet) std::fprintf(stderr, "victim: serving %s on %s (pid %d)\n", opts.checkpoint.c_str(),
                                opts.endpoint.c_str(), ::getpid());

  while (!opts.stop || !opts.stop->load()) {
    pollfd pfd{listen_fd, POLLIN, 0};
    const int pr = ::poll(&pfd, 1, 100);
    if (pr < 0 && errno != EINTR) break;
    if (pr <= 0 || !(pfd.revents & POLLIN)) continue;
    const int conn = ::accept(listen_fd, nullptr, nullptr);
    if (conn < 0) continue;
    while (serve_request(conn, model, batch, classification)) {
      if (opts.stop && opts.stop->load()) break;
    }
    ::close(conn);
  }
  ::close(listen_fd);
  if (!ep.tcp) ::unlink(ep.path.c_str());
  return 0;
}

PredictResponse predict_client(const std::string& endpoint, std::span<const float> input) {
  const Endpoint ep = parse_endpoint(endpoint);
  const int fd = connect_to(ep);
  PredictResponse resp;
  std::vector<std::uint8_t> req;
  put_u32(req, static_cast<std::uint32_t>(input.size() * 4));
  const auto* ib = reinterpret_cast<const std::uint8_t*>(input.data());
  req.insert(req.end(), ib, ib + input.size() * 4);
  if (!write_full(fd, req.data(), req.size())) {
    ::close(fd);
    fail(Errc::connection_failed, "send failed");
  }
  std::uint8_t head[4];
  if (!read_full(fd, head, 4)) {
    ::close(fd);
    fail(Errc::protocol_error, "connection closed before a response arrived");
  }
  const std::uint32_t status = get_u32(head);
  if (status != 0) {
    resp.ok = false;
    resp.error_code = status;
    std::uint8_t lb[4];
    if (read_full(fd, lb, 4)) {
      const std::uint32_t ml = get_u32(lb);
      if (ml <= 4096) {
        std::string msg(ml, '\0');
        if (read_full(fd, msg.data(), ml)) resp.error = std::move(msg);
      }
    }
    ::close(fd);
    return resp;
  }
  std::uint8_t body[8];
  if (!read_full(fd, body, 8)) {
    ::close(fd);
    fail(Errc::protocol_error, "truncated response header");
  }
  const std::uint32_t first = get_u32(body);
  const std::uint32_t count = get_u32(body + 4);
  if (count > (1u << 20)) {
    ::close(fd);
    fail(Errc::protocol_error, "implausible output count");
  }
  resp.outputs.resize(count);
  if (count && !read_full(fd, resp.outputs.data(), static_cast<size_t>(count) * 4)) {
    ::close(fd);
    fail(Errc::protocol_error, "truncated response payload");
  }
  ::close(fd);
  resp.ok = true;
  resp.label = first;
  std::memcpy(&resp.value, &first, 4);
  return resp;
}

}  // namespace ltnn
