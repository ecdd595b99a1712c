// The victim inference server and its wire protocol.
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <thread>
#include <vector>

#include "doctest.h"
#include "ltnn/checkpoint.hpp"
#include "ltnn/ops.hpp"
#include "ltnn/victim.hpp"

using namespace ltnn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path p = fs::temp_directory_path() / "ltnn-test-victim";
  fs::create_directories(p);
  return p;
}

Model<float> classifier_model() {
  Model<float> m = build_model<float>({8}, {LayerSpec::dense(8, 5), LayerSpec::relu(),
                                            LayerSpec::dense(5, 3), LayerSpec::softmax_logits()});
  init_params(m, 17);
  return m;
}

// serves until destroyed; surfaces server-thread exceptions instead of dying
struct ServerGuard {
  std::atomic<bool> stop{false}, ready{false};
  std::string error;
  std::thread th;

  ServerGuard(std::string checkpoint, std::string endpoint) {
    VictimOptions opts;
    opts.checkpoint = std::move(checkpoint);
    opts.endpoint = std::move(endpoint);
    opts.stop = &stop;
    opts.ready = &ready;
    th = std::thread([this, opts] {
      try {
        run_victim(opts);
      } catch (const std::exception& e) {
        error = e.what();
        ready.store(true);
      }
    });
  }
  bool wait_ready() {
    for (int i = 0; i < 5000; ++i) {
      if (ready.load()) return error.empty();
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    return false;
  }
  ~ServerGuard() {
    stop.store(true);
    if (th.joinable()) th.join();
  }
};

int raw_connect(const std::string& path) {
  const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  std::strncpy(addr.sun_path, path.c_str(), sizeof(addr.sun_path) - 1);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  return fd;
}

void send_all(int fd, const std::vector<std::uint8_t>& bytes) {
  size_t put = 0;
  while (put < bytes.size()) {
    const ssize_t r = ::send(fd, bytes.data() + put, bytes.size() - put, MSG_NOSIGNAL);
    REQUIRE(r > 0);
    put += static_cast<size_t>(r);
  }
}

bool read_exact(int fd, void* out, size_t n) {
  auto* p = static_cast<std::uint8_t*>(out);
  size_t got = 0;
  while (got < n) {
    const ssize_t r = ::read(fd, p + got, n - got);
    if (r <= 0) return false;
    got += static_cast<size_t>(r);
  }
  return true;
}

std::uint32_t read_u32(int fd) {
  std::uint8_t b[4];
  REQUIRE(read_exact(fd, b, 4));
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::uint8_t> request_of(std::span<const float> input) {
  std::vector<std::uint8_t> req;
  put_u32(req, static_cast<std::uint32_t>(input.size() * 4));
  const auto* p = reinterpret_cast<const std::uint8_t*>(input.data());
  req.insert(req.end(), p, p + input.size() * 4);
  return req;
}

}  // namespace

TEST_CASE("the victim answers with the model's exact forward pass") {
  const fs::path dir = temp_dir();
  const Model<float> m = classifier_model();
  const std::string ckpt = (dir / "clf.ckpt").string();
  save_checkpoint(m, ckpt);
  const std::string sock = (dir / "clf.sock").string();
  ServerGuard srv(ckpt, sock);
  REQUIRE_MESSAGE(srv.wait_ready(), srv.error);

  std::mt19937 rng(5);
  std::uniform_real_distribution<float> dist(-2.0f, 2.0f);
  for (int round = 0; round < 20; ++round) {
    Tensor<float> x({1, 8});
    for (auto& v : x.data) v = dist(rng);
    const Tensor<float> want = forward(m, x);

    const PredictResponse resp = predict_client(sock, x.data);
    REQUIRE(resp.ok);
    REQUIRE(resp.outputs.size() == static_cast<size_t>(want.dim(1)));
    CHECK(std::memcmp(resp.outputs.data(), want.data.data(), resp.outputs.size() * sizeof(float)) == 0);
    Index best = 0;
    for (Index j = 1; j < want.dim(1); ++j)
      if (want.data[static_cast<size_t>(j)] > want.data[static_cast<size_t>(best)]) best = j;
    CHECK(resp.label == static_cast<std::uint32_t>(best));
  }

  SUBCASE("a hundred sequential connections all succeed") {
    Tensor<float> x({1, 8});
    for (auto& v : x.data) v = 0.25f;
    const Tensor<float> want = forward(m, x);
    for (int i = 0; i < 100; ++i) {
      const PredictResponse resp = predict_client(sock, x.data);
      REQUIRE(resp.ok);
      CHECK(resp.label == 0 + [&] {
        Index best = 0;
        for (Index j = 1; j < want.dim(1); ++j)
          if (want.data[static_cast<size_t>(j)] > want.data[static_cast<size_t>(best)]) best = j;
        return static_cast<std::uint32_t>(best);
      }());
    }
  }
}

TEST_CASE("the victim serves loopback tcp endpoints") {
  const fs::path dir = temp_dir();
  const Model<float> m = classifier_model();
  const std::string ckpt = (dir / "tcp.ckpt").string();
  save_checkpoint(m, ckpt);
  ServerGuard srv(ckpt, "tcp:23741");
  REQUIRE_MESSAGE(srv.wait_ready(), srv.error);

  Tensor<float> x({1, 8});
  for (Index i = 0; i < 8; ++i) x.data[static_cast<size_t>(i)] = 0.1f * static_cast<float>(i) - 0.3f;
  const Tensor<float> want = forward(m, x);
  const PredictResponse resp = predict_client("tcp:23741", x.data);
  REQUIRE(resp.ok);
  CHECK(std::memcmp(resp.outputs.data(), want.data.data(), resp.outputs.size() * sizeof(float)) == 0);
}

TEST_CASE("a regression head reports its first output as the value") {
  const fs::path dir = temp_dir();
  Model<float> m = build_model<float>({4}, {LayerSpec::dense(4, 6), LayerSpec::relu(), LayerSpec::dense(6, 1)});
  init_params(m, 23);
  const std::string ckpt = (dir / "reg.ckpt").string();
  save_checkpoint(m, ckpt);
  const std::string sock = (dir / "reg.sock").string();
  ServerGuard srv(ckpt, sock);
  REQUIRE_MESSAGE(srv.wait_ready(), srv.error);

  Tensor<float> x({1, 4}, {0.5f, -1.0f, 2.0f, 0.25f});
  const Tensor<float> want = forward(m, x);
  const PredictResponse resp = predict_client(sock, x.data);
  REQUIRE(resp.ok);
  REQUIRE(resp.outputs.size() == 1);
  CHECK(std::memcmp(&resp.value, want.data.data(), 4) == 0);
  CHECK(std::memcmp(resp.outputs.data(), want.data.data(), 4) == 0);
}

TEST_CASE("malformed requests get typed errors without killing the server") {
  const fs::path dir = temp_dir();
  const Model<float> m = classifier_model();
  const std::string ckpt = (dir / "err.ckpt").string();
  save_checkpoint(m, ckpt);
  const std::string sock = (dir / "err.sock").string();
  ServerGuard srv(ckpt, sock);
  REQUIRE_MESSAGE(srv.wait_ready(), srv.error);

  const std::vector<float> good_input(8, 0.5f);
  const std::vector<std::uint8_t> good = request_of(good_input);

  SUBCASE("wrong element count answers bad-shape and keeps the connection") {
    const int fd = raw_connect(sock);
    std::vector<std::uint8_t> req;
    put_u32(req, 8);  // two floats instead of eight
    req.resize(req.size() + 8, 0);
    send_all(fd, req);
    CHECK(read_u32(fd) == 2);  // bad shape
    const std::uint32_t mlen = read_u32(fd);
    std::string msg(mlen, '\0');
    REQUIRE(read_exact(fd, msg.data(), mlen));
    CHECK(msg.find("expected 8 values") != std::string::npos);

    // same connection, valid request
    send_all(fd, good);
    CHECK(read_u32(fd) == 0);
    (void)read_u32(fd);  // label
    const std::uint32_t count = read_u32(fd);
    REQUIRE(count == 3);
    std::vector<float> outs(count);
    REQUIRE(read_exact(fd, outs.data(), count * 4));
    ::close(fd);
  }

  SUBCASE("a zero length prefix answers bad-length and closes") {
    const int fd = raw_connect(sock);
    std::vector<std::uint8_t> req;
    put_u32(req, 0);
    send_all(fd, req);
    CHECK(read_u32(fd) == 1);  // bad length
    const std::uint32_t mlen = read_u32(fd);
    std::string msg(mlen, '\0');
    REQUIRE(read_exact(fd, msg.data(), mlen));
    CHECK(msg.find("unusable payload length") != std::string::npos);
    std::uint8_t extra;
    CHECK_FALSE(read_exact(fd, &extra, 1));  // server hung up
    ::close(fd);
  }

  SUBCASE("an oversized length prefix is refused without draining it") {
    const int fd = raw_connect(sock);
    std::vector<std::uint8_t> req;
    put_u32(req, (1u << 26) + 4);
    send_all(fd, req);
    CHECK(read_u32(fd) == 1);
    ::close(fd);
  }

  SUBCASE("non-finite inputs surface as internal errors, connection intact") {
    const int fd = raw_connect(sock);
    std::vector<float> bad_input(8, 1.0f);
    bad_input[3] = std::numeric_limits<float>::quiet_NaN();
    send_all(fd, request_of(bad_input));
    CHECK(read_u32(fd) == 3);  // internal
    const std::uint32_t mlen = read_u32(fd);
    std::string msg(mlen, '\0');
    REQUIRE(read_exact(fd, msg.data(), mlen));
    CHECK(msg.find("nonfinite") != std::string::npos);

    send_all(fd, good);
    CHECK(read_u32(fd) == 0);
    (void)read_u32(fd);
    const std::uint32_t count = read_u32(fd);
    std::vector<float> outs(count);
    REQUIRE(read_exact(fd, outs.data(), count * 4));
    ::close(fd);
  }
}

TEST_CASE("clients surface connection failures as typed errors") {
  const fs::path dir = temp_dir();
  const std::string sock = (dir / "nobody.sock").string();
  const std::vector<float> input(8, 0.0f);
  try {
    (void)predict_client(sock, input);
    FAIL("expected connection_failed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::connection_failed);
  }

  // a server that was stopped cleans up its socket
  const Model<float> m = classifier_model();
  const std::string ckpt = (dir / "gone.ckpt").string();
  save_checkpoint(m, ckpt);
  const std::string gone = (dir / "gone.sock").string();
  {
    ServerGuard srv(ckpt, gone);
    REQUIRE_MESSAGE(srv.wait_ready(), srv.error);
    const PredictResponse ok = predict_client(gone, input);
    CHECK(ok.ok);
  }
  try {
    (void)predict_client(gone, input);
    FAIL("expected connection_failed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::connection_failed);
  }
}

TEST_CASE("run_victim validates its configuration up front") {
  const fs::path dir = temp_dir();
  VictimOptions opts;
  opts.checkpoint = (dir / "missing.ckpt").string();
  opts.endpoint = (dir / "x.sock").string();
  CHECK_THROWS_AS((void)run_victim(opts), Error);

  const Model<float> m = classifier_model();
  const std::string ckpt = (dir / "cfg.ckpt").string();
  save_checkpoint(m, ckpt);
  VictimOptions bad_ep;
  bad_ep.checkpoint = ckpt;
  bad_ep.endpoint = "tcp:notaport";
  try {
    (void)run_victim(bad_ep);
    FAIL("expected invalid_argument");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_argument);
  }
}
