#include "ead/remote.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

namespace ead {

using nlohmann::json;

// ---------------------------------------------------------------------------
// NdjsonStream
// ---------------------------------------------------------------------------

NdjsonStream::NdjsonStream(int read_fd, int write_fd, int timeout_ms)
    : read_fd_(read_fd),
      write_fd_(write_fd),
      owns_write_(write_fd != read_fd),
      timeout_ms_(timeout_ms) {
  // A peer that hangs up mid-write must surface as EPIPE, not SIGPIPE.
  static const bool sigpipe_ignored = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)sigpipe_ignored;
}

NdjsonStream::~NdjsonStream() {
  if (read_fd_ >= 0 && owns_read_) ::close(read_fd_);
  if (write_fd_ >= 0 && owns_write_) ::close(write_fd_);
}

NdjsonStream::NdjsonStream(NdjsonStream&& other) noexcept
    : read_fd_(other.read_fd_),
      write_fd_(other.write_fd_),
      owns_read_(other.owns_read_),
      owns_write_(other.owns_write_),
      timeout_ms_(other.timeout_ms_),
      buffer_(std::move(other.buffer_)) {
  other.read_fd_ = -1;
  other.write_fd_ = -1;
}

bool NdjsonStream::fill_buffer() {
  struct pollfd pfd{};
  pfd.fd = read_fd_;
  pfd.events = POLLIN;
  int rc = ::poll(&pfd, 1, timeout_ms_);
  if (rc == 0) throw TransportError("timeout waiting for frame");
  if (rc < 0) throw TransportError(std::string("poll: ") + std::strerror(errno));

  char chunk[4096];
  ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
  if (n < 0) throw TransportError(std::string("read: ") + std::strerror(errno));
  if (n == 0) return false;
  buffer_.append(chunk, static_cast<std::size_t>(n));
  return true;
}

bool NdjsonStream::try_read_frame(json& out) {
  for (;;) {
    std::size_t pos = buffer_.find('\n');
    if (pos != std::string::npos) {
      std::string line = buffer_.substr(0, pos);
      buffer_.erase(0, pos + 1);
      if (line.empty()) continue;
      try {
        out = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ProtocolError(std::string("malformed frame: ") + e.what());
      }
      return true;
    }
    if (!fill_buffer()) return false;
  }
}

json NdjsonStream::read_frame() {
  json frame;
  if (!try_read_frame(frame)) {
    throw TransportError("connection closed by peer");
  }
  return frame;
}

void NdjsonStream::write_frame(const json& frame) {
  std::string line = frame.dump();
  line.push_back('\n');
  std::size_t off = 0;
  while (off < line.size()) {
    ssize_t n = ::write(write_fd_, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("write: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

// ---------------------------------------------------------------------------
// TCP helpers
// ---------------------------------------------------------------------------

NdjsonStream connect_tcp(const std::string& host, int port, int timeout_ms) {
  struct addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  struct addrinfo* res = nullptr;
  std::string port_str = std::to_string(port);
  int rc = ::getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res);
  if (rc != 0) {
    throw TransportError("resolve " + host + ": " + gai_strerror(rc));
  }
  int fd = -1;
  for (struct addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) {
    throw TransportError("connect " + host + ":" + port_str + " failed");
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return NdjsonStream(fd, fd, timeout_ms);
}

int listen_tcp(const std::string& host, int port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw TransportError("socket failed");
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  struct sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw TransportError("bad listen address " + host);
  }
  if (::bind(fd, reinterpret_cast<struct sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw TransportError(std::string("bind: ") + std::strerror(errno));
  }
  if (::listen(fd, 16) != 0) {
    ::close(fd);
    throw TransportError(std::string("listen: ") + std::strerror(errno));
  }
  return fd;
}

int bound_port(int listen_fd) {
  struct sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (::getsockname(listen_fd, reinterpret_cast<struct sockaddr*>(&addr),
                    &len) != 0) {
    throw TransportError("getsockname failed");
  }
  return ntohs(addr.sin_port);
}

// ---------------------------------------------------------------------------
// Frame encoding: logit values are numbers, -inf travels as the string "-inf".
// ---------------------------------------------------------------------------

namespace {

json encode_values(const VocabLogits& logits) {
  json arr = json::array();
  for (double v : logits.values) {
    if (std::isfinite(v)) {
      arr.push_back(v);
    } else {
      arr.push_back("-inf");
    }
  }
  return arr;
}

std::vector<double> decode_values(const json& arr) {
  if (!arr.is_array()) throw ProtocolError("logit values must be an array");
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (v.is_number()) {
      double d = v.get<double>();
      if (!std::isfinite(d)) throw ProtocolError("non-finite numeric logit");
      out.push_back(d);
    } else if (v.is_string() && v.get<std::string>() == "-inf") {
      out.push_back(kNegInf);
    } else {
      throw ProtocolError("logit entries must be finite numbers or \"-inf\"");
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// RemoteModel
// ---------------------------------------------------------------------------

RemoteModel::RemoteModel(NdjsonStream stream) : stream_(std::move(stream)) {
  stream_.write_frame(json{{"op", "hello"}});
  json reply = stream_.read_frame();
  if (reply.value("op", "") != "model" || !reply.contains("vocab_size") ||
      !reply.contains("max_context")) {
    throw ProtocolError("handshake reply missing model descriptor");
  }
  descriptor_.vocab_size = reply["vocab_size"].get<int>();
  descriptor_.max_context = reply["max_context"].get<long>();
  descriptor_.kind = ModelKind::kRemote;
  if (descriptor_.vocab_size < 2) {
    throw ProtocolError("server reported vocab_size < 2");
  }
}

std::unique_ptr<RemoteModel> RemoteModel::connect(const std::string& host,
                                                  int port, int timeout_ms) {
  return std::make_unique<RemoteModel>(connect_tcp(host, port, timeout_ms));
}

VocabLogits RemoteModel::next_logits(const Prefix& prefix) const {
  check_context(prefix);
  std::lock_guard<std::mutex> lock(mutex_);
  std::uint64_t id = next_id_++;
  json req{{"op", "logits"}, {"id", id}, {"prefix", prefix}};
  stream_.write_frame(req);

  json reply = stream_.read_frame();
  if (reply.value("op", "") == "error") {
    throw ProtocolError("server error: " + reply.value("message", "?"));
  }
  if (reply.value("op", "") != "logits" || !reply.contains("id") ||
      !reply.contains("values")) {
    throw ProtocolError("unexpected frame in reply to logits request");
  }
  std::uint64_t reply_id = reply["id"].get<std::uint64_t>();
  if (reply_id != id) {
    // With one request in flight the only way to see another id is a
    // duplicated or stale response.
    throw ProtocolError("response id " + std::to_string(reply_id) +
                        " does not match request id " + std::to_string(id));
  }
  VocabLogits logits(decode_values(reply["values"]));
  if (logits.size() != descriptor_.vocab_size) {
    throw ProtocolError("vocab size mismatch: got " +
                        std::to_string(logits.size()) + " values, expected " +
                        std::to_string(descriptor_.vocab_size));
  }
  validate_logits(logits);
  return logits;
}

// ---------------------------------------------------------------------------
// Server side
// ---------------------------------------------------------------------------

void serve_model(const LanguageModel& model, NdjsonStream& stream) {
  json frame;
  while (stream.try_read_frame(frame)) {
    std::string op = frame.value("op", "");
    if (op == "hello") {
      stream.write_frame(json{{"op", "model"},
                              {"vocab_size", model.descriptor().vocab_size},
                              {"max_context", model.descriptor().max_context}});
    } else if (op == "logits") {
      if (!frame.contains("id") || !frame.contains("prefix") ||
          !frame["prefix"].is_array()) {
        stream.write_frame(json{{"op", "error"}, {"message", "bad request"}});
        continue;
      }
      Prefix prefix = frame["prefix"].get<Prefix>();
      try {
        VocabLogits logits = model.next_logits(prefix);
        stream.write_frame(json{{"op", "logits"},
                                {"id", frame["id"]},
                                {"values", encode_values(logits)}});
      } catch (const Error& e) {
        stream.write_frame(json{{"op", "error"},
                                {"id", frame["id"]},
                                {"message", e.what()}});
      }
    } else {
      stream.write_frame(json{{"op", "error"}, {"message", "unknown op"}});
    }
  }
}

void serve_model_tcp(const LanguageModel& model, int listen_fd,
                     std::atomic<bool>& stop) {
  while (!stop.load()) {
    struct pollfd pfd{};
    pfd.fd = listen_fd;
    pfd.events = POLLIN;
    int rc = ::poll(&pfd, 1, 100);
    if (rc <= 0) continue;
    int conn = ::accept(listen_fd, nullptr, nullptr);
    if (conn < 0) continue;
    std::thread([&model, conn]() {
      try {
        NdjsonStream stream(conn, conn, 60000);
        serve_model(model, stream);
      } catch (const Error&) {
        // Connection-level failure ends only this session.
      }
    }).detach();
  }
}

}  // namespace ead
