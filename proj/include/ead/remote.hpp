#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "ead/lm.hpp"
#include "ead/types.hpp"

namespace ead {

/// Newline-delimited JSON frames over a pair of file descriptors (a TCP
/// socket uses the same fd twice). Reads are bounded by a poll timeout.
class NdjsonStream {
 public:
  NdjsonStream(int read_fd, int write_fd, int timeout_ms = 5000);
  ~NdjsonStream();

  NdjsonStream(NdjsonStream&& other) noexcept;
  NdjsonStream& operator=(NdjsonStream&&) = delete;
  NdjsonStream(const NdjsonStream&) = delete;

  /// One frame, parsed. Throws TransportError on timeout or closed peer,
  /// ProtocolError on non-JSON input.
  nlohmann::json read_frame();
  void write_frame(const nlohmann::json& frame);

  /// Returns false on clean EOF instead of throwing (server accept loops).
  bool try_read_frame(nlohmann::json& out);

  int timeout_ms() const { return timeout_ms_; }

 private:
  bool fill_buffer();  // false on EOF

  int read_fd_;
  int write_fd_;
  bool owns_read_ = true;
  bool owns_write_ = true;
  int timeout_ms_;
  std::string buffer_;
};

/// Connects a TCP socket; throws TransportError on failure.
NdjsonStream connect_tcp(const std::string& host, int port,
                         int timeout_ms = 5000);

/// Listens on `port` (0 picks an ephemeral port); returns the listen fd.
int listen_tcp(const std::string& host, int port);
int bound_port(int listen_fd);

/// Client for an external logit server. The handshake runs in the
/// constructor and fixes the descriptor. One request is in flight per
/// connection; callers wanting parallel rollouts open multiple connections.
class RemoteModel final : public LanguageModel {
 public:
  explicit RemoteModel(NdjsonStream stream);

  static std::unique_ptr<RemoteModel> connect(const std::string& host, int port,
                                              int timeout_ms = 5000);

  const ModelDescriptor& descriptor() const override { return descriptor_; }
  VocabLogits next_logits(const Prefix& prefix) const override;

 private:
  mutable NdjsonStream stream_;
  mutable std::mutex mutex_;
  mutable std::uint64_t next_id_ = 1;
  ModelDescriptor descriptor_;
};

/// Serves `model` over one stream until the peer closes it.
void serve_model(const LanguageModel& model, NdjsonStream& stream);

/// Accept loop; one thread per connection. `stop` ends the loop.
void serve_model_tcp(const LanguageModel& model, int listen_fd,
                     std::atomic<bool>& stop);

}  // namespace ead
