#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "otgym/session.hpp"

namespace otgym {

struct ServerConfig {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  std::filesystem::path static_dir;  // empty: bundled data/www
  std::optional<std::filesystem::path> record_dir;  // trace + step log per episode
  SessionConfig session;
};

struct ServerStats {
  std::uint64_t ticks = 0;
  std::uint64_t broadcasts = 0;
  std::uint64_t dropped_inputs = 0;  // operator inputs superseded before a tick consumed them
  std::uint64_t connections = 0;     // currently open WebSocket clients
};

/// WebSocket session server. One simulation thread owns the session; one I/O
/// thread runs every connection. They talk only through queues: commands and a
/// latest-wins operator slot inbound, posted snapshots and replies outbound.
class Server {
 public:
  explicit Server(ServerConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds the listener and starts both threads. Throws std::runtime_error when
  /// the address cannot be bound.
  void start();
  unsigned short port() const;
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  ServerStats stats() const;
  std::string session_id() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace otgym
