#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vonctl/session.hpp"

namespace vonctl {

// Transport framing. Plain TCP clients exchange messages as a 4-byte
// little-endian length followed by UTF-8 JSON. Browsers connect with a
// WebSocket upgrade on the same port and exchange one JSON text frame per message.

std::string length_prefixed(const std::string& payload);
/// Removes and returns every complete message at the front of `buffer`.
std::vector<std::string> take_length_prefixed(std::string& buffer, std::size_t max_message = 16u << 20);

/// Sec-WebSocket-Accept for a client key.
std::string websocket_accept_key(const std::string& client_key);
/// Unmasked text frame (server to client), or masked with `mask` (client to server).
std::string websocket_frame(const std::string& payload, std::optional<std::uint32_t> mask = std::nullopt,
                            std::uint8_t opcode = 0x1);

struct WebSocketMessage {
  std::uint8_t opcode = 0x1;
  std::string payload;
};
/// Removes and returns every complete frame at the front of `buffer`.
std::vector<WebSocketMessage> take_websocket_frames(std::string& buffer, std::size_t max_message = 16u << 20);

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8765;  // 0 picks a free port
  double tick_hz = 50.0;
};

/// One thread per connection, each owning its own session and stepping it at
/// tick_hz wall clock. A late tick is taken as soon as possible and the
/// schedule restarts from there; the model always advances one step per tick.
class Server {
 public:
  Server(std::shared_ptr<const ModelRegistry> registry, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts accepting; returns the bound port.
  int start();
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();
  int port() const { return port_; }

 private:
  void accept_loop();
  void serve_connection(int fd);

  std::shared_ptr<const ModelRegistry> registry_;
  ServerOptions options_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex workers_mutex_;
  std::vector<std::thread> workers_;
};

/// Blocking length-prefixed TCP client.
class ProtocolClient {
 public:
  ProtocolClient(const std::string& host, int port);
  ~ProtocolClient();
  ProtocolClient(const ProtocolClient&) = delete;
  ProtocolClient& operator=(const ProtocolClient&) = delete;

  void send(const nlohmann::json& msg);
  void send_raw(const std::string& payload);
  /// Next message, or nullopt after `timeout` without one.
  std::optional<nlohmann::json> receive(std::chrono::milliseconds timeout);
  /// Skips messages until one of `type` arrives.
  std::optional<nlohmann::json> receive_type(const std::string& type, std::chrono::milliseconds timeout);

 private:
  int fd_ = -1;
  std::string buffer_;
  std::vector<std::string> pending_;
};

}  // namespace vonctl
