#include "vonctl/server.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <string_view>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "vonctl/error.hpp"

namespace vonctl {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string length_prefixed(const std::string& payload) {
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out(4, '\0');
  for (int b = 0; b < 4; ++b) out[b] = static_cast<char>((n >> (8 * b)) & 0xff);
  return out + payload;
}

std::vector<std::string> take_length_prefixed(std::string& buffer, std::size_t max_message) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (buffer.size() - pos >= 4) {
    std::uint32_t n = 0;
    for (int b = 0; b < 4; ++b) n |= std::uint32_t(static_cast<unsigned char>(buffer[pos + b])) << (8 * b);
    if (n > max_message) throw FormatError("message of " + std::to_string(n) + " bytes exceeds the limit");
    if (buffer.size() - pos - 4 < n) break;
    out.push_back(buffer.substr(pos + 4, n));
    pos += 4 + n;
  }
  buffer.erase(0, pos);
  return out;
}

std::string websocket_accept_key(const std::string& client_key) {
  const std::string s = client_key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest);
  std::string out(4 * ((SHA_DIGEST_LENGTH + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), digest, SHA_DIGEST_LENGTH);
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string websocket_frame(const std::string& payload, std::optional<std::uint32_t> mask, std::uint8_t opcode) {
  std::string out;
  out.push_back(static_cast<char>(0x80 | opcode));
  const std::uint8_t mask_bit = mask ? 0x80 : 0x00;
  const std::size_t n = payload.size();
  if (n < 126) {
    out.push_back(static_cast<char>(mask_bit | n));
  } else if (n <= 0xffff) {
    out.push_back(static_cast<char>(mask_bit | 126));
    out.push_back(static_cast<char>((n >> 8) & 0xff));
    out.push_back(static_cast<char>(n & 0xff));
  } else {
    out.push_back(static_cast<char>(mask_bit | 127));
    for (int b = 7; b >= 0; --b) out.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * b)) & 0xff));
  }
  if (!mask) return out + payload;
  unsigned char key[4];
  for (int b = 0; b < 4; ++b) key[b] = static_cast<unsigned char>((*mask >> (8 * (3 - b))) & 0xff);
  for (unsigned char k : key) out.push_back(static_cast<char>(k));
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<char>(payload[i] ^ key[i % 4]));
  return out;
}

std::vector<WebSocketMessage> take_websocket_frames(std::string& buffer, std::size_t max_message) {
  std::vector<WebSocketMessage> out;
  std::size_t pos = 0;
  auto byte = [&](std::size_t i) { return static_cast<unsigned char>(buffer[i]); };
  while (buffer.size() - pos >= 2) {
    const std::uint8_t opcode = byte(pos) & 0x0f;
    if (!(byte(pos) & 0x80)) throw FormatError("fragmented WebSocket frames are not supported");
    const bool masked = byte(pos + 1) & 0x80;
    std::uint64_t n = byte(pos + 1) & 0x7f;
    std::size_t header = 2;
    if (n == 126) {
      if (buffer.size() - pos < 4) break;
      n = (std::uint64_t(byte(pos + 2)) << 8) | byte(pos + 3);
      header = 4;
    } else if (n == 127) {
      if (buffer.size() - pos < 10) break;
      n = 0;
      for (int b = 0; b < 8; ++b) n = (n << 8) | byte(pos + 2 + b);
      header = 10;
    }
    if (n > max_message) throw FormatError("WebSocket frame exceeds the size limit");
    const std::size_t key_at = pos + header;
    if (masked) header += 4;
    if (buffer.size() - pos < header + n) break;
    WebSocketMessage m{opcode, buffer.substr(pos + header, n)};
    if (masked)
      for (std::size_t i = 0; i < n; ++i) m.payload[i] = static_cast<char>(m.payload[i] ^ buffer[key_at + i % 4]);
    out.push_back(std::move(m));
    pos += header + n;
  }
  buffer.erase(0, pos);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

bool send_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

// Appends whatever arrives within `timeout_ms`; false when the peer closed.
bool read_some(int fd, std::string& buffer, int timeout_ms) {
  pollfd p{fd, POLLIN, 0};
  const int r = ::poll(&p, 1, timeout_ms);
  if (r <= 0) return r == 0 || errno == EINTR;
  char chunk[65536];
  const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
  if (n <= 0) return false;
  buffer.append(chunk, static_cast<std::size_t>(n));
  return true;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::optional<std::string> header_value(const std::string& head, const std::string& name) {
  const std::string h = lower(head);
  const std::string key = "\r\n" + lower(name) + ":";
  const auto at = h.find(key);
  if (at == std::string::npos) return std::nullopt;
  const auto start = at + key.size();
  const auto end = head.find("\r\n", start);
  std::string v = head.substr(start, end - start);
  v.erase(0, v.find_first_not_of(" \t"));
  v.erase(v.find_last_not_of(" \t") + 1);
  return v;
}

}  // namespace

Server::Server(std::shared_ptr<const ModelRegistry> registry, ServerOptions options)
    : registry_(std::move(registry)), options_(std::move(options)) {
  if (!registry_) throw ContractViolation("server needs a registry");
  if (!(options_.tick_hz > 0.0)) throw ContractViolation("tick rate must be positive");
}

Server::~Server() { stop(); }

int Server::start() {
  if (running_) return port_;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  if (::getaddrinfo(options_.host.c_str(), std::to_string(options_.port).c_str(), &hints, &res) != 0 || !res)
    throw std::runtime_error("cannot resolve " + options_.host);
  listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (listen_fd_ < 0 || ::bind(listen_fd_, res->ai_addr, res->ai_addrlen) != 0 || ::listen(listen_fd_, 16) != 0) {
    const std::string err = std::strerror(errno);
    ::freeaddrinfo(res);
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error("cannot listen on " + options_.host + ":" + std::to_string(options_.port) + ": " + err);
  }
  ::freeaddrinfo(res);
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
  return port_;
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(workers_mutex_);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  listen_fd_ = -1;
}

void Server::wait() {
  while (running_) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

void Server::accept_loop() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 50) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(workers_mutex_);
    workers_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void Server::serve_connection(int fd) {
  std::string buffer;
  // Transport detection: a WebSocket client speaks first with an HTTP GET, a
  // TCP client waits for the greeting. A length prefix never starts with "GET ".
  const auto sniff = Clock::now() + std::chrono::milliseconds(100);
  while (running_ && buffer.size() < 4 && Clock::now() < sniff && std::string_view("GET ").starts_with(buffer)) {
    const auto left = std::chrono::ceil<std::chrono::milliseconds>(sniff - Clock::now()).count();
    if (left <= 0 || !read_some(fd, buffer, static_cast<int>(left))) break;
  }
  const auto deadline = Clock::now() + std::chrono::seconds(5);
  bool websocket = false;
  if (buffer.rfind("GET ", 0) == 0) {
    while (running_ && buffer.find("\r\n\r\n") == std::string::npos && Clock::now() < deadline && buffer.size() < 16384)
      if (!read_some(fd, buffer, 50)) break;
    const auto end = buffer.find("\r\n\r\n");
    const auto key = end == std::string::npos ? std::nullopt : header_value(buffer.substr(0, end + 2), "Sec-WebSocket-Key");
    if (!key) {
      send_all(fd, "HTTP/1.1 426 Upgrade Required\r\nUpgrade: websocket\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
      ::close(fd);
      return;
    }
    send_all(fd, "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                 "Sec-WebSocket-Accept: " + websocket_accept_key(*key) + "\r\n\r\n");
    buffer.erase(0, end + 4);
    websocket = true;
  }

  SessionController controller(registry_);
  auto send_msg = [&](const json& j) {
    const std::string s = j.dump();
    return send_all(fd, websocket ? websocket_frame(s) : length_prefixed(s));
  };
  bool open = send_msg(controller.hello());
  const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / options_.tick_hz));
  auto next_tick = Clock::now() + period;

  while (open && running_) {
    try {
      std::vector<std::string> texts;
      if (websocket) {
        for (auto& m : take_websocket_frames(buffer)) {
          if (m.opcode == 0x8) {
            send_all(fd, websocket_frame(m.payload.substr(0, 2), std::nullopt, 0x8));
            open = false;
            break;
          }
          if (m.opcode == 0x9) send_all(fd, websocket_frame(m.payload, std::nullopt, 0xA));
          if (m.opcode == 0x1 || m.opcode == 0x2) texts.push_back(std::move(m.payload));
        }
      } else {
        texts = take_length_prefixed(buffer);
      }
      for (const auto& t : texts)
        for (const auto& reply : controller.handle_text(t)) open = open && send_msg(reply);
    } catch (const FormatError& e) {
      send_msg(error_message(e.what()));
      break;
    }
    if (!open) break;

    const auto now = Clock::now();
    if (now >= next_tick) {
      if (auto frame = controller.tick()) open = send_msg(*frame);
      next_tick += period;
      if (next_tick <= Clock::now()) next_tick = Clock::now() + period;
      continue;
    }
    const auto wait_ms = std::chrono::ceil<std::chrono::milliseconds>(next_tick - now).count();
    open = read_some(fd, buffer, static_cast<int>(wait_ms));
  }
  ::close(fd);
}

// ---------------------------------------------------------------------------

ProtocolClient::ProtocolClient(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
    throw std::runtime_error("cannot resolve " + host);
  fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  const bool ok = fd_ >= 0 && ::connect(fd_, res->ai_addr, res->ai_addrlen) == 0;
  ::freeaddrinfo(res);
  if (!ok) {
    if (fd_ >= 0) ::close(fd_);
    throw std::runtime_error("cannot connect to " + host + ":" + std::to_string(port));
  }
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

ProtocolClient::~ProtocolClient() {
  if (fd_ >= 0) ::close(fd_);
}

void ProtocolClient::send(const json& msg) { send_raw(msg.dump()); }

void ProtocolClient::send_raw(const std::string& payload) {
  if (!send_all(fd_, length_prefixed(payload))) throw std::runtime_error("connection closed");
}

std::optional<json> ProtocolClient::receive(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  while (pending_.empty()) {
    for (auto& m : take_length_prefixed(buffer_)) pending_.push_back(std::move(m));
    if (!pending_.empty()) break;
    const auto left = std::chrono::ceil<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (left <= 0) return std::nullopt;
    if (!read_some(fd_, buffer_, static_cast<int>(left))) throw std::runtime_error("connection closed");
  }
  const std::string text = std::move(pending_.front());
  pending_.erase(pending_.begin());
  return json::parse(text);
}

std::optional<json> ProtocolClient::receive_type(const std::string& type, std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  while (Clock::now() < deadline) {
    auto m = receive(std::chrono::ceil<std::chrono::milliseconds>(deadline - Clock::now()));
    if (!m) return std::nullopt;
    if (m->value("type", "") == type) return m;
  }
  return std::nullopt;
}

}  // namespace vonctl
