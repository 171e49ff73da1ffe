#include "sgfuse/wire.h"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>
#include <stdexcept>

namespace sgfuse {

namespace {

std::string errno_text(const std::string& what) { return what + ": " + std::strerror(errno); }

class Socket {
 public:
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() {
    if (fd_ >= 0) {
      ::close(fd_);
    }
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  int get() const { return fd_; }

 private:
  int fd_;
};

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = passive ? AI_PASSIVE : 0;
  addrinfo* result = nullptr;
  const std::string service = std::to_string(port);
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints,
                               &result);
  if (rc != 0) {
    throw std::runtime_error("cannot resolve " + host + ":" + service + ": " +
                             ::gai_strerror(rc));
  }
  return result;
}

void write_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) {
        continue;
      }
      throw std::runtime_error(errno_text("send failed"));
    }
    sent += static_cast<std::size_t>(n);
  }
}

}  // namespace

Json event_to_json(const Event& event) {
  return std::visit(
      [](const auto& e) -> Json {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, SessionHeader>) {
          return Json{{"type", "session"}, {"config", e.config}};
        } else if constexpr (std::is_same_v<T, GraphUpdate>) {
          Json j = graph_update_to_json(e);
          j["type"] = "graph_update";
          return j;
        } else if constexpr (std::is_same_v<T, LoopClosure>) {
          Json j = loop_closure_to_json(e);
          j["type"] = "loop_closure";
          return j;
        } else {
          return Json{{"type", "backend_iteration"}, {"index", e.index}};
        }
      },
      event);
}

Event event_from_json(const Json& value, const std::string& path) {
  const std::string type = get_string(require(value, "type", path), path + ".type");
  if (type == "session") {
    return SessionHeader{require(value, "config", path)};
  }
  if (type == "graph_update") {
    return graph_update_from_json(value, path);
  }
  if (type == "loop_closure") {
    return loop_closure_from_json(value, path);
  }
  if (type == "backend_iteration") {
    return BackendTick{get_uint(require(value, "index", path), path + ".index")};
  }
  throw ParseError(path + ".type: unknown event type '" + type + "'");
}

std::string encode_event(const Event& event) { return canonical_dump(event_to_json(event)); }

Event decode_event(std::string_view text, const std::string& what) {
  return event_from_json(parse_json(text, what), "$");
}

std::string encode_frame(std::string_view payload) {
  if (payload.size() > kMaxFrameBytes) {
    throw std::invalid_argument("frame payload too large");
  }
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(payload.size() + 4);
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(payload);
  return out;
}

void FrameDecoder::feed(const char* data, std::size_t size) {
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.append(data, size);
}

std::optional<std::string> FrameDecoder::next() {
  if (buffer_.size() - offset_ < 4) {
    return std::nullopt;
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data() + offset_);
  const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                          (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
  if (n > kMaxFrameBytes) {
    throw ParseError("frame length " + std::to_string(n) + " exceeds limit");
  }
  if (buffer_.size() - offset_ - 4 < n) {
    return std::nullopt;
  }
  std::string payload = buffer_.substr(offset_ + 4, n);
  offset_ += 4 + n;
  return payload;
}

void write_ndjson(std::ostream& out, const std::vector<Event>& events) {
  for (const Event& e : events) {
    out << encode_event(e) << '\n';
  }
}

std::vector<Event> read_ndjson(std::istream& in, const std::string& what) {
  std::vector<Event> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    const std::string where = what + ":" + std::to_string(line_no);
    events.push_back(event_from_json(parse_json(line, where), where + ": $"));
  }
  return events;
}

void write_frames(std::ostream& out, const std::vector<Event>& events) {
  for (const Event& e : events) {
    out << encode_frame(encode_event(e));
  }
}

std::vector<Event> read_frames(std::istream& in, const std::string& what) {
  FrameDecoder decoder;
  std::vector<Event> events;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    decoder.feed(buf, static_cast<std::size_t>(in.gcount()));
    while (auto frame = decoder.next()) {
      const std::string where = what + " frame " + std::to_string(events.size());
      events.push_back(decode_event(*frame, where));
    }
  }
  if (!decoder.idle()) {
    throw ParseError(what + ": truncated frame at end of input");
  }
  return events;
}

InputSource parse_input_source(std::string_view uri) {
  InputSource src;
  constexpr std::string_view kTcp = "tcp://";
  constexpr std::string_view kFile = "file:";
  if (uri.substr(0, kTcp.size()) == kTcp) {
    const std::string_view rest = uri.substr(kTcp.size());
    const auto colon = rest.rfind(':');
    if (colon == std::string_view::npos) {
      throw std::invalid_argument("tcp input needs host:port, got '" + std::string(uri) + "'");
    }
    unsigned port = 0;
    const std::string_view port_text = rest.substr(colon + 1);
    const auto [ptr, ec] =
        std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc() || ptr != port_text.data() + port_text.size() || port > 65535) {
      throw std::invalid_argument("invalid port in '" + std::string(uri) + "'");
    }
    src.kind = InputSource::Kind::Tcp;
    src.host = std::string(rest.substr(0, colon));
    src.port = static_cast<std::uint16_t>(port);
    return src;
  }
  src.kind = InputSource::Kind::File;
  src.path = std::string(uri.substr(0, kFile.size()) == kFile ? uri.substr(kFile.size()) : uri);
  if (src.path.empty()) {
    throw std::invalid_argument("empty input path");
  }
  return src;
}

TcpFrameListener::TcpFrameListener(const std::string& host, std::uint16_t port) {
  addrinfo* info = resolve(host, port, true);
  fd_ = ::socket(info->ai_family, info->ai_socktype, info->ai_protocol);
  if (fd_ < 0) {
    ::freeaddrinfo(info);
    throw std::runtime_error(errno_text("socket failed"));
  }
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const int rc = ::bind(fd_, info->ai_addr, info->ai_addrlen);
  ::freeaddrinfo(info);
  if (rc != 0 || ::listen(fd_, 1) != 0) {
    const std::string msg = errno_text("cannot listen on " + host + ":" + std::to_string(port));
    ::close(fd_);
    throw std::runtime_error(msg);
  }
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpFrameListener::~TcpFrameListener() {
  if (fd_ >= 0) {
    ::close(fd_);
  }
}

std::vector<Event> TcpFrameListener::receive_all() {
  int conn_fd;
  do {
    conn_fd = ::accept(fd_, nullptr, nullptr);
  } while (conn_fd < 0 && errno == EINTR);
  if (conn_fd < 0) {
    throw std::runtime_error(errno_text("accept failed"));
  }
  const Socket conn(conn_fd);
  FrameDecoder decoder;
  std::vector<Event> events;
  char buf[1 << 16];
  for (;;) {
    const ssize_t n = ::recv(conn.get(), buf, sizeof(buf), 0);
    if (n < 0) {
      if (errno == EINTR) {
        continue;
      }
      throw std::runtime_error(errno_text("recv failed"));
    }
    if (n == 0) {
      break;
    }
    decoder.feed(buf, static_cast<std::size_t>(n));
    while (auto frame = decoder.next()) {
      events.push_back(decode_event(*frame, "tcp frame " + std::to_string(events.size())));
    }
  }
  if (!decoder.idle()) {
    throw ParseError("tcp stream ended inside a frame");
  }
  return events;
}

void send_frames_tcp(const std::string& host, std::uint16_t port,
                     const std::vector<Event>& events) {
  addrinfo* info = resolve(host, port, false);
  const Socket sock(::socket(info->ai_family, info->ai_socktype, info->ai_protocol));
  if (sock.get() < 0) {
    ::freeaddrinfo(info);
    throw std::runtime_error(errno_text("socket failed"));
  }
  const int rc = ::connect(sock.get(), info->ai_addr, info->ai_addrlen);
  ::freeaddrinfo(info);
  if (rc != 0) {
    throw std::runtime_error(errno_text("cannot connect to " + host + ":" + std::to_string(port)));
  }
  for (const Event& e : events) {
    write_all(sock.get(), encode_frame(encode_event(e)));
  }
}

}  // namespace sgfuse
