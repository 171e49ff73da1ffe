#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sgfuse/frontend.h"
#include "sgfuse/json_io.h"
#include "sgfuse/loop_closure.h"

namespace sgfuse {

// Opens a stream; carries the backend configuration so a recording replays
// without the scenario file.
struct SessionHeader {
  Json config;
};

// Asks the backend to run one iteration on the frontend state at this point.
struct BackendTick {
  std::uint64_t index = 0;
};

using Event = std::variant<SessionHeader, GraphUpdate, LoopClosure, BackendTick>;

Json event_to_json(const Event& event);
Event event_from_json(const Json& value, const std::string& path);
std::string encode_event(const Event& event);
Event decode_event(std::string_view text, const std::string& what);

inline constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

// 4-byte big-endian length followed by the payload.
std::string encode_frame(std::string_view payload);

/// Incremental decoder for length-prefixed frames.
class FrameDecoder {
 public:
  void feed(const char* data, std::size_t size);
  std::optional<std::string> next();
  // True when no partial frame is buffered.
  bool idle() const { return buffer_.size() == offset_; }

 private:
  std::string buffer_;
  std::size_t offset_ = 0;
};

// Newline-delimited canonical JSON, one event per line.
void write_ndjson(std::ostream& out, const std::vector<Event>& events);
std::vector<Event> read_ndjson(std::istream& in, const std::string& what);
void write_frames(std::ostream& out, const std::vector<Event>& events);
std::vector<Event> read_frames(std::istream& in, const std::string& what);

struct InputSource {
  enum class Kind { File, Tcp } kind = Kind::File;
  std::string path;
  std::string host;
  std::uint16_t port = 0;
};

// "file:path", "tcp://host:port", or a bare path (treated as a file).
InputSource parse_input_source(std::string_view uri);

/// Accepts a single TCP connection and reads length-prefixed frames until the
/// peer closes it.
class TcpFrameListener {
 public:
  TcpFrameListener(const std::string& host, std::uint16_t port);
  ~TcpFrameListener();
  TcpFrameListener(const TcpFrameListener&) = delete;
  TcpFrameListener& operator=(const TcpFrameListener&) = delete;

  // Bound port (useful when constructed with port 0).
  std::uint16_t port() const { return port_; }
  std::vector<Event> receive_all();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

void send_frames_tcp(const std::string& host, std::uint16_t port,
                     const std::vector<Event>& events);

}  // namespace sgfuse
