#pragma once

// Wire protocol of the telemetry bridge. Every message is one frame: a 4-byte
// big-endian payload length followed by that many bytes of UTF-8 JSON.
// docs/protocol.md is the field-level reference.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "imav/math.hpp"
#include "imav/mission.hpp"

namespace imav::telemetry {

using Json = nlohmann::json;

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 1u << 20;

inline std::string encode_frame(std::string_view body) {
  if (body.size() > kMaxFrameBytes) throw std::length_error("frame exceeds the maximum size");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(4 + body.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(body);
  return out;
}

inline std::string encode_frame(const Json& j) {
  const std::string body = j.dump();
  return encode_frame(std::string_view(body));
}

/// Incremental frame splitter for a byte stream. A length above
/// kMaxFrameBytes poisons the decoder: the stream cannot be resynchronized.
class FrameDecoder {
 public:
  void feed(const char* data, std::size_t n) { buf_.append(data, n); }
  void feed(std::string_view s) { buf_.append(s); }

  std::optional<std::string> next() {
    if (failed_ || buf_.size() - pos_ < 4) return std::nullopt;
    const auto* p = reinterpret_cast<const unsigned char*>(buf_.data() + pos_);
    const std::uint32_t n = (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
                            (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
    if (n > kMaxFrameBytes) {
      failed_ = true;
      return std::nullopt;
    }
    if (buf_.size() - pos_ - 4 < n) return std::nullopt;
    std::string body = buf_.substr(pos_ + 4, n);
    pos_ += 4 + n;
    if (pos_ > 4096 && pos_ * 2 > buf_.size()) {
      buf_.erase(0, pos_);
      pos_ = 0;
    }
    return body;
  }

  bool failed() const { return failed_; }
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::string buf_;
  std::size_t pos_{0};
  bool failed_{false};
};

/// j[key] when it is a string, otherwise the fallback.
inline std::string string_field(const Json& j, const char* key, const std::string& fallback = {}) {
  if (j.is_object() && j.contains(key) && j.at(key).is_string()) return j.at(key).get<std::string>();
  return fallback;
}

// ---------------------------------------------------------------------------
// Handshake

enum class Role { Controller, Observer };

inline const char* to_string(Role r) { return r == Role::Controller ? "controller" : "observer"; }

struct Hello {
  std::string client_id;
  Role requested{Role::Observer};
  int protocol{kProtocolVersion};
};

/// Parses a hello; the error string is empty on success.
inline std::optional<Hello> parse_hello(const Json& j, std::string& error) {
  if (string_field(j, "type") != "hello") {
    error = "expected hello";
    return std::nullopt;
  }
  Hello h;
  if (!j.contains("protocol") || !j.at("protocol").is_number_integer()) {
    error = "hello: missing protocol";
    return std::nullopt;
  }
  h.protocol = j.at("protocol").get<int>();
  h.client_id = string_field(j, "client_id");
  if (h.client_id.empty()) {
    error = "hello: missing client_id";
    return std::nullopt;
  }
  const std::string role = string_field(j, "role", "observer");
  if (role == "controller") {
    h.requested = Role::Controller;
  } else if (role == "observer") {
    h.requested = Role::Observer;
  } else {
    error = "hello: unknown role '" + role + "'";
    return std::nullopt;
  }
  return h;
}

inline Json hello_json(const std::string& client_id, Role role, int protocol = kProtocolVersion) {
  return {{"type", "hello"}, {"client_id", client_id}, {"role", to_string(role)},
          {"protocol", protocol}};
}

struct Welcome {
  std::string config_hash;
  std::string software_version;
  double decimation_hz{30.0};
  double base_rate{480.0};
  Role role{Role::Observer};
  std::string session;
};

inline Json welcome_json(const Welcome& w) {
  return {{"type", "welcome"},
          {"protocol", kProtocolVersion},
          {"config_hash", w.config_hash},
          {"software_version", w.software_version},
          {"decimation_hz", w.decimation_hz},
          {"base_rate", w.base_rate},
          {"role", to_string(w.role)},
          {"session", w.session}};
}

inline Json refused_json(const std::string& reason) {
  return {{"type", "refused"}, {"protocol", kProtocolVersion}, {"reason", reason}};
}

// ---------------------------------------------------------------------------
// Server -> client messages

enum class MessageType { State, Event, Ack };

inline const char* to_string(MessageType t) {
  switch (t) {
    case MessageType::State: return "state";
    case MessageType::Event: return "event";
    case MessageType::Ack: return "ack";
  }
  return "?";
}

/// One telemetry message. seq is stamped per connection when the message is
/// offered to that connection, so a dropped frame leaves a visible gap.
struct OutboundMessage {
  MessageType type{MessageType::State};
  double t{0.0};
  Json payload = Json::object();
  std::uint64_t seq{0};
};

inline Json message_json(const OutboundMessage& m) {
  return {{"type", to_string(m.type)}, {"seq", m.seq}, {"t", m.t}, {"payload", m.payload}};
}

enum class AckStatus { Applied, Clamped, Duplicate, Rejected, Error, Dropped };

inline const char* to_string(AckStatus s) {
  switch (s) {
    case AckStatus::Applied: return "applied";
    case AckStatus::Clamped: return "clamped";
    case AckStatus::Duplicate: return "duplicate";
    case AckStatus::Rejected: return "rejected";
    case AckStatus::Error: return "error";
    case AckStatus::Dropped: return "dropped";
  }
  return "?";
}

struct Ack {
  std::string client_id;
  std::optional<std::uint64_t> client_seq;
  AckStatus status{AckStatus::Applied};
  std::string command;           // command type, empty for unparseable input
  std::string message;
  std::size_t coalesced{0};      // client commands merged into the release
  std::optional<std::uint64_t> tick;
  std::optional<Vec3<double>> applied;
  double applied_yaw{0.0};
};

inline Ack make_ack(AckStatus status, std::optional<std::uint64_t> client_seq,
                    std::string command, std::string message = {}) {
  Ack a;
  a.status = status;
  a.client_seq = client_seq;
  a.command = std::move(command);
  a.message = std::move(message);
  return a;
}

inline OutboundMessage ack_message(const Ack& a, double t) {
  OutboundMessage m;
  m.type = MessageType::Ack;
  m.t = t;
  Json p = {{"client_id", a.client_id}, {"status", to_string(a.status)}, {"command", a.command}};
  p["client_seq"] = a.client_seq ? Json(*a.client_seq) : Json(nullptr);
  if (!a.message.empty()) p["message"] = a.message;
  if (a.coalesced) p["coalesced"] = a.coalesced;
  if (a.tick) p["tick"] = *a.tick;
  if (a.applied) {
    p["applied"] = {{"dx", a.applied->x}, {"dy", a.applied->y}, {"dz", a.applied->z},
                    {"dyaw", a.applied_yaw}};
  }
  m.payload = std::move(p);
  return m;
}

inline OutboundMessage event_message(const std::string& name, double t, Json details = {}) {
  OutboundMessage m;
  m.type = MessageType::Event;
  m.t = t;
  m.payload = details.is_object() ? std::move(details) : Json::object();
  m.payload["event"] = name;
  return m;
}

// ---------------------------------------------------------------------------
// Client -> server commands

enum class CommandType { Increment, Mode, Start, Stop, Reset };

inline const char* to_string(CommandType t) {
  switch (t) {
    case CommandType::Increment: return "increment";
    case CommandType::Mode: return "mode";
    case CommandType::Start: return "start";
    case CommandType::Stop: return "stop";
    case CommandType::Reset: return "reset";
  }
  return "?";
}

struct CommandMessage {
  CommandType type{CommandType::Increment};
  std::string client_id;
  std::uint64_t client_seq{0};
  Vec3<double> delta{};
  double yaw_delta{0.0};
  std::optional<AltitudeMode> mode;
};

struct CommandParse {
  std::optional<CommandMessage> command;
  std::string error;
  std::optional<std::uint64_t> client_seq;  // when recoverable from bad input
};

/// Structural validation: type, sequence number, finite axis values.
inline CommandParse parse_command(const Json& j) {
  CommandParse out;
  if (!j.is_object()) {
    out.error = "command must be a JSON object";
    return out;
  }
  if (j.contains("seq") && j.at("seq").is_number_integer() &&
      (j.at("seq").is_number_unsigned() || j.at("seq").get<std::int64_t>() >= 0)) {
    out.client_seq = j.at("seq").get<std::uint64_t>();
  }
  const std::string type = string_field(j, "type");
  CommandMessage c;
  if (type == "increment") c.type = CommandType::Increment;
  else if (type == "mode") c.type = CommandType::Mode;
  else if (type == "start") c.type = CommandType::Start;
  else if (type == "stop") c.type = CommandType::Stop;
  else if (type == "reset") c.type = CommandType::Reset;
  else {
    out.error = type.empty() ? "command has no type" : "unknown command type '" + type + "'";
    return out;
  }
  if (!out.client_seq) {
    out.error = "command needs a nonnegative integer seq";
    return out;
  }
  c.client_seq = *out.client_seq;
  if (j.contains("client_id")) {
    if (!j.at("client_id").is_string()) {
      out.error = "client_id must be a string";
      return out;
    }
    c.client_id = j.at("client_id").get<std::string>();
  }
  if (c.type == CommandType::Increment) {
    double* axes[] = {&c.delta.x, &c.delta.y, &c.delta.z, &c.yaw_delta};
    const char* names[] = {"dx", "dy", "dz", "dyaw"};
    for (int i = 0; i < 4; ++i) {
      if (!j.contains(names[i])) continue;
      const Json& v = j.at(names[i]);
      if (!v.is_number()) {
        out.error = std::string(names[i]) + " must be a number";
        return out;
      }
      *axes[i] = v.get<double>();
      if (!std::isfinite(*axes[i])) {
        out.error = std::string(names[i]) + " must be finite";
        return out;
      }
    }
  }
  if (c.type == CommandType::Mode) {
    const std::string m = string_field(j, "mode");
    if (m == "absolute") c.mode = AltitudeMode::Absolute;
    else if (m == "terrain") c.mode = AltitudeMode::TerrainRelative;
    else {
      out.error = "mode must be 'absolute' or 'terrain'";
      return out;
    }
  }
  out.command = c;
  return out;
}

inline Json increment_json(std::uint64_t seq, Vec3<double> d, double dyaw = 0.0) {
  return {{"type", "increment"}, {"seq", seq}, {"dx", d.x}, {"dy", d.y}, {"dz", d.z},
          {"dyaw", dyaw}};
}

inline Json control_json(CommandType t, std::uint64_t seq) {
  return {{"type", to_string(t)}, {"seq", seq}};
}

inline Json mode_json(std::uint64_t seq, AltitudeMode m) {
  return {{"type", "mode"}, {"seq", seq},
          {"mode", m == AltitudeMode::Absolute ? "absolute" : "terrain"}};
}

struct ValidatedIncrement {
  HighLevelCommand command;
  bool clamped{false};
};

/// Limit check before queueing: each axis is clamped to the per-command step.
inline ValidatedIncrement validate_increment(const CommandMessage& c, const CommandLimits& lim) {
  ValidatedIncrement v;
  auto cap = [&](double x, double m) {
    if (std::abs(x) > m) {
      v.clamped = true;
      return std::copysign(m, x);
    }
    return x;
  };
  v.command.delta = {cap(c.delta.x, lim.max_step), cap(c.delta.y, lim.max_step),
                     cap(c.delta.z, lim.max_step)};
  v.command.yaw_delta = cap(c.yaw_delta, lim.max_yaw_step);
  v.command.mode = c.mode;
  v.command.source = CommandSource::Operator;
  return v;
}

}  // namespace imav::telemetry
