#pragma once

// Live session server: runs one Simulation on its own thread, optionally
// paced to the wall clock, streams decimated state to every connected client
// and feeds the controlling client's commands into the mission layer.
// POSIX sockets only.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "imav/simulation.hpp"
#include "imav/telemetry/channels.hpp"
#include "imav/telemetry/pacing.hpp"
#include "imav/telemetry/protocol.hpp"

namespace imav::telemetry {

namespace net {

inline bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

enum class ReadResult { Data, Timeout, Closed };

inline ReadResult read_some(int fd, FrameDecoder& dec, int timeout_ms) {
  pollfd p{fd, POLLIN, 0};
  const int r = ::poll(&p, 1, timeout_ms);
  if (r == 0) return ReadResult::Timeout;
  if (r < 0) return errno == EINTR ? ReadResult::Timeout : ReadResult::Closed;
  char buf[4096];
  const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
  if (n < 0 && (errno == EINTR || errno == EAGAIN)) return ReadResult::Timeout;
  if (n <= 0) return ReadResult::Closed;
  dec.feed(buf, static_cast<std::size_t>(n));
  return ReadResult::Data;
}

inline int connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    throw std::runtime_error("cannot resolve " + host);
  }
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    throw std::runtime_error("socket() failed");
  }
  const int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0) {
    ::close(fd);
    throw std::runtime_error("cannot connect to " + host + ":" + std::to_string(port));
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return fd;
}

}  // namespace net

/// Blocking client used by tests, the demo and scripted sessions.
class TelemetryClient {
 public:
  TelemetryClient(const std::string& host, std::uint16_t port) : fd_(net::connect_tcp(host, port)) {}
  ~TelemetryClient() { close(); }
  TelemetryClient(const TelemetryClient&) = delete;
  TelemetryClient& operator=(const TelemetryClient&) = delete;

  bool send(const Json& j) { return fd_ >= 0 && net::send_all(fd_, encode_frame(j)); }
  bool send_raw(std::string_view bytes) { return fd_ >= 0 && net::send_all(fd_, bytes); }

  /// Next message, or nullopt on timeout or a closed connection.
  std::optional<Json> receive(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
      if (auto body = dec_.next()) return Json::parse(*body, nullptr, false);
      if (fd_ < 0 || dec_.failed()) return std::nullopt;
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      if (net::read_some(fd_, dec_, static_cast<int>(left.count())) == net::ReadResult::Closed) {
        closed_ = true;
        if (auto body = dec_.next()) return Json::parse(*body, nullptr, false);
        return std::nullopt;
      }
    }
  }

  /// Receives until `pred` accepts a message or the timeout expires.
  template <typename Pred>
  std::optional<Json> receive_until(Pred pred, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      auto m = receive(std::max(left, std::chrono::milliseconds(1)));
      if (m && pred(*m)) return m;
      if (!m && closed_) return std::nullopt;
    }
    return std::nullopt;
  }

  bool closed() const { return closed_; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_{-1};
  FrameDecoder dec_;
  bool closed_{false};
};

struct ServerConfig {
  std::string host{"127.0.0.1"};
  std::uint16_t port{0};                        // 0 picks a free port
  double decimation_hz{30.0};
  std::optional<double> real_time_factor{1.0};  // nullopt runs unpaced
  std::size_t command_capacity{256};
  std::size_t subscriber_capacity{64};
  bool autostart{false};
  std::string record_path;  // command script written on stop, reset and run end
  std::string log_stem;     // flight log written at run end
};

struct ServerStatus {
  std::uint64_t tick{0};
  double t{0.0};
  bool running{false};
  bool finished{false};
  bool landing_started{false};
  bool touchdown{false};
  std::size_t connections{0};
  bool controller_connected{false};
  MissionSetpoint setpoint{};
  Vec3<double> truth_position{};
  std::size_t released_commands{0};
};

class TelemetryServer {
 public:
  TelemetryServer(ExperimentConfig cfg, ServerConfig sc)
      : cfg_(std::move(cfg)), sc_(std::move(sc)), commands_(sc_.command_capacity) {
    cfg_.validate();
    if (!(sc_.decimation_hz > 0.0)) throw std::invalid_argument("decimation rate must be positive");
    if (sc_.real_time_factor) pacer_.emplace(*sc_.real_time_factor, cfg_.rates.base);
    decimation_ticks_ = std::max<std::uint64_t>(
        1, static_cast<std::uint64_t>(std::llround(cfg_.rates.base / sc_.decimation_hz)));
    runner_ = std::make_unique<ExperimentRunner>(cfg_);
    running_ = sc_.autostart;
  }

  ~TelemetryServer() { stop(); }
  TelemetryServer(const TelemetryServer&) = delete;
  TelemetryServer& operator=(const TelemetryServer&) = delete;

  void start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::runtime_error("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(sc_.port);
    if (::inet_pton(AF_INET, sc_.host.c_str(), &addr.sin_addr) != 1) {
      throw std::invalid_argument("listen host must be an IPv4 address: " + sc_.host);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        ::listen(listen_fd_, 16) != 0) {
      const std::string err = std::strerror(errno);
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw std::runtime_error("cannot listen on " + sc_.host + ":" + std::to_string(sc_.port) +
                               ": " + err);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    if (running_ && pacer_) pacer_->anchor(0);
    sim_thread_ = std::thread([this] { sim_loop(); });
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (shutdown_.exchange(true)) return;
    if (accept_thread_.joinable()) accept_thread_.join();
    if (sim_thread_.joinable()) sim_thread_.join();
    std::vector<std::shared_ptr<Connection>> conns;
    {
      std::lock_guard lock(reg_mu_);
      for (auto& [id, c] : conns_) conns.push_back(c);
    }
    for (auto& c : conns) {
      ::shutdown(c->fd, SHUT_RDWR);
      c->sub->close();
    }
    for (auto& c : conns) {
      if (c->reader.joinable()) c->reader.join();
      ::close(c->fd);
    }
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
  }

  std::uint16_t port() const { return port_; }
  const ExperimentConfig& config() const { return cfg_; }
  std::uint64_t decimation_ticks() const { return decimation_ticks_; }

  ServerStatus status() const {
    std::lock_guard lock(status_mu_);
    return status_;
  }

  /// Released commands of the current run (the persisted script).
  std::vector<HighLevelCommand> command_record() const {
    std::lock_guard lock(status_mu_);
    return record_;
  }

  /// Flight log of the last finished run.
  std::optional<FlightLog> finished_log() const {
    std::lock_guard lock(status_mu_);
    return finished_log_;
  }

  bool wait_finished(std::chrono::milliseconds timeout) const {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
      if (status().finished) return true;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return status().finished;
  }

 private:
  struct Connection {
    int id{0};
    int fd{-1};
    std::string client_id;
    Role role{Role::Observer};
    std::shared_ptr<Subscriber> sub;
    std::thread reader;
    std::atomic<bool> done{false};
  };

  struct Inbound {
    enum class Kind { Command, Connected, Disconnected } kind{Kind::Command};
    CommandMessage cmd;
    ValidatedIncrement inc;
    std::string client_id;
    Role role{Role::Observer};
    std::shared_ptr<Subscriber> reply;
  };

  struct PendingAck {
    std::string client_id;
    std::uint64_t client_seq{0};
    std::string command;
    bool clamped{false};
  };

  // -- network side -------------------------------------------------------

  void accept_loop() {
    int next_id = 1;
    while (!shutdown_) {
      reap();
      pollfd p{listen_fd_, POLLIN, 0};
      if (::poll(&p, 1, 50) <= 0) continue;
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      auto c = std::make_shared<Connection>();
      c->id = next_id++;
      c->fd = fd;
      c->sub = std::make_shared<Subscriber>(sc_.subscriber_capacity);
      {
        std::lock_guard lock(reg_mu_);
        conns_[c->id] = c;
      }
      c->reader = std::thread([this, c] { session(c); });
    }
  }

  void reap() {
    std::vector<std::shared_ptr<Connection>> finished;
    {
      std::lock_guard lock(reg_mu_);
      for (auto it = conns_.begin(); it != conns_.end();) {
        if (it->second->done) {
          finished.push_back(it->second);
          it = conns_.erase(it);
        } else {
          ++it;
        }
      }
    }
    for (auto& c : finished) {
      if (c->reader.joinable()) c->reader.join();
      ::close(c->fd);
    }
  }

  void session(const std::shared_ptr<Connection>& c) {
    FrameDecoder dec;
    bool welcomed = false;
    std::thread writer;
    while (!shutdown_) {
      std::optional<std::string> body;
      while (!(body = dec.next())) {
        if (dec.failed() || shutdown_) break;
        if (net::read_some(c->fd, dec, 50) == net::ReadResult::Closed) break;
        if (c->sub->closed()) break;
      }
      if (!body) break;
      const Json j = Json::parse(*body, nullptr, false);
      if (!welcomed) {
        std::string err;
        if (j.is_discarded()) err = "malformed JSON";
        const auto hello = err.empty() ? parse_hello(j, err) : std::nullopt;
        if (!hello) {
          net::send_all(c->fd, encode_frame(refused_json(err)));
          continue;
        }
        if (hello->protocol != kProtocolVersion) {
          net::send_all(c->fd, encode_frame(refused_json(
                                   "protocol mismatch: server speaks " +
                                   std::to_string(kProtocolVersion) + ", client " +
                                   std::to_string(hello->protocol))));
          break;
        }
        c->client_id = hello->client_id;
        {
          std::lock_guard lock(reg_mu_);
          if (hello->requested == Role::Controller && !controller_) {
            controller_ = c->id;
            c->role = Role::Controller;
          }
        }
        Welcome w{config_hash(cfg_), kSoftwareVersion, sc_.decimation_hz, cfg_.rates.base, c->role,
                  config_hash(cfg_) + "-" + std::to_string(c->id)};
        if (!net::send_all(c->fd, encode_frame(welcome_json(w)))) break;
        welcomed = true;
        channel_.attach(c->sub);
        writer = std::thread([this, c] { write_loop(c); });
        Inbound in;
        in.kind = Inbound::Kind::Connected;
        in.client_id = c->client_id;
        in.role = c->role;
        push_control(std::move(in));
        continue;
      }
      handle_client_message(c, j);
    }

    if (welcomed) {
      bool was_controller = false;
      {
        std::lock_guard lock(reg_mu_);
        if (controller_ == c->id) {
          controller_.reset();
          was_controller = true;
        }
      }
      Inbound in;
      in.kind = Inbound::Kind::Disconnected;
      in.client_id = c->client_id;
      in.role = was_controller ? Role::Controller : Role::Observer;
      push_control(std::move(in));
    }
    channel_.unsubscribe(c->sub);
    ::shutdown(c->fd, SHUT_RDWR);
    if (writer.joinable()) writer.join();
    c->done = true;
  }

  void handle_client_message(const std::shared_ptr<Connection>& c, const Json& j) {
    auto reply = [&](Ack a) {
      a.client_id = c->client_id;
      c->sub->offer(ack_message(a, current_time()));
    };
    if (j.is_discarded()) {
      reply(make_ack(AckStatus::Error, std::nullopt, "", "malformed JSON"));
      return;
    }
    const CommandParse p = parse_command(j);
    if (!p.command) {
      reply(make_ack(AckStatus::Error, p.client_seq, string_field(j, "type"), p.error));
      return;
    }
    CommandMessage cmd = *p.command;
    const std::string type = to_string(cmd.type);
    if (!cmd.client_id.empty() && cmd.client_id != c->client_id) {
      reply(make_ack(AckStatus::Error, cmd.client_seq, type, "client_id does not match the session"));
      return;
    }
    cmd.client_id = c->client_id;
    if (c->role != Role::Controller) {
      reply(make_ack(AckStatus::Rejected, cmd.client_seq, type, "observer sessions cannot command"));
      return;
    }
    {
      std::lock_guard lock(reg_mu_);
      if (!seen_[cmd.client_id].insert(cmd.client_seq).second) {
        reply(make_ack(AckStatus::Duplicate, cmd.client_seq, type, "sequence number already seen"));
        return;
      }
    }
    Inbound in;
    in.kind = Inbound::Kind::Command;
    in.cmd = cmd;
    in.client_id = c->client_id;
    in.role = c->role;
    in.reply = c->sub;
    if (cmd.type == CommandType::Increment || cmd.type == CommandType::Mode) {
      in.inc = validate_increment(cmd, cfg_.mission.limits);
    }
    if (!commands_.try_push(std::move(in))) {
      reply(make_ack(AckStatus::Dropped, cmd.client_seq, type, "command queue full"));
    }
  }

  void push_control(Inbound in) {
    while (!commands_.try_push(in)) {
      if (shutdown_) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }

  void write_loop(const std::shared_ptr<Connection>& c) {
    while (true) {
      auto m = c->sub->pop(std::chrono::milliseconds(50));
      if (!m) {
        if (c->sub->closed()) return;
        continue;
      }
      if (!net::send_all(c->fd, encode_frame(message_json(*m)))) {
        c->sub->close();
        ::shutdown(c->fd, SHUT_RDWR);
        return;
      }
    }
  }

  double current_time() const {
    std::lock_guard lock(status_mu_);
    return status_.t;
  }

  // -- simulation side ----------------------------------------------------

  std::uint64_t sim_tick() const {
    return runner_->visit([](const auto& s) { return std::uint64_t(s.tick()); });
  }
  double sim_time() const {
    return runner_->visit([](const auto& s) { return s.time(); });
  }

  void sim_loop() {
    using namespace std::chrono;
    while (!shutdown_) {
      handle_inbound();
      if (!running_ || runner_->done()) {
        if (runner_->done() && !finished_) finish();
        publish_status();
        std::this_thread::sleep_for(milliseconds(2));
        continue;
      }
      if (pacer_) {
        const std::uint64_t tick = sim_tick();
        const auto now = steady_clock::now();
        if (tick >= pacer_->allowed(now)) {
          std::this_thread::sleep_until(std::min(pacer_->due_at(tick + 1), now + milliseconds(5)));
          continue;
        }
      }
      step_once();
    }
    persist_record();
  }

  void handle_inbound() {
    for (auto& in : commands_.drain()) {
      const double t = sim_time();
      switch (in.kind) {
        case Inbound::Kind::Connected:
          channel_.publish(event_message("client_connected", t,
                                         {{"client_id", in.client_id}, {"role", to_string(in.role)}}));
          break;
        case Inbound::Kind::Disconnected:
          channel_.publish(event_message("client_disconnected", t,
                                         {{"client_id", in.client_id}, {"role", to_string(in.role)}}));
          if (in.role == Role::Controller) {
            channel_.publish(event_message("controller_released", t, {{"hold", "last setpoint"}}));
          }
          break;
        case Inbound::Kind::Command:
          handle_command(in, t);
          break;
      }
    }
  }

  void ack_now(const Inbound& in, AckStatus st, const std::string& msg, double t) {
    Ack a;
    a.client_id = in.client_id;
    a.client_seq = in.cmd.client_seq;
    a.status = st;
    a.command = to_string(in.cmd.type);
    a.message = msg;
    a.tick = sim_tick();
    channel_.publish(ack_message(a, t));
  }

  void handle_command(const Inbound& in, double t) {
    switch (in.cmd.type) {
      case CommandType::Increment:
      case CommandType::Mode: {
        if (!cfg_.mission.enabled) {
          ack_now(in, AckStatus::Rejected, "configuration has no mission layer", t);
          return;
        }
        if (landing_started() || runner_->done()) {
          ack_now(in, AckStatus::Rejected,
                  runner_->done() ? "run finished" : "landing in progress", t);
          return;
        }
        runner_->submit_command(in.inc.command);
        pending_.push_back({in.client_id, in.cmd.client_seq, to_string(in.cmd.type), in.inc.clamped});
        return;
      }
      case CommandType::Start:
        if (!running_) {
          running_ = true;
          if (pacer_) pacer_->anchor(sim_tick());
          channel_.publish(event_message("started", t));
        }
        ack_now(in, AckStatus::Applied, "", t);
        return;
      case CommandType::Stop:
        if (running_) {
          running_ = false;
          persist_record();
          channel_.publish(event_message("stopped", t));
        }
        ack_now(in, AckStatus::Applied, "", t);
        return;
      case CommandType::Reset:
        persist_record();
        for (const auto& p : pending_) {
          Ack a;
          a.client_id = p.client_id;
          a.client_seq = p.client_seq;
          a.status = AckStatus::Rejected;
          a.command = p.command;
          a.message = "discarded by reset";
          channel_.publish(ack_message(a, t));
        }
        pending_.clear();
        runner_ = std::make_unique<ExperimentRunner>(cfg_);
        running_ = false;
        finished_ = false;
        events_seen_ = 0;
        was_landing_ = was_touchdown_ = false;
        {
          std::lock_guard lock(status_mu_);
          record_.clear();
          finished_log_.reset();
          status_.finished = false;
        }
        ack_now(in, AckStatus::Applied, "", 0.0);
        channel_.publish(event_message("reset", 0.0));
        publish_status();
        return;
    }
  }

  bool landing_started() const {
    return runner_->visit([](const auto& s) { return s.outcome().landing_started; });
  }

  void step_once() {
    const std::uint64_t tick = sim_tick();
    runner_->step();
    runner_->visit([&](auto& s) {
      const auto& events = s.command_events();
      const double t = static_cast<double>(tick) / s.config().rates.base;
      if (events.size() > events_seen_) {
        const CommandEvent& ev = events.back();
        for (const auto& p : pending_) {
          Ack a;
          a.client_id = p.client_id;
          a.client_seq = p.client_seq;
          a.command = p.command;
          a.status = (p.clamped || ev.status == CommandStatus::Clamped) ? AckStatus::Clamped
                                                                        : AckStatus::Applied;
          a.coalesced = ev.coalesced;
          a.tick = tick;
          a.applied = ev.applied.delta;
          a.applied_yaw = ev.applied.yaw_delta;
          channel_.publish(ack_message(a, ev.t));
        }
        pending_.clear();
        events_seen_ = events.size();
        std::lock_guard lock(status_mu_);
        record_ = s.command_record();
      }
      const auto& out = s.outcome();
      if (out.landing_started && !was_landing_) {
        was_landing_ = true;
        channel_.publish(event_message("landing_started", out.landing_start_t,
                                       {{"target", {out.target_x, out.target_y}}}));
        for (const auto& p : pending_) {
          Ack a;
          a.client_id = p.client_id;
          a.client_seq = p.client_seq;
          a.command = p.command;
          a.status = AckStatus::Rejected;
          a.message = "landing in progress";
          channel_.publish(ack_message(a, t));
        }
        pending_.clear();
      }
      if (out.touchdown_t && !was_touchdown_) {
        was_touchdown_ = true;
        channel_.publish(event_message(
            "touchdown", *out.touchdown_t,
            {{"position", vec_json(out.touchdown)},
             {"error_m", std::hypot(out.touchdown.x - out.target_x, out.touchdown.y - out.target_y)}}));
      }
      if (s.aborted()) {
        channel_.publish(event_message("aborted", s.aborted()->t, {{"reason", s.aborted()->reason}}));
      }
      if (tick % decimation_ticks_ == 0) channel_.publish(state_message(s, tick, t));
    });
    publish_status();
  }

  template <typename Sim>
  static OutboundMessage state_message(const Sim& s, std::uint64_t tick, double t) {
    const VehicleState& tr = s.truth();
    const auto& e = s.estimate();
    const MissionSetpoint& sp = s.setpoint();
    const double terrain_h = s.terrain().height(tr.position.x, tr.position.y);
    OutboundMessage m;
    m.type = MessageType::State;
    m.t = t;
    m.payload = {
        {"tick", tick},
        {"truth",
         {{"position", vec_json(tr.position)},
          {"velocity", vec_json(tr.velocity)},
          {"attitude", {tr.orientation.w, tr.orientation.x, tr.orientation.y, tr.orientation.z}},
          {"height", tr.position.z - terrain_h},
          {"terrain_height", terrain_h}}},
        {"estimate",
         {{"position", {double(e.lateral.x_hat), double(e.lateral.y_hat), double(e.altitude.z_hat)}},
          {"velocity", {double(e.lateral.vx_hat), double(e.lateral.vy_hat), double(e.altitude.vz_hat)}},
          {"attitude",
           {double(e.attitude.q_hat.w), double(e.attitude.q_hat.x), double(e.attitude.q_hat.y),
            double(e.attitude.q_hat.z)}}}},
        {"setpoint",
         {{"position", vec_json(sp.position)},
          {"yaw", sp.yaw},
          {"mode", sp.mode == AltitudeMode::Absolute ? "absolute" : "terrain"}}},
        {"landed", tr.landed},
        {"fault", s.controller_state().fault},
        {"landing", {{"started", s.outcome().landing_started}, {"complete", s.landing_complete()}}}};
    return m;
  }

  void publish_status() {
    runner_->visit([&](const auto& s) {
      std::lock_guard lock(status_mu_);
      status_.tick = s.tick();
      status_.t = s.time();
      status_.running = running_;
      status_.finished = finished_;
      status_.landing_started = s.outcome().landing_started;
      status_.touchdown = s.outcome().touchdown_t.has_value();
      status_.setpoint = s.setpoint();
      status_.truth_position = s.truth().position;
      status_.released_commands = s.command_events().size();
    });
    std::lock_guard rlock(reg_mu_);
    std::lock_guard slock(status_mu_);
    status_.connections = conns_.size();
    status_.controller_connected = controller_.has_value();
  }

  void finish() {
    finished_ = true;
    running_ = false;
    ExperimentResult r = runner_->result();
    persist_record();
    if (!sc_.log_stem.empty()) r.log.save(sc_.log_stem);
    Json details = {{"metrics", r.metrics.to_json()}, {"log_hash", r.log.hash()}};
    {
      std::lock_guard lock(status_mu_);
      finished_log_ = std::move(r.log);
    }
    channel_.publish(event_message("run_finished", sim_time(), details));
  }

  void persist_record() {
    if (sc_.record_path.empty()) return;
    const auto rec = runner_->visit([](const auto& s) { return s.command_record(); });
    std::ofstream out(sc_.record_path);
    if (out) write_command_script(out, rec);
  }

  ExperimentConfig cfg_;
  ServerConfig sc_;
  std::optional<TickPacer> pacer_;
  std::uint64_t decimation_ticks_{16};
  std::unique_ptr<ExperimentRunner> runner_;

  BoundedQueue<Inbound> commands_;
  BroadcastChannel channel_;

  // Simulation-thread state.
  bool running_{false};
  bool finished_{false};
  std::size_t events_seen_{0};
  bool was_landing_{false}, was_touchdown_{false};
  std::vector<PendingAck> pending_;

  mutable std::mutex status_mu_;
  ServerStatus status_{};
  std::vector<HighLevelCommand> record_;
  std::optional<FlightLog> finished_log_;

  mutable std::mutex reg_mu_;
  std::map<int, std::shared_ptr<Connection>> conns_;
  std::optional<int> controller_;
  std::map<std::string, std::set<std::uint64_t>> seen_;

  int listen_fd_{-1};
  std::uint16_t port_{0};
  std::atomic<bool> shutdown_{false};
  std::thread sim_thread_, accept_thread_;
};

}  // namespace imav::telemetry
