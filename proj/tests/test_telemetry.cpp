#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "imav/telemetry/server.hpp"

using namespace imav;
using namespace imav::telemetry;
using namespace std::chrono_literals;

namespace {

ExperimentConfig live_hover(double duration) {
  ExperimentConfig c = preset("hover5");
  c.name = "live-hover";
  c.mission.enabled = true;
  c.duration = c.trajectory.duration = duration;
  return c;
}

ServerConfig paced(double factor, bool autostart = true) {
  ServerConfig sc;
  sc.real_time_factor = factor;
  sc.autostart = autostart;
  return sc;
}

bool is_type(const Json& m, const char* type) { return string_field(m, "type") == type; }

bool is_event(const Json& m, const char* name) {
  return is_type(m, "event") && string_field(m.at("payload"), "event") == name;
}

std::optional<Json> ack_for(TelemetryClient& c, std::uint64_t seq,
                            std::chrono::milliseconds timeout = 3000ms) {
  return c.receive_until(
      [&](const Json& m) {
        return is_type(m, "ack") && m.at("payload").at("client_seq") == Json(seq);
      },
      timeout);
}

Json handshake(TelemetryClient& c, const std::string& id, Role role) {
  c.send(hello_json(id, role));
  auto w = c.receive(3000ms);
  return w ? *w : Json();
}

}  // namespace

// --- framing and message parsing -------------------------------------------

TEST(Framing, BigEndianLengthPrefix) {
  const std::string f = encode_frame(std::string_view("abc"));
  ASSERT_EQ(f.size(), 7u);
  EXPECT_EQ(f.substr(0, 4), std::string("\0\0\0\3", 4));
  const std::string big(300, 'x');
  const std::string g = encode_frame(std::string_view(big));
  EXPECT_EQ(static_cast<unsigned char>(g[2]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(g[3]), 44u);
}

TEST(Framing, DecoderReassemblesArbitraryChunks) {
  std::string stream;
  std::vector<std::string> bodies;
  for (int i = 0; i < 50; ++i) {
    bodies.push_back(Json{{"i", i}, {"pad", std::string(i * 13, 'p')}}.dump());
    stream += encode_frame(std::string_view(bodies.back()));
  }
  for (std::size_t chunk : {1u, 3u, 7u, 4096u}) {
    FrameDecoder dec;
    std::vector<std::string> got;
    for (std::size_t p = 0; p < stream.size(); p += chunk) {
      dec.feed(std::string_view(stream).substr(p, chunk));
      while (auto b = dec.next()) got.push_back(*b);
    }
    EXPECT_EQ(got, bodies) << "chunk " << chunk;
    EXPECT_EQ(dec.buffered(), 0u);
  }
}

TEST(Framing, OversizeLengthPoisonsTheStream) {
  FrameDecoder dec;
  dec.feed(std::string("\x00\x20\x00\x01", 4));  // 2 MiB + 1
  EXPECT_FALSE(dec.next());
  EXPECT_TRUE(dec.failed());
  EXPECT_THROW(encode_frame(std::string_view(std::string(kMaxFrameBytes + 1, 'x'))),
               std::length_error);
}

TEST(Messages, HelloValidation) {
  std::string err;
  EXPECT_TRUE(parse_hello(hello_json("a", Role::Controller), err));
  EXPECT_FALSE(parse_hello(Json{{"type", "hello"}, {"protocol", 1}}, err));
  EXPECT_FALSE(parse_hello(Json{{"type", "hello"}, {"protocol", "1"}, {"client_id", "a"}}, err));
  EXPECT_FALSE(parse_hello(
      Json{{"type", "hello"}, {"protocol", 1}, {"client_id", "a"}, {"role", "pilot"}}, err));
  const auto h = parse_hello(hello_json("b", Role::Observer, 7), err);
  ASSERT_TRUE(h);
  EXPECT_EQ(h->protocol, 7);
  EXPECT_EQ(h->requested, Role::Observer);
}

TEST(Messages, CommandParsing) {
  auto p = parse_command(increment_json(4, {0.01, 0.0, -0.02}, 0.1));
  ASSERT_TRUE(p.command);
  EXPECT_EQ(p.command->client_seq, 4u);
  EXPECT_EQ(p.command->delta.z, -0.02);

  p = parse_command(Json{{"type", "increment"}, {"seq", 2}, {"dx", "far"}});
  EXPECT_FALSE(p.command);
  EXPECT_EQ(p.client_seq, 2u);
  EXPECT_FALSE(parse_command(Json{{"type", "increment"}, {"dx", 0.01}}).command);
  EXPECT_FALSE(parse_command(Json{{"type", "increment"}, {"seq", -1}}).command);
  EXPECT_FALSE(parse_command(Json{{"type", "warp"}, {"seq", 1}}).command);
  EXPECT_FALSE(parse_command(Json::array({1, 2})).command);
  EXPECT_FALSE(parse_command(Json{{"type", "mode"}, {"seq", 1}, {"mode", "up"}}).command);
  EXPECT_EQ(parse_command(mode_json(3, AltitudeMode::Absolute)).command->mode,
            AltitudeMode::Absolute);
  EXPECT_EQ(parse_command(control_json(CommandType::Reset, 9)).command->type, CommandType::Reset);
}

TEST(Messages, IncrementsAreClampedBeforeQueueing) {
  CommandMessage c;
  c.delta = {0.2, -0.01, -0.3};
  c.yaw_delta = 1.0;
  const auto v = validate_increment(c, CommandLimits{});
  EXPECT_TRUE(v.clamped);
  EXPECT_EQ(v.command.delta, (Vec3<double>{0.05, -0.01, -0.05}));
  EXPECT_EQ(v.command.yaw_delta, 0.3);
  EXPECT_EQ(v.command.source, CommandSource::Operator);
}

// --- queues and channels ---------------------------------------------------

TEST(Queue, BoundedMultiProducer) {
  BoundedQueue<int> q(3);
  EXPECT_TRUE(q.try_push(1));
  EXPECT_TRUE(q.try_push(2));
  EXPECT_TRUE(q.try_push(3));
  EXPECT_FALSE(q.try_push(4));
  EXPECT_EQ(q.drain(), (std::vector<int>{1, 2, 3}));

  BoundedQueue<int> big(1 << 16);
  std::vector<std::thread> producers;
  for (int p = 0; p < 4; ++p) {
    producers.emplace_back([&, p] {
      for (int i = 0; i < 5000; ++i) ASSERT_TRUE(big.try_push(p * 5000 + i));
    });
  }
  std::vector<int> got;
  while (got.size() < 20000) {
    for (int v : big.drain()) got.push_back(v);
  }
  for (auto& t : producers) t.join();
  std::sort(got.begin(), got.end());
  for (int i = 0; i < 20000; ++i) ASSERT_EQ(got[i], i);
}

TEST(Subscriber, FullQueueDropsStateAndLeavesASequenceGap) {
  Subscriber s(4);
  for (int i = 0; i < 6; ++i) s.offer(OutboundMessage{MessageType::State, i * 0.1, Json::object(), 0});
  EXPECT_EQ(s.dropped(), 2u);
  EXPECT_EQ(s.queued(), 4u);
  std::vector<std::uint64_t> seqs;
  while (auto m = s.pop(0ms)) seqs.push_back(m->seq);
  EXPECT_EQ(seqs, (std::vector<std::uint64_t>{1, 2, 3, 4}));
  s.offer(OutboundMessage{});
  EXPECT_EQ(s.pop(0ms)->seq, 7u);
}

TEST(Subscriber, AcksEvictTheOldestStateFrame) {
  Subscriber s(2);
  s.offer(OutboundMessage{MessageType::State, 0.0, Json::object(), 0});
  s.offer(OutboundMessage{MessageType::State, 0.1, Json::object(), 0});
  s.offer(ack_message(make_ack(AckStatus::Applied, 1, "increment"), 0.2));
  EXPECT_EQ(s.queued(), 2u);
  EXPECT_EQ(s.pop(0ms)->t, 0.1);
  EXPECT_EQ(s.pop(0ms)->type, MessageType::Ack);
}

TEST(Broadcast, SlowSubscriberNeverBlocksThePublisher) {
  BroadcastChannel ch;
  auto idle = ch.subscribe(8);
  auto fast = ch.subscribe(100000);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 50000; ++i) ch.publish(OutboundMessage{MessageType::State, i / 480.0, {}, 0});
  EXPECT_LT(std::chrono::steady_clock::now() - t0, 2s);
  EXPECT_EQ(idle->queued(), 8u);
  EXPECT_EQ(idle->dropped(), 50000u - 8u);
  EXPECT_EQ(fast->queued(), 50000u);
  ch.unsubscribe(idle);
  EXPECT_TRUE(idle->closed());
  EXPECT_EQ(ch.subscribers(), 1u);
}

// --- pacing ----------------------------------------------------------------

TEST(Pacing, RejectsNonPositiveFactors) {
  EXPECT_THROW(TickPacer(0.0), std::invalid_argument);
  EXPECT_THROW(TickPacer(-1.0), std::invalid_argument);
  EXPECT_THROW(TickPacer(std::nan("")), std::invalid_argument);
  EXPECT_NO_THROW(TickPacer(0.25));
}

TEST(Pacing, AllowedTicksFollowTheWallClock) {
  using Clock = TickPacer::Clock;
  TickPacer p(2.0);
  const auto t0 = Clock::now();
  p.anchor(100, t0);
  EXPECT_EQ(p.allowed(t0), 100u);
  EXPECT_EQ(p.allowed(t0 + 1s), 100u + 960u);
  EXPECT_EQ(p.due_at(100 + 960), t0 + 1s);
  EXPECT_LT(p.due_at(50), t0);
}

TEST(Pacing, FactorOneRunsAt480TicksPerSecond) {
  TickPacer p(1.0);
  const auto t0 = std::chrono::steady_clock::now();
  p.anchor(0, t0);
  std::uint64_t ticks = 0;
  while (std::chrono::steady_clock::now() - t0 < 10s) {
    if (ticks < p.allowed()) {
      ++ticks;
    } else {
      std::this_thread::sleep_until(p.due_at(ticks + 1));
    }
  }
  EXPECT_NEAR(static_cast<double>(ticks), 4800.0, 5.0);
}

// --- live server -----------------------------------------------------------

TEST(Server, HandshakeAssignsOneController) {
  const ExperimentConfig cfg = live_hover(5.0);
  TelemetryServer server(cfg, paced(1.0, false));
  server.start();
  TelemetryClient a("127.0.0.1", server.port()), b("127.0.0.1", server.port());
  const Json wa = handshake(a, "alice", Role::Controller);
  ASSERT_TRUE(is_type(wa, "welcome")) << wa.dump();
  EXPECT_EQ(wa.at("role"), "controller");
  EXPECT_EQ(wa.at("protocol"), kProtocolVersion);
  EXPECT_EQ(wa.at("config_hash"), config_hash(cfg));
  EXPECT_EQ(wa.at("decimation_hz"), 30.0);
  const Json wb = handshake(b, "bob", Role::Controller);
  ASSERT_TRUE(is_type(wb, "welcome"));
  EXPECT_EQ(wb.at("role"), "observer");

  // Observers may not command.
  b.send(increment_json(1, {0.01, 0.0, 0.0}));
  const auto r = ack_for(b, 1);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->at("payload").at("status"), "rejected");
}

TEST(Server, RefusesAProtocolMismatch) {
  TelemetryServer server(live_hover(5.0), paced(1.0, false));
  server.start();
  TelemetryClient c("127.0.0.1", server.port());
  c.send(hello_json("old", Role::Controller, kProtocolVersion + 1));
  const auto r = c.receive(3000ms);
  ASSERT_TRUE(r);
  EXPECT_TRUE(is_type(*r, "refused"));
  EXPECT_NE(string_field(*r, "reason").find("protocol"), std::string::npos);
  EXPECT_FALSE(c.receive(2000ms));
  EXPECT_TRUE(c.closed());
}

TEST(Server, BadHelloCanBeRetried) {
  TelemetryServer server(live_hover(5.0), paced(1.0, false));
  server.start();
  TelemetryClient c("127.0.0.1", server.port());
  c.send(Json{{"type", "hello"}, {"protocol", 1}});
  const auto r = c.receive(3000ms);
  ASSERT_TRUE(r);
  EXPECT_TRUE(is_type(*r, "refused"));
  EXPECT_TRUE(is_type(handshake(c, "again", Role::Observer), "welcome"));
}

TEST(Server, MalformedMessagesGetErrorsAndTheSessionContinues) {
  TelemetryServer server(live_hover(5.0), paced(1.0, false));
  server.start();
  TelemetryClient c("127.0.0.1", server.port());
  ASSERT_TRUE(is_type(handshake(c, "ctl", Role::Controller), "welcome"));
  c.send_raw(encode_frame(std::string_view("{not json")));
  auto e = c.receive_until([](const Json& m) { return is_type(m, "ack"); }, 3000ms);
  ASSERT_TRUE(e);
  EXPECT_EQ(e->at("payload").at("status"), "error");
  EXPECT_TRUE(e->at("payload").at("client_seq").is_null());

  c.send(Json{{"type", "increment"}, {"seq", 5}, {"dx", nullptr}});
  e = ack_for(c, 5);
  ASSERT_TRUE(e);
  EXPECT_EQ(e->at("payload").at("status"), "error");

  c.send(control_json(CommandType::Start, 6));
  e = ack_for(c, 6);
  ASSERT_TRUE(e);
  EXPECT_EQ(e->at("payload").at("status"), "applied");
}

TEST(Server, ZeroIncrementIsAckedAndLeavesTheSetpoint) {
  TelemetryServer server(live_hover(5.0), paced(4.0));
  server.start();
  TelemetryClient c("127.0.0.1", server.port());
  ASSERT_TRUE(is_type(handshake(c, "ctl", Role::Controller), "welcome"));
  c.send(increment_json(1, {0.0, 0.0, 0.0}));
  const auto a = ack_for(c, 1);
  ASSERT_TRUE(a);
  EXPECT_EQ(a->at("payload").at("status"), "applied");
  EXPECT_EQ(a->at("payload").at("applied").at("dx"), 0.0);
  const auto s = c.receive_until([](const Json& m) { return is_type(m, "state"); }, 3000ms);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->at("payload").at("setpoint").at("position"), Json::array({0.0, 0.0, 0.05}));
}

TEST(Server, DuplicateSequenceNumbersAreFlagged) {
  TelemetryServer server(live_hover(5.0), paced(4.0));
  server.start();
  TelemetryClient c("127.0.0.1", server.port());
  ASSERT_TRUE(is_type(handshake(c, "ctl", Role::Controller), "welcome"));
  c.send(increment_json(3, {0.01, 0.0, 0.0}));
  c.send(increment_json(3, {0.01, 0.0, 0.0}));
  std::map<std::string, int> statuses;
  for (int i = 0; i < 2; ++i) {
    const auto a = ack_for(c, 3);
    ASSERT_TRUE(a);
    statuses[a->at("payload").at("status").get<std::string>()]++;
  }
  EXPECT_EQ(statuses["duplicate"], 1);
  EXPECT_EQ(statuses["applied"], 1);
}

TEST(Server, StateStreamIsDecimatedAndSequenced) {
  TelemetryServer server(live_hover(5.0), paced(1.0));
  server.start();
  TelemetryClient c("127.0.0.1", server.port());
  ASSERT_TRUE(is_type(handshake(c, "obs", Role::Observer), "welcome"));
  std::vector<Json> states;
  std::uint64_t last_seq = 0;
  const auto deadline = std::chrono::steady_clock::now() + 1500ms;
  while (std::chrono::steady_clock::now() < deadline) {
    auto m = c.receive(200ms);
    if (!m) continue;
    const auto seq = m->at("seq").get<std::uint64_t>();
    EXPECT_GT(seq, last_seq);
    last_seq = seq;
    if (is_type(*m, "state")) states.push_back(*m);
  }
  ASSERT_GE(states.size(), 30u);
  for (std::size_t i = 1; i < states.size(); ++i) {
    const auto dt = states[i].at("payload").at("tick").get<std::uint64_t>() -
                    states[i - 1].at("payload").at("tick").get<std::uint64_t>();
    EXPECT_EQ(dt, server.decimation_ticks());
  }
  EXPECT_EQ(server.decimation_ticks(), 16u);
  const Json& p = states.back().at("payload");
  for (const char* k : {"truth", "estimate", "setpoint", "landed", "landing"}) {
    EXPECT_TRUE(p.contains(k)) << k;
  }
}

TEST(Server, FastCommandsAreCoalescedAndEveryOneIsAcked) {
  const ExperimentConfig cfg = live_hover(6.0);
  TelemetryServer server(cfg, paced(2.0));
  server.start();
  TelemetryClient c("127.0.0.1", server.port());
  ASSERT_TRUE(is_type(handshake(c, "ctl", Role::Controller), "welcome"));
  const int n = 40;
  std::map<std::uint64_t, Json> acks;
  std::thread sender([&] {
    for (int i = 1; i <= n; ++i) {
      c.send(increment_json(i, {0.01, 0.0, 0.0}));
      std::this_thread::sleep_for(50ms);  // 10 Hz of simulated time at factor 2
    }
  });
  const auto deadline = std::chrono::steady_clock::now() + 10s;
  while (acks.size() < std::size_t(n) && std::chrono::steady_clock::now() < deadline) {
    auto m = c.receive(200ms);
    if (m && is_type(*m, "ack")) acks[m->at("payload").at("client_seq").get<std::uint64_t>()] = *m;
  }
  sender.join();
  ASSERT_EQ(acks.size(), std::size_t(n));

  std::map<std::uint64_t, std::pair<std::size_t, std::size_t>> by_tick;  // coalesced, acks seen
  double applied = 0.0;
  for (const auto& [seq, m] : acks) {
    const Json& p = m.at("payload");
    EXPECT_EQ(p.at("status"), "applied") << m.dump();
    const auto tick = p.at("tick").get<std::uint64_t>();
    auto& e = by_tick[tick];
    if (e.second == 0) applied += p.at("applied").at("dx").get<double>();
    e.first = p.at("coalesced").get<std::size_t>();
    e.second++;
  }
  std::optional<std::uint64_t> prev;
  for (const auto& [tick, e] : by_tick) {
    EXPECT_EQ(e.first, e.second);
    if (prev) {
      EXPECT_GE(tick - *prev, 240u);
    }
    prev = tick;
  }
  EXPECT_LE(by_tick.size(), std::size_t(n) / 4 + 2);
  EXPECT_NEAR(applied, 0.40, 1e-9);

  // The persisted record replays headlessly to the same log.
  ASSERT_TRUE(server.wait_finished(10s));
  const auto live_log = server.finished_log();
  ASSERT_TRUE(live_log);
  const auto path = std::filesystem::temp_directory_path() / "imav_server_record.csv";
  {
    std::ofstream out(path);
    write_command_script(out, server.command_record());
  }
  ExperimentConfig replay = cfg;
  replay.mission.command_file = path.string();
  const auto res = run_experiment(replay);
  std::filesystem::remove(path);
  EXPECT_TRUE(res.log.rows == live_log->rows);
  EXPECT_NEAR(live_log->rows.back().sp_x, 0.40, 1e-9);
}

TEST(Server, ControllerDisconnectHoldsTheLastSetpoint) {
  TelemetryServer server(live_hover(40.0), paced(40.0));
  server.start();
  TelemetryClient obs("127.0.0.1", server.port());
  ASSERT_TRUE(is_type(handshake(obs, "obs", Role::Observer), "welcome"));
  double released_at = 0.0;
  {
    TelemetryClient ctl("127.0.0.1", server.port());
    ASSERT_TRUE(is_type(handshake(ctl, "ctl", Role::Controller), "welcome"));
    ctl.send(increment_json(1, {0.02, 0.0, 0.0}));
    ASSERT_TRUE(ack_for(ctl, 1));
  }
  const auto ev = obs.receive_until([](const Json& m) { return is_event(m, "controller_released"); },
                                    3000ms);
  ASSERT_TRUE(ev);
  released_at = ev->at("t").get<double>();
  ASSERT_TRUE(server.wait_finished(10s));
  const auto st = server.status();
  EXPECT_GE(st.t - released_at, 30.0);
  EXPECT_FALSE(st.controller_connected);
  EXPECT_NEAR(st.setpoint.position.x, 0.02, 1e-12);
  EXPECT_NEAR(st.truth_position.x, 0.02, 0.05);
  EXPECT_NEAR(st.truth_position.z, 0.05, 0.01);
  // A new controller can take over.
  TelemetryClient next("127.0.0.1", server.port());
  EXPECT_EQ(handshake(next, "ctl2", Role::Controller).at("role"), "controller");
}

TEST(Server, SilentClientNeverStallsTheSimulation) {
  ServerConfig sc;
  sc.real_time_factor = std::nullopt;
  sc.autostart = true;
  sc.subscriber_capacity = 4;
  sc.decimation_hz = 480.0;
  TelemetryServer server(live_hover(20.0), sc);
  server.start();
  TelemetryClient mute("127.0.0.1", server.port());
  mute.send(hello_json("mute", Role::Observer));
  EXPECT_TRUE(server.wait_finished(20s));
  EXPECT_EQ(server.status().tick, 20u * 480u);
}
