// Scripted operator over the wire: connects to an in-process server running
// the fast mission without its built-in commands, flies the course with
// increments, then waits for the scheduled landing.
#include <cstdio>
#include <thread>

#include "imav/telemetry/server.hpp"

using namespace imav;
using namespace imav::telemetry;
using namespace std::chrono_literals;

int main(int argc, char** argv) {
  const double factor = argc > 1 ? std::atof(argv[1]) : 8.0;
  ExperimentConfig cfg = preset("mission15s");
  cfg.mission.commands.clear();

  ServerConfig sc;
  sc.real_time_factor = factor;
  TelemetryServer server(cfg, sc);
  server.start();
  std::printf("server on 127.0.0.1:%u at %gx\n", server.port(), factor);

  TelemetryClient op("127.0.0.1", server.port());
  op.send(hello_json("demo-operator", Role::Controller));
  const auto welcome = op.receive(3000ms);
  if (!welcome || string_field(*welcome, "type") != "welcome") {
    std::fprintf(stderr, "handshake failed\n");
    return 1;
  }
  std::printf("welcome: %s\n", welcome->dump().c_str());
  op.send(control_json(CommandType::Start, 1));

  // One +5 cm step every 0.5 s of sim time, with a sideways dodge early on.
  std::thread pump([&] {
    const auto period = std::chrono::duration<double>(0.5 / factor);
    std::this_thread::sleep_for(period * 3);
    std::uint64_t seq = 2;
    for (int i = 0; i < 22; ++i) {
      op.send(increment_json(seq++, {0.05, 0.0, 0.0}));
      if (i == 3) op.send(increment_json(seq++, {0.0, 0.05, 0.0}));
      std::this_thread::sleep_for(period);
    }
  });

  std::size_t acks = 0, states = 0;
  while (!server.status().finished) {
    auto m = op.receive(200ms);
    if (!m) continue;
    const std::string type = string_field(*m, "type");
    if (type == "ack") {
      ++acks;
    } else if (type == "state") {
      ++states;
    } else if (type == "event") {
      std::printf("t=%6.2f event %s\n", m->at("t").get<double>(),
                  m->at("payload").dump().c_str());
    }
  }
  pump.join();
  const auto st = server.status();
  std::printf("%zu acks, %zu state frames, %zu releases\n", acks, states, st.released_commands);
  const auto log = server.finished_log();
  if (!log) return 1;
  const auto metrics = compute_metrics(*log, cfg);
  std::printf("%s\n", metrics.to_json().dump(2).c_str());
  return metrics.touchdown_error_cm && *metrics.touchdown_error_cm <= 2.0 ? 0 : 1;
}
