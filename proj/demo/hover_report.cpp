// Runs a preset (hover5 by default) and prints its metrics and thresholds.
#include <cstdio>
#include <string>

#include "imav/simulation.hpp"

int main(int argc, char** argv) {
  const std::string name = argc > 1 ? argv[1] : "hover5";
  try {
    const imav::ExperimentConfig cfg = imav::load_config(name);
    const auto res = imav::run_experiment(cfg);
    std::printf("%s  seed %llu  config %s  log %s\n", cfg.name.c_str(),
                static_cast<unsigned long long>(cfg.seed), imav::config_hash(cfg).c_str(),
                res.log.hash().c_str());
    std::printf("%s\n", res.metrics.to_json().dump(2).c_str());
    bool ok = !res.abort;
    for (const auto& t : imav::check_thresholds(res.metrics, cfg.thresholds)) {
      std::printf("%s %s = %g\n", t.pass ? "ok  " : "FAIL", t.metric.c_str(),
                  t.value ? *t.value : std::nan(""));
      ok = ok && t.pass;
    }
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
