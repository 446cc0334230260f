#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace imav::telemetry {

/// Releases simulation ticks against the wall clock at base_rate * factor
/// ticks per second. Ticks are counted from an anchor, so late wakeups are
/// caught up rather than accumulated as drift.
class TickPacer {
 public:
  using Clock = std::chrono::steady_clock;

  explicit TickPacer(double factor, double base_rate = 480.0)
      : factor_(factor), base_rate_(base_rate) {
    if (!(factor > 0.0) || !std::isfinite(factor)) {
      throw std::invalid_argument("real-time factor must be positive");
    }
    if (!(base_rate > 0.0)) throw std::invalid_argument("base rate must be positive");
    anchor(0);
  }

  /// Restarts the clock so that `tick` is due now (after a pause, say).
  void anchor(std::uint64_t tick, Clock::time_point now = Clock::now()) {
    epoch_ = now;
    tick0_ = tick;
  }

  /// Number of ticks (counted from zero) that may have executed by `now`.
  std::uint64_t allowed(Clock::time_point now = Clock::now()) const {
    const double s = std::chrono::duration<double>(now - epoch_).count();
    if (s <= 0.0) return tick0_;
    return tick0_ + static_cast<std::uint64_t>(std::floor(s * rate()));
  }

  /// Wall-clock instant at which tick index `tick` becomes due.
  Clock::time_point due_at(std::uint64_t tick) const {
    const double s =
        static_cast<double>(static_cast<std::int64_t>(tick) - static_cast<std::int64_t>(tick0_)) /
        rate();
    return epoch_ + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(s));
  }

  double factor() const { return factor_; }
  double rate() const { return factor_ * base_rate_; }

 private:
  double factor_;
  double base_rate_;
  Clock::time_point epoch_{};
  std::uint64_t tick0_{0};
};

}  // namespace imav::telemetry
