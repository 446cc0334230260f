#pragma once

// The two structures shared between the simulation thread and the network
// sessions: a bounded command queue and a broadcast telemetry channel.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "imav/telemetry/protocol.hpp"

namespace imav::telemetry {

/// Multi-producer, single-consumer queue with a hard capacity. Producers never
/// block: a full queue refuses the item.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  bool try_push(T v) {
    std::lock_guard lock(mu_);
    if (items_.size() >= capacity_) return false;
    items_.push_back(std::move(v));
    return true;
  }

  std::optional<T> try_pop() {
    std::lock_guard lock(mu_);
    if (items_.empty()) return std::nullopt;
    T v = std::move(items_.front());
    items_.pop_front();
    return v;
  }

  std::vector<T> drain() {
    std::lock_guard lock(mu_);
    std::vector<T> out(std::make_move_iterator(items_.begin()),
                       std::make_move_iterator(items_.end()));
    items_.clear();
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }
  std::size_t capacity() const { return capacity_; }

 private:
  mutable std::mutex mu_;
  std::deque<T> items_;
  std::size_t capacity_;
};

/// One consumer's view of the broadcast. State frames are dropped when the
/// queue is full; acks and events evict the oldest queued state frame
/// instead, so they are only lost if the subscriber closes.
class Subscriber {
 public:
  explicit Subscriber(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1)) {}

  /// Stamps the next sequence number and enqueues. Never blocks on the consumer.
  void offer(OutboundMessage m) {
    {
      std::lock_guard lock(mu_);
      if (closed_) return;
      m.seq = ++seq_;
      if (items_.size() >= capacity_) {
        if (m.type == MessageType::State) {
          ++dropped_;
          return;
        }
        auto it = std::find_if(items_.begin(), items_.end(),
                               [](const auto& x) { return x.type == MessageType::State; });
        if (it != items_.end()) {
          items_.erase(it);
          ++dropped_;
        }
      }
      items_.push_back(std::move(m));
    }
    cv_.notify_one();
  }

  std::optional<OutboundMessage> pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    OutboundMessage m = std::move(items_.front());
    items_.pop_front();
    return m;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }
  std::uint64_t dropped() const {
    std::lock_guard lock(mu_);
    return dropped_;
  }
  std::uint64_t last_seq() const {
    std::lock_guard lock(mu_);
    return seq_;
  }
  std::size_t queued() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<OutboundMessage> items_;
  std::size_t capacity_;
  std::uint64_t seq_{0};
  std::uint64_t dropped_{0};
  bool closed_{false};
};

/// Single producer, many consumers.
class BroadcastChannel {
 public:
  std::shared_ptr<Subscriber> subscribe(std::size_t capacity) {
    auto s = std::make_shared<Subscriber>(capacity);
    attach(s);
    return s;
  }

  void attach(std::shared_ptr<Subscriber> s) {
    std::lock_guard lock(mu_);
    subs_.push_back(std::move(s));
  }

  void unsubscribe(const std::shared_ptr<Subscriber>& s) {
    s->close();
    std::lock_guard lock(mu_);
    subs_.erase(std::remove(subs_.begin(), subs_.end(), s), subs_.end());
  }

  void publish(const OutboundMessage& m) {
    std::lock_guard lock(mu_);
    for (auto& s : subs_) s->offer(m);
  }

  std::size_t subscribers() const {
    std::lock_guard lock(mu_);
    return subs_.size();
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::shared_ptr<Subscriber>> subs_;
};

}  // namespace imav::telemetry
