#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <random>
#include <utility>

#include "vve/errors.hpp"

namespace vve {

/// Seeded one-way link impairment: constant base delay, uniform jitter,
/// independent drops.  One instance per link direction; identical seeds
/// reproduce identical delay/drop sequences.
class LatencyModel {
public:
  LatencyModel(double base_ms, double jitter_ms, double drop_prob,
               std::uint64_t seed)
      : base_(base_ms), jitter_(jitter_ms), drop_(drop_prob), rng_(seed) {
    if (!(base_ms >= 0.0))
      throw InvalidInputError("latency base delay must be >= 0");
    if (!(jitter_ms >= 0.0))
      throw InvalidInputError("latency jitter must be >= 0");
    if (!(drop_prob >= 0.0 && drop_prob < 1.0))
      throw InvalidInputError("drop probability must be in [0, 1)");
  }

  bool pass_through() const {
    return base_ == 0.0 && jitter_ == 0.0 && drop_ == 0.0;
  }

  /// Delay for the next message in ms, or nothing if it is dropped.
  std::optional<double> sample() {
    if (drop_ > 0.0) {
      std::uniform_real_distribution<double> coin(0.0, 1.0);
      if (coin(rng_) < drop_) return std::nullopt;
    }
    double d = base_;
    if (jitter_ > 0.0) {
      std::uniform_real_distribution<double> u(-jitter_, jitter_);
      d += u(rng_);
    }
    return d < 0.0 ? 0.0 : d;
  }

private:
  double base_, jitter_, drop_;
  std::mt19937_64 rng_;
};

/// In-transit queue for one link direction.  Release times are clamped
/// monotone so messages leave in the order they entered, matching the
/// in-order-release invariant of the latency model.  Time is an abstract
/// millisecond axis: virtual in tests and replay, wall-clock in live runs.
template <typename T>
class DelayQueue {
public:
  /// Returns true if the item entered the queue, false if it was dropped.
  bool push(T item, double now_ms, LatencyModel& model) {
    const auto delay = model.sample();
    if (!delay) {
      ++dropped_;
      return false;
    }
    double release = now_ms + *delay;
    if (!q_.empty() && release < q_.back().first) release = q_.back().first;
    q_.emplace_back(release, std::move(item));
    return true;
  }

  /// Oldest item whose release time has passed, if any.
  std::optional<T> pop_due(double now_ms) {
    if (q_.empty() || q_.front().first > now_ms) return std::nullopt;
    T item = std::move(q_.front().second);
    q_.pop_front();
    return item;
  }

  /// Release time of the next pending item (infinity when empty).
  double next_release() const {
    return q_.empty() ? std::numeric_limits<double>::infinity()
                      : q_.front().first;
  }

  std::size_t pending() const { return q_.size(); }
  std::uint64_t dropped() const { return dropped_; }

private:
  std::deque<std::pair<double, T>> q_;
  std::uint64_t dropped_ = 0;
};

} // namespace vve
