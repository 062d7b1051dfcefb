#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "vve/errors.hpp"

namespace vve {

/// One stored transition.  Grids are kept as occupied-cell index lists
/// (they are sparse binary), everything else as plain values.
struct Transition {
  std::vector<std::uint16_t> grid;
  std::vector<double> feats;
  int action = 0;
  double reward = 0.0;
  std::vector<std::uint16_t> next_grid;
  std::vector<double> next_feats;
  bool terminal = false;
};

/// Fixed-capacity ring buffer with uniform without-replacement sampling.
class ReplayBuffer {
public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw InvalidInputError("replay capacity must be > 0");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  const Transition& operator[](std::size_t i) const { return data_[i]; }

  /// Uniformly sample `k` distinct indices (Floyd's algorithm, O(k)).
  std::vector<std::size_t> sample_indices(std::size_t k,
                                          std::mt19937_64& rng) const {
    if (k > data_.size())
      throw InvalidInputError("sample larger than buffer contents");
    std::vector<std::size_t> out;
    out.reserve(k);
    const std::size_t n = data_.size();
    for (std::size_t j = n - k; j < n; ++j) {
      std::uniform_int_distribution<std::size_t> dist(0, j);
      const std::size_t t = dist(rng);
      bool seen = false;
      for (std::size_t v : out)
        if (v == t) { seen = true; break; }
      out.push_back(seen ? j : t);
    }
    return out;
  }

private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

} // namespace vve
