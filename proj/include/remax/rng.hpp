#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace remax {

// Seeded random source. All draws go through the engine only (distributions
// are constructed per call), so the full stream state is the engine state and
// can be round-tripped through save_state()/load_state().
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Independent child stream; advances this stream by one draw.
  Rng split() { return Rng(engine_()); }

  std::mt19937_64& engine() { return engine_; }

  std::string save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
  }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace remax
