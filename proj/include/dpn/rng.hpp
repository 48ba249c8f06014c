#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>

#include "dpn/tensor.hpp"

namespace dpn {

/// FNV-1a, 64-bit.
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

/// Seed of the stream `name` derived from the run seed.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view name);

/// Independent named generators ("init", "shuffle", "negatives", ...) split
/// from one run seed, created on first use.
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t seed = 0) : seed_(seed) {}

  std::mt19937_64& get(std::string_view name);
  std::uint64_t seed() const { return seed_; }

  /// Textual engine states keyed by stream name.
  std::map<std::string, std::string> save() const;
  void restore(const std::map<std::string, std::string>& states);

 private:
  std::uint64_t seed_;
  std::map<std::string, std::mt19937_64, std::less<>> streams_;
};

}  // namespace dpn
