#include "dpn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dpn/error.hpp"

namespace dpn {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(1, fan_in + fan_out)));
  std::uniform_real_distribution<double> u(-a, a);
  for (double& v : t.data()) v = u(rng);
}

std::uint64_t stream_seed(std::uint64_t seed, std::string_view name) { return splitmix64(seed ^ fnv1a64(name)); }

std::mt19937_64& RngStreams::get(std::string_view name) {
  auto it = streams_.find(name);
  if (it == streams_.end()) {
    it = streams_.emplace(std::string(name), std::mt19937_64(stream_seed(seed_, name))).first;
  }
  return it->second;
}

std::map<std::string, std::string> RngStreams::save() const {
  std::map<std::string, std::string> out;
  for (const auto& [name, eng] : streams_) {
    std::ostringstream os;
    os << eng;
    out[name] = os.str();
  }
  return out;
}

void RngStreams::restore(const std::map<std::string, std::string>& states) {
  for (const auto& [name, text] : states) {
    std::istringstream is(text);
    std::mt19937_64 eng;
    is >> eng;
    if (is.fail()) throw CheckpointError("rng: cannot restore stream '" + name + "'");
    streams_[name] = eng;
  }
}

}  // namespace dpn
