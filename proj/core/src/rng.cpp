#include "semafo/rng.hpp"

#include <cmath>

namespace semafo {

namespace {

inline uint64_t mix64(uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t CounterRng::next_u64() {
  uint64_t v = mix64(mix64(seed_ ^ 0x853c49e6748fea9bull) ^ mix64(stream_) ^ counter_);
  ++counter_;
  return v;
}

double CounterRng::uniform() {
  // 53-bit mantissa, offset by half an ulp so the result lies in (0,1).
  return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

double CounterRng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

double CounterRng::gumbel() { return -std::log(-std::log(uniform())); }

}  // namespace semafo
