#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace paralign {

// splitmix64 finalizer; used to derive independent child seeds so every draw is
// a function of (run seed, stream tag, indices) rather than of call order.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = mix64(base);
  for (auto t : tags) s = mix64(s ^ mix64(t + 0x632be59bd9b4e019ULL));
  return s;
}

// Stream tags for derive_seed. Kept in one place so two subsystems never share
// a stream by accident.
enum class Stream : std::uint64_t {
  Layout = 1,
  Candidates,
  Split,
  Init,
  Pretrain,
  SftData,
  SftTrain,
  PrefSample,
  PrefJudge,
  RewardTrain,
  GrpoPrompts,
  GrpoSample,
  GrpoJudge,
  Bench,
  FdCheck,
  Retention,
  PrefQueries,
  SftReplay,
  Ablate,
};

inline std::uint64_t derive_seed(std::uint64_t base, Stream stream, std::initializer_list<std::uint64_t> idx = {}) {
  std::uint64_t s = derive_seed(base, {static_cast<std::uint64_t>(stream)});
  for (auto t : idx) s = mix64(s ^ mix64(t + 0x2545f4914f6cdd1dULL));
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }

  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace paralign
