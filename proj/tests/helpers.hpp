#pragma once

#include <cmath>
#include <vector>

#include "paralign/paralign.hpp"

namespace testing_util {

using namespace paralign;

inline const WorldSpec& world() {
  static const WorldSpec w = default_world();
  return w;
}

// Small random-weight policy over the default world's vocabularies.
inline PolicyParams small_policy(std::uint64_t seed, double head_scale = 0.3, std::size_t d = 8) {
  const auto& w = world();
  ArchSpec a{w.audio_vocab(), w.text_vocab(), d, static_cast<std::size_t>(w.L_in() + w.L_max), 12, 1};
  auto P = init_params(a, seed);
  Rng rng(seed + 1000);
  for (Tensor* t : P.tensors())
    for (auto& x : t->data) x += rng.normal(0.0, head_scale);
  return P;
}

inline std::vector<RenderedQuery> some_queries(std::size_t n_candidates = 64, std::uint64_t seed = 3) {
  return render_all(run_filters(generate_candidates(world(), n_candidates, seed), world()), world());
}

inline Episode oracle_episode(const RenderedQuery& q) {
  return pack_episode(q.streams, render_oracle(oracle_response(q.content, q.style, world()), world()));
}

}  // namespace testing_util
