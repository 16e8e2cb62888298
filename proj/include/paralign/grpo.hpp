#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "paralign/grpo_objective.hpp"
#include "paralign/judge.hpp"
#include "paralign/optim.hpp"
#include "paralign/policy.hpp"
#include "paralign/sft.hpp"
#include "paralign/synthworld.hpp"

namespace paralign {

enum class RewardSource { RewardModel, OracleJudge };

inline std::string reward_source_name(RewardSource r) {
  return r == RewardSource::RewardModel ? "reward_model" : "oracle_judge";
}

inline RewardSource parse_reward_source(const std::string& s) {
  if (s == "reward_model") return RewardSource::RewardModel;
  if (s == "oracle_judge") return RewardSource::OracleJudge;
  fail(ErrorKind::Config, "unknown reward_source '" + s + "'");
}

struct GrpoConfig {
  std::size_t B = 32;
  std::size_t G = 8;
  double clip_eps = 0.2;
  double kl_beta = 0.2;
  double temperature = 1.0;
  double lr = 1e-4;
  std::size_t iterations = 300;
  RewardSource reward_source = RewardSource::RewardModel;
  double sigma_floor = 1e-8;
  std::size_t inner_steps = 1;  // gradient steps per sampled batch
  std::size_t eval_every = 50;  // 0 disables periodic evaluation
  std::size_t workers = 1;

  void validate() const {
    require(B >= 1, ErrorKind::Config, "grpo.B must be at least 1");
    require(G >= 2, ErrorKind::Config, "grpo.G must be at least 2");
    require(clip_eps > 0.0 && clip_eps < 1.0, ErrorKind::Config, "grpo.clip_eps must lie in (0,1)");
    require(kl_beta >= 0.0, ErrorKind::Config, "grpo.kl_beta must be non-negative");
    require(temperature > 0.0, ErrorKind::Config, "grpo.temperature must be positive");
    require(lr > 0.0, ErrorKind::Config, "grpo.lr must be positive");
    require(sigma_floor > 0.0, ErrorKind::Config, "grpo.sigma_floor must be positive");
    require(inner_steps >= 1, ErrorKind::Config, "grpo.inner_steps must be at least 1");
  }
};

// Scalar reward for one sampled response; `seed` drives any judging noise.
using RewardFn = std::function<double(const RenderedQuery&, const StreamPair&, std::uint64_t)>;

inline RewardFn oracle_reward(const WorldSpec& spec) {
  return [&spec](const RenderedQuery& q, const StreamPair& r, std::uint64_t seed) {
    return static_cast<double>(judge_response(q, r, spec, seed).value());
  };
}

// One prompt's sampled group.
struct GroupSample {
  std::size_t prompt = 0;
  std::vector<StreamPair> responses;
  std::vector<std::vector<double>> logp_old;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

struct IterationMetrics {
  std::size_t iter = 0;
  double mean_reward = 0.0;
  std::map<std::string, double> reward_by_category;
  double kl_mean = 0.0;
  double clip_fraction = 0.0;
  std::optional<double> bench_score;
  std::optional<double> retention_score;
};

struct GrpoResult {
  PolicyParams params;
  std::vector<IterationMetrics> metrics;
  double seconds = 0.0;
};

// Periodic evaluation hooks; either may be empty.
struct GrpoEval {
  const std::vector<RenderedQuery>* bench_items = nullptr;
  const WorldSpec* spec = nullptr;
  std::uint64_t seed = 0;
};

inline double greedy_bench(const PolicyParams& P, const std::vector<RenderedQuery>& items, const WorldSpec& spec,
                           std::uint64_t seed) {
  const auto L = static_cast<std::size_t>(spec.L_max);
  return bench_eval([&](const RenderedQuery& q) { return greedy_response(P, q.streams, L); }, items, spec, seed).overall;
}

// B prompts without replacement (all prompts if fewer than B).
inline std::vector<std::size_t> draw_prompts(std::size_t n_prompts, std::size_t B, std::uint64_t seed) {
  std::vector<std::size_t> idx(n_prompts);
  for (std::size_t i = 0; i < n_prompts; ++i) idx[i] = i;
  Rng rng(seed);
  const std::size_t k = std::min(B, n_prompts);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n_prompts - i)]);
  idx.resize(k);
  return idx;
}

inline GroupSample sample_group(const PolicyParams& P, const RenderedQuery& q, std::size_t prompt, const GrpoConfig& cfg,
                                std::size_t L_max, const RewardFn& reward, std::uint64_t seed, std::size_t iter,
                                std::size_t b) {
  GroupSample g;
  g.prompt = prompt;
  const auto prefix = prefill(P, q.streams, L_max);
  for (std::size_t k = 0; k < cfg.G; ++k) {
    Rng rng(derive_seed(seed, Stream::GrpoSample, {iter, b, k}));
    std::vector<double> lp;
    g.responses.push_back(sample_continuation(P, prefix, cfg.temperature, L_max, rng, &lp));
    g.logp_old.push_back(std::move(lp));
    const double r = reward(q, g.responses.back(), derive_seed(seed, Stream::GrpoJudge, {iter, b, k}));
    require(std::isfinite(r), ErrorKind::InvalidArgument, "non-finite reward");
    g.rewards.push_back(r);
  }
  g.advantages = compute_group_advantages(g.rewards, cfg.sigma_floor);
  return g;
}

// GRPO post-training: per iteration draw B prompts, sample G responses each at
// the configured temperature, score them, normalize advantages within each
// group, and take Adam steps on the clipped surrogate with a k3 penalty towards
// the frozen reference policy.
inline GrpoResult grpo_train(const PolicyParams& init, const PolicyParams& reference, const RewardFn& reward,
                             const std::vector<RenderedQuery>& prompts, const GrpoConfig& cfg, std::size_t L_max,
                             std::uint64_t seed, const GrpoEval& eval = {}) {
  cfg.validate();
  require(!prompts.empty(), ErrorKind::InvalidArgument, "empty prompt set");
  require(static_cast<bool>(reward), ErrorKind::RewardModelMissing, "no reward function");
  check_same_shape(init, reference);
  const auto t0 = std::chrono::steady_clock::now();
  GrpoResult out{init, {}, 0.0};
  PolicyParams& P = out.params;
  AdamState adam = adam_init(P);
  const AdamConfig acfg{cfg.lr};

  auto evaluate = [&](IterationMetrics& m) {
    if (eval.spec == nullptr) return;
    if (eval.bench_items && !eval.bench_items->empty())
      m.bench_score = greedy_bench(P, *eval.bench_items, *eval.spec, eval.seed);
    m.retention_score = retention_score(P, *eval.spec);
  };

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const auto chosen = draw_prompts(prompts.size(), cfg.B, derive_seed(seed, Stream::GrpoPrompts, {it}));
    std::vector<Episode> episodes;
    GrpoSurrogateLoss loss;
    loss.clip_eps = cfg.clip_eps;
    loss.kl_beta = cfg.kl_beta;
    IterationMetrics m;
    m.iter = it;
    std::map<std::string, std::pair<double, std::size_t>> by_cat;
    double reward_sum = 0.0;
    for (std::size_t b = 0; b < chosen.size(); ++b) {
      const auto& q = prompts[chosen[b]];
      auto g = sample_group(P, q, chosen[b], cfg, L_max, reward, seed, it, b);
      for (std::size_t k = 0; k < cfg.G; ++k) {
        episodes.push_back(pack_episode(q.streams, g.responses[k]));
        loss.advantages.push_back(g.advantages[k]);
        loss.logp_old.push_back(std::move(g.logp_old[k]));
        loss.logp_ref.push_back(forward_logprob(reference, episodes.back()).joint);
        reward_sum += g.rewards[k];
        auto& c = by_cat[category_name(q.category)];
        c.first += g.rewards[k];
        c.second += 1;
      }
    }
    m.mean_reward = reward_sum / static_cast<double>(episodes.size());
    for (const auto& [name, v] : by_cat) m.reward_by_category[name] = v.first / static_cast<double>(v.second);

    std::size_t clipped = 0, tokens = 0;
    for (std::size_t step = 0; step < cfg.inner_steps; ++step) {
      const auto lg = backward(P, episodes, loss, cfg.workers);
      if (step == 0) m.kl_mean = lg.stats.tokens ? lg.stats.kl_sum / static_cast<double>(lg.stats.tokens) : 0.0;
      clipped += lg.stats.clipped;
      tokens += lg.stats.tokens;
      adam_step(P, lg.grad, adam, acfg);
    }
    require(all_finite(P), ErrorKind::DivergedTraining, "policy diverged at iteration " + std::to_string(it));
    m.clip_fraction = tokens ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;
    if (cfg.eval_every > 0 && (it % cfg.eval_every == 0 || it == cfg.iterations)) evaluate(m);
    out.metrics.push_back(std::move(m));
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// Kendall rank correlation (tau-a) of a series against its index.
inline double kendall_tau_trend(std::span<const double> xs) {
  require(xs.size() >= 2, ErrorKind::DegenerateInput, "trend needs at least two points");
  long long s = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = i + 1; j < xs.size(); ++j) s += (xs[j] > xs[i]) - (xs[j] < xs[i]);
  const double n = static_cast<double>(xs.size());
  return static_cast<double>(s) / (n * (n - 1.0) / 2.0);
}

inline std::vector<double> moving_average(std::span<const double> xs, std::size_t window) {
  require(window >= 1, ErrorKind::InvalidArgument, "window must be positive");
  std::vector<double> out;
  double sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sum += xs[i];
    if (i >= window) sum -= xs[i - window];
    if (i + 1 >= window) out.push_back(sum / static_cast<double>(window));
  }
  return out;
}

}  // namespace paralign
