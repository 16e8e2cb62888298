#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <set>
#include <thread>
#include <vector>

#include "paralign/judge.hpp"
#include "paralign/optim.hpp"
#include "paralign/policy.hpp"
#include "paralign/sft.hpp"
#include "paralign/synthworld.hpp"
#include "paralign/trunk.hpp"

namespace paralign {

inline constexpr std::size_t kScoreClasses = 5;

// Reward model: the policy trunk family read over query ++ response, with a
// 5-way score classifier on the hidden state of the final position.
struct RewardParams {
  ArchSpec arch;
  TrunkParams trunk;
  Tensor class_head;
  Tensor class_bias;

  RewardParams() = default;
  explicit RewardParams(const ArchSpec& a)
      : arch(a), trunk(a), class_head("class_head", kScoreClasses, a.d_model), class_bias("class_bias", kScoreClasses, 1) {}

  template <class Self>
  static auto collect(Self& s) {
    auto v = TrunkParams::collect(s.trunk);
    v.push_back(&s.class_head);
    v.push_back(&s.class_bias);
    return v;
  }
  std::vector<Tensor*> tensors() { return collect(*this); }
  std::vector<const Tensor*> tensors() const { return collect(*this); }

  friend bool operator==(const RewardParams&, const RewardParams&) = default;
};

inline RewardParams init_reward_params(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  RewardParams p(arch);
  Rng rng(derive_seed(seed, Stream::Init, {1}));
  p.trunk.init(rng, arch.d_model);
  return p;
}

struct ScoredPair {
  RenderedQuery query;
  StreamPair response;
  int score = 1;
  double temperature = 0.0;
  std::uint64_t seed = 0;  // sampling seed of the response
};

// Q x K samples of the policy, each scored by the judge.
inline std::vector<ScoredPair> build_preference_dataset(const PolicyParams& policy, const std::vector<RenderedQuery>& queries,
                                                        std::size_t K, double temperature, const WorldSpec& spec,
                                                        std::uint64_t seed) {
  require(!queries.empty(), ErrorKind::InvalidArgument, "preference dataset needs at least one query");
  require(K >= 2, ErrorKind::InvalidArgument, "preference dataset needs K >= 2 samples per query");
  require(temperature > 0.0, ErrorKind::InvalidArgument, "preference sampling temperature must be positive");
  const auto L = static_cast<std::size_t>(spec.L_max);
  std::vector<ScoredPair> out;
  out.reserve(queries.size() * K);
  for (std::size_t j = 0; j < queries.size(); ++j) {
    const auto prefix = prefill(policy, queries[j].streams, L);
    for (std::size_t k = 0; k < K; ++k) {
      const auto s = derive_seed(seed, Stream::PrefSample, {j, k});
      Rng rng(s);
      auto response = sample_continuation(policy, prefix, temperature, L, rng);
      const int score = judge_response(queries[j], response, spec, derive_seed(seed, Stream::PrefJudge, {j, k})).value();
      out.push_back({queries[j], std::move(response), score, temperature, s});
    }
  }
  return out;
}

namespace detail {

inline void rm_run_trunk(const RewardParams& R, const StreamPair& query, const StreamPair& response, TrunkCache& cache) {
  const std::size_t T = query.len() + response.len();
  require(T <= R.arch.context, ErrorKind::ContextOverflow,
          "query plus response length " + std::to_string(T) + " exceeds reward context " + std::to_string(R.arch.context));
  cache.reset(R.arch, T);
  trunk_forward(R.trunk, cache, query.audio, query.text);
  trunk_forward(R.trunk, cache, response.audio, response.text);
}

inline std::array<double, kScoreClasses> rm_probs(const RewardParams& R, const double* h) {
  std::array<double, kScoreClasses> z{};
  kernel::matvec(R.class_head, h, z.data());
  for (std::size_t k = 0; k < kScoreClasses; ++k) z[k] += R.class_bias.data[k];
  const double lse = kernel::log_sum_exp(z.data(), kScoreClasses);
  for (auto& v : z) v = std::exp(v - lse);
  return z;
}

}  // namespace detail

inline std::array<double, kScoreClasses> rm_class_probs(const RewardParams& R, const StreamPair& query,
                                                        const StreamPair& response) {
  TrunkCache cache;
  detail::rm_run_trunk(R, query, response, cache);
  return detail::rm_probs(R, cache.hidden(cache.n - 1));
}

// Expected score class under the classifier, in [1, 5].
inline double expected_score(const std::array<double, kScoreClasses>& p) {
  double r = 0.0;
  for (std::size_t k = 0; k < kScoreClasses; ++k) r += static_cast<double>(k + 1) * p[k];
  return r;
}

inline double rm_score(const RewardParams& R, const StreamPair& query, const StreamPair& response) {
  return expected_score(rm_class_probs(R, query, response));
}

struct RmLossAndGrad {
  double loss = 0.0;
  RewardParams grad;
  std::size_t correct = 0;
};

// Mean 5-way cross-entropy of the score class and its exact gradient.
inline RmLossAndGrad rm_backward(const RewardParams& R, std::span<const ScoredPair> pairs, bool want_grad = true,
                                 std::size_t workers = 1) {
  require(!pairs.empty(), ErrorKind::InvalidArgument, "no scored pairs");
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  const std::size_t n_blocks = (pairs.size() + detail::kGradBlock - 1) / detail::kGradBlock;
  std::vector<RmLossAndGrad> blocks(n_blocks);

  auto run_block = [&](std::size_t b) {
    auto& out = blocks[b];
    if (want_grad) out.grad = RewardParams(R.arch);
    TrunkCache cache;
    const std::size_t lo = b * detail::kGradBlock, hi = std::min(pairs.size(), lo + detail::kGradBlock);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& sp = pairs[i];
      require(sp.score >= 1 && sp.score <= 5, ErrorKind::InvalidArgument, "score outside 1..5");
      detail::rm_run_trunk(R, sp.query.streams, sp.response, cache);
      const std::size_t last = cache.n - 1;
      const double* h = cache.hidden(last);
      auto p = detail::rm_probs(R, h);
      const auto y = static_cast<std::size_t>(sp.score - 1);
      out.loss -= std::log(p[y]) * inv_n;
      if (static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == y) ++out.correct;
      if (!want_grad) continue;
      std::array<double, kScoreClasses> dz{};
      for (std::size_t k = 0; k < kScoreClasses; ++k) dz[k] = (p[k] - (k == y ? 1.0 : 0.0)) * inv_n;
      kernel::outer_acc(out.grad.class_head, dz.data(), h);
      kernel::axpy(1.0, dz.data(), out.grad.class_bias.data.data(), kScoreClasses);
      const std::size_t d = R.arch.d_model;
      std::vector<double> dh2(cache.n * d, 0.0);
      kernel::matvec_t_acc(R.class_head, dz.data(), dh2.data() + last * d);
      trunk_backward(R.trunk, cache, dh2, out.grad.trunk);
    }
  };

  workers = std::max<std::size_t>(1, std::min(workers, n_blocks));
  if (workers == 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) run_block(b);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t b = w; b < n_blocks; b += workers) run_block(b);
      });
    for (auto& t : pool) t.join();
  }

  RmLossAndGrad out = std::move(blocks[0]);
  for (std::size_t b = 1; b < n_blocks; ++b) {
    out.loss += blocks[b].loss;
    out.correct += blocks[b].correct;
    if (want_grad) add_into(out.grad, blocks[b].grad);
  }
  require(std::isfinite(out.loss), ErrorKind::NonFiniteLoss, "reward loss is not finite");
  return out;
}

inline double rm_loss(const RewardParams& R, std::span<const ScoredPair> pairs) {
  return rm_backward(R, pairs, false).loss;
}

inline double rm_accuracy(const RewardParams& R, std::span<const ScoredPair> pairs) {
  return static_cast<double>(rm_backward(R, pairs, false).correct) / static_cast<double>(pairs.size());
}

struct RmReport {
  TrainReport train;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::vector<double> val_loss;  // after each epoch
  double best_val_loss = 0.0;
};

// Adam on the score-class cross-entropy; 90/10 train/validation split, keeps
// the parameters with the best validation loss.
inline Trained<RewardParams> rm_train(const ArchSpec& arch, const std::vector<ScoredPair>& pairs, const TrainHyper& hyper,
                                      std::uint64_t seed, RmReport* report = nullptr) {
  std::set<int> classes;
  for (const auto& p : pairs) classes.insert(p.score);
  require(classes.size() >= 2, ErrorKind::DegenerateLabels, "preference data holds a single score class");
  require(pairs.size() >= 2, ErrorKind::InvalidArgument, "need at least two scored pairs");
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::size_t> idx(pairs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng split_rng(derive_seed(seed, Stream::RewardTrain, {0}));
  split_rng.shuffle(idx);
  const std::size_t n_val = std::max<std::size_t>(1, pairs.size() / 10);
  std::vector<ScoredPair> val, train;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_val ? val : train).push_back(pairs[idx[i]]);

  RewardParams R = init_reward_params(arch, seed);
  Trained<RewardParams> out{R, {}};
  RmReport rep;
  rep.n_train = train.size();
  rep.n_val = val.size();
  rep.train.initial_loss = rm_loss(R, train);
  rep.best_val_loss = rm_loss(R, val);
  AdamState adam = adam_init(R);
  const AdamConfig cfg{hyper.lr};
  std::vector<std::size_t> order(train.size());
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, Stream::RewardTrain, {epoch}));
    rng.shuffle(order);
    for (std::size_t lo = 0; lo < order.size(); lo += hyper.batch) {
      std::vector<ScoredPair> batch;
      for (std::size_t i = lo; i < std::min(order.size(), lo + hyper.batch); ++i) batch.push_back(train[order[i]]);
      const auto lg = rm_backward(R, batch, true, hyper.workers);
      adam_step(R, lg.grad, adam, cfg);
    }
    require(all_finite(R), ErrorKind::DivergedTraining, "reward model diverged at epoch " + std::to_string(epoch));
    rep.train.epoch_loss.push_back(rm_loss(R, train));
    const double vl = rm_loss(R, val);
    rep.val_loss.push_back(vl);
    if (vl < rep.best_val_loss - hyper.min_delta) {
      rep.best_val_loss = vl;
      rep.train.best_epoch = epoch;
      rep.train.best_loss = rep.train.epoch_loss.back();
      out.params = R;
      stale = 0;
    } else if (++stale >= hyper.patience) {
      break;
    }
  }
  rep.train.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.report = rep.train;
  if (report) *report = rep;
  return out;
}

struct RmValidation {
  double pearson_r = 0.0;
  std::size_t n = 0;
  std::vector<double> predicted;
  std::vector<double> oracle;
};

// Pearson correlation between reward-model scores and the judge's scores.
inline RmValidation rm_validate(const RewardParams& R, const std::vector<ScoredPair>& held_out) {
  require(held_out.size() >= 30, ErrorKind::DegenerateInput, "validation needs at least 30 held-out pairs");
  RmValidation v;
  v.n = held_out.size();
  for (const auto& p : held_out) {
    v.predicted.push_back(rm_score(R, p.query.streams, p.response));
    v.oracle.push_back(static_cast<double>(p.score));
  }
  v.pearson_r = pearson(v.predicted, v.oracle);
  return v;
}

}  // namespace paralign
