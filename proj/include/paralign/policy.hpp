#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <thread>
#include <tuple>
#include <variant>
#include <vector>

#include "paralign/core.hpp"
#include "paralign/grpo_objective.hpp"
#include "paralign/rng.hpp"
#include "paralign/tensor.hpp"
#include "paralign/trunk.hpp"

namespace paralign {

// Dual-stream policy: shared trunk plus one next-token head per stream.
struct PolicyParams {
  ArchSpec arch;
  TrunkParams trunk;
  Tensor audio_head;
  Tensor text_head;

  PolicyParams() = default;
  explicit PolicyParams(const ArchSpec& a)
      : arch(a), trunk(a), audio_head("audio_head", a.audio_vocab, a.d_model), text_head("text_head", a.text_vocab, a.d_model) {}

  template <class Self>
  static auto collect(Self& s) {
    auto v = TrunkParams::collect(s.trunk);
    v.push_back(&s.audio_head);
    v.push_back(&s.text_head);
    return v;
  }
  std::vector<Tensor*> tensors() { return collect(*this); }
  std::vector<const Tensor*> tensors() const { return collect(*this); }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

inline PolicyParams init_params(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  PolicyParams p(arch);
  Rng rng(derive_seed(seed, Stream::Init));
  p.trunk.init(rng, arch.d_model);
  return p;
}

// Log-probabilities at each loss-masked response position. PAD tokens (text
// stream after its EOS) contribute zero to their stream's component.
struct StepLogProb {
  std::vector<double> joint;
  std::vector<double> audio;
  std::vector<double> text;

  double total() const {
    double s = 0.0;
    for (double x : joint) s += x;
    return s;
  }
};

namespace detail {

// Log-softmax head evaluated at several hidden states at once, reading the head
// matrix a single time. `probs` keeps each softmax for the backward pass.
struct HeadBatch {
  std::size_t vocab = 0;
  std::vector<double> probs;  // slots x vocab
  std::vector<double> logp;   // slots

  double* row(std::size_t s) { return probs.data() + s * vocab; }
  const double* row(std::size_t s) const { return probs.data() + s * vocab; }
};

inline HeadBatch head_forward(const Tensor& head, std::span<const double* const> hs, std::span<const Token> targets) {
  HeadBatch out{head.rows, std::vector<double>(hs.size() * head.rows), std::vector<double>(hs.size())};
  for (std::size_t r = 0; r < head.rows; ++r) {
    const double* w = head.row(r);
    for (std::size_t s = 0; s < hs.size(); ++s) out.probs[s * head.rows + r] = kernel::dot(w, hs[s], head.cols);
  }
  for (std::size_t s = 0; s < hs.size(); ++s) {
    double* lg = out.row(s);
    const double lse = kernel::log_sum_exp(lg, head.rows);
    out.logp[s] = lg[static_cast<std::size_t>(targets[s])] - lse;
    for (std::size_t r = 0; r < head.rows; ++r) lg[r] = std::exp(lg[r] - lse);
  }
  return out;
}

// With upstream dL/dlogp = c_s at slot s: dlogits = c_s (onehot - probs).
// Accumulates dhead and dL/dh_s, again touching each head row once.
inline void head_backward(const Tensor& head, std::span<const double* const> hs, HeadBatch& batch,
                          std::span<const Token> targets, std::span<const double> coefs, Tensor& dhead,
                          std::span<double* const> dhs) {
  for (std::size_t s = 0; s < hs.size(); ++s) {
    double* d = batch.row(s);
    for (std::size_t r = 0; r < batch.vocab; ++r) d[r] *= -coefs[s];
    d[static_cast<std::size_t>(targets[s])] += coefs[s];
  }
  for (std::size_t r = 0; r < head.rows; ++r) {
    const double* w = head.row(r);
    double* dw = dhead.row(r);
    for (std::size_t s = 0; s < hs.size(); ++s) {
      const double g = batch.probs[s * batch.vocab + r];
      if (g == 0.0) continue;
      kernel::axpy(g, hs[s], dw, head.cols);
      kernel::axpy(g, w, dhs[s], head.cols);
    }
  }
}

// Number of sequence positions needed to score every masked output position.
inline std::size_t needed_positions(const Episode& e) {
  std::size_t last = 0;
  for (std::size_t n = 0; n < e.loss_mask.size(); ++n)
    if (e.loss_mask[n]) last = n;
  return e.input.len() + last;
}

}  // namespace detail

// Mean per-token NLL over masked positions. `audio_weight`, when non-empty,
// scales each episode's audio-stream term (0 = supervise the text stream only).
struct NllLoss {
  std::vector<double> audio_weight;
};

// Inputs of the GRPO surrogate that are held fixed during differentiation.
struct GrpoSurrogateLoss {
  std::vector<double> advantages;
  std::vector<std::vector<double>> logp_old;
  std::vector<std::vector<double>> logp_ref;
  double clip_eps = 0.2;
  double kl_beta = 0.2;
};

using LossKind = std::variant<NllLoss, GrpoSurrogateLoss>;

struct EpisodeStats {
  double kl_sum = 0.0;
  std::size_t clipped = 0;
  std::size_t tokens = 0;
};

namespace detail {

// Forward (and optionally backward) for one episode. `coef(n, logp_audio,
// logp_text)` returns {loss contribution, dloss/dlogp_audio, dloss/dlogp_text}
// for masked position n.
template <class Coef>
double episode_pass(const PolicyParams& P, const Episode& e, Coef&& coef, PolicyParams* grad, TrunkCache& cache,
                    StepLogProb* out) {
  const std::size_t Li = e.input.len();
  require(Li >= 1, ErrorKind::InvalidArgument, "episode without query");
  require(e.total_len() <= P.arch.context, ErrorKind::ContextOverflow,
          "episode length " + std::to_string(e.total_len()) + " exceeds context " + std::to_string(P.arch.context));
  const std::size_t npos = needed_positions(e);
  cache.reset(P.arch, npos);
  for (std::size_t p = 0; p < npos; ++p) {
    const bool in_query = p < Li;
    trunk_step(P.trunk, cache, in_query ? e.input.audio[p] : e.output.audio[p - Li],
               in_query ? e.input.text[p] : e.output.text[p - Li]);
  }

  std::vector<std::size_t> slots;  // masked output positions
  for (std::size_t n = 0; n < e.output.len(); ++n)
    if (e.loss_mask[n]) slots.push_back(n);
  std::vector<const double*> hs;
  TokenSeq audio_tgt, text_tgt;
  std::vector<std::size_t> text_slots;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const std::size_t n = slots[k];
    hs.push_back(cache.hidden(Li + n - 1));
    audio_tgt.push_back(e.output.audio[n]);
    if (e.output.text[n] != kPad) {
      text_slots.push_back(k);
      text_tgt.push_back(e.output.text[n]);
    }
  }
  std::vector<const double*> text_hs;
  for (auto k : text_slots) text_hs.push_back(hs[k]);
  auto audio = head_forward(P.audio_head, hs, audio_tgt);
  auto text = head_forward(P.text_head, text_hs, text_tgt);

  std::vector<double> text_lp(slots.size(), 0.0);
  for (std::size_t j = 0; j < text_slots.size(); ++j) text_lp[text_slots[j]] = text.logp[j];
  std::vector<double> coefs(slots.size()), text_coef_all(slots.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    if (out) {
      out->audio.push_back(audio.logp[k]);
      out->text.push_back(text_lp[k]);
      out->joint.push_back(audio.logp[k] + text_lp[k]);
    }
    const auto [l, ca, ct] = coef(k, audio.logp[k], text_lp[k]);
    loss += l;
    coefs[k] = ca;
    text_coef_all[k] = ct;
  }
  if (!grad) return loss;

  const std::size_t d = P.arch.d_model;
  std::vector<double> dh2(npos * d, 0.0);
  std::vector<double*> dhs;
  for (auto n : slots) dhs.push_back(dh2.data() + (Li + n - 1) * d);
  head_backward(P.audio_head, hs, audio, audio_tgt, coefs, grad->audio_head, dhs);
  std::vector<double> text_coefs;
  std::vector<double*> text_dhs;
  for (auto k : text_slots) {
    text_coefs.push_back(text_coef_all[k]);
    text_dhs.push_back(dhs[k]);
  }
  head_backward(P.text_head, text_hs, text, text_tgt, text_coefs, grad->text_head, text_dhs);
  trunk_backward(P.trunk, cache, dh2, grad->trunk);
  return loss;
}

}  // namespace detail

inline StepLogProb forward_logprob(const PolicyParams& P, const Episode& e) {
  StepLogProb out;
  TrunkCache cache;
  detail::episode_pass(P, e, [](std::size_t, double, double) { return std::tuple{0.0, 0.0, 0.0}; }, nullptr, cache,
                       &out);
  return out;
}

struct LossAndGrad {
  double loss = 0.0;
  PolicyParams grad;
  EpisodeStats stats;
};

namespace detail {

inline constexpr std::size_t kGradBlock = 16;

// Per-episode token coefficient functor for a loss kind.
struct TokenCoef {
  const LossKind* kind;
  std::size_t episode;
  double nll_scale;
  double grpo_weight;
  EpisodeStats* stats;

  std::tuple<double, double, double> operator()(std::size_t n, double logp_audio, double logp_text) const {
    if (const auto* nll = std::get_if<NllLoss>(kind)) {
      const double wa = nll->audio_weight.empty() ? 1.0 : nll->audio_weight[episode];
      return {-nll_scale * (wa * logp_audio + logp_text), -nll_scale * wa, -nll_scale};
    }
    const auto& g = std::get<GrpoSurrogateLoss>(*kind);
    const auto t = grpo_token_objective(logp_audio + logp_text, g.logp_old[episode].at(n), g.logp_ref[episode].at(n),
                                        g.advantages[episode], g.clip_eps, g.kl_beta);
    if (stats) {
      stats->kl_sum += t.kl;
      stats->clipped += t.clipped ? 1 : 0;
      stats->tokens += 1;
    }
    return {-grpo_weight * t.value, -grpo_weight * t.d_logp, -grpo_weight * t.d_logp};
  }
};

inline void check_loss_inputs(std::span<const Episode> episodes, const LossKind& kind) {
  require(!episodes.empty(), ErrorKind::InvalidArgument, "no episodes");
  if (const auto* nll = std::get_if<NllLoss>(&kind))
    require(nll->audio_weight.empty() || nll->audio_weight.size() == episodes.size(), ErrorKind::ShapeMismatch,
            "audio weights not aligned with episodes");
  if (const auto* g = std::get_if<GrpoSurrogateLoss>(&kind)) {
    require(g->advantages.size() == episodes.size() && g->logp_old.size() == episodes.size() &&
                g->logp_ref.size() == episodes.size(),
            ErrorKind::ShapeMismatch, "GRPO auxiliary inputs not aligned with episodes");
    for (std::size_t i = 0; i < episodes.size(); ++i)
      require(g->logp_old[i].size() == episodes[i].masked_count() && g->logp_ref[i].size() == episodes[i].masked_count(),
              ErrorKind::ShapeMismatch, "GRPO log-probs not aligned with loss mask");
  }
}

}  // namespace detail

// Scalar loss and its exact gradient. NLL is the mean per-token joint NLL over
// all masked positions; the GRPO surrogate is the negated objective. Episodes
// are processed in fixed blocks merged in order, so the result does not depend
// on `workers`.
inline LossAndGrad backward(const PolicyParams& P, std::span<const Episode> episodes, const LossKind& kind,
                            std::size_t workers = 1) {
  detail::check_loss_inputs(episodes, kind);
  std::size_t total_tokens = 0;
  for (const auto& e : episodes) total_tokens += e.masked_count();
  const double nll_scale = total_tokens ? 1.0 / static_cast<double>(total_tokens) : 0.0;

  const std::size_t n_blocks = (episodes.size() + detail::kGradBlock - 1) / detail::kGradBlock;
  std::vector<PolicyParams> block_grads(n_blocks);
  std::vector<double> block_loss(n_blocks, 0.0);
  std::vector<EpisodeStats> block_stats(n_blocks);

  auto run_block = [&](std::size_t b) {
    block_grads[b] = zeros_like(P);
    TrunkCache cache;
    const std::size_t lo = b * detail::kGradBlock, hi = std::min(episodes.size(), lo + detail::kGradBlock);
    for (std::size_t i = lo; i < hi; ++i) {
      const double w = 1.0 / (static_cast<double>(episodes.size()) * static_cast<double>(episodes[i].masked_count()));
      detail::TokenCoef coef{&kind, i, nll_scale, w, &block_stats[b]};
      block_loss[b] += detail::episode_pass(P, episodes[i], coef, &block_grads[b], cache, nullptr);
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

  LossAndGrad out;
  out.grad = std::move(block_grads[0]);
  out.loss = block_loss[0];
  out.stats = block_stats[0];
  for (std::size_t b = 1; b < n_blocks; ++b) {
    add_into(out.grad, block_grads[b]);
    out.loss += block_loss[b];
    out.stats.kl_sum += block_stats[b].kl_sum;
    out.stats.clipped += block_stats[b].clipped;
    out.stats.tokens += block_stats[b].tokens;
  }
  require(std::isfinite(out.loss), ErrorKind::NonFiniteLoss, "loss is not finite");
  return out;
}

inline double loss_value(const PolicyParams& P, std::span<const Episode> episodes, const LossKind& kind) {
  detail::check_loss_inputs(episodes, kind);
  std::size_t total_tokens = 0;
  for (const auto& e : episodes) total_tokens += e.masked_count();
  const double nll_scale = total_tokens ? 1.0 / static_cast<double>(total_tokens) : 0.0;
  TrunkCache cache;
  double loss = 0.0;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const double w = 1.0 / (static_cast<double>(episodes.size()) * static_cast<double>(episodes[i].masked_count()));
    detail::TokenCoef coef{&kind, i, nll_scale, w, nullptr};
    loss += detail::episode_pass(P, episodes[i], coef, nullptr, cache, nullptr);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Sampling

inline Token choose_token(std::vector<double>& logits, double temperature, Rng& rng) {
  // PAD is never emitted.
  if (temperature <= 0.0) {
    return static_cast<Token>(std::max_element(logits.begin() + 1, logits.end()) - logits.begin());
  }
  const double m = *std::max_element(logits.begin() + 1, logits.end());
  double sum = 0.0;
  logits[0] = 0.0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    logits[i] = std::exp((logits[i] - m) / temperature);
    sum += logits[i];
  }
  double u = rng.uniform() * sum;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    u -= logits[i];
    if (u < 0.0) return static_cast<Token>(i);
  }
  return static_cast<Token>(logits.size() - 1);
}

// Trunk state after reading the query; shared by every sample of a group.
struct QueryPrefix {
  TrunkCache cache;
  std::size_t query_len = 0;
};

inline QueryPrefix prefill(const PolicyParams& P, const StreamPair& query, std::size_t L_max) {
  require(query.len() >= 1, ErrorKind::InvalidArgument, "empty query");
  require(query.len() + L_max <= P.arch.context, ErrorKind::ContextOverflow, "query plus response exceeds context");
  QueryPrefix pre{TrunkCache(P.arch, query.len() + L_max), query.len()};
  trunk_forward(P.trunk, pre.cache, query.audio, query.text);
  return pre;
}

// Joint (audio, text) tokens sampled position by position until audio EOS or
// L_max. Once the text stream emits EOS it is PAD-filled. When `logp` is given
// it receives the untempered joint log-probability of every emitted position,
// identical to what forward_logprob computes for the packed episode.
inline StreamPair sample_continuation(const PolicyParams& P, const QueryPrefix& prefix, double temperature,
                                      std::size_t L_max, Rng& rng, std::vector<double>* logp = nullptr) {
  TrunkCache cache = prefix.cache;
  StreamPair out{TokenSeq(L_max, kPad), TokenSeq(L_max, kPad)};
  std::vector<double> la(P.arch.audio_vocab), lt(P.arch.text_vocab);
  if (logp) logp->clear();
  std::vector<double> raw_a, raw_t;
  bool text_done = false;
  for (std::size_t n = 0; n < L_max; ++n) {
    const double* h = cache.hidden(prefix.query_len + n - 1);
    double lp = 0.0;
    kernel::matvec(P.audio_head, h, la.data());
    if (logp) raw_a = la;
    const Token a = choose_token(la, temperature, rng);
    if (logp) lp += raw_a[static_cast<std::size_t>(a)] - kernel::log_sum_exp(raw_a.data(), raw_a.size());
    Token t = kPad;
    if (!text_done) {
      kernel::matvec(P.text_head, h, lt.data());
      if (logp) raw_t = lt;
      t = choose_token(lt, temperature, rng);
      if (logp) lp += raw_t[static_cast<std::size_t>(t)] - kernel::log_sum_exp(raw_t.data(), raw_t.size());
      text_done = t == kEos;
    }
    if (logp) logp->push_back(lp);
    out.audio[n] = a;
    out.text[n] = t;
    if (a == kEos) break;
    if (n + 1 < L_max) trunk_step(P.trunk, cache, a, t);
  }
  return out;
}

inline StreamPair sample_response(const PolicyParams& P, const StreamPair& query, double temperature,
                                  std::size_t L_max, std::uint64_t seed) {
  require(temperature >= 0.0, ErrorKind::InvalidArgument, "negative temperature");
  Rng rng(seed);
  return sample_continuation(P, prefill(P, query, L_max), temperature, L_max, rng);
}

inline StreamPair greedy_response(const PolicyParams& P, const StreamPair& query, std::size_t L_max) {
  return sample_response(P, query, 0.0, L_max, 0);
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t coords = 0;
};

// Central differences on a random subsample of coordinates that can influence
// the loss (embedding rows of tokens and positions actually present, every
// entry of the dense blocks), compared against `analytic`.
template <class Params, class LossFn>
FdReport fd_compare(Params params, const Params& analytic, LossFn&& loss, const std::vector<std::vector<bool>>& active,
                    double h, std::size_t n_coords, std::uint64_t seed) {
  auto tensors = params.tensors();
  auto grads = analytic.tensors();
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t ti = 0; ti < tensors.size(); ++ti)
    for (std::size_t k = 0; k < tensors[ti]->size(); ++k)
      if (active[ti].empty() || active[ti][k / tensors[ti]->cols]) pool.emplace_back(ti, k);
  Rng rng(derive_seed(seed, Stream::FdCheck));
  rng.shuffle(pool);
  pool.resize(std::min(pool.size(), n_coords));

  FdReport rep;
  for (const auto& [ti, k] : pool) {
    double& x = tensors[ti]->data[k];
    const double x0 = x;
    x = x0 + h;
    const double lp = loss(params);
    x = x0 - h;
    const double lm = loss(params);
    x = x0;
    const double numeric = (lp - lm) / (2.0 * h);
    const double exact = grads[ti]->data[k];
    const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
    rep.max_rel_error = std::max(rep.max_rel_error, std::abs(exact - numeric) / denom);
    ++rep.coords;
  }
  return rep;
}

inline std::vector<std::vector<bool>> active_rows(const PolicyParams& P, std::span<const Episode> episodes) {
  std::vector<std::vector<bool>> active(P.tensors().size());
  active[0].assign(P.arch.audio_vocab, false);
  active[1].assign(P.arch.text_vocab, false);
  active[2].assign(P.arch.context, false);
  for (const auto& e : episodes) {
    const auto [a, t] = concat_streams(e);
    const std::size_t n = detail::needed_positions(e);
    for (std::size_t p = 0; p < n; ++p) {
      active[0][static_cast<std::size_t>(a[p])] = true;
      active[1][static_cast<std::size_t>(t[p])] = true;
      active[2][p] = true;
    }
  }
  return active;
}

inline FdReport fd_check(const PolicyParams& P, std::span<const Episode> episodes, const LossKind& kind,
                         double h = 1e-5, std::size_t n_coords = 256, std::uint64_t seed = 0) {
  require(h > 0.0, ErrorKind::InvalidArgument, "step must be positive");
  const auto analytic = backward(P, episodes, kind);
  return fd_compare(P, analytic.grad, [&](const PolicyParams& q) { return loss_value(q, episodes, kind); },
                    active_rows(P, episodes), h, n_coords, seed);
}

}  // namespace paralign
