#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "paralign/error.hpp"

namespace paralign {

// Group-normalized advantages (r - mean) / std with the population standard
// deviation. Groups whose spread is below `sigma_floor` carry no signal and get
// all-zero advantages.
inline std::vector<double> compute_group_advantages(std::span<const double> rewards, double sigma_floor = 1e-8) {
  require(rewards.size() >= 2, ErrorKind::InvalidArgument, "group size must be at least 2");
  const double n = static_cast<double>(rewards.size());
  const double mu = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mu) * (r - mu);
  const double sigma = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (sigma < sigma_floor) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mu) / sigma;
  return adv;
}

// k3 estimator of KL(pi || pi_ref) at one token: r - log r - 1, r = pi_ref / pi.
inline double kl_penalty(double logp_cur, double logp_ref) {
  const double log_r = logp_ref - logp_cur;
  return std::exp(log_r) - log_r - 1.0;
}

inline double clipped_surrogate(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

struct TokenObjective {
  double value = 0.0;         // surrogate - beta * kl
  double d_logp = 0.0;        // derivative of value w.r.t. the current log-prob
  double kl = 0.0;
  bool clipped = false;
};

inline TokenObjective grpo_token_objective(double logp, double logp_old, double logp_ref, double advantage,
                                           double eps, double beta) {
  TokenObjective t;
  const double ratio = std::exp(logp - logp_old);
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage;
  double surrogate = 0.0, d_surrogate = 0.0;
  if (unclipped <= clipped) {
    surrogate = unclipped;
    d_surrogate = unclipped;
  } else {
    surrogate = clipped;
    t.clipped = true;
  }
  const double r = std::exp(logp_ref - logp);
  t.kl = r - (logp_ref - logp) - 1.0;
  t.value = surrogate - beta * t.kl;
  t.d_logp = d_surrogate - beta * (1.0 - r);
  return t;
}

// Per-response inputs of the objective, aligned to the response's loss-masked
// positions; the advantage is broadcast to every token.
struct ResponseTerms {
  std::vector<double> logp;
  std::vector<double> logp_old;
  std::vector<double> logp_ref;
  double advantage = 0.0;
};

// Negated GRPO objective: mean over responses of the length-normalized sum of
// per-token (clipped surrogate - beta * k3).
inline double grpo_loss(std::span<const ResponseTerms> responses, double eps, double beta) {
  require(!responses.empty(), ErrorKind::InvalidArgument, "no responses");
  double total = 0.0;
  for (const auto& r : responses) {
    require(r.logp.size() == r.logp_old.size() && r.logp.size() == r.logp_ref.size() && !r.logp.empty(),
            ErrorKind::ShapeMismatch, "misaligned log-prob arrays");
    double sum = 0.0;
    for (std::size_t n = 0; n < r.logp.size(); ++n)
      sum += grpo_token_objective(r.logp[n], r.logp_old[n], r.logp_ref[n], r.advantage, eps, beta).value;
    total += sum / static_cast<double>(r.logp.size());
  }
  const double loss = -total / static_cast<double>(responses.size());
  require(std::isfinite(loss), ErrorKind::NonFiniteLoss, "GRPO loss is not finite");
  return loss;
}

}  // namespace paralign
