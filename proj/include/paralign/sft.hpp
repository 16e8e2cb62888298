#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "paralign/core.hpp"
#include "paralign/judge.hpp"
#include "paralign/optim.hpp"
#include "paralign/policy.hpp"
#include "paralign/synthworld.hpp"

namespace paralign {

struct TrainHyper {
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;     // epochs without improvement before stopping
  double min_delta = 1e-4;
  std::size_t workers = 1;
};

struct TrainReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;  // full-dataset loss after each epoch
  std::size_t best_epoch = 0;      // 0 = the initial parameters
  double best_loss = 0.0;
  double seconds = 0.0;
};

template <class Params>
struct Trained {
  Params params;
  TrainReport report;
};

// Mini-batch Adam on the masked joint NLL; keeps the best full-dataset loss.
// `audio_weight` (optional, one per episode) scales each episode's audio term.
inline Trained<PolicyParams> train_nll(PolicyParams params, const std::vector<Episode>& data, const TrainHyper& hyper,
                                       std::uint64_t seed, Stream stream = Stream::SftTrain,
                                       const std::vector<double>& audio_weight = {}) {
  require(!data.empty(), ErrorKind::InvalidArgument, "empty training set");
  require(audio_weight.empty() || audio_weight.size() == data.size(), ErrorKind::ShapeMismatch,
          "audio weights not aligned with training set");
  const NllLoss full{audio_weight};
  require(hyper.batch >= 1 && hyper.lr > 0.0, ErrorKind::InvalidArgument, "bad training hyperparameters");
  const auto t0 = std::chrono::steady_clock::now();
  Trained<PolicyParams> out{params, {}};
  out.report.initial_loss = loss_value(params, data, full);
  out.report.best_loss = out.report.initial_loss;
  AdamState adam = adam_init(params);
  const AdamConfig cfg{hyper.lr};
  std::vector<std::size_t> order(data.size());
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, stream, {epoch}));
    rng.shuffle(order);
    for (std::size_t lo = 0; lo < order.size(); lo += hyper.batch) {
      std::vector<Episode> batch;
      NllLoss loss;
      for (std::size_t i = lo; i < std::min(order.size(), lo + hyper.batch); ++i) {
        batch.push_back(data[order[i]]);
        if (!audio_weight.empty()) loss.audio_weight.push_back(audio_weight[order[i]]);
      }
      const auto lg = backward(params, batch, loss, hyper.workers);
      adam_step(params, lg.grad, adam, cfg);
    }
    const double loss = loss_value(params, data, full);
    require(std::isfinite(loss) && all_finite(params), ErrorKind::DivergedTraining,
            "training diverged at epoch " + std::to_string(epoch));
    out.report.epoch_loss.push_back(loss);
    if (loss < out.report.best_loss - hyper.min_delta) {
      out.report.best_loss = loss;
      out.report.best_epoch = epoch;
      out.params = params;
      stale = 0;
    } else if (++stale >= hyper.patience) {
      break;
    }
  }
  out.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// Stage 0: a style-deaf base model

struct PretrainMix {
  std::size_t n_general = 2000;   // contrast-style queries answered in the category's default tone
  std::size_t tone_variants = 1;  // extra copies of each general query answered in a uniformly random tone
  std::size_t n_readback = 1000;  // "repeat after me": content echoed in the speaker's style
  std::size_t retention_copies = 1;
};

// The base's general skills. Content answers cover every topic (the base model
// knows what to say). The reply tone ignores the speaker's style: each query is
// answered once in its category's default tone and in random tones, so the base
// can voice any reply in any tone but prefers the default. The read-back task
// echoes content in the speaker's style.
inline std::vector<Episode> pretrain_corpus(const WorldSpec& spec, const PretrainMix& mix, std::uint64_t seed) {
  require(mix.n_general >= 1, ErrorKind::InvalidArgument, "n_general must be at least 1");
  std::vector<Episode> out;
  const auto queries = generate_candidates(spec, mix.n_general, derive_seed(seed, Stream::Pretrain, {0}));
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    const StyleLabel style = (i % 2 == 0) ? q.style_a : q.style_b;
    const auto& content = spec.response_map[static_cast<std::size_t>(q.topic)];
    const auto query = render_query(q.content, style, spec);
    out.push_back(pack_episode(query, render_response(content, spec.default_tone(q.category), spec)));
    Rng rng(derive_seed(seed, Stream::Pretrain, {2, i}));
    for (std::size_t v = 0; v < mix.tone_variants; ++v) {
      const auto tone = spec.style_from_id(static_cast<int>(rng.index(static_cast<std::size_t>(spec.n_styles()))));
      out.push_back(pack_episode(query, render_response(content, tone, spec)));
    }
  }

  TokenSeq pool;
  for (const auto& r : spec.response_map) pool.insert(pool.end(), r.begin(), r.end());
  for (const auto& item : spec.retention) pool.insert(pool.end(), item.answer.begin(), item.answer.end());
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  for (std::size_t i = 0; i < mix.n_readback; ++i) {
    Rng rng(derive_seed(seed, Stream::Pretrain, {1, i}));
    const auto len = static_cast<std::size_t>(spec.query_len_min) +
                     rng.index(static_cast<std::size_t>(spec.query_len_max - spec.query_len_min + 1));
    TokenSeq content;
    for (std::size_t k = 0; k < len; ++k) content.push_back(pool[rng.index(pool.size())]);
    const StyleLabel style = spec.style_from_id(static_cast<int>(rng.index(static_cast<std::size_t>(spec.n_styles()))));
    // queries are never spoken in the neutral tone, so neither are read-back prompts
    const StyleLabel query_style = style.category == CategoryId::Neutral ? StyleLabel{CategoryId::Emotion, 0} : style;
    out.push_back(pack_episode(render_query(content, query_style, spec), render_response(content, style, spec)));
  }

  for (std::size_t c = 0; c < mix.retention_copies; ++c)
    for (const auto& p : retention_prompts(spec)) out.push_back(pack_episode(p.streams, p.expected));
  return out;
}

inline Trained<PolicyParams> pretrain_base(const ArchSpec& arch, const WorldSpec& spec, const PretrainMix& mix,
                                           const TrainHyper& hyper, std::uint64_t seed) {
  return train_nll(init_params(arch, seed), pretrain_corpus(spec, mix, seed), hyper, seed, Stream::Pretrain);
}

// Fraction of retention prompts answered exactly (greedy decoding, both streams).
inline double retention_score(const PolicyParams& P, const WorldSpec& spec) {
  const auto prompts = retention_prompts(spec);
  std::size_t hit = 0;
  for (const auto& p : prompts) {
    const auto r = greedy_response(P, p.streams, static_cast<std::size_t>(spec.L_max));
    if (spoken_audio(r) == spoken_audio(p.expected)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(prompts.size());
}

// ---------------------------------------------------------------------------
// Stage 1: SFT warm-up on oracle demonstrations

struct SftRecord {
  int query_id = 0;
  StyleLabel style;
  OracleResponse oracle;
};

struct SftDataset {
  std::vector<Episode> episodes;
  std::vector<SftRecord> provenance;
};

// Samples `n_prompts` distinct (query, style) items from the training queries.
inline SftDataset build_sft_dataset(const WorldSpec& spec, const std::vector<RenderedQuery>& train_items,
                                    const std::vector<int>& test_topics, std::size_t n_prompts, std::uint64_t seed) {
  require(n_prompts >= 1, ErrorKind::InsufficientQueries, "SFT dataset needs at least one prompt");
  require(n_prompts <= train_items.size(), ErrorKind::InsufficientQueries,
          "requested " + std::to_string(n_prompts) + " SFT prompts but only " + std::to_string(train_items.size()) +
              " training items exist");
  const std::set<int> held_out(test_topics.begin(), test_topics.end());
  std::vector<std::size_t> idx(train_items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, Stream::SftData));
  rng.shuffle(idx);
  idx.resize(n_prompts);
  SftDataset ds;
  for (std::size_t i : idx) {
    const auto& q = train_items[i];
    require(!held_out.contains(q.topic), ErrorKind::InvalidArgument, "SFT item from a held-out topic");
    const auto oracle = oracle_response(q.content, q.style, spec);
    ds.episodes.push_back(pack_episode(q.streams, render_oracle(oracle, spec)));
    ds.provenance.push_back({q.query_id, q.style, oracle});
  }
  return ds;
}

inline Trained<PolicyParams> sft_train(const PolicyParams& base, const SftDataset& ds, const TrainHyper& hyper,
                                       std::uint64_t seed) {
  require(!ds.episodes.empty(), ErrorKind::InvalidArgument, "empty SFT dataset");
  return train_nll(base, ds.episodes, hyper, seed, Stream::SftTrain);
}

// SFT with rehearsal: demonstrations at full weight, plus `replay_general`
// general-task episodes whose audio stream is masked out (the text stream keeps
// the content knowledge for held-out topics without pulling the reply tone back
// to the default), plus the retention prompts. 0 disables rehearsal.
inline Trained<PolicyParams> sft_train_replay(const PolicyParams& base, const SftDataset& ds, const WorldSpec& spec,
                                              std::size_t replay_general, const TrainHyper& hyper,
                                              std::uint64_t seed) {
  require(!ds.episodes.empty(), ErrorKind::InvalidArgument, "empty SFT dataset");
  if (replay_general == 0) return sft_train(base, ds, hyper, seed);
  std::vector<Episode> data = ds.episodes;
  std::vector<double> weight(data.size(), 1.0);
  const PretrainMix mix{replay_general, 0, 0, 1};
  const auto replay = pretrain_corpus(spec, mix, derive_seed(seed, Stream::SftReplay));
  for (std::size_t i = 0; i < replay.size(); ++i) {
    data.push_back(replay[i]);
    weight.push_back(i < replay_general ? 0.0 : 1.0);
  }
  return train_nll(base, data, hyper, seed, Stream::SftTrain, weight);
}

}  // namespace paralign
