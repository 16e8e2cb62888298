#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"

using namespace paralign;
using testing_util::world;

namespace {

Split default_split() {
  const auto qs = run_filters(generate_candidates(world(), 400, 11), world());
  return split_train_test(qs, 11, world().test_fraction);
}

ArchSpec small_arch(std::size_t d = 8) {
  const auto& w = world();
  return ArchSpec{w.audio_vocab(), w.text_vocab(), d, static_cast<std::size_t>(w.L_in() + w.L_max), 2 * d, 1};
}

}  // namespace

TEST(SftData, OracleDemonstrationsFromTrainingTopics) {
  const auto& w = world();
  const auto split = default_split();
  const auto items = render_all(split.train, w, "train");
  const auto ds = build_sft_dataset(w, items, split.test_topics, 50, 3);
  ASSERT_EQ(ds.episodes.size(), 50u);
  ASSERT_EQ(ds.provenance.size(), 50u);
  std::set<std::pair<int, int>> seen;
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& rec = ds.provenance[i];
    EXPECT_TRUE(seen.insert({rec.query_id, w.style_id(rec.style)}).second);
    const auto content = extract_content(ds.episodes[i].output, w);
    const auto style = extract_style(ds.episodes[i].output, w, 0);
    const auto q = extract_content(ds.episodes[i].input, w);
    EXPECT_EQ(score_fitness(q, rec.style, content, style, Rubric::standard(), w).value(), 5);
    for (int t : split.test_topics) EXPECT_NE(w.topic_of(q), t);
  }
  EXPECT_EQ(build_sft_dataset(w, items, split.test_topics, 50, 3).episodes, ds.episodes);
}

TEST(SftData, SizeLimits) {
  const auto& w = world();
  const auto split = default_split();
  const auto items = render_all(split.train, w, "train");
  try {
    build_sft_dataset(w, items, split.test_topics, 0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientQueries);
  }
  EXPECT_THROW(build_sft_dataset(w, items, split.test_topics, items.size() + 1, 1), Error);
  // an item from a held-out topic is refused
  EXPECT_THROW(build_sft_dataset(w, items, {items[0].topic}, items.size(), 1), Error);
}

TEST(SftTrain, BeatsUniformBaselineAfterOneEpoch) {
  const auto& w = world();
  const auto split = default_split();
  const auto items = render_all(split.train, w, "train");
  const auto ds = build_sft_dataset(w, items, split.test_topics, 40, 2);
  const auto base = init_params(small_arch(16), 4);
  const double uniform = std::log(static_cast<double>(w.audio_vocab())) + std::log(static_cast<double>(w.text_vocab()));
  TrainHyper h{3e-3, 8, 1, 3, 1e-4, 1};
  const auto t = sft_train(base, ds, h, 5);
  EXPECT_NEAR(t.report.initial_loss, uniform, 1e-9);
  ASSERT_EQ(t.report.epoch_loss.size(), 1u);
  EXPECT_LT(t.report.epoch_loss[0], uniform);
  // deterministic
  EXPECT_EQ(sft_train(base, ds, h, 5).params, t.params);
}

TEST(SftTrain, ConvergesOnRepeatedEpisode) {
  const auto items = testing_util::some_queries(64, 3);
  const std::vector<Episode> data(8, testing_util::oracle_episode(items[0]));
  const auto t = train_nll(init_params(small_arch(16), 1), data, TrainHyper{1e-2, 8, 60, 60, 0.0, 1}, 1);
  EXPECT_LT(t.report.best_loss, 0.05);
  const auto r = greedy_response(t.params, items[0].streams, static_cast<std::size_t>(world().L_max));
  EXPECT_EQ(spoken_audio(r), spoken_audio(data[0].output));
}

TEST(SftTrain, EmptyMaskAndZeroAudioWeight) {
  const auto P = testing_util::small_policy(30);
  const auto items = testing_util::some_queries(64, 3);
  auto e = testing_util::oracle_episode(items[0]);
  auto empty = e;
  std::fill(empty.loss_mask.begin(), empty.loss_mask.end(), false);
  const std::vector<Episode> both{e, empty}, one{e};
  // an episode with nothing to predict adds no loss and no tokens
  EXPECT_NEAR(loss_value(P, both, NllLoss{}), loss_value(P, one, NllLoss{}), 1e-12);
  const auto lp = forward_logprob(P, e);
  double text = 0.0;
  for (double x : lp.text) text -= x;
  EXPECT_NEAR(loss_value(P, one, NllLoss{{0.0}}), text / static_cast<double>(e.masked_count()), 1e-12);
}

TEST(Pretrain, CorpusDeterministicAndShaped) {
  const auto& w = world();
  const PretrainMix mix{30, 1, 20, 1};
  const auto a = pretrain_corpus(w, mix, 4);
  EXPECT_EQ(a, pretrain_corpus(w, mix, 4));
  EXPECT_EQ(a.size(), 30 * 2 + 20 + retention_prompts(w).size());
  // the first reply of each general query uses the category's default tone
  for (std::size_t i = 0; i < 30; ++i) {
    const auto style = extract_style(a[2 * i].output, w, 0);
    bool is_default = false;
    for (int c = 0; c < kNumCategories; ++c) is_default |= style == w.default_tone(CategoryId(c));
    EXPECT_TRUE(is_default);
  }
}

TEST(Pretrain, TinyRunIsDeterministic) {
  const auto& w = world();
  const PretrainMix mix{20, 0, 10, 0};
  const TrainHyper h{3e-3, 16, 2, 2, 1e-4, 1};
  const auto a = pretrain_base(small_arch(), w, mix, h, 6);
  const auto b = pretrain_base(small_arch(), w, mix, h, 6);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.report.epoch_loss, b.report.epoch_loss);
}

TEST(Retention, PerfectForTheAnswerKey) {
  const auto& w = world();
  std::size_t hit = 0;
  const auto prompts = retention_prompts(w);
  for (const auto& p : prompts) {
    const auto& item = w.retention[static_cast<std::size_t>(p.item)];
    if (spoken_audio(p.expected) == spoken_audio(render_response(item.answer, StyleLabel{CategoryId::Neutral, 0}, w)))
      ++hit;
  }
  EXPECT_EQ(hit, prompts.size());
  EXPECT_EQ(retention_score(init_params(small_arch(), 1), w), 0.0);
}

// ---------------------------------------------------------------------------
// Reward model

namespace {

std::vector<ScoredPair> toy_pairs(std::size_t n) {
  const auto& w = world();
  const auto items = testing_util::some_queries(200, 8);
  std::vector<ScoredPair> out;
  for (std::size_t i = 0; out.size() < n; ++i) {
    const auto& q = items[i % items.size()];
    const auto target = w.style_response(q.style);
    StreamPair r;
    switch (i % 3) {
      case 0: r = render_oracle(oracle_response(q.content, q.style, w), w); break;
      case 1: r = render_response(w.response_map[static_cast<std::size_t>(q.topic)], w.opposite(target), w); break;
      default: r = render_response(w.generic_response, StyleLabel{CategoryId::Neutral, 0}, w); break;
    }
    out.push_back({q, r, judge_response(q, r, w, 0).value(), 1.0, i});
  }
  return out;
}

}  // namespace

TEST(RewardData, ShapeAndProvenance) {
  const auto& w = world();
  const auto items = testing_util::some_queries(64, 3);
  const std::vector<RenderedQuery> qs(items.begin(), items.begin() + 10);
  const auto P = testing_util::small_policy(31, 0.5);
  const auto pairs = build_preference_dataset(P, qs, 32, 1.3, w, 9);
  ASSERT_EQ(pairs.size(), 320u);
  std::set<int> classes;
  for (const auto& p : pairs) classes.insert(p.score);
  EXPECT_GE(classes.size(), 2u);
  // each response regenerates from its recorded seed
  const auto L = static_cast<std::size_t>(w.L_max);
  for (std::size_t i = 0; i < pairs.size(); i += 37) {
    Rng rng(pairs[i].seed);
    EXPECT_EQ(sample_continuation(P, prefill(P, pairs[i].query.streams, L), 1.3, L, rng), pairs[i].response);
  }
  EXPECT_EQ(build_preference_dataset(P, qs, 2, 1.3, w, 9).size(), 20u);
  EXPECT_THROW(build_preference_dataset(P, qs, 1, 1.3, w, 9), Error);
}

TEST(RewardModel, ExpectedScoreGoldens) {
  EXPECT_DOUBLE_EQ(expected_score({0, 0, 0, 0, 1}), 5.0);
  EXPECT_DOUBLE_EQ(expected_score({0.2, 0.2, 0.2, 0.2, 0.2}), 3.0);
  EXPECT_DOUBLE_EQ(expected_score({0, 0.5, 0, 0.5, 0}), 3.0);
}

TEST(RewardModel, InitialLossIsLogFive) {
  const auto pairs = toy_pairs(30);
  const auto R = init_reward_params(small_arch(), 3);
  EXPECT_NEAR(rm_loss(R, pairs), std::log(5.0), 1e-12);
  for (const auto& p : pairs) EXPECT_DOUBLE_EQ(rm_score(R, p.query.streams, p.response), 3.0);
}

TEST(RewardModel, ScoresStayInRange) {
  auto R = init_reward_params(small_arch(), 4);
  Rng rng(2);
  for (Tensor* t : R.tensors())
    for (auto& x : t->data) x += rng.normal(0, 2.0);
  for (const auto& p : toy_pairs(60)) {
    const double s = rm_score(R, p.query.streams, p.response);
    EXPECT_GE(s, 1.0);
    EXPECT_LE(s, 5.0);
  }
}

TEST(RewardModel, GradientMatchesDifferences) {
  auto R = init_reward_params(small_arch(), 5);
  Rng rng(3);
  for (Tensor* t : R.tensors())
    for (auto& x : t->data) x += rng.normal(0, 0.3);
  const auto pairs = toy_pairs(4);
  const auto g = rm_backward(R, pairs);
  const auto rep = fd_compare(R, g.grad, [&](const RewardParams& q) { return rm_loss(q, pairs); },
                              std::vector<std::vector<bool>>(R.tensors().size()), 1e-5, 150, 1);
  // embedding rows of absent tokens have zero gradient on both sides
  EXPECT_LE(rep.max_rel_error, 1e-4);
}

TEST(RewardModel, SingleClassRejected) {
  auto pairs = toy_pairs(9);
  for (auto& p : pairs) p.score = 5;
  try {
    rm_train(small_arch(), pairs, TrainHyper{}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateLabels);
  }
}

TEST(RewardModel, FitsAFiftyPairToySet) {
  const auto pairs = toy_pairs(50);
  const TrainHyper h{1e-2, 10, 60, 60, 0.0, 1};
  RmReport rep;
  const auto t = rm_train(small_arch(16), pairs, h, 7, &rep);
  EXPECT_GE(rm_accuracy(t.params, pairs), 0.9);
  EXPECT_EQ(rep.n_train + rep.n_val, 50u);
  EXPECT_EQ(rm_train(small_arch(16), pairs, h, 7).params, t.params);
}

TEST(RewardModel, ValidationAgainstJudge) {
  const auto pairs = toy_pairs(60);
  const auto R = init_reward_params(small_arch(), 1);
  EXPECT_THROW(rm_validate(R, std::vector<ScoredPair>(pairs.begin(), pairs.begin() + 29)), Error);
  // a zero-head model predicts a constant, so correlation is undefined
  EXPECT_THROW(rm_validate(R, pairs), Error);
  std::vector<double> s;
  for (const auto& p : pairs) s.push_back(p.score);
  EXPECT_DOUBLE_EQ(pearson(s, s), 1.0);
}
