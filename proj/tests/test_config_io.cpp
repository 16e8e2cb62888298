#include <gtest/gtest.h>

#include <cstdlib>

#include "helpers.hpp"

using namespace paralign;
using testing_util::world;

namespace {

std::string default_ini() { return read_text(std::string(PARALIGN_CONFIG_DIR) + "/default.ini"); }

std::string config_error(const std::string& text) {
  try {
    parse_config(text, false);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
    return e.what();
  }
  ADD_FAILURE() << "no error for:\n" << text;
  return "";
}

}  // namespace

TEST(Config, ShippedFileMatchesBuiltInDefaults) {
  const auto c = parse_config(default_ini(), false);
  EXPECT_EQ(dump_config(c.config), dump_config(RunConfig{}));
  EXPECT_EQ(c.hash.size(), 16u);
  EXPECT_TRUE(c.overrides.empty());
}

TEST(Config, DumpRoundTrips) {
  RunConfig c;
  c.grpo.kl_beta = 0.0;
  c.ablate.B_grid = {2, 6};
  c.sft.hyper.lr = 2.5e-4;
  c.grpo.reward_source = RewardSource::OracleJudge;
  const auto back = parse_config(dump_config(c), false).config;
  EXPECT_EQ(dump_config(back), dump_config(c));
  EXPECT_EQ(back.grpo.kl_beta, 0.0);
  EXPECT_EQ(back.sft.hyper.lr, 2.5e-4);
  EXPECT_EQ(back.ablate.B_grid, (std::vector<std::size_t>{2, 6}));
  EXPECT_EQ(back.grpo.reward_source, RewardSource::OracleJudge);
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_NE(config_error("[grpo]\nG = 1\n").find("grpo.G"), std::string::npos);
  EXPECT_NE(config_error("[grpo]\nlr = fast\n").find("grpo.lr"), std::string::npos);
  EXPECT_NE(config_error("[sft]\nn_prompts = -3\n").find("sft.n_prompts"), std::string::npos);
  EXPECT_NE(config_error("[world]\ncolour = blue\n").find("world.colour"), std::string::npos);
  EXPECT_NE(config_error("[grpo]\nreward_source = crowd\n").find("crowd"), std::string::npos);
  EXPECT_NE(config_error("[reward]\nvalidation_queries = 2\n").find("reward.validation_queries"), std::string::npos);
  EXPECT_NE(config_error("[ablate]\nG_grid = 4,1\n").find("ablate.G_grid"), std::string::npos);
  config_error("[grpo\nB = 4\n");
  config_error("[grpo]\njust words\n");
}

TEST(Config, MissingFileIsIo) {
  try {
    load_config("/nonexistent/config.ini");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}

TEST(Config, EnvironmentOverridesChangeHash) {
  const auto text = default_ini();
  const auto plain = parse_config(text, true);
  ::setenv("PARALIGN_GRPO_KL_BETA", "0", 1);
  const auto over = parse_config(text, true);
  ::unsetenv("PARALIGN_GRPO_KL_BETA");
  EXPECT_EQ(over.config.grpo.kl_beta, 0.0);
  EXPECT_EQ(over.overrides.size(), 1u);
  EXPECT_NE(over.hash, plain.hash);
  EXPECT_EQ(parse_config(text, true).hash, plain.hash);
}

TEST(Io, QueriesRoundTrip) {
  const auto& w = world();
  auto qs = testing_util::some_queries(64, 3);
  for (auto& q : qs) q.split = "train";
  const auto text = queries_to_jsonl(qs, w);
  const auto back = queries_from_jsonl(text, w);
  ASSERT_EQ(back.size(), qs.size());
  for (std::size_t i = 0; i < qs.size(); ++i) {
    EXPECT_EQ(back[i].query_id, qs[i].query_id);
    EXPECT_EQ(back[i].style, qs[i].style);
    EXPECT_EQ(back[i].streams, qs[i].streams);
    EXPECT_EQ(back[i].content, qs[i].content);
  }
  EXPECT_EQ(queries_to_jsonl(back, w), text);
  const auto j = nlohmann::json::parse(text.substr(0, text.find('\n')));
  for (const char* k : {"query_id", "category", "topic", "content_tokens", "style_label", "audio_tokens", "text_tokens"})
    EXPECT_TRUE(j.contains(k)) << k;
}

TEST(Io, BadRecordsAreIoErrors) {
  const auto& w = world();
  for (const char* bad : {"{not json}\n", "{\"query_id\": 1}\n",
                          "{\"query_id\":1,\"category\":\"emotion\",\"topic\":0,\"content_tokens\":[2],"
                          "\"style_label\":\"emotion/bored\",\"audio_tokens\":[1],\"text_tokens\":[1],\"split\":\"\"}\n"}) {
    try {
      queries_from_jsonl(bad, w);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Io) << bad;
    }
  }
}

TEST(Io, StyleKeysRoundTrip) {
  const auto& w = world();
  for (int id = 0; id < w.n_styles(); ++id) {
    const auto s = w.style_from_id(id);
    EXPECT_EQ(parse_style_key(style_key(s, w), w), s);
  }
}

TEST(Io, PreferencePairsRoundTrip) {
  const auto& w = world();
  const auto qs = testing_util::some_queries(64, 3);
  const std::vector<RenderedQuery> few(qs.begin(), qs.begin() + 4);
  const auto pairs = build_preference_dataset(testing_util::small_policy(1), few, 3, 1.3, w, 2);
  const auto text = pairs_to_jsonl(pairs, w);
  const auto back = pairs_from_jsonl(text, w);
  ASSERT_EQ(back.size(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(back[i].response, pairs[i].response);
    EXPECT_EQ(back[i].score, pairs[i].score);
    EXPECT_EQ(back[i].seed, pairs[i].seed);
    EXPECT_EQ(back[i].query.streams, pairs[i].query.streams);
  }
  EXPECT_EQ(pairs_to_jsonl(back, w), text);
}

TEST(Io, MetricsRoundTripIsExact) {
  std::vector<IterationMetrics> ms(3);
  for (std::size_t i = 0; i < 3; ++i) {
    ms[i].iter = i + 1;
    ms[i].mean_reward = 1.0 / 3.0 + static_cast<double>(i);
    ms[i].kl_mean = 1e-7 * static_cast<double>(i);
    ms[i].reward_by_category = {{"emotion", 2.125}, {"age", 0.1}};
  }
  ms[2].bench_score = 3.7;
  ms[2].retention_score = 0.95;
  const auto text = metrics_to_jsonl(ms);
  const auto back = metrics_from_jsonl(text);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].mean_reward, ms[0].mean_reward);
  EXPECT_FALSE(back[0].bench_score.has_value());
  EXPECT_EQ(*back[2].bench_score, 3.7);
  EXPECT_EQ(metrics_to_jsonl(back), text);
}

TEST(Io, BenchCsvLayout) {
  BenchResult r;
  r.by_category = {{"emotion", 3.0}, {"sarcasm", 4.5}, {"age", 2.0}, {"gender", 5.0}};
  r.overall = 3.625;
  r.n = 8;
  const auto csv = bench_csv({{"sft", r}});
  EXPECT_EQ(csv, "model,emotion,sarcasm,age,gender,overall,n\nsft,3.0000,4.5000,2.0000,5.0000,3.6250,8\n");
}

TEST(Io, WorldDumpIsStable) {
  EXPECT_EQ(worldspec_dump(world()), worldspec_dump(default_world()));
  auto p = WorldParams{};
  p.layout_seed += 1;
  EXPECT_NE(worldspec_dump(make_world(p)), worldspec_dump(world()));
}
