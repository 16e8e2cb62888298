#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "paralign/checkpoint.hpp"
#include "paralign/config.hpp"
#include "paralign/grpo.hpp"
#include "paralign/io.hpp"
#include "paralign/judge.hpp"
#include "paralign/policy.hpp"
#include "paralign/reward.hpp"
#include "paralign/sft.hpp"
#include "paralign/synthworld.hpp"

namespace paralign {

// ---------------------------------------------------------------------------
// In-memory stages. Every draw is a function of (config, seed).

struct WorldData {
  WorldSpec spec;
  FilterStats stats;
  std::vector<int> train_topics, test_topics;
  std::vector<RenderedQuery> train, test;
};

inline WorldData build_world(const RunConfig& c, std::uint64_t seed) {
  WorldData d;
  d.spec = make_world(c.world);
  const auto candidates = generate_candidates(d.spec, c.n_candidates, seed);
  const auto survivors = run_filters(candidates, d.spec, &d.stats);
  const auto split = split_train_test(survivors, seed, d.spec.test_fraction);
  d.train_topics = split.train_topics;
  d.test_topics = split.test_topics;
  d.train = render_all(split.train, d.spec, "train");
  d.test = render_all(split.test, d.spec, "test");
  return d;
}

inline TrainHyper with_workers(TrainHyper h, std::size_t workers) {
  h.workers = workers;
  return h;
}

inline Trained<PolicyParams> run_pretrain(const RunConfig& c, const WorldSpec& spec, std::uint64_t seed) {
  return pretrain_base(policy_arch(c, spec), spec, c.pretrain, with_workers(c.pretrain_hyper, c.workers), seed);
}

struct SftOutcome {
  SftDataset dataset;
  Trained<PolicyParams> trained;
};

inline SftOutcome run_sft(const RunConfig& c, const WorldData& w, const PolicyParams& base, std::uint64_t seed,
                          std::optional<std::size_t> n_prompts = std::nullopt) {
  SftOutcome o;
  o.dataset = build_sft_dataset(w.spec, w.train, w.test_topics, n_prompts.value_or(c.sft.n_prompts), seed);
  o.trained = sft_train_replay(base, o.dataset, w.spec, c.sft.replay_general, with_workers(c.sft.hyper, c.workers), seed);
  return o;
}

struct PreferenceData {
  std::vector<ScoredPair> train;
  std::vector<ScoredPair> held_out;  // fresh training-split queries never seen by the reward model
};

inline PreferenceData run_rm_build(const RunConfig& c, const WorldData& w, const PolicyParams& sft, std::uint64_t seed) {
  const auto& r = c.reward;
  const std::size_t need = r.n_queries + r.validation_queries;
  require(need <= w.train.size(), ErrorKind::InsufficientQueries,
          "reward stage needs " + std::to_string(need) + " training queries, have " + std::to_string(w.train.size()));
  const auto idx = draw_prompts(w.train.size(), need, derive_seed(seed, Stream::PrefQueries));
  std::vector<RenderedQuery> q_train, q_val;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < r.n_queries ? q_train : q_val).push_back(w.train[idx[i]]);
  PreferenceData d;
  d.train = build_preference_dataset(sft, q_train, r.samples_per_query, r.temperature, w.spec, seed);
  d.held_out = build_preference_dataset(sft, q_val, r.validation_samples, r.temperature, w.spec,
                                        derive_seed(seed, Stream::PrefQueries, {1}));
  return d;
}

struct RmOutcome {
  Trained<RewardParams> trained;
  RmReport report;
  RmValidation validation;
  double train_accuracy = 0.0;
};

inline RmOutcome run_rm_train(const RunConfig& c, const WorldSpec& spec, const PreferenceData& d, std::uint64_t seed) {
  RmOutcome o;
  o.trained = rm_train(reward_arch(c, spec), d.train, with_workers(c.reward.hyper, c.workers), seed, &o.report);
  o.validation = rm_validate(o.trained.params, d.held_out);
  o.train_accuracy = rm_accuracy(o.trained.params, d.train);
  return o;
}

inline RewardFn make_reward(RewardSource source, const WorldSpec& spec, const RewardParams* rm) {
  if (source == RewardSource::OracleJudge) return oracle_reward(spec);
  if (rm == nullptr) return {};
  return [rm](const RenderedQuery& q, const StreamPair& r, std::uint64_t) { return rm_score(*rm, q.streams, r); };
}

inline GrpoResult run_grpo(const RunConfig& c, const WorldData& w, const PolicyParams& sft, const RewardFn& reward,
                           std::uint64_t seed, std::optional<GrpoConfig> override_cfg = std::nullopt) {
  GrpoConfig cfg = override_cfg.value_or(c.grpo);
  cfg.workers = c.workers;
  return grpo_train(sft, sft, reward, w.train, cfg, static_cast<std::size_t>(w.spec.L_max), seed,
                    GrpoEval{&w.test, &w.spec, seed});
}

inline BenchResult bench_policy(const PolicyParams& P, const WorldData& w, std::uint64_t seed) {
  const auto L = static_cast<std::size_t>(w.spec.L_max);
  return bench_eval([&](const RenderedQuery& q) { return greedy_response(P, q.streams, L); }, w.test, w.spec, seed);
}

struct AblationPoint {
  std::string sweep;  // "B", "G" or "beta"
  double value = 0.0;
  double final_bench = 0.0;
  double final_retention = 0.0;
  double final_reward = 0.0;  // mean reward over the last 20 iterations
  double final_kl = 0.0;
};

inline AblationPoint summarize(const std::string& sweep, double value, const GrpoResult& r) {
  AblationPoint p{sweep, value};
  const auto& last = r.metrics.back();
  p.final_bench = last.bench_score.value_or(0.0);
  p.final_retention = last.retention_score.value_or(0.0);
  p.final_kl = last.kl_mean;
  const std::size_t k = std::min<std::size_t>(20, r.metrics.size());
  for (std::size_t i = r.metrics.size() - k; i < r.metrics.size(); ++i) p.final_reward += r.metrics[i].mean_reward;
  p.final_reward /= static_cast<double>(k);
  return p;
}

// Sweeps B, G and beta one at a time around the stage defaults, all at the
// ablation iteration budget. Identical settings are trained once.
inline std::vector<AblationPoint> run_ablations(const RunConfig& c, const WorldData& w, const PolicyParams& sft,
                                                const RewardFn& reward, std::uint64_t seed) {
  std::map<std::tuple<std::size_t, std::size_t, double>, AblationPoint> cache;
  std::vector<AblationPoint> out;
  auto run = [&](const std::string& sweep, double value, std::size_t B, std::size_t G, double beta) {
    const auto key = std::make_tuple(B, G, beta);
    auto it = cache.find(key);
    if (it == cache.end()) {
      GrpoConfig g = c.grpo;
      g.B = B;
      g.G = G;
      g.kl_beta = beta;
      g.iterations = c.ablate.iterations;
      g.eval_every = c.ablate.iterations;
      it = cache.emplace(key, summarize("", 0.0, run_grpo(c, w, sft, reward, seed, g))).first;
    }
    AblationPoint p = it->second;
    p.sweep = sweep;
    p.value = value;
    out.push_back(p);
  };
  for (auto B : c.ablate.B_grid) run("B", static_cast<double>(B), B, c.grpo.G, c.grpo.kl_beta);
  for (auto G : c.ablate.G_grid) run("G", static_cast<double>(G), c.grpo.B, G, c.grpo.kl_beta);
  for (auto b : c.ablate.beta_grid) run("beta", b, c.grpo.B, c.grpo.G, b);
  return out;
}

inline std::string ablation_csv(const std::vector<AblationPoint>& pts, const std::string& sweep) {
  std::string s = sweep + ",final_bench,final_retention,final_reward,final_kl\n";
  for (const auto& p : pts) {
    if (p.sweep != sweep) continue;
    char v[32];
    std::snprintf(v, sizeof v, "%g", p.value);
    s += std::string(v) + "," + fmt4(p.final_bench) + "," + fmt4(p.final_retention) + "," + fmt4(p.final_reward) +
         "," + fmt4(p.final_kl) + "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Gradient verification on a small randomly initialized model.

struct GradcheckResult {
  FdReport nll;
  FdReport nll_text_only;
  FdReport grpo;
  FdReport reward;
  double worst() const {
    return std::max({nll.max_rel_error, nll_text_only.max_rel_error, grpo.max_rel_error, reward.max_rel_error});
  }
};

template <class Params>
void jitter(Params& p, Rng& rng, double stddev) {
  for (Tensor* t : p.tensors())
    for (auto& x : t->data) x += rng.normal(0.0, stddev);
}

inline std::vector<std::vector<bool>> rm_active_rows(const RewardParams& R, std::span<const ScoredPair> pairs) {
  std::vector<std::vector<bool>> active(R.tensors().size());
  active[0].assign(R.arch.audio_vocab, false);
  active[1].assign(R.arch.text_vocab, false);
  active[2].assign(R.arch.context, false);
  for (const auto& p : pairs) {
    const auto e = pack_episode(p.query.streams, p.response);
    const auto [a, t] = concat_streams(e);
    for (std::size_t i = 0; i < a.size(); ++i) {
      active[0][static_cast<std::size_t>(a[i])] = true;
      active[1][static_cast<std::size_t>(t[i])] = true;
      active[2][i] = true;
    }
  }
  return active;
}

inline GradcheckResult gradcheck_suite(const WorldSpec& spec, std::uint64_t seed, double h = 1e-5,
                                       std::size_t coords = 256) {
  Rng rng(derive_seed(seed, Stream::FdCheck, {1}));
  const ArchSpec arch{spec.audio_vocab(), spec.text_vocab(), 8, static_cast<std::size_t>(spec.L_in() + spec.L_max), 12, 1};
  PolicyParams P = init_params(arch, seed);
  jitter(P, rng, 0.3);

  const auto queries = render_all(run_filters(generate_candidates(spec, 32, seed), spec), spec);
  require(queries.size() >= 3, ErrorKind::InsufficientQueries, "gradcheck needs a few rendered queries");
  std::vector<Episode> eps;
  std::vector<RenderedQuery> used;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& q = queries[i];
    auto resp = render_oracle(oracle_response(q.content, q.style, spec), spec);
    if (i == 0) resp = render_response(TokenSeq{q.content.front()}, q.style, spec);  // one token + EOS: two steps
    eps.push_back(pack_episode(q.streams, resp));
    used.push_back(q);
  }

  GradcheckResult r;
  r.nll = fd_check(P, eps, NllLoss{}, h, coords, seed);
  r.nll_text_only = fd_check(P, eps, NllLoss{{1.0, 0.0, 0.5}}, h, coords, seed + 1);

  GrpoSurrogateLoss g;
  g.clip_eps = 0.2;
  g.kl_beta = 0.2;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const auto lp = forward_logprob(P, eps[i]).joint;
    std::vector<double> old = lp, ref = lp;
    for (auto& x : old) x += rng.normal(0.0, 0.3);
    for (auto& x : ref) x += rng.normal(0.0, 0.5);
    g.logp_old.push_back(old);
    g.logp_ref.push_back(ref);
    g.advantages.push_back(rng.normal(0.0, 1.0));
  }
  r.grpo = fd_check(P, eps, g, h, coords, seed + 2);

  const ArchSpec rarch{spec.audio_vocab(), spec.text_vocab(), 8, static_cast<std::size_t>(spec.L_in() + spec.L_max), 12, 1};
  RewardParams R = init_reward_params(rarch, seed);
  jitter(R, rng, 0.3);
  std::vector<ScoredPair> pairs;
  for (std::size_t i = 0; i < eps.size(); ++i) pairs.push_back({used[i], eps[i].output, static_cast<int>(1 + 2 * i), 1.0, 0});
  const auto analytic = rm_backward(R, pairs).grad;
  r.reward = fd_compare(R, analytic, [&](const RewardParams& q) { return rm_loss(q, pairs); }, rm_active_rows(R, pairs),
                        h, coords, seed + 3);
  return r;
}

// ---------------------------------------------------------------------------
// On-disk stages driven by the CLI. Artifacts have fixed names inside a run
// directory; a stage reads its inputs from `in` and writes to `out`.

namespace artifact {
inline constexpr const char* kQueries = "queries.jsonl";
inline constexpr const char* kWorld = "world.cfg";
inline constexpr const char* kFilterStats = "filter_stats.json";
inline constexpr const char* kBase = "base.ckpt";
inline constexpr const char* kPretrainReport = "pretrain_report.json";
inline constexpr const char* kSftData = "sft_dataset.jsonl";
inline constexpr const char* kSft = "sft.ckpt";
inline constexpr const char* kSftReport = "sft_report.json";
inline constexpr const char* kPrefs = "preferences.jsonl";
inline constexpr const char* kPrefsHeldOut = "preferences_heldout.jsonl";
inline constexpr const char* kReward = "reward.ckpt";
inline constexpr const char* kRmReport = "rm_report.json";
inline constexpr const char* kRl = "rl.ckpt";
inline constexpr const char* kMetrics = "metrics.jsonl";
inline constexpr const char* kBench = "bench.csv";
inline constexpr const char* kEvalReport = "eval_report.json";
inline constexpr const char* kGradcheck = "gradcheck.json";
}  // namespace artifact

struct StageContext {
  LoadedConfig cfg;
  std::filesystem::path in;
  std::filesystem::path out;
  std::uint64_t seed = 0;
};

struct Manifest {
  std::string run_id;
  std::string config_hash;
  std::string stage;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  double wall_clock = 0.0;
};

inline std::string run_id(const std::string& config_hash, std::uint64_t seed) {
  return config_hash.substr(0, 12) + "-s" + std::to_string(seed);
}

inline void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
  json j{{"run_id", m.run_id},   {"config_hash", m.config_hash}, {"stage", m.stage},         {"inputs", m.inputs},
         {"outputs", m.outputs}, {"seed", m.seed},               {"wall_clock", m.wall_clock}};
  write_text(dir / ("manifest_" + m.stage + ".json"), j.dump(2) + "\n");
}

inline std::filesystem::path need(const std::filesystem::path& dir, const char* name, const std::string& stage,
                                  const std::string& producer) {
  const auto p = dir / name;
  if (!std::filesystem::exists(p))
    fail(ErrorKind::MissingArtifact, "stage '" + stage + "' needs " + p.string() + " (run '" + producer + "' first)");
  return p;
}

class StageRun {
 public:
  StageRun(const StageContext& ctx, std::string stage) : ctx_(ctx), t0_(std::chrono::steady_clock::now()) {
    m_.stage = std::move(stage);
    m_.config_hash = ctx.cfg.hash;
    m_.seed = ctx.seed;
    m_.run_id = run_id(ctx.cfg.hash, ctx.seed);
  }
  std::filesystem::path input(const char* name, const std::string& producer) {
    auto p = need(ctx_.in, name, m_.stage, producer);
    m_.inputs.push_back(p.string());
    return p;
  }
  std::filesystem::path output(const std::string& name) {
    auto p = ctx_.out / name;
    m_.outputs.push_back(p.string());
    return p;
  }
  void write(const std::string& name, const std::string& content) { write_text(output(name), content); }
  template <class Params>
  void save(const std::string& name, const std::string& kind, const Params& p) {
    std::filesystem::create_directories(ctx_.out);
    save_checkpoint(output(name).string(), kind, p);
  }
  void finish() {
    m_.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    write_manifest(ctx_.out, m_);
  }

 private:
  const StageContext& ctx_;
  Manifest m_;
  std::chrono::steady_clock::time_point t0_;
};

inline RunConfig effective(const StageContext& ctx) {
  RunConfig c = ctx.cfg.config;
  c.seed = ctx.seed;
  return c;
}

// Reloads the world from config and the rendered queries from disk, checking
// that the two agree.
inline WorldData load_world(StageRun& run, const RunConfig& c) {
  WorldData w;
  w.spec = make_world(c.world);
  const auto wpath = run.input(artifact::kWorld, "world gen");
  if (read_text(wpath) != worldspec_dump(w.spec))
    fail(ErrorKind::Config, "world.cfg does not match the [world] section of this config");
  const auto qs = queries_from_jsonl(read_text(run.input(artifact::kQueries, "world gen")), w.spec);
  std::set<int> tr, te;
  for (const auto& q : qs) {
    if (q.split == "train") {
      w.train.push_back(q);
      tr.insert(q.topic);
    } else {
      w.test.push_back(q);
      te.insert(q.topic);
    }
  }
  w.train_topics.assign(tr.begin(), tr.end());
  w.test_topics.assign(te.begin(), te.end());
  return w;
}

inline void stage_world(const StageContext& ctx) {
  const auto c = effective(ctx);
  StageRun run(ctx, "world");
  const auto w = build_world(c, ctx.seed);
  std::vector<RenderedQuery> all = w.train;
  all.insert(all.end(), w.test.begin(), w.test.end());
  run.write(artifact::kQueries, queries_to_jsonl(all, w.spec));
  run.write(artifact::kWorld, worldspec_dump(w.spec));
  auto stats = filter_stats_to_json(w.stats);
  stats["train_topics"] = w.train_topics;
  stats["test_topics"] = w.test_topics;
  stats["train_items"] = w.train.size();
  stats["test_items"] = w.test.size();
  run.write(artifact::kFilterStats, stats.dump(2) + "\n");
  run.finish();
}

inline void stage_pretrain(const StageContext& ctx) {
  const auto c = effective(ctx);
  StageRun run(ctx, "pretrain");
  const auto w = load_world(run, c);
  const auto t = run_pretrain(c, w.spec, ctx.seed);
  run.save(artifact::kBase, "policy", t.params);
  auto rep = report_to_json(t.report);
  rep["retention"] = retention_score(t.params, w.spec);
  rep["bench"] = bench_policy(t.params, w, ctx.seed).overall;
  run.write(artifact::kPretrainReport, rep.dump(2) + "\n");
  run.finish();
}

inline void stage_sft(const StageContext& ctx) {
  const auto c = effective(ctx);
  StageRun run(ctx, "sft");
  const auto w = load_world(run, c);
  const auto base = load_checkpoint<PolicyParams>(run.input(artifact::kBase, "pipeline pretrain").string(), "policy");
  const auto o = run_sft(c, w, base, ctx.seed);
  run.write(artifact::kSftData, sft_to_jsonl(o.dataset, w.spec));
  run.save(artifact::kSft, "policy", o.trained.params);
  auto rep = report_to_json(o.trained.report);
  rep["n_prompts"] = o.dataset.episodes.size();
  rep["retention"] = retention_score(o.trained.params, w.spec);
  rep["bench"] = bench_policy(o.trained.params, w, ctx.seed).overall;
  run.write(artifact::kSftReport, rep.dump(2) + "\n");
  run.finish();
}

inline void stage_rm_build(const StageContext& ctx) {
  const auto c = effective(ctx);
  StageRun run(ctx, "rm-build");
  const auto w = load_world(run, c);
  const auto sft = load_checkpoint<PolicyParams>(run.input(artifact::kSft, "pipeline sft").string(), "policy");
  const auto d = run_rm_build(c, w, sft, ctx.seed);
  run.write(artifact::kPrefs, pairs_to_jsonl(d.train, w.spec));
  run.write(artifact::kPrefsHeldOut, pairs_to_jsonl(d.held_out, w.spec));
  run.finish();
}

inline void stage_rm_train(const StageContext& ctx) {
  const auto c = effective(ctx);
  StageRun run(ctx, "rm-train");
  const auto spec = make_world(c.world);
  PreferenceData d;
  d.train = pairs_from_jsonl(read_text(run.input(artifact::kPrefs, "pipeline rm-build")), spec);
  d.held_out = pairs_from_jsonl(read_text(run.input(artifact::kPrefsHeldOut, "pipeline rm-build")), spec);
  const auto o = run_rm_train(c, spec, d, ctx.seed);
  run.save(artifact::kReward, "reward", o.trained.params);
  json rep = report_to_json(o.trained.report);
  rep["n_train"] = o.report.n_train;
  rep["n_val"] = o.report.n_val;
  rep["val_loss"] = o.report.val_loss;
  rep["best_val_loss"] = o.report.best_val_loss;
  rep["train_accuracy"] = o.train_accuracy;
  rep["heldout_pairs"] = o.validation.n;
  rep["pearson_r"] = o.validation.pearson_r;
  std::map<int, std::size_t> hist;
  for (const auto& p : d.train) ++hist[p.score];
  json h = json::object();
  for (const auto& [k, v] : hist) h[std::to_string(k)] = v;
  rep["score_histogram"] = h;
  run.write(artifact::kRmReport, rep.dump(2) + "\n");
  run.finish();
}

inline std::optional<RewardParams> load_reward_if_needed(StageRun& run, RewardSource source) {
  if (source != RewardSource::RewardModel) return std::nullopt;
  return load_checkpoint<RewardParams>(run.input(artifact::kReward, "pipeline rm-train").string(), "reward");
}

inline void stage_grpo(const StageContext& ctx) {
  const auto c = effective(ctx);
  StageRun run(ctx, "grpo");
  const auto w = load_world(run, c);
  const auto sft = load_checkpoint<PolicyParams>(run.input(artifact::kSft, "pipeline sft").string(), "policy");
  const auto rm = load_reward_if_needed(run, c.grpo.reward_source);
  const auto res = run_grpo(c, w, sft, make_reward(c.grpo.reward_source, w.spec, rm ? &*rm : nullptr), ctx.seed);
  run.save(artifact::kRl, "policy", res.params);
  run.write(artifact::kMetrics, metrics_to_jsonl(res.metrics));
  run.finish();
}

inline void stage_eval(const StageContext& ctx) {
  const auto c = effective(ctx);
  StageRun run(ctx, "eval");
  const auto w = load_world(run, c);
  std::vector<BenchRow> rows;
  json rep = json::object();
  for (const auto& [name, file, producer] : {std::tuple{"base", artifact::kBase, "pipeline pretrain"},
                                             std::tuple{"sft", artifact::kSft, "pipeline sft"},
                                             std::tuple{"rl", artifact::kRl, "pipeline grpo"}}) {
    const auto P = load_checkpoint<PolicyParams>(run.input(file, producer).string(), "policy");
    rows.push_back({name, bench_policy(P, w, ctx.seed)});
    rep[name] = {{"overall", rows.back().result.overall}, {"retention", retention_score(P, w.spec)}};
  }
  rows.push_back({"topline_oracle", bench_eval(oracle_responder(w.spec), w.test, w.spec, ctx.seed)});
  rows.push_back({"baseline_style_deaf", bench_eval(default_tone_responder(w.spec), w.test, w.spec, ctx.seed)});
  rep["ordered"] = rows[0].result.overall < rows[1].result.overall && rows[1].result.overall < rows[2].result.overall;
  run.write(artifact::kBench, bench_csv(rows));
  run.write(artifact::kEvalReport, rep.dump(2) + "\n");
  run.finish();
}

// Returns the worst relative error.
inline double stage_gradcheck(const StageContext& ctx) {
  const auto c = effective(ctx);
  StageRun run(ctx, "gradcheck");
  const auto r = gradcheck_suite(make_world(c.world), ctx.seed);
  auto fd = [](const FdReport& f) { return json{{"max_rel_error", f.max_rel_error}, {"coords", f.coords}}; };
  json j{{"nll", fd(r.nll)},
         {"nll_text_only", fd(r.nll_text_only)},
         {"grpo_surrogate", fd(r.grpo)},
         {"reward_ce", fd(r.reward)},
         {"worst", r.worst()}};
  run.write(artifact::kGradcheck, j.dump(2) + "\n");
  run.finish();
  return r.worst();
}

inline void stage_ablate(const StageContext& ctx) {
  const auto c = effective(ctx);
  StageRun run(ctx, "ablate");
  const auto w = load_world(run, c);
  const auto sft = load_checkpoint<PolicyParams>(run.input(artifact::kSft, "pipeline sft").string(), "policy");
  const auto rm = load_reward_if_needed(run, c.grpo.reward_source);
  const auto pts = run_ablations(c, w, sft, make_reward(c.grpo.reward_source, w.spec, rm ? &*rm : nullptr), ctx.seed);
  for (const char* sweep : {"B", "G", "beta"}) run.write(std::string("ablate_") + sweep + ".csv", ablation_csv(pts, sweep));
  run.finish();
}

// ---------------------------------------------------------------------------
// Report: merge every metrics.jsonl under a directory.

struct RunSummary {
  std::string run_id;
  std::size_t iterations = 0;
  double mean_reward = 0.0;  // over all iterations
  double final_reward = 0.0;
  double final_kl = 0.0;
  std::optional<double> final_bench;
  std::optional<double> final_retention;
};

inline RunSummary summarize_metrics(const std::string& id, const std::vector<IterationMetrics>& ms) {
  RunSummary s;
  s.run_id = id;
  s.iterations = ms.size();
  for (const auto& m : ms) {
    s.mean_reward += m.mean_reward;
    if (m.bench_score) s.final_bench = m.bench_score;
    if (m.retention_score) s.final_retention = m.retention_score;
  }
  if (!ms.empty()) {
    s.mean_reward /= static_cast<double>(ms.size());
    s.final_reward = ms.back().mean_reward;
    s.final_kl = ms.back().kl_mean;
  }
  return s;
}

inline std::vector<RunSummary> collect_runs(const std::filesystem::path& in) {
  if (!std::filesystem::is_directory(in)) fail(ErrorKind::Io, "not a directory: " + in.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(in))
    if (e.is_regular_file() && e.path().filename() == artifact::kMetrics) files.push_back(e.path());
  if (files.empty()) fail(ErrorKind::Io, "no " + std::string(artifact::kMetrics) + " under " + in.string());
  std::sort(files.begin(), files.end());
  std::vector<RunSummary> out;
  std::set<std::string> seen;
  for (const auto& f : files) {
    std::string id = std::filesystem::relative(f.parent_path(), in).generic_string();
    const auto man = f.parent_path() / "manifest_grpo.json";
    if (std::filesystem::exists(man)) {
      try {
        id = json::parse(read_text(man)).at("run_id").get<std::string>() + "@" + id;
      } catch (const json::exception&) {
      }
    }
    if (!seen.insert(id).second) id += "#" + std::to_string(out.size());
    out.push_back(summarize_metrics(id, metrics_from_jsonl(read_text(f))));
  }
  return out;
}

inline std::string summary_csv(const std::vector<RunSummary>& runs) {
  auto opt = [](const std::optional<double>& x) { return x ? fmt4(*x) : std::string(); };
  std::string s = "run_id,iterations,mean_reward,final_reward,final_kl,final_bench,final_retention\n";
  for (const auto& r : runs)
    s += r.run_id + "," + std::to_string(r.iterations) + "," + fmt4(r.mean_reward) + "," + fmt4(r.final_reward) + "," +
         fmt4(r.final_kl) + "," + opt(r.final_bench) + "," + opt(r.final_retention) + "\n";
  return s;
}

inline std::string summary_text(const std::vector<RunSummary>& runs) {
  std::string s;
  for (const auto& r : runs) {
    s += r.run_id + ": " + std::to_string(r.iterations) + " iterations, mean reward " + fmt4(r.mean_reward) +
         ", final reward " + fmt4(r.final_reward) + ", final KL " + fmt4(r.final_kl);
    if (r.final_bench) s += ", bench " + fmt4(*r.final_bench);
    if (r.final_retention) s += ", retention " + fmt4(*r.final_retention);
    s += "\n";
  }
  return s;
}

inline void write_report(const std::filesystem::path& in, const std::filesystem::path& out) {
  const auto runs = collect_runs(in);
  write_text(out / "summary.csv", summary_csv(runs));
  write_text(out / "summary.txt", summary_text(runs));
}

}  // namespace paralign
