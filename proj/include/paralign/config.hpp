#pragma once

#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "paralign/error.hpp"
#include "paralign/grpo.hpp"
#include "paralign/sft.hpp"
#include "paralign/synthworld.hpp"
#include "paralign/trunk.hpp"

namespace paralign {

// Everything a run needs. A run is fully determined by (RunConfig, seed).
struct SftStage {
  std::size_t n_prompts = 150;
  std::size_t replay_general = 500;  // general-task episodes replayed with text-only supervision
  TrainHyper hyper{1e-3, 32, 5, 3, 1e-4, 1};
};

struct RewardStage {
  std::size_t n_queries = 1024;  // Q
  std::size_t samples_per_query = 8;  // K
  double temperature = 1.3;
  std::size_t d_model = 32;
  std::size_t ff_width = 64;
  std::size_t validation_queries = 64;
  std::size_t validation_samples = 4;
  TrainHyper hyper{1e-3, 32, 40, 5, 1e-4, 1};
};

struct AblateStage {
  std::vector<std::size_t> B_grid{4, 8, 16, 32};
  std::vector<std::size_t> G_grid{2, 4, 8};
  std::vector<double> beta_grid{0.0, 0.2};
  std::size_t iterations = 300;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  WorldParams world;
  std::size_t n_candidates = 2000;
  std::size_t d_model = 64;
  std::size_t ff_width = 128;
  PretrainMix pretrain{2000, 1, 1000, 2};
  TrainHyper pretrain_hyper{3e-3, 32, 20, 3, 1e-4, 1};
  SftStage sft;
  RewardStage reward;
  GrpoConfig grpo;
  AblateStage ablate;
};

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  static const char* d = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, x >>= 4) s[static_cast<std::size_t>(i)] = d[x & 15];
  return s;
}

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) fail(ErrorKind::Config, "key '" + key + "': cannot parse '" + v + "'");
  return out;
}

template <class T>
std::string show(T x) {
  if constexpr (std::is_floating_point_v<T>) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);  // shortest round-trip form
    return std::string(buf, p);
  } else {
    return std::to_string(x);
  }
}

struct Binding {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <class T>
Binding make_binding(std::string section, std::string key, T& ref) {
  const std::string full = section + "." + key;
  return {section, key, [&ref, full](const std::string& v) { ref = parse_number<T>(full, v); },
          [&ref] { return show(ref); }};
}

template <class T>
Binding bind_list(std::string section, std::string key, std::vector<T>& ref) {
  const std::string full = section + "." + key;
  return {section, key,
          [&ref, full](const std::string& v) {
            std::vector<T> out;
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(full, trim(item)));
            if (out.empty()) fail(ErrorKind::Config, "key '" + full + "': empty list");
            ref = std::move(out);
          },
          [&ref] {
            std::string s;
            for (std::size_t i = 0; i < ref.size(); ++i) s += (i ? "," : "") + show(ref[i]);
            return s;
          }};
}

inline void bind_hyper(std::vector<Binding>& b, const std::string& sec, TrainHyper& h) {
  b.push_back(make_binding(sec, "lr", h.lr));
  b.push_back(make_binding(sec, "batch", h.batch));
  b.push_back(make_binding(sec, "max_epochs", h.max_epochs));
  b.push_back(make_binding(sec, "patience", h.patience));
  b.push_back(make_binding(sec, "min_delta", h.min_delta));
}

// Every settable key, in dump order.
inline std::vector<Binding> bindings(RunConfig& c) {
  std::vector<Binding> b;
  b.push_back(make_binding("run", "seed", c.seed));
  b.push_back(make_binding("run", "workers", c.workers));

  auto& w = c.world;
  b.push_back(make_binding("world", "layout_seed", w.layout_seed));
  b.push_back(make_binding("world", "n_topics", w.n_topics));
  b.push_back(make_binding("world", "content_vocab_size", w.content_vocab_size));
  b.push_back(make_binding("world", "words_per_topic", w.words_per_topic));
  b.push_back(make_binding("world", "n_marked_words", w.n_marked_words));
  b.push_back(make_binding("world", "n_retention_words", w.n_retention_words));
  b.push_back(make_binding("world", "n_retention_items", w.n_retention_items));
  b.push_back(make_binding("world", "n_forbidden_pairs", w.n_forbidden_pairs));
  b.push_back(make_binding("world", "query_len_min", w.query_len_min));
  b.push_back(make_binding("world", "query_len_max", w.query_len_max));
  b.push_back(make_binding("world", "response_len_min", w.response_len_min));
  b.push_back(make_binding("world", "response_len_max", w.response_len_max));
  b.push_back(make_binding("world", "L_max", w.L_max));
  b.push_back(make_binding("world", "extraction_noise", w.extraction_noise));
  b.push_back(make_binding("world", "marked_word_prob", w.marked_word_prob));
  b.push_back(make_binding("world", "test_fraction", w.test_fraction));
  b.push_back(make_binding("world", "n_candidates", c.n_candidates));

  b.push_back(make_binding("arch", "d_model", c.d_model));
  b.push_back(make_binding("arch", "ff_width", c.ff_width));

  b.push_back(make_binding("pretrain", "n_general", c.pretrain.n_general));
  b.push_back(make_binding("pretrain", "tone_variants", c.pretrain.tone_variants));
  b.push_back(make_binding("pretrain", "n_readback", c.pretrain.n_readback));
  b.push_back(make_binding("pretrain", "retention_copies", c.pretrain.retention_copies));
  bind_hyper(b, "pretrain", c.pretrain_hyper);

  b.push_back(make_binding("sft", "n_prompts", c.sft.n_prompts));
  b.push_back(make_binding("sft", "replay_general", c.sft.replay_general));
  bind_hyper(b, "sft", c.sft.hyper);

  auto& r = c.reward;
  b.push_back(make_binding("reward", "n_queries", r.n_queries));
  b.push_back(make_binding("reward", "samples_per_query", r.samples_per_query));
  b.push_back(make_binding("reward", "temperature", r.temperature));
  b.push_back(make_binding("reward", "d_model", r.d_model));
  b.push_back(make_binding("reward", "ff_width", r.ff_width));
  b.push_back(make_binding("reward", "validation_queries", r.validation_queries));
  b.push_back(make_binding("reward", "validation_samples", r.validation_samples));
  bind_hyper(b, "reward", r.hyper);

  auto& g = c.grpo;
  b.push_back(make_binding("grpo", "B", g.B));
  b.push_back(make_binding("grpo", "G", g.G));
  b.push_back(make_binding("grpo", "clip_eps", g.clip_eps));
  b.push_back(make_binding("grpo", "kl_beta", g.kl_beta));
  b.push_back(make_binding("grpo", "temperature", g.temperature));
  b.push_back(make_binding("grpo", "lr", g.lr));
  b.push_back(make_binding("grpo", "iterations", g.iterations));
  b.push_back({"grpo", "reward_source", [&g](const std::string& v) { g.reward_source = parse_reward_source(v); },
               [&g] { return reward_source_name(g.reward_source); }});
  b.push_back(make_binding("grpo", "sigma_floor", g.sigma_floor));
  b.push_back(make_binding("grpo", "inner_steps", g.inner_steps));
  b.push_back(make_binding("grpo", "eval_every", g.eval_every));

  b.push_back(bind_list("ablate", "B_grid", c.ablate.B_grid));
  b.push_back(bind_list("ablate", "G_grid", c.ablate.G_grid));
  b.push_back(bind_list("ablate", "beta_grid", c.ablate.beta_grid));
  b.push_back(make_binding("ablate", "iterations", c.ablate.iterations));
  return b;
}

inline std::string env_name(const std::string& section, const std::string& key) {
  std::string s = "PARALIGN_" + section + "_" + key;
  for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace detail

struct LoadedConfig {
  RunConfig config;
  std::string hash;  // FNV-1a over the file bytes plus applied overrides
  std::vector<std::string> overrides;
};

inline void check_config(const RunConfig& c) {
  auto req = [](bool ok, const std::string& key, const std::string& why) {
    if (!ok) fail(ErrorKind::Config, "key '" + key + "': " + why);
  };
  const auto& w = c.world;
  req(w.n_topics >= 2, "world.n_topics", "need at least 2 topics");
  req(w.content_vocab_size >= 1, "world.content_vocab_size", "must be positive");
  req(w.query_len_min >= 1 && w.query_len_min <= w.query_len_max, "world.query_len_min", "bad query length range");
  req(w.response_len_min >= 1 && w.response_len_min <= w.response_len_max, "world.response_len_min",
      "bad response length range");
  req(w.L_max > w.response_len_max, "world.L_max", "must exceed response_len_max (room for EOS)");
  req(w.extraction_noise >= 0.0 && w.extraction_noise <= 1.0, "world.extraction_noise", "must lie in [0,1]");
  req(w.marked_word_prob >= 0.0 && w.marked_word_prob <= 1.0, "world.marked_word_prob", "must lie in [0,1]");
  req(w.test_fraction > 0.0 && w.test_fraction < 1.0, "world.test_fraction", "must lie in (0,1)");
  req(c.n_candidates >= 1, "world.n_candidates", "must be at least 1");
  req(c.d_model >= 1, "arch.d_model", "must be positive");
  req(c.ff_width >= 1, "arch.ff_width", "must be positive");
  req(c.workers >= 1, "run.workers", "must be at least 1");
  req(c.pretrain.n_general >= 1, "pretrain.n_general", "must be at least 1");
  for (const auto& [sec, h] : {std::pair<std::string, const TrainHyper*>{"pretrain", &c.pretrain_hyper},
                               {"sft", &c.sft.hyper},
                               {"reward", &c.reward.hyper}}) {
    req(h->lr > 0.0, sec + ".lr", "must be positive");
    req(h->batch >= 1, sec + ".batch", "must be at least 1");
    req(h->max_epochs >= 1, sec + ".max_epochs", "must be at least 1");
    req(h->patience >= 1, sec + ".patience", "must be at least 1");
  }
  req(c.sft.n_prompts >= 1, "sft.n_prompts", "must be at least 1");
  req(c.reward.n_queries >= 1, "reward.n_queries", "must be at least 1");
  req(c.reward.samples_per_query >= 2, "reward.samples_per_query", "K must be at least 2");
  req(c.reward.temperature > 0.0, "reward.temperature", "must be positive");
  req(c.reward.d_model >= 1 && c.reward.ff_width >= 1, "reward.d_model", "must be positive");
  req(c.reward.validation_queries * c.reward.validation_samples >= 30, "reward.validation_queries",
      "need at least 30 held-out pairs");
  const auto& g = c.grpo;
  req(g.B >= 1, "grpo.B", "must be at least 1");
  req(g.G >= 2, "grpo.G", "must be at least 2");
  req(g.clip_eps > 0.0 && g.clip_eps < 1.0, "grpo.clip_eps", "must lie in (0,1)");
  req(g.kl_beta >= 0.0, "grpo.kl_beta", "must be non-negative");
  req(g.temperature > 0.0, "grpo.temperature", "must be positive");
  req(g.lr > 0.0, "grpo.lr", "must be positive");
  req(g.iterations >= 1, "grpo.iterations", "must be at least 1");
  req(g.sigma_floor > 0.0, "grpo.sigma_floor", "must be positive");
  req(g.inner_steps >= 1, "grpo.inner_steps", "must be at least 1");
  for (auto B : c.ablate.B_grid) req(B >= 1, "ablate.B_grid", "entries must be at least 1");
  for (auto G : c.ablate.G_grid) req(G >= 2, "ablate.G_grid", "entries must be at least 2");
  for (auto b : c.ablate.beta_grid) req(b >= 0.0, "ablate.beta_grid", "entries must be non-negative");
  req(c.ablate.iterations >= 1, "ablate.iterations", "must be at least 1");
}

// INI text: [section] headers, key = value lines, '#' or ';' comments.
// Unknown sections/keys are errors. Environment variables named
// PARALIGN_<SECTION>_<KEY> override file values.
inline LoadedConfig parse_config(const std::string& text, bool use_env = true) {
  LoadedConfig out;
  auto binds = detail::bindings(out.config);
  std::map<std::string, detail::Binding*> by_name;
  for (auto& b : binds) by_name[b.section + "." + b.key] = &b;

  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto cut = line.find_first_of("#;");
    const std::string s = detail::trim(cut == std::string::npos ? line : line.substr(0, cut));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail(ErrorKind::Config, "line " + std::to_string(lineno) + ": malformed section header");
      section = detail::trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::Config, "line " + std::to_string(lineno) + ": expected key = value, got '" + s + "'");
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string full = section + "." + key;
    auto it = by_name.find(full);
    if (it == by_name.end()) fail(ErrorKind::Config, "key '" + full + "': unknown key");
    it->second->set(detail::trim(s.substr(eq + 1)));
  }

  std::uint64_t h = fnv1a64(text);
  if (use_env) {
    for (auto& b : binds) {
      const auto name = detail::env_name(b.section, b.key);
      if (const char* v = std::getenv(name.c_str())) {
        b.set(detail::trim(v));
        out.overrides.push_back(name + "=" + v);
      }
    }
  }
  for (const auto& o : out.overrides) h = fnv1a64("\n" + o, h);
  out.hash = hex64(h);
  check_config(out.config);
  return out;
}

inline LoadedConfig load_config(const std::string& path, bool use_env = true) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), use_env);
}

// Canonical dump of every key (the effective configuration).
inline std::string dump_config(RunConfig c) {
  std::string out, section;
  for (const auto& b : detail::bindings(c)) {
    if (b.section != section) {
      out += (section.empty() ? "[" : "\n[") + b.section + "]\n";
      section = b.section;
    }
    out += b.key + " = " + b.get() + "\n";
  }
  return out;
}

inline ArchSpec policy_arch(const RunConfig& c, const WorldSpec& w) {
  ArchSpec a{w.audio_vocab(), w.text_vocab(), c.d_model, static_cast<std::size_t>(w.L_in() + w.L_max), c.ff_width, 1};
  a.validate();
  return a;
}

inline ArchSpec reward_arch(const RunConfig& c, const WorldSpec& w) {
  ArchSpec a{w.audio_vocab(), w.text_vocab(), c.reward.d_model, static_cast<std::size_t>(w.L_in() + w.L_max),
             c.reward.ff_width, 1};
  a.validate();
  return a;
}

}  // namespace paralign
