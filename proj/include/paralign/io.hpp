#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "paralign/core.hpp"
#include "paralign/error.hpp"
#include "paralign/grpo.hpp"
#include "paralign/judge.hpp"
#include "paralign/reward.hpp"
#include "paralign/sft.hpp"
#include "paralign/synthworld.hpp"

namespace paralign {

using nlohmann::json;

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorKind::Io, "cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  f << content;
  if (!f) fail(ErrorKind::Io, "write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::vector<json> parse_jsonl(const std::string& text, const std::string& what = "jsonl") {
  std::vector<json> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorKind::Io, what + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline std::string to_jsonl(const std::vector<json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump() + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// style labels as "category/label"

inline std::string style_key(StyleLabel s, const WorldSpec& spec) {
  return category_name(s.category) + "/" + spec.style_name(s);
}

inline StyleLabel parse_style_key(const std::string& key, const WorldSpec& spec) {
  for (int id = 0; id < spec.n_styles(); ++id) {
    const auto s = spec.style_from_id(id);
    if (style_key(s, spec) == key) return s;
  }
  fail(ErrorKind::Io, "unknown style label '" + key + "'");
}

inline CategoryId parse_category(const std::string& name) {
  for (int c = 0; c <= static_cast<int>(CategoryId::Neutral); ++c)
    if (category_name(static_cast<CategoryId>(c)) == name) return static_cast<CategoryId>(c);
  fail(ErrorKind::Io, "unknown category '" + name + "'");
}

// ---------------------------------------------------------------------------
// rendered queries

inline json query_to_json(const RenderedQuery& q, const WorldSpec& spec) {
  return {{"query_id", q.query_id},
          {"category", category_name(q.category)},
          {"topic", q.topic},
          {"content_tokens", q.content},
          {"style_label", style_key(q.style, spec)},
          {"audio_tokens", q.streams.audio},
          {"text_tokens", q.streams.text},
          {"split", q.split}};
}

inline RenderedQuery query_from_json(const json& j, const WorldSpec& spec) {
  try {
    RenderedQuery q;
    q.query_id = j.at("query_id").get<int>();
    q.category = parse_category(j.at("category").get<std::string>());
    q.topic = j.at("topic").get<int>();
    q.content = j.at("content_tokens").get<TokenSeq>();
    q.style = parse_style_key(j.at("style_label").get<std::string>(), spec);
    q.streams.audio = j.at("audio_tokens").get<TokenSeq>();
    q.streams.text = j.at("text_tokens").get<TokenSeq>();
    q.split = j.at("split").get<std::string>();
    validate(q.streams, spec.audio_vocab(), spec.text_vocab());
    return q;
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, std::string("bad query record: ") + e.what());
  }
}

inline std::string queries_to_jsonl(const std::vector<RenderedQuery>& qs, const WorldSpec& spec) {
  std::string s;
  for (const auto& q : qs) s += query_to_json(q, spec).dump() + "\n";
  return s;
}

inline std::vector<RenderedQuery> queries_from_jsonl(const std::string& text, const WorldSpec& spec) {
  std::vector<RenderedQuery> out;
  for (const auto& j : parse_jsonl(text, "queries")) out.push_back(query_from_json(j, spec));
  return out;
}

// ---------------------------------------------------------------------------
// SFT episodes

inline std::string sft_to_jsonl(const SftDataset& ds, const WorldSpec& spec) {
  std::string s;
  for (std::size_t i = 0; i < ds.episodes.size(); ++i) {
    const auto& e = ds.episodes[i];
    const auto& p = ds.provenance[i];
    json j{{"query_id", p.query_id},
           {"style_label", style_key(p.style, spec)},
           {"oracle_content", p.oracle.content},
           {"oracle_style", style_key(p.oracle.style, spec)},
           {"input_audio", e.input.audio},
           {"input_text", e.input.text},
           {"output_audio", e.output.audio},
           {"output_text", e.output.text},
           {"loss_mask", e.loss_mask}};
    s += j.dump() + "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// preference pairs

inline json pair_to_json(const ScoredPair& p, const WorldSpec& spec) {
  return {{"query_id", p.query.query_id},
          {"category", category_name(p.query.category)},
          {"topic", p.query.topic},
          {"style_label", style_key(p.query.style, spec)},
          {"query_audio", p.query.streams.audio},
          {"query_text", p.query.streams.text},
          {"response_audio", p.response.audio},
          {"response_text", p.response.text},
          {"score", p.score},
          {"temperature", p.temperature},
          {"seed", p.seed}};
}

inline ScoredPair pair_from_json(const json& j, const WorldSpec& spec) {
  try {
    ScoredPair p;
    auto& q = p.query;
    q.query_id = j.at("query_id").get<int>();
    q.category = parse_category(j.at("category").get<std::string>());
    q.topic = j.at("topic").get<int>();
    q.style = parse_style_key(j.at("style_label").get<std::string>(), spec);
    q.streams.audio = j.at("query_audio").get<TokenSeq>();
    q.streams.text = j.at("query_text").get<TokenSeq>();
    const auto eos = eos_position(q.streams.text);
    q.content.assign(q.streams.text.begin(),
                     eos == std::string::npos ? q.streams.text.end() : q.streams.text.begin() + static_cast<std::ptrdiff_t>(eos));
    p.response.audio = j.at("response_audio").get<TokenSeq>();
    p.response.text = j.at("response_text").get<TokenSeq>();
    p.score = j.at("score").get<int>();
    p.temperature = j.at("temperature").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    validate(q.streams, spec.audio_vocab(), spec.text_vocab());
    validate(p.response, spec.audio_vocab(), spec.text_vocab());
    require(p.score >= 1 && p.score <= 5, ErrorKind::Io, "score outside 1..5");
    return p;
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, std::string("bad preference record: ") + e.what());
  }
}

inline std::string pairs_to_jsonl(const std::vector<ScoredPair>& ps, const WorldSpec& spec) {
  std::string s;
  for (const auto& p : ps) s += pair_to_json(p, spec).dump() + "\n";
  return s;
}

inline std::vector<ScoredPair> pairs_from_jsonl(const std::string& text, const WorldSpec& spec) {
  std::vector<ScoredPair> out;
  for (const auto& j : parse_jsonl(text, "preferences")) out.push_back(pair_from_json(j, spec));
  return out;
}

// ---------------------------------------------------------------------------
// GRPO metrics

inline json metrics_to_json(const IterationMetrics& m) {
  json j{{"iter", m.iter},
         {"mean_reward", m.mean_reward},
         {"reward_by_category", m.reward_by_category},
         {"kl_mean", m.kl_mean},
         {"clip_fraction", m.clip_fraction}};
  j["bench_score"] = m.bench_score ? json(*m.bench_score) : json(nullptr);
  j["retention_score"] = m.retention_score ? json(*m.retention_score) : json(nullptr);
  return j;
}

inline IterationMetrics metrics_from_json(const json& j) {
  try {
    IterationMetrics m;
    m.iter = j.at("iter").get<std::size_t>();
    m.mean_reward = j.at("mean_reward").get<double>();
    m.reward_by_category = j.at("reward_by_category").get<std::map<std::string, double>>();
    m.kl_mean = j.at("kl_mean").get<double>();
    m.clip_fraction = j.at("clip_fraction").get<double>();
    if (j.contains("bench_score") && !j["bench_score"].is_null()) m.bench_score = j["bench_score"].get<double>();
    if (j.contains("retention_score") && !j["retention_score"].is_null())
      m.retention_score = j["retention_score"].get<double>();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, std::string("bad metrics record: ") + e.what());
  }
}

inline std::string metrics_to_jsonl(const std::vector<IterationMetrics>& ms) {
  std::string s;
  for (const auto& m : ms) s += metrics_to_json(m).dump() + "\n";
  return s;
}

inline std::vector<IterationMetrics> metrics_from_jsonl(const std::string& text) {
  std::vector<IterationMetrics> out;
  for (const auto& j : parse_jsonl(text, "metrics")) out.push_back(metrics_from_json(j));
  return out;
}

// ---------------------------------------------------------------------------
// reports

inline json report_to_json(const TrainReport& r) {
  return {{"initial_loss", r.initial_loss},
          {"epoch_loss", r.epoch_loss},
          {"best_epoch", r.best_epoch},
          {"best_loss", r.best_loss}};
}

inline json filter_stats_to_json(const FilterStats& s) {
  return {{"candidates", s.candidates},
          {"after_neutrality", s.after_neutrality},
          {"after_reasonability", s.after_reasonability},
          {"after_relevance", s.after_relevance},
          {"survivors_by_category", s.survivors_by_category}};
}

// Fixed four-number formatting keeps CSVs stable and diff-friendly.
inline std::string fmt4(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

struct BenchRow {
  std::string model;
  BenchResult result;
};

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string s = "model";
  for (int c = 0; c < kNumCategories; ++c) s += "," + category_name(static_cast<CategoryId>(c));
  s += ",overall,n\n";
  for (const auto& r : rows) {
    s += r.model;
    for (int c = 0; c < kNumCategories; ++c) {
      auto it = r.result.by_category.find(category_name(static_cast<CategoryId>(c)));
      s += "," + (it == r.result.by_category.end() ? std::string("") : fmt4(it->second));
    }
    s += "," + fmt4(r.result.overall) + "," + std::to_string(r.result.n) + "\n";
  }
  return s;
}

// Flat key = value dump of a laid-out world, for reproducibility checks.
inline std::string worldspec_dump(const WorldSpec& w) {
  auto seq = [](const TokenSeq& t) {
    std::string s;
    for (std::size_t i = 0; i < t.size(); ++i) s += (i ? " " : "") + std::to_string(t[i]);
    return s;
  };
  std::ostringstream o;
  o << "n_topics = " << w.n_topics << "\n";
  o << "content_vocab_size = " << w.content_vocab_size << "\n";
  o << "n_styles = " << w.n_styles() << "\n";
  o << "audio_vocab = " << w.audio_vocab() << "\n";
  o << "text_vocab = " << w.text_vocab() << "\n";
  o << "query_len = " << w.query_len_min << " " << w.query_len_max << "\n";
  o << "L_max = " << w.L_max << "\n";
  o << "extraction_noise = " << w.extraction_noise << "\n";
  for (const auto& c : w.categories) {
    const auto name = category_name(c.id);
    std::string labels, opp, resp;
    for (int i = 0; i < c.size(); ++i) {
      labels += (i ? " " : "") + c.labels[static_cast<std::size_t>(i)];
      opp += (i ? " " : "") + c.labels[static_cast<std::size_t>(c.opposite[static_cast<std::size_t>(i)])];
      resp += (i ? " " : "") + c.labels[static_cast<std::size_t>(c.response[static_cast<std::size_t>(i)])];
    }
    o << "category." << name << ".labels = " << labels << "\n";
    o << "category." << name << ".opposite = " << opp << "\n";
    o << "category." << name << ".response = " << resp << "\n";
    o << "category." << name << ".default = " << c.labels[static_cast<std::size_t>(c.default_label)] << "\n";
  }
  for (int k = 0; k < w.n_topics; ++k) {
    o << "topic." << k << ".words = " << seq(w.topic_words[static_cast<std::size_t>(k)]) << "\n";
    o << "topic." << k << ".response = " << seq(w.response_map[static_cast<std::size_t>(k)]) << "\n";
  }
  o << "generic_response = " << seq(w.generic_response) << "\n";
  o << "style_marked_words = " << seq(TokenSeq(w.style_marked_words.begin(), w.style_marked_words.end())) << "\n";
  o << "filler_words = " << seq(w.filler_words) << "\n";
  std::string fp;
  for (const auto& [t, s] : w.forbidden_pairs) fp += (fp.empty() ? "" : " ") + std::to_string(t) + ":" + std::to_string(s);
  o << "forbidden_pairs = " << fp << "\n";
  for (std::size_t i = 0; i < w.retention.size(); ++i)
    o << "retention." << i << " = " << seq(w.retention[i].question) << " -> " << seq(w.retention[i].answer) << "\n";
  return o.str();
}

}  // namespace paralign
