#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "paralign/core.hpp"
#include "paralign/rng.hpp"

namespace paralign {

enum class CategoryId : int { Emotion = 0, Sarcasm = 1, Age = 2, Gender = 3, Neutral = 4 };

inline constexpr int kNumCategories = 4;

inline std::string category_name(CategoryId c) {
  switch (c) {
    case CategoryId::Emotion: return "emotion";
    case CategoryId::Sarcasm: return "sarcasm";
    case CategoryId::Age: return "age";
    case CategoryId::Gender: return "gender";
    case CategoryId::Neutral: return "neutral";
  }
  return "unknown";
}

struct StyleLabel {
  CategoryId category = CategoryId::Neutral;
  int label = 0;

  friend auto operator<=>(const StyleLabel&, const StyleLabel&) = default;
};

// One paralinguistic dimension. `opposite` is a fixed-point-free involution on
// label indices; `response` maps a speaker's label to the tone the ideal reply
// takes (within the same category).
struct Category {
  CategoryId id;
  std::vector<std::string> labels;
  std::vector<int> opposite;
  std::vector<int> response;
  int default_label = 0;

  int size() const { return static_cast<int>(labels.size()); }
};

inline std::vector<Category> standard_categories() {
  return {
      {CategoryId::Emotion,
       {"happy", "sad", "angry", "surprised", "fear", "disgust"},
       {1, 0, 3, 2, 5, 4},
       // share joy / comfort: upbeat speakers get an upbeat reply, distressed ones an empathic one
       {0, 1, 1, 0, 1, 1},
       0},
      {CategoryId::Sarcasm, {"sincere", "sarcastic"}, {1, 0}, {0, 1}, 0},
      {CategoryId::Age, {"adult", "child"}, {1, 0}, {0, 1}, 0},
      {CategoryId::Gender, {"male", "female"}, {1, 0}, {0, 1}, 0},
  };
}

struct RetentionItem {
  TokenSeq question;
  TokenSeq answer;
};

// Knobs from which a WorldSpec is laid out deterministically.
struct WorldParams {
  std::uint64_t layout_seed = 20251017;
  int n_topics = 12;
  int content_vocab_size = 64;
  int words_per_topic = 3;
  int n_marked_words = 6;
  int n_retention_words = 10;
  int n_retention_items = 24;
  int n_forbidden_pairs = 8;
  int query_len_min = 2;
  int query_len_max = 4;
  int response_len_min = 3;
  int response_len_max = 5;
  int L_max = 8;
  double extraction_noise = 0.0;
  double marked_word_prob = 0.1;
  double test_fraction = 0.2;
};

struct WorldSpec {
  std::vector<Category> categories;
  int n_topics = 0;
  int content_vocab_size = 0;
  std::vector<TokenSeq> topic_words;
  TokenSeq filler_words;
  std::set<Token> style_marked_words;
  TokenSeq retention_words;
  std::set<std::pair<int, int>> forbidden_pairs;  // (topic, global style id)
  std::vector<TokenSeq> response_map;
  TokenSeq generic_response;
  std::vector<RetentionItem> retention;
  int query_len_min = 2;
  int query_len_max = 4;
  int L_max = 8;
  double extraction_noise = 0.0;
  double marked_word_prob = 0.1;
  double test_fraction = 0.2;

  // Global style ids: category labels in category order, then the neutral tone.
  int n_styles() const {
    int n = 1;
    for (const auto& c : categories) n += c.size();
    return n;
  }
  int neutral_id() const { return n_styles() - 1; }
  int L_in() const { return query_len_max + 1; }
  std::size_t text_vocab() const { return static_cast<std::size_t>(content_vocab_size) + 2; }
  std::size_t audio_vocab() const { return text_vocab() * static_cast<std::size_t>(n_styles()); }

  const Category& category(CategoryId id) const { return categories.at(static_cast<std::size_t>(id)); }

  int style_id(StyleLabel s) const {
    if (s.category == CategoryId::Neutral) return neutral_id();
    int offset = 0;
    for (int c = 0; c < static_cast<int>(s.category); ++c) offset += categories[static_cast<std::size_t>(c)].size();
    return offset + s.label;
  }

  StyleLabel style_from_id(int id) const {
    require(id >= 0 && id < n_styles(), ErrorKind::InvalidArgument, "style id out of range");
    if (id == neutral_id()) return {CategoryId::Neutral, 0};
    for (const auto& c : categories) {
      if (id < c.size()) return {c.id, id};
      id -= c.size();
    }
    fail(ErrorKind::InvalidArgument, "style id out of range");
  }

  std::string style_name(StyleLabel s) const {
    if (s.category == CategoryId::Neutral) return "neutral";
    return category(s.category).labels.at(static_cast<std::size_t>(s.label));
  }

  bool valid_query_style(StyleLabel s) const {
    return s.category != CategoryId::Neutral && s.label >= 0 && s.label < category(s.category).size();
  }

  StyleLabel opposite(StyleLabel s) const {
    if (s.category == CategoryId::Neutral) return s;
    return {s.category, category(s.category).opposite.at(static_cast<std::size_t>(s.label))};
  }

  StyleLabel style_response(StyleLabel s) const {
    require(valid_query_style(s), ErrorKind::InvalidArgument, "not a query style");
    return {s.category, category(s.category).response.at(static_cast<std::size_t>(s.label))};
  }

  // The tone a style-deaf responder uses for a category.
  StyleLabel default_tone(CategoryId c) const { return style_response({c, category(c).default_label}); }

  bool is_content_token(Token t) const { return t >= kFirstRegular && static_cast<std::size_t>(t) < text_vocab(); }

  // Topic owning the first topic word in `content`, or -1.
  int topic_of(std::span<const Token> content) const {
    for (Token t : content)
      for (int k = 0; k < n_topics; ++k)
        if (std::find(topic_words[k].begin(), topic_words[k].end(), t) != topic_words[k].end()) return k;
    return -1;
  }
};

namespace detail {

inline TokenSeq draw_sequence(Rng& rng, const TokenSeq& pool, int len) {
  TokenSeq out;
  for (int i = 0; i < len; ++i) out.push_back(pool[rng.index(pool.size())]);
  return out;
}

}  // namespace detail

inline WorldSpec make_world(const WorldParams& p) {
  WorldSpec w;
  w.categories = standard_categories();
  w.n_topics = p.n_topics;
  w.content_vocab_size = p.content_vocab_size;
  w.query_len_min = p.query_len_min;
  w.query_len_max = p.query_len_max;
  w.L_max = p.L_max;
  w.extraction_noise = p.extraction_noise;
  w.marked_word_prob = p.marked_word_prob;
  w.test_fraction = p.test_fraction;

  require(p.n_topics >= 2, ErrorKind::Config, "n_topics must be at least 2");
  require(p.query_len_min >= 1 && p.query_len_max >= p.query_len_min, ErrorKind::Config, "bad query length range");
  require(p.response_len_min >= 1 && p.response_len_max >= p.response_len_min, ErrorKind::Config,
          "bad response length range");
  require(p.response_len_max + 1 <= p.L_max, ErrorKind::Config, "L_max must hold the longest response plus EOS");
  require(p.extraction_noise >= 0.0 && p.extraction_noise <= 1.0, ErrorKind::Config, "extraction_noise outside [0,1]");
  const int reserved = p.n_topics * p.words_per_topic + p.n_marked_words + p.n_retention_words;
  require(reserved + 3 <= p.content_vocab_size, ErrorKind::Config,
          "content_vocab_size too small for topic, marked and retention words");

  Token next = kFirstRegular;
  w.topic_words.resize(static_cast<std::size_t>(p.n_topics));
  for (auto& words : w.topic_words)
    for (int i = 0; i < p.words_per_topic; ++i) words.push_back(next++);
  for (int i = 0; i < p.n_marked_words; ++i) w.style_marked_words.insert(next++);
  for (int i = 0; i < p.n_retention_words; ++i) w.retention_words.push_back(next++);
  while (static_cast<std::size_t>(next) < w.text_vocab()) w.filler_words.push_back(next++);

  Rng rng(derive_seed(p.layout_seed, Stream::Layout));
  TokenSeq answer_pool;
  for (Token t = kFirstRegular; static_cast<std::size_t>(t) < w.text_vocab(); ++t)
    if (!w.style_marked_words.contains(t)) answer_pool.push_back(t);

  auto span_len = [&](int lo, int hi) { return lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1))); };

  w.generic_response = detail::draw_sequence(rng, w.filler_words, p.response_len_min);
  std::set<TokenSeq> used{w.generic_response};
  for (int k = 0; k < p.n_topics; ++k) {
    TokenSeq r;
    do {
      r = detail::draw_sequence(rng, w.filler_words, span_len(p.response_len_min, p.response_len_max));
    } while (used.contains(r));
    used.insert(r);
    w.response_map.push_back(std::move(r));
  }

  std::set<TokenSeq> questions;
  const int max_items = p.n_retention_words * (p.n_retention_words - 1);
  require(p.n_retention_items <= max_items, ErrorKind::Config, "too many retention items for retention vocabulary");
  while (static_cast<int>(w.retention.size()) < p.n_retention_items) {
    const auto i = rng.index(w.retention_words.size());
    const auto j = rng.index(w.retention_words.size());
    if (i == j) continue;
    TokenSeq q{w.retention_words[i], w.retention_words[j]};
    if (!questions.insert(q).second) continue;
    TokenSeq a;
    do {
      a = detail::draw_sequence(rng, answer_pool, span_len(p.response_len_min, p.response_len_max));
    } while (used.contains(a));
    used.insert(a);
    w.retention.push_back({std::move(q), std::move(a)});
  }

  const int n_query_styles = w.n_styles() - 1;
  require(p.n_forbidden_pairs <= p.n_topics * n_query_styles / 2, ErrorKind::Config, "too many forbidden pairs");
  while (static_cast<int>(w.forbidden_pairs.size()) < p.n_forbidden_pairs) {
    const int topic = static_cast<int>(rng.index(static_cast<std::size_t>(p.n_topics)));
    const int style = static_cast<int>(rng.index(static_cast<std::size_t>(n_query_styles)));
    w.forbidden_pairs.insert({topic, style});
  }
  return w;
}

inline WorldSpec default_world() { return make_world(WorldParams{}); }

// A spoken content paired with two contrasting speaking styles.
struct ContrastQuery {
  int query_id = 0;
  int topic = 0;
  TokenSeq content;
  StyleLabel style_a;
  StyleLabel style_b;
  CategoryId category = CategoryId::Emotion;

  friend bool operator==(const ContrastQuery&, const ContrastQuery&) = default;
};

// One (content, style) realization of a query: the unit the model actually hears.
struct RenderedQuery {
  int query_id = 0;
  CategoryId category = CategoryId::Emotion;
  int topic = 0;
  TokenSeq content;
  StyleLabel style;
  StreamPair streams;
  std::string split;

  friend bool operator==(const RenderedQuery&, const RenderedQuery&) = default;
};

inline std::vector<ContrastQuery> generate_candidates(const WorldSpec& spec, std::size_t n, std::uint64_t seed) {
  require(n >= 1, ErrorKind::InvalidArgument, "need at least one candidate");
  std::vector<ContrastQuery> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, Stream::Candidates, {i}));
    ContrastQuery q;
    q.query_id = static_cast<int>(i);
    q.category = static_cast<CategoryId>(rng.index(kNumCategories));
    q.topic = static_cast<int>(rng.index(static_cast<std::size_t>(spec.n_topics)));
    const auto& cat = spec.category(q.category);
    const int a = static_cast<int>(rng.index(static_cast<std::size_t>(cat.size())));
    int b = static_cast<int>(rng.index(static_cast<std::size_t>(cat.size() - 1)));
    if (b >= a) ++b;
    q.style_a = {q.category, a};
    q.style_b = {q.category, b};

    const auto len = spec.query_len_min + static_cast<int>(rng.index(static_cast<std::size_t>(
                                              spec.query_len_max - spec.query_len_min + 1)));
    const auto& words = spec.topic_words[static_cast<std::size_t>(q.topic)];
    q.content.push_back(words[rng.index(words.size())]);
    const TokenSeq marked(spec.style_marked_words.begin(), spec.style_marked_words.end());
    for (int k = 1; k < len; ++k) {
      if (!marked.empty() && rng.bernoulli(spec.marked_word_prob))
        q.content.push_back(marked[rng.index(marked.size())]);
      else
        q.content.push_back(spec.filler_words[rng.index(spec.filler_words.size())]);
    }
    out.push_back(std::move(q));
  }
  return out;
}

inline bool filter_neutrality(const ContrastQuery& q, const WorldSpec& spec) {
  return std::none_of(q.content.begin(), q.content.end(),
                      [&](Token t) { return spec.style_marked_words.contains(t); });
}

inline bool filter_reasonability(const ContrastQuery& q, const WorldSpec& spec) {
  return !spec.forbidden_pairs.contains({q.topic, spec.style_id(q.style_a)}) &&
         !spec.forbidden_pairs.contains({q.topic, spec.style_id(q.style_b)});
}

struct OracleResponse {
  TokenSeq content;
  StyleLabel style;

  friend bool operator==(const OracleResponse&, const OracleResponse&) = default;
};

inline OracleResponse oracle_response(std::span<const Token> content, StyleLabel style, const WorldSpec& spec) {
  const int topic = spec.topic_of(content);
  require(topic >= 0, ErrorKind::InvalidArgument, "content carries no topic word");
  require(spec.valid_query_style(style), ErrorKind::InvalidArgument, "invalid query style");
  require(!spec.forbidden_pairs.contains({topic, spec.style_id(style)}), ErrorKind::ForbiddenPair,
          "style " + spec.style_name(style) + " is unreasonable for topic " + std::to_string(topic));
  return {spec.response_map[static_cast<std::size_t>(topic)], spec.style_response(style)};
}

inline bool filter_relevance(const ContrastQuery& q, const WorldSpec& spec) {
  // Compared without the reasonability check so the filters stay independent.
  const auto& resp = spec.response_map.at(static_cast<std::size_t>(spec.topic_of(q.content)));
  OracleResponse a{resp, spec.style_response(q.style_a)};
  OracleResponse b{resp, spec.style_response(q.style_b)};
  return !(a == b);
}

struct FilterStats {
  std::size_t candidates = 0;
  std::size_t after_neutrality = 0;
  std::size_t after_reasonability = 0;
  std::size_t after_relevance = 0;
  std::map<std::string, std::size_t> survivors_by_category;
};

inline std::vector<ContrastQuery> run_filters(const std::vector<ContrastQuery>& candidates, const WorldSpec& spec,
                                              FilterStats* stats = nullptr) {
  FilterStats s;
  s.candidates = candidates.size();
  for (int c = 0; c < kNumCategories; ++c) s.survivors_by_category[category_name(static_cast<CategoryId>(c))] = 0;
  std::vector<ContrastQuery> out;
  for (const auto& q : candidates) {
    if (!filter_neutrality(q, spec)) continue;
    ++s.after_neutrality;
    if (!filter_reasonability(q, spec)) continue;
    ++s.after_reasonability;
    if (!filter_relevance(q, spec)) continue;
    ++s.after_relevance;
    ++s.survivors_by_category[category_name(q.category)];
    out.push_back(q);
  }
  if (stats) *stats = s;
  return out;
}

// Toy speech synthesis: every audio token carries both the content token and
// the speaking style, audio = content * n_styles + style.
inline Token encode_audio(Token content, int style_id, const WorldSpec& spec) {
  const auto id = static_cast<std::int64_t>(content) * spec.n_styles() + style_id;
  require(id < static_cast<std::int64_t>(spec.audio_vocab()), ErrorKind::VocabOverflow,
          "audio id " + std::to_string(id) + " exceeds audio vocabulary");
  return static_cast<Token>(id);
}

inline std::pair<Token, int> decode_audio(Token audio, const WorldSpec& spec) {
  const int n = spec.n_styles();
  require(audio >= kFirstRegular * n && static_cast<std::size_t>(audio) < spec.audio_vocab(),
          ErrorKind::MalformedStream, "audio id " + std::to_string(audio) + " is not decodable");
  return {audio / n, audio % n};
}

inline StreamPair render_utterance(std::span<const Token> content, StyleLabel style, const WorldSpec& spec,
                                   std::size_t padded_len) {
  for (Token t : content)
    require(spec.is_content_token(t), ErrorKind::VocabOverflow, "content token " + std::to_string(t) + " outside vocab");
  const int sid = spec.style_id(style);
  TokenSeq audio, text;
  for (Token t : content) {
    audio.push_back(encode_audio(t, sid, spec));
    text.push_back(t);
  }
  audio.push_back(kEos);
  text.push_back(kEos);
  return pad_streams(std::move(audio), std::move(text), padded_len);
}

inline StreamPair render_query(std::span<const Token> content, StyleLabel style, const WorldSpec& spec) {
  require(!content.empty(), ErrorKind::InvalidArgument, "empty query content");
  return render_utterance(content, style, spec, static_cast<std::size_t>(spec.L_in()));
}

inline StreamPair render_response(std::span<const Token> content, StyleLabel style, const WorldSpec& spec) {
  return render_utterance(content, style, spec, static_cast<std::size_t>(spec.L_max));
}

inline StreamPair render_oracle(const OracleResponse& r, const WorldSpec& spec) {
  return render_response(r.content, r.style, spec);
}

inline RenderedQuery render_item(const ContrastQuery& q, StyleLabel style, const WorldSpec& spec,
                                 std::string split = "") {
  return {q.query_id, q.category, q.topic, q.content, style, render_query(q.content, style, spec), std::move(split)};
}

// Both styles of every contrast query, in query order (a then b).
inline std::vector<RenderedQuery> render_all(const std::vector<ContrastQuery>& qs, const WorldSpec& spec,
                                             const std::string& split = "") {
  std::vector<RenderedQuery> out;
  out.reserve(2 * qs.size());
  for (const auto& q : qs) {
    out.push_back(render_item(q, q.style_a, spec, split));
    out.push_back(render_item(q, q.style_b, spec, split));
  }
  return out;
}

struct Split {
  std::vector<ContrastQuery> train;
  std::vector<ContrastQuery> test;
  std::vector<int> train_topics;
  std::vector<int> test_topics;
};

inline Split split_train_test(const std::vector<ContrastQuery>& queries, std::uint64_t seed,
                              double test_fraction = 0.2) {
  std::set<int> present;
  for (const auto& q : queries) present.insert(q.topic);
  require(present.size() >= 2, ErrorKind::InsufficientTopics,
          "need at least 2 topics to split, found " + std::to_string(present.size()));
  std::vector<int> topics(present.begin(), present.end());
  Rng rng(derive_seed(seed, Stream::Split));
  rng.shuffle(topics);
  auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(topics.size())));
  n_test = std::clamp<std::size_t>(n_test, 1, topics.size() - 1);

  Split s;
  s.test_topics.assign(topics.begin(), topics.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train_topics.assign(topics.begin() + static_cast<std::ptrdiff_t>(n_test), topics.end());
  std::sort(s.test_topics.begin(), s.test_topics.end());
  std::sort(s.train_topics.begin(), s.train_topics.end());
  const std::set<int> test_set(s.test_topics.begin(), s.test_topics.end());
  for (const auto& q : queries) (test_set.contains(q.topic) ? s.test : s.train).push_back(q);
  return s;
}

// Retention (general capability) prompts: every retention question in every
// query style. The expected reply is the fixed answer in the neutral tone.
struct RetentionPrompt {
  std::size_t item = 0;
  StyleLabel style;
  StreamPair streams;
  StreamPair expected;
};

inline std::vector<RetentionPrompt> retention_prompts(const WorldSpec& spec) {
  std::vector<RetentionPrompt> out;
  const StyleLabel neutral{CategoryId::Neutral, 0};
  for (std::size_t i = 0; i < spec.retention.size(); ++i) {
    for (int s = 0; s < spec.neutral_id(); ++s) {
      const auto style = spec.style_from_id(s);
      out.push_back({i, style, render_query(spec.retention[i].question, style, spec),
                     render_response(spec.retention[i].answer, neutral, spec)});
    }
  }
  return out;
}

}  // namespace paralign
