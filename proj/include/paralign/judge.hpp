#pragma once

#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "paralign/core.hpp"
#include "paralign/rng.hpp"
#include "paralign/synthworld.hpp"

namespace paralign {

class FitnessScore {
 public:
  explicit FitnessScore(int value) : value_(value) {
    require(value >= 1 && value <= 5, ErrorKind::InvalidArgument, "fitness score outside 1..5");
  }
  int value() const { return value_; }
  friend auto operator<=>(const FitnessScore&, const FitnessScore&) = default;

 private:
  int value_;
};

enum class ContentMatch : int { Wrong = 0, Generic = 1, Target = 2 };
enum class StyleRelation : int { Opposite = 0, OtherMismatch = 1, Neutral = 2, Target = 3 };

// Deterministic scoring guideline over (content match, style relation).
struct Rubric {
  std::array<std::array<int, 4>, 3> table;

  static Rubric standard() {
    Rubric r;
    //            opposite other neutral target
    r.table[0] = {1, 1, 1, 2};  // wrong content
    r.table[1] = {1, 1, 2, 3};  // generic content
    r.table[2] = {1, 2, 4, 5};  // target content
    return r;
  }

  FitnessScore score(ContentMatch c, StyleRelation s) const {
    return FitnessScore(table[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)]);
  }

  // Improving either coordinate never lowers the score.
  bool monotone() const {
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t s = 0; s < 4; ++s) {
        if (c + 1 < 3 && table[c + 1][s] < table[c][s]) return false;
        if (s + 1 < 4 && table[c][s + 1] < table[c][s]) return false;
      }
    return true;
  }
};

// Audio tokens up to EOS (a PAD also ends the utterance).
inline TokenSeq spoken_audio(const StreamPair& output) {
  TokenSeq out;
  for (Token t : output.audio) {
    if (t == kEos || t == kPad) break;
    out.push_back(t);
  }
  return out;
}

inline TokenSeq extract_content(const StreamPair& output, const WorldSpec& spec) {
  TokenSeq content;
  for (Token t : spoken_audio(output)) content.push_back(decode_audio(t, spec).first);
  return content;
}

inline StyleLabel extract_style(const StreamPair& output, const WorldSpec& spec, std::uint64_t seed) {
  const auto audio = spoken_audio(output);
  require(!audio.empty(), ErrorKind::EmptyResponse, "response has no spoken tokens");
  std::vector<int> counts(static_cast<std::size_t>(spec.n_styles()), 0);
  for (Token t : audio) ++counts[static_cast<std::size_t>(decode_audio(t, spec).second)];
  // ties go to the lowest style id
  int best = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  if (spec.extraction_noise > 0.0) {
    Rng rng(seed);
    if (rng.bernoulli(spec.extraction_noise)) {
      int other = static_cast<int>(rng.index(static_cast<std::size_t>(spec.n_styles() - 1)));
      if (other >= best) ++other;
      best = other;
    }
  }
  return spec.style_from_id(best);
}

inline ContentMatch content_match(std::span<const Token> query_content, std::span<const Token> response_content,
                                  const WorldSpec& spec) {
  const int topic = spec.topic_of(query_content);
  require(topic >= 0, ErrorKind::InvalidArgument, "query content carries no topic word");
  const auto& target = spec.response_map[static_cast<std::size_t>(topic)];
  if (std::equal(target.begin(), target.end(), response_content.begin(), response_content.end()))
    return ContentMatch::Target;
  if (std::equal(spec.generic_response.begin(), spec.generic_response.end(), response_content.begin(),
                 response_content.end()))
    return ContentMatch::Generic;
  return ContentMatch::Wrong;
}

inline StyleRelation style_relation(StyleLabel response_style, StyleLabel target, const WorldSpec& spec) {
  if (response_style == target) return StyleRelation::Target;
  if (response_style.category == CategoryId::Neutral) return StyleRelation::Neutral;
  if (response_style == spec.opposite(target)) return StyleRelation::Opposite;
  return StyleRelation::OtherMismatch;
}

inline FitnessScore score_fitness(std::span<const Token> query_content, StyleLabel query_style,
                                  std::span<const Token> response_content, StyleLabel response_style,
                                  const Rubric& rubric, const WorldSpec& spec) {
  require(spec.valid_query_style(query_style), ErrorKind::InvalidArgument, "invalid query style");
  for (Token t : query_content)
    require(spec.is_content_token(t), ErrorKind::VocabOverflow, "query content outside vocab");
  const auto c = content_match(query_content, response_content, spec);
  const auto s = style_relation(response_style, spec.style_response(query_style), spec);
  return rubric.score(c, s);
}

// The whole automatic pipeline on one rendered response: content and style
// extraction, then the rubric. Undecodable or empty responses get the floor.
inline FitnessScore judge_response(const RenderedQuery& query, const StreamPair& response, const WorldSpec& spec,
                                   std::uint64_t seed, const Rubric& rubric = Rubric::standard()) {
  try {
    const auto content = extract_content(response, spec);
    const auto style = extract_style(response, spec, seed);
    return score_fitness(query.content, query.style, content, style, rubric, spec);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::MalformedStream || e.kind() == ErrorKind::EmptyResponse) return FitnessScore(1);
    throw;
  }
}

struct BenchResult {
  std::map<std::string, double> by_category;
  double overall = 0.0;
  std::size_t n = 0;
};

// Scores one response per rendered test query. `respond` maps a RenderedQuery to
// response streams; judging seeds depend only on the item index.
template <class Responder>
BenchResult bench_eval(Responder&& respond, const std::vector<RenderedQuery>& test_items, const WorldSpec& spec,
                       std::uint64_t seed, const Rubric& rubric = Rubric::standard()) {
  require(!test_items.empty(), ErrorKind::InvalidArgument, "empty test set");
  std::map<std::string, std::pair<double, std::size_t>> acc;
  double total = 0.0;
  for (std::size_t i = 0; i < test_items.size(); ++i) {
    const auto& q = test_items[i];
    const StreamPair response = respond(q);
    const int s = judge_response(q, response, spec, derive_seed(seed, Stream::Bench, {i}), rubric).value();
    auto& slot = acc[category_name(q.category)];
    slot.first += s;
    slot.second += 1;
    total += s;
  }
  BenchResult r;
  for (const auto& [name, v] : acc) r.by_category[name] = v.first / static_cast<double>(v.second);
  r.n = test_items.size();
  r.overall = total / static_cast<double>(r.n);
  return r;
}

// Topline responder: ground-truth style label and the oracle reply.
inline auto oracle_responder(const WorldSpec& spec) {
  return [&spec](const RenderedQuery& q) { return render_oracle(oracle_response(q.content, q.style, spec), spec); };
}

// Content-correct but style-deaf: always replies in the category's default tone.
inline auto default_tone_responder(const WorldSpec& spec) {
  return [&spec](const RenderedQuery& q) {
    const auto& content = spec.response_map.at(static_cast<std::size_t>(spec.topic_of(q.content)));
    return render_response(content, spec.default_tone(q.category), spec);
  };
}

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), ErrorKind::DegenerateInput, "pearson inputs differ in length");
  require(xs.size() >= 2, ErrorKind::DegenerateInput, "pearson needs at least two points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0, ErrorKind::DegenerateInput, "pearson input has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace paralign
