#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "paralign/error.hpp"

namespace paralign {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

// Reserved ids, identical in the audio and the text vocabulary.
inline constexpr Token kPad = 0;
inline constexpr Token kEos = 1;
inline constexpr Token kFirstRegular = 2;

// Aligned audio/text token streams of one utterance, padded to a common length.
struct StreamPair {
  TokenSeq audio;
  TokenSeq text;

  std::size_t len() const { return audio.size(); }

  friend bool operator==(const StreamPair&, const StreamPair&) = default;
};

// Index of the first EOS in a stream, or npos.
inline std::size_t eos_position(std::span<const Token> stream) {
  auto it = std::find(stream.begin(), stream.end(), kEos);
  return it == stream.end() ? std::string::npos : static_cast<std::size_t>(it - stream.begin());
}

inline bool stream_well_formed(std::span<const Token> stream) {
  auto eos = eos_position(stream);
  if (eos == std::string::npos) return true;
  return std::all_of(stream.begin() + static_cast<std::ptrdiff_t>(eos) + 1, stream.end(),
                     [](Token t) { return t == kPad; });
}

// Checks the StreamPair invariants plus vocabulary bounds; throws on violation.
inline void validate(const StreamPair& s, std::size_t audio_vocab, std::size_t text_vocab) {
  require(s.audio.size() == s.text.size(), ErrorKind::InvalidArgument, "audio and text stream lengths differ");
  for (Token t : s.audio)
    require(t >= 0 && static_cast<std::size_t>(t) < audio_vocab, ErrorKind::VocabOverflow,
            "audio token " + std::to_string(t) + " outside vocabulary of " + std::to_string(audio_vocab));
  for (Token t : s.text)
    require(t >= 0 && static_cast<std::size_t>(t) < text_vocab, ErrorKind::VocabOverflow,
            "text token " + std::to_string(t) + " outside vocabulary of " + std::to_string(text_vocab));
  require(stream_well_formed(s.audio) && stream_well_formed(s.text), ErrorKind::MalformedStream,
          "non-PAD token after EOS");
}

inline StreamPair pad_streams(TokenSeq audio, TokenSeq text, std::size_t len) {
  require(len >= 1, ErrorKind::InvalidArgument, "padded length must be at least 1");
  require(audio.size() <= len && text.size() <= len, ErrorKind::LengthExceeded,
          "stream of length " + std::to_string(std::max(audio.size(), text.size())) + " exceeds " +
              std::to_string(len));
  audio.resize(len, kPad);
  text.resize(len, kPad);
  return StreamPair{std::move(audio), std::move(text)};
}

// A training sequence: query streams followed by response streams. Loss is
// taken on response positions through the audio EOS (or all of them when the
// response was truncated without one).
struct Episode {
  StreamPair input;
  StreamPair output;
  std::vector<bool> loss_mask;

  std::size_t masked_count() const {
    return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), true));
  }
  std::size_t total_len() const { return input.len() + output.len(); }

  friend bool operator==(const Episode&, const Episode&) = default;
};

inline std::vector<bool> response_loss_mask(const StreamPair& response) {
  const auto eos = eos_position(response.audio);
  const std::size_t last = eos == std::string::npos ? response.len() : eos + 1;
  std::vector<bool> mask(response.len(), false);
  std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(last), true);
  return mask;
}

inline Episode pack_episode(StreamPair query, StreamPair response) {
  require(query.audio.size() == query.text.size() && response.audio.size() == response.text.size(),
          ErrorKind::InvalidArgument, "stream pair with unequal stream lengths");
  require(query.len() >= 1 && response.len() >= 1, ErrorKind::InvalidArgument, "empty stream pair");
  auto mask = response_loss_mask(response);
  return Episode{std::move(query), std::move(response), std::move(mask)};
}

inline std::pair<StreamPair, StreamPair> unpack_episode(const Episode& e) { return {e.input, e.output}; }

// Concatenated audio and text sequences as seen by the model.
inline std::pair<TokenSeq, TokenSeq> concat_streams(const Episode& e) {
  TokenSeq a = e.input.audio, t = e.input.text;
  a.insert(a.end(), e.output.audio.begin(), e.output.audio.end());
  t.insert(t.end(), e.output.text.begin(), e.output.text.end());
  return {std::move(a), std::move(t)};
}

}  // namespace paralign
