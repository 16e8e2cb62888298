#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace paralign;

TEST(PadStreams, PadsBothStreamsToLength) {
  const auto s = pad_streams({5, 6}, {3}, 3);
  EXPECT_EQ(s.audio, (TokenSeq{5, 6, 0}));
  EXPECT_EQ(s.text, (TokenSeq{3, 0, 0}));
  EXPECT_EQ(s.len(), 3u);
}

TEST(PadStreams, IdentityWhenAlreadyFull) {
  const auto s = pad_streams({5}, {5}, 1);
  EXPECT_EQ(s.audio, (TokenSeq{5}));
  EXPECT_EQ(s.text, (TokenSeq{5}));
}

TEST(PadStreams, RejectsOverlongStream) {
  try {
    pad_streams({2, 3, 4}, {7, 8}, 2);
    FAIL() << "expected LengthExceeded";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::LengthExceeded);
  }
  EXPECT_THROW(pad_streams({1}, {1}, 0), Error);
}

TEST(PadStreams, ReservedIds) {
  EXPECT_EQ(kPad, 0);
  EXPECT_EQ(kEos, 1);
}

TEST(PackEpisode, MaskCoversResponseThroughEos) {
  const auto q = pad_streams({10, 11, 12, kEos}, {4, 5, 6, kEos}, 4);
  const auto r = pad_streams({20, 21, kEos}, {7, 8, kEos}, 3);
  const auto e = pack_episode(q, r);
  EXPECT_EQ(e.loss_mask, (std::vector<bool>{true, true, true}));
  EXPECT_EQ(e.masked_count(), 3u);
}

TEST(PackEpisode, EosOnlyResponse) {
  const auto q = pad_streams({10, kEos}, {4, kEos}, 2);
  const auto r = pad_streams({kEos}, {kEos}, 4);
  const auto e = pack_episode(q, r);
  EXPECT_EQ(e.loss_mask, (std::vector<bool>{true, false, false, false}));
}

TEST(PackEpisode, TruncatedResponseMasksEverything) {
  const auto q = pad_streams({10, kEos}, {4, kEos}, 2);
  const auto r = pad_streams({20, 21, 22}, {7, 8, 9}, 3);
  EXPECT_EQ(pack_episode(q, r).masked_count(), 3u);
}

TEST(PackEpisode, UnpackRoundTripOnRandomPairs) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto rand_pair = [&](std::size_t L) {
      const std::size_t n = rng.index(L);  // tokens before EOS
      TokenSeq a, t;
      for (std::size_t i = 0; i < n; ++i) {
        a.push_back(static_cast<Token>(2 + rng.index(50)));
        t.push_back(static_cast<Token>(2 + rng.index(50)));
      }
      a.push_back(kEos);
      t.push_back(kEos);
      return pad_streams(a, t, L);
    };
    const auto q = rand_pair(5), r = rand_pair(8);
    const auto [q2, r2] = unpack_episode(pack_episode(q, r));
    EXPECT_EQ(q2, q);
    EXPECT_EQ(r2, r);
    EXPECT_EQ(q2.audio.size(), q2.text.size());
  }
}

TEST(StreamPair, ValidateCatchesViolations) {
  EXPECT_NO_THROW(validate(pad_streams({5, kEos}, {3, kEos}, 4), 10, 10));
  StreamPair uneven{{5, 1}, {3}};
  EXPECT_THROW(validate(uneven, 10, 10), Error);
  StreamPair after_eos{{5, kEos, 6}, {3, kEos, 0}};
  try {
    validate(after_eos, 10, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MalformedStream);
  }
  StreamPair big{{12, kEos}, {3, kEos}};
  EXPECT_THROW(validate(big, 10, 10), Error);
}
