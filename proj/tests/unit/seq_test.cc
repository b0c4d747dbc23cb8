#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "binprompt/numerics.h"
#include "binprompt/rng.h"
#include "binprompt/seq.h"

namespace binprompt {
namespace {

TEST(Counts, Examples) {
  EXPECT_EQ(counts(BitSeq::parse("")), (Counts{0, 0}));
  EXPECT_EQ(counts(BitSeq::parse("11111")), (Counts{0, 5}));
  EXPECT_EQ(counts(BitSeq::parse("01101")), (Counts{2, 3}));
}

TEST(Counts, PermutationInvariant) {
  Rng rng(SeedSpec{11, {}});
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Token> t(static_cast<std::size_t>(rng.uniform_int(0, 40)));
    for (auto& x : t) x = rng.bernoulli(0.3);
    const Counts before = counts(t);
    std::shuffle(t.begin(), t.end(), rng);
    EXPECT_EQ(counts(t), before);
    EXPECT_EQ(before.length(), static_cast<int>(t.size()));
  }
}

TEST(BitSeq, ParseRejectsOtherCharacters) {
  EXPECT_THROW(BitSeq::parse("01a"), std::invalid_argument);
  EXPECT_THROW(BitSeq(std::vector<Token>{0, 2}), std::invalid_argument);
}

TEST(BitSeq, BitsRoundTripAndOrder) {
  for (std::uint64_t b = 0; b < 64; ++b) {
    const BitSeq s = BitSeq::from_bits(b, 6);
    EXPECT_EQ(s.to_bits(), b);
    EXPECT_EQ(BitSeq::parse(s.str()), s);
  }
  EXPECT_EQ(BitSeq::from_bits(0b011, 3).str(), "011");
  EXPECT_LT(BitSeq::parse("011"), BitSeq::parse("100"));
  EXPECT_EQ(BitSeq::parse("0110").complement().str(), "1001");
  EXPECT_EQ(BitSeq::parse("01").concat(BitSeq::parse("1")).str(), "011");
}

TEST(Enumerate, SmallLengths) {
  std::vector<std::string> got;
  for (const BitSeq& s : enumerate_sequences(0)) got.push_back(s.str());
  EXPECT_EQ(got, std::vector<std::string>{""});
  got.clear();
  for (const BitSeq& s : enumerate_sequences(2)) got.push_back(s.str());
  EXPECT_EQ(got, (std::vector<std::string>{"00", "01", "10", "11"}));
}

TEST(Enumerate, ExactlyTwoToTheLDistinctInLexOrder) {
  std::set<std::string> seen;
  std::string prev;
  std::uint64_t n = 0;
  for (const BitSeq& s : enumerate_sequences(15)) {
    const std::string text = s.str();
    if (n > 0) {
      EXPECT_LT(prev, text);
    }
    prev = text;
    seen.insert(text);
    ++n;
  }
  EXPECT_EQ(n, 32768u);
  EXPECT_EQ(seen.size(), 32768u);
}

TEST(Enumerate, BudgetGuard) {
  EXPECT_NO_THROW(enumerate_sequences(24));
  EXPECT_THROW(enumerate_sequences(25), BudgetError);
}

TEST(Enumerate, PromptsUpTo) {
  std::vector<std::string> got;
  for (const BitSeq& s : enumerate_prompts_up_to(1)) got.push_back(s.str());
  EXPECT_EQ(got, (std::vector<std::string>{"0", "1"}));
  EXPECT_EQ(enumerate_prompts_up_to(3).size(), 14u);
  EXPECT_EQ(enumerate_prompts_up_to(3, true).size(), 15u);
  std::uint64_t n = 0;
  int last_len = 0;
  for (const BitSeq& s : enumerate_prompts_up_to(5, true)) {
    EXPECT_GE(s.length(), last_len);
    last_len = s.length();
    ++n;
  }
  EXPECT_EQ(n, 63u);
}

TEST(Enumerate, CountPairs) {
  const auto pairs = enumerate_count_pairs(0, 100);
  EXPECT_EQ(pairs.size(), 5151u);
  EXPECT_EQ(pairs.front(), (Counts{0, 0}));
  std::set<std::pair<int, int>> unique;
  for (auto c : pairs) {
    EXPECT_LE(c.length(), 100);
    unique.insert({c.zeros, c.ones});
  }
  EXPECT_EQ(unique.size(), pairs.size());
}

TEST(Dataset, RoundTripAndChecks) {
  TaskDataset d;
  d.seq_len = 4;
  d.source_seed = 99;
  d.sequences = {BitSeq::parse("0101"), BitSeq::parse("1111")};
  std::stringstream io;
  write_dataset(io, d);
  const TaskDataset back = read_dataset(io);
  EXPECT_EQ(back.seq_len, 4);
  EXPECT_EQ(back.source_seed, 99u);
  EXPECT_EQ(back.sequences, d.sequences);

  d.sequences.push_back(BitSeq::parse("01"));
  EXPECT_THROW(d.check(), std::invalid_argument);
  TaskDataset empty;
  EXPECT_THROW(empty.check(), std::invalid_argument);
}

// Reference output of SplitMix64 started from state 0.
TEST(Rng, MatchesSplitMix64Reference) {
  Rng rng(std::uint64_t{0});
  EXPECT_EQ(rng(), 0xe220a8397b1dcdafull);
  EXPECT_EQ(rng(), 0x6e789e6aa1b965f4ull);
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  const SeedSpec root{42, {}};
  EXPECT_EQ(root.child(3).key(), (SeedSpec{42, {3}}).key());
  EXPECT_EQ(root.child({3, 4}).key(), root.child(3).child(4).key());
  EXPECT_NE(root.child(3).key(), root.child(4).key());
  EXPECT_NE(root.child({1, 2}).key(), root.child({2, 1}).key());
  Rng a(root.child(7)), b(root.child(7));
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(Rng, ChildStreamsLookIndependent) {
  Rng a(SeedSpec{5, {0}}), b(SeedSpec{5, {1}});
  const int n = 200000;
  double sa = 0, sb = 0, sab = 0;
  for (int i = 0; i < n; ++i) {
    const double x = a.uniform() - 0.5, y = b.uniform() - 0.5;
    sa += x * x;
    sb += y * y;
    sab += x * y;
  }
  const double corr = sab / std::sqrt(sa * sb);
  EXPECT_LT(std::abs(corr), 5.0 / std::sqrt(n));
}

TEST(Rng, DistributionMoments) {
  Rng rng(SeedSpec{8, {}});
  const int n = 200000;
  RunningStats u, g, be, no;
  for (int i = 0; i < n; ++i) {
    u.add(rng.uniform());
    g.add(rng.gamma(0.5));
    be.add(rng.beta(2.0, 3.0));
    no.add(rng.normal());
  }
  EXPECT_NEAR(u.mean(), 0.5, 5 * u.std_error());
  EXPECT_NEAR(g.mean(), 0.5, 5 * g.std_error());
  EXPECT_NEAR(g.variance(), 0.5, 0.02);
  EXPECT_NEAR(be.mean(), 0.4, 5 * be.std_error());
  EXPECT_NEAR(be.variance(), 0.04, 0.002);
  EXPECT_NEAR(no.mean(), 0.0, 5 * no.std_error());
  EXPECT_NEAR(no.variance(), 1.0, 0.02);
}

TEST(Rng, UniformIntCoversRangeEvenly) {
  Rng rng(SeedSpec{9, {}});
  std::array<int, 5> hist{};
  for (int i = 0; i < 50000; ++i) ++hist[static_cast<std::size_t>(rng.uniform_int(3, 7) - 3)];
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
  EXPECT_THROW(rng.uniform_int(2, 1), std::invalid_argument);
}

}  // namespace
}  // namespace binprompt
