// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "squire/inference.hpp"
#include "support/beam_oracle.hpp"
#include "support/fixtures.hpp"
#include "support/toy_model.hpp"

namespace squire {
namespace {

using testing::fixture_graph;
using testing::tok;
using testing::toks;

Hypothesis finished(std::vector<TokenId> tokens, double sum_logprob) {
  return Hypothesis{std::move(tokens), sum_logprob, true};
}

bool grammatical(const Vocabulary& v, const std::vector<TokenId>& tokens, std::size_t max_hops) {
  if (tokens.size() < 3 || tokens.size() % 2 == 0 || tokens.back() != v.eos()) return false;
  if (tokens.size() / 2 > max_hops) return false;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    if (i % 2 == 0 && !v.is_relation(tokens[i])) return false;
    if (i % 2 == 1 && !v.is_entity(tokens[i])) return false;
  }
  return true;
}

TEST(Hypothesis, ScoreIsMeanTokenLogprob) {
  const Hypothesis h{{0, 1, 2}, -0.1 - 0.2 - 0.3, true};
  EXPECT_NEAR(h.score(), -0.2, 1e-12);
}

TEST(BeamSearch, OutputsAreGrammatical) {
  const auto g = fixture_graph();
  SquireModel<float> model({.layers = 1, .dim = 8, .ff_dim = 8, .heads = 2, .max_seq_len = 9,
                            .vocab_size = g.vocab().size()},
                           2);
  const auto hyps = beam_search(model, g.vocab(), Query{tok(g, "A"), tok(g, "r")}, {.beam_size = 40, .max_hops = 3});
  ASSERT_EQ(hyps.size(), 40u);
  for (const auto& h : hyps) {
    EXPECT_TRUE(h.finished);
    EXPECT_TRUE(grammatical(g.vocab(), h.tokens, 3));
  }
  for (std::size_t i = 1; i < hyps.size(); ++i) EXPECT_GE(hyps[i - 1].score(), hyps[i].score());
}

TEST(BeamSearch, LargeBeamEqualsExhaustiveEnumeration) {
  const auto g = fixture_graph();
  const auto model = testing::train_toy_model<double>(g, 30, 3, 2);
  const std::size_t total = testing::grammatical_path_count(g.vocab(), 2);
  ASSERT_EQ(total, 24u + 576u);
  const Query q{tok(g, "A"), tok(g, "r")};
  const auto oracle = testing::exhaustive_paths(*model, g.vocab(), q, 2);
  ASSERT_EQ(oracle.size(), total);
  for (std::size_t beam : {total, total + 7}) {
    const auto hyps = beam_search(*model, g.vocab(), q, {.beam_size = beam, .max_hops = 2});
    ASSERT_EQ(hyps.size(), total);
    for (std::size_t i = 0; i < total; ++i) {
      ASSERT_EQ(hyps[i].tokens, oracle[i].tokens) << "rank " << i;
      ASSERT_NEAR(hyps[i].sum_logprob, oracle[i].sum_logprob, 1e-9);
    }
  }
}

TEST(BeamSearch, BeamOneIsGreedy) {
  const auto g = fixture_graph();
  const auto model = testing::train_toy_model<double>(g, 20, 4);
  const Query q{tok(g, "D"), tok(g, "r1")};
  const auto hyps = beam_search(*model, g.vocab(), q, {.beam_size = 1, .max_hops = 3});
  ASSERT_EQ(hyps.size(), 1u);
  std::vector<TokenId> greedy;
  const auto& v = g.vocab();
  while (greedy.empty() || greedy.back() != v.eos()) {
    const auto dist = next_token_distribution<double>(*model, q.head, q.relation, greedy);
    TokenId best = -1;
    for (TokenId t = 0; t < static_cast<TokenId>(dist.size()); ++t) {
      const std::size_t pos = greedy.size();
      const bool ok = pos % 2 == 1 ? v.is_entity(t)
                                   : ((pos < 6 && v.is_relation(t)) || (pos >= 2 && t == v.eos()));
      if (ok && (best < 0 || dist[t] > dist[best])) best = t;
    }
    greedy.push_back(best);
  }
  EXPECT_EQ(hyps[0].tokens, greedy);
}

TEST(BeamSearch, BatchedQueriesMatchSingleQueries) {
  const auto g = fixture_graph();
  const auto model = testing::train_toy_model<float>(g, 20, 5);
  const std::vector<Query> queries{{tok(g, "A"), tok(g, "r")}, {tok(g, "B"), tok(g, "r2")}, {tok(g, "C"), tok(g, "r^-1")}};
  const auto batched = beam_search(*model, g.vocab(), queries, {.beam_size = 8, .max_hops = 3});
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto single = beam_search(*model, g.vocab(), queries[i], {.beam_size = 8, .max_hops = 3});
    ASSERT_EQ(single.size(), batched[i].size());
    for (std::size_t j = 0; j < single.size(); ++j) EXPECT_EQ(single[j].tokens, batched[i][j].tokens);
  }
}

TEST(BeamPrefixes, ExactHopCountWithoutEos) {
  const auto g = fixture_graph();
  const auto model = testing::train_toy_model<float>(g, 10, 6);
  const std::vector<Query> queries{{tok(g, "A"), tok(g, "r")}};
  for (std::size_t hops : {1u, 2u}) {
    const auto prefixes = beam_prefixes(*model, g.vocab(), queries, hops, 6);
    ASSERT_EQ(prefixes[0].size(), 6u);
    for (const auto& p : prefixes[0]) {
      EXPECT_FALSE(p.finished);
      ASSERT_EQ(p.tokens.size(), 2 * hops);
      for (std::size_t i = 0; i < p.tokens.size(); ++i) {
        EXPECT_TRUE(i % 2 == 0 ? g.vocab().is_relation(p.tokens[i]) : g.vocab().is_entity(p.tokens[i]));
      }
    }
    for (std::size_t i = 1; i < prefixes[0].size(); ++i) {
      EXPECT_GE(prefixes[0][i - 1].sum_logprob, prefixes[0][i].sum_logprob);
    }
  }
}

TEST(RankMax, OrdersByBestPathScore) {
  const std::vector<Hypothesis> hyps{finished({5, 1, 9}, -0.9 * 3), finished({5, 2, 9}, -1.2 * 3),
                                     finished({6, 0, 5, 2, 9}, -1.5 * 5)};
  const auto ranking = rank_max(hyps);
  ASSERT_EQ(ranking.entries.size(), 2u);
  EXPECT_EQ(ranking.entries[0].entity, 1);
  EXPECT_EQ(ranking.entries[1].entity, 2);
  EXPECT_NEAR(ranking.entries[1].score, -1.2, 1e-12);
  EXPECT_EQ(ranking.entries[1].path, (std::vector<TokenId>{5, 2, 9}));
}

TEST(RankMax, SinglePathAndTies) {
  EXPECT_EQ(rank_max(std::vector<Hypothesis>{finished({5, 3, 9}, -1.0)}).entries.size(), 1u);
  const std::vector<Hypothesis> tied{finished({5, 3, 9}, -1.0), finished({6, 1, 9}, -1.0)};
  const auto ranking = rank_max(tied);
  EXPECT_EQ(ranking.entries[0].entity, 1);
  EXPECT_EQ(ranking.entries[1].entity, 3);
  EXPECT_TRUE(rank_max({}).entries.empty());
}

TEST(RankSelfConsistency, SumsRawProbabilities) {
  const std::vector<Hypothesis> hyps{finished({5, 2, 9}, std::log(0.3)), finished({6, 0, 5, 2, 9}, std::log(0.2)),
                                     finished({5, 1, 9}, std::log(0.4))};
  const auto sc = rank_self_consistency(hyps);
  ASSERT_EQ(sc.entries.size(), 2u);
  EXPECT_EQ(sc.entries[0].entity, 2);
  EXPECT_NEAR(sc.entries[0].score, 0.5, 1e-12);
  EXPECT_NEAR(sc.entries[1].score, 0.4, 1e-12);
  EXPECT_EQ(sc.entries[0].path, (std::vector<TokenId>{6, 0, 5, 2, 9}));  // better length-normalized score
  const auto mx = rank_max(hyps);
  EXPECT_EQ(mx.entries[0].entity, 1);
}

TEST(RankSelfConsistency, OnePathPerEntityFollowsProbability) {
  const std::vector<Hypothesis> hyps{finished({5, 1, 9}, std::log(0.1)), finished({5, 2, 9}, std::log(0.6)),
                                     finished({5, 3, 9}, std::log(0.3))};
  const auto sc = rank_self_consistency(hyps);
  const auto mx = rank_max(hyps);
  ASSERT_EQ(sc.entries.size(), mx.entries.size());
  for (std::size_t i = 0; i < sc.entries.size(); ++i) EXPECT_EQ(sc.entries[i].entity, mx.entries[i].entity);
}

TEST(EdgeConstraint, FixtureMembership) {
  const auto g = fixture_graph();
  const auto path = toks(g, {"r1", "B", "r2", "C", "<eos>"});
  const std::vector<Hypothesis> hyps{finished(path, -1.0)};
  const TokenId a = tok(g, "A");
  EXPECT_EQ(filter_by_edge_constraint(hyps, a, g.train_facts()).size(), 1u);

  FactSet without_r2 = g.train_facts();
  without_r2.erase(Fact{tok(g, "B"), tok(g, "r2"), tok(g, "C")});
  EXPECT_TRUE(filter_by_edge_constraint(hyps, a, without_r2).empty());
  EXPECT_TRUE(filter_by_edge_constraint(hyps, a, FactSet{}).empty());
  EXPECT_FALSE(path_within(path, tok(g, "D"), FactSet{}));
}

TEST(EdgeConstraint, SubsetKeepsSubset) {
  const auto g = fixture_graph();
  const auto model = testing::train_toy_model<float>(g, 10, 7);
  const auto hyps = beam_search(*model, g.vocab(), Query{tok(g, "A"), tok(g, "r")}, {.beam_size = 64});
  FactSet small;
  small.insert(Fact{tok(g, "A"), tok(g, "r1"), tok(g, "B")});
  FactSet large = small;
  large.insert(Fact{tok(g, "B"), tok(g, "r2"), tok(g, "C")});
  large.insert(Fact{tok(g, "A"), tok(g, "r"), tok(g, "C")});
  const auto a = filter_by_edge_constraint(hyps, tok(g, "A"), small);
  const auto b = filter_by_edge_constraint(hyps, tok(g, "A"), large);
  for (const auto& h : a) {
    EXPECT_TRUE(std::any_of(b.begin(), b.end(), [&](const Hypothesis& x) { return x.tokens == h.tokens; }));
  }
  EXPECT_LE(a.size(), b.size());
}

}  // namespace
}  // namespace squire
