#include "mpcjoin/algorithms.hpp"
#include "mpcjoin/datagen.hpp"

#include <gtest/gtest.h>

using namespace mpcjoin;

namespace {

ClusterConfig config(std::uint64_t p, std::uint64_t seed = 1) { return ClusterConfig{p, seed, 2, true, false}; }

void expect_oracle(const std::string& alg, const DatabaseInstance& db, std::uint64_t p) {
  SCOPED_TRACE(alg + " " + db.query.render() + " gen=" + db.generator + " p=" + std::to_string(p) +
               " seed=" + std::to_string(db.seed));
  auto res = run_algorithm(alg, db, config(p, db.seed));
  EXPECT_TRUE(matches_oracle(res, db)) << res.plan;
  EXPECT_EQ(res.duplicates(), 0u) << res.plan;
}

const std::vector<std::string> kGens{"matching", "single-heavy", "coin-flip"};

}  // namespace

TEST(Algorithms, HyperCubeOnMatching) {
  for (std::uint64_t p : {1u, 8u, 27u}) {
    auto db = gen_matching(canonical_query(Family::C, 3), 200, 4);
    expect_oracle("hc_one_round", db, p);
  }
}

TEST(Algorithms, OneRoundSkew) {
  for (const auto& gen : kGens) {
    for (Family f : {Family::C, Family::L, Family::LW}) {
      auto db = generate(gen, canonical_query(f, 3), 150, 7);
      expect_oracle("one_round_skew", db, 8);
    }
  }
}

TEST(Algorithms, OneRoundSkewClassificationPartitions) {
  auto db = gen_single_heavy(canonical_query(Family::C, 3), 300, 0, 2);
  auto out = oracle_join(db.query, db.tuple_sets());
  auto classes = one_round_skew_classes(db, 64, out);
  ASSERT_EQ(classes.size(), out.size());
  for (auto x : classes) EXPECT_EQ(x, VarSet{1});  // x1 heavy everywhere
}

TEST(Algorithms, OneSidedJoinAndSemiJoin) {
  Query q = parse_query("Q(x,y,z) :- R(x,y), S(y,z)");
  auto db = gen_single_heavy(q, 200, 1, 3);  // y heavy on both sides
  EXPECT_THROW(join_one_sided_skew(db, config(8)), std::invalid_argument);
  // Skew only in S: precondition holds.
  DatabaseInstance one = gen_matching(q, 200, 5);
  for (std::size_t i = 0; i < one.relations[1].tuples.size(); ++i) {
    if (i % 2 == 0) one.relations[1].tuples.at(i, 0) = 7;
  }
  one.relations[1].tuples.sort_unique();
  auto res = join_one_sided_skew(one, config(8));
  EXPECT_TRUE(matches_oracle(res, one));
  EXPECT_EQ(res.rounds, 1);

  Query sq = parse_query("Q(x,y) :- R(x), S(x,y)");
  for (const auto& gen : kGens) expect_oracle("semi_join", generate(gen, sq, 120, 9), 8);
}

TEST(Algorithms, TriangleTwoRounds) {
  auto db = gen_single_heavy(canonical_query(Family::C, 3), 500, 0, 1);
  auto res = triangle_2round(db, config(27));
  EXPECT_TRUE(matches_oracle(res, db)) << res.plan;
  EXPECT_EQ(res.rounds, 2);
  auto m = gen_matching(canonical_query(Family::C, 3), 500, 1);
  auto r2 = triangle_2round(m, config(27));
  EXPECT_TRUE(matches_oracle(r2, m));
  EXPECT_EQ(r2.rounds, 1);
}

TEST(Algorithms, Lines) {
  for (int k = 2; k <= 6; ++k) {
    for (const auto& gen : kGens) {
      for (VarId hv : {0u, 1u}) {
        auto db = generate(gen, canonical_query(Family::L, k), 120, 11 + k, hv);
        expect_oracle("line_multiround", db, 27);
      }
    }
  }
}

TEST(Algorithms, LineRounds) {
  for (int k = 2; k <= 6; ++k) {
    auto db = gen_single_heavy(canonical_query(Family::L, k), 100, 1, 3);
    auto res = line_multiround(db, config(64));
    EXPECT_LE(res.rounds, std::max(1, k / 2)) << res.plan;
  }
}

TEST(Algorithms, Cycles) {
  for (int k = 3; k <= 6; ++k) {
    for (const auto& gen : kGens) {
      for (VarId hv : {0u, 1u}) {
        auto db = generate(gen, canonical_query(Family::C, k), 100, 21 + k, hv);
        expect_oracle("cycle_multiround", db, 64);
        auto res = cycle_multiround(db, config(64));
        EXPECT_LE(res.rounds, (k + 1) / 2);
      }
    }
  }
}

TEST(Algorithms, EvenCycleJointlyHeavyPairs) {
  // Heavy values at adjacent and at opposite positions of C_4 and C_6.
  for (int k : {4, 6}) {
    Query q = canonical_query(Family::C, k);
    auto db = gen_matching(q, 64, 5);
    for (std::size_t j = 0; j < db.relations.size(); ++j) {
      auto& r = db.relations[j].tuples;
      for (std::size_t i = 0; i < r.size(); i += 2) {
        if (j == 0 || j == static_cast<std::size_t>(k - 1)) r.at(i, j == 0 ? 0 : 1) = 1;
        if (j == 1 || j == 2) r.at(i, j == 1 ? 1 : 0) = 2;
      }
      r.sort_unique();
    }
    for (std::uint64_t p : {16u, 64u}) expect_oracle("cycle_multiround", db, p);
  }
}

TEST(Algorithms, LoomisWhitney) {
  for (int k = 3; k <= 4; ++k) {
    for (const auto& gen : kGens) expect_oracle("lw_multiround", generate(gen, canonical_query(Family::LW, k), 100, 5, 0), 27);
  }
}

TEST(Algorithms, Cliques) {
  for (int k = 3; k <= 4; ++k) {
    for (const auto& gen : kGens) {
      auto db = generate(gen, canonical_query(Family::K, k), 100, 5, 0);
      expect_oracle("clique_multiround", db, 27);
      EXPECT_LE(clique_multiround(db, config(27)).rounds, k - 1);
    }
  }
}

TEST(Algorithms, CoveringAtom) {
  for (int k = 1; k <= 4; ++k) {
    for (const auto& gen : kGens) {
      auto db = generate(gen, canonical_query(Family::W, k), 80, 3, 0);
      expect_oracle("covering_atom_2round", db, 8);
    }
  }
  auto one = gen_matching(parse_query("Q(x,y) :- R(x,y)"), 50, 1);
  auto local = covering_atom_2round(one, config(8));
  EXPECT_TRUE(matches_oracle(local, one));
  EXPECT_EQ(local.rounds, 0);
  EXPECT_EQ(local.load.max.tuples, 0u);
  EXPECT_THROW(covering_atom_2round(gen_matching(canonical_query(Family::C, 3), 10, 1), config(4)), std::invalid_argument);
}

TEST(Algorithms, DeterministicAcrossThreads) {
  auto db = gen_coin_flip(canonical_query(Family::C, 4), 60, 2);
  ClusterConfig a{27, 5, 1, false, false}, b{27, 5, 4, false, false};
  auto ra = cycle_multiround(db, a), rb = cycle_multiround(db, b);
  EXPECT_EQ(ra.output.checksum, rb.output.checksum);
  EXPECT_EQ(ra.load.max.tuples, rb.load.max.tuples);
  EXPECT_EQ(ra.plan, rb.plan);
}
