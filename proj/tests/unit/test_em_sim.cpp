#include "mpcjoin/em_sim.hpp"

#include <gtest/gtest.h>

using namespace mpcjoin;

TEST(EmSim, EverythingFitsMeansOneServer) {
  auto db = gen_matching(canonical_query(Family::C, 3), 100, 1);
  auto c = choose_po(named_algorithm("one-round-skew"), db, EMConfig{1000, 10});
  EXPECT_EQ(c.p_o, 1u);
  auto res = simulate_em(named_algorithm("one-round-skew"), db, EMConfig{1000, 10});
  // Single scan of the input plus one pass over the pairs.
  EXPECT_EQ(res.io.phases.front().second, 30u);
  EXPECT_LE(res.io.io_blocks, 5 * 30u);
  EXPECT_EQ(res.output.distinct, oracle_join(db.query, db.tuple_sets()).size());
}

TEST(EmSim, PhasesSumToTotal) {
  auto db = gen_single_heavy(canonical_query(Family::C, 3), 400, 0, 2);
  auto res = simulate_em(named_algorithm("triangle_2round"), db, EMConfig{500, 8}, 0, true);
  std::uint64_t sum = 0;
  for (const auto& [name, b] : res.io.phases) sum += b;
  EXPECT_EQ(sum, res.io.io_blocks);
  EXPECT_LE(res.io.peak_memory, 500u);
  EXPECT_GT(res.io.p_o, 1u);
  EXPECT_EQ(*res.output.tuples, oracle_join(db.query, db.tuple_sets()));
  EXPECT_NE(res.io.csv().find("total,"), std::string::npos);
}

TEST(EmSim, RejectsTooSmallMemory) {
  auto db = gen_agm_worst(canonical_query(Family::C, 3), 2500, 1);
  EXPECT_THROW(simulate_em(named_algorithm("triangle_2round"), db, EMConfig{40, 4}), std::runtime_error);
  EXPECT_THROW(choose_po(named_algorithm("triangle_2round"), db, EMConfig{10, 20}), std::invalid_argument);
}

TEST(EmSim, LargerMemoryDoesNotCostMore) {
  auto db = gen_agm_worst(canonical_query(Family::C, 3), 2500, 1);
  std::uint64_t prev = 0;
  for (std::uint64_t W : {4000u, 2000u, 1000u}) {
    auto res = simulate_em(named_algorithm("triangle_2round"), db, EMConfig{W, 4});
    EXPECT_GE(res.io.io_blocks * 2, prev) << "W=" << W;  // within the partitioning constant
    prev = res.io.io_blocks;
  }
}
