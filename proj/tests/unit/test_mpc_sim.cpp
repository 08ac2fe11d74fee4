#include "mpcjoin/datagen.hpp"
#include "mpcjoin/jobs.hpp"
#include "mpcjoin/mpc_sim.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace mpcjoin;

TEST(Hash, DeterministicAndUniform) {
  HashFamily h{42};
  EXPECT_EQ(h(0, 17, 10), h(0, 17, 10));
  EXPECT_EQ(h(3, 17, 1), 0u);
  const std::uint64_t buckets = 16, n = 64000;
  std::vector<double> count(buckets, 0);
  for (Value v = 1; v <= n; ++v) {
    auto b = h(1, v, buckets);
    ASSERT_LT(b, buckets);
    ++count[b];
  }
  double chi = 0, expect = static_cast<double>(n) / buckets;
  for (double c : count) chi += (c - expect) * (c - expect) / expect;
  EXPECT_LT(chi, 37.7);  // 15 dof, p = 0.001
  // Different coordinates are different functions.
  int same = 0;
  for (Value v = 1; v <= 1000; ++v) same += h(0, v, buckets) == h(1, v, buckets);
  EXPECT_LT(same, 150);
}

TEST(Grid, SubcubeSizes) {
  Grid g({2, 3, 4});
  EXPECT_EQ(g.size(), 24u);
  HashFamily h{1};
  std::vector<Value> t{5, 9};
  auto all = hc_route(t, {0, 1}, g, h);
  EXPECT_EQ(all.size(), 4u);
  std::set<std::uint64_t> distinct(all.begin(), all.end());
  EXPECT_EQ(distinct.size(), 4u);
  auto one = hc_route(std::vector<Value>{1, 2, 3}, {0, 1, 2}, g, h);
  EXPECT_EQ(one.size(), 1u);
  auto missing = hc_route(std::vector<Value>{1}, {1}, g, h);
  EXPECT_EQ(missing.size(), 8u);
}

TEST(Layout, RangeAndGrid) {
  Layout l = Layout::full(12);
  EXPECT_EQ(l.size(), 12u);
  EXPECT_EQ(l.copies(), 1u);
  Layout r = l.range(4, 6);
  EXPECT_EQ(r.size(), 6u);
  EXPECT_EQ(r.physical(0, 0), 4u);
  auto [rows, cols] = r.grid(2, 3);
  EXPECT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows.copies(), 3u);
  EXPECT_EQ(cols.size(), 3u);
  EXPECT_EQ(cols.copies(), 2u);
  // Every (row, col) pair meets at exactly one physical server.
  std::set<ServerId> seen;
  for (std::uint64_t i = 0; i < 2; ++i) {
    for (std::uint64_t j = 0; j < 3; ++j) {
      std::set<ServerId> a, b;
      for (std::uint64_t c = 0; c < rows.copies(); ++c) a.insert(rows.physical(c, i));
      for (std::uint64_t c = 0; c < cols.copies(); ++c) b.insert(cols.physical(c, j));
      std::vector<ServerId> both;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
      ASSERT_EQ(both.size(), 1u);
      seen.insert(both[0]);
    }
  }
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_THROW((void)l.grid(5, 3), std::exception);
}

namespace {
DatabaseInstance small_db() { return gen_matching(canonical_query(Family::L, 2), 40, 3); }
}  // namespace

TEST(Cluster, BroadcastAndIdentity) {
  auto db = small_db();
  Cluster c(db, ClusterConfig{4, 1, 1, true, false});
  Layout all = Layout::full(4);
  c.begin_round(1);
  c.keep_local(c.base_fragment(0), "copy");
  RouteRequest req;
  req.label = "S1";
  req.base_atom = 0;
  req.to = &all;
  req.targets = {"bc"};
  req.destinations = [](std::span<const Value>, const RoutingContext&, std::vector<Destination>& out) {
    for (std::uint64_t v = 0; v < 4; ++v) out.push_back({v, 0});
    out.push_back({0, 0});  // duplicates count once
  };
  // Not yet visible before the barrier.
  c.route(req);
  for (ServerId s = 0; s < 4; ++s) EXPECT_EQ(c.fragment(s, "bc"), nullptr);
  c.commit();
  auto rep = c.report();
  EXPECT_EQ(rep.rounds, 1);
  EXPECT_EQ(rep.max.tuples, 40u);
  EXPECT_EQ(rep.max.bits, 40u * 2 * value_bits(db.n()));
  std::uint64_t kept = 0;
  for (ServerId s = 0; s < 4; ++s) {
    ASSERT_NE(c.fragment(s, "bc"), nullptr);
    EXPECT_EQ(c.fragment(s, "bc")->size(), 40u);
    kept += c.fragment(s, "copy")->size();
  }
  EXPECT_EQ(kept, 40u);
  EXPECT_NE(rep.csv().find("all,max,*"), std::string::npos);
}

TEST(Cluster, IdentityOnlyHasNoLoad) {
  auto db = small_db();
  Cluster c(db, ClusterConfig{4, 1, 1, true, false});
  c.begin_round(1);
  c.keep_local(c.base_fragment(1), "x");
  c.commit();
  EXPECT_EQ(c.report().max.tuples, 0u);
}

TEST(Cluster, ServerStateIsNotVisibleToRouting) {
  auto db = small_db();
  Cluster c(db, ClusterConfig{2, 1, 1, true, false});
  Layout all = Layout::full(2);
  c.begin_round(1);
  RouteRequest req;
  req.label = "S1";
  req.base_atom = 0;
  req.to = &all;
  req.targets = {"x"};
  req.destinations = [](std::span<const Value>, const RoutingContext& ctx, std::vector<Destination>&) {
    (void)ctx.server_state(0, "@S1");
  };
  EXPECT_THROW(c.route(req), NonTupleBasedRouting);
}

TEST(Jobs, HashJoinMatchesOracle) {
  auto db = gen_coin_flip(canonical_query(Family::L, 2), 30, 5);
  PlanContext ctx(db, 11);
  Layout all = Layout::full(5);
  std::vector<OneRoundJob::Input> in{{base_source(db, 0), Placement::Key}, {base_source(db, 1), Placement::Key}};
  OneRoundJob job(ctx, all, in, {}, {1}, Sink::output(), "hash");
  Cluster c(db, ClusterConfig{5, 11, 2, true, false});
  c.begin_round(1);
  job.route(c, 1);
  c.commit();
  job.compute(c, 1);
  auto out = c.output();
  EXPECT_EQ(*out.tuples, oracle_join(db.query, db.tuple_sets()));
  EXPECT_EQ(out.distinct, out.emitted);
}

TEST(HeavyHitters, Threshold) {
  Relation r(2);
  for (Value i = 0; i < 10; ++i) r.push_back({1, i});
  r.push_back({2, 3});
  auto hh = heavy_hitters(r, 5);
  EXPECT_EQ(hh.count({0}), 1u);
  EXPECT_EQ(hh.entries.at({0}).at({1}), 10u);
  EXPECT_EQ(hh.count({1}), 0u);
  EXPECT_THROW(heavy_hitters(r, 0.5), std::invalid_argument);
}
