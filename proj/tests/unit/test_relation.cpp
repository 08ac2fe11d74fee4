#include "mpcjoin/datagen.hpp"
#include "mpcjoin/relation.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mpcjoin;

TEST(Relation, SortUnique) {
  Relation r(2);
  r.push_back({3, 1});
  r.push_back({1, 2});
  r.push_back({3, 1});
  r.push_back({1, 1});
  r.sort_unique();
  EXPECT_EQ(r.flat(), (std::vector<Value>{1, 1, 1, 2, 3, 1}));
  EXPECT_THROW(r.push_back({1}), std::invalid_argument);
}

TEST(Relation, ValueBits) {
  EXPECT_EQ(value_bits(1), 1u);
  EXPECT_EQ(value_bits(2), 1u);
  EXPECT_EQ(value_bits(3), 2u);
  EXPECT_EQ(value_bits(1024), 10u);
  EXPECT_EQ(value_bits(1025), 11u);
}

static Relation brute_join(const Query& q, const std::vector<Relation>& rels, Value n) {
  // Enumerate every assignment over [1, n]^k.
  Relation out(q.num_vars());
  std::vector<Value> a(q.num_vars(), 1);
  for (;;) {
    bool ok = true;
    for (std::size_t j = 0; j < q.num_atoms() && ok; ++j) {
      bool found = false;
      for (std::size_t i = 0; i < rels[j].size() && !found; ++i) {
        bool eq = true;
        for (std::size_t c = 0; c < rels[j].arity(); ++c) eq = eq && rels[j][i][c] == a[q.atoms()[j].vars[c]];
        found = eq;
      }
      ok = found;
    }
    if (ok) out.push_back(a);
    std::size_t v = 0;
    while (v < a.size() && a[v] == n) a[v++] = 1;
    if (v == a.size()) break;
    ++a[v];
  }
  out.sort_unique();
  return out;
}

TEST(Joins, LocalAndOracleMatchBruteForce) {
  std::mt19937_64 rng(99);
  const char* queries[] = {"q(x,y,z) :- R(x,y), S(y,z), T(z,x)", "q(a,b,c,d) :- R(a,b), S(b,c), T(c,d)",
                           "q(a,b,c) :- R(a,b,c), S(a), T(c)", "q(a,b) :- R(a), S(b)",
                           "q(a,b,c) :- R(a,b), S(a,b), T(b,c)"};
  for (const char* text : queries) {
    Query q = parse_query(text);
    for (int it = 0; it < 20; ++it) {
      const Value n = 4;
      std::vector<Relation> rels;
      for (const auto& atom : q.atoms()) {
        Relation r(atom.arity());
        const int count = static_cast<int>(rng() % 12);
        for (int i = 0; i < count; ++i) {
          std::vector<Value> t;
          for (std::size_t c = 0; c < atom.arity(); ++c) t.push_back(1 + rng() % n);
          r.push_back(t);
        }
        r.sort_unique();
        rels.push_back(r);
      }
      Relation expected = brute_join(q, rels, n);
      EXPECT_EQ(oracle_join(q, rels), expected) << text;
      Fragments f;
      for (const auto& r : rels) f.push_back(&r);
      EXPECT_EQ(local_join(q, f), expected) << text;
    }
  }
}

TEST(Joins, EmptyInputs) {
  Query q = canonical_query(Family::C, 3);
  std::vector<Relation> rels(3, Relation(2));
  rels[0].push_back({1, 1});
  EXPECT_TRUE(oracle_join(q, rels).empty());
  Fragments f{&rels[0], &rels[1], &rels[2]};
  EXPECT_TRUE(local_join(q, f).empty());
}

TEST(Joins, OracleGuard) {
  Query q = parse_query("q(a,b) :- R(a), S(b)");
  std::vector<Relation> rels(2, Relation(1));
  for (Value v = 1; v <= 100; ++v) {
    rels[0].push_back({v});
    rels[1].push_back({v});
  }
  EXPECT_THROW(oracle_join(q, rels, 1000), OracleTooLarge);
  EXPECT_EQ(oracle_join(q, rels).size(), 10000u);
}
