// Acceptance suite: one PASS/FAIL line per criterion, details indented below.
// Exit status is non-zero when any criterion fails.

#include "../test_support.hpp"
#include "mpcjoin/em_sim.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace mpcjoin;

namespace {

struct Outcome {
  bool pass = true;
  std::string summary;
  std::vector<std::string> details;

  void fail(std::string d) {
    pass = false;
    details.push_back(std::move(d));
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double polylog(std::uint64_t p) { return 1.0 + std::log(static_cast<double>(p)); }

Rational ceil_div(long a, long b) { return Rational((a + b - 1) / b); }

// ---------------------------------------------------------------------------

Outcome table1() {
  Outcome o;
  struct Row {
    Family f;
    std::function<Rational(long)> tau, rho, psi;
  };
  const std::vector<Row> rows{
      {Family::T, [](long) { return Rational(1); }, [](long k) { return Rational(k); }, [](long k) { return Rational(k); }},
      {Family::SP, [](long k) { return Rational(k); }, [](long k) { return Rational(k + 1); }, [](long k) { return Rational(k + 1); }},
      {Family::K, [](long k) { return Rational(k, 2); }, [](long k) { return Rational(k, 2); }, [](long k) { return Rational(k - 1); }},
      {Family::W, [](long k) { return Rational(k); }, [](long) { return Rational(1); }, [](long k) { return Rational(k); }},
      {Family::L, [](long k) { return ceil_div(k, 2); }, [](long k) { return ceil_div(k + 1, 2); },
       [](long k) { return ceil_div(2 * k, 3); }},
      {Family::Lstar, [](long k) { return ceil_div(k, 2); }, [](long k) { return ceil_div(k + 1, 2); },
       [](long k) { return ceil_div(2 * k + 1, 3); }},
      {Family::Ldagger, [](long k) { return ceil_div(k + 1, 2); }, [](long k) { return ceil_div(k + 1, 2); },
       [](long k) { return ceil_div(2 * k + 2, 3); }},
      {Family::C, [](long k) { return Rational(k, 2); }, [](long k) { return Rational(k, 2); },
       [](long k) { return ceil_div(2 * (k - 1), 3); }},
      {Family::LW, [](long k) { return Rational(k, k - 1); }, [](long k) { return Rational(k, k - 1); },
       [](long) { return Rational(2); }},
  };
  int checked = 0, bad = 0;
  for (const auto& row : rows) {
    const int lo = (row.f == Family::C || row.f == Family::LW) ? 3 : std::max(2, min_k(row.f));
    for (int k = lo; k <= 6; ++k) {
      const Query q = canonical_query(row.f, k);
      const Rational got[3] = {tau_star(q).value, rho_star(q).value, psi_star(q).value};
      const Rational want[3] = {row.tau(k), row.rho(k), row.psi(k)};
      const char* names[3] = {"tau", "rho", "psi"};
      for (int i = 0; i < 3; ++i) {
        ++checked;
        if (got[i] != want[i]) {
          ++bad;
          o.fail(family_name(row.f) + std::to_string(k) + " " + names[i] + ": computed " + to_string(got[i]) +
                 ", closed form " + to_string(want[i]));
        }
      }
    }
  }
  o.summary = std::to_string(checked - bad) + "/" + std::to_string(checked) + " closed-form values match";
  return o;
}

Outcome quasi_packing_lemmas() {
  Outcome o;
  std::mt19937_64 rng(20240601);
  int n = 0;
  for (int i = 0; i < 200; ++i) {
    const Query q = testsupport::random_query(rng, 6, 8, 3);
    const Rational psi = psi_star(q).value;
    const Rational tau = tau_star(q).value, rho = rho_star(q).value;
    if (psi < tau || psi < rho) {
      o.fail(q.render() + ": psi " + to_string(psi) + " < max(tau, rho)");
    }
    Rational best = 0;
    for (VarSet x = 0; x < q.all_vars(); ++x) {
      auto res = residual_query(q, x);
      if (res.query) best = std::max(best, psi_star(*res.query).value);
    }
    if (best != psi) o.fail(q.render() + ": max_X psi(q_X) = " + to_string(best) + " but psi = " + to_string(psi));
    if (psi_star_recursive(q) != psi) o.fail(q.render() + ": recursive psi disagrees");
    ++n;
  }
  o.summary = std::to_string(n) + " random hypergraphs checked";
  return o;
}

// Instances for the oracle comparison: the oracle output is kept below a guard
// by halving m (never above 2000).
struct Instance {
  DatabaseInstance db;
  Relation expected;
};

Instance fit_instance(const std::string& gen, const Query& q, std::uint64_t m, std::uint64_t seed, VarId heavy) {
  for (;; m /= 2) {
    DatabaseInstance db = generate(gen, q, m, seed, heavy % q.num_vars());
    try {
      Relation out = oracle_join(q, db.tuple_sets(), 200'000);
      return {std::move(db), std::move(out)};
    } catch (const OracleTooLarge&) {
      if (m < 8) throw;
    }
  }
}

// Two-atom join with skew on the shared variable only in the second relation.
DatabaseInstance one_sided_instance(std::uint64_t m, std::uint64_t seed) {
  Query q = parse_query("Q(x,y,z) :- R(x,y), S(y,z)");
  DatabaseInstance db = gen_matching(q, m, seed);
  StreamRng rng(seed, 99);
  Relation s(2);
  const std::uint64_t hot = 1 + seed % 3;
  for (std::uint64_t i = 0; i < m; ++i) {
    Value y;
    if (i < m / (hot + 1)) {
      y = 1;
    } else if (i < m / 2 + m / 4) {
      y = 2 + i % hot;
    } else {
      y = 1 + rng.below(m);
    }
    s.push_back({y, i + 1});
  }
  s.sort_unique();
  db.relations[1].tuples = std::move(s);
  return db;
}

DatabaseInstance semi_join_instance(std::uint64_t m, std::uint64_t seed) {
  Query q = parse_query("Q(y,z) :- R(y), S(y,z)");
  DatabaseInstance db = gen_coin_flip(q, m, seed);
  // Skew S on y.
  Relation s(2);
  StreamRng rng(seed, 7);
  for (std::uint64_t i = 0; i < m; ++i) s.push_back({i % 3 == 0 ? Value{1} : 1 + rng.below(m / 4 + 1), i + 1});
  s.sort_unique();
  db.relations[1].tuples = std::move(s);
  return db;
}

Outcome oracle_correctness() {
  Outcome o;
  const std::vector<std::uint64_t> ps{8, 27, 64};
  const std::vector<std::string> gens{"matching", "single-heavy", "coin-flip", "agm-worst", "lowerbound-matching"};
  struct Case {
    std::string alg;
    std::vector<Query> queries;
    std::vector<std::string> gens;
    std::function<DatabaseInstance(std::uint64_t, std::uint64_t)> custom;
  };
  auto fam = [](Family f, std::vector<int> ks) {
    std::vector<Query> out;
    for (int k : ks) out.push_back(canonical_query(f, k));
    return out;
  };
  std::vector<Query> mixed{canonical_query(Family::C, 3), canonical_query(Family::L, 3), canonical_query(Family::T, 3),
                           canonical_query(Family::LW, 4), canonical_query(Family::SP, 2), canonical_query(Family::W, 2)};
  std::vector<Query> hc{canonical_query(Family::C, 3), canonical_query(Family::L, 4), canonical_query(Family::K, 4),
                        canonical_query(Family::LW, 3), canonical_query(Family::T, 3)};
  std::vector<Query> lines = fam(Family::L, {2, 3, 4, 5, 6});
  std::vector<Query> cycles = fam(Family::C, {3, 4, 5, 6});
  std::vector<Query> covers = fam(Family::W, {1, 2, 3, 4});
  covers.push_back(parse_query("Q(x,y,z) :- R(x,y,z), S(x,y), T(z)"));
  const std::vector<Case> cases{
      {"hc_one_round", hc, {"matching"}, {}},
      {"one_round_skew", mixed, gens, {}},
      {"join_one_sided_skew", {}, {}, one_sided_instance},
      {"semi_join", {}, {}, semi_join_instance},
      {"triangle_2round", fam(Family::C, {3}), gens, {}},
      {"line_multiround", lines, gens, {}},
      {"cycle_multiround", cycles, gens, {}},
      {"lw_multiround", fam(Family::LW, {3, 4}), gens, {}},
      {"clique_multiround", fam(Family::K, {3, 4}), gens, {}},
      {"covering_atom_2round", covers, gens, {}},
  };
  const std::vector<std::uint64_t> sizes{2000, 1000, 500};
  int runs = 0, ok = 0;
  std::uint64_t case_no = 0;
  for (const auto& c : cases) {
    ++case_no;
    int alg_ok = 0, alg_runs = 0;
    for (std::uint64_t i = 0; i < 20; ++i) {
      const std::uint64_t seed = 1000 * case_no + i;
      const std::uint64_t m = sizes[i % sizes.size()];
      Instance inst;
      std::string label;
      if (c.custom) {
        inst.db = c.custom(m, seed);
        inst.expected = oracle_join(inst.db.query, inst.db.tuple_sets());
        label = inst.db.query.render();
      } else {
        const Query& q = c.queries[i % c.queries.size()];
        const std::string& g = c.gens[(i / c.queries.size() + i) % c.gens.size()];
        inst = fit_instance(g, q, m, seed, static_cast<VarId>(i));
        label = q.render() + " gen=" + g;
      }
      for (std::uint64_t p : ps) {
        ++runs;
        ++alg_runs;
        std::ostringstream where;
        where << c.alg << " on " << label << " m=" << inst.db.relations[0].size() << " seed=" << seed << " p=" << p;
        try {
          auto res = run_algorithm(c.alg, inst.db, ClusterConfig{p, seed, 4, true, false});
          if (*res.output.tuples != inst.expected) {
            o.fail(where.str() + ": output differs (" + std::to_string(res.output.distinct) + " vs " +
                   std::to_string(inst.expected.size()) + " tuples)");
          } else {
            ++ok;
            ++alg_ok;
          }
        } catch (const std::exception& e) {
          o.fail(where.str() + ": " + e.what());
        }
      }
    }
    o.details.push_back(c.alg + ": " + std::to_string(alg_ok) + "/" + std::to_string(alg_runs) + " runs match");
  }
  o.summary = std::to_string(ok) + "/" + std::to_string(runs) + " runs (10 algorithms x 20 instances x 3 values of p) equal the oracle";
  return o;
}

struct LoadRuns {
  std::uint64_t m = 30000, p = 64;
  std::uint64_t matching_load = 0, heavy_load = 0, triangle_load = 0;
};

LoadRuns load_runs() {
  LoadRuns r;
  const Query q = canonical_query(Family::C, 3);
  auto match = gen_matching(q, r.m, 41);
  auto heavy = gen_single_heavy(q, r.m, 0, 41);
  ClusterConfig cfg{r.p, 41, 8, false, false};
  r.matching_load = one_round_skew(match, cfg).load.max.tuples;
  r.heavy_load = one_round_skew(heavy, cfg).load.max.tuples;
  r.triangle_load = triangle_2round(heavy, cfg).load.max.tuples;
  return r;
}

Outcome one_round_bounds(const LoadRuns& r, double seconds) {
  Outcome o;
  const double m = static_cast<double>(r.m), p = static_cast<double>(r.p);
  const double ca = r.matching_load / (m / std::pow(p, 2.0 / 3.0) * polylog(r.p));
  const double cb = r.heavy_load / (m / std::sqrt(p) * polylog(r.p));
  std::ostringstream s;
  s << "matching load " << r.matching_load << " (C=" << ca << "), single-heavy load " << r.heavy_load << " (C=" << cb
    << "), limit C<=16, " << seconds << "s";
  o.summary = s.str();
  if (std::max(ca, cb) > 16) o.fail("constant exceeds 16");
  if (seconds > 120) o.fail("runtime above 2 minutes");
  return o;
}

Outcome multi_round_separation(const LoadRuns& r) {
  Outcome o;
  const double m = static_cast<double>(r.m), p = static_cast<double>(r.p);
  const double c = r.triangle_load / (m / std::pow(p, 2.0 / 3.0) * polylog(r.p));
  std::ostringstream s;
  s << "triangle_2round load " << r.triangle_load << " (C=" << c << ") vs one_round_skew " << r.heavy_load;
  o.summary = s.str();
  if (c > 16) o.fail("constant exceeds 16");
  if (2 * r.triangle_load >= r.heavy_load) o.fail("not below half of the one-round load");
  return o;
}

Outcome round_counts() {
  Outcome o;
  const std::uint64_t m = 2000, p = 64;
  int checks = 0;
  auto check = [&](const std::string& alg, const Query& q, const std::string& gen, VarId hv, int bound, bool exact) {
    auto db = generate(gen, q, m, 5, hv);
    auto res = run_algorithm(alg, db, ClusterConfig{p, 5, 8, false, false});
    ++checks;
    const bool good = exact ? res.rounds == bound : res.rounds <= bound;
    if (!good) {
      o.fail(alg + " " + q.render() + " gen=" + gen + ": " + std::to_string(res.rounds) + " rounds, expected " +
             (exact ? "" : "<= ") + std::to_string(bound));
    }
  };
  for (const std::string gen : {"matching", "single-heavy"}) {
    for (int k = 2; k <= 6; ++k) {
      for (VarId hv = 0; hv <= static_cast<VarId>(k); ++hv) check("line_multiround", canonical_query(Family::L, k), gen, hv, k / 2, false);
    }
    for (int k = 3; k <= 6; ++k) {
      for (VarId hv = 0; hv < static_cast<VarId>(k); ++hv) check("cycle_multiround", canonical_query(Family::C, k), gen, hv, (k + 1) / 2, false);
    }
    for (int k = 3; k <= 4; ++k) check("clique_multiround", canonical_query(Family::K, k), gen, 0, k - 1, false);
  }
  for (int k = 3; k <= 4; ++k) check("lw_multiround", canonical_query(Family::LW, k), "single-heavy", 0, 2, true);
  check("triangle_2round", canonical_query(Family::C, 3), "single-heavy", 0, 2, true);
  for (int k = 2; k <= 4; ++k) check("covering_atom_2round", canonical_query(Family::W, k), "matching", 0, 2, true);
  o.summary = std::to_string(checks) + " round-count checks on m=2000, p=64";
  return o;
}

Outcome em_simulation() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const Query q = canonical_query(Family::C, 3);
  const std::uint64_t m = 100000, B = 100;
  auto db = gen_agm_worst(q, m, 3);
  auto replica = gen_agm_worst(q, 10000, 3);
  const Relation expected = oracle_join(q, replica.tuple_sets());
  const auto alg = named_algorithm("triangle_2round");
  double worst = 0;
  int feasible = 0;
  for (std::uint64_t W : {1000u, 4000u, 16000u}) {
    std::ostringstream d;
    d << "W=" << W << ": ";
    try {
      auto res = simulate_em(alg, db, EMConfig{W, B});
      const double bound = std::pow(static_cast<double>(m), 1.5) / (B * std::sqrt(static_cast<double>(W)));
      const double c = res.io.io_blocks / bound;
      worst = std::max(worst, c);
      d << "p_o=" << res.io.p_o << " io_blocks=" << res.io.io_blocks << " C=" << c << " peak_memory=" << res.io.peak_memory;
      if (res.io.peak_memory > W) o.fail(d.str() + " memory invariant violated");
      if (c > 32) o.fail(d.str() + " constant exceeds 32");
      ++feasible;
    } catch (const std::exception& e) {
      o.fail(d.str() + e.what());
      continue;
    }
    try {
      auto small = simulate_em(alg, replica, EMConfig{W, B}, 0, true);
      if (*small.output.tuples != expected) o.fail(d.str() + "replica output differs from the oracle");
      d << "; m=10^4 replica equals oracle (" << expected.size() << " tuples)";
    } catch (const std::exception& e) {
      o.fail(d.str() + "replica: " + e.what());
    }
    o.details.push_back(d.str());
  }
  const double secs = seconds_since(t0);
  if (secs > 300) o.fail("runtime above 5 minutes");
  std::ostringstream s;
  s << feasible << "/3 memory sizes feasible, worst C=" << worst << " (limit 32), " << secs << "s";
  o.summary = s.str();
  return o;
}

Outcome lp_duality() {
  Outcome o;
  std::mt19937_64 rng(777);
  int checks = 0;
  for (int i = 0; i < 50; ++i) {
    const Query q = testsupport::random_query(rng, 6, 8, 3);
    std::vector<VarSet> xs{0};
    std::uniform_int_distribution<VarSet> pick(0, q.all_vars() - 1);
    while (xs.size() < 4) {
      const VarSet x = q.num_vars() == 1 ? 0 : pick(rng);
      if (residual_query(q, x).query) xs.push_back(x);
    }
    for (std::uint64_t p : {64u, 1024u}) {
      const std::vector<std::uint64_t> sizes(q.num_atoms(), p * p);  // mu = 2 exactly
      for (VarSet x : xs) {
        const auto alloc = share_lp(q, sizes, p, x);
        const Rational tau = tau_star(*residual_query(q, x).query).value;
        ++checks;
        if (!alloc.exact || Rational(2) - alloc.lambda != 1 / tau) {
          o.fail(q.render() + " X=" + var_set_string(q, x) + " p=" + std::to_string(p) + ": mu - lambda = " +
                 to_string(Rational(2) - alloc.lambda) + ", 1/tau*(q_X) = " + to_string(1 / tau));
        }
      }
    }
  }
  o.summary = std::to_string(checks) + " (query, p, X) share-LP optima checked";
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::string& name, Outcome o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << name << "): " << o.summary << std::endl;
    const std::size_t shown = std::min<std::size_t>(o.details.size(), 40);
    for (std::size_t i = 0; i < shown; ++i) std::cout << "      " << o.details[i] << "\n";
    if (o.details.size() > shown) std::cout << "      ... " << o.details.size() - shown << " more\n";
    std::cout.flush();
    failures += !o.pass;
  };
  auto timed = [](auto fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = fn();
    std::ostringstream s;
    s << o.summary << ", " << seconds_since(t0) << "s";
    o.summary = s.str();
    return o;
  };
  report(1, "Table 1 regression", timed(table1));
  report(2, "quasi-packing lemmas", timed(quasi_packing_lemmas));
  report(3, "oracle correctness", timed(oracle_correctness));
  const auto t0 = std::chrono::steady_clock::now();
  const LoadRuns runs = load_runs();
  report(4, "one-round load bounds", one_round_bounds(runs, seconds_since(t0)));
  report(5, "multi-round separation", multi_round_separation(runs));
  report(6, "round-count contracts", timed(round_counts));
  report(7, "external-memory simulation", em_simulation());
  report(8, "LP duality", timed(lp_duality));
  std::cout << (failures ? std::to_string(failures) + " criterion/criteria failed" : std::string("all criteria passed")) << "\n";
  return failures ? 1 : 0;
}
