#pragma once

// The query-processing algorithms: HyperCube, the one-round skew-aware
// algorithm, skew-resilient join primitives and the multi-round plans for
// lines, cycles, Loomis-Whitney, cliques and covering-atom queries.

#include "mpcjoin/jobs.hpp"

#include <cmath>
#include <sstream>

namespace mpcjoin {

/// Integer shares for real targets (same rounding rule as round_shares).
inline std::vector<std::uint64_t> round_targets(std::uint64_t p, const std::vector<double>& target) {
  std::vector<std::uint64_t> shares(target.size(), 1), cap(target.size(), 1);
  for (std::size_t i = 0; i < target.size(); ++i) {
    shares[i] = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(target[i] + 1e-9)));
    cap[i] = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(target[i] - 1e-9)));
  }
  auto product = [&] {
    BigInt prod = 1;
    for (auto s : shares) prod *= s;
    return prod;
  };
  while (product() > p) {  // targets whose floors already overshoot
    auto it = std::max_element(shares.begin(), shares.end());
    if (*it == 1) break;
    --*it;
  }
  for (;;) {
    const BigInt prod = product();
    std::optional<std::size_t> pick;
    double best = 1.0;
    for (std::size_t i = 0; i < shares.size(); ++i) {
      if (shares[i] >= cap[i]) continue;
      if ((prod / shares[i]) * (shares[i] + 1) > p) continue;
      const double deficit = target[i] / static_cast<double>(shares[i]);
      if (deficit > best) { best = deficit; pick = i; }
    }
    if (!pick) break;
    ++shares[*pick];
  }
  return shares;
}

/// Splits p into a x b with a ~ p^ea, b ~ p^eb.
inline std::pair<std::uint64_t, std::uint64_t> split_servers(std::uint64_t p, const Rational& ea, const Rational& eb) {
  auto s = round_shares(p, {ea, eb});
  return {s[0], s[1]};
}

namespace detail {

inline BigInt big_pow(std::uint64_t x, unsigned k) {
  BigInt r = 1;
  for (unsigned i = 0; i < k; ++i) r *= x;
  return r;
}

/// d > m / p^{1/k}
inline bool above_root(std::uint64_t d, std::uint64_t m, std::uint64_t p, unsigned k) {
  return big_pow(d, k) * p > big_pow(m, k);
}

/// Values of v whose degree in some source containing v exceeds m / p^{1/k}.
inline std::set<Value> root_heavy(const std::vector<Source>& sources, VarId v, std::uint64_t m, std::uint64_t p, unsigned k) {
  std::set<Value> out;
  std::unordered_map<std::uint64_t, bool> memo;
  for (const auto& s : sources) {
    if (!s.has(v)) continue;
    for (const auto& [x, d] : s.stats->degrees(v)) {
      auto it = memo.find(d);
      if (it == memo.end()) it = memo.emplace(d, above_root(d, m, p, k)).first;
      if (it->second) out.insert(x);
    }
  }
  return out;
}

inline std::vector<Rational> uniform_exponents(std::size_t count, unsigned k) {
  return std::vector<Rational>(count, Rational(1, k));
}

inline void require_emit(const Sink& s, const std::string& who) {
  if (!s.emit) throw std::logic_error(who + ": plan must emit its output");
}

inline std::string insufficient(const std::string& who) { return who + ": insufficient servers"; }

}  // namespace detail

/// Semi-join B ⋉ A (vars(A) ∩ vars(B) as key) stored over vars(B).
inline JobPtr make_semi_join(PlanContext& ctx, const Layout& layout, const Source& a, const Source& b, Sink sink,
                             const std::string& title) {
  return std::make_unique<OneSidedJoinJob>(ctx, layout, a, b, sorted_vars(b.vars), std::move(sink), title);
}

/// Intersection of sources over the same variables.
inline JobPtr make_intersection(PlanContext& ctx, const Layout& layout, const std::vector<Source>& parts, Sink sink,
                                const std::string& title) {
  std::vector<OneRoundJob::Input> in;
  for (const auto& s : parts) in.push_back({s, Placement::Key});
  return std::make_unique<OneRoundJob>(ctx, layout, std::move(in), std::vector<std::uint64_t>{}, sorted_vars(parts[0].vars),
                                       std::move(sink), title);
}

/// HyperCube over the given sources with shares indexed by global variable.
inline JobPtr make_hypercube(PlanContext& ctx, const Layout& layout, const std::vector<Source>& sources,
                             std::vector<std::uint64_t> shares, Sink sink, const std::string& title) {
  std::vector<OneRoundJob::Input> in;
  for (const auto& s : sources) in.push_back({s, Placement::Grid});
  return std::make_unique<OneRoundJob>(ctx, layout, std::move(in), std::move(shares), std::vector<VarId>{}, std::move(sink),
                                       title);
}

inline JobPtr make_line(PlanContext& ctx, const Layout& layout, std::vector<Source> chain, std::vector<VarId> y, Sink sink,
                        const std::string& title);

/// Path B_1..B_L over y_0..y_L with optional unary restrictions at its ends
/// (sources containing y_0 / y_L plus constant columns), applied by semi-joins
/// in the first round.
inline JobPtr make_path(PlanContext& ctx, const Layout& layout, std::vector<Source> chain, std::vector<VarId> y,
                        const std::optional<Source>& left, const std::optional<Source>& right, Sink sink,
                        const std::string& title) {
  const std::size_t L = chain.size();
  if (!left && !right) return make_line(ctx, layout, std::move(chain), std::move(y), std::move(sink), title);
  if (L == 1) {
    if (left && right) {
      const std::string fl = ctx.fresh(title + ".semiL"), fr = ctx.fresh(title + ".semiR");
      std::vector<JobPtr> semis;
      semis.push_back(make_semi_join(ctx, layout, *left, chain[0], Sink::store(fl), title + ".semiL"));
      semis.push_back(make_semi_join(ctx, layout, *right, chain[0], Sink::store(fr), title + ".semiR"));
      const auto vars = sorted_vars(chain[0].vars);
      std::vector<Source> parts{intermediate_source(chain[0].name + "'", fl, vars, chain[0].stats),
                                intermediate_source(chain[0].name + "''", fr, vars, chain[0].stats)};
      return std::make_unique<SequenceJob>(std::make_unique<ParallelJob>(std::move(semis), title + " semi-joins"),
                                           make_intersection(ctx, layout, parts, std::move(sink), title + ".intersect"));
    }
    return make_semi_join(ctx, layout, left ? *left : *right, chain[0], std::move(sink), title + ".semi");
  }
  std::vector<JobPtr> semis;
  if (left) {
    const std::string f = ctx.fresh(title + ".semiL");
    semis.push_back(make_semi_join(ctx, layout, *left, chain.front(), Sink::store(f), title + ".semiL"));
    chain.front() = intermediate_source(chain.front().name + "'", f, sorted_vars(chain.front().vars), chain.front().stats);
  }
  if (right) {
    const std::string f = ctx.fresh(title + ".semiR");
    semis.push_back(make_semi_join(ctx, layout, *right, chain.back(), Sink::store(f), title + ".semiR"));
    chain.back() = intermediate_source(chain.back().name + "'", f, sorted_vars(chain.back().vars), chain.back().stats);
  }
  return std::make_unique<SequenceJob>(std::make_unique<ParallelJob>(std::move(semis), title + " semi-joins"),
                                       make_line(ctx, layout, std::move(chain), std::move(y), std::move(sink), title));
}

/// Line B_1..B_k over y_0..y_k in at most floor(k/2) rounds (k >= 2).
inline JobPtr make_line(PlanContext& ctx, const Layout& layout, std::vector<Source> chain, std::vector<VarId> y, Sink sink,
                        const std::string& title) {
  const std::size_t k = chain.size();
  const std::uint64_t P = layout.size();
  if (k <= 4) return std::make_unique<OneRoundSkewJob>(ctx, layout, std::move(chain), std::move(sink), title + ".L" + std::to_string(k));
  if (k % 2 == 0) {
    const std::uint64_t n = k / 2;
    auto [a, b] = split_servers(P, Rational(n, n + 1), Rational(1, n + 1));
    auto [la, lb] = layout.grid(a, b);
    const std::string fa = ctx.fresh(title + ".left"), fb = ctx.fresh(title + ".last");
    Source last = chain.back();
    chain.pop_back();
    y.pop_back();
    std::vector<ProductJob::Part> parts;
    parts.push_back({make_line(ctx, la, std::move(chain), std::move(y), Sink::store(fa), title + ".L" + std::to_string(k - 1)), fa});
    std::vector<OneRoundJob::Input> in{{last, Placement::Key}};
    parts.push_back({std::make_unique<OneRoundJob>(ctx, lb, std::move(in), std::vector<std::uint64_t>{}, sorted_vars(last.vars),
                                                   Sink::store(fb), title + ".spread"),
                     fb});
    return std::make_unique<ProductJob>(ctx, layout, std::move(parts), std::move(sink), title + ".L" + std::to_string(k) + " product");
  }
  // Odd k = 2n - 1: split on the degree of y_1 in B_1.
  const std::uint64_t n = (k + 1) / 2;
  auto [a, b] = split_servers(P, Rational(1, n), Rational(n - 1, n));
  const VarId y1 = y[1];
  const std::uint64_t m = ctx.m;
  std::map<Value, std::uint64_t> heavy;
  for (const auto& [x, d] : chain[0].stats->degrees(y1)) {
    if (d * a > m) heavy.emplace(x, d);
  }
  auto heavy_set = std::make_shared<std::set<Value>>();
  for (const auto& [x, d] : heavy) heavy_set->insert(x);
  std::vector<JobPtr> branches;
  {
    auto [la, lb] = layout.grid(a, b);
    auto light = [&](const Source& s) {
      if (!s.has(y1) || heavy_set->empty()) return s;
      const std::size_t c = s.column(y1);
      return restrict_source(s, [c, heavy_set](std::span<const Value> t) { return !heavy_set->count(t[c]); });
    };
    const std::string fj = ctx.fresh(title + ".head"), fr = ctx.fresh(title + ".rest");
    std::vector<ProductJob::Part> parts;
    parts.push_back({std::make_unique<OneSidedJoinJob>(ctx, la, light(chain[0]), light(chain[1]), std::vector<VarId>{},
                                                       Sink::store(fj), title + ".head"),
                     fj});
    std::vector<Source> rest(chain.begin() + 2, chain.end());
    std::vector<VarId> ry(y.begin() + 2, y.end());
    parts.push_back({make_line(ctx, lb, std::move(rest), std::move(ry), Sink::store(fr), title + ".L" + std::to_string(k - 2)), fr});
    branches.push_back(std::make_unique<ProductJob>(ctx, layout, std::move(parts), sink, title + ".light-" +
                                                    ctx.db.query.variables()[y1]));
  }
  std::uint64_t offset = 0;
  for (const auto& [h, d] : heavy) {
    const std::uint64_t p0 = static_cast<std::uint64_t>((static_cast<unsigned __int128>(d) * a) / m);
    const Layout range = layout.range(offset, p0 * b);
    offset += p0 * b;
    if (offset > P) throw std::runtime_error(detail::insufficient(title));
    auto [ha, hb] = range.grid(p0, b);
    Source s1 = restrict_source(chain[0], value_filter(chain[0], y1, h));
    Source s2 = restrict_source(chain[1], value_filter(chain[1], y1, h));
    const std::string fh = ctx.fresh(title + ".heavy"), fp = ctx.fresh(title + ".path");
    const std::string tag = title + "." + ctx.db.query.variables()[y1] + "=" + std::to_string(h);
    std::vector<ProductJob::Part> parts;
    std::vector<OneRoundJob::Input> in{{s1, Placement::Key}};
    parts.push_back({std::make_unique<OneRoundJob>(ctx, ha, std::move(in), std::vector<std::uint64_t>{},
                                                   std::vector<VarId>{y[0]}, Sink::store(fh), tag + ".spread"),
                     fh});
    std::vector<Source> rest(chain.begin() + 2, chain.end());
    std::vector<VarId> ry(y.begin() + 2, y.end());
    parts.push_back({make_path(ctx, hb, std::move(rest), std::move(ry), s2, std::nullopt, Sink::store(fp), tag), fp});
    branches.push_back(std::make_unique<ProductJob>(ctx, range, std::move(parts), sink, tag));
  }
  return std::make_unique<ParallelJob>(std::move(branches), title + ".L" + std::to_string(k));
}

/// Odd cycle C_0..C_{k-1} over z_0..z_{k-1} (C_j holds z_j, z_{j+1}).
inline JobPtr make_odd_cycle(PlanContext& ctx, const Layout& layout, const std::vector<Source>& c, const std::vector<VarId>& z,
                             const Sink& sink, const std::string& title) {
  detail::require_emit(sink, title);
  const std::size_t k = c.size();
  const std::uint64_t P = layout.size();
  auto heavy = std::make_shared<std::vector<std::set<Value>>>();
  for (std::size_t i = 0; i < k; ++i) heavy->push_back(detail::root_heavy(c, z[i], ctx.m, P, static_cast<unsigned>(k)));
  auto light_below = [&](const Source& s, std::size_t upto) {
    std::vector<std::pair<VarId, const std::set<Value>*>> hv;
    for (std::size_t i = 0; i < upto; ++i) hv.emplace_back(z[i], &(*heavy)[i]);
    TupleFilter f = light_filter(s, hv);
    if (!f) return s;
    return restrict_source(s, [f, heavy](std::span<const Value> t) { return f(t); });
  };
  std::vector<JobPtr> parts;
  {
    std::vector<Source> light;
    for (const auto& s : c) light.push_back(light_below(s, k));
    auto e = round_shares(P, detail::uniform_exponents(k, static_cast<unsigned>(k)));
    std::vector<std::uint64_t> shares(ctx.db.query.num_vars(), 1);
    for (std::size_t i = 0; i < k; ++i) shares[z[i]] = e[i];
    parts.push_back(make_hypercube(ctx, layout, light, shares, sink, title + ".light"));
  }
  for (std::size_t i = 0; i < k; ++i) {
    const auto& hi = (*heavy)[i];
    if (hi.empty()) continue;
    const std::uint64_t share = P / hi.size();
    if (share == 0) throw std::runtime_error(detail::insufficient(title));
    std::uint64_t idx = 0;
    for (Value h : hi) {
      const Layout range = layout.range(idx++ * share, share);
      auto prep = [&](std::size_t j) {
        const Source& s = c[j % k];
        return restrict_source(light_below(s, i), value_filter(s, z[i], h));
      };
      std::vector<Source> chain;
      std::vector<VarId> y{z[(i + 1) % k]};
      for (std::size_t j = i + 1; j < i + k - 1; ++j) {
        chain.push_back(prep(j));
        y.push_back(z[(j + 1) % k]);
      }
      const std::string tag = title + "." + ctx.db.query.variables()[z[i]] + "=" + std::to_string(h);
      parts.push_back(make_path(ctx, range, std::move(chain), std::move(y), prep(i), prep(i + k - 1), sink.with_constant(z[i], h), tag));
    }
  }
  return std::make_unique<ParallelJob>(std::move(parts), title + ".C" + std::to_string(k));
}

/// Even cycle: value pairs at odd distance that are jointly heavy get
/// dedicated servers (case 1); the rest is split into dyadic classes of the
/// heavier parity's degree, each a HyperCube with skewed shares (case 2).
inline JobPtr make_even_cycle(PlanContext& ctx, const Layout& layout, const std::vector<Source>& c, const std::vector<VarId>& z,
                              const Sink& sink, const std::string& title) {
  detail::require_emit(sink, title);
  const std::size_t k = c.size();
  const unsigned uk = static_cast<unsigned>(k);
  const std::uint64_t P = layout.size();
  const std::uint64_t m = ctx.m;
  const auto& names = ctx.db.query.variables();
  // deg[i][v]: degree of value v at z_i, maximized over the two adjacent atoms.
  auto deg = std::make_shared<std::vector<std::unordered_map<Value, std::uint64_t>>>(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (const Source* s : {&c[(i + k - 1) % k], &c[i]}) {
      for (const auto& [x, d] : s->stats->degrees(z[i])) {
        auto& slot = (*deg)[i][x];
        slot = std::max(slot, d);
      }
    }
  }
  const BigInt m2k = detail::big_pow(m, 2 * uk);
  const BigInt P2 = BigInt(P) * P;
  auto joint = [=](std::uint64_t da, std::uint64_t db) {  // da*db >= m^2 / p^{2/k}
    return detail::big_pow(da, uk) * detail::big_pow(db, uk) * P2 >= m2k;
  };
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (even index, odd index)
  for (std::size_t i = 0; i < k; i += 2) {
    for (std::size_t j = 1; j < k; j += 2) pairs.emplace_back(i, j);
  }
  // Candidates per variable: degree >= m / p^{2/k}.
  const BigInt mk = detail::big_pow(m, uk);
  std::vector<std::vector<std::pair<Value, std::uint64_t>>> cand(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (const auto& [x, d] : (*deg)[i]) {
      if (detail::big_pow(d, uk) * P2 >= mk) cand[i].emplace_back(x, d);
    }
    std::sort(cand[i].begin(), cand[i].end());
  }
  auto degree_of = [deg](std::size_t i, Value x) -> std::uint64_t {
    auto it = (*deg)[i].find(x);
    return it == (*deg)[i].end() ? 0 : it->second;
  };
  // Index of the first jointly heavy pair of a full assignment, or -1.
  auto first_pair = [=](std::span<const Value> t) -> long {
    for (std::size_t q = 0; q < pairs.size(); ++q) {
      const std::uint64_t da = degree_of(pairs[q].first, t[z[pairs[q].first]]);
      const std::uint64_t db = degree_of(pairs[q].second, t[z[pairs[q].second]]);
      if (da && db && joint(da, db)) return static_cast<long>(q);
    }
    return -1;
  };

  std::vector<JobPtr> parts;
  std::uint64_t offset = 0;
  for (std::size_t q = 0; q < pairs.size(); ++q) {
    const auto [i, j] = pairs[q];
    for (const auto& [a, da] : cand[i]) {
      for (const auto& [b, db] : cand[j]) {
        if (!joint(da, db)) continue;
        const std::uint64_t want = static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(P) * da * db) / (static_cast<unsigned __int128>(4) * m * m));
        const std::uint64_t share = std::max<std::uint64_t>(1, want);
        if (offset + share > P) throw std::runtime_error(detail::insufficient(title));
        const Layout range = layout.range(offset, share);
        offset += share;
        auto prep = [&](std::size_t idx) {
          const Source& s = c[idx % k];
          return restrict_source(restrict_source(s, value_filter(s, z[i], a)), value_filter(s, z[j], b));
        };
        const std::string tag = title + "." + names[z[i]] + "=" + std::to_string(a) + "," + names[z[j]] + "=" + std::to_string(b);
        Sink out = sink.with_constant(z[i], a).with_constant(z[j], b).with_accept(
            [first_pair, q](std::span<const Value> t) { return first_pair(t) == static_cast<long>(q); });
        const bool adjacent = (j == (i + 1) % k) || (i == (j + 1) % k);
        if (adjacent) {
          const std::size_t u = (j == (i + 1) % k) ? i : j;  // check atom C_u holds z_u, z_{u+1}
          const std::size_t w = (u + 1) % k;
          std::vector<Source> chain;
          std::vector<VarId> y{z[(w + 1) % k]};
          for (std::size_t t = w + 1; t < w + k - 2; ++t) {
            chain.push_back(prep(t));
            y.push_back(z[(t + 1) % k]);
          }
          const std::string fp = ctx.fresh(tag + ".path"), fc = ctx.fresh(tag + ".check");
          std::vector<ProductJob::Part> pp;
          pp.push_back({make_path(ctx, range, std::move(chain), std::move(y), prep(w), prep(u + k - 1), Sink::store(fp), tag), fp});
          std::vector<OneRoundJob::Input> in{{prep(u), Placement::Broadcast}};
          pp.push_back({std::make_unique<OneRoundJob>(ctx, range, std::move(in), std::vector<std::uint64_t>{}, std::vector<VarId>{},
                                                      Sink::store(fc), tag + ".check"),
                        fc});
          parts.push_back(std::make_unique<ProductJob>(ctx, range, std::move(pp), out, tag));
        } else {
          // Two paths: z_i .. z_j and z_j .. z_i (forward), each with both ends fixed.
          auto path_between = [&](std::size_t from, std::size_t to, const Layout& lay, const std::string& f) {
            const std::size_t len = (to + k - from) % k;  // atoms from z_from to z_to
            std::vector<Source> chain;
            std::vector<VarId> y{z[(from + 1) % k]};
            for (std::size_t t = from + 1; t < from + len - 1; ++t) {
              chain.push_back(prep(t));
              y.push_back(z[(t + 1) % k]);
            }
            return make_path(ctx, lay, std::move(chain), std::move(y), prep(from), prep(from + len - 1), Sink::store(f), tag);
          };
          const std::size_t alpha = (j + k - i) % k - 2, beta = (i + k - j) % k - 2;
          auto [g1, g2] = split_servers(range.size(), Rational(alpha + 1, alpha + beta + 2), Rational(beta + 1, alpha + beta + 2));
          auto [l1, l2] = range.grid(g1, g2);
          const std::string f1 = ctx.fresh(tag + ".fwd"), f2 = ctx.fresh(tag + ".back");
          std::vector<ProductJob::Part> pp;
          pp.push_back({path_between(i, j, l1, f1), f1});
          pp.push_back({path_between(j, i, l2, f2), f2});
          parts.push_back(std::make_unique<ProductJob>(ctx, range, std::move(pp), out, tag));
        }
      }
    }
  }
  // Case 2: classes c = 0..C by the largest even-position degree D ~ m / 2^c.
  const double pk = std::pow(static_cast<double>(P), 2.0 / static_cast<double>(k));
  const int C = std::max(0, static_cast<int>(std::floor(std::log2(pk) + 1e-9)) - 1);
  auto cls = [=](std::span<const Value> t) {
    std::uint64_t D = 0;
    for (std::size_t i = 0; i < k; i += 2) D = std::max(D, degree_of(i, t[z[i]]));
    int cl = 0;
    while (cl < C && D * (std::uint64_t{1} << (cl + 1)) <= m) ++cl;
    return cl;
  };
  for (int cl = 0; cl <= C; ++cl) {
    std::vector<double> target(k);
    for (std::size_t i = 0; i < k; ++i) {
      target[i] = i % 2 == 0 ? std::ldexp(1.0, cl) : pk / std::ldexp(1.0, cl + 1);
    }
    auto e = round_targets(P, target);
    std::vector<std::uint64_t> shares(ctx.db.query.num_vars(), 1);
    for (std::size_t i = 0; i < k; ++i) shares[z[i]] = e[i];
    std::vector<Source> srcs;
    for (std::size_t j = 0; j < k; ++j) {
      const Source& s = c[j];
      // The even-position variable of C_j is z_j or z_{j+1}.
      const std::size_t ev = j % 2 == 0 ? j : (j + 1) % k, od = j % 2 == 0 ? (j + 1) % k : j;
      const std::size_t ce = s.column(z[ev]), co = s.column(z[od]);
      const BigInt bound = detail::big_pow(m * (std::uint64_t{1} << (cl + 1)), uk);
      const bool last = cl == C;
      srcs.push_back(restrict_source(s, [=](std::span<const Value> t) {
        const std::uint64_t de = degree_of(ev, t[ce]);
        if (de * (std::uint64_t{1} << cl) > m) return false;
        if (last) return true;
        return detail::big_pow(degree_of(od, t[co]), uk) * P2 < bound;
      }));
    }
    Sink out = sink.with_accept([first_pair, cls, cl](std::span<const Value> t) { return first_pair(t) < 0 && cls(t) == cl; });
    parts.push_back(make_hypercube(ctx, layout, srcs, shares, out, title + ".class" + std::to_string(cl)));
  }
  return std::make_unique<ParallelJob>(std::move(parts), title + ".C" + std::to_string(k));
}

/// Clique over `vars` with one binary source per pair (keyed by ascending pair).
inline JobPtr make_clique(PlanContext& ctx, const Layout& layout, const std::vector<VarId>& vars,
                          const std::map<std::pair<VarId, VarId>, Source>& edges, const Sink& sink, const std::string& title) {
  detail::require_emit(sink, title);
  const std::size_t k = vars.size();
  auto edge = [&](VarId a, VarId b) -> const Source& { return edges.at({std::min(a, b), std::max(a, b)}); };
  if (k == 3) {
    std::vector<Source> c{edge(vars[0], vars[1]), edge(vars[1], vars[2]), edge(vars[2], vars[0])};
    return make_odd_cycle(ctx, layout, c, vars, sink, title);
  }
  const std::uint64_t P = layout.size();
  std::vector<Source> all;
  for (const auto& [key, s] : edges) all.push_back(s);
  auto heavy = std::make_shared<std::vector<std::set<Value>>>();
  for (std::size_t i = 0; i < k; ++i) heavy->push_back(detail::root_heavy(all, vars[i], ctx.m, P, static_cast<unsigned>(k)));
  auto light_below = [&](const Source& s, std::size_t upto) {
    std::vector<std::pair<VarId, const std::set<Value>*>> hv;
    for (std::size_t i = 0; i < upto; ++i) hv.emplace_back(vars[i], &(*heavy)[i]);
    TupleFilter f = light_filter(s, hv);
    if (!f) return s;
    return restrict_source(s, [f, heavy](std::span<const Value> t) { return f(t); });
  };
  std::vector<JobPtr> parts;
  {
    std::vector<Source> light;
    for (const auto& s : all) light.push_back(light_below(s, k));
    auto e = round_shares(P, detail::uniform_exponents(k, static_cast<unsigned>(k)));
    std::vector<std::uint64_t> shares(ctx.db.query.num_vars(), 1);
    for (std::size_t i = 0; i < k; ++i) shares[vars[i]] = e[i];
    parts.push_back(make_hypercube(ctx, layout, light, shares, sink, title + ".light"));
  }
  for (std::size_t i = 0; i < k; ++i) {
    const auto& hi = (*heavy)[i];
    if (hi.empty()) continue;
    const std::uint64_t share = P / hi.size();
    if (share == 0) throw std::runtime_error(detail::insufficient(title));
    std::uint64_t idx = 0;
    for (Value h : hi) {
      const Layout range = layout.range(idx++ * share, share);
      const std::string tag = title + "." + ctx.db.query.variables()[vars[i]] + "=" + std::to_string(h);
      auto prep = [&](const Source& s) { return restrict_source(light_below(s, i), value_filter(s, vars[i], h)); };
      std::vector<VarId> rest;
      for (std::size_t t = 0; t < k; ++t) {
        if (t != i) rest.push_back(vars[t]);
      }
      std::map<std::pair<VarId, VarId>, Source> sub;
      for (std::size_t a = 0; a < rest.size(); ++a) {
        for (std::size_t b = a + 1; b < rest.size(); ++b) sub.emplace(std::make_pair(rest[a], rest[b]), prep(edge(rest[a], rest[b])));
      }
      std::vector<JobPtr> semis;
      for (std::size_t t = 0; t < rest.size(); ++t) {
        const VarId w = rest[t], nx = rest[(t + 1) % rest.size()];
        const auto key = std::make_pair(std::min(w, nx), std::max(w, nx));
        Source target = sub.at(key);
        const std::string f = ctx.fresh(tag + ".semi");
        semis.push_back(make_semi_join(ctx, range, prep(edge(vars[i], w)), target, Sink::store(f), tag + ".semi"));
        sub.at(key) = intermediate_source(target.name + "'", f, sorted_vars(target.vars), target.stats);
      }
      parts.push_back(std::make_unique<SequenceJob>(std::make_unique<ParallelJob>(std::move(semis), tag + " semi-joins"),
                                                    make_clique(ctx, range, rest, sub, sink.with_constant(vars[i], h), tag)));
    }
  }
  return std::make_unique<ParallelJob>(std::move(parts), title + ".K" + std::to_string(k));
}

// ---------------------------------------------------------------------------
// Query shapes

struct LineShape {
  std::vector<std::size_t> atoms;  // in path order
  std::vector<VarId> vars;         // y_0 .. y_k
};

inline bool binary_distinct(const Query& q) {
  for (const auto& a : q.atoms()) {
    if (a.vars.size() != 2 || a.vars[0] == a.vars[1]) return false;
  }
  return true;
}

inline std::optional<LineShape> as_line(const Query& q) {
  if (!binary_distinct(q) || q.num_atoms() + 1 != q.num_vars()) return std::nullopt;
  std::vector<std::vector<std::size_t>> inc(q.num_vars());
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    for (VarId v : q.atoms()[j].vars) inc[v].push_back(j);
  }
  std::optional<VarId> start;
  for (VarId v = 0; v < q.num_vars(); ++v) {
    if (inc[v].size() > 2 || inc[v].empty()) return std::nullopt;
    if (inc[v].size() == 1 && !start) start = v;
  }
  if (!start) return std::nullopt;
  LineShape s;
  s.vars.push_back(*start);
  std::vector<bool> used(q.num_atoms(), false);
  VarId cur = *start;
  for (std::size_t step = 0; step < q.num_atoms(); ++step) {
    std::optional<std::size_t> next;
    for (std::size_t j : inc[cur]) {
      if (!used[j]) next = j;
    }
    if (!next) return std::nullopt;
    used[*next] = true;
    const auto& a = q.atoms()[*next].vars;
    cur = a[0] == cur ? a[1] : a[0];
    s.atoms.push_back(*next);
    s.vars.push_back(cur);
  }
  return s;
}

inline std::optional<LineShape> as_cycle(const Query& q) {
  if (!binary_distinct(q) || q.num_atoms() != q.num_vars() || q.num_vars() < 3) return std::nullopt;
  std::vector<std::vector<std::size_t>> inc(q.num_vars());
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    for (VarId v : q.atoms()[j].vars) inc[v].push_back(j);
  }
  for (const auto& i : inc) {
    if (i.size() != 2) return std::nullopt;
  }
  LineShape s;
  std::vector<bool> used(q.num_atoms(), false);
  VarId cur = 0;
  for (std::size_t step = 0; step < q.num_atoms(); ++step) {
    s.vars.push_back(cur);
    std::optional<std::size_t> next;
    for (std::size_t j : inc[cur]) {
      if (!used[j] && !next) next = j;
    }
    if (!next) return std::nullopt;
    used[*next] = true;
    const auto& a = q.atoms()[*next].vars;
    cur = a[0] == cur ? a[1] : a[0];
    s.atoms.push_back(*next);
  }
  if (cur != 0) return std::nullopt;
  return s;
}

/// Atom index missing variable i, for Loomis-Whitney queries.
inline std::optional<std::vector<std::size_t>> as_loomis_whitney(const Query& q) {
  const std::size_t k = q.num_vars();
  if (k < 3 || q.num_atoms() != k) return std::nullopt;
  std::vector<std::size_t> missing(k, q.num_atoms());
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    const VarSet s = q.atom_vars(j);
    if (q.atoms()[j].vars.size() != k - 1 || static_cast<std::size_t>(std::popcount(s)) != k - 1) return std::nullopt;
    for (VarId v = 0; v < k; ++v) {
      if (!contains(s, v)) {
        if (missing[v] != q.num_atoms()) return std::nullopt;
        missing[v] = j;
      }
    }
  }
  return missing;
}

inline std::optional<std::map<std::pair<VarId, VarId>, std::size_t>> as_clique(const Query& q) {
  const std::size_t k = q.num_vars();
  if (k < 3 || !binary_distinct(q) || q.num_atoms() != k * (k - 1) / 2) return std::nullopt;
  std::map<std::pair<VarId, VarId>, std::size_t> e;
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    const auto& a = q.atoms()[j].vars;
    if (!e.emplace(std::make_pair(std::min(a[0], a[1]), std::max(a[0], a[1])), j).second) return std::nullopt;
  }
  return e;
}

inline std::optional<std::size_t> covering_atom(const Query& q) {
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    if (q.atom_vars(j) == q.all_vars()) return j;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Results and entry points

struct AlgorithmResult {
  std::string algorithm;
  std::string query;
  std::uint64_t p = 0;
  OutputSummary output;
  LoadReport load;
  int rounds = 0;
  std::string plan;
  std::optional<bool> oracle_match;

  std::uint64_t duplicates() const { return output.emitted - output.distinct; }

  static std::string csv_header() {
    return "algorithm,query,p,rounds,max_load_tuples,max_load_bits,output_tuples,duplicates,checksum,oracle_match";
  }
  std::string csv_row() const {
    std::ostringstream os;
    os << algorithm << ",\"" << query << "\"," << p << "," << rounds << "," << load.max.tuples << "," << load.max.bits << ","
       << output.distinct << "," << duplicates() << "," << std::hex << output.checksum << std::dec << ","
       << (oracle_match ? (*oracle_match ? "yes" : "no") : "n/a");
    return os.str();
  }
};

/// Runs a plan: compute(0), then route / barrier / compute per round.
inline AlgorithmResult execute_plan(const std::string& name, const DatabaseInstance& db, const ClusterConfig& cfg, Job& job) {
  Cluster cluster(db, cfg);
  job.compute(cluster, 0);
  for (int r = 1; r <= job.rounds(); ++r) {
    cluster.begin_round(r);
    job.route(cluster, r);
    cluster.commit();
    job.compute(cluster, r);
  }
  AlgorithmResult res;
  res.algorithm = name;
  res.query = db.query.render();
  res.p = cfg.p;
  res.output = cluster.output();
  res.load = cluster.report();
  res.rounds = cluster.rounds_used();
  std::ostringstream plan;
  plan << name << " on p=" << cfg.p << " (" << job.rounds() << " planned rounds)\n";
  job.describe(plan, 1, 1);
  res.plan = plan.str();
  return res;
}

namespace detail {

inline std::vector<Source> base_sources(const DatabaseInstance& db) {
  std::vector<Source> s;
  for (std::size_t j = 0; j < db.relations.size(); ++j) s.push_back(base_source(db, j));
  return s;
}

inline void require_p(const ClusterConfig& cfg) {
  if (cfg.p < 1) throw std::invalid_argument("p must be >= 1");
}

}  // namespace detail

inline AlgorithmResult hc_one_round(const DatabaseInstance& db, const ClusterConfig& cfg, VarSet heavy = 0) {
  detail::require_p(cfg);
  PlanContext ctx(db, cfg.seed);
  const auto alloc = share_lp(db.query, db.bit_sizes(), cfg.p, heavy);
  auto job = make_hypercube(ctx, Layout::full(cfg.p), detail::base_sources(db), alloc.shares, Sink::output(), "hc");
  return execute_plan("hc_one_round", db, cfg, *job);
}

inline AlgorithmResult one_round_skew(const DatabaseInstance& db, const ClusterConfig& cfg) {
  detail::require_p(cfg);
  PlanContext ctx(db, cfg.seed);
  OneRoundSkewJob job(ctx, Layout::full(cfg.p), detail::base_sources(db), Sink::output(), "skew");
  return execute_plan("one_round_skew", db, cfg, job);
}

/// Heavy-set classification of each output tuple, as used by one_round_skew.
inline std::vector<VarSet> one_round_skew_classes(const DatabaseInstance& db, std::uint64_t p, const Relation& outputs) {
  PlanContext ctx(db, 0);
  OneRoundSkewJob job(ctx, Layout::full(p), detail::base_sources(db), Sink::output(), "skew");
  std::vector<VarSet> out;
  for (std::size_t i = 0; i < outputs.size(); ++i) out.push_back(job.classify(outputs[i]));
  return out;
}

inline AlgorithmResult join_one_sided_skew(const DatabaseInstance& db, const ClusterConfig& cfg) {
  detail::require_p(cfg);
  if (db.query.num_atoms() != 2) throw std::invalid_argument("join_one_sided_skew: query must have two atoms");
  PlanContext ctx(db, cfg.seed);
  OneSidedJoinJob job(ctx, Layout::full(cfg.p), base_source(db, 0), base_source(db, 1), {}, Sink::output(), "join");
  return execute_plan("join_one_sided_skew", db, cfg, job);
}

inline AlgorithmResult semi_join(const DatabaseInstance& db, const ClusterConfig& cfg) {
  detail::require_p(cfg);
  const Query& q = db.query;
  if (q.num_atoms() != 2 || (q.atom_vars(0) & ~q.atom_vars(1)) != 0) {
    throw std::invalid_argument("semi_join: query must be R(z) ⋈ S(z, ...) with vars(R) within vars(S)");
  }
  PlanContext ctx(db, cfg.seed);
  OneSidedJoinJob job(ctx, Layout::full(cfg.p), base_source(db, 0), base_source(db, 1), {}, Sink::output(), "semi");
  return execute_plan("semi_join", db, cfg, job);
}

inline AlgorithmResult line_multiround(const DatabaseInstance& db, const ClusterConfig& cfg) {
  detail::require_p(cfg);
  auto shape = as_line(db.query);
  if (!shape || shape->atoms.size() < 2) throw std::invalid_argument("line_multiround: query is not a line with k >= 2");
  PlanContext ctx(db, cfg.seed);
  std::vector<Source> chain;
  for (std::size_t j : shape->atoms) chain.push_back(base_source(db, j));
  auto job = make_line(ctx, Layout::full(cfg.p), std::move(chain), shape->vars, Sink::output(), "line");
  return execute_plan("line_multiround", db, cfg, *job);
}

inline AlgorithmResult cycle_multiround(const DatabaseInstance& db, const ClusterConfig& cfg) {
  detail::require_p(cfg);
  auto shape = as_cycle(db.query);
  if (!shape) throw std::invalid_argument("cycle_multiround: query is not a cycle with k >= 3");
  PlanContext ctx(db, cfg.seed);
  std::vector<Source> c;
  for (std::size_t j : shape->atoms) c.push_back(base_source(db, j));
  auto job = c.size() % 2 == 1 ? make_odd_cycle(ctx, Layout::full(cfg.p), c, shape->vars, Sink::output(), "cycle")
                               : make_even_cycle(ctx, Layout::full(cfg.p), c, shape->vars, Sink::output(), "cycle");
  return execute_plan("cycle_multiround", db, cfg, *job);
}

inline AlgorithmResult triangle_2round(const DatabaseInstance& db, const ClusterConfig& cfg) {
  auto shape = as_cycle(db.query);
  if (!shape || shape->atoms.size() != 3) throw std::invalid_argument("triangle_2round: query is not a triangle");
  auto r = cycle_multiround(db, cfg);
  r.algorithm = "triangle_2round";
  return r;
}

inline AlgorithmResult lw_multiround(const DatabaseInstance& db, const ClusterConfig& cfg) {
  detail::require_p(cfg);
  auto missing = as_loomis_whitney(db.query);
  if (!missing) throw std::invalid_argument("lw_multiround: query is not Loomis-Whitney");
  PlanContext ctx(db, cfg.seed);
  const Query& q = db.query;
  const std::size_t k = q.num_vars();
  const std::uint64_t P = cfg.p;
  const Layout all = Layout::full(P);
  auto base = detail::base_sources(db);
  auto heavy = std::make_shared<std::vector<std::set<Value>>>();
  for (VarId v = 0; v < k; ++v) heavy->push_back(detail::root_heavy(base, v, ctx.m, P, static_cast<unsigned>(k)));
  auto light_below = [&](const Source& s, std::size_t upto) {
    std::vector<std::pair<VarId, const std::set<Value>*>> hv;
    for (VarId v = 0; v < upto; ++v) hv.emplace_back(v, &(*heavy)[v]);
    TupleFilter f = light_filter(s, hv);
    if (!f) return s;
    return restrict_source(s, [f, heavy](std::span<const Value> t) { return f(t); });
  };
  std::vector<JobPtr> parts;
  {
    std::vector<Source> light;
    for (const auto& s : base) light.push_back(light_below(s, k));
    parts.push_back(make_hypercube(ctx, all, light, round_shares(P, detail::uniform_exponents(k, static_cast<unsigned>(k))),
                                   Sink::output(), "lw.light"));
  }
  for (VarId i = 0; i < k; ++i) {
    const auto& hi = (*heavy)[i];
    if (hi.empty()) continue;
    const std::uint64_t share = P / hi.size();
    if (share == 0) throw std::runtime_error(detail::insufficient("lw"));
    std::uint64_t idx = 0;
    for (Value h : hi) {
      const Layout range = all.range(idx++ * share, share);
      const std::string tag = "lw." + q.variables()[i] + "=" + std::to_string(h);
      auto prep = [&](const Source& s) { return restrict_source(light_below(s, i), value_filter(s, i, h)); };
      const Source key = prep(base[(*missing)[i]]);
      const auto kv = sorted_vars(key.vars);
      std::vector<JobPtr> semis;
      std::vector<Source> inter;
      for (std::size_t j = 0; j < base.size(); ++j) {
        if (j == (*missing)[i]) continue;
        const std::string f = ctx.fresh(tag + ".semi");
        semis.push_back(make_semi_join(ctx, range, prep(base[j]), key, Sink::store(f), tag + ".semi"));
        inter.push_back(intermediate_source(key.name + "/" + base[j].name, f, kv, key.stats));
      }
      parts.push_back(std::make_unique<SequenceJob>(
          std::make_unique<ParallelJob>(std::move(semis), tag + " semi-joins"),
          make_intersection(ctx, range, inter, Sink::output().with_constant(i, h), tag + ".intersect")));
    }
  }
  ParallelJob job(std::move(parts), "lw.LW" + std::to_string(k));
  return execute_plan("lw_multiround", db, cfg, job);
}

inline AlgorithmResult clique_multiround(const DatabaseInstance& db, const ClusterConfig& cfg) {
  detail::require_p(cfg);
  auto e = as_clique(db.query);
  if (!e) throw std::invalid_argument("clique_multiround: query is not a clique");
  PlanContext ctx(db, cfg.seed);
  std::map<std::pair<VarId, VarId>, Source> edges;
  for (const auto& [key, j] : *e) edges.emplace(key, base_source(db, j));
  std::vector<VarId> vars(db.query.num_vars());
  std::iota(vars.begin(), vars.end(), 0);
  auto job = make_clique(ctx, Layout::full(cfg.p), vars, edges, Sink::output(), "clique");
  return execute_plan("clique_multiround", db, cfg, *job);
}

inline AlgorithmResult covering_atom_2round(const DatabaseInstance& db, const ClusterConfig& cfg) {
  detail::require_p(cfg);
  auto r = covering_atom(db.query);
  if (!r) throw std::invalid_argument("no covering atom");
  PlanContext ctx(db, cfg.seed);
  const Layout all = Layout::full(cfg.p);
  auto base = detail::base_sources(db);
  JobPtr job;
  if (base.size() == 1) {
    job = std::make_unique<LocalEmitJob>(ctx, *r, Sink::output());
  } else if (base.size() == 2) {
    job = make_semi_join(ctx, all, base[1 - *r], base[*r], Sink::output(), "cover.semi");
  } else {
    std::vector<JobPtr> semis;
    std::vector<Source> inter;
    const auto kv = sorted_vars(base[*r].vars);
    for (std::size_t j = 0; j < base.size(); ++j) {
      if (j == *r) continue;
      const std::string f = ctx.fresh("cover.semi");
      semis.push_back(make_semi_join(ctx, all, base[j], base[*r], Sink::store(f), "cover.semi"));
      inter.push_back(intermediate_source(base[*r].name + "/" + base[j].name, f, kv, base[*r].stats));
    }
    job = std::make_unique<SequenceJob>(std::make_unique<ParallelJob>(std::move(semis), "cover semi-joins"),
                                        make_intersection(ctx, all, inter, Sink::output(), "cover.intersect"));
  }
  return execute_plan("covering_atom_2round", db, cfg, *job);
}

inline const std::vector<std::string>& algorithm_names() {
  static const std::vector<std::string> names{"hc_one_round",     "one_round_skew",   "join_one_sided_skew", "semi_join",
                                              "triangle_2round",  "line_multiround",  "cycle_multiround",    "lw_multiround",
                                              "clique_multiround", "covering_atom_2round"};
  return names;
}

/// Accepts '-' or '_' as separator ("triangle-2round" == "triangle_2round").
inline AlgorithmResult run_algorithm(std::string name, const DatabaseInstance& db, const ClusterConfig& cfg) {
  std::replace(name.begin(), name.end(), '-', '_');
  if (name == "hc_one_round" || name == "hc") return hc_one_round(db, cfg);
  if (name == "one_round_skew") return one_round_skew(db, cfg);
  if (name == "join_one_sided_skew") return join_one_sided_skew(db, cfg);
  if (name == "semi_join") return semi_join(db, cfg);
  if (name == "triangle_2round") return triangle_2round(db, cfg);
  if (name == "line_multiround") return line_multiround(db, cfg);
  if (name == "cycle_multiround") return cycle_multiround(db, cfg);
  if (name == "lw_multiround") return lw_multiround(db, cfg);
  if (name == "clique_multiround") return clique_multiround(db, cfg);
  if (name == "covering_atom_2round") return covering_atom_2round(db, cfg);
  throw std::invalid_argument("unknown algorithm: " + name);
}

/// Compares the collected output against the sequential oracle.
inline bool matches_oracle(AlgorithmResult& res, const DatabaseInstance& db) {
  const Relation expected = oracle_join(db.query, db.tuple_sets());
  bool ok;
  if (res.output.tuples) {
    ok = *res.output.tuples == expected;
  } else {
    ok = res.output.distinct == expected.size() && res.output.checksum == relation_checksum(expected);
  }
  res.oracle_match = ok;
  return ok;
}

}  // namespace mpcjoin
