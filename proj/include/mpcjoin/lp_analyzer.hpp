#pragma once

// Exact edge packing / cover / quasi-packing numbers, HyperCube share LPs and
// the one-round load-bound formulas over query hypergraphs.

#include "mpcjoin/query.hpp"
#include "mpcjoin/rational.hpp"
#include "mpcjoin/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpcjoin {

enum class WeightingKind { Packing, Cover, QuasiPacking };

inline std::string kind_name(WeightingKind k) {
  switch (k) {
    case WeightingKind::Packing: return "packing";
    case WeightingKind::Cover: return "cover";
    case WeightingKind::QuasiPacking: return "quasi-packing";
  }
  return "?";
}

/// One weight per atom of the query it was computed for.
struct FractionalWeighting {
  WeightingKind kind = WeightingKind::Packing;
  std::vector<Rational> weights;
  /// Removed variables X for quasi-packings.
  std::optional<VarSet> residual_witness;

  Rational total() const {
    Rational t = 0;
    for (const auto& w : weights) t += w;
    return t;
  }
};

/// Exact re-check of the constraint system for the weighting's kind.
inline bool satisfies(const Query& q, const FractionalWeighting& w) {
  if (w.weights.size() != q.num_atoms()) return false;
  for (const auto& x : w.weights) {
    if (x < 0) return false;
  }
  const VarSet removed = w.kind == WeightingKind::QuasiPacking ? w.residual_witness.value_or(0) : 0;
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    if (w.kind == WeightingKind::QuasiPacking && (q.atom_vars(j) & ~removed) == 0 && w.weights[j] != 0) return false;
  }
  for (VarId v = 0; v < q.num_vars(); ++v) {
    if (contains(removed, v)) continue;
    Rational sum = 0;
    for (std::size_t j = 0; j < q.num_atoms(); ++j) {
      if (contains(q.atom_vars(j), v)) sum += w.weights[j];
    }
    if (w.kind == WeightingKind::Cover ? sum < 1 : sum > 1) return false;
  }
  return true;
}

struct Optimum {
  Rational value;
  FractionalWeighting witness;
};

namespace detail {

inline LinearProgram incidence_lp(const Query& q, bool packing) {
  LinearProgram lp;
  lp.num_vars = q.num_atoms();
  lp.objective.assign(lp.num_vars, Rational(1));
  lp.maximize = packing;
  for (VarId v = 0; v < q.num_vars(); ++v) {
    std::vector<Rational> row(lp.num_vars, Rational(0));
    for (std::size_t j = 0; j < q.num_atoms(); ++j) {
      if (contains(q.atom_vars(j), v)) row[j] = 1;
    }
    lp.add(std::move(row), packing ? Sense::LessEq : Sense::GreaterEq, 1);
  }
  return lp;
}

inline Optimum solve_incidence(const Query& q, bool packing, bool lexicographic) {
  LpSolution s = lp_solve_exact(incidence_lp(q, packing), lexicographic);
  if (s.status != LpStatus::Optimal) throw std::logic_error("incidence LP not optimal");
  return {s.value, {packing ? WeightingKind::Packing : WeightingKind::Cover, s.x, std::nullopt}};
}

}  // namespace detail

/// Fractional edge packing number and a maximizing packing.
inline Optimum tau_star(const Query& q, bool lexicographic = true) {
  return detail::solve_incidence(q, true, lexicographic);
}

/// Fractional edge cover number and a minimizing cover.
inline Optimum rho_star(const Query& q, bool lexicographic = true) {
  return detail::solve_incidence(q, false, lexicographic);
}

/// Optimal fractional vertex packing (the dual of the edge cover LP): per
/// variable weights v_i with sum over each atom <= 1, maximizing the total.
inline std::vector<Rational> fractional_vertex_packing(const Query& q) {
  LinearProgram lp;
  lp.num_vars = q.num_vars();
  lp.objective.assign(lp.num_vars, Rational(1));
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    std::vector<Rational> row(lp.num_vars, Rational(0));
    for (VarId v : q.atoms()[j].vars) row[v] = 1;
    lp.add(std::move(row), Sense::LessEq, 1);
  }
  LpSolution s = lp_solve_exact(lp);
  if (s.status != LpStatus::Optimal) throw std::logic_error("vertex packing LP not optimal");
  return s.x;
}

/// Lifts a packing of residual_query(q, X) to a quasi-packing of q.
inline FractionalWeighting lift_packing(const Query& q, const Residual& r, const FractionalWeighting& w, VarSet X) {
  FractionalWeighting out{WeightingKind::QuasiPacking, std::vector<Rational>(q.num_atoms(), Rational(0)), X};
  for (std::size_t i = 0; i < r.kept_atoms.size(); ++i) out.weights[r.kept_atoms[i]] = w.weights[i];
  return out;
}

/// Edge quasi-packing number: max over X of tau*(q_X), by enumerating every
/// proper subset X of vars(q). The witness carries the maximizing X (first in
/// bitmask order).
inline Optimum psi_star(const Query& q) {
  const VarSet all = q.all_vars();
  Rational best = -1;
  VarSet best_x = 0;
  for (VarSet x = 0; x < all; ++x) {
    Residual r = residual_query(q, x);
    Rational t = tau_star(*r.query, false).value;
    if (t > best) { best = t; best_x = x; }
  }
  Residual r = residual_query(q, best_x);
  Optimum inner = tau_star(*r.query);
  return {best, lift_packing(q, r, inner.witness, best_x)};
}

/// psi* via psi(q_X) = max(tau*(q_X), max over v not in X of psi(q_{X+v})),
/// memoized on X.
inline Rational psi_star_recursive(const Query& q) {
  const VarSet all = q.all_vars();
  if (q.num_vars() > 20) throw std::invalid_argument("psi_star_recursive: too many variables");
  std::vector<std::optional<Rational>> memo(std::size_t{1} << q.num_vars());
  auto rec = [&](auto&& self, VarSet x) -> Rational {
    if (x == all) return 0;
    if (memo[x]) return *memo[x];
    Rational best = tau_star(*residual_query(q, x).query, false).value;
    for (VarId v = 0; v < q.num_vars(); ++v) {
      if (!contains(x, v)) best = std::max(best, self(self, with(x, v)));
    }
    memo[x] = best;
    return best;
  };
  return rec(rec, 0);
}

/// Relation sizes in log_p space: mu_j = log_p(M_j).
struct LogSizes {
  std::uint64_t p = 1;
  std::vector<std::uint64_t> sizes;
  std::vector<Rational> mu;
  /// False when some mu_j had to be approximated.
  bool exact = true;
};

/// Exact when p and every M_j are integer powers of a common base; otherwise a
/// best rational approximation with denominator <= max_den.
inline LogSizes log_sizes(const std::vector<std::uint64_t>& sizes, std::uint64_t p, std::int64_t max_den = 1000000) {
  LogSizes out{p, sizes, {}, true};
  if (p < 2) {
    out.mu.assign(sizes.size(), Rational(0));
    return out;
  }
  // Smallest base b with p = b^s.
  std::uint64_t base = p;
  unsigned s = 1;
  for (unsigned e = 63; e >= 2; --e) {
    std::uint64_t b = integer_root_floor(BigInt(p), e).convert_to<std::uint64_t>();
    if (b >= 2 && boost::multiprecision::pow(BigInt(b), e) == p) { base = b; s = e; break; }
  }
  for (std::uint64_t m : sizes) {
    if (m < 1) throw std::invalid_argument("log_sizes: sizes must be >= 1");
    unsigned t = 0;
    BigInt acc = 1;
    while (acc < m) { acc *= base; ++t; }
    if (acc == m) {
      out.mu.emplace_back(Rational(t, s));
    } else {
      out.exact = false;
      out.mu.push_back(approximate(std::log(static_cast<double>(m)) / std::log(static_cast<double>(p)), max_den));
    }
  }
  return out;
}

struct ShareAllocation {
  std::uint64_t p = 1;
  VarSet heavy = 0;
  std::vector<Rational> exponents;   // e_i, one per query variable
  std::vector<std::uint64_t> shares;  // p_i
  Rational lambda;
  bool exact = true;

  std::uint64_t product() const {
    std::uint64_t prod = 1;
    for (auto s : shares) prod *= s;
    return prod;
  }
};

/// Integer shares from real exponents: floor(p^e_i) (at least 1), then greedy
/// increments (largest p^e_i / p_i first, ties by variable order) while the
/// product stays <= p and no share exceeds ceil(p^e_i).
inline std::vector<std::uint64_t> round_shares(std::uint64_t p, const std::vector<Rational>& exponents) {
  std::vector<std::uint64_t> shares(exponents.size(), 1);
  if (p <= 1) return shares;
  std::vector<double> target(exponents.size());
  std::vector<std::uint64_t> cap(exponents.size());
  for (std::size_t i = 0; i < exponents.size(); ++i) {
    shares[i] = std::max<std::uint64_t>(1, floor_power(p, exponents[i]));
    target[i] = std::pow(static_cast<double>(p), to_double(exponents[i]));
    cap[i] = exponents[i] > 0 ? static_cast<std::uint64_t>(std::ceil(target[i] - 1e-9)) : 1;
  }
  auto product = [&] {
    BigInt prod = 1;
    for (auto s : shares) prod *= s;
    return prod;
  };
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

/// Solves   minimize lambda
///          s.t. sum_{i not in X} e_i <= 1,
///               sum_{i in vars(S_j)\X} e_i + lambda >= mu_j  for atoms of q_X,
///               e, lambda >= 0
/// with mu_j = log_p(M_j), then rounds p^{e_i} to integer shares.
inline ShareAllocation share_lp(const Query& q, const std::vector<std::uint64_t>& sizes, std::uint64_t p, VarSet heavy) {
  if (p < 1) throw std::invalid_argument("share_lp: p must be >= 1");
  if (sizes.size() != q.num_atoms()) throw std::invalid_argument("share_lp: one size per atom expected");
  if ((heavy & ~q.all_vars()) != 0) throw QueryError(QueryError::Kind::UnknownVariable, "share_lp: heavy set not in vars(q)");
  ShareAllocation out;
  out.p = p;
  out.heavy = heavy;
  out.exponents.assign(q.num_vars(), Rational(0));
  out.shares.assign(q.num_vars(), 1);
  out.lambda = 0;
  if (p == 1) return out;

  const LogSizes ls = log_sizes(sizes, p);
  out.exact = ls.exact;
  std::vector<VarId> free_vars;
  for (VarId v = 0; v < q.num_vars(); ++v) {
    if (!contains(heavy, v)) free_vars.push_back(v);
  }
  if (free_vars.empty()) return out;

  LinearProgram lp;
  lp.num_vars = free_vars.size() + 1;  // e's then lambda
  lp.maximize = false;
  lp.objective.assign(lp.num_vars, Rational(0));
  lp.objective.back() = 1;
  std::vector<Rational> budget(lp.num_vars, Rational(1));
  budget.back() = 0;
  lp.add(std::move(budget), Sense::LessEq, 1);
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    std::vector<Rational> row(lp.num_vars, Rational(0));
    bool present = false;
    for (std::size_t c = 0; c < free_vars.size(); ++c) {
      if (contains(q.atom_vars(j), free_vars[c])) { row[c] = 1; present = true; }
    }
    if (!present) continue;
    row.back() = 1;
    lp.add(std::move(row), Sense::GreaterEq, ls.mu[j]);
  }
  LpSolution s = lp_solve_exact(lp);
  if (s.status != LpStatus::Optimal) throw std::logic_error("share LP not optimal");
  for (std::size_t c = 0; c < free_vars.size(); ++c) out.exponents[free_vars[c]] = s.x[c];
  out.lambda = s.x.back();
  out.shares = round_shares(p, out.exponents);
  return out;
}

/// A load bound L = p^exponent, in the units of the size vector.
struct LoadBound {
  Rational exponent;  // log_p of the bound (bits)
  double bits = 0;
  double tuples = 0;
  FractionalWeighting witness;
  VarSet residual = 0;
  bool exact = true;
};

/// max over packings u of (prod_j M_j^{u_j} / p)^{1/sum u}, solved as the
/// linear-fractional program
///   maximize sum v_j mu_j - f  s.t. sum v_j = 1, per variable sum v_j <= f.
/// The packing is u = v / f.
inline LoadBound load_bound_packing(const Query& q, const std::vector<std::uint64_t>& sizes, std::uint64_t p,
                                    std::uint64_t tuple_width_bits = 1) {
  if (sizes.size() != q.num_atoms()) throw std::invalid_argument("load_bound_packing: one size per atom expected");
  if (tuple_width_bits == 0) throw std::invalid_argument("load_bound_packing: zero tuple width");
  LoadBound out;
  if (p <= 1) {
    auto it = std::max_element(sizes.begin(), sizes.end());
    out.witness = {WeightingKind::Packing, std::vector<Rational>(q.num_atoms(), Rational(0)), std::nullopt};
    out.witness.weights[static_cast<std::size_t>(it - sizes.begin())] = 1;
    out.exponent = 0;
    out.bits = static_cast<double>(*it);
    out.tuples = out.bits / static_cast<double>(tuple_width_bits);
    return out;
  }
  const LogSizes ls = log_sizes(sizes, p);
  const std::size_t l = q.num_atoms();
  LinearProgram lp;
  lp.num_vars = l + 1;
  lp.objective = ls.mu;
  lp.objective.push_back(-1);
  std::vector<Rational> norm(l + 1, Rational(1));
  norm.back() = 0;
  lp.add(std::move(norm), Sense::Equal, 1);
  for (VarId v = 0; v < q.num_vars(); ++v) {
    std::vector<Rational> row(l + 1, Rational(0));
    for (std::size_t j = 0; j < l; ++j) {
      if (contains(q.atom_vars(j), v)) row[j] = 1;
    }
    row.back() = -1;
    lp.add(std::move(row), Sense::LessEq, 0);
  }
  LpSolution s = lp_solve_exact(lp);
  if (s.status != LpStatus::Optimal) throw std::logic_error("load bound LP not optimal");
  out.exponent = s.value;
  out.exact = ls.exact;
  out.witness.kind = WeightingKind::Packing;
  const Rational f = s.x.back();
  for (std::size_t j = 0; j < l; ++j) out.witness.weights.push_back(s.x[j] / f);
  out.bits = std::pow(static_cast<double>(p), to_double(out.exponent));
  out.tuples = out.bits / static_cast<double>(tuple_width_bits);
  return out;
}

/// max over proper X of load_bound_packing(q_X); the witness is a quasi-packing.
inline LoadBound load_bound_worstcase(const Query& q, const std::vector<std::uint64_t>& sizes, std::uint64_t p,
                                      std::uint64_t tuple_width_bits = 1) {
  std::optional<LoadBound> best;
  for (VarSet x = 0; x < q.all_vars(); ++x) {
    Residual r = residual_query(q, x);
    std::vector<std::uint64_t> sub;
    for (std::size_t j : r.kept_atoms) sub.push_back(sizes[j]);
    LoadBound lb = load_bound_packing(*r.query, sub, p, tuple_width_bits);
    const bool better = !best || (p > 1 ? lb.exponent > best->exponent : lb.bits > best->bits);
    if (better) {
      lb.witness = lift_packing(q, r, lb.witness, x);
      lb.residual = x;
      best = lb;
    }
  }
  return *best;
}

inline std::string var_set_string(const Query& q, VarSet s) {
  std::string out = "{";
  bool first = true;
  for (VarId v = 0; v < q.num_vars(); ++v) {
    if (!contains(s, v)) continue;
    if (!first) out += ",";
    out += q.variables()[v];
    first = false;
  }
  return out + "}";
}

/// Summary of the hypergraph quantities of one query.
struct AnalyzerReport {
  Query query;
  std::string family;  // empty for ad-hoc queries
  int k = 0;
  Optimum tau, rho, psi;
  std::optional<ShareAllocation> shares;

  static AnalyzerReport build(const Query& q, std::string family = {}, int k = 0,
                              std::optional<std::uint64_t> p = std::nullopt,
                              std::optional<std::vector<std::uint64_t>> sizes = std::nullopt) {
    AnalyzerReport r{q, std::move(family), k, tau_star(q), rho_star(q), psi_star(q), std::nullopt};
    if (p) {
      auto m = sizes.value_or(std::vector<std::uint64_t>(q.num_atoms(), *p));
      r.shares = share_lp(q, m, *p, 0);
    }
    return r;
  }

  std::string shares_string() const {
    if (!shares) return "";
    std::string s;
    for (VarId v = 0; v < query.num_vars(); ++v) {
      if (v) s += ";";
      s += query.variables()[v] + "=" + std::to_string(shares->shares[v]);
    }
    return s;
  }

  static std::string weights_string(const Query& q, const FractionalWeighting& w) {
    std::string s;
    for (std::size_t j = 0; j < q.num_atoms(); ++j) {
      if (j) s += " ";
      s += q.atoms()[j].relation + "=" + to_string(w.weights[j]);
    }
    return s;
  }

  std::string to_key_value() const {
    std::ostringstream os;
    os << "query: " << query.render() << "\n";
    if (!family.empty()) os << "family: " << family << "\nk: " << k << "\n";
    os << "tau: " << to_string(tau.value) << " (" << to_double(tau.value) << ")\n";
    os << "tau_witness: " << weights_string(query, tau.witness) << "\n";
    os << "rho: " << to_string(rho.value) << " (" << to_double(rho.value) << ")\n";
    os << "rho_witness: " << weights_string(query, rho.witness) << "\n";
    os << "psi: " << to_string(psi.value) << " (" << to_double(psi.value) << ")\n";
    os << "psi_witness_X: " << var_set_string(query, psi.witness.residual_witness.value_or(0)) << "\n";
    os << "psi_witness: " << weights_string(query, psi.witness) << "\n";
    if (shares) {
      os << "p: " << shares->p << "\n";
      os << "shares: " << shares_string() << "\n";
      os << "lambda: " << to_string(shares->lambda) << "\n";
    }
    return os.str();
  }

  static std::string csv_header() { return "query,family,k,tau,rho,psi,witness_X,shares"; }

  std::string csv_row() const {
    std::ostringstream os;
    os << '"' << query.render() << "\"," << family << ',' << k << ',' << to_string(tau.value) << ','
       << to_string(rho.value) << ',' << to_string(psi.value) << ",\""
       << var_set_string(query, psi.witness.residual_witness.value_or(0)) << "\"," << shares_string();
    return os.str();
  }
};

}  // namespace mpcjoin
