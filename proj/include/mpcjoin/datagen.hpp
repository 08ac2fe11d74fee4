#pragma once

// Seeded instance generators and the TSV + manifest on-disk format.

#include "mpcjoin/lp_analyzer.hpp"
#include "mpcjoin/prng.hpp"
#include "mpcjoin/query.hpp"
#include "mpcjoin/relation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace mpcjoin {

struct RelationInstance {
  std::string relation;
  Relation tuples;
  std::uint64_t n = 1;  // values lie in [1, n]

  std::size_t arity() const { return tuples.arity(); }
  std::size_t size() const { return tuples.size(); }
};

struct DatabaseInstance {
  Query query;
  std::vector<RelationInstance> relations;  // one per atom, in atom order
  std::uint64_t seed = 0;
  std::string generator;
  std::vector<std::uint64_t> domain_sizes;  // per variable, when meaningful
  std::vector<std::string> warnings;

  /// Domain size used for bit accounting: max over relations.
  std::uint64_t n() const {
    std::uint64_t n = 1;
    for (const auto& r : relations) n = std::max(n, r.n);
    return n;
  }
  std::uint64_t bits_per_value() const { return value_bits(n()); }
  std::uint64_t tuple_bits(std::size_t j) const { return relations[j].arity() * bits_per_value(); }
  std::vector<std::uint64_t> tuple_counts() const {
    std::vector<std::uint64_t> m;
    for (const auto& r : relations) m.push_back(r.size());
    return m;
  }
  /// M_j = a_j * m_j * ceil(log2 n).
  std::vector<std::uint64_t> bit_sizes() const {
    std::vector<std::uint64_t> out;
    for (std::size_t j = 0; j < relations.size(); ++j) out.push_back(relations[j].size() * tuple_bits(j));
    return out;
  }
  std::uint64_t total_tuples() const {
    std::uint64_t s = 0;
    for (const auto& r : relations) s += r.size();
    return s;
  }
  std::vector<Relation> tuple_sets() const {
    std::vector<Relation> out;
    for (const auto& r : relations) out.push_back(r.tuples);
    return out;
  }
};

namespace detail {

inline DatabaseInstance empty_instance(const Query& q, std::uint64_t seed, std::string generator) {
  DatabaseInstance db{q, {}, seed, std::move(generator), {}, {}};
  for (const auto& a : q.atoms()) db.relations.push_back({a.relation, Relation(a.arity()), 1});
  return db;
}

inline void finish(DatabaseInstance& db) {
  for (auto& r : db.relations) r.tuples.sort_unique();
}

/// Injective random map [m] -> [1, n] (rejection sampling on one stream).
inline std::vector<Value> random_injection(std::uint64_t m, std::uint64_t n, StreamRng& rng) {
  if (m > n) throw std::invalid_argument("random_injection: m > n");
  if (2 * m >= n) {
    auto perm = random_permutation(n, rng);
    perm.resize(m);
    return perm;
  }
  std::unordered_set<Value> seen;
  std::vector<Value> out;
  out.reserve(m);
  while (out.size() < m) {
    Value v = rng.below(n) + 1;
    if (seen.insert(v).second) out.push_back(v);
  }
  return out;
}

}  // namespace detail

/// Every relation a random matching of size m over [1, m]: each value occurs at
/// most once per attribute.
inline DatabaseInstance gen_matching(const Query& q, std::uint64_t m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("gen_matching: m must be >= 1");
  DatabaseInstance db = detail::empty_instance(q, seed, "matching");
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    auto& rel = db.relations[j];
    rel.n = m;
    std::vector<std::vector<Value>> cols;
    for (std::size_t c = 0; c < rel.arity(); ++c) {
      StreamRng rng(seed, attribute_stream(j, c));
      cols.push_back(random_permutation(m, rng));
    }
    rel.tuples.reserve(m);
    std::vector<Value> t(rel.arity());
    for (std::uint64_t i = 0; i < m; ++i) {
      for (std::size_t c = 0; c < t.size(); ++c) t[c] = cols[c][i];
      rel.tuples.push_back(t);
    }
  }
  db.domain_sizes.assign(q.num_vars(), m);
  detail::finish(db);
  return db;
}

/// As gen_matching, except every atom containing heavy_var has the constant 1
/// at that position.
inline DatabaseInstance gen_single_heavy(const Query& q, std::uint64_t m, VarId heavy_var, std::uint64_t seed) {
  if (heavy_var >= q.num_vars()) throw QueryError(QueryError::Kind::UnknownVariable, "gen_single_heavy: unknown variable");
  DatabaseInstance db = gen_matching(q, m, seed);
  db.generator = "single-heavy";
  int occurrences = 0;
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    auto pos = q.position_in_atom(j, heavy_var);
    if (!pos) continue;
    ++occurrences;
    auto& rel = db.relations[j];
    Relation r(rel.arity());
    std::vector<Value> t;
    for (std::size_t i = 0; i < rel.size(); ++i) {
      t.assign(rel.tuples[i].begin(), rel.tuples[i].end());
      t[*pos] = 1;
      r.push_back(t);
    }
    rel.tuples = std::move(r);
  }
  if (occurrences < 2) db.warnings.push_back("heavy_var in fewer than 2 atoms");
  detail::finish(db);
  return db;
}

/// Per-variable domain sizes n_i = floor(m^{v_i}) from an optimal fractional
/// vertex packing v, then greedily incremented (largest m^{v_i}/n_i first)
/// while every atom keeps prod n_i <= m.
inline std::vector<std::uint64_t> agm_domain_sizes(const Query& q, std::uint64_t m) {
  const auto v = fractional_vertex_packing(q);
  std::vector<std::uint64_t> n(q.num_vars());
  std::vector<double> target(q.num_vars());
  for (VarId i = 0; i < q.num_vars(); ++i) {
    n[i] = std::max<std::uint64_t>(1, floor_power(m, v[i]));
    target[i] = std::pow(static_cast<double>(m), to_double(v[i]));
  }
  auto fits = [&](VarId i) {
    for (std::size_t j = 0; j < q.num_atoms(); ++j) {
      if (!contains(q.atom_vars(j), i)) continue;
      BigInt prod = 1;
      for (VarId u : q.atoms()[j].vars) prod *= (u == i ? n[u] + 1 : n[u]);
      if (prod > m) return false;
    }
    return true;
  };
  for (;;) {
    std::optional<VarId> pick;
    double best = 1.0;
    for (VarId i = 0; i < q.num_vars(); ++i) {
      if (v[i] == 0 || !fits(i)) continue;
      double deficit = target[i] / static_cast<double>(n[i]);
      if (deficit > best + 1e-12) { best = deficit; pick = i; }
    }
    if (!pick) break;
    ++n[*pick];
  }
  return n;
}

namespace detail {

/// Cartesian product of [1, n_i] over the atom's variables; keep(j, index)
/// decides membership of the index-th candidate.
template <class Keep>
DatabaseInstance product_instance(const Query& q, std::uint64_t m, std::uint64_t seed, std::string name, Keep keep) {
  DatabaseInstance db = empty_instance(q, seed, std::move(name));
  db.domain_sizes = agm_domain_sizes(q, m);
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    auto& rel = db.relations[j];
    const auto& vars = q.atoms()[j].vars;
    std::uint64_t count = 1;
    for (VarId v : vars) {
      count *= db.domain_sizes[v];
      rel.n = std::max(rel.n, db.domain_sizes[v]);
    }
    std::vector<Value> t(vars.size(), 1);
    for (std::uint64_t idx = 0; idx < count; ++idx) {
      std::uint64_t rest = idx;
      for (std::size_t c = vars.size(); c-- > 0;) {
        t[c] = rest % db.domain_sizes[vars[c]] + 1;
        rest /= db.domain_sizes[vars[c]];
      }
      if (keep(j, idx)) rel.tuples.push_back(t);
    }
  }
  finish(db);
  return db;
}

}  // namespace detail

/// Each relation is the full product of its variables' domains, sized by the
/// optimal fractional vertex packing (output size about m^{rho*}).
inline DatabaseInstance gen_agm_worst(const Query& q, std::uint64_t m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("gen_agm_worst: m must be >= 1");
  return detail::product_instance(q, m, seed, "agm-worst", [](std::size_t, std::uint64_t) { return true; });
}

/// gen_agm_worst domains; each candidate tuple kept with probability 1/2.
inline DatabaseInstance gen_coin_flip(const Query& q, std::uint64_t m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("gen_coin_flip: m must be >= 1");
  return detail::product_instance(q, m, seed, "coin-flip",
                                  [seed](std::size_t j, std::uint64_t idx) { return (draw(seed, j, idx) >> 63) == 1; });
}

/// Lower-bound instance: variables in X fixed to 1; each relation a random
/// matching of m_j tuples over its other attributes with n = (max m_j)^2.
/// Relations whose attributes all lie in X hold (1,..,1) plus m_j - 1 padding
/// tuples of fresh values above n.
inline DatabaseInstance gen_lowerbound_matching(const Query& q, const std::vector<std::uint64_t>& sizes, VarSet X,
                                                std::uint64_t seed) {
  if (sizes.size() != q.num_atoms()) throw std::invalid_argument("gen_lowerbound_matching: one size per atom expected");
  if ((X & ~q.all_vars()) != 0) throw QueryError(QueryError::Kind::UnknownVariable, "gen_lowerbound_matching: X not in vars(q)");
  std::uint64_t max_m = 1;
  for (auto m : sizes) {
    if (m < 1) throw std::invalid_argument("gen_lowerbound_matching: sizes must be >= 1");
    max_m = std::max(max_m, m);
  }
  const std::uint64_t n = max_m * max_m;
  DatabaseInstance db = detail::empty_instance(q, seed, "lowerbound-matching");
  Value fresh = n;
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    auto& rel = db.relations[j];
    const auto& vars = q.atoms()[j].vars;
    const std::uint64_t m = sizes[j];
    std::vector<std::vector<Value>> cols(vars.size());
    bool collapsed = true;
    for (std::size_t c = 0; c < vars.size(); ++c) {
      if (contains(X, vars[c])) continue;
      collapsed = false;
      StreamRng rng(seed, attribute_stream(j, c));
      cols[c] = detail::random_injection(m, n, rng);
    }
    std::vector<Value> t(vars.size());
    if (collapsed) {
      std::fill(t.begin(), t.end(), 1);
      rel.tuples.push_back(t);
      for (std::uint64_t i = 1; i < m; ++i) {
        for (auto& v : t) v = ++fresh;
        rel.tuples.push_back(t);
      }
    } else {
      for (std::uint64_t i = 0; i < m; ++i) {
        for (std::size_t c = 0; c < vars.size(); ++c) t[c] = contains(X, vars[c]) ? 1 : cols[c][i];
        rel.tuples.push_back(t);
      }
    }
  }
  for (auto& rel : db.relations) rel.n = fresh;
  detail::finish(db);
  return db;
}

/// Named generator dispatch used by the CLI and tests.
inline DatabaseInstance generate(const std::string& gen, const Query& q, std::uint64_t m, std::uint64_t seed,
                                 std::optional<VarId> heavy_var = std::nullopt) {
  if (gen == "matching") return gen_matching(q, m, seed);
  if (gen == "single-heavy") return gen_single_heavy(q, m, heavy_var.value_or(0), seed);
  if (gen == "agm-worst") return gen_agm_worst(q, m, seed);
  if (gen == "coin-flip") return gen_coin_flip(q, m, seed);
  if (gen == "lowerbound-matching") {
    return gen_lowerbound_matching(q, std::vector<std::uint64_t>(q.num_atoms(), m),
                                   heavy_var ? with(0, *heavy_var) : 0, seed);
  }
  throw std::invalid_argument("unknown generator: " + gen);
}

inline const std::vector<std::string>& generator_names() {
  static const std::vector<std::string> names{"matching", "single-heavy", "agm-worst", "coin-flip", "lowerbound-matching"};
  return names;
}

inline std::string relation_tsv(const Relation& r) {
  std::string out;
  for (std::size_t i = 0; i < r.size(); ++i) {
    auto t = r[i];
    for (std::size_t c = 0; c < t.size(); ++c) {
      if (c) out += '\t';
      out += std::to_string(t[c]);
    }
    out += '\n';
  }
  return out;
}

inline std::string manifest_text(const DatabaseInstance& db) {
  std::ostringstream os;
  os << "query\t" << db.query.render() << "\n";
  os << "generator\t" << db.generator << "\n";
  os << "seed\t" << db.seed << "\n";
  os << "n\t" << db.n() << "\n";
  if (!db.domain_sizes.empty()) {
    os << "domains\t";
    for (VarId v = 0; v < db.query.num_vars(); ++v) {
      if (v) os << ';';
      os << db.query.variables()[v] << '=' << db.domain_sizes[v];
    }
    os << "\n";
  }
  const auto bits = db.bit_sizes();
  for (std::size_t j = 0; j < db.relations.size(); ++j) {
    os << "relation\t" << db.relations[j].relation << "\t" << db.relations[j].relation << ".tsv\tm=" << db.relations[j].size()
       << "\tM=" << bits[j] << "\n";
  }
  return os.str();
}

/// Writes one <relation>.tsv per atom plus manifest.txt into dir.
inline void write_instance(const DatabaseInstance& db, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& r : db.relations) {
    std::ofstream f(dir / (r.relation + ".tsv"), std::ios::binary);
    f << relation_tsv(r.tuples);
    if (!f) throw std::runtime_error("cannot write " + (dir / (r.relation + ".tsv")).string());
  }
  std::ofstream m(dir / "manifest.txt", std::ios::binary);
  m << manifest_text(db);
  if (!m) throw std::runtime_error("cannot write manifest in " + dir.string());
}

/// Reads an instance written by write_instance.
inline DatabaseInstance read_instance(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw std::runtime_error("missing manifest.txt in " + dir.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::vector<std::string> files;
  while (std::getline(m, line)) {
    auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    std::string key = line.substr(0, tab), rest = line.substr(tab + 1);
    if (key == "relation") {
      std::istringstream ls(rest);
      std::string name, file;
      ls >> name >> file;
      files.push_back(file);
    } else {
      kv[key] = rest;
    }
  }
  if (!kv.count("query")) throw std::runtime_error("manifest lacks query line");
  Query q = parse_query(kv["query"]);
  DatabaseInstance db = detail::empty_instance(q, kv.count("seed") ? std::stoull(kv["seed"]) : 0, kv["generator"]);
  const std::uint64_t n = kv.count("n") ? std::stoull(kv["n"]) : 1;
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    const std::string file = j < files.size() ? files[j] : q.atoms()[j].relation + ".tsv";
    std::ifstream f(dir / file);
    if (!f) throw std::runtime_error("missing relation file " + file);
    auto& rel = db.relations[j];
    rel.n = n;
    std::vector<Value> t;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      t.clear();
      Value v;
      while (ls >> v) {
        if (v < 1) throw std::runtime_error(file + ": values must be >= 1");
        rel.n = std::max(rel.n, v);
        t.push_back(v);
      }
      if (t.size() != rel.arity()) throw std::runtime_error(file + ": arity mismatch");
      rel.tuples.push_back(t);
    }
  }
  detail::finish(db);
  return db;
}

}  // namespace mpcjoin
