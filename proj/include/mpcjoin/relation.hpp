#pragma once

// Flat row-major tuple storage plus the two join evaluators: a hash-indexed
// backtracking join used by simulated servers, and an independent sort-based
// oracle used to check every algorithm.

#include "mpcjoin/prng.hpp"
#include "mpcjoin/query.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpcjoin {

using Value = std::uint64_t;

class Relation {
 public:
  explicit Relation(std::size_t arity = 0) : arity_(arity) {}

  std::size_t arity() const { return arity_; }
  std::size_t size() const { return arity_ == 0 ? 0 : data_.size() / arity_; }
  bool empty() const { return data_.empty(); }
  std::span<const Value> operator[](std::size_t i) const { return {data_.data() + i * arity_, arity_}; }
  const std::vector<Value>& flat() const { return data_; }
  Value& at(std::size_t i, std::size_t c) { return data_[i * arity_ + c]; }

  void reserve(std::size_t rows) { data_.reserve(rows * arity_); }
  void push_back(std::span<const Value> t) {
    if (t.size() != arity_) throw std::invalid_argument("Relation::push_back: arity mismatch");
    data_.insert(data_.end(), t.begin(), t.end());
  }
  void push_back(std::initializer_list<Value> t) { push_back(std::span<const Value>(t.begin(), t.size())); }
  void append(const Relation& other) {
    if (other.arity_ != arity_) throw std::invalid_argument("Relation::append: arity mismatch");
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  }

  /// Lexicographic sort and duplicate removal.
  void sort_unique() {
    const std::size_t n = size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    auto row_less = [&](std::size_t a, std::size_t b) {
      return std::lexicographical_compare(data_.begin() + a * arity_, data_.begin() + (a + 1) * arity_,
                                          data_.begin() + b * arity_, data_.begin() + (b + 1) * arity_);
    };
    std::sort(idx.begin(), idx.end(), row_less);
    std::vector<Value> out;
    out.reserve(data_.size());
    for (std::size_t k = 0; k < n; ++k) {
      const auto* row = data_.data() + idx[k] * arity_;
      if (k > 0 && std::equal(row, row + arity_, out.end() - static_cast<long>(arity_))) continue;
      out.insert(out.end(), row, row + arity_);
    }
    data_ = std::move(out);
  }

  bool operator==(const Relation&) const = default;

 private:
  std::size_t arity_;
  std::vector<Value> data_;
};

/// Bits needed per value for domain [1, n].
inline std::uint64_t value_bits(std::uint64_t n) {
  std::uint64_t b = 0;
  while (b < 64 && (std::uint64_t{1} << b) < n) ++b;
  return std::max<std::uint64_t>(1, b);
}

inline std::uint64_t hash_values(std::span<const Value> values) {
  std::uint64_t h = 0x51ed270b27e4a8c3ULL;
  for (Value v : values) h = mix64(h ^ (v + kGolden));
  return h;
}

/// Fragment of atom j: tuples in the atom's own column order.
using Fragments = std::vector<const Relation*>;
using EmitFn = std::function<void(std::span<const Value>)>;

/// Backtracking join over the fragments (one per atom of q). Calls emit with
/// the full assignment, in q's variable order, once per distinct result.
inline void local_join(const Query& q, const Fragments& frags, const EmitFn& emit) {
  const std::size_t l = q.num_atoms();
  if (frags.size() != l) throw std::invalid_argument("local_join: one fragment per atom expected");
  for (const Relation* r : frags) {
    if (r->empty()) return;
  }
  // Atom order: smallest first, then most bound variables.
  std::vector<std::size_t> order;
  std::vector<bool> used(l, false);
  VarSet bound = 0;
  for (std::size_t step = 0; step < l; ++step) {
    std::size_t best = l;
    for (std::size_t j = 0; j < l; ++j) {
      if (used[j]) continue;
      if (best == l) { best = j; continue; }
      if (step == 0) {
        if (frags[j]->size() < frags[best]->size()) best = j;
        continue;
      }
      const int bj = popcount(q.atom_vars(j) & bound), bb = popcount(q.atom_vars(best) & bound);
      const bool fj = (q.atom_vars(j) & ~bound) == 0, fb = (q.atom_vars(best) & ~bound) == 0;
      if (fj != fb) { if (fj) best = j; continue; }
      if (bj > bb || (bj == bb && frags[j]->size() < frags[best]->size())) best = j;
    }
    used[best] = true;
    order.push_back(best);
    bound |= q.atom_vars(best);
  }

  // Per step: bound columns and a hash index sorted by key hash.
  struct Step {
    std::size_t atom;
    std::vector<std::size_t> bound_cols, free_cols;
    std::vector<std::pair<std::uint64_t, std::uint32_t>> index;
  };
  std::vector<Step> steps;
  bound = 0;
  for (std::size_t j : order) {
    Step s{j, {}, {}, {}};
    const auto& vars = q.atoms()[j].vars;
    for (std::size_t c = 0; c < vars.size(); ++c) (contains(bound, vars[c]) ? s.bound_cols : s.free_cols).push_back(c);
    const Relation& r = *frags[j];
    if (r.size() > UINT32_MAX) throw std::length_error("local_join: fragment too large");
    s.index.reserve(r.size());
    std::vector<Value> key(s.bound_cols.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      for (std::size_t c = 0; c < key.size(); ++c) key[c] = r[i][s.bound_cols[c]];
      s.index.emplace_back(hash_values(key), static_cast<std::uint32_t>(i));
    }
    std::sort(s.index.begin(), s.index.end());
    bound |= q.atom_vars(j);
    steps.push_back(std::move(s));
  }

  std::vector<Value> assignment(q.num_vars(), 0);
  std::vector<Value> key;
  auto rec = [&](auto&& self, std::size_t depth) -> void {
    if (depth == steps.size()) {
      emit(assignment);
      return;
    }
    const Step& s = steps[depth];
    const auto& vars = q.atoms()[s.atom].vars;
    const Relation& r = *frags[s.atom];
    key.resize(s.bound_cols.size());
    for (std::size_t c = 0; c < key.size(); ++c) key[c] = assignment[vars[s.bound_cols[c]]];
    const std::uint64_t h = hash_values(key);
    auto lo = std::lower_bound(s.index.begin(), s.index.end(), std::make_pair(h, std::uint32_t{0}));
    for (auto it = lo; it != s.index.end() && it->first == h; ++it) {
      auto row = r[it->second];
      bool match = true;
      for (std::size_t c : s.bound_cols) match = match && row[c] == assignment[vars[c]];
      if (!match) continue;
      for (std::size_t c : s.free_cols) assignment[vars[c]] = row[c];
      self(self, depth + 1);
    }
  };
  rec(rec, 0);
}

/// Collects local_join output into a relation over q's variables.
inline Relation local_join(const Query& q, const Fragments& frags) {
  Relation out(q.num_vars());
  local_join(q, frags, [&](std::span<const Value> t) { out.push_back(t); });
  out.sort_unique();
  return out;
}

class OracleTooLarge : public std::runtime_error {
 public:
  OracleTooLarge() : std::runtime_error("instance too large for oracle") {}
};

/// Reference evaluator: atoms in query order (preferring the atom with most
/// bound variables), each probed through a sorted copy whose bound columns are
/// moved to the front. Throws OracleTooLarge past `guard` examined candidates.
inline Relation oracle_join(const Query& q, const std::vector<Relation>& relations, std::uint64_t guard = 10'000'000) {
  const std::size_t l = q.num_atoms();
  if (relations.size() != l) throw std::invalid_argument("oracle_join: one relation per atom expected");
  Relation out(q.num_vars());
  for (const auto& r : relations) {
    if (r.empty()) return out;
  }
  std::vector<std::size_t> order;
  std::vector<bool> used(l, false);
  VarSet bound = 0;
  for (std::size_t step = 0; step < l; ++step) {
    std::size_t best = l;
    int best_bound = -1;
    for (std::size_t j = 0; j < l; ++j) {
      if (used[j]) continue;
      int b = popcount(q.atom_vars(j) & bound);
      if (b > best_bound) { best = j; best_bound = b; }
    }
    used[best] = true;
    order.push_back(best);
    bound |= q.atom_vars(best);
  }
  struct Probe {
    std::vector<std::size_t> perm;  // column permutation: bound columns first
    std::size_t nbound;
    std::vector<std::vector<Value>> rows;
  };
  std::vector<Probe> probes;
  bound = 0;
  for (std::size_t j : order) {
    Probe pr;
    const auto& vars = q.atoms()[j].vars;
    for (std::size_t c = 0; c < vars.size(); ++c) {
      if (contains(bound, vars[c])) pr.perm.push_back(c);
    }
    pr.nbound = pr.perm.size();
    for (std::size_t c = 0; c < vars.size(); ++c) {
      if (!contains(bound, vars[c])) pr.perm.push_back(c);
    }
    for (std::size_t i = 0; i < relations[j].size(); ++i) {
      std::vector<Value> row;
      for (std::size_t c : pr.perm) row.push_back(relations[j][i][c]);
      pr.rows.push_back(std::move(row));
    }
    std::sort(pr.rows.begin(), pr.rows.end());
    bound |= q.atom_vars(j);
    probes.push_back(std::move(pr));
  }
  std::uint64_t examined = 0;
  std::vector<Value> assignment(q.num_vars(), 0);
  auto rec = [&](auto&& self, std::size_t depth) -> void {
    if (depth == probes.size()) {
      out.push_back(assignment);
      return;
    }
    const Probe& pr = probes[depth];
    const auto& vars = q.atoms()[order[depth]].vars;
    std::vector<Value> prefix;
    for (std::size_t c = 0; c < pr.nbound; ++c) prefix.push_back(assignment[vars[pr.perm[c]]]);
    auto cmp_lo = [&](const std::vector<Value>& row, const std::vector<Value>& key) {
      return std::lexicographical_compare(row.begin(), row.begin() + static_cast<long>(key.size()), key.begin(), key.end());
    };
    auto cmp_hi = [&](const std::vector<Value>& key, const std::vector<Value>& row) {
      return std::lexicographical_compare(key.begin(), key.end(), row.begin(), row.begin() + static_cast<long>(key.size()));
    };
    auto lo = std::lower_bound(pr.rows.begin(), pr.rows.end(), prefix, cmp_lo);
    auto hi = std::upper_bound(lo, pr.rows.end(), prefix, cmp_hi);
    for (auto it = lo; it != hi; ++it) {
      if (++examined > guard) throw OracleTooLarge();
      for (std::size_t c = pr.nbound; c < pr.perm.size(); ++c) assignment[vars[pr.perm[c]]] = (*it)[c];
      self(self, depth + 1);
    }
  };
  rec(rec, 0);
  out.sort_unique();
  return out;
}

}  // namespace mpcjoin
