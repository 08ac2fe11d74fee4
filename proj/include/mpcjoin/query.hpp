#pragma once

// Full conjunctive queries without self-joins, viewed as hypergraphs.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mpcjoin {

using VarId = std::size_t;
/// Set of variables of one query, as a bitmask over variable positions.
using VarSet = std::uint64_t;

inline constexpr std::size_t kMaxVariables = 64;

inline bool contains(VarSet s, VarId v) { return (s >> v) & 1U; }
inline VarSet with(VarSet s, VarId v) { return s | (VarSet{1} << v); }
inline int popcount(VarSet s) { return __builtin_popcountll(s); }

class QueryError : public std::runtime_error {
 public:
  enum class Kind { Syntax, NotFull, SelfJoin, RepeatedVariable, UnknownVariable, InvalidFamily, Empty };

  QueryError(Kind kind, const std::string& what, std::size_t position = 0)
      : std::runtime_error(what), kind_(kind), position_(position) {}

  Kind kind() const { return kind_; }
  std::size_t position() const { return position_; }

 private:
  Kind kind_;
  std::size_t position_;
};

struct Atom {
  std::string relation;
  std::vector<VarId> vars;  // positions into Query::variables

  std::size_t arity() const { return vars.size(); }
  friend bool operator==(const Atom&, const Atom&) = default;
};

class Query {
 public:
  Query() = default;

  /// Validates every invariant (fullness, no self-join, no repeated variable in an atom).
  Query(std::string name, std::vector<std::string> variables, std::vector<Atom> atoms)
      : name_(std::move(name)), variables_(std::move(variables)), atoms_(std::move(atoms)) {
    validate();
  }

  const std::string& name() const { return name_; }
  const std::vector<std::string>& variables() const { return variables_; }
  const std::vector<Atom>& atoms() const { return atoms_; }
  std::size_t num_vars() const { return variables_.size(); }
  std::size_t num_atoms() const { return atoms_.size(); }
  VarSet all_vars() const { return num_vars() == 64 ? ~VarSet{0} : (VarSet{1} << num_vars()) - 1; }

  VarSet atom_vars(std::size_t j) const {
    VarSet s = 0;
    for (VarId v : atoms_[j].vars) s = with(s, v);
    return s;
  }

  std::optional<VarId> find_var(std::string_view name) const {
    for (VarId i = 0; i < variables_.size(); ++i) {
      if (variables_[i] == name) return i;
    }
    return std::nullopt;
  }

  std::optional<std::size_t> find_atom(std::string_view relation) const {
    for (std::size_t j = 0; j < atoms_.size(); ++j) {
      if (atoms_[j].relation == relation) return j;
    }
    return std::nullopt;
  }

  VarId var(std::string_view name) const {
    auto v = find_var(name);
    if (!v) throw QueryError(QueryError::Kind::UnknownVariable, "unknown variable: " + std::string(name));
    return *v;
  }

  /// Position of variable v inside atom j, if present.
  std::optional<std::size_t> position_in_atom(std::size_t j, VarId v) const {
    const auto& vs = atoms_[j].vars;
    auto it = std::find(vs.begin(), vs.end(), v);
    if (it == vs.end()) return std::nullopt;
    return static_cast<std::size_t>(it - vs.begin());
  }

  VarSet var_set(const std::vector<std::string>& names) const {
    VarSet s = 0;
    for (const auto& n : names) s = with(s, var(n));
    return s;
  }

  std::string render() const {
    std::string out = name_ + "(" + join_vars_all() + ") :- ";
    for (std::size_t j = 0; j < atoms_.size(); ++j) {
      if (j) out += ", ";
      out += atoms_[j].relation + "(";
      for (std::size_t i = 0; i < atoms_[j].vars.size(); ++i) {
        if (i) out += ",";
        out += variables_[atoms_[j].vars[i]];
      }
      out += ")";
    }
    return out;
  }

  friend bool operator==(const Query&, const Query&) = default;

 private:
  std::string join_vars_all() const {
    std::string s;
    for (std::size_t i = 0; i < variables_.size(); ++i) {
      if (i) s += ",";
      s += variables_[i];
    }
    return s;
  }

  void validate() const {
    if (variables_.empty()) throw QueryError(QueryError::Kind::Empty, "query has no variables");
    if (atoms_.empty()) throw QueryError(QueryError::Kind::Empty, "query has no atoms");
    if (variables_.size() > kMaxVariables) throw QueryError(QueryError::Kind::Syntax, "too many variables");
    std::set<std::string> seen_vars;
    for (const auto& v : variables_) {
      if (!seen_vars.insert(v).second) {
        throw QueryError(QueryError::Kind::RepeatedVariable, "repeated variable in head: " + v);
      }
    }
    std::set<std::string> relations;
    VarSet covered = 0;
    for (const auto& a : atoms_) {
      if (a.vars.empty()) throw QueryError(QueryError::Kind::Syntax, "atom " + a.relation + " has arity 0");
      if (!relations.insert(a.relation).second) {
        throw QueryError(QueryError::Kind::SelfJoin, "self-join on relation " + a.relation);
      }
      VarSet in_atom = 0;
      for (VarId v : a.vars) {
        if (v >= variables_.size()) throw QueryError(QueryError::Kind::UnknownVariable, "atom variable out of range");
        if (contains(in_atom, v)) {
          throw QueryError(QueryError::Kind::RepeatedVariable,
                           "repeated variable in atom " + a.relation + ": " + variables_[v]);
        }
        in_atom = with(in_atom, v);
      }
      covered |= in_atom;
    }
    if (covered != all_vars()) throw QueryError(QueryError::Kind::NotFull, "query is not full");
  }

  std::string name_;
  std::vector<std::string> variables_;
  std::vector<Atom> atoms_;
};

namespace detail {

class QueryParser {
 public:
  explicit QueryParser(std::string_view text) : text_(text) {}

  Query parse() {
    std::string name = identifier("query name");
    std::vector<std::string> head = var_list();
    skip_ws();
    expect(":-");
    struct RawAtom { std::string rel; std::vector<std::string> vars; std::size_t pos; };
    std::vector<RawAtom> body;
    for (;;) {
      skip_ws();
      std::size_t pos = pos_;
      std::string rel = identifier("relation name");
      body.push_back({rel, var_list(), pos});
      skip_ws();
      if (pos_ < text_.size() && text_[pos_] == ',') { ++pos_; continue; }
      break;
    }
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing input");

    std::set<std::string> head_set(head.begin(), head.end());
    std::set<std::string> body_set;
    std::set<std::string> rels;
    for (const auto& a : body) {
      if (!rels.insert(a.rel).second) {
        throw QueryError(QueryError::Kind::SelfJoin, "self-join on relation " + a.rel, a.pos);
      }
      std::set<std::string> in_atom;
      for (const auto& v : a.vars) {
        if (!in_atom.insert(v).second) {
          throw QueryError(QueryError::Kind::RepeatedVariable, "repeated variable in atom " + a.rel + ": " + v, a.pos);
        }
        body_set.insert(v);
      }
    }
    if (head_set != body_set) throw QueryError(QueryError::Kind::NotFull, "query is not full", 0);

    std::vector<Atom> atoms;
    for (const auto& a : body) {
      Atom atom{a.rel, {}};
      for (const auto& v : a.vars) {
        atom.vars.push_back(static_cast<VarId>(std::find(head.begin(), head.end(), v) - head.begin()));
      }
      atoms.push_back(std::move(atom));
    }
    return Query(std::move(name), std::move(head), std::move(atoms));
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw QueryError(QueryError::Kind::Syntax,
                     "syntax error at position " + std::to_string(pos_) + ": " + msg, pos_);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  void expect(std::string_view token) {
    skip_ws();
    if (text_.substr(pos_, token.size()) != token) fail("expected '" + std::string(token) + "'");
    pos_ += token.size();
  }

  std::string identifier(const char* what) {
    skip_ws();
    if (pos_ >= text_.size() || !std::isalpha(static_cast<unsigned char>(text_[pos_]))) {
      fail(std::string("expected ") + what);
    }
    std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      ++pos_;
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  std::vector<std::string> var_list() {
    expect("(");
    std::vector<std::string> vars;
    vars.push_back(identifier("variable"));
    for (;;) {
      skip_ws();
      if (pos_ < text_.size() && text_[pos_] == ',') { ++pos_; vars.push_back(identifier("variable")); continue; }
      break;
    }
    expect(")");
    return vars;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses `NAME(vars) :- ATOM, ATOM, ...`; whitespace-insensitive.
inline Query parse_query(std::string_view text) { return detail::QueryParser(text).parse(); }

/// q with the variables in `removed` deleted from every atom.
struct Residual {
  /// Empty exactly when every variable was removed.
  std::optional<Query> query;
  /// For each atom of `query`, the index of the originating atom.
  std::vector<std::size_t> kept_atoms;
  /// Atoms whose variables all lie in `removed` (arity dropped to 0).
  std::vector<std::size_t> removed_atoms;
  /// For each variable of `query`, its index in the original query.
  std::vector<VarId> kept_vars;
};

inline Residual residual_query(const Query& q, VarSet removed) {
  if ((removed & ~q.all_vars()) != 0) {
    throw QueryError(QueryError::Kind::UnknownVariable, "residual_query: unknown variable in removal set");
  }
  Residual res;
  std::vector<VarId> remap(q.num_vars(), q.num_vars());
  std::vector<std::string> names;
  for (VarId v = 0; v < q.num_vars(); ++v) {
    if (contains(removed, v)) continue;
    remap[v] = names.size();
    names.push_back(q.variables()[v]);
    res.kept_vars.push_back(v);
  }
  std::vector<Atom> atoms;
  for (std::size_t j = 0; j < q.num_atoms(); ++j) {
    Atom a{q.atoms()[j].relation, {}};
    for (VarId v : q.atoms()[j].vars) {
      if (!contains(removed, v)) a.vars.push_back(remap[v]);
    }
    if (a.vars.empty()) {
      res.removed_atoms.push_back(j);
    } else {
      res.kept_atoms.push_back(j);
      atoms.push_back(std::move(a));
    }
  }
  if (!names.empty()) res.query = Query(q.name(), std::move(names), std::move(atoms));
  return res;
}

inline Residual residual_query(const Query& q, const std::vector<std::string>& removed) {
  return residual_query(q, q.var_set(removed));
}

enum class Family { T, SP, K, W, L, Lstar, Ldagger, C, LW };

inline const std::vector<Family>& all_families() {
  static const std::vector<Family> fams{Family::T, Family::SP, Family::K, Family::W, Family::L,
                                        Family::Lstar, Family::Ldagger, Family::C, Family::LW};
  return fams;
}

inline std::string family_name(Family f) {
  switch (f) {
    case Family::T: return "T";
    case Family::SP: return "SP";
    case Family::K: return "K";
    case Family::W: return "W";
    case Family::L: return "L";
    case Family::Lstar: return "Lstar";
    case Family::Ldagger: return "Ldagger";
    case Family::C: return "C";
    case Family::LW: return "LW";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  for (Family f : all_families()) {
    if (family_name(f) == s) return f;
  }
  throw QueryError(QueryError::Kind::InvalidFamily, "unknown query family: " + std::string(s));
}

inline int min_k(Family f) {
  switch (f) {
    case Family::C:
    case Family::LW: return 3;
    case Family::K: return 2;
    default: return 1;
  }
}

/// Builds a member of a named query family.
///
/// Naming scheme (stable; downstream indexing depends on it):
///   T_k      S_j(z,x_j)                       vars z,x1..xk
///   SP_k     R_i(z,x_i), S_i(x_i,y_i)         vars z,x1..xk,y1..yk; atoms R1..Rk then S1..Sk
///   K_k      S_i_j(x_i,x_j), i<j              vars x1..xk
///   W_k      R(x1..xk), S_j(x_j)              vars x1..xk
///   L_k      S_j(x_{j-1},x_j)                 vars x0..xk
///   Lstar_k  R(x0), then L_k atoms
///   Ldagger_k R(x0), L_k atoms, T(x_k)
///   C_k      S_j(x_j, x_{(j mod k)+1})        vars x1..xk
///   LW_k     S_j(all x_i with i != j)         vars x1..xk
inline Query canonical_query(Family f, int k) {
  if (k < min_k(f)) {
    throw QueryError(QueryError::Kind::InvalidFamily,
                     "invalid k=" + std::to_string(k) + " for family " + family_name(f));
  }
  auto x = [](int i) { return "x" + std::to_string(i); };
  std::vector<std::string> vars;
  std::vector<Atom> atoms;
  auto idx = [&](const std::string& name) {
    return static_cast<VarId>(std::find(vars.begin(), vars.end(), name) - vars.begin());
  };
  auto atom = [&](std::string rel, std::initializer_list<std::string> vs) {
    Atom a{std::move(rel), {}};
    for (const auto& v : vs) a.vars.push_back(idx(v));
    atoms.push_back(std::move(a));
  };
  const std::string ks = std::to_string(k);
  switch (f) {
    case Family::T:
      vars.push_back("z");
      for (int j = 1; j <= k; ++j) vars.push_back(x(j));
      for (int j = 1; j <= k; ++j) atom("S" + std::to_string(j), {"z", x(j)});
      return Query("T" + ks, vars, atoms);
    case Family::SP:
      vars.push_back("z");
      for (int j = 1; j <= k; ++j) vars.push_back(x(j));
      for (int j = 1; j <= k; ++j) vars.push_back("y" + std::to_string(j));
      for (int j = 1; j <= k; ++j) atom("R" + std::to_string(j), {"z", x(j)});
      for (int j = 1; j <= k; ++j) atom("S" + std::to_string(j), {x(j), "y" + std::to_string(j)});
      return Query("SP" + ks, vars, atoms);
    case Family::K:
      for (int j = 1; j <= k; ++j) vars.push_back(x(j));
      for (int i = 1; i <= k; ++i) {
        for (int j = i + 1; j <= k; ++j) atom("S" + std::to_string(i) + "_" + std::to_string(j), {x(i), x(j)});
      }
      return Query("K" + ks, vars, atoms);
    case Family::W: {
      for (int j = 1; j <= k; ++j) vars.push_back(x(j));
      Atom r{"R", {}};
      for (int j = 0; j < k; ++j) r.vars.push_back(static_cast<VarId>(j));
      atoms.push_back(r);
      for (int j = 1; j <= k; ++j) atom("S" + std::to_string(j), {x(j)});
      return Query("W" + ks, vars, atoms);
    }
    case Family::L:
    case Family::Lstar:
    case Family::Ldagger:
      for (int j = 0; j <= k; ++j) vars.push_back(x(j));
      if (f != Family::L) atom("R", {x(0)});
      for (int j = 1; j <= k; ++j) atom("S" + std::to_string(j), {x(j - 1), x(j)});
      if (f == Family::Ldagger) atom("T", {x(k)});
      return Query(family_name(f) + ks, vars, atoms);
    case Family::C:
      for (int j = 1; j <= k; ++j) vars.push_back(x(j));
      for (int j = 1; j <= k; ++j) atom("S" + std::to_string(j), {x(j), x(j % k + 1)});
      return Query("C" + ks, vars, atoms);
    case Family::LW:
      for (int j = 1; j <= k; ++j) vars.push_back(x(j));
      for (int j = 1; j <= k; ++j) {
        Atom a{"S" + std::to_string(j), {}};
        for (int i = 1; i <= k; ++i) {
          if (i != j) a.vars.push_back(static_cast<VarId>(i - 1));
        }
        atoms.push_back(std::move(a));
      }
      return Query("LW" + ks, vars, atoms);
  }
  throw QueryError(QueryError::Kind::InvalidFamily, "unknown family");
}

}  // namespace mpcjoin
