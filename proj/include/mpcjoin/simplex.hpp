#pragma once

// Exact two-phase primal simplex over rationals with Bland's anti-cycling rule.

#include "mpcjoin/rational.hpp"

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

namespace mpcjoin {

enum class Sense { LessEq, GreaterEq, Equal };

struct LinearConstraint {
  std::vector<Rational> coeffs;
  Sense sense = Sense::LessEq;
  Rational rhs;
};

/// All variables are implicitly bounded below by zero.
struct LinearProgram {
  std::size_t num_vars = 0;
  std::vector<Rational> objective;
  bool maximize = true;
  std::vector<LinearConstraint> constraints;

  void add(std::vector<Rational> coeffs, Sense sense, Rational rhs) {
    if (coeffs.size() != num_vars) throw std::invalid_argument("LinearProgram::add: coefficient count mismatch");
    constraints.push_back({std::move(coeffs), sense, std::move(rhs)});
  }
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  Rational value;
  std::vector<Rational> x;
};

namespace detail {

class Tableau {
 public:
  Tableau(std::size_t rows, std::size_t cols) : a_(rows, std::vector<Rational>(cols + 1)), basis_(rows, 0), cols_(cols) {}

  Rational& at(std::size_t r, std::size_t c) { return a_[r][c]; }
  Rational& rhs(std::size_t r) { return a_[r][cols_]; }
  std::size_t rows() const { return a_.size(); }
  std::size_t cols() const { return cols_; }
  std::vector<std::size_t>& basis() { return basis_; }

  void pivot(std::size_t r, std::size_t c) {
    const Rational piv = a_[r][c];
    for (auto& v : a_[r]) v /= piv;
    for (std::size_t i = 0; i < a_.size(); ++i) {
      if (i == r || a_[i][c] == 0) continue;
      const Rational f = a_[i][c];
      for (std::size_t j = 0; j <= cols_; ++j) {
        if (a_[r][j] != 0) a_[i][j] -= f * a_[r][j];
      }
    }
    basis_[r] = c;
  }

  void drop_row(std::size_t r) {
    a_.erase(a_.begin() + static_cast<std::ptrdiff_t>(r));
    basis_.erase(basis_.begin() + static_cast<std::ptrdiff_t>(r));
  }

  /// Maximizes cost . x over columns with allowed[c]; returns false when unbounded.
  bool maximize(const std::vector<Rational>& cost, const std::vector<bool>& allowed) {
    for (;;) {
      std::optional<std::size_t> entering;
      for (std::size_t c = 0; c < cols_ && !entering; ++c) {
        if (!allowed[c]) continue;
        Rational reduced = cost[c];
        for (std::size_t r = 0; r < rows(); ++r) {
          if (a_[r][c] != 0) reduced -= cost[basis_[r]] * a_[r][c];
        }
        if (reduced > 0) entering = c;
      }
      if (!entering) return true;
      std::optional<std::size_t> leaving;
      Rational best;
      for (std::size_t r = 0; r < rows(); ++r) {
        if (a_[r][*entering] <= 0) continue;
        Rational ratio = a_[r][cols_] / a_[r][*entering];
        if (!leaving || ratio < best || (ratio == best && basis_[r] < basis_[*leaving])) {
          leaving = r;
          best = ratio;
        }
      }
      if (!leaving) return false;
      pivot(*leaving, *entering);
    }
  }

  Rational value(const std::vector<Rational>& cost) const {
    Rational v = 0;
    for (std::size_t r = 0; r < a_.size(); ++r) v += cost[basis_[r]] * a_[r][cols_];
    return v;
  }

 private:
  std::vector<std::vector<Rational>> a_;
  std::vector<std::size_t> basis_;
  std::size_t cols_;
};

inline LpSolution solve_once(const LinearProgram& lp) {
  const std::size_t n = lp.num_vars;
  const std::size_t m = lp.constraints.size();
  if (lp.objective.size() != n) throw std::invalid_argument("lp_solve_exact: objective size mismatch");

  // Normalize to rhs >= 0.
  std::vector<LinearConstraint> rows = lp.constraints;
  for (auto& row : rows) {
    if (row.coeffs.size() != n) throw std::invalid_argument("lp_solve_exact: constraint size mismatch");
    if (row.rhs < 0) {
      for (auto& c : row.coeffs) c = -c;
      row.rhs = -row.rhs;
      if (row.sense == Sense::LessEq) row.sense = Sense::GreaterEq;
      else if (row.sense == Sense::GreaterEq) row.sense = Sense::LessEq;
    }
  }

  std::size_t slack_count = 0, artificial_count = 0;
  for (const auto& row : rows) {
    if (row.sense != Sense::Equal) ++slack_count;
    if (row.sense != Sense::LessEq) ++artificial_count;
  }
  const std::size_t total = n + slack_count + artificial_count;
  const std::size_t first_artificial = n + slack_count;
  Tableau t(m, total);
  std::size_t next_slack = n, next_art = first_artificial;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) t.at(r, c) = rows[r].coeffs[c];
    t.rhs(r) = rows[r].rhs;
    switch (rows[r].sense) {
      case Sense::LessEq:
        t.at(r, next_slack) = 1;
        t.basis()[r] = next_slack++;
        break;
      case Sense::GreaterEq:
        t.at(r, next_slack++) = -1;
        t.at(r, next_art) = 1;
        t.basis()[r] = next_art++;
        break;
      case Sense::Equal:
        t.at(r, next_art) = 1;
        t.basis()[r] = next_art++;
        break;
    }
  }

  std::vector<bool> allowed(total, true);
  if (artificial_count > 0) {
    std::vector<Rational> phase1(total, Rational(0));
    for (std::size_t c = first_artificial; c < total; ++c) phase1[c] = -1;
    t.maximize(phase1, allowed);
    if (t.value(phase1) < 0) return {LpStatus::Infeasible, 0, {}};
    // Drive zero-level artificials out of the basis; drop redundant rows.
    for (std::size_t r = 0; r < t.rows();) {
      if (t.basis()[r] < first_artificial) { ++r; continue; }
      std::optional<std::size_t> col;
      for (std::size_t c = 0; c < first_artificial && !col; ++c) {
        if (t.at(r, c) != 0) col = c;
      }
      if (col) { t.pivot(r, *col); ++r; } else { t.drop_row(r); }
    }
    for (std::size_t c = first_artificial; c < total; ++c) allowed[c] = false;
  }

  std::vector<Rational> cost(total, Rational(0));
  for (std::size_t c = 0; c < n; ++c) cost[c] = lp.maximize ? lp.objective[c] : Rational(-lp.objective[c]);
  if (!t.maximize(cost, allowed)) return {LpStatus::Unbounded, 0, {}};

  LpSolution sol;
  sol.status = LpStatus::Optimal;
  sol.x.assign(n, Rational(0));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (t.basis()[r] < n) sol.x[t.basis()[r]] = t.rhs(r);
  }
  sol.value = 0;
  for (std::size_t c = 0; c < n; ++c) sol.value += lp.objective[c] * sol.x[c];
  return sol;
}

}  // namespace detail

/// Solves `lp` exactly. With `lexicographic`, ties among optimal solutions are
/// broken by returning the lexicographically least optimal vector (x_0 first).
inline LpSolution lp_solve_exact(const LinearProgram& lp, bool lexicographic = true) {
  LpSolution sol = detail::solve_once(lp);
  if (sol.status != LpStatus::Optimal || !lexicographic || lp.num_vars == 0) return sol;

  LinearProgram refined = lp;
  refined.add(lp.objective, Sense::Equal, sol.value);
  refined.maximize = false;
  for (std::size_t i = 0; i < lp.num_vars; ++i) {
    refined.objective.assign(lp.num_vars, Rational(0));
    refined.objective[i] = 1;
    LpSolution step = detail::solve_once(refined);
    if (step.status != LpStatus::Optimal) throw std::logic_error("lp_solve_exact: refinement lost feasibility");
    std::vector<Rational> unit(lp.num_vars, Rational(0));
    unit[i] = 1;
    refined.add(std::move(unit), Sense::Equal, step.x[i]);
    sol.x[i] = step.x[i];
  }
  return sol;
}

}  // namespace mpcjoin
