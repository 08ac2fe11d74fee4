#pragma once

// Building blocks for MPC plans: per-source statistics, sinks, and composable
// jobs that run in round lockstep on a Layout.

#include "mpcjoin/lp_analyzer.hpp"
#include "mpcjoin/mpc_sim.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <unordered_map>

namespace mpcjoin {

/// Frequencies per attribute subset, restricted to entries >= threshold.
struct HeavyHitterMap {
  double threshold = 0;
  std::map<std::vector<std::size_t>, std::map<std::vector<Value>, std::uint64_t>> entries;

  std::size_t count(const std::vector<std::size_t>& cols) const {
    auto it = entries.find(cols);
    return it == entries.end() ? 0 : it->second.size();
  }
};

inline HeavyHitterMap heavy_hitters(const Relation& r, double threshold,
                                    std::vector<std::vector<std::size_t>> subsets = {}) {
  if (threshold < 1) throw std::invalid_argument("heavy_hitters: threshold must be >= 1");
  if (subsets.empty()) {
    for (std::size_t c = 0; c < r.arity(); ++c) subsets.push_back({c});
  }
  HeavyHitterMap out;
  out.threshold = threshold;
  for (const auto& cols : subsets) {
    std::map<std::vector<Value>, std::uint64_t> freq;
    std::vector<Value> key(cols.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      for (std::size_t c = 0; c < cols.size(); ++c) key[c] = r[i][cols[c]];
      ++freq[key];
    }
    auto& dst = out.entries[cols];
    for (auto& [k, f] : freq) {
      if (static_cast<double>(f) >= threshold) dst.emplace(k, f);
    }
  }
  return out;
}

/// Initial statistics of (a superset of) the tuples a source can carry.
class SourceStats {
 public:
  SourceStats(std::vector<VarId> vars, Relation tuples) : vars_(std::move(vars)), tuples_(std::move(tuples)) {}

  const std::vector<VarId>& vars() const { return vars_; }
  const Relation& tuples() const { return tuples_; }
  std::uint64_t size() const { return tuples_.size(); }

  std::optional<std::size_t> column(VarId v) const {
    for (std::size_t c = 0; c < vars_.size(); ++c) {
      if (vars_[c] == v) return c;
    }
    return std::nullopt;
  }

  const std::unordered_map<Value, std::uint64_t>& degrees(VarId v) const {
    std::lock_guard lock(mu_);
    auto it = degrees_.find(v);
    if (it != degrees_.end()) return it->second;
    auto& d = degrees_[v];
    if (auto c = column(v)) {
      for (std::size_t i = 0; i < tuples_.size(); ++i) ++d[tuples_[i][*c]];
    }
    return d;
  }

  std::uint64_t degree(VarId v, Value x) const {
    const auto& d = degrees(v);
    auto it = d.find(x);
    return it == d.end() ? 0 : it->second;
  }

  /// Frequencies of the projection onto `key` (global var ids, in that order).
  const std::map<std::vector<Value>, std::uint64_t>& key_degrees(const std::vector<VarId>& key) const {
    std::lock_guard lock(mu_);
    auto it = keyed_.find(key);
    if (it != keyed_.end()) return it->second;
    auto& d = keyed_[key];
    std::vector<std::size_t> cols;
    for (VarId v : key) cols.push_back(*column(v));
    std::vector<Value> k(cols.size());
    for (std::size_t i = 0; i < tuples_.size(); ++i) {
      for (std::size_t c = 0; c < cols.size(); ++c) k[c] = tuples_[i][cols[c]];
      ++d[k];
    }
    return d;
  }

 private:
  std::vector<VarId> vars_;
  Relation tuples_;
  mutable std::mutex mu_;
  mutable std::unordered_map<VarId, std::unordered_map<Value, std::uint64_t>> degrees_;
  mutable std::map<std::vector<VarId>, std::map<std::vector<Value>, std::uint64_t>> keyed_;
};

using StatsPtr = std::shared_ptr<const SourceStats>;

/// An input of a job: a (filtered) base relation or an intermediate fragment
/// living on the job's layout.
struct Source {
  std::string name;
  std::vector<VarId> vars;  // global variable per column
  std::optional<std::size_t> base_atom;
  std::string fragment;
  TupleFilter filter;
  StatsPtr stats;

  std::size_t column(VarId v) const {
    for (std::size_t c = 0; c < vars.size(); ++c) {
      if (vars[c] == v) return c;
    }
    throw std::logic_error("Source " + name + ": variable not present");
  }
  bool has(VarId v) const { return std::find(vars.begin(), vars.end(), v) != vars.end(); }
  VarSet var_set() const {
    VarSet s = 0;
    for (VarId v : vars) s = with(s, v);
    return s;
  }
};

inline Source base_source(const DatabaseInstance& db, std::size_t atom) {
  const auto& a = db.query.atoms()[atom];
  return Source{a.relation, a.vars, atom, {}, {}, std::make_shared<SourceStats>(a.vars, db.relations[atom].tuples)};
}

/// Adds a predicate to a base source (statistics are re-derived exactly) or
/// to an intermediate one (statistics stay an upper bound).
inline Source restrict_source(const Source& s, TupleFilter pred) {
  if (!pred) return s;
  Source out = s;
  if (s.filter) {
    out.filter = [a = s.filter, b = pred](std::span<const Value> t) { return a(t) && b(t); };
  } else {
    out.filter = pred;
  }
  if (s.base_atom) {
    Relation r(s.stats->tuples().arity());
    const Relation& all = s.stats->tuples();
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (pred(all[i])) r.push_back(all[i]);
    }
    out.stats = std::make_shared<SourceStats>(s.vars, std::move(r));
  }
  return out;
}

/// Predicate "column of v equals x" for sources containing v (true otherwise).
inline TupleFilter value_filter(const Source& s, VarId v, Value x) {
  if (!s.has(v)) return {};
  const std::size_t c = s.column(v);
  return [c, x](std::span<const Value> t) { return t[c] == x; };
}

/// Predicate "value of every listed variable is outside its heavy set".
inline TupleFilter light_filter(const Source& s, const std::vector<std::pair<VarId, const std::set<Value>*>>& heavy) {
  std::vector<std::pair<std::size_t, const std::set<Value>*>> cols;
  for (const auto& [v, h] : heavy) {
    if (s.has(v) && !h->empty()) cols.emplace_back(s.column(v), h);
  }
  if (cols.empty()) return {};
  return [cols](std::span<const Value> t) {
    for (const auto& [c, h] : cols) {
      if (h->count(t[c])) return false;
    }
    return true;
  };
}

/// Intermediate source for a fragment stored over `vars` (ascending).
inline Source intermediate_source(std::string name, std::string fragment, std::vector<VarId> vars, StatsPtr superset) {
  // Statistics must be keyed by the intermediate's own column order.
  StatsPtr stats = superset;
  if (superset && superset->vars() != vars) {
    Relation r(vars.size());
    std::vector<std::size_t> cols;
    bool ok = true;
    for (VarId v : vars) {
      auto c = superset->column(v);
      if (!c) { ok = false; break; }
      cols.push_back(*c);
    }
    if (ok) {
      std::vector<Value> t(vars.size());
      for (std::size_t i = 0; i < superset->tuples().size(); ++i) {
        for (std::size_t c = 0; c < cols.size(); ++c) t[c] = superset->tuples()[i][cols[c]];
        r.push_back(t);
      }
      r.sort_unique();
    }
    stats = std::make_shared<SourceStats>(vars, std::move(r));
  }
  return Source{std::move(name), std::move(vars), std::nullopt, std::move(fragment), {}, stats};
}

/// Where a job's results go.
struct Sink {
  bool emit = true;
  std::string fragment;                              // store target
  std::vector<std::pair<VarId, Value>> constants;    // emit: fixed variables
  TupleFilter accept;                                // emit: on the full assignment

  static Sink output() { return Sink{}; }
  static Sink store(std::string fragment) { return Sink{false, std::move(fragment), {}, {}}; }

  Sink with_constant(VarId v, Value x) const {
    Sink s = *this;
    s.constants.emplace_back(v, x);
    return s;
  }
  Sink with_accept(TupleFilter f) const {
    Sink s = *this;
    if (!s.accept) {
      s.accept = std::move(f);
    } else {
      s.accept = [a = s.accept, b = std::move(f)](std::span<const Value> t) { return a(t) && b(t); };
    }
    return s;
  }
  std::string describe() const {
    if (!emit) return "store " + fragment;
    std::string s = "emit";
    if (!constants.empty()) {
      s += " with";
      for (const auto& [v, x] : constants) s += " v" + std::to_string(v) + "=" + std::to_string(x);
    }
    return s;
  }
};

/// Plan-wide settings shared by all jobs of one algorithm run.
struct PlanContext {
  const DatabaseInstance& db;
  std::uint64_t seed = 0;
  std::uint64_t m = 1;  // normalizer: largest base relation
  int next_id = 0;

  PlanContext(const DatabaseInstance& d, std::uint64_t s) : db(d), seed(s) {
    for (const auto& r : d.relations) m = std::max<std::uint64_t>(m, r.size());
  }
  std::string fresh(const std::string& prefix) { return prefix + "#" + std::to_string(next_id++); }
  HashFamily hash() { return HashFamily{mix64(seed + kGolden * static_cast<std::uint64_t>(++next_id))}; }
};

/// Local query over the given sources: variables are the global ones used,
/// ascending; atoms keep the source names and column orders.
inline Query local_query(const Query& global, const std::vector<const Source*>& sources, std::vector<VarId>& local_vars) {
  VarSet used = 0;
  for (const Source* s : sources) used |= s->var_set();
  local_vars.clear();
  std::vector<std::string> names;
  std::vector<std::size_t> index(global.num_vars(), 0);
  for (VarId v = 0; v < global.num_vars(); ++v) {
    if (!contains(used, v)) continue;
    index[v] = local_vars.size();
    local_vars.push_back(v);
    names.push_back(global.variables()[v]);
  }
  std::vector<Atom> atoms;
  for (const Source* s : sources) {
    Atom a{s->name, {}};
    for (VarId v : s->vars) a.vars.push_back(index[v]);
    atoms.push_back(std::move(a));
  }
  return Query("local", names, atoms);
}

inline std::vector<VarId> sorted_vars(const std::vector<VarId>& v) {
  std::vector<VarId> s = v;
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

inline std::vector<VarId> union_vars(const std::vector<const Source*>& sources) {
  std::vector<VarId> all;
  for (const Source* s : sources) all.insert(all.end(), s->vars.begin(), s->vars.end());
  return sorted_vars(all);
}

/// Writes local join results of one server into a sink.
class SinkWriter {
 public:
  SinkWriter(Cluster& c, ServerId s, const Sink& sink, const std::vector<VarId>& local_vars,
             const std::vector<VarId>& out_vars)
      : cluster_(c), server_(s), sink_(sink) {
    if (sink.emit) {
      full_.assign(c.query().num_vars(), 0);
      std::vector<bool> covered(full_.size(), false);
      for (std::size_t i = 0; i < local_vars.size(); ++i) {
        map_.push_back(local_vars[i]);
        covered[local_vars[i]] = true;
      }
      for (const auto& [v, x] : sink.constants) {
        full_[v] = x;
        covered[v] = true;
      }
      if (std::find(covered.begin(), covered.end(), false) != covered.end()) {
        throw std::logic_error("SinkWriter: emitted assignment does not cover every query variable");
      }
    } else {
      for (VarId v : out_vars) {
        auto it = std::find(local_vars.begin(), local_vars.end(), v);
        if (it == local_vars.end()) throw std::logic_error("SinkWriter: stored variable not produced");
        proj_.push_back(static_cast<std::size_t>(it - local_vars.begin()));
      }
      out_ = Relation(out_vars.size());
    }
  }

  void operator()(std::span<const Value> local) {
    if (sink_.emit) {
      for (std::size_t i = 0; i < map_.size(); ++i) full_[map_[i]] = local[i];
      if (sink_.accept && !sink_.accept(full_)) return;
      cluster_.emit(server_, full_);
    } else {
      row_.resize(proj_.size());
      for (std::size_t i = 0; i < proj_.size(); ++i) row_[i] = local[proj_[i]];
      out_.push_back(row_);
    }
  }

  void finish() {
    if (sink_.emit) return;
    out_.sort_unique();
    cluster_.store(server_, sink_.fragment, std::move(out_));
    out_ = Relation(proj_.size());
  }

 private:
  Cluster& cluster_;
  ServerId server_;
  const Sink& sink_;
  std::vector<VarId> map_;
  std::vector<std::size_t> proj_;
  std::vector<Value> full_, row_;
  Relation out_;
};

class Job {
 public:
  virtual ~Job() = default;
  virtual int rounds() const = 0;
  /// Issues this job's routing for relative round r (1-based).
  virtual void route(Cluster& c, int r) = 0;
  /// Local computation after the barrier of relative round r (0 = before any round).
  virtual void compute(Cluster& c, int r) = 0;
  virtual void describe(std::ostream& os, int indent, int first_round) const = 0;
  /// Variables of stored results, ascending.
  virtual std::vector<VarId> output_vars() const = 0;
};

using JobPtr = std::unique_ptr<Job>;

inline std::string pad(int indent) { return std::string(static_cast<std::size_t>(indent) * 2, ' '); }

inline std::string round_span(int first, int rounds) {
  if (rounds <= 0) return "r" + std::to_string(first - 1);
  if (rounds == 1) return "r" + std::to_string(first);
  return "r" + std::to_string(first) + "-r" + std::to_string(first + rounds - 1);
}

namespace detail {

/// Joins the named fragments on every server of the layout and feeds the sink.
inline void join_on_layout(Cluster& c, const Layout& layout, const Query& localq, const std::vector<VarId>& local_vars,
                           const std::vector<std::vector<std::string>>& fragment_sets, const Sink& sink,
                           const std::vector<VarId>& out_vars) {
  if (sink.emit && c.dry_run()) return;
  if (sink.emit && layout.copies() != 1) throw std::logic_error("emit from a replicated layout");
  c.parallel_for(layout.servers(), [&](ServerId s) {
    SinkWriter w(c, s, sink, local_vars, out_vars);
    for (const auto& names : fragment_sets) {
      Fragments f;
      bool ok = true;
      for (const auto& n : names) {
        const Relation* r = c.fragment(s, n);
        if (!r || r->empty()) { ok = false; break; }
        f.push_back(r);
      }
      if (ok) local_join(localq, f, [&](std::span<const Value> t) { w(t); });
    }
    w.finish();
  });
}

}  // namespace detail

/// How a source is shuffled in a OneRoundJob.
enum class Placement { Grid, Key, Broadcast };

/// One communication round followed by a local join of everything received:
/// HyperCube (grid), hash partitioning on key variables, or broadcast.
class OneRoundJob : public Job {
 public:
  struct Input {
    Source source;
    Placement placement = Placement::Grid;
  };

  OneRoundJob(PlanContext& ctx, const Layout& layout, std::vector<Input> inputs, std::vector<std::uint64_t> grid_shares,
              std::vector<VarId> key, Sink sink, std::string title)
      : layout_(layout), inputs_(std::move(inputs)), key_(std::move(key)), sink_(std::move(sink)),
        title_(std::move(title)), hash_(ctx.hash()), query_(ctx.db.query) {
    std::vector<const Source*> srcs;
    for (auto& in : inputs_) {
      srcs.push_back(&in.source);
      frags_.push_back(ctx.fresh(title_ + "." + in.source.name));
    }
    localq_ = local_query(ctx.db.query, srcs, local_vars_);
    out_vars_ = local_vars_;
    // Grid over global variable ids: unused ids get share 1.
    std::vector<std::uint64_t> shares(ctx.db.query.num_vars(), 1);
    for (std::size_t i = 0; i < grid_shares.size() && i < shares.size(); ++i) shares[i] = grid_shares[i];
    grid_ = Grid(shares);
    if (grid_.size() > layout_.size()) throw std::logic_error(title_ + ": grid larger than layout");
  }

  int rounds() const override { return 1; }

  void route(Cluster& c, int r) override {
    if (r != 1) return;
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
      const auto& in = inputs_[i];
      RouteRequest req;
      req.label = in.source.name;
      req.base_atom = in.source.base_atom;
      req.fragment = in.source.fragment;
      req.from = &layout_;
      req.to = &layout_;
      req.targets = {frags_[i]};
      req.filter = in.source.filter;
      const std::uint64_t P = layout_.size();
      switch (in.placement) {
        case Placement::Grid:
          req.destinations = [this, vars = in.source.vars](std::span<const Value> t, const RoutingContext&,
                                                          std::vector<Destination>& out) {
            for (auto v : hc_route(t, vars, grid_, hash_)) out.push_back({v, 0});
          };
          break;
        case Placement::Key: {
          std::vector<std::size_t> cols;
          for (VarId v : key_) cols.push_back(in.source.column(v));
          req.destinations = [this, cols, P](std::span<const Value> t, const RoutingContext&,
                                             std::vector<Destination>& out) {
            std::vector<Value> k(cols.size());
            for (std::size_t c = 0; c < cols.size(); ++c) k[c] = t[cols[c]];
            out.push_back({hash_.key(k, P), 0});
          };
          break;
        }
        case Placement::Broadcast:
          req.destinations = [P](std::span<const Value>, const RoutingContext&, std::vector<Destination>& out) {
            for (std::uint64_t v = 0; v < P; ++v) out.push_back({v, 0});
          };
          break;
      }
      c.route(req);
    }
  }

  void compute(Cluster& c, int r) override {
    if (r != 1) return;
    detail::join_on_layout(c, layout_, localq_, local_vars_, {frags_}, sink_, out_vars_);
  }

  void describe(std::ostream& os, int indent, int first) const override {
    os << pad(indent) << round_span(first, 1) << ": " << title_ << " on " << layout_.describe() << " [";
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
      if (i) os << ", ";
      os << inputs_[i].source.name << (inputs_[i].placement == Placement::Grid   ? ":grid"
                                       : inputs_[i].placement == Placement::Key ? ":key"
                                                                                : ":bcast");
    }
    os << "]";
    bool any = false;
    for (std::size_t v = 0; v < grid_.shares().size(); ++v) {
      if (grid_.shares()[v] > 1) {
        os << (any ? "," : " shares ") << query_.variables()[v] << "=" << grid_.shares()[v];
        any = true;
      }
    }
    os << " -> " << sink_.describe() << "\n";
  }

  std::vector<VarId> output_vars() const override { return out_vars_; }

 private:
  Layout layout_;
  std::vector<Input> inputs_;
  std::vector<VarId> key_;
  Sink sink_;
  std::string title_;
  HashFamily hash_;
  const Query& query_;
  Grid grid_;
  std::vector<std::string> frags_;
  Query localq_;
  std::vector<VarId> local_vars_, out_vars_;
};

/// Join of A and B on their shared variables Z in one round, where no Z value
/// of A is heavy. Heavy Z values of B (degree > m/P) get floor(P*d/m)
/// exclusive servers: B partitioned by tuple hash, A broadcast. Light values
/// are hash-joined on Z over all P servers.
class OneSidedJoinJob : public Job {
 public:
  OneSidedJoinJob(PlanContext& ctx, const Layout& layout, Source a, Source b, std::vector<VarId> out_vars, Sink sink,
                  std::string title)
      : layout_(layout), a_(std::move(a)), b_(std::move(b)), out_vars_(std::move(out_vars)), sink_(std::move(sink)),
        title_(std::move(title)), hash_(ctx.hash()) {
    for (VarId v : a_.vars) {
      if (b_.has(v)) key_.push_back(v);
    }
    key_ = sorted_vars(key_);
    if (key_.empty()) throw std::invalid_argument(title_ + ": relations share no variable");
    const std::uint64_t P = layout_.size();
    const std::uint64_t m = ctx.m;
    for (const auto& [k, d] : a_.stats->key_degrees(key_)) {
      if (d > 1 && d * P > m) {  // a degree-1 key is never skewed, even when m < p
        throw std::invalid_argument(title_ + ": precondition violated, key degree " + std::to_string(d) + " in " + a_.name +
                                    " exceeds m/p");
      }
    }
    std::uint64_t offset = 0;
    for (const auto& [k, d] : b_.stats->key_degrees(key_)) {
      if (d * P <= m) continue;
      const std::uint64_t ph = static_cast<std::uint64_t>((static_cast<unsigned __int128>(P) * d) / m);
      heavy_.emplace(k, std::make_pair(offset, ph));
      offset += ph;
    }
    if (offset > P) throw std::runtime_error(title_ + ": insufficient servers");
    heavy_servers_ = offset;
    std::vector<const Source*> srcs{&a_, &b_};
    localq_ = local_query(ctx.db.query, srcs, local_vars_);
    for (const char* part : {"LA", "LB", "HA", "HB"}) frags_.push_back(ctx.fresh(title_ + "." + part));
    if (out_vars_.empty()) out_vars_ = local_vars_;
  }

  int rounds() const override { return 1; }

  void route(Cluster& c, int r) override {
    if (r != 1) return;
    const std::uint64_t P = layout_.size();
    for (int side = 0; side < 2; ++side) {
      const Source& s = side == 0 ? a_ : b_;
      std::vector<std::size_t> cols;
      for (VarId v : key_) cols.push_back(s.column(v));
      RouteRequest req;
      req.label = s.name;
      req.base_atom = s.base_atom;
      req.fragment = s.fragment;
      req.from = &layout_;
      req.to = &layout_;
      req.filter = s.filter;
      req.targets = side == 0 ? std::vector<std::string>{frags_[0], frags_[2]} : std::vector<std::string>{frags_[1], frags_[3]};
      req.destinations = [this, cols, P, side](std::span<const Value> t, const RoutingContext&,
                                               std::vector<Destination>& out) {
        std::vector<Value> k(cols.size());
        for (std::size_t i = 0; i < cols.size(); ++i) k[i] = t[cols[i]];
        auto it = heavy_.find(k);
        if (it == heavy_.end()) {
          out.push_back({hash_.key(k, P), 0});
          return;
        }
        const auto [offset, ph] = it->second;
        if (side == 0) {
          for (std::uint64_t v = 0; v < ph; ++v) out.push_back({offset + v, 1});
        } else {
          out.push_back({offset + bounded(mix64(hash_values(t) ^ hash_.seed), ph), 1});
        }
      };
      c.route(req);
    }
  }

  void compute(Cluster& c, int r) override {
    if (r != 1) return;
    detail::join_on_layout(c, layout_, localq_, local_vars_, {{frags_[0], frags_[1]}, {frags_[2], frags_[3]}}, sink_,
                           out_vars_);
  }

  void describe(std::ostream& os, int indent, int first) const override {
    os << pad(indent) << round_span(first, 1) << ": " << title_ << " " << a_.name << " x " << b_.name << " on "
       << layout_.describe() << " (" << heavy_.size() << " heavy keys on " << heavy_servers_ << " servers) -> "
       << sink_.describe() << "\n";
  }

  std::vector<VarId> output_vars() const override { return out_vars_; }
  std::size_t heavy_keys() const { return heavy_.size(); }
  std::uint64_t heavy_servers() const { return heavy_servers_; }

 private:
  Layout layout_;
  Source a_, b_;
  std::vector<VarId> out_vars_;
  Sink sink_;
  std::string title_;
  HashFamily hash_;
  std::vector<VarId> key_;
  std::map<std::vector<Value>, std::pair<std::uint64_t, std::uint64_t>> heavy_;
  std::uint64_t heavy_servers_ = 0;
  Query localq_;
  std::vector<VarId> local_vars_;
  std::vector<std::string> frags_;
};

/// The one-round skew-aware algorithm: a value is heavy for x when its degree
/// reaches m_j/P in some source containing x. For every heavy set X the HC
/// shares come from the share LP with X fixed; each tuple is sent to the union
/// of the subcubes of all variants consistent with its own heavy pattern, and
/// every output is produced by exactly one variant.
class OneRoundSkewJob : public Job {
 public:
  OneRoundSkewJob(PlanContext& ctx, const Layout& layout, std::vector<Source> sources, Sink sink, std::string title)
      : layout_(layout), sources_(std::move(sources)), sink_(std::move(sink)), title_(std::move(title)),
        hash_(ctx.hash()), query_(ctx.db.query) {
    std::vector<const Source*> srcs;
    for (const auto& s : sources_) srcs.push_back(&s);
    localq_ = local_query(ctx.db.query, srcs, local_vars_);
    const std::uint64_t P = layout_.size();
    const std::size_t k = local_vars_.size();
    heavy_.assign(k, {});
    for (std::size_t i = 0; i < k; ++i) {
      const VarId v = local_vars_[i];
      for (const auto& s : sources_) {
        if (!s.has(v)) continue;
        const std::uint64_t mj = s.stats->size();
        for (const auto& [x, d] : s.stats->degrees(v)) {
          if (d * P >= mj) heavy_[i].insert(x);
        }
      }
    }
    std::vector<std::uint64_t> sizes;
    for (const auto& s : sources_) {
      sizes.push_back(std::max<std::uint64_t>(1, s.stats->size() * s.vars.size() * ctx.db.bits_per_value()));
    }
    VarSet possible = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (!heavy_[i].empty()) possible = with(possible, i);
    }
    // Enumerate subsets of the variables that have heavy values at all.
    for (VarSet x = possible;; x = (x - 1) & possible) {
      variant_index_[x] = variants_.size();
      ShareAllocation a = share_lp(localq_, sizes, P, x);
      std::vector<std::uint64_t> shares(ctx.db.query.num_vars(), 1);
      for (std::size_t i = 0; i < k; ++i) shares[local_vars_[i]] = a.shares[i];
      variants_.push_back({x, Grid(shares)});
      if (x == 0) break;
    }
    std::sort(variants_.begin(), variants_.end(), [](const auto& a, const auto& b) { return a.heavy < b.heavy; });
    for (std::size_t i = 0; i < variants_.size(); ++i) variant_index_[variants_[i].heavy] = i;
    for (std::size_t j = 0; j < sources_.size(); ++j) {
      frags_.emplace_back();
      for (std::size_t i = 0; i < variants_.size(); ++i) frags_[j].push_back(ctx.fresh(title_ + "." + sources_[j].name));
    }
  }

  int rounds() const override { return 1; }

  void route(Cluster& c, int r) override {
    if (r != 1) return;
    for (std::size_t j = 0; j < sources_.size(); ++j) {
      const Source& s = sources_[j];
      // Local index of each column, and the set of local vars in the source.
      std::vector<std::size_t> lidx;
      VarSet mask = 0;
      for (VarId v : s.vars) {
        const auto i = static_cast<std::size_t>(std::find(local_vars_.begin(), local_vars_.end(), v) - local_vars_.begin());
        lidx.push_back(i);
        mask = with(mask, i);
      }
      RouteRequest req;
      req.label = s.name;
      req.base_atom = s.base_atom;
      req.fragment = s.fragment;
      req.from = &layout_;
      req.to = &layout_;
      req.filter = s.filter;
      req.targets = frags_[j];
      req.destinations = [this, lidx, mask, vars = s.vars](std::span<const Value> t, const RoutingContext&,
                                                           std::vector<Destination>& out) {
        VarSet pattern = 0;
        for (std::size_t c = 0; c < lidx.size(); ++c) {
          if (heavy_[lidx[c]].count(t[c])) pattern = with(pattern, lidx[c]);
        }
        std::vector<std::uint64_t> cube;
        for (std::size_t i = 0; i < variants_.size(); ++i) {
          if ((variants_[i].heavy & mask) != pattern) continue;
          cube = hc_route(t, vars, variants_[i].grid, hash_);
          for (auto v : cube) out.push_back({v, static_cast<std::uint32_t>(i)});
        }
      };
      c.route(req);
    }
  }

  void compute(Cluster& c, int r) override {
    if (r != 1) return;
    std::vector<std::vector<std::string>> sets;
    for (std::size_t i = 0; i < variants_.size(); ++i) {
      std::vector<std::string> names;
      for (std::size_t j = 0; j < sources_.size(); ++j) names.push_back(frags_[j][i]);
      sets.push_back(std::move(names));
    }
    detail::join_on_layout(c, layout_, localq_, local_vars_, sets, sink_, local_vars_);
  }

  void describe(std::ostream& os, int indent, int first) const override {
    os << pad(indent) << round_span(first, 1) << ": " << title_ << " on " << layout_.describe() << " [";
    for (std::size_t j = 0; j < sources_.size(); ++j) os << (j ? ", " : "") << sources_[j].name;
    os << "], " << variants_.size() << " heavy-set variants -> " << sink_.describe() << "\n";
    for (const auto& v : variants_) {
      os << pad(indent + 1) << "X={";
      bool first_var = true;
      for (std::size_t i = 0; i < local_vars_.size(); ++i) {
        if (!contains(v.heavy, i)) continue;
        os << (first_var ? "" : ",") << query_.variables()[local_vars_[i]];
        first_var = false;
      }
      os << "} shares";
      for (VarId g : local_vars_) os << " " << query_.variables()[g] << "=" << v.grid.shares()[g];
      os << "\n";
    }
  }

  std::vector<VarId> output_vars() const override { return local_vars_; }

  /// Heavy set (over global variables) of a full output assignment.
  VarSet classify(std::span<const Value> full) const {
    VarSet x = 0;
    for (std::size_t i = 0; i < local_vars_.size(); ++i) {
      if (heavy_[i].count(full[local_vars_[i]])) x = with(x, local_vars_[i]);
    }
    return x;
  }

 private:
  struct Variant {
    VarSet heavy;  // over local variable indices
    Grid grid;
  };
  Layout layout_;
  std::vector<Source> sources_;
  Sink sink_;
  std::string title_;
  HashFamily hash_;
  const Query& query_;
  Query localq_;
  std::vector<VarId> local_vars_;
  std::vector<std::set<Value>> heavy_;
  std::vector<Variant> variants_;
  std::map<VarSet, std::size_t> variant_index_;
  std::vector<std::vector<std::string>> frags_;
};

/// Children run in lockstep from the same first round.
class ParallelJob : public Job {
 public:
  ParallelJob(std::vector<JobPtr> children, std::string title) : children_(std::move(children)), title_(std::move(title)) {}
  int rounds() const override {
    int r = 0;
    for (const auto& c : children_) r = std::max(r, c->rounds());
    return r;
  }
  void route(Cluster& c, int r) override {
    for (auto& ch : children_) {
      if (r <= ch->rounds()) ch->route(c, r);
    }
  }
  void compute(Cluster& c, int r) override {
    for (auto& ch : children_) {
      if (r <= ch->rounds()) ch->compute(c, r);
    }
  }
  void describe(std::ostream& os, int indent, int first) const override {
    os << pad(indent) << round_span(first, rounds()) << ": " << title_ << " (" << children_.size() << " parts)\n";
    for (const auto& ch : children_) ch->describe(os, indent + 1, first);
  }
  std::vector<VarId> output_vars() const override { return children_.empty() ? std::vector<VarId>{} : children_[0]->output_vars(); }
  bool empty() const { return children_.empty(); }

 private:
  std::vector<JobPtr> children_;
  std::string title_;
};

/// `second` starts once `first` has finished.
class SequenceJob : public Job {
 public:
  SequenceJob(JobPtr first, JobPtr second) : first_(std::move(first)), second_(std::move(second)) {}
  int rounds() const override { return first_->rounds() + second_->rounds(); }
  void route(Cluster& c, int r) override {
    const int r1 = first_->rounds();
    if (r <= r1) {
      first_->route(c, r);
    } else {
      second_->route(c, r - r1);
    }
  }
  void compute(Cluster& c, int r) override {
    const int r1 = first_->rounds();
    if (r <= r1) first_->compute(c, r);
    if (r >= r1) second_->compute(c, r - r1);
  }
  void describe(std::ostream& os, int indent, int first) const override {
    first_->describe(os, indent, first);
    second_->describe(os, indent, first + first_->rounds());
  }
  std::vector<VarId> output_vars() const override { return second_->output_vars(); }

 private:
  JobPtr first_, second_;
};

/// Runs children that store their results, then joins the stored results on
/// every server of the layout (cartesian products over grid splits, or
/// plain joins when children share the layout).
class ProductJob : public Job {
 public:
  struct Part {
    JobPtr job;
    std::string fragment;  // where the child stores its result
  };

  ProductJob(PlanContext& ctx, const Layout& layout, std::vector<Part> parts, Sink sink, std::string title)
      : layout_(layout), parts_(std::move(parts)), sink_(std::move(sink)), title_(std::move(title)) {
    for (auto& p : parts_) {
      sources_.push_back(Source{ctx.fresh("P"), p.job->output_vars(), std::nullopt, p.fragment, {}, nullptr});
    }
    std::vector<const Source*> srcs;
    for (const auto& s : sources_) srcs.push_back(&s);
    localq_ = local_query(ctx.db.query, srcs, local_vars_);
  }

  int rounds() const override {
    int r = 0;
    for (const auto& p : parts_) r = std::max(r, p.job->rounds());
    return r;
  }
  void route(Cluster& c, int r) override {
    for (auto& p : parts_) {
      if (r <= p.job->rounds()) p.job->route(c, r);
    }
  }
  void compute(Cluster& c, int r) override {
    for (auto& p : parts_) {
      if (r <= p.job->rounds()) p.job->compute(c, r);
    }
    if (r != rounds()) return;
    std::vector<std::string> names;
    for (const auto& p : parts_) names.push_back(p.fragment);
    detail::join_on_layout(c, layout_, localq_, local_vars_, {names}, sink_, local_vars_);
  }
  void describe(std::ostream& os, int indent, int first) const override {
    os << pad(indent) << round_span(first, rounds()) << ": " << title_ << " on " << layout_.describe() << " -> "
       << sink_.describe() << "\n";
    for (const auto& p : parts_) p.job->describe(os, indent + 1, first);
  }
  std::vector<VarId> output_vars() const override { return local_vars_; }

 private:
  Layout layout_;
  std::vector<Part> parts_;
  Sink sink_;
  std::string title_;
  std::vector<Source> sources_;
  Query localq_;
  std::vector<VarId> local_vars_;
};

/// Emits directly from the initial placement, without communication.
class LocalEmitJob : public Job {
 public:
  LocalEmitJob(PlanContext& ctx, std::size_t atom, Sink sink) : atom_(atom), sink_(std::move(sink)) {
    Source s = base_source(ctx.db, atom);
    std::vector<const Source*> srcs{&s};
    localq_ = local_query(ctx.db.query, srcs, local_vars_);
  }
  int rounds() const override { return 0; }
  void route(Cluster&, int) override {}
  void compute(Cluster& c, int r) override {
    if (r != 0) return;
    const Layout all = Layout::full(c.p());
    detail::join_on_layout(c, all, localq_, local_vars_, {{c.base_fragment(atom_)}}, sink_, local_vars_);
  }
  void describe(std::ostream& os, int indent, int) const override {
    os << pad(indent) << "r0: emit base relation in place -> " << sink_.describe() << "\n";
  }
  std::vector<VarId> output_vars() const override { return local_vars_; }

 private:
  std::size_t atom_;
  Sink sink_;
  Query localq_;
  std::vector<VarId> local_vars_;
};

}  // namespace mpcjoin
