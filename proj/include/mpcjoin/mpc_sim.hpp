#pragma once

// Round-synchronous MPC simulator: p servers, tuple-based routing, a barrier
// that commits messages, and exact per-round load accounting.

#include "mpcjoin/datagen.hpp"
#include "mpcjoin/prng.hpp"
#include "mpcjoin/relation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mpcjoin {

using ServerId = std::uint32_t;

/// h_i(v) = bounded(mix64(v + stream_key(seed, i)), buckets); buckets are 0-based.
struct HashFamily {
  std::uint64_t seed = 0;

  std::uint64_t operator()(std::uint64_t coordinate, Value v, std::uint64_t buckets) const {
    if (buckets <= 1) return 0;
    return bounded(mix64(v + stream_key(seed, coordinate)), buckets);
  }
  std::uint64_t key(std::span<const Value> values, std::uint64_t buckets) const {
    if (buckets <= 1) return 0;
    return bounded(mix64(hash_values(values) ^ stream_key(seed, 0xffff)), buckets);
  }
};

/// A [p_1] x ... x [p_k] grid of virtual servers, one share per variable.
class Grid {
 public:
  Grid() = default;
  explicit Grid(std::vector<std::uint64_t> shares) : shares_(std::move(shares)) {
    stride_.assign(shares_.size(), 1);
    for (std::size_t i = shares_.size(); i-- > 1;) stride_[i - 1] = stride_[i] * shares_[i];
  }
  const std::vector<std::uint64_t>& shares() const { return shares_; }
  std::uint64_t size() const {
    std::uint64_t s = 1;
    for (auto x : shares_) s *= x;
    return s;
  }
  /// Every grid point agreeing with the fixed coordinates (-1 = free).
  void subcube(const std::vector<std::int64_t>& fixed, std::vector<std::uint64_t>& out) const {
    out.clear();
    out.push_back(0);
    for (std::size_t i = 0; i < shares_.size(); ++i) {
      if (fixed[i] >= 0) {
        for (auto& o : out) o += static_cast<std::uint64_t>(fixed[i]) * stride_[i];
        continue;
      }
      const std::size_t n = out.size();
      for (std::uint64_t c = 1; c < shares_[i]; ++c) {
        for (std::size_t k = 0; k < n; ++k) out.push_back(out[k] + c * stride_[i]);
      }
    }
  }

 private:
  std::vector<std::uint64_t> shares_, stride_;
};

/// Destination subcube of a tuple whose columns bind `vars` (indices into the grid).
inline std::vector<std::uint64_t> hc_route(std::span<const Value> t, const std::vector<VarId>& vars, const Grid& grid,
                                           const HashFamily& h) {
  std::vector<std::int64_t> fixed(grid.shares().size(), -1);
  for (std::size_t c = 0; c < vars.size(); ++c) {
    fixed[vars[c]] = static_cast<std::int64_t>(h(vars[c], t[c], grid.shares()[vars[c]]));
  }
  std::vector<std::uint64_t> out;
  grid.subcube(fixed, out);
  return out;
}

/// Virtual servers [0, size) realized on physical servers. A layout may consist
/// of several copies (replicas) of the virtual space; grid splits produce them.
class Layout {
 public:
  Layout() = default;
  static Layout full(std::uint64_t p) {
    Layout l;
    l.size_ = p;
    for (std::uint64_t s = 0; s < p; ++s) l.table_.push_back(static_cast<ServerId>(s));
    l.index();
    return l;
  }
  std::uint64_t size() const { return size_; }
  std::uint64_t copies() const { return size_ == 0 ? 0 : table_.size() / size_; }
  ServerId physical(std::uint64_t copy, std::uint64_t v) const { return table_[copy * size_ + v]; }
  /// Copy index hosting physical server s, if any.
  std::optional<std::uint64_t> copy_of(ServerId s) const {
    auto it = where_.find(s);
    if (it == where_.end()) return std::nullopt;
    return it->second / size_;
  }
  std::optional<std::uint64_t> virtual_of(ServerId s) const {
    auto it = where_.find(s);
    if (it == where_.end()) return std::nullopt;
    return it->second % size_;
  }
  const std::vector<ServerId>& servers() const { return table_; }

  /// Virtual servers [offset, offset + count) of every copy.
  Layout range(std::uint64_t offset, std::uint64_t count) const {
    if (count == 0 || offset + count > size_) throw std::out_of_range("Layout::range outside layout");
    Layout l;
    l.size_ = count;
    for (std::uint64_t c = 0; c < copies(); ++c) {
      for (std::uint64_t v = 0; v < count; ++v) l.table_.push_back(physical(c, offset + v));
    }
    l.index();
    return l;
  }

  /// Splits the first a*b virtual servers into an a x b grid. The first
  /// layout has virtual space [a] and b copies per parent copy (row i spans
  /// servers i*b .. i*b+b-1), the second has [b] and a copies.
  std::pair<Layout, Layout> grid(std::uint64_t a, std::uint64_t b) const {
    if (a == 0 || b == 0 || a * b > size_) throw std::out_of_range("Layout::grid exceeds layout");
    Layout rows, cols;
    rows.size_ = a;
    cols.size_ = b;
    for (std::uint64_t c = 0; c < copies(); ++c) {
      for (std::uint64_t j = 0; j < b; ++j) {
        for (std::uint64_t i = 0; i < a; ++i) rows.table_.push_back(physical(c, i * b + j));
      }
      for (std::uint64_t i = 0; i < a; ++i) {
        for (std::uint64_t j = 0; j < b; ++j) cols.table_.push_back(physical(c, i * b + j));
      }
    }
    rows.index();
    cols.index();
    return {rows, cols};
  }

  std::string describe() const {
    std::ostringstream os;
    os << size_ << " servers";
    if (copies() > 1) os << " x" << copies() << " copies";
    return os.str();
  }

 private:
  void index() {
    where_.clear();
    for (std::size_t i = 0; i < table_.size(); ++i) {
      if (!where_.emplace(table_[i], i).second) throw std::logic_error("Layout: physical server listed twice");
    }
  }

  std::uint64_t size_ = 0;
  std::vector<ServerId> table_;
  std::unordered_map<ServerId, std::uint64_t> where_;
};

class NonTupleBasedRouting : public std::logic_error {
 public:
  NonTupleBasedRouting() : std::logic_error("non-tuple-based routing") {}
};

/// What a routing function may look at: the round, p and initial statistics.
class RoutingContext {
 public:
  RoutingContext(int round, std::uint64_t p, const DatabaseInstance& stats) : round_(round), p_(p), stats_(stats) {}
  int round() const { return round_; }
  std::uint64_t p() const { return p_; }
  const DatabaseInstance& statistics() const { return stats_; }
  /// Per-server state is off limits to destination functions.
  [[noreturn]] const Relation& server_state(ServerId, const std::string&) const { throw NonTupleBasedRouting(); }

 private:
  int round_;
  std::uint64_t p_;
  const DatabaseInstance& stats_;
};

struct Destination {
  std::uint64_t virtual_server;
  std::uint32_t tag = 0;
};

using TupleFilter = std::function<bool(std::span<const Value>)>;
using DestinationFn = std::function<void(std::span<const Value>, const RoutingContext&, std::vector<Destination>&)>;

/// One routing action: every tuple of a base relation or of an intermediate
/// fragment is sent to the union of its destinations.
struct RouteRequest {
  std::string label;                     // relation name in load traces
  std::optional<std::size_t> base_atom;  // base relation, read at its origin servers
  std::string fragment;                  // otherwise: intermediate fragment on `from`
  const Layout* from = nullptr;
  const Layout* to = nullptr;
  std::vector<std::string> targets;  // destination fragment per tag
  TupleFilter filter;                // optional
  DestinationFn destinations;
};

struct LoadEntry {
  std::uint64_t tuples = 0;
  std::uint64_t bits = 0;
  LoadEntry& operator+=(const LoadEntry& o) {
    tuples += o.tuples;
    bits += o.bits;
    return *this;
  }
};

struct RoundTrace {
  int round = 0;
  std::map<std::pair<ServerId, std::string>, LoadEntry> received;
  bool routes_base = false;  // some base relation was routed in this round
  std::uint64_t deliveries = 0;
};

struct LoadReport {
  std::uint64_t p = 1;
  int rounds = 0;
  std::vector<RoundTrace> traces;
  std::vector<LoadEntry> per_round_max;       // max over servers of the round's received total
  std::vector<LoadEntry> per_server_total;    // summed over rounds
  std::vector<std::vector<LoadEntry>> per_round_server;  // [round-1][server]
  LoadEntry max;                              // max over rounds (tuples and bits separately)

  static LoadReport build(std::uint64_t p, int rounds, std::vector<RoundTrace> traces) {
    LoadReport r;
    r.p = p;
    r.rounds = rounds;
    r.per_server_total.assign(p, {});
    for (const auto& t : traces) {
      std::vector<LoadEntry> per(p);
      for (const auto& [key, e] : t.received) {
        per[key.first] += e;
        r.per_server_total[key.first] += e;
      }
      LoadEntry m;
      for (const auto& e : per) {
        m.tuples = std::max(m.tuples, e.tuples);
        m.bits = std::max(m.bits, e.bits);
      }
      r.max.tuples = std::max(r.max.tuples, m.tuples);
      r.max.bits = std::max(r.max.bits, m.bits);
      r.per_round_max.push_back(m);
      r.per_round_server.push_back(std::move(per));
    }
    r.traces = std::move(traces);
    return r;
  }

  std::uint64_t total_tuples() const {
    std::uint64_t s = 0;
    for (const auto& e : per_server_total) s += e.tuples;
    return s;
  }

  /// round,server,relation,tuples,bits, then one "max" row per round and overall.
  std::string csv() const {
    std::ostringstream os;
    os << "round,server,relation,tuples,bits\n";
    for (const auto& t : traces) {
      for (const auto& [key, e] : t.received) {
        os << t.round << ',' << key.first << ',' << key.second << ',' << e.tuples << ',' << e.bits << '\n';
      }
    }
    for (std::size_t i = 0; i < per_round_max.size(); ++i) {
      os << traces[i].round << ",max,*," << per_round_max[i].tuples << ',' << per_round_max[i].bits << '\n';
    }
    os << "all,max,*," << max.tuples << ',' << max.bits << '\n';
    return os.str();
  }
};

/// Emitted output: either the full set or a count plus order-independent checksum.
struct OutputSummary {
  std::uint64_t emitted = 0;
  std::uint64_t distinct = 0;
  std::uint64_t checksum = 0;
  std::optional<Relation> tuples;  // sorted, distinct (collect mode)
};

inline std::uint64_t tuple_checksum(std::span<const Value> t) { return mix64(hash_values(t)); }

inline std::uint64_t relation_checksum(const Relation& r) {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < r.size(); ++i) s += tuple_checksum(r[i]);
  return s;
}

struct ClusterConfig {
  std::uint64_t p = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool collect_output = true;  // false: count + checksum only
  bool dry_run = false;        // skip output computation entirely
};

class Cluster {
 public:
  Cluster(const DatabaseInstance& db, ClusterConfig cfg) : db_(db), cfg_(cfg), state_(cfg.p), emitted_(cfg.p) {
    if (cfg_.p < 1) throw std::invalid_argument("Cluster: p must be >= 1");
    if (cfg_.p > UINT32_MAX) throw std::invalid_argument("Cluster: p too large");
    bits_per_value_ = db.bits_per_value();
    // Round-robin initial placement over the concatenated input.
    std::uint64_t g = 0;
    for (std::size_t j = 0; j < db.relations.size(); ++j) {
      const auto& rel = db.relations[j].tuples;
      const std::string name = base_fragment(j);
      for (std::uint64_t s = 0; s < cfg_.p; ++s) state_[s].emplace(name, Relation(rel.arity()));
      for (std::size_t i = 0; i < rel.size(); ++i, ++g) state_[g % cfg_.p].at(name).push_back(rel[i]);
    }
    for (auto& e : emitted_) e.rel = Relation(db.query.num_vars());
  }

  std::uint64_t p() const { return cfg_.p; }
  const ClusterConfig& config() const { return cfg_; }
  const DatabaseInstance& db() const { return db_; }
  const Query& query() const { return db_.query; }
  bool dry_run() const { return cfg_.dry_run; }
  std::uint64_t bits_per_value() const { return bits_per_value_; }
  std::string base_fragment(std::size_t atom) const { return "@" + db_.query.atoms()[atom].relation; }

  /// Opens round r (1-based) for routing.
  void begin_round(int r) {
    if (!pending_.empty()) throw std::logic_error("Cluster: previous round not committed");
    current_ = RoundTrace{};
    current_.round = r;
    open_ = true;
  }

  void route(const RouteRequest& req) {
    if (!open_) throw std::logic_error("Cluster: route outside a round");
    if (!req.to || !req.destinations) throw std::invalid_argument("Cluster::route: missing destination layout or function");
    last_round_ = std::max(last_round_, current_.round);
    const RoutingContext ctx(current_.round, cfg_.p, db_);
    std::vector<Destination> dest;
    std::vector<std::pair<ServerId, std::uint32_t>> phys;
    // Target copies reachable from each source copy (all copies for base tuples).
    std::vector<std::vector<std::uint64_t>> reach;
    auto deliver = [&](std::span<const Value> t, const std::vector<std::uint64_t>& copies) {
      if (req.filter && !req.filter(t)) return;
      dest.clear();
      req.destinations(t, ctx, dest);
      if (dest.empty()) return;
      phys.clear();
      for (const auto& d : dest) {
        if (d.virtual_server >= req.to->size()) throw std::out_of_range("route: virtual server outside layout");
        if (d.tag >= req.targets.size()) throw std::out_of_range("route: unknown target tag");
        for (std::uint64_t c : copies) phys.emplace_back(req.to->physical(c, d.virtual_server), d.tag);
      }
      std::sort(phys.begin(), phys.end());
      phys.erase(std::unique(phys.begin(), phys.end()), phys.end());
      const LoadEntry cost{1, t.size() * bits_per_value_};
      for (std::size_t i = 0; i < phys.size(); ++i) {
        auto& slot = pending_[phys[i].first][req.targets[phys[i].second]];
        if (slot.arity() != t.size()) slot = Relation(t.size());
        slot.push_back(t);
        if (i == 0 || phys[i].first != phys[i - 1].first) {  // destination union
          current_.received[{phys[i].first, req.label}] += cost;
          ++current_.deliveries;
        }
      }
    };
    if (req.base_atom) {
      current_.routes_base = true;
      const std::string name = base_fragment(*req.base_atom);
      std::vector<std::uint64_t> all(req.to->copies());
      std::iota(all.begin(), all.end(), 0);
      for (std::uint64_t s = 0; s < cfg_.p; ++s) {
        const Relation& r = state_[s].at(name);
        for (std::size_t i = 0; i < r.size(); ++i) deliver(r[i], all);
      }
      return;
    }
    if (!req.from) throw std::invalid_argument("Cluster::route: intermediate source needs a layout");
    // An intermediate stays within its copy: it reaches exactly the target
    // copies whose servers lie inside that copy.
    reach.assign(req.from->copies(), {});
    for (std::uint64_t c = 0; c < req.to->copies(); ++c) {
      std::optional<std::uint64_t> parent;
      for (std::uint64_t v = 0; v < req.to->size(); ++v) {
        const auto pc = req.from->copy_of(req.to->physical(c, v));
        if (!pc || (parent && *pc != *parent)) throw std::logic_error("Cluster::route: target copy outside a source copy");
        parent = pc;
      }
      if (parent) reach[*parent].push_back(c);
    }
    for (ServerId s : req.from->servers()) {
      const Relation* r = fragment(s, req.fragment);
      if (!r) continue;
      const auto& copies = reach[*req.from->copy_of(s)];
      for (std::size_t i = 0; i < r->size(); ++i) deliver((*r)[i], copies);
    }
  }

  /// Identity routing: tuples stay on their server under a new name, no load.
  void keep_local(const std::string& fragment_name, const std::string& target) {
    if (!open_) throw std::logic_error("Cluster: keep_local outside a round");
    last_round_ = std::max(last_round_, current_.round);
    for (std::uint64_t s = 0; s < cfg_.p; ++s) {
      auto it = state_[s].find(fragment_name);
      if (it == state_[s].end()) continue;
      auto& slot = pending_[static_cast<ServerId>(s)][target];
      if (slot.arity() != it->second.arity()) slot = Relation(it->second.arity());
      slot.append(it->second);
    }
  }

  /// Round barrier: all messages of the round become visible at once.
  void commit() {
    if (!open_) throw std::logic_error("Cluster: commit without open round");
    for (auto& [server, frags] : pending_) {
      for (auto& [name, rel] : frags) {
        auto it = state_[server].find(name);
        if (it == state_[server].end()) {
          state_[server].emplace(name, std::move(rel));
        } else {
          it->second.append(rel);
        }
      }
    }
    pending_.clear();
    traces_.push_back(std::move(current_));
    current_ = RoundTrace{};
    open_ = false;
  }

  const Relation* fragment(ServerId s, const std::string& name) const {
    auto it = state_[s].find(name);
    return it == state_[s].end() ? nullptr : &it->second;
  }

  /// Result of local computation on server s (no communication).
  void store(ServerId s, const std::string& name, Relation rel) {
    auto it = state_[s].find(name);
    if (it == state_[s].end()) {
      state_[s].emplace(name, std::move(rel));
    } else {
      it->second.append(rel);
    }
  }

  void emit(ServerId s, std::span<const Value> t) {
    auto& e = emitted_[s];
    ++e.count;
    if (cfg_.collect_output) {
      e.rel.push_back(t);
    } else {
      e.checksum += tuple_checksum(t);
    }
  }

  /// Runs fn(server) for every server, in parallel when configured. Each call
  /// may only touch its own server's state.
  template <class F>
  void parallel_for(const std::vector<ServerId>& servers, F&& fn) {
    const unsigned threads = std::min<std::size_t>(std::max(1u, cfg_.threads), servers.size());
    if (threads <= 1) {
      for (ServerId s : servers) fn(s);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            for (std::size_t i = next++; i < servers.size(); i = next++) fn(servers[i]);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  int rounds_used() const { return last_round_; }

  LoadReport report() const { return LoadReport::build(cfg_.p, last_round_, traces_); }
  const std::vector<RoundTrace>& traces() const { return traces_; }

  /// Tuples stored on server s across all fragments except the initial placement.
  std::uint64_t stored_tuples(ServerId s) const {
    std::uint64_t n = 0;
    for (const auto& [name, rel] : state_[s]) {
      if (!name.empty() && name[0] != '@') n += rel.size();
    }
    return n;
  }

  OutputSummary output() const {
    OutputSummary out;
    if (cfg_.collect_output) {
      Relation all(db_.query.num_vars());
      for (const auto& e : emitted_) {
        all.append(e.rel);
        out.emitted += e.count;
      }
      all.sort_unique();
      out.distinct = all.size();
      out.checksum = relation_checksum(all);
      out.tuples = std::move(all);
    } else {
      for (const auto& e : emitted_) {
        out.emitted += e.count;
        out.checksum += e.checksum;
      }
      out.distinct = out.emitted;
    }
    return out;
  }

 private:
  struct Emitted {
    Relation rel;
    std::uint64_t count = 0;
    std::uint64_t checksum = 0;
  };

  const DatabaseInstance& db_;
  ClusterConfig cfg_;
  std::uint64_t bits_per_value_ = 1;
  std::vector<std::unordered_map<std::string, Relation>> state_;
  std::map<ServerId, std::map<std::string, Relation>> pending_;
  std::vector<Emitted> emitted_;
  std::vector<RoundTrace> traces_;
  RoundTrace current_;
  bool open_ = false;
  int last_round_ = 0;
};

}  // namespace mpcjoin
