#pragma once

// External-memory execution of tuple-based MPC algorithms: the p_o simulated
// servers are processed one at a time by a single machine with W words of
// internal memory and block size B (one tuple = one word).

#include "mpcjoin/algorithms.hpp"

#include <functional>
#include <sstream>

namespace mpcjoin {

struct EMConfig {
  std::uint64_t W = 0;  // internal memory, words
  std::uint64_t B = 1;  // block size, words

  void validate() const {
    if (B < 1 || B > W) throw std::invalid_argument("EMConfig: need 1 <= B <= W");
  }
};

struct IOReport {
  std::uint64_t io_blocks = 0;
  std::vector<std::pair<std::string, std::uint64_t>> phases;
  std::uint64_t p_o = 0;
  int r = 0;
  std::uint64_t peak_memory = 0;  // largest per-server resident data, words

  void add(std::string phase, std::uint64_t blocks) {
    phases.emplace_back(std::move(phase), blocks);
    io_blocks += blocks;
  }
  std::string csv() const {
    std::ostringstream os;
    os << "phase,blocks\n";
    for (const auto& [name, b] : phases) os << name << ',' << b << '\n';
    os << "total," << io_blocks << '\n';
    return os.str();
  }
};

using MpcAlgorithm = std::function<AlgorithmResult(const DatabaseInstance&, const ClusterConfig&)>;

inline MpcAlgorithm named_algorithm(const std::string& name) {
  return [name](const DatabaseInstance& db, const ClusterConfig& cfg) { return run_algorithm(name, db, cfg); };
}

inline std::uint64_t blocks(std::uint64_t words, std::uint64_t B) { return (words + B - 1) / B; }

struct PoChoice {
  std::uint64_t p_o = 0;
  int rounds = 0;
  std::uint64_t load = 0;  // max per-round tuple load at p_o
  std::vector<std::pair<std::uint64_t, std::uint64_t>> probes;  // (p, r * L)
};

/// Smallest power of two p with r * L(I, p) <= W, measured by dry runs.
inline PoChoice choose_po(const MpcAlgorithm& alg, const DatabaseInstance& db, const EMConfig& em, std::uint64_t seed = 0) {
  em.validate();
  PoChoice out;
  for (std::uint64_t p = 1;; p *= 2) {
    if (p > em.W) throw std::runtime_error("W too small: p_o > W");
    const AlgorithmResult res = alg(db, ClusterConfig{p, seed, 1, false, true});
    const std::uint64_t need = static_cast<std::uint64_t>(std::max(res.rounds, 1)) * res.load.max.tuples;
    out.probes.emplace_back(p, need);
    if (need <= em.W) {
      out.p_o = p;
      out.rounds = res.rounds;
      out.load = res.load.max.tuples;
      break;
    }
  }
  if (out.p_o * em.B > em.W) throw std::runtime_error("W too small: p_o * B > W (one block per partition bucket)");
  return out;
}

struct EMResult {
  OutputSummary output;
  IOReport io;
  AlgorithmResult mpc;
};

/// Runs the algorithm on p_o servers and charges block I/Os for the three
/// steps per round: partition the (tuple, server) pairs into p_o buckets,
/// load each server's data, and write the pairs routed by the next round.
/// The input is assigned round-robin and re-scanned whenever a round routes
/// base tuples; the last round emits without writing anything back.
inline EMResult simulate_em(const MpcAlgorithm& alg, const DatabaseInstance& db, const EMConfig& em,
                            std::uint64_t seed = 0, bool collect_output = false) {
  const PoChoice choice = choose_po(alg, db, em, seed);
  const std::uint64_t po = choice.p_o, B = em.B;
  EMResult out;
  out.mpc = alg(db, ClusterConfig{po, seed, 1, collect_output, false});
  out.output = out.mpc.output;
  IOReport& io = out.io;
  io.p_o = po;
  io.r = out.mpc.rounds;
  const LoadReport& load = out.mpc.load;
  const std::uint64_t input = db.total_tuples();

  auto pairs_of = [&](int round) -> std::uint64_t {
    return round >= 1 && round <= static_cast<int>(load.traces.size()) ? load.traces[round - 1].deliveries : 0;
  };
  auto scans_input = [&](int round) {
    return round >= 1 && round <= static_cast<int>(load.traces.size()) && load.traces[round - 1].routes_base;
  };

  io.add("init.read_input", blocks(input, B));
  io.add("init.write_pairs", blocks(pairs_of(1), B));
  std::vector<std::uint64_t> resident(po, 0);
  for (int r = 1; r <= io.r; ++r) {
    const auto& per = load.per_round_server[r - 1];
    std::uint64_t bucket_blocks = 0, load_blocks = 0;
    for (std::uint64_t s = 0; s < po; ++s) {
      bucket_blocks += blocks(per[s].tuples, B);
      resident[s] += per[s].tuples;
      io.peak_memory = std::max(io.peak_memory, resident[s]);
      if (resident[s] > em.W) {
        throw std::runtime_error("memory overflow: server " + std::to_string(s) + " holds " + std::to_string(resident[s]) +
                                 " words > W");
      }
      load_blocks += blocks(resident[s], B);
    }
    const std::string tag = "round" + std::to_string(r);
    io.add(tag + ".partition_read", blocks(pairs_of(r), B));
    io.add(tag + ".partition_write", bucket_blocks);
    io.add(tag + ".load", load_blocks);
    if (r < io.r) {
      if (scans_input(r + 1)) io.add(tag + ".rescan_input", blocks(input, B));
      io.add(tag + ".write_pairs", blocks(pairs_of(r + 1), B));
    }
  }
  return out;
}

}  // namespace mpcjoin
