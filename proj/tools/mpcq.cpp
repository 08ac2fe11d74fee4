// mpcq: analyze queries, generate instances, run MPC algorithms and the
// external-memory simulation.
//
// Exit codes: 0 success, 1 invariant or bound violation, 2 input error.

#include "mpcjoin/em_sim.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace mpcjoin;

namespace {

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct Violation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
  if (const char* s = std::getenv("MPCJOIN_SEED")) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw InputError("MPCJOIN_SEED is not an unsigned integer");
    }
  }
  return 1;
}

struct Options {
  std::string query, family, gen = "matching", alg = "one-round-skew", in, out, heavy;
  int k = 0;
  std::uint64_t m = 1000, seed = 0, W = 0, B = 0;
  std::vector<std::uint64_t> p{64};
  std::vector<std::uint64_t> Ws;
  unsigned threads = 1;
  bool csv = false, no_check = false;

  std::string flags_line(const std::string& cmd) const {
    std::ostringstream os;
    os << "# mpcq " << cmd;
    if (!query.empty()) os << " --query '" << query << "'";
    if (!family.empty()) os << " --family " << family << " --k " << k;
    if (!in.empty()) {
      os << " --in " << in;
    } else if (cmd != "analyze") {
      os << " --gen " << gen << " --m " << m << " --seed " << seed;
      if (!heavy.empty()) os << " --heavy-var " << heavy;
    }
    if (cmd == "run" || cmd == "sweep" || cmd == "em") os << " --alg " << alg;
    if (cmd != "generate" && cmd != "em" && (cmd != "analyze" || !p.empty())) {
      os << " --p ";
      for (std::size_t i = 0; i < p.size(); ++i) os << (i ? "," : "") << p[i];
    }
    if (W) os << " --W " << W;
    if (!Ws.empty()) {
      os << " --W ";
      for (std::size_t i = 0; i < Ws.size(); ++i) os << (i ? "," : "") << Ws[i];
    }
    if (B) os << " --B " << B;
    if (cmd == "run" || cmd == "sweep") os << " --threads " << threads;
    return os.str();
  }
};

Query resolve_query(const Options& o) {
  if (!o.query.empty() && !o.family.empty()) throw InputError("give either --query or --family/--k");
  if (!o.query.empty()) return parse_query(o.query);
  if (o.family.empty()) throw InputError("a query is required (--query or --family/--k)");
  return canonical_query(parse_family(o.family), o.k);
}

std::optional<VarId> heavy_var(const Query& q, const std::string& name) {
  if (name.empty()) return std::nullopt;
  const auto& vars = q.variables();
  auto it = std::find(vars.begin(), vars.end(), name);
  if (it == vars.end()) throw InputError("--heavy-var: unknown variable " + name);
  return static_cast<VarId>(it - vars.begin());
}

DatabaseInstance resolve_instance(const Options& o) {
  if (!o.in.empty()) {
    if (!std::filesystem::exists(o.in)) throw InputError("--in: no such directory: " + o.in);
    return read_instance(o.in);
  }
  const Query q = resolve_query(o);
  return generate(o.gen, q, o.m, o.seed, heavy_var(q, o.heavy));
}

int cmd_analyze(const Options& o) {
  const Query q = resolve_query(o);
  std::optional<std::uint64_t> p;
  if (!o.p.empty()) p = o.p.front();
  std::optional<std::vector<std::uint64_t>> sizes;
  if (p) sizes = std::vector<std::uint64_t>(q.num_atoms(), o.m);
  auto rep = AnalyzerReport::build(q, o.family, o.k, p, sizes);
  std::cout << o.flags_line("analyze") << "\n";
  if (o.csv) {
    std::cout << AnalyzerReport::csv_header() << "\n" << rep.csv_row() << "\n";
  } else {
    std::cout << rep.to_key_value();
    if (p) {
      auto lb = load_bound_worstcase(q, *sizes, *p);
      std::cout << "load_exponent: " << to_string(lb.exponent) << " (" << to_double(lb.exponent) << ")\n"
                << "load_bound_tuples: " << lb.tuples << "\n"
                << "load_witness_X: " << var_set_string(q, lb.residual) << "\n";
    }
  }
  return 0;
}

int cmd_generate(const Options& o) {
  if (o.out.empty()) throw InputError("generate: --out directory required");
  auto db = resolve_instance(o);
  write_instance(db, o.out);
  std::cout << o.flags_line("generate") << "\n" << manifest_text(db);
  for (const auto& w : db.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

void dump_relation(const std::filesystem::path& path, const Relation& r) {
  std::ofstream f(path);
  f << relation_tsv(r);
}

int cmd_run(const Options& o) {
  auto db = resolve_instance(o);
  if (o.p.size() != 1) throw InputError("run: exactly one --p value expected (use sweep for lists)");
  const bool check = !o.no_check;
  ClusterConfig cfg{o.p.front(), o.seed, o.threads, check || !o.out.empty(), false};
  auto res = run_algorithm(o.alg, db, cfg);
  std::optional<Relation> expected;
  if (check) {
    try {
      expected = oracle_join(db.query, db.tuple_sets());
      res.oracle_match = *res.output.tuples == *expected;
    } catch (const OracleTooLarge&) {
      std::cerr << "note: instance too large for the oracle; skipping the check\n";
    }
  }
  std::cout << o.flags_line("run") << "\n";
  std::cout << AlgorithmResult::csv_header() << "\n" << res.csv_row() << "\n";
  std::cerr << res.plan;
  if (!o.out.empty()) {
    std::filesystem::create_directories(o.out);
    std::ofstream(std::filesystem::path(o.out) / "load.csv") << res.load.csv();
    std::ofstream(std::filesystem::path(o.out) / "plan.txt") << res.plan;
    dump_relation(std::filesystem::path(o.out) / "output.tsv", *res.output.tuples);
  }
  if (res.oracle_match == false) {
    std::cerr << "error: output differs from the oracle\n";
    std::vector<std::vector<Value>> missing, extra;
    const Relation& got = *res.output.tuples;
    std::size_t i = 0, j = 0;
    auto row = [](std::span<const Value> t) { return std::vector<Value>(t.begin(), t.end()); };
    while ((i < expected->size() || j < got.size()) && missing.size() + extra.size() < 10) {
      if (j >= got.size() || (i < expected->size() && row((*expected)[i]) < row(got[j]))) {
        missing.push_back(row((*expected)[i++]));
      } else if (i >= expected->size() || row(got[j]) < row((*expected)[i])) {
        extra.push_back(row(got[j++]));
      } else {
        ++i, ++j;
      }
    }
    auto print = [](const char* what, const std::vector<std::vector<Value>>& v) {
      for (const auto& t : v) {
        std::cerr << "  " << what;
        for (Value x : t) std::cerr << " " << x;
        std::cerr << "\n";
      }
    };
    print("missing", missing);
    print("extra", extra);
    return 1;
  }
  return 0;
}

int cmd_sweep(const Options& o) {
  auto db = resolve_instance(o);
  std::cout << o.flags_line("sweep") << "\n";
  if (!o.Ws.empty()) {
    if (!o.B) throw InputError("sweep over W needs --B");
    std::cout << "W,B,algorithm,p_o,rounds,io_blocks,bound,ratio\n";
    const double input = static_cast<double>(db.total_tuples());
    for (auto W : o.Ws) {
      auto res = simulate_em(named_algorithm(o.alg), db, EMConfig{W, o.B}, o.seed);
      const double bound = input / o.B + res.io.r * static_cast<double>(res.io.p_o) * W / o.B;
      std::cout << W << "," << o.B << "," << o.alg << "," << res.io.p_o << "," << res.io.r << "," << res.io.io_blocks << ","
                << bound << "," << res.io.io_blocks / bound << "\n";
    }
    return 0;
  }
  if (o.p.empty()) throw InputError("sweep: empty --p list");
  std::cout << "p,algorithm,rounds,max_load_tuples,max_load_bits,bound,ratio\n";
  for (auto p : o.p) {
    auto res = run_algorithm(o.alg, db, ClusterConfig{p, o.seed, o.threads, false, false});
    const auto lb = load_bound_worstcase(db.query, db.tuple_counts(), p);
    std::cout << p << "," << o.alg << "," << res.rounds << "," << res.load.max.tuples << "," << res.load.max.bits << ","
              << lb.tuples << "," << static_cast<double>(res.load.max.tuples) / lb.tuples << "\n";
  }
  return 0;
}

int cmd_em(const Options& o) {
  if (!o.W || !o.B) throw InputError("em: --W and --B are required");
  auto db = resolve_instance(o);
  EMResult res;
  try {
    res = simulate_em(named_algorithm(o.alg), db, EMConfig{o.W, o.B}, o.seed);
  } catch (const std::runtime_error& e) {
    if (std::string(e.what()).rfind("W too small", 0) == 0) throw InputError(e.what());
    throw;
  }
  std::cout << o.flags_line("em") << "\n";
  std::cout << "# p_o=" << res.io.p_o << " rounds=" << res.io.r << " peak_memory=" << res.io.peak_memory
            << " output=" << res.output.distinct << "\n";
  std::cout << res.io.csv();
  return 0;
}

std::vector<std::uint64_t> parse_list(const std::string& s, const char* flag) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || v < 1 || v != std::floor(v)) throw std::invalid_argument(item);
      out.push_back(static_cast<std::uint64_t>(v));
    } catch (const std::exception&) {
      throw InputError(std::string(flag) + ": not a positive integer: " + item);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mpcq: worst-case optimal join processing in the MPC model"};
  app.require_subcommand(1);
  Options o;
  std::string p_list = "64", W_list;
  bool seed_given = false;

  auto add_query = [&](CLI::App* c) {
    c->add_option("--query", o.query, "query text, e.g. 'Q(x,y,z) :- R(x,y), S(y,z)'");
    c->add_option("--family", o.family, "query family: T SP K W L Lstar Ldagger C LW");
    c->add_option("--k", o.k, "family parameter");
  };
  auto add_data = [&](CLI::App* c) {
    c->add_option("--gen", o.gen, "generator: " + [] {
      std::string s;
      for (const auto& g : generator_names()) s += (s.empty() ? "" : ", ") + g;
      return s;
    }());
    c->add_option("--m", o.m, "tuples per relation");
    c->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { o.seed = s; seed_given = true; },
                                          "seed (default: $MPCJOIN_SEED or 1)");
    c->add_option("--heavy-var", o.heavy, "heavy variable for single-heavy / lowerbound-matching");
    c->add_option("--in", o.in, "read an instance directory instead of generating");
  };

  auto* analyze = app.add_subcommand("analyze", "tau*, rho*, psi*, witnesses and shares");
  add_query(analyze);
  analyze->add_option("--p", p_list, "servers (enables the share LP)");
  analyze->add_option("--m", o.m, "relation size for the share LP");
  analyze->add_flag("--csv", o.csv, "one CSV row instead of key: value lines");

  auto* gen = app.add_subcommand("generate", "write an instance as TSV files plus manifest");
  add_query(gen);
  add_data(gen);
  gen->add_option("--out", o.out, "output directory")->required();

  auto* run = app.add_subcommand("run", "run an MPC algorithm");
  add_query(run);
  add_data(run);
  run->add_option("--alg", o.alg, "algorithm");
  run->add_option("--p", p_list, "servers");
  run->add_option("--threads", o.threads, "worker threads");
  run->add_option("--out", o.out, "directory for output.tsv, load.csv and plan.txt");
  run->add_flag("--no-check", o.no_check, "skip the oracle comparison");

  auto* sweep = app.add_subcommand("sweep", "long-form CSV over a list of p (or of W with --B)");
  add_query(sweep);
  add_data(sweep);
  sweep->add_option("--alg", o.alg, "algorithm");
  sweep->add_option("--p", p_list, "comma-separated server counts");
  sweep->add_option("--W", W_list, "comma-separated memory sizes (external-memory sweep)");
  sweep->add_option("--B", o.B, "block size");
  sweep->add_option("--threads", o.threads, "worker threads");

  auto* em = app.add_subcommand("em", "external-memory simulation with block I/O counts");
  add_query(em);
  add_data(em);
  em->add_option("--alg", o.alg, "algorithm");
  em->add_option("--W", o.W, "internal memory in words");
  em->add_option("--B", o.B, "block size in words");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (!seed_given) o.seed = default_seed();
    bool p_given = false;
    for (auto* c : {analyze, run, sweep}) p_given |= c->count("--p") > 0;
    o.p = (analyze->parsed() && !p_given) ? std::vector<std::uint64_t>{} : parse_list(p_list, "--p");
    if (!W_list.empty()) o.Ws = parse_list(W_list, "--W");
    if (sweep->parsed() && sweep->count("--W") && o.Ws.empty()) throw InputError("sweep: empty --W list");
    if (analyze->parsed()) return cmd_analyze(o);
    if (gen->parsed()) return cmd_generate(o);
    if (run->parsed()) return cmd_run(o);
    if (sweep->parsed()) return cmd_sweep(o);
    if (em->parsed()) return cmd_em(o);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const QueryError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "violation: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
