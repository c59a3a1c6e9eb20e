// afn: command-line entry point. Every subcommand reads a run config (see
// config.hpp), writes its resolved config and artifacts under output.dir,
// and prints a JSON summary. Failures print {"error", "message"} to stderr.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "afn/evalsuite.hpp"
#include "afn/exact_flows.hpp"
#include "afn/games.hpp"
#include "afn/selfplay.hpp"
#include "afn/solver.hpp"
#include "config.hpp"
#include "serve.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace afn;
using namespace afn::cli;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCheckFailed = 3;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path prepare_output(const json& cfg) {
  const fs::path dir = cfg.at("output").at("dir").get<std::string>();
  fs::create_directories(dir);
  std::ofstream os(dir / "config.resolved.json");
  os << cfg.dump(2) << '\n';
  return dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw InvalidArgument("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

int run_train(const json& cfg) {
  auto env = make_env(cfg.at("env"));
  const TrainConfig tc = TrainConfig::from_json(cfg.at("train"));
  const fs::path dir = prepare_output(cfg);
  TrainIo io;
  io.metrics_path = (dir / "metrics.jsonl").string();
  io.checkpoint_path = (dir / "checkpoint.json").string();
  io.bad_batch_path = (dir / "bad_batch.jsonl").string();
  io.resume = cfg.at("resume").get<bool>();
  io.on_epoch = [](const json& rec) { std::cerr << rec.dump() << '\n'; };
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(env, tc, io);
  json summary = {{"steps", r.steps}, {"seconds", seconds_since(t0)},
                  {"checkpoint", io.checkpoint_path}, {"metrics", io.metrics_path}};
  for (auto it = r.metrics.rbegin(); it != r.metrics.rend(); ++it) {
    if (it->at("type") == "epoch") {
      summary["last_epoch"] = *it;
      break;
    }
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

struct Solved {
  std::shared_ptr<const GameTree> tree;
  RewardTable rewards;
  FlowTable table;
  std::string mode;
};

Solved solve_exact(const TreeEnv& env, double lambda, bool branch_adjusted, std::size_t max_nodes) {
  auto tree = GameTree::build(env, max_nodes);
  if (env.num_players() == 2) {
    auto rw = outcome_rewards(*tree, lambda, branch_adjusted);
    auto t = solve_afn(tree, rw, {});
    return {tree, std::move(rw), std::move(t), "afn"};
  }
  auto rw = env_rewards(*tree);
  if (tree->has_env_states()) {
    auto t = solve_eflow(tree, rw, {});
    return {tree, std::move(rw), std::move(t), "eflow"};
  }
  auto t = solve_gfn(tree, rw, {});
  return {tree, std::move(rw), std::move(t), "gfn"};
}

int run_exact(const json& cfg) {
  auto env = make_env(cfg.at("env"));
  const json& ec = cfg.at("exact");
  const fs::path dir = prepare_output(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const Solved s = solve_exact(*env, ec.at("lambda"), ec.at("branch_adjusted"), ec.at("max_nodes"));
  std::ofstream os(dir / "flows.jsonl");
  s.table.export_jsonl(os);
  json root = json::array();
  for (int i = 1; i <= s.table.num_players(); ++i) root.push_back(s.table.log_flow(s.tree->root(), i));
  json summary = {{"env", env->name()}, {"mode", s.mode}, {"nodes", s.tree->size()},
                  {"root_log_flow", root}, {"flows", (dir / "flows.jsonl").string()},
                  {"seconds", seconds_since(t0)}};
  write_json(dir / "summary.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

int run_verify(const json& cfg) {
  auto env = make_env(cfg.at("env"));
  const json& vc = cfg.at("verify");
  const fs::path dir = prepare_output(cfg);
  const double tol = vc.at("tolerance");
  const double lambda = vc.at("lambda");
  Rng rng(vc.at("seed").get<std::uint64_t>());
  const auto t0 = std::chrono::steady_clock::now();
  const Solved s = solve_exact(*env, lambda, true, vc.at("max_nodes"));
  json checks = json::array();
  bool ok = true;
  auto check = [&](const std::string& name, double value, double tolerance) {
    const bool pass = value <= tolerance;
    ok = ok && pass;
    checks.push_back({{"name", name}, {"value", value}, {"tolerance", tolerance}, {"pass", pass}});
  };
  const EdbResidual edb = edb_residual(s.table, s.rewards);
  check("edb_residual", edb.max(), tol);
  if (env->num_players() == 2) {
    check("product_flow", check_product_flow(s.table, s.rewards), tol);
    check("branch_identity", check_branch_identity(s.table), tol);
    if (s.tree->alternating_two_player()) {
      const auto tb = tb_constant_check(*s.tree, exact_policy(s.table), lambda,
                                        vc.at("tb_trajectories"), rng,
                                        s.table.log_flow(s.tree->root(), 1));
      check("tb_constant", tb.max_deviation, 1e-8);
    }
    const auto states = sample_nodes(*s.tree, 2, vc.at("expectation_states").get<std::size_t>(), rng);
    check("flow_as_expectation", check_flow_as_expectation(s.table, lambda, states), tol);
  } else if (s.tree->has_env_states()) {
    try {
      check("strategy_marginalization",
            check_strategy_marginalization(s.tree, s.rewards, vc.at("max_strategies").get<std::size_t>()), tol);
    } catch (const SizeGuardError& e) {
      checks.push_back({{"name", "strategy_marginalization"}, {"skipped", e.what()}});
    }
  }
  json report = {{"env", env->name()}, {"mode", s.mode}, {"nodes", s.tree->size()},
                 {"lambda", lambda}, {"checks", checks}, {"pass", ok},
                 {"seconds", seconds_since(t0)}};
  write_json(dir / "verify.json", report);
  std::cout << report.dump() << '\n';
  return ok ? 0 : kExitCheckFailed;
}

json result_json(const SolveResult& r) {
  if (!r.solved) return {{"solved", false}};
  return {{"solved", true},
          {"value", r.sign > 0 ? "win" : r.sign < 0 ? "loss" : "draw"},
          {"distance", r.distance}};
}

int run_solve(const json& cfg) {
  const BoardGameSpec spec = board_spec(cfg.at("env"));
  const json& sc = cfg.at("solve");
  const fs::path dir = prepare_output(cfg);
  Board b(spec);
  b.play_all(parse_moves(sc.at("position").get<std::string>()));
  SolverOptions o;
  o.node_budget = sc.at("node_budget");
  Solver solver(o);
  const auto t0 = std::chrono::steady_clock::now();
  const SolveResult r = solver.solve(b);
  json moves = json::object();
  if (!b.terminal()) {
    const auto mv = solver.move_values(b);
    for (Action a : b.legal_actions()) {
      moves[std::to_string(a)] = mv[a] ? result_json(*mv[a]) : json{{"solved", false}};
    }
  }
  json out = {{"env", spec.name()}, {"position", sc.at("position")}, {"to_move", b.to_move()},
              {"result", result_json(r)}, {"moves", moves}, {"nodes", solver.total_nodes()},
              {"seconds", seconds_since(t0)}};
  write_json(dir / "solve.json", out);
  std::cout << out.dump() << '\n';
  return r.solved ? 0 : kExitFailure;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

int run_tournament(const json& cfg) {
  auto env = make_env(cfg.at("env"));
  const json& tc = cfg.at("tournament");
  const fs::path dir = prepare_output(cfg);
  std::vector<std::shared_ptr<Agent>> agents;
  for (const auto& a : split(tc.at("agents"), ',')) agents.push_back(make_agent(a, env, tc.at("node_budget")));
  const auto records = afn::run_tournament(*env, agents, tc.at("games_per_pair"), tc.at("seed"));
  {
    std::ofstream os(dir / "matches.csv");
    write_matches_csv(os, records);
  }
  EloOptions eo;
  eo.anchor = tc.at("anchor");
  const EloTable elo = fit_elo(records, eo);
  {
    std::ofstream os(dir / "elo.csv");
    write_elo_csv(os, elo);
  }
  json ratings = json::object();
  for (std::size_t i = 0; i < elo.agents.size(); ++i) {
    ratings[elo.agents[i]] = {{"rating", elo.rating[i]}, {"stderr", elo.std_error[i]}};
  }
  json out = {{"games", records.size()}, {"elo", ratings}, {"draw_param", elo.draw_param},
              {"matches", (dir / "matches.csv").string()}, {"elo_csv", (dir / "elo.csv").string()}};
  std::cout << out.dump() << '\n';
  return 0;
}

int run_quality(const json& cfg) {
  auto env = make_env(cfg.at("env"));
  const auto* game = dynamic_cast<const BoardGame*>(env.get());
  if (!game) throw InvalidArgument("quality needs a board game");
  const json& qc = cfg.at("quality");
  const fs::path dir = prepare_output(cfg);
  const auto corpus = random_position_corpus(game->spec(), qc.at("positions"), qc.at("seed"),
                                             qc.at("min_plies"), qc.at("max_plies"));
  auto agent = make_agent(qc.at("agent"), env, qc.at("node_budget"));
  SolverOptions o;
  o.node_budget = qc.at("node_budget");
  Solver solver(o);
  const auto t0 = std::chrono::steady_clock::now();
  const QualityReport r = move_quality(*game, corpus, *agent, solver, qc.at("seed"));
  json out = {{"env", game->name()},         {"agent", agent->id()},
              {"positions", r.positions},    {"skipped", r.skipped},
              {"optimal", r.optimal_rate()}, {"inaccuracy", r.inaccuracy_rate()},
              {"blunder", r.blunder_rate()}, {"seconds", seconds_since(t0)}};
  write_json(dir / "quality.json", out);
  std::cout << out.dump() << '\n';
  return 0;
}

int run_serve(const json& cfg) {
  prepare_output(cfg);
  run_server(cfg.at("serve"));
  return 0;
}

int dispatch(const std::string& sub, const json& cfg) {
  if (sub == "train") return run_train(cfg);
  if (sub == "exact") return run_exact(cfg);
  if (sub == "verify") return run_verify(cfg);
  if (sub == "solve") return run_solve(cfg);
  if (sub == "tournament") return run_tournament(cfg);
  if (sub == "quality") return run_quality(cfg);
  return run_serve(cfg);
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

const char* describe(const std::string& sub) {
  static const std::map<std::string, const char*> d = {
      {"train", "train a model by self-play; writes checkpoint.json and metrics.jsonl"},
      {"exact", "solve the exact flow tables; writes flows.jsonl and summary.json"},
      {"verify", "check the exact flows against their defining identities; exit 3 on a failed check"},
      {"solve", "perfect-play value of a board position and of each legal move"},
      {"tournament", "round-robin matches and Elo ratings; writes matches.csv and elo.csv"},
      {"quality", "optimal / inaccuracy / blunder rates on a random position corpus"},
      {"serve", "HTTP play service"}};
  return d.at(sub);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial flow networks: exact flows, training, solving and evaluation"};
  app.require_subcommand(1);
  struct Sub {
    CLI::App* app;
    std::string config_path;
    std::map<std::string, std::string> flags;
    bool print_config = false;
  };
  std::map<std::string, Sub> subs;
  for (const auto& name : subcommands()) {
    Sub& s = subs[name];
    s.app = app.add_subcommand(name, describe(name));
    s.app->add_option("-c,--config", s.config_path, "JSON run config");
    s.app->add_flag("--print-config", s.print_config, "print the resolved config and exit");
    const json defaults = default_config(name);
    for (const auto& path : leaf_paths(defaults)) {
      if (path == "version") continue;
      json leaf = defaults;
      std::string part;
      std::stringstream ss(path);
      while (std::getline(ss, part, '.')) leaf = leaf[part];
      s.app->add_option("--" + path, s.flags[path], "default " + leaf.dump());
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("config", e.what());
    return kExitConfig;
  }
  for (auto& [name, s] : subs) {
    if (!s.app->parsed()) continue;
    json cfg;
    try {
      cfg = default_config(name);
      if (!s.config_path.empty()) {
        std::ifstream is(s.config_path);
        if (!is) throw InvalidArgument("cannot open config " + s.config_path);
        json file;
        try {
          file = json::parse(is);
        } catch (const json::exception& e) {
          throw InvalidArgument("config " + s.config_path + " is not JSON: " + e.what());
        }
        merge_strict(cfg, file);
      }
      for (const auto& [path, text] : s.flags) {
        if (s.app->count("--" + path)) set_leaf(cfg, path, text);
      }
      if (s.print_config) {
        std::cout << cfg.dump(2) << '\n';
        return 0;
      }
    } catch (const Error& e) {
      print_error("config", e.what());
      return kExitConfig;
    }
    try {
      return dispatch(name, cfg);
    } catch (const InvalidArgument& e) {
      print_error("invalid_argument", e.what());
      return kExitConfig;
    } catch (const NumericError& e) {
      print_error("numeric", e.what());
      return kExitFailure;
    } catch (const std::exception& e) {
      print_error("failure", e.what());
      return kExitFailure;
    }
  }
  return kExitFailure;
}
