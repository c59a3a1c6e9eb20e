#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "afn/exact_flows.hpp"
#include "afn/evalsuite.hpp"
#include "afn/selfplay.hpp"
#include "afn/solver.hpp"
#include "config.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace afn;

namespace {

// Environment section with the run-config defaults filled in.
json env_section(const std::string& text) {
  json e = cli::default_config("exact")["env"];
  cli::merge_strict(e, json::parse(text), "env");
  return e;
}

std::string exact_flows(const std::string& env_text, double lambda, bool branch_adjusted) {
  const auto env = cli::make_env(env_section(env_text));
  const auto tree = GameTree::build(*env);
  json out = {{"env", env->name()}, {"nodes", tree->size()}};
  RewardTable rw = env->num_players() == 2 ? outcome_rewards(*tree, lambda, branch_adjusted)
                                           : env_rewards(*tree);
  FlowTable f = env->num_players() == 2   ? solve_afn(tree, rw)
                : tree->has_env_states() ? solve_eflow(tree, rw)
                                         : solve_gfn(tree, rw);
  json root = json::array();
  for (int i = 1; i <= f.num_players(); ++i) root.push_back(f.log_flow(tree->root(), i));
  out["root_log_flow"] = root;
  out["edb_residual"] = edb_residual(f, rw).max();
  if (env->num_players() == 2) {
    out["product_flow"] = check_product_flow(f, rw);
    out["branch_identity"] = check_branch_identity(f);
  }
  return out.dump();
}

std::string solve_position(const std::string& env_text, const std::vector<int>& moves) {
  const BoardGameSpec spec = cli::board_spec(env_section(env_text));
  Board b(spec);
  for (int a : moves) {
    if (b.terminal() || a < 0 || a >= spec.action_space_size() || !b.can_play(a)) {
      throw InvalidArgument("illegal move " + std::to_string(a));
    }
    b.play(a);
  }
  Solver solver;
  const SolveResult r = solver.solve(b);
  return json{{"solved", r.solved}, {"sign", r.sign}, {"distance", r.distance}, {"nodes", r.nodes}}.dump();
}

std::string train_model(const std::string& env_text, const std::string& train_text) {
  const auto env = cli::make_env(env_section(env_text));
  const TrainConfig cfg = TrainConfig::from_json(json::parse(train_text));
  TrainResult r;
  {
    py::gil_scoped_release release;
    r = train(env, cfg);
  }
  return json{{"steps", r.steps}, {"metrics", r.metrics}, {"log_z", r.model->log_z().value[0]}}.dump();
}

std::string move_quality_report(const std::string& env_text, const std::string& agent, int positions,
                                 std::uint64_t seed) {
  const BoardGameSpec spec = cli::board_spec(env_section(env_text));
  const auto game = make_board_game(spec);
  const auto corpus = random_position_corpus(spec, positions, seed);
  auto a = cli::make_agent(agent, game);
  Solver solver;
  const QualityReport q = move_quality(*game, corpus, *a, solver, seed);
  return json{{"positions", q.positions},
              {"skipped", q.skipped},
              {"optimal", q.optimal_rate()},
              {"inaccuracy", q.inaccuracy_rate()},
              {"blunder", q.blunder_rate()}}
      .dump();
}

// Records are (agent_a, agent_b, a_first, result for the first mover: 1, 0 or -1).
std::string elo(const std::vector<std::tuple<std::string, std::string, bool, int>>& records,
                const std::string& anchor) {
  std::vector<MatchRecord> rs;
  for (const auto& [a, b, a_first, result] : records) {
    MatchRecord m;
    m.agent_a = a;
    m.agent_b = b;
    m.a_first = a_first;
    m.outcome = result > 0 ? Outcome::kP1Win : result < 0 ? Outcome::kP2Win : Outcome::kDraw;
    rs.push_back(m);
  }
  const EloTable t = fit_elo(rs, EloOptions{.anchor = anchor});
  json ratings = json::object();
  for (std::size_t i = 0; i < t.agents.size(); ++i) ratings[t.agents[i]] = t.rating[i];
  const double nu = t.draw_param;
  return json{{"ratings", ratings}, {"draw_param", std::isfinite(nu) ? json(nu) : json("inf")}}.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Exact flows, training, solving and rating for adversarial flow networks";
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<SizeGuardError>(m, "SizeGuardError", PyExc_MemoryError);
  m.def("exact_flows", &exact_flows, py::arg("env"), py::arg("lam"), py::arg("branch_adjusted") = true);
  m.def("solve_position", &solve_position, py::arg("env"), py::arg("moves"));
  m.def("train", &train_model, py::arg("env"), py::arg("config"));
  m.def("move_quality", &move_quality_report, py::arg("env"), py::arg("agent"), py::arg("positions"),
        py::arg("seed"));
  m.def("fit_elo", &elo, py::arg("records"), py::arg("anchor"));
}
