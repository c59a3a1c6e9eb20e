#include "config.hpp"

#include <filesystem>
#include <sstream>

#include "afn/model.hpp"

namespace afn::cli {

using nlohmann::json;

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s = {"train", "exact", "verify", "solve",
                                             "tournament", "quality", "serve"};
  return s;
}

json default_config(const std::string& sub) {
  json c;
  c["version"] = kConfigVersion;
  c["env"] = {{"game", "tictactoe"},
              {"rows", 3},
              {"cols", 3},
              {"win_length", 3},
              {"gravity", false},
              {"length", 4},
              {"alphabet", 4},
              {"corruption", 0.0},
              {"beta", 1.0},
              {"pwm_seed", 0}};
  c["output"] = {{"dir", "runs/" + sub}};
  if (sub == "train") {
    c["train"] = TrainConfig{}.to_json();
    c["resume"] = false;
  } else if (sub == "exact") {
    c["exact"] = {{"lambda", 10.0}, {"branch_adjusted", true}, {"max_nodes", 50'000'000}};
  } else if (sub == "verify") {
    c["verify"] = {{"lambda", 10.0},
                   {"tb_trajectories", 1000},
                   {"expectation_states", 200},
                   {"max_strategies", 10000},
                   {"seed", 0},
                   {"tolerance", 1e-10},
                   {"max_nodes", 50'000'000}};
  } else if (sub == "solve") {
    c["solve"] = {{"position", ""}, {"node_budget", 200'000'000}};
  } else if (sub == "tournament") {
    c["tournament"] = {{"agents", "uniform,perfect"},
                       {"games_per_pair", 100},
                       {"seed", 0},
                       {"anchor", "uniform"},
                       {"node_budget", 200'000'000}};
  } else if (sub == "quality") {
    c["quality"] = {{"agent", "uniform"},
                    {"positions", 10240},
                    {"seed", 7},
                    {"min_plies", 2},
                    {"max_plies", 10},
                    {"node_budget", 200'000'000}};
  } else if (sub == "serve") {
    c["serve"] = {{"host", "127.0.0.1"}, {"port", 8080}, {"checkpoints", "checkpoints"},
                  {"static_dir", ""}, {"node_budget", 200'000'000}};
  } else {
    throw InvalidArgument("unknown subcommand '" + sub + "'");
  }
  return c;
}

namespace {

bool same_kind(const json& a, const json& b) {
  if (a.is_number_float()) return b.is_number();
  if (a.is_number_integer()) return b.is_number_integer();
  if (a.is_boolean()) return b.is_boolean();
  if (a.is_string()) return b.is_string();
  if (a.is_object()) return b.is_object();
  return a.type() == b.type();
}

}  // namespace

void merge_strict(json& base, const json& overrides, const std::string& path) {
  if (!overrides.is_object()) {
    throw InvalidArgument("config " + (path.empty() ? std::string("root") : path) + " must be an object");
  }
  for (const auto& [k, v] : overrides.items()) {
    const std::string p = path.empty() ? k : path + "." + k;
    if (!base.contains(k)) throw InvalidArgument("unknown config key '" + p + "'");
    json& dst = base[k];
    if (!same_kind(dst, v)) throw InvalidArgument("config key '" + p + "' has the wrong type");
    if (dst.is_object()) {
      merge_strict(dst, v, p);
    } else if (dst.is_number_float()) {
      dst = v.get<double>();
    } else {
      dst = v;
    }
  }
  if (path.empty() && base.at("version").get<int>() != kConfigVersion) {
    throw InvalidArgument("config version " + base.at("version").dump() + " is not supported");
  }
}

std::vector<std::string> leaf_paths(const json& config) {
  std::vector<std::string> out;
  std::function<void(const json&, const std::string&)> walk = [&](const json& j, const std::string& p) {
    for (const auto& [k, v] : j.items()) {
      const std::string q = p.empty() ? k : p + "." + k;
      if (v.is_object()) walk(v, q);
      else out.push_back(q);
    }
  };
  walk(config, "");
  return out;
}

void set_leaf(json& config, const std::string& path, const std::string& text) {
  json* node = &config;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) {
      throw InvalidArgument("unknown config key '" + path + "'");
    }
    node = &(*node)[part];
  }
  try {
    if (node->is_boolean()) {
      if (text == "true" || text == "1") *node = true;
      else if (text == "false" || text == "0") *node = false;
      else throw InvalidArgument("");
    } else if (node->is_number_integer()) {
      std::size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used != text.size()) throw InvalidArgument("");
      *node = v;
    } else if (node->is_number_float()) {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw InvalidArgument("");
      *node = v;
    } else {
      *node = text;
    }
  } catch (const std::exception&) {
    throw InvalidArgument("config key '" + path + "' cannot take the value '" + text + "'");
  }
}

BoardGameSpec board_spec(const json& e) {
  const std::string game = e.at("game").get<std::string>();
  BoardGameSpec s;
  if (game == "tictactoe") {
    s = BoardGameSpec::tictactoe();
  } else if (game == "connect4") {
    s = BoardGameSpec::connect4();
  } else if (game == "board") {
    s.rows = e.at("rows").get<int>();
    s.cols = e.at("cols").get<int>();
    s.win_length = e.at("win_length").get<int>();
    s.gravity = e.at("gravity").get<bool>();
  } else {
    throw InvalidArgument("env.game '" + game + "' is not a board game");
  }
  s.validate();
  return s;
}

std::shared_ptr<const TreeEnv> make_env(const json& e) {
  const std::string game = e.at("game").get<std::string>();
  if (game == "tictactoe" || game == "connect4" || game == "board") {
    return make_board_game(board_spec(e));
  }
  if (game == "sequence") {
    return make_sequence_env(SequenceEnvSpec::with_random_pwm(
        e.at("length").get<int>(), e.at("alphabet").get<int>(), e.at("corruption").get<double>(),
        e.at("beta").get<double>(), e.at("pwm_seed").get<std::uint64_t>()));
  }
  if (game == "two_chance") return make_two_chance_tree();
  throw InvalidArgument("unknown env.game '" + game +
                        "' (tictactoe, connect4, board, sequence, two_chance)");
}

std::shared_ptr<Agent> make_agent(const std::string& spec, std::shared_ptr<const TreeEnv> env,
                                  std::uint64_t solver_budget) {
  if (spec == "uniform") return std::make_shared<UniformAgent>();
  if (spec == "perfect") {
    SolverOptions o;
    o.node_budget = solver_budget;
    return std::make_shared<PerfectAgent>(o);
  }
  if (spec.rfind("search:", 0) == 0) {
    int depth = 0;
    try {
      depth = std::stoi(spec.substr(7));
    } catch (const std::exception&) {
      throw InvalidArgument("bad search depth in agent '" + spec + "'");
    }
    return std::make_shared<SearchAgent>(depth);
  }
  if (spec.rfind("model:", 0) == 0) {
    const std::string path = spec.substr(6);
    Checkpoint ck = load_checkpoint(path, env);
    const PolicySource src = policy_source_from_string(ck.extra.value("policy_source", "logits"));
    const double lambda = ck.extra.value("lambda", 1.0);
    return std::make_shared<ModelAgent>(std::filesystem::path(path).stem().string(),
                                        std::shared_ptr<PolicyModel>(std::move(ck.model)), 0.0,
                                        src, lambda);
  }
  throw InvalidArgument("unknown agent '" + spec + "' (uniform, perfect, search:<depth>, model:<path>)");
}

}  // namespace afn::cli
