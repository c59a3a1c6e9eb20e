#include "afn/evalsuite.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "afn/math.hpp"

namespace afn {

std::vector<double> Agent::policy(const TreeEnv&, const StateKey&) { return {}; }

Action UniformAgent::act(const TreeEnv& env, const StateKey& s, Rng& rng) {
  const NodeInfo ni = env.info(s);
  if (ni.kind != NodeKind::kPlayer) throw ContractError("uniform agent asked to move at a non-player state");
  return ni.actions[rng.uniform_int(static_cast<int>(ni.actions.size()))];
}

std::vector<double> UniformAgent::policy(const TreeEnv& env, const StateKey& s) {
  const NodeInfo ni = env.info(s);
  return std::vector<double>(ni.actions.size(), 1.0 / static_cast<double>(ni.actions.size()));
}

std::string to_string(PolicySource p) { return p == PolicySource::kLogits ? "logits" : "flows"; }

PolicySource policy_source_from_string(std::string_view s) {
  if (s == "logits") return PolicySource::kLogits;
  if (s == "flows") return PolicySource::kFlows;
  throw InvalidArgument("unknown policy source '" + std::string(s) + "'");
}

std::vector<double> child_log_flows(const TreeEnv& env, PolicyModel& model, const StateKey& s,
                                    int side, double lambda, int player) {
  if (player == 0) player = side;
  const NodeInfo ni = env.info(s);
  if (ni.terminal()) throw ContractError("no children at a terminal state");
  std::vector<double> out;
  out.reserve(ni.actions.size());
  ModelOutput mo;
  NodeInfo ci;
  double log_b = std::numeric_limits<double>::quiet_NaN();
  for (Action a : ni.actions) {
    const StateKey c = s.child(a);
    env.describe(c, ci);
    if (!ci.terminal()) {
      model.forward(c, side, mo);
      out.push_back(mo.log_flow);
      continue;
    }
    if (!ci.log_rewards.empty()) {
      out.push_back(ci.log_rewards.at(player - 1));
      continue;
    }
    if (std::isnan(log_b)) {
      // log B_player(c), identical for every child of s.
      log_b = 0;
      NodeInfo pi;
      StateKey prefix;
      for (auto h : c.history()) {
        env.describe(prefix, pi);
        if (pi.kind == NodeKind::kPlayer && pi.player == player) {
          log_b += std::log(static_cast<double>(pi.actions.size()));
        }
        prefix.push(h);
      }
    }
    out.push_back(raw_outcome_log_reward(ci.outcome, player, lambda) - log_b);
  }
  return out;
}

ModelAgent::ModelAgent(std::string id, std::shared_ptr<PolicyModel> model, double temperature,
                       PolicySource source, double lambda)
    : id_(std::move(id)), model_(std::move(model)), temperature_(temperature), source_(source),
      lambda_(lambda) {
  if (!model_) throw InvalidArgument("model agent needs a model");
  if (!(temperature_ >= 0)) throw InvalidArgument("temperature must be >= 0");
}

std::vector<double> ModelAgent::logits_over_legal(const TreeEnv& env, const StateKey& s,
                                                  std::vector<Action>& legal) {
  const NodeInfo ni = env.info(s);
  if (ni.kind != NodeKind::kPlayer) throw ContractError("model agent asked to move at a non-player state");
  legal = ni.actions;
  if (source_ == PolicySource::kFlows) return child_log_flows(env, *model_, s, ni.player, lambda_);
  ModelOutput mo;
  model_->forward(s, ni.player, mo);
  std::vector<double> out;
  for (Action a : legal) out.push_back(mo.logits[a]);
  return out;
}

Action ModelAgent::act(const TreeEnv& env, const StateKey& s, Rng& rng) {
  std::vector<Action> legal;
  const auto lg = logits_over_legal(env, s, legal);
  if (temperature_ == 0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < lg.size(); ++i) {
      if (lg[i] > lg[best]) best = i;
    }
    return legal[best];
  }
  std::vector<double> w(lg.size());
  const double m = *std::max_element(lg.begin(), lg.end());
  for (std::size_t i = 0; i < lg.size(); ++i) w[i] = std::exp((lg[i] - m) / temperature_);
  return legal[rng.categorical(w)];
}

std::vector<double> ModelAgent::policy(const TreeEnv& env, const StateKey& s) {
  std::vector<Action> legal;
  auto lg = logits_over_legal(env, s, legal);
  const double z = log_sum_exp(lg);
  for (double& v : lg) v = std::exp(v - z);
  return lg;
}

namespace {

const BoardGame& as_board_game(const TreeEnv& env) {
  const auto* g = dynamic_cast<const BoardGame*>(&env);
  if (!g) throw InvalidArgument("agent needs a board game, got " + env.name());
  return *g;
}

}  // namespace

PerfectAgent::PerfectAgent(SolverOptions opts) : solver_(opts) {}

Action PerfectAgent::act(const TreeEnv& env, const StateKey& s, Rng&) {
  const Board b = as_board_game(env).board_at(s);
  if (b.terminal()) throw ContractError("no move at a terminal position");
  int best = std::numeric_limits<int>::min();
  Action best_move = -1;
  for (Action a : b.legal_actions()) {
    Board child = b;
    child.play(a);
    const auto sc = solver_.score(child);
    if (!sc) throw NumericError("solver budget exhausted at " + s.to_string());
    if (-*sc > best) {
      best = -*sc;
      best_move = a;
    }
  }
  return best_move;
}

Action SearchAgent::act(const TreeEnv& env, const StateKey& s, Rng&) {
  return tree_search_agent(as_board_game(env).board_at(s), depth_);
}

// ---------------------------------------------------------------------------

int MatchRecord::points_a() const {
  if (outcome == Outcome::kDraw) return 1;
  const bool first_won = outcome == Outcome::kP1Win;
  return first_won == a_first ? 2 : 0;
}

MatchRecord play_match(const TreeEnv& env, Agent& first, Agent& second, std::uint64_t seed) {
  if (env.num_players() != 2) throw InvalidArgument("matches need a two-player game");
  Rng rng(seed);
  StateKey s;
  NodeInfo ni;
  int plies = 0;
  for (;;) {
    env.describe(s, ni);
    if (ni.terminal()) break;
    Action a;
    if (ni.kind == NodeKind::kEnvironment) {
      a = ni.actions[rng.categorical(ni.env_probs)];
    } else {
      a = (ni.player == 1 ? first : second).act(env, s, rng);
      if (!std::binary_search(ni.actions.begin(), ni.actions.end(), a)) {
        throw ContractError("agent " + (ni.player == 1 ? first : second).id() +
                            " played illegal action " + std::to_string(a));
      }
    }
    s.push(a);
    ++plies;
  }
  MatchRecord r;
  r.agent_a = first.id();
  r.agent_b = second.id();
  r.a_first = true;
  r.outcome = ni.outcome;
  r.plies = plies;
  r.seed = seed;
  if (r.outcome == Outcome::kNone) throw ContractError("game ended without an outcome");
  return r;
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<MatchRecord> run_tournament(const TreeEnv& env,
                                        std::span<const std::shared_ptr<Agent>> agents,
                                        int games_per_pair, std::uint64_t seed) {
  if (agents.size() < 2) throw InvalidArgument("a tournament needs at least two agents");
  if (games_per_pair < 2 || games_per_pair % 2) {
    throw InvalidArgument("games_per_pair must be a positive even number");
  }
  std::vector<MatchRecord> out;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    for (std::size_t j = i + 1; j < agents.size(); ++j) {
      if (agents[i]->id() == agents[j]->id()) {
        throw InvalidArgument("duplicate agent id " + agents[i]->id());
      }
      for (int g = 0; g < games_per_pair; ++g) {
        const std::uint64_t ms = mix(seed ^ mix(i * 1000003ull + j) ^ mix(~std::uint64_t(g)));
        const bool i_first = g % 2 == 0;
        MatchRecord r = i_first ? play_match(env, *agents[i], *agents[j], ms)
                                : play_match(env, *agents[j], *agents[i], ms);
        if (!i_first) {
          std::swap(r.agent_a, r.agent_b);
          r.a_first = false;
        }
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

WinDrawLoss tally(std::span<const MatchRecord> records, const std::string& agent) {
  WinDrawLoss t;
  for (const auto& r : records) {
    int pts;
    if (r.agent_a == agent) pts = r.points_a();
    else if (r.agent_b == agent) pts = 2 - r.points_a();
    else continue;
    ++t.games;
    if (pts == 2) ++t.wins;
    else if (pts == 1) ++t.draws;
    else ++t.losses;
  }
  return t;
}

WinDrawLoss evaluate_vs_uniform(const TreeEnv& env, Agent& agent, int games, std::uint64_t seed) {
  UniformAgent u;
  WinDrawLoss t;
  for (int g = 0; g < games; ++g) {
    const std::uint64_t ms = mix(seed + static_cast<std::uint64_t>(g));
    const bool first = g % 2 == 0;
    const MatchRecord r = first ? play_match(env, agent, u, ms) : play_match(env, u, agent, ms);
    const int pts = first ? r.points_a() : 2 - r.points_a();
    ++t.games;
    if (pts == 2) ++t.wins;
    else if (pts == 1) ++t.draws;
    else ++t.losses;
  }
  return t;
}

void write_matches_csv(std::ostream& os, std::span<const MatchRecord> records) {
  os << "agent_a,agent_b,a_first,outcome,plies,seed\n";
  for (const auto& r : records) {
    os << r.agent_a << ',' << r.agent_b << ',' << (r.a_first ? 1 : 0) << ','
       << to_string(r.outcome) << ',' << r.plies << ',' << r.seed << '\n';
  }
}

std::vector<MatchRecord> read_matches_csv(std::istream& is) {
  std::vector<MatchRecord> out;
  std::string line;
  if (!std::getline(is, line) || line.rfind("agent_a,agent_b,a_first,outcome", 0) != 0) {
    throw InvalidArgument("match CSV header missing");
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw InvalidArgument("match CSV row needs 6 fields: " + line);
    MatchRecord r;
    r.agent_a = f[0];
    r.agent_b = f[1];
    r.a_first = f[2] == "1";
    r.outcome = outcome_from_string(f[3]);
    r.plies = std::stoi(f[4]);
    r.seed = std::stoull(f[5]);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------

double EloTable::of(const std::string& agent) const {
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (agents[i] == agent) return rating[i];
  }
  throw InvalidArgument("agent " + agent + " not rated");
}

namespace {

struct PairCounts {
  int i, j;  // i < j
  double w = 0, d = 0, l = 0;  // from i's view
};

// Negative log-likelihood, gradient and Hessian over (theta, eta); theta of
// the anchor and eta (when draws are absent) are held fixed by the caller.
double davidson_nll(const std::vector<PairCounts>& pairs, const Eigen::VectorXd& theta, double eta,
                    bool with_draws, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
  const int n = static_cast<int>(theta.size());
  const int dim = n + (with_draws ? 1 : 0);
  if (g) g->setZero(dim);
  if (h) h->setZero(dim, dim);
  const double nu = with_draws ? std::exp(eta) : 0.0;
  double nll = 0;
  for (const auto& p : pairs) {
    const double x = theta[p.i] - theta[p.j];
    const double ch = std::cosh(x / 2), sh = std::sinh(x / 2);
    const double dp = 2 * ch + nu;
    const double tot = p.w + p.d + p.l;
    nll -= p.w * x / 2 - p.l * x / 2 + (with_draws ? p.d * eta : 0.0) - tot * std::log(dp);
    if (!g) continue;
    // d nll / dx and d nll / d eta.
    const double gx = -(p.w - p.l) / 2 + tot * sh / dp;
    (*g)[p.i] += gx;
    (*g)[p.j] -= gx;
    const double hxx = tot * (ch / 2 * dp - sh * sh) / (dp * dp);
    (*h)(p.i, p.i) += hxx;
    (*h)(p.j, p.j) += hxx;
    (*h)(p.i, p.j) -= hxx;
    (*h)(p.j, p.i) -= hxx;
    if (with_draws) {
      (*g)[n] += -p.d + tot * nu / dp;
      (*h)(n, n) += tot * (nu * dp - nu * nu) / (dp * dp);
      const double hxe = -tot * sh * nu / (dp * dp);
      (*h)(p.i, n) += hxe;
      (*h)(n, p.i) += hxe;
      (*h)(p.j, n) -= hxe;
      (*h)(n, p.j) -= hxe;
    }
  }
  return nll;
}

}  // namespace

EloTable fit_elo(std::span<const MatchRecord> records, const EloOptions& opts) {
  std::map<std::string, int> index;
  for (const auto& r : records) {
    index.emplace(r.agent_a, 0);
    index.emplace(r.agent_b, 0);
  }
  if (index.size() < 2) throw InvalidArgument("Elo needs games between at least two agents");
  EloTable t;
  for (auto& [name, i] : index) {
    i = static_cast<int>(t.agents.size());
    t.agents.push_back(name);
  }
  const int n = static_cast<int>(t.agents.size());

  std::map<std::pair<int, int>, PairCounts> counts;
  double draws = 0, decisive = 0;
  for (const auto& r : records) {
    int a = index[r.agent_a], b = index[r.agent_b];
    if (a == b) throw InvalidArgument("agent " + r.agent_a + " plays itself");
    int pts = r.points_a();
    if (a > b) {
      std::swap(a, b);
      pts = 2 - pts;
    }
    auto& pc = counts.try_emplace({a, b}, PairCounts{a, b}).first->second;
    if (pts == 2) pc.w += 1;
    else if (pts == 1) pc.d += 1;
    else pc.l += 1;
    (pts == 1 ? draws : decisive) += 1;
  }

  // Connectivity.
  std::vector<int> comp(n);
  std::iota(comp.begin(), comp.end(), 0);
  std::function<int(int)> find = [&](int x) { return comp[x] == x ? x : comp[x] = find(comp[x]); };
  for (const auto& [k, pc] : counts) comp[find(pc.i)] = find(pc.j);
  std::map<int, std::vector<std::string>> groups;
  for (int i = 0; i < n; ++i) groups[find(i)].push_back(t.agents[i]);
  if (groups.size() > 1) {
    std::string msg = "comparison graph is disconnected:";
    for (const auto& [root, names] : groups) {
      msg += " {";
      for (std::size_t k = 0; k < names.size(); ++k) msg += (k ? ", " : "") + names[k];
      msg += "}";
    }
    throw InvalidArgument(msg);
  }

  int anchor = 0;
  if (auto it = index.find(opts.anchor); it != index.end()) anchor = it->second;
  constexpr double kScale = 400.0 / 2.302585092994045684;
  t.rating.assign(n, 0.0);
  t.std_error.assign(n, 0.0);

  if (decisive == 0) {
    t.draw_param = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (i != anchor) t.std_error[i] = std::numeric_limits<double>::infinity();
    }
    return t;
  }

  // A finite maximizer needs every agent to score (win or draw) against the
  // rest of the pool and the rest to score against it: the digraph with an
  // edge i -> j whenever i scored against j must be strongly connected.
  {
    std::vector<std::vector<int>> fwd(n), rev(n);
    for (const auto& [k, pc] : counts) {
      if (pc.w + pc.d > 0) {
        fwd[pc.i].push_back(pc.j);
        rev[pc.j].push_back(pc.i);
      }
      if (pc.l + pc.d > 0) {
        fwd[pc.j].push_back(pc.i);
        rev[pc.i].push_back(pc.j);
      }
    }
    auto reach = [&](const std::vector<std::vector<int>>& adj) {
      std::vector<char> seen(n, 0);
      std::vector<int> stack = {0};
      seen[0] = 1;
      while (!stack.empty()) {
        const int x = stack.back();
        stack.pop_back();
        for (int y : adj[x]) {
          if (!seen[y]) {
            seen[y] = 1;
            stack.push_back(y);
          }
        }
      }
      return seen;
    };
    const auto f = reach(fwd), r = reach(rev);
    for (int i = 0; i < n; ++i) {
      if (!f[i] || !r[i]) {
        throw NumericError("Elo likelihood has no finite maximizer: some agents never score against "
                           "the others (e.g. " + t.agents[i] + ")");
      }
    }
  }

  std::vector<PairCounts> pairs;
  for (const auto& [k, pc] : counts) pairs.push_back(pc);
  const bool with_draws = draws > 0;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
  double eta = with_draws ? std::log(draws / decisive) : 0.0;

  // Free coordinates: every theta except the anchor, then eta.
  std::vector<int> free_idx;
  for (int i = 0; i < n; ++i) {
    if (i != anchor) free_idx.push_back(i);
  }
  const int nf = static_cast<int>(free_idx.size()) + (with_draws ? 1 : 0);
  auto reduce = [&](const Eigen::VectorXd& g, const Eigen::MatrixXd& h, Eigen::VectorXd& gr,
                    Eigen::MatrixXd& hr) {
    std::vector<int> map = free_idx;
    if (with_draws) map.push_back(n);
    gr.resize(nf);
    hr.resize(nf, nf);
    for (int a = 0; a < nf; ++a) {
      gr[a] = g[map[a]];
      for (int b = 0; b < nf; ++b) hr(a, b) = h(map[a], map[b]);
    }
  };

  Eigen::VectorXd g, gr;
  Eigen::MatrixXd h, hr;
  double nll = davidson_nll(pairs, theta, eta, with_draws, &g, &h);
  bool converged = false;
  for (int it = 0; it < opts.max_iterations; ++it) {
    reduce(g, h, gr, hr);
    if (gr.norm() <= opts.tolerance) {
      converged = true;
      t.iterations = it;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hr);
    Eigen::VectorXd step = ldlt.solve(-gr);
    if (ldlt.info() != Eigen::Success || !step.allFinite() || gr.dot(step) >= 0) step = -gr;
    double alpha = 1.0;
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      Eigen::VectorXd th2 = theta;
      for (std::size_t a = 0; a < free_idx.size(); ++a) th2[free_idx[a]] += alpha * step[a];
      const double eta2 = with_draws ? eta + alpha * step[nf - 1] : eta;
      const double nll2 = davidson_nll(pairs, th2, eta2, with_draws, nullptr, nullptr);
      // The slack absorbs roundoff in the summed likelihood near the optimum.
      if (nll2 <= nll + 1e-4 * alpha * gr.dot(step) + 1e-13 * std::abs(nll)) {
        theta = th2;
        eta = eta2;
        break;
      }
    }
    nll = davidson_nll(pairs, theta, eta, with_draws, &g, &h);
    if (theta.cwiseAbs().maxCoeff() > 50 || std::abs(eta) > 50) break;
  }
  if (!converged) {
    throw NumericError("Elo likelihood has no finite maximizer (an agent may never lose or never win)");
  }
  const Eigen::MatrixXd cov = hr.inverse();
  for (int i = 0; i < n; ++i) t.rating[i] = kScale * (theta[i] - theta[anchor]);
  for (std::size_t a = 0; a < free_idx.size(); ++a) {
    t.std_error[free_idx[a]] = kScale * std::sqrt(std::max(cov(a, a), 0.0));
  }
  t.draw_param = with_draws ? std::exp(eta) : 0.0;
  return t;
}

void write_elo_csv(std::ostream& os, const EloTable& t) {
  os << "agent,rating,stderr\n";
  for (std::size_t i = 0; i < t.agents.size(); ++i) {
    os << t.agents[i] << ',' << t.rating[i] << ',' << t.std_error[i] << '\n';
  }
}

// ---------------------------------------------------------------------------

FlowMae flow_mae(const FlowTable& exact, int player, std::span<const NodeId> states,
                 const std::function<double(NodeId)>& learned_log_flow) {
  const GameTree& tree = exact.tree();
  FlowMae r;
  double node_sum = 0, edge_sum = 0;
  std::vector<double> lf;
  for (NodeId n : states) {
    if (n >= tree.size()) throw InvalidArgument("state " + std::to_string(n) + " not in exact table");
    const double learned = learned_log_flow(n);
    node_sum += std::abs(std::exp(learned) - exact.flow(n, player));
    ++r.nodes;
    if (tree.terminal(n) || tree.kind(n) != NodeKind::kPlayer) continue;
    if (tree.num_players() > 1 && tree.player(n) != player) continue;
    const int k = tree.num_children(n);
    lf.resize(k);
    for (int i = 0; i < k; ++i) lf[i] = learned_log_flow(tree.child(n, i));
    const double z = log_sum_exp(lf);
    for (int i = 0; i < k; ++i) {
      const NodeId c = tree.child(n, i);
      edge_sum += std::abs(std::exp(learned + lf[i] - z) - exact.flow(c, player));
      ++r.edges;
    }
  }
  r.node = r.nodes ? node_sum / static_cast<double>(r.nodes) : 0.0;
  r.edge = r.edges ? edge_sum / static_cast<double>(r.edges) : 0.0;
  return r;
}

FlowMae flow_mae(const FlowTable& exact, int player, std::span<const NodeId> states,
                 PolicyModel& model, int side, bool pin_terminals) {
  const GameTree& tree = exact.tree();
  ModelOutput mo;
  return flow_mae(exact, player, states, [&](NodeId n) {
    if (pin_terminals && tree.terminal(n)) return exact.log_flow(n, player);
    model.forward(tree.key(n), side, mo);
    return mo.log_flow;
  });
}

std::vector<NodeId> uniform_rollout_states(const GameTree& tree, int count, Rng& rng) {
  std::vector<NodeId> out;
  std::vector<double> w;
  for (int k = 0; k < count; ++k) {
    NodeId n = tree.root();
    while (!tree.terminal(n)) {
      out.push_back(n);
      const int m = tree.num_children(n);
      int i;
      if (tree.kind(n) == NodeKind::kEnvironment) {
        w.resize(m);
        for (int c = 0; c < m; ++c) w[c] = tree.env_prob(tree.child(n, c));
        i = rng.categorical(w);
      } else {
        i = rng.uniform_int(m);
      }
      n = tree.child(n, i);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}


// ---------------------------------------------------------------------------

QualityReport move_quality(const BoardGame& game, std::span<const std::vector<Action>> corpus,
                           Agent& agent, Solver& solver, std::uint64_t seed) {
  QualityReport r;
  const bool expected = dynamic_cast<UniformAgent*>(&agent) != nullptr;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    ++r.positions;
    Board b(game.spec());
    b.play_all(corpus[i]);
    const StateKey s = StateKey::from_actions(corpus[i]);
    std::vector<Action> moves;
    if (expected) {
      moves = b.legal_actions();
    } else {
      Rng rng(mix(seed + i));
      moves = {agent.act(game, s, rng)};
    }
    double opt = 0, inacc = 0, blund = 0;
    bool solved = true;
    for (Action a : moves) {
      const auto q = classify_move(solver, b, a);
      if (!q) {
        solved = false;
        break;
      }
      (*q == MoveQuality::kOptimal ? opt : *q == MoveQuality::kBlunder ? blund : inacc) += 1;
    }
    if (!solved) {
      ++r.skipped;
      continue;
    }
    const double w = 1.0 / static_cast<double>(moves.size());
    r.optimal += opt * w;
    r.inaccuracy += inacc * w;
    r.blunder += blund * w;
  }
  return r;
}

}  // namespace afn
