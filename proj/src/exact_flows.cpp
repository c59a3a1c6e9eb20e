#include "afn/exact_flows.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "afn/math.hpp"
#include "json.hpp"

namespace afn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_finite_rewards(const GameTree& tree, const RewardTable& rewards, int players) {
  if (rewards.num_players() < players) {
    throw InvalidArgument("reward table has fewer columns than players");
  }
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (!tree.terminal(n)) continue;
    for (int i = 1; i <= players; ++i) {
      if (!std::isfinite(rewards.log_reward(n, i))) {
        throw InvalidArgument("nonpositive or missing reward at terminal [" +
                              tree.key(n).to_string() + "]");
      }
    }
  }
}

// Log-sum-exp of f(c) over the children of n, in forward or reverse order.
template <class F>
double lse_children(const GameTree& tree, NodeId n, bool reverse, F&& f) {
  const int k = tree.num_children(n);
  const NodeId c0 = tree.first_child(n);
  double m = kNegInf;
  for (int t = 0; t < k; ++t) m = std::max(m, f(c0 + t));
  if (m == kNegInf) return kNegInf;
  double s = 0;
  if (reverse) {
    for (int t = k - 1; t >= 0; --t) s += std::exp(f(c0 + t) - m);
  } else {
    for (int t = 0; t < k; ++t) s += std::exp(f(c0 + t) - m);
  }
  return m + std::log(s);
}

// Shared backward sweep. `single_agent` treats every player state as an
// agent state of player 1.
FlowTable sweep(std::shared_ptr<const GameTree> tree_ptr, const RewardTable& rewards,
                int players, bool single_agent, const SolveOptions& opts) {
  const GameTree& tree = *tree_ptr;
  require_finite_rewards(tree, rewards, players);
  FlowTable table(tree_ptr, players);
  const bool rev = opts.reverse_child_order;
  for (NodeId n = static_cast<NodeId>(tree.size()); n-- > 0;) {
    switch (tree.kind(n)) {
      case NodeKind::kTerminal:
        for (int i = 1; i <= players; ++i) table.set_log_flow(n, i, rewards.log_reward(n, i));
        break;
      case NodeKind::kEnvironment:
        for (int i = 1; i <= players; ++i) {
          table.set_log_flow(n, i, lse_children(tree, n, rev, [&](NodeId c) {
                               return std::log(tree.env_prob(c)) + table.log_flow(c, i);
                             }));
        }
        break;
      case NodeKind::kPlayer: {
        const int j = single_agent ? 1 : tree.player(n);
        const double own = lse_children(tree, n, rev, [&](NodeId c) { return table.log_flow(c, j); });
        for (int i = 1; i <= players; ++i) {
          if (i == j) {
            table.set_log_flow(n, i, own);
          } else {
            const double w = lse_children(tree, n, rev, [&](NodeId c) {
              return table.log_flow(c, i) + table.log_flow(c, j);
            });
            table.set_log_flow(n, i, w - own);
          }
        }
        break;
      }
    }
  }
  return table;
}

}  // namespace

// ---------------------------------------------------------------------------
// GameTree

std::shared_ptr<const GameTree> GameTree::build(const TreeEnv& env, std::size_t max_nodes) {
  auto tree = std::make_shared<GameTree>();
  GameTree& t = *tree;
  const int np = env.num_players();
  if (np < 1) throw InvalidArgument("environment must have at least one player");
  t.num_players_ = np;
  auto add_node = [&](NodeId parent, Action a, int depth, double p) {
    if (t.parent_.size() >= max_nodes) {
      throw SizeGuardError(env.name() + ": tree exceeds " + std::to_string(max_nodes) +
                           " states");
    }
    t.parent_.push_back(parent);
    t.first_child_.push_back(kNoNode);
    t.num_children_.push_back(0);
    t.action_.push_back(static_cast<std::uint8_t>(a));
    t.depth_.push_back(static_cast<std::uint8_t>(depth));
    t.kind_.push_back(NodeKind::kTerminal);
    t.player_.push_back(0);
    t.outcome_.push_back(Outcome::kNone);
    t.env_prob_.push_back(p);
    t.reward_offset_.push_back(~0u);
    for (int i = 0; i < np; ++i) t.log_branch_.push_back(0.0);
  };
  add_node(kNoNode, 0, 0, 1.0);
  bool any_env = false;
  NodeInfo ni;
  std::vector<std::uint8_t> hist;
  for (NodeId n = 0; n < t.parent_.size(); ++n) {
    hist.clear();
    for (NodeId m = n; m != 0; m = t.parent_[m]) hist.push_back(t.action_[m]);
    std::reverse(hist.begin(), hist.end());
    const StateKey key(hist);
    env.describe(key, ni);
    t.kind_[n] = ni.kind;
    t.outcome_[n] = ni.outcome;
    if (ni.terminal()) {
      if (!ni.log_rewards.empty()) {
        t.reward_offset_[n] = static_cast<std::uint32_t>(t.reward_values_.size());
        t.reward_values_.insert(t.reward_values_.end(), ni.log_rewards.begin(),
                                ni.log_rewards.end());
      }
      continue;
    }
    if (ni.actions.empty()) {
      throw ContractError("nonterminal state [" + key.to_string() + "] has no children");
    }
    if (ni.actions.size() > 255) throw InvalidArgument("more than 255 children at a state");
    if (ni.kind == NodeKind::kEnvironment) {
      any_env = true;
    } else {
      if (ni.player < 1 || ni.player > np) throw ContractError("owner outside 1..num_players");
      t.player_[n] = static_cast<std::int8_t>(ni.player);
    }
    if (t.depth_[n] == 255) throw InvalidArgument("tree deeper than 255 plies");
    const NodeId first = static_cast<NodeId>(t.parent_.size());
    t.first_child_[n] = first;
    t.num_children_[n] = static_cast<std::uint8_t>(ni.actions.size());
    const double lk = std::log(static_cast<double>(ni.actions.size()));
    for (std::size_t c = 0; c < ni.actions.size(); ++c) {
      const double p = ni.kind == NodeKind::kEnvironment ? ni.env_probs[c] : 1.0;
      add_node(n, ni.actions[c], t.depth_[n] + 1, p);
      const NodeId child = first + static_cast<NodeId>(c);
      for (int i = 1; i <= np; ++i) {
        double b = t.log_branch_[static_cast<std::size_t>(n) * np + (i - 1)];
        if (ni.kind == NodeKind::kPlayer && ni.player == i) b += lk;
        t.log_branch_[static_cast<std::size_t>(child) * np + (i - 1)] = b;
      }
    }
  }
  if (!any_env) {
    t.env_prob_.clear();
    t.env_prob_.shrink_to_fit();
  }
  return tree;
}

std::span<const double> GameTree::env_log_rewards(NodeId n) const {
  if (reward_offset_[n] == ~0u) return {};
  return std::span<const double>(reward_values_.data() + reward_offset_[n],
                                 static_cast<std::size_t>(num_players_));
}

StateKey GameTree::key(NodeId n) const {
  std::vector<std::uint8_t> hist;
  for (NodeId m = n; m != 0; m = parent_[m]) hist.push_back(action_[m]);
  std::reverse(hist.begin(), hist.end());
  return StateKey(std::move(hist));
}

NodeId GameTree::find(const StateKey& s) const {
  NodeId n = 0;
  for (std::uint8_t a : s.history()) {
    if (terminal(n)) return kNoNode;
    NodeId next = kNoNode;
    for (int t = 0; t < num_children(n); ++t) {
      if (action_[child(n, t)] == a) {
        next = child(n, t);
        break;
      }
    }
    if (next == kNoNode) return kNoNode;
    n = next;
  }
  return n;
}

bool GameTree::alternating_two_player() const {
  if (num_players_ != 2 || has_env_states()) return false;
  for (NodeId n = 0; n < size(); ++n) {
    if (!terminal(n) && player(n) != 1 + (depth(n) & 1)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Rewards

RewardTable::RewardTable(std::size_t nodes, int players)
    : players_(players), values_(nodes * players, std::numeric_limits<double>::quiet_NaN()) {}

RewardTable env_rewards(const GameTree& tree) {
  RewardTable r(tree.size(), tree.num_players());
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (!tree.terminal(n)) continue;
    auto lr = tree.env_log_rewards(n);
    if (lr.empty()) {
      throw InvalidArgument("terminal [" + tree.key(n).to_string() +
                            "] carries no environment reward");
    }
    for (int i = 1; i <= tree.num_players(); ++i) {
      if (!std::isfinite(lr[i - 1])) {
        throw InvalidArgument("nonpositive reward at terminal [" + tree.key(n).to_string() + "]");
      }
      r.set(n, i, lr[i - 1]);
    }
  }
  return r;
}

double raw_outcome_log_reward(Outcome o, int player, double lambda) {
  switch (o) {
    case Outcome::kDraw: return 0.0;
    case Outcome::kP1Win: return player == 1 ? lambda : -lambda;
    case Outcome::kP2Win: return player == 2 ? lambda : -lambda;
    case Outcome::kNone: break;
  }
  throw InvalidArgument("terminal without a game outcome");
}

RewardTable outcome_rewards(const GameTree& tree, double lambda, bool branch_adjusted) {
  if (tree.num_players() != 2) throw InvalidArgument("outcome rewards need a two-player game");
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be >= 0");
  RewardTable r(tree.size(), 2);
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (!tree.terminal(n)) continue;
    for (int i = 1; i <= 2; ++i) {
      double v = raw_outcome_log_reward(tree.outcome(n), i, lambda);
      if (branch_adjusted) v -= tree.log_branch(n, i);
      r.set(n, i, v);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// FlowTable

FlowTable::FlowTable(std::shared_ptr<const GameTree> tree, int players)
    : tree_(std::move(tree)),
      players_(players),
      log_flow_(tree_->size() * players, std::numeric_limits<double>::quiet_NaN()) {}

double FlowTable::flow(NodeId n, int player) const { return std::exp(log_flow(n, player)); }

double FlowTable::log_policy(NodeId child) const {
  const GameTree& t = *tree_;
  if (child == t.root()) throw ContractError("root has no incoming edge");
  const NodeId s = t.parent(child);
  if (t.kind(s) == NodeKind::kEnvironment) return std::log(t.env_prob(child));
  const int j = players_ == 1 ? 1 : t.player(s);
  return log_flow(child, j) - log_flow(s, j);
}

double FlowTable::log_flow(const StateKey& s, int player) const {
  const NodeId n = tree_->find(s);
  if (n == kNoNode) throw InvalidArgument("state [" + s.to_string() + "] not in flow table");
  return log_flow(n, player);
}

void FlowTable::export_jsonl(std::ostream& os) const {
  for (NodeId n = 0; n < tree_->size(); ++n) {
    nlohmann::json j;
    j["state"] = tree_->key(n).to_string();
    std::vector<double> v(players_);
    for (int i = 1; i <= players_; ++i) v[i - 1] = log_flow(n, i);
    j["log_flow"] = v;
    os << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Solvers

FlowTable solve_gfn(std::shared_ptr<const GameTree> tree, const RewardTable& rewards,
                    SolveOptions opts) {
  if (tree->has_env_states()) throw ContractError("solve_gfn requires a deterministic tree");
  return sweep(std::move(tree), rewards, 1, true, opts);
}

FlowTable solve_eflow(std::shared_ptr<const GameTree> tree, const RewardTable& rewards,
                      SolveOptions opts) {
  return sweep(std::move(tree), rewards, 1, true, opts);
}

FlowTable solve_afn(std::shared_ptr<const GameTree> tree, const RewardTable& rewards,
                    SolveOptions opts) {
  const int np = tree->num_players();
  return sweep(std::move(tree), rewards, np, false, opts);
}

// ---------------------------------------------------------------------------
// Checks

double EdbResidual::max() const { return std::max({agent, env, terminal}); }

EdbResidual edb_residual(const FlowTable& table, const RewardTable& rewards) {
  const GameTree& t = table.tree();
  const int np = table.num_players();
  EdbResidual r;
  for (NodeId n = 0; n < t.size(); ++n) {
    if (t.terminal(n)) {
      for (int i = 1; i <= np; ++i) {
        r.terminal = std::max(r.terminal, std::abs(table.log_flow(n, i) - rewards.log_reward(n, i)));
      }
      continue;
    }
    if (t.kind(n) == NodeKind::kEnvironment) {
      for (int i = 1; i <= np; ++i) {
        const double e = lse_children(t, n, false, [&](NodeId c) {
          return std::log(t.env_prob(c)) + table.log_flow(c, i);
        });
        r.env = std::max(r.env, std::abs(table.log_flow(n, i) - e));
      }
      continue;
    }
    const int j = np == 1 ? 1 : t.player(n);
    const double norm = lse_children(t, n, false, [&](NodeId c) { return table.log_flow(c, j); });
    for (int i = 1; i <= np; ++i) {
      if (i == j) {
        for (int k = 0; k < t.num_children(n); ++k) {
          const NodeId c = t.child(n, k);
          const double log_p = table.log_flow(c, j) - norm;
          r.agent = std::max(
              r.agent, std::abs(table.log_flow(n, i) + log_p - table.log_flow(c, i)));
        }
      } else {
        const double e = lse_children(t, n, false, [&](NodeId c) {
          return table.log_flow(c, j) - norm + table.log_flow(c, i);
        });
        r.env = std::max(r.env, std::abs(table.log_flow(n, i) - e));
      }
    }
  }
  return r;
}

double check_product_flow(const FlowTable& table, const RewardTable& rewards) {
  const GameTree& t = table.tree();
  const int np = table.num_players();
  auto log_prod = [&](NodeId n) {
    double v = 0;
    for (int i = 1; i <= np; ++i) v += table.log_flow(n, i);
    return v;
  };
  double worst = 0;
  for (NodeId n = 0; n < t.size(); ++n) {
    if (t.terminal(n)) {
      double lr = 0;
      for (int i = 1; i <= np; ++i) lr += rewards.log_reward(n, i);
      worst = std::max(worst, std::abs(log_prod(n) - lr));
    } else {
      worst = std::max(worst, std::abs(log_prod(n) - lse_children(t, n, false, log_prod)));
    }
  }
  return worst;
}

double check_branch_identity(const FlowTable& table) {
  const GameTree& t = table.tree();
  double worst = 0;
  for (NodeId n = 0; n < t.size(); ++n) {
    double v = 0;
    for (int i = 1; i <= table.num_players(); ++i) v += table.log_flow(n, i) + t.log_branch(n, i);
    worst = std::max(worst, std::abs(v));
  }
  return worst;
}

EdgePolicy exact_policy(const FlowTable& table) {
  const GameTree& t = table.tree();
  EdgePolicy p(t.size(), 0.0);
  for (NodeId n = 0; n < t.size(); ++n) {
    if (t.terminal(n)) continue;
    if (t.kind(n) == NodeKind::kEnvironment) {
      for (int k = 0; k < t.num_children(n); ++k) {
        p[t.child(n, k)] = std::log(t.env_prob(t.child(n, k)));
      }
      continue;
    }
    const int j = table.num_players() == 1 ? 1 : t.player(n);
    const double norm = lse_children(t, n, false, [&](NodeId c) { return table.log_flow(c, j); });
    for (int k = 0; k < t.num_children(n); ++k) {
      const NodeId c = t.child(n, k);
      p[c] = table.log_flow(c, j) - norm;
    }
  }
  return p;
}

EdgePolicy uniform_policy(const GameTree& t) {
  EdgePolicy p(t.size(), 0.0);
  for (NodeId n = 0; n < t.size(); ++n) {
    if (t.terminal(n)) continue;
    for (int k = 0; k < t.num_children(n); ++k) {
      const NodeId c = t.child(n, k);
      p[c] = t.kind(n) == NodeKind::kEnvironment ? std::log(t.env_prob(c))
                                                 : -std::log(double(t.num_children(n)));
    }
  }
  return p;
}

double tb_log_z(const GameTree& t, const EdgePolicy& policy, double lambda, NodeId x) {
  if (!t.terminal(x)) throw ContractError("trajectory does not end at a terminal state");
  double v = raw_outcome_log_reward(t.outcome(x), 1, lambda) - t.log_branch(x, 1) +
             t.log_branch(x, 2);
  for (NodeId c = x; c != t.root(); c = t.parent(c)) {
    const NodeId s = t.parent(c);
    switch (t.player(s)) {
      case 1: v -= policy[c]; break;
      case 2: v += policy[c]; break;
      default: throw ContractError("trajectory visits a state not owned by player 1 or 2");
    }
  }
  return v;
}

TbConstantResult tb_constant_check(const GameTree& t, const EdgePolicy& policy, double lambda,
                                   int num_trajectories, Rng& rng,
                                   std::optional<double> reference) {
  if (!t.alternating_two_player()) {
    throw ContractError("trajectory balance check needs an alternating two-player game");
  }
  if (policy.size() != t.size()) throw InvalidArgument("policy size does not match tree");
  TbConstantResult r;
  r.log_z.reserve(num_trajectories);
  for (int k = 0; k < num_trajectories; ++k) {
    NodeId n = t.root();
    while (!t.terminal(n)) n = t.child(n, rng.uniform_int(t.num_children(n)));
    r.log_z.push_back(tb_log_z(t, policy, lambda, n));
  }
  double sum = 0;
  for (double v : r.log_z) sum += v;
  r.log_z_mean = r.log_z.empty() ? 0 : sum / r.log_z.size();
  const double ref = reference.value_or(r.log_z_mean);
  for (double v : r.log_z) r.max_deviation = std::max(r.max_deviation, std::abs(v - ref));
  return r;
}

// ---------------------------------------------------------------------------
// Environment strategies

namespace {

using Partial = std::vector<EnvStrategy>;

Partial strategies_below(const GameTree& t, NodeId n) {
  if (t.terminal(n)) return {EnvStrategy{{n}, 1.0}};
  Partial out;
  if (t.kind(n) == NodeKind::kEnvironment) {
    for (int k = 0; k < t.num_children(n); ++k) {
      const NodeId c = t.child(n, k);
      for (auto& g : strategies_below(t, c)) {
        g.vertices.push_back(n);
        g.probability *= t.env_prob(c);
        out.push_back(std::move(g));
      }
    }
    return out;
  }
  out.push_back(EnvStrategy{{n}, 1.0});
  for (int k = 0; k < t.num_children(n); ++k) {
    Partial sub = strategies_below(t, t.child(n, k));
    Partial next;
    next.reserve(out.size() * sub.size());
    for (const auto& a : out) {
      for (const auto& b : sub) {
        EnvStrategy g = a;
        g.vertices.insert(g.vertices.end(), b.vertices.begin(), b.vertices.end());
        g.probability *= b.probability;
        next.push_back(std::move(g));
      }
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace

std::vector<EnvStrategy> enumerate_env_strategies(const GameTree& t,
                                                  std::size_t max_strategies) {
  std::vector<double> count(t.size(), 1.0);
  for (NodeId n = static_cast<NodeId>(t.size()); n-- > 0;) {
    if (t.terminal(n)) continue;
    const bool env = t.kind(n) == NodeKind::kEnvironment;
    double c = env ? 0.0 : 1.0;
    for (int k = 0; k < t.num_children(n); ++k) {
      c = env ? c + count[t.child(n, k)] : c * count[t.child(n, k)];
    }
    count[n] = std::min(c, 1e300);
  }
  if (count[t.root()] > static_cast<double>(max_strategies)) {
    throw SizeGuardError("environment has more than " + std::to_string(max_strategies) +
                         " strategies");
  }
  auto out = strategies_below(t, t.root());
  for (auto& g : out) std::sort(g.vertices.begin(), g.vertices.end());
  return out;
}

bool is_valid_env_strategy(const GameTree& t, const EnvStrategy& g) {
  std::vector<char> in(t.size(), 0);
  for (NodeId v : g.vertices) {
    if (v >= t.size()) return false;
    in[v] = 1;
  }
  if (!in[t.root()]) return false;
  for (NodeId v : g.vertices) {
    if (v != t.root() && !in[t.parent(v)]) return false;
    if (t.terminal(v)) continue;
    int kept = 0;
    for (int k = 0; k < t.num_children(v); ++k) kept += in[t.child(v, k)];
    if (t.kind(v) == NodeKind::kEnvironment ? kept != 1 : kept != t.num_children(v)) {
      return false;
    }
  }
  return true;
}

double check_strategy_marginalization(std::shared_ptr<const GameTree> tree_ptr, const RewardTable& rewards,
                   std::size_t max_strategies) {
  const GameTree& t = *tree_ptr;
  const FlowTable ef = solve_eflow(tree_ptr, rewards);
  const EdgePolicy agent = exact_policy(ef);
  const auto strategies = enumerate_env_strategies(t, max_strategies);
  // log of sum_G P(G) F^G(c) over strategies containing c (agent children only).
  std::vector<double> log_num(t.size(), kNegInf);
  std::vector<double> lf(t.size(), kNegInf);
  std::vector<char> in(t.size(), 0);
  for (const auto& g : strategies) {
    for (NodeId v : g.vertices) in[v] = 1;
    for (auto it = g.vertices.rbegin(); it != g.vertices.rend(); ++it) {
      const NodeId v = *it;
      if (t.terminal(v)) {
        lf[v] = rewards.log_reward(v, 1);
      } else if (t.kind(v) == NodeKind::kEnvironment) {
        for (int k = 0; k < t.num_children(v); ++k) {
          if (in[t.child(v, k)]) lf[v] = lf[t.child(v, k)];
        }
      } else {
        lf[v] = lse_children(t, v, false, [&](NodeId c) { return lf[c]; });
      }
    }
    const double lp = std::log(g.probability);
    for (NodeId v : g.vertices) {
      if (v != t.root() && t.kind(t.parent(v)) == NodeKind::kPlayer) {
        log_num[v] = log_add(log_num[v], lp + lf[v]);
      }
    }
    for (NodeId v : g.vertices) in[v] = 0;
  }
  double worst = 0;
  for (NodeId n = 0; n < t.size(); ++n) {
    if (t.kind(n) != NodeKind::kPlayer) continue;
    const double norm = lse_children(t, n, false, [&](NodeId c) { return log_num[c]; });
    for (int k = 0; k < t.num_children(n); ++k) {
      const NodeId c = t.child(n, k);
      worst = std::max(worst, std::abs(std::exp(agent[c]) - std::exp(log_num[c] - norm)));
    }
  }
  return worst;
}

double check_flow_as_expectation(const FlowTable& table, double lambda,
                                 std::span<const NodeId> states, std::size_t max_paths) {
  const GameTree& t = table.tree();
  if (t.num_players() != 2 || table.num_players() != 2) {
    throw ContractError("flow-as-expectation check needs a two-player game");
  }
  const EdgePolicy pol = exact_policy(table);
  double worst = 0;
  struct Frame {
    NodeId n;
    double log_p;
  };
  std::vector<Frame> stack;
  for (NodeId s : states) {
    for (int i = 1; i <= 2; ++i) {
      double expect = 0;
      std::size_t paths = 0;
      stack.assign(1, Frame{s, 0.0});
      while (!stack.empty()) {
        const Frame f = stack.back();
        stack.pop_back();
        if (t.terminal(f.n)) {
          if (++paths > max_paths) {
            throw SizeGuardError("subtree below [" + t.key(s).to_string() + "] exceeds " +
                                 std::to_string(max_paths) + " paths");
          }
          expect += std::exp(f.log_p + raw_outcome_log_reward(t.outcome(f.n), i, lambda));
          continue;
        }
        const bool own = t.kind(f.n) == NodeKind::kPlayer && t.player(f.n) == i;
        const double lu = -std::log(double(t.num_children(f.n)));
        for (int k = 0; k < t.num_children(f.n); ++k) {
          const NodeId c = t.child(f.n, k);
          stack.push_back(Frame{c, f.log_p + (own ? lu : pol[c])});
        }
      }
      const double got = std::exp(t.log_branch(s, i) + table.log_flow(s, i));
      worst = std::max(worst, std::abs(got - expect) / expect);
    }
  }
  return worst;
}

std::vector<NodeId> sample_nodes(const GameTree& t, int min_depth, std::size_t count, Rng& rng) {
  std::vector<NodeId> pool;
  for (NodeId n = 0; n < t.size(); ++n) {
    if (t.depth(n) >= min_depth) pool.push_back(n);
  }
  const std::size_t m = std::min(count, pool.size());
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(
                                  static_cast<int>(pool.size() - i)));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(m);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace afn
