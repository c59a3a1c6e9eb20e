#pragma once

// Ground-truth flows. The reachable history tree is materialized once in
// breadth-first order (children contiguous, parents before children), after
// which every solver is a reverse sweep over node indices. All flows are kept
// in log space.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "afn/env.hpp"
#include "afn/rng.hpp"

namespace afn {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = ~NodeId{0};

class GameTree {
 public:
  // Materializes the reachable tree of `env`; SizeGuardError past max_nodes.
  static std::shared_ptr<const GameTree> build(const TreeEnv& env,
                                               std::size_t max_nodes = 50'000'000);

  std::size_t size() const { return parent_.size(); }
  int num_players() const { return num_players_; }
  NodeId root() const { return 0; }

  NodeId parent(NodeId n) const { return parent_[n]; }
  NodeId first_child(NodeId n) const { return first_child_[n]; }
  int num_children(NodeId n) const { return num_children_[n]; }
  NodeId child(NodeId n, int i) const { return first_child_[n] + i; }
  Action action(NodeId n) const { return action_[n]; }
  int depth(NodeId n) const { return depth_[n]; }
  NodeKind kind(NodeId n) const { return kind_[n]; }
  bool terminal(NodeId n) const { return kind_[n] == NodeKind::kTerminal; }
  // 1-based owner for player states, 0 otherwise.
  int player(NodeId n) const { return player_[n]; }
  Outcome outcome(NodeId n) const { return outcome_[n]; }
  // P_env(n | parent(n)); 1 when the parent is not an environment state.
  double env_prob(NodeId n) const { return env_prob_.empty() ? 1.0 : env_prob_[n]; }
  bool has_env_states() const { return !env_prob_.empty(); }
  // log B_i(n): summed log child counts of the ancestors of n owned by
  // player i (1-based), excluding n itself.
  double log_branch(NodeId n, int player) const {
    return log_branch_[static_cast<std::size_t>(n) * num_players_ + (player - 1)];
  }
  // Environment-provided terminal log-rewards (empty span for games).
  std::span<const double> env_log_rewards(NodeId n) const;

  StateKey key(NodeId n) const;
  // kNoNode if the history leaves the tree.
  NodeId find(const StateKey& s) const;
  // True when every player state at even depth belongs to player 1, odd depth
  // to player 2, and no environment states exist.
  bool alternating_two_player() const;

 private:
  int num_players_ = 1;
  std::vector<NodeId> parent_;
  std::vector<NodeId> first_child_;
  std::vector<std::uint8_t> num_children_;
  std::vector<std::uint8_t> action_;
  std::vector<std::uint8_t> depth_;
  std::vector<NodeKind> kind_;
  std::vector<std::int8_t> player_;
  std::vector<Outcome> outcome_;
  std::vector<double> env_prob_;
  std::vector<double> log_branch_;
  std::vector<std::uint32_t> reward_offset_;  // per node; ~0u when none
  std::vector<double> reward_values_;
};

// Per-node, per-player terminal log-rewards (NaN at nonterminal nodes).
class RewardTable {
 public:
  RewardTable() = default;
  RewardTable(std::size_t nodes, int players);

  int num_players() const { return players_; }
  double log_reward(NodeId n, int player) const {
    return values_[static_cast<std::size_t>(n) * players_ + (player - 1)];
  }
  void set(NodeId n, int player, double log_r) {
    values_[static_cast<std::size_t>(n) * players_ + (player - 1)] = log_r;
  }

 private:
  int players_ = 1;
  std::vector<double> values_;
};

// Rewards supplied by the environment (toy trees, sequence env). Throws
// InvalidArgument on a missing or nonfinite (i.e. nonpositive) reward.
RewardTable env_rewards(const GameTree& tree);
// Outcome rewards for two-player games: log R°_i = +lambda / 0 / -lambda for
// win / draw / loss, divided by B_i(x) when `branch_adjusted`.
RewardTable outcome_rewards(const GameTree& tree, double lambda, bool branch_adjusted = true);
// Raw outcome log-reward log R°_i(x).
double raw_outcome_log_reward(Outcome o, int player, double lambda);

// Per-node, per-player log-flows over a GameTree.
class FlowTable {
 public:
  FlowTable(std::shared_ptr<const GameTree> tree, int players);

  const GameTree& tree() const { return *tree_; }
  std::shared_ptr<const GameTree> tree_ptr() const { return tree_; }
  int num_players() const { return players_; }

  double log_flow(NodeId n, int player = 1) const {
    return log_flow_[static_cast<std::size_t>(n) * players_ + (player - 1)];
  }
  double flow(NodeId n, int player = 1) const;
  void set_log_flow(NodeId n, int player, double v) {
    log_flow_[static_cast<std::size_t>(n) * players_ + (player - 1)] = v;
  }
  // log P(child | parent(child)) under the parent's owner: the owner's
  // flow ratio at player states, P_env at environment states.
  double log_policy(NodeId child) const;
  double log_flow(const StateKey& s, int player = 1) const;

  // One line per node: {"state": "a0,a1,...", "log_flow": [..]}.
  void export_jsonl(std::ostream& os) const;

 private:
  std::shared_ptr<const GameTree> tree_;
  int players_;
  std::vector<double> log_flow_;
};

struct SolveOptions {
  // Accumulate children in descending order (used to check order independence).
  bool reverse_child_order = false;
};

// Deterministic single-agent tree: F(x)=R(x), F(s)=sum of children.
FlowTable solve_gfn(std::shared_ptr<const GameTree> tree, const RewardTable& rewards,
                    SolveOptions opts = {});
// Single-agent stochastic tree: sum at agent states, P_env expectation at
// environment states, R at terminals.
FlowTable solve_eflow(std::shared_ptr<const GameTree> tree, const RewardTable& rewards,
                      SolveOptions opts = {});
// n-player tree: own-sum at own states, opponent-flow-weighted average at
// states of other players, expectation at environment states.
FlowTable solve_afn(std::shared_ptr<const GameTree> tree, const RewardTable& rewards,
                    SolveOptions opts = {});

struct EdbResidual {
  double agent = 0;     // |log F(s) + log P(s'|s) - log F(s')| at own states
  double env = 0;       // |log F(s) - log E[F(s')]| at other-owner states
  double terminal = 0;  // |log F(x) - log R(x)|
  double max() const;
};
// Residuals of the expected detailed balance constraints of each player's
// expected flow network, with the other players' policies read from `table`.
EdbResidual edb_residual(const FlowTable& table, const RewardTable& rewards);

// Max FM residual of F = F1*F2 (and F(x) = R1(x)R2(x) at terminals).
double check_product_flow(const FlowTable& table, const RewardTable& rewards);
// Max |log(F1 F2 B1 B2)| over all states.
double check_branch_identity(const FlowTable& table);

// log-probability of reaching each node from its parent (index = child node).
using EdgePolicy = std::vector<double>;
EdgePolicy exact_policy(const FlowTable& table);
EdgePolicy uniform_policy(const GameTree& tree);

struct TbConstantResult {
  double log_z_mean = 0;
  double max_deviation = 0;  // from `reference` if given, else from the mean
  std::vector<double> log_z;
};
// log Z(tau) = log R1(x) + log B2(x) + sum log P2 - sum log P1 over
// `num_trajectories` uniformly random complete trajectories, with
// branch-adjusted rewards at `lambda`.
TbConstantResult tb_constant_check(const GameTree& tree, const EdgePolicy& policy, double lambda,
                                   int num_trajectories, Rng& rng,
                                   std::optional<double> reference = std::nullopt);
// log Z(tau) for the trajectory ending at terminal node x.
double tb_log_z(const GameTree& tree, const EdgePolicy& policy, double lambda, NodeId x);

struct EnvStrategy {
  std::vector<NodeId> vertices;  // sorted
  double probability = 0;
};
// All pure environment strategies with their probabilities under P_env.
std::vector<EnvStrategy> enumerate_env_strategies(const GameTree& tree,
                                                  std::size_t max_strategies = 10'000);
// Parent closure; env states keep exactly one child; agent states keep all.
bool is_valid_env_strategy(const GameTree& tree, const EnvStrategy& g);

// Max |P_agent(s'|s) - normalized E[F^{G_env}(s') | s in G_env]| over agent
// edges, comparing solve_eflow with deterministic flows on every strategy.
double check_strategy_marginalization(std::shared_ptr<const GameTree> tree, const RewardTable& rewards,
                   std::size_t max_strategies = 10'000);

// Max relative error between B_i(s) F_i(s) and the expected raw outcome
// reward under uniform own moves and the opponent's policy, by exhaustive
// path enumeration below each state in `states`.
double check_flow_as_expectation(const FlowTable& table, double lambda,
                                 std::span<const NodeId> states,
                                 std::size_t max_paths = 1'000'000);

// Uniformly samples up to `count` distinct nodes at depth >= min_depth.
std::vector<NodeId> sample_nodes(const GameTree& tree, int min_depth, std::size_t count,
                                 Rng& rng);

}  // namespace afn
