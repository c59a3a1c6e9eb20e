#pragma once

// Training losses. Every term is a squared log-ratio; each function returns
// the term and, when gradient outputs are supplied, accumulates d(term)/d(input)
// into them. Policies enter as masked logits, flows as log-flows.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "afn/env.hpp"
#include "afn/exact_flows.hpp"

namespace afn {

struct LossValue {
  double total = 0;
  std::map<std::string, double> terms;

  void add(const std::string& name, double v) {
    total += v;
    terms[name] += v;
  }
};

// log-softmax of logits / temperature over legal actions; illegal = kLogZero.
void masked_log_softmax(std::span<const double> logits, const ActionMask& mask,
                        std::vector<double>& out, double temperature = 1.0);

// (log F(s) - log sum F(s'))^2.
double fm_term(double log_f_s, std::span<const double> log_f_children, double* g_s = nullptr,
               std::span<double> g_children = {});
// (log F(s) + log P(s'|s) - log F(s'))^2. Also the agent-edge EDB term.
double db_edge_term(double log_f_s, double log_p, double log_f_c, double* g_s = nullptr,
                    double* g_p = nullptr, double* g_c = nullptr);
// (log F(s) - log sum P_env(s'|s) F(s'))^2.
double edb_env_term(double log_f_s, std::span<const double> log_f_children,
                    std::span<const double> log_p_env, double* g_s = nullptr,
                    std::span<double> g_children = {});
// (log F(s) + log Q(s'|s) - log F(s') - log P_env(s'|s))^2 for one sampled
// child, Q = softmax(q_logits).
double edb_env_q_term(double log_f_s, std::span<const double> q_logits, int child,
                      double log_f_c, double log_p_env, double* g_s = nullptr,
                      std::span<double> g_q = {}, double* g_c = nullptr);
// (log F(x) - log R(x))^2.
double terminal_term(double log_f_x, double log_r, double* g_x = nullptr);
// Negative log-likelihood of an observed environment transition under a
// learned transition model softmax(logits).
double env_model_nll(std::span<const double> logits, int observed,
                     std::span<double> g_logits = {});

// ---------------------------------------------------------------------------
// Rewards.

// log B_i(x) of a complete trajectory: summed log legal-move counts at the
// steps where player i moved.
double branch_factor(const Trajectory& t, int player);
// Branch-adjusted per-player log-rewards (log R°_i - log B_i) for players 1, 2.
std::vector<double> make_rewards(Outcome outcome, double lambda, const Trajectory& t);

// ---------------------------------------------------------------------------
// Trajectory balance.

struct TbInput {
  double log_z = 0;
  std::vector<std::vector<double>> logits;  // per step, width = action space
  std::vector<ActionMask> masks;
  std::vector<int> players;  // 1 or 2 per step
  std::vector<Action> actions;
  double log_r1 = 0;  // branch-adjusted
  double log_b2 = 0;
};

struct TbGrad {
  double log_z = 0;
  std::vector<std::vector<double>> logits;
};

// Builds the step structure of a TB input from a trajectory; logits are left
// empty for the caller to fill.
TbInput tb_input_skeleton(const Trajectory& t, double lambda);

// (log Z + sum_{P1 steps} log P1 - log R1(x) - log B2(x) - sum_{P2 steps} log P2)^2.
double tb_loss(const TbInput& in, TbGrad* grad = nullptr);
double tb_residual(const TbInput& in);
// Single-GFlowNet baseline: (log Z + sum_{all steps} log P - log R1)^2 with
// log_r1 holding the raw (unadjusted) reward and log_b2 ignored.
double naive_tb_loss(const TbInput& in, TbGrad* grad = nullptr);

// ---------------------------------------------------------------------------
// Whole-tree evaluators for exact checks on explicit trees. Player states
// are agent states (single-agent semantics).

struct TreeParams {
  std::vector<double> log_flow;    // per node
  std::vector<double> log_policy;  // per node: log P(node | parent) at agent edges
  std::vector<double> q_logits;    // per node: Q logit of node at environment edges
};

enum class TermKind { kAgentEdge, kEnvState, kEnvEdgeQ, kEnvEdge, kTerminal };

// `node` names the state (kEnvState, kTerminal) or the child end of the edge.
struct TermItem {
  TermKind kind;
  NodeId node;
};

// Expected detailed balance: accepts kAgentEdge, kEnvState, kEnvEdgeQ, kTerminal.
LossValue edb_losses(const GameTree& tree, const TreeParams& params, const RewardTable& rewards,
                     std::span<const TermItem> items, TreeParams* grad = nullptr);
// Detailed balance on the augmented graph with environment edges fixed to
// P_env: accepts kAgentEdge, kEnvEdge, kTerminal.
LossValue stochgfn_db_loss(const GameTree& tree, const TreeParams& params,
                           const RewardTable& rewards, std::span<const TermItem> items,
                           TreeParams* grad = nullptr);

std::vector<TermItem> all_edb_items(const GameTree& tree, bool q_form = false);
std::vector<TermItem> all_stochgfn_items(const GameTree& tree);

// Exact optimum parameters from solve_eflow: log-flows, normalized agent
// policy, and Q logits at the optimum Q(s'|s) = P_env(s'|s) F(s') / F(s).
TreeParams params_from_flows(const FlowTable& flows);

struct StochGfnFit {
  double loss = 0;
  std::vector<double> log_flow;
};
// min over all log-flows of the total stoch-GFN DB loss (every edge and
// terminal once) for a fixed agent policy; exact by leaf-to-root elimination.
StochGfnFit stochgfn_min_loss_given_policy(const GameTree& tree, const EdgePolicy& log_policy,
                                           const RewardTable& rewards);
// Policy-independent lower bound on the same quantity from environment
// states whose children are all terminal.
double stochgfn_loss_lower_bound(const GameTree& tree, const RewardTable& rewards);

}  // namespace afn
