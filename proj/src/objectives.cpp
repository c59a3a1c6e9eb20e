#include "afn/objectives.hpp"

#include <cmath>

#include "afn/math.hpp"

namespace afn {

void masked_log_softmax(std::span<const double> logits, const ActionMask& mask,
                        std::vector<double>& out, double temperature) {
  if (static_cast<int>(logits.size()) != mask.width()) {
    throw InvalidArgument("logit width does not match mask width");
  }
  if (!(temperature > 0)) throw InvalidArgument("temperature must be positive");
  out.assign(logits.size(), kLogZero);
  double m = kLogZero;
  for (std::size_t a = 0; a < logits.size(); ++a) {
    if (mask.test(static_cast<Action>(a))) m = std::max(m, logits[a] / temperature);
  }
  if (m == kLogZero) throw ContractError("no legal action under mask");
  double s = 0;
  for (std::size_t a = 0; a < logits.size(); ++a) {
    if (mask.test(static_cast<Action>(a))) s += std::exp(logits[a] / temperature - m);
  }
  const double z = m + std::log(s);
  for (std::size_t a = 0; a < logits.size(); ++a) {
    if (mask.test(static_cast<Action>(a))) out[a] = logits[a] / temperature - z;
  }
}

namespace {

// Accumulates 2r * d(log softmax(x)[k]) / dx into g.
void add_log_softmax_grad(std::span<const double> log_p, int k, double coef,
                          std::span<double> g) {
  for (std::size_t b = 0; b < log_p.size(); ++b) {
    if (log_p[b] == kLogZero) continue;
    g[b] += coef * ((static_cast<int>(b) == k ? 1.0 : 0.0) - std::exp(log_p[b]));
  }
}

double weighted_lse_term(double log_f_s, std::span<const double> log_f_children,
                         std::span<const double> log_w, double* g_s,
                         std::span<double> g_children) {
  std::vector<double> z(log_f_children.size());
  for (std::size_t c = 0; c < z.size(); ++c) {
    z[c] = log_f_children[c] + (log_w.empty() ? 0.0 : log_w[c]);
  }
  const double e = log_sum_exp(z);
  const double r = log_f_s - e;
  if (g_s) *g_s += 2 * r;
  if (!g_children.empty()) {
    for (std::size_t c = 0; c < z.size(); ++c) g_children[c] -= 2 * r * std::exp(z[c] - e);
  }
  return r * r;
}

}  // namespace

double fm_term(double log_f_s, std::span<const double> log_f_children, double* g_s,
               std::span<double> g_children) {
  return weighted_lse_term(log_f_s, log_f_children, {}, g_s, g_children);
}

double db_edge_term(double log_f_s, double log_p, double log_f_c, double* g_s, double* g_p,
                    double* g_c) {
  const double r = log_f_s + log_p - log_f_c;
  if (g_s) *g_s += 2 * r;
  if (g_p) *g_p += 2 * r;
  if (g_c) *g_c -= 2 * r;
  return r * r;
}

double edb_env_term(double log_f_s, std::span<const double> log_f_children,
                    std::span<const double> log_p_env, double* g_s,
                    std::span<double> g_children) {
  if (log_p_env.size() != log_f_children.size()) {
    throw InvalidArgument("environment distribution size mismatch");
  }
  return weighted_lse_term(log_f_s, log_f_children, log_p_env, g_s, g_children);
}

double edb_env_q_term(double log_f_s, std::span<const double> q_logits, int child,
                      double log_f_c, double log_p_env, double* g_s, std::span<double> g_q,
                      double* g_c) {
  std::vector<double> lq(q_logits.begin(), q_logits.end());
  log_softmax_inplace(lq);
  const double r = log_f_s + lq[child] - log_f_c - log_p_env;
  if (g_s) *g_s += 2 * r;
  if (g_c) *g_c -= 2 * r;
  if (!g_q.empty()) add_log_softmax_grad(lq, child, 2 * r, g_q);
  return r * r;
}

double terminal_term(double log_f_x, double log_r, double* g_x) {
  const double r = log_f_x - log_r;
  if (g_x) *g_x += 2 * r;
  return r * r;
}

double env_model_nll(std::span<const double> logits, int observed, std::span<double> g_logits) {
  std::vector<double> lp(logits.begin(), logits.end());
  log_softmax_inplace(lp);
  if (!g_logits.empty()) add_log_softmax_grad(lp, observed, -1.0, g_logits);
  return -lp[observed];
}

// ---------------------------------------------------------------------------

namespace {

void require_complete(const Trajectory& t) {
  if (!t.complete()) throw ContractError("trajectory is incomplete");
}

}  // namespace

double branch_factor(const Trajectory& t, int player) {
  require_complete(t);
  double lb = 0;
  for (const auto& st : t.steps) {
    if (st.curr_player.id() == player) lb += std::log(static_cast<double>(st.mask.count()));
  }
  return lb;
}

std::vector<double> make_rewards(Outcome outcome, double lambda, const Trajectory& t) {
  require_complete(t);
  if (outcome == Outcome::kNone) throw InvalidArgument("unknown game outcome");
  std::vector<double> r(2);
  for (int i = 1; i <= 2; ++i) {
    r[i - 1] = raw_outcome_log_reward(outcome, i, lambda) - branch_factor(t, i);
  }
  return r;
}

TbInput tb_input_skeleton(const Trajectory& t, double lambda) {
  require_complete(t);
  TbInput in;
  for (const auto& st : t.steps) {
    const int p = st.curr_player.id();
    if (p != 1 && p != 2) throw ContractError("trajectory balance needs player-owned steps");
    in.masks.push_back(st.mask);
    in.players.push_back(p);
    in.actions.push_back(st.action);
  }
  in.logits.resize(t.steps.size());
  in.log_r1 = make_rewards(t.outcome, lambda, t)[0];
  in.log_b2 = branch_factor(t, 2);
  return in;
}

namespace {

double tb_generic(const TbInput& in, TbGrad* grad, bool naive) {
  const std::size_t n = in.actions.size();
  if (in.logits.size() != n || in.masks.size() != n || in.players.size() != n) {
    throw InvalidArgument("trajectory balance input has inconsistent step counts");
  }
  std::vector<std::vector<double>> lp(n);
  double r = in.log_z - in.log_r1 - (naive ? 0.0 : in.log_b2);
  std::vector<double> sign(n);
  for (std::size_t k = 0; k < n; ++k) {
    masked_log_softmax(in.logits[k], in.masks[k], lp[k]);
    if (!in.masks[k].test(in.actions[k])) throw ContractError("step takes a masked action");
    sign[k] = (naive || in.players[k] == 1) ? 1.0 : -1.0;
    r += sign[k] * lp[k][in.actions[k]];
  }
  if (grad) {
    grad->log_z += 2 * r;
    grad->logits.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      grad->logits[k].resize(in.logits[k].size(), 0.0);
      add_log_softmax_grad(lp[k], in.actions[k], 2 * r * sign[k], grad->logits[k]);
    }
  }
  return r * r;
}

}  // namespace

double tb_residual(const TbInput& in) {
  double r = in.log_z - in.log_r1 - in.log_b2;
  std::vector<double> lp;
  for (std::size_t k = 0; k < in.actions.size(); ++k) {
    masked_log_softmax(in.logits[k], in.masks[k], lp);
    r += (in.players[k] == 1 ? 1.0 : -1.0) * lp[in.actions[k]];
  }
  return r;
}

double tb_loss(const TbInput& in, TbGrad* grad) { return tb_generic(in, grad, false); }
double naive_tb_loss(const TbInput& in, TbGrad* grad) { return tb_generic(in, grad, true); }

// ---------------------------------------------------------------------------

namespace {

void fail_kind(const GameTree& tree, NodeId n, const char* what) {
  throw ContractError(std::string(what) + " term routed to state [" + tree.key(n).to_string() +
                      "] of the wrong owner class");
}

NodeId checked_parent(const GameTree& tree, NodeId n, NodeKind kind, const char* what) {
  if (n == tree.root() || tree.kind(tree.parent(n)) != kind) fail_kind(tree, n, what);
  return tree.parent(n);
}

void ensure_grad(const TreeParams& p, TreeParams* g) {
  if (!g) return;
  g->log_flow.resize(p.log_flow.size(), 0.0);
  g->log_policy.resize(p.log_policy.size(), 0.0);
  g->q_logits.resize(p.q_logits.size(), 0.0);
}

double env_state_term(const GameTree& tree, const TreeParams& p, NodeId s, TreeParams* g) {
  const int k = tree.num_children(s);
  const NodeId c0 = tree.first_child(s);
  std::vector<double> lf(k), lpe(k), gc(g ? k : 0, 0.0);
  for (int t = 0; t < k; ++t) {
    lf[t] = p.log_flow[c0 + t];
    lpe[t] = std::log(tree.env_prob(c0 + t));
  }
  const double v = edb_env_term(p.log_flow[s], lf, lpe, g ? &g->log_flow[s] : nullptr, gc);
  for (int t = 0; g && t < k; ++t) g->log_flow[c0 + t] += gc[t];
  return v;
}

double env_q_term(const GameTree& tree, const TreeParams& p, NodeId c, TreeParams* g) {
  const NodeId s = tree.parent(c);
  const int k = tree.num_children(s);
  const NodeId c0 = tree.first_child(s);
  std::span<const double> q(p.q_logits.data() + c0, k);
  std::span<double> gq;
  if (g) gq = std::span<double>(g->q_logits.data() + c0, k);
  return edb_env_q_term(p.log_flow[s], q, static_cast<int>(c - c0), p.log_flow[c],
                        std::log(tree.env_prob(c)), g ? &g->log_flow[s] : nullptr, gq,
                        g ? &g->log_flow[c] : nullptr);
}

double agent_edge_term(const TreeParams& p, NodeId c, NodeId s,
                       TreeParams* g) {
  return db_edge_term(p.log_flow[s], p.log_policy[c], p.log_flow[c],
                      g ? &g->log_flow[s] : nullptr, g ? &g->log_policy[c] : nullptr,
                      g ? &g->log_flow[c] : nullptr);
}

double terminal_item(const TreeParams& p, const RewardTable& rewards,
                     NodeId x, TreeParams* g) {
  return terminal_term(p.log_flow[x], rewards.log_reward(x, 1), g ? &g->log_flow[x] : nullptr);
}

}  // namespace

LossValue edb_losses(const GameTree& tree, const TreeParams& params, const RewardTable& rewards,
                     std::span<const TermItem> items, TreeParams* grad) {
  ensure_grad(params, grad);
  LossValue loss;
  for (const auto& it : items) {
    switch (it.kind) {
      case TermKind::kAgentEdge: {
        const NodeId s = checked_parent(tree, it.node, NodeKind::kPlayer, "agent-edge");
        loss.add("agent", agent_edge_term(params, it.node, s, grad));
        break;
      }
      case TermKind::kEnvState:
        if (tree.kind(it.node) != NodeKind::kEnvironment) fail_kind(tree, it.node, "env-state");
        loss.add("env", env_state_term(tree, params, it.node, grad));
        break;
      case TermKind::kEnvEdgeQ:
        checked_parent(tree, it.node, NodeKind::kEnvironment, "env-edge");
        loss.add("env", env_q_term(tree, params, it.node, grad));
        break;
      case TermKind::kTerminal:
        if (!tree.terminal(it.node)) fail_kind(tree, it.node, "terminal");
        loss.add("terminal", terminal_item(params, rewards, it.node, grad));
        break;
      case TermKind::kEnvEdge:
        throw ContractError("fixed environment edges are not an EDB term");
    }
  }
  return loss;
}

LossValue stochgfn_db_loss(const GameTree& tree, const TreeParams& params,
                           const RewardTable& rewards, std::span<const TermItem> items,
                           TreeParams* grad) {
  ensure_grad(params, grad);
  LossValue loss;
  for (const auto& it : items) {
    switch (it.kind) {
      case TermKind::kAgentEdge: {
        const NodeId s = checked_parent(tree, it.node, NodeKind::kPlayer, "agent-edge");
        loss.add("agent", agent_edge_term(params, it.node, s, grad));
        break;
      }
      case TermKind::kEnvEdge: {
        const NodeId s = checked_parent(tree, it.node, NodeKind::kEnvironment, "env-edge");
        loss.add("env", db_edge_term(params.log_flow[s], std::log(tree.env_prob(it.node)),
                                     params.log_flow[it.node],
                                     grad ? &grad->log_flow[s] : nullptr, nullptr,
                                     grad ? &grad->log_flow[it.node] : nullptr));
        break;
      }
      case TermKind::kTerminal:
        if (!tree.terminal(it.node)) fail_kind(tree, it.node, "terminal");
        loss.add("terminal", terminal_item(params, rewards, it.node, grad));
        break;
      default:
        throw ContractError("term kind not part of the augmented-graph loss");
    }
  }
  return loss;
}

std::vector<TermItem> all_edb_items(const GameTree& tree, bool q_form) {
  std::vector<TermItem> items;
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (tree.terminal(n)) items.push_back({TermKind::kTerminal, n});
    if (tree.kind(n) == NodeKind::kEnvironment && !q_form) items.push_back({TermKind::kEnvState, n});
    if (n == tree.root()) continue;
    const NodeKind pk = tree.kind(tree.parent(n));
    if (pk == NodeKind::kPlayer) items.push_back({TermKind::kAgentEdge, n});
    if (pk == NodeKind::kEnvironment && q_form) items.push_back({TermKind::kEnvEdgeQ, n});
  }
  return items;
}

std::vector<TermItem> all_stochgfn_items(const GameTree& tree) {
  std::vector<TermItem> items;
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (tree.terminal(n)) items.push_back({TermKind::kTerminal, n});
    if (n == tree.root()) continue;
    items.push_back({tree.kind(tree.parent(n)) == NodeKind::kPlayer ? TermKind::kAgentEdge
                                                                    : TermKind::kEnvEdge,
                     n});
  }
  return items;
}

TreeParams params_from_flows(const FlowTable& flows) {
  const GameTree& t = flows.tree();
  TreeParams p;
  p.log_flow.resize(t.size());
  for (NodeId n = 0; n < t.size(); ++n) p.log_flow[n] = flows.log_flow(n, 1);
  p.log_policy = exact_policy(flows);
  p.q_logits.assign(t.size(), 0.0);
  for (NodeId n = 1; n < t.size(); ++n) {
    const NodeId s = t.parent(n);
    if (t.kind(s) == NodeKind::kEnvironment) {
      p.q_logits[n] = std::log(t.env_prob(n)) + p.log_flow[n] - p.log_flow[s];
    }
  }
  return p;
}

StochGfnFit stochgfn_min_loss_given_policy(const GameTree& t, const EdgePolicy& log_policy,
                                           const RewardTable& rewards) {
  if (log_policy.size() != t.size()) throw InvalidArgument("policy size does not match tree");
  // Subtree cost as a function of its root log-flow u: a (u - m)^2 + k.
  std::vector<double> a(t.size()), m(t.size()), k(t.size());
  auto edge_lp = [&](NodeId c) {
    return t.kind(t.parent(c)) == NodeKind::kEnvironment ? std::log(t.env_prob(c)) : log_policy[c];
  };
  for (NodeId n = static_cast<NodeId>(t.size()); n-- > 0;) {
    if (t.terminal(n)) {
      a[n] = 1;
      m[n] = rewards.log_reward(n, 1);
      k[n] = 0;
      continue;
    }
    double sa = 0, sam = 0, sk = 0;
    const int nc = t.num_children(n);
    std::vector<double> ac(nc), mc(nc);
    for (int j = 0; j < nc; ++j) {
      const NodeId c = t.child(n, j);
      ac[j] = a[c] / (1 + a[c]);
      mc[j] = m[c] - edge_lp(c);
      sa += ac[j];
      sam += ac[j] * mc[j];
      sk += k[c];
    }
    m[n] = sam / sa;
    a[n] = sa;
    for (int j = 0; j < nc; ++j) sk += ac[j] * (mc[j] - m[n]) * (mc[j] - m[n]);
    k[n] = sk;
  }
  StochGfnFit fit;
  fit.loss = k[t.root()];
  fit.log_flow.resize(t.size());
  fit.log_flow[t.root()] = m[t.root()];
  for (NodeId n = 1; n < t.size(); ++n) {
    const double target = fit.log_flow[t.parent(n)] + edge_lp(n);
    fit.log_flow[n] = (target + a[n] * m[n]) / (1 + a[n]);
  }
  return fit;
}

double stochgfn_loss_lower_bound(const GameTree& t, const RewardTable& rewards) {
  double bound = 0;
  for (NodeId n = 0; n < t.size(); ++n) {
    if (t.kind(n) != NodeKind::kEnvironment) continue;
    const int nc = t.num_children(n);
    bool leaves = true;
    for (int j = 0; j < nc && leaves; ++j) leaves = t.terminal(t.child(n, j));
    if (!leaves) continue;
    std::vector<double> d(nc);
    double mean = 0;
    for (int j = 0; j < nc; ++j) {
      const NodeId c = t.child(n, j);
      d[j] = rewards.log_reward(c, 1) - std::log(t.env_prob(c));
      mean += d[j] / nc;
    }
    for (double v : d) bound += 0.5 * (v - mean) * (v - mean);
  }
  return bound;
}

}  // namespace afn
