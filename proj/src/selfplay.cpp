#include "afn/selfplay.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "afn/evalsuite.hpp"
#include "afn/games.hpp"
#include "afn/math.hpp"
#include "afn/objectives.hpp"

namespace afn {

using nlohmann::json;

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw InvalidArgument("buffer capacity must be positive");
}

void ReplayBuffer::push(Trajectory t, int view) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back({std::move(t), view});
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw ContractError("sampling from an empty buffer");
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(items_.size())));
  return out;
}

json ReplayBuffer::to_json() const {
  json items = json::array();
  for (const auto& it : items_) {
    items.push_back({{"view", it.view}, {"trajectory", json::parse(trajectory_to_json_line(it.traj))}});
  }
  return {{"capacity", capacity_}, {"items", items}};
}

ReplayBuffer ReplayBuffer::from_json(const json& j) {
  ReplayBuffer b(j.at("capacity").get<std::size_t>());
  for (const auto& it : j.at("items")) {
    b.push(trajectory_from_json_line(it.at("trajectory").dump()), it.at("view").get<int>());
  }
  return b;
}

// ---------------------------------------------------------------------------

std::string to_string(Objective o) {
  switch (o) {
    case Objective::kTB: return "tb";
    case Objective::kEDB: return "edb";
    case Objective::kStochGfn: return "stoch-gfn";
    case Objective::kNaiveGfn: return "naive-gfn";
  }
  return "?";
}

Objective objective_from_string(std::string_view s) {
  for (auto o : {Objective::kTB, Objective::kEDB, Objective::kStochGfn, Objective::kNaiveGfn}) {
    if (s == to_string(o)) return o;
  }
  throw InvalidArgument("unknown objective '" + std::string(s) + "' (tb, edb, stoch-gfn, naive-gfn)");
}

std::string to_string(OpponentMode m) {
  switch (m) {
    case OpponentMode::kSelfPlay: return "self-play";
    case OpponentMode::kFixedUniform: return "fixed-uniform";
    case OpponentMode::kBothPerspectives: return "both-perspectives";
  }
  return "?";
}

OpponentMode opponent_mode_from_string(std::string_view s) {
  for (auto m : {OpponentMode::kSelfPlay, OpponentMode::kFixedUniform, OpponentMode::kBothPerspectives}) {
    if (s == to_string(m)) return m;
  }
  throw InvalidArgument("unknown opponent mode '" + std::string(s) +
                        "' (self-play, fixed-uniform, both-perspectives)");
}

void TrainConfig::validate() const {
  auto positive = [](const char* key, double v) {
    if (!(v > 0)) throw InvalidArgument(std::string(key) + " must be positive");
  };
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be >= 0");
  positive("batch_size", batch_size);
  positive("trajectories_per_epoch", trajectories_per_epoch);
  positive("steps_per_epoch", steps_per_epoch);
  positive("epochs", epochs);
  positive("buffer_capacity", buffer_capacity);
  positive("lr", lr);
  positive("lr_z", lr_z);
  positive("q_form_threshold", q_form_threshold);
  positive("hidden", hidden);
  if (!(temperature >= 0)) throw InvalidArgument("temperature must be >= 0");
  if (learner_side != 1 && learner_side != 2) throw InvalidArgument("learner_side must be 1 or 2");
  if (uniform_opening_plies < 0) throw InvalidArgument("uniform_opening_plies must be >= 0");
  if (eval_games < 0) throw InvalidArgument("eval_games must be >= 0");
  if (mae_rollouts < 1) throw InvalidArgument("mae_rollouts must be positive");
  if (!(env_model_weight >= 0)) throw InvalidArgument("env_model_weight must be >= 0");
  if (blocks < 0) throw InvalidArgument("blocks must be >= 0");
  if (model_kind != "tabular" && model_kind != "neural") {
    throw InvalidArgument("model_kind must be tabular or neural");
  }
  if (learn_env_model && model_kind != "tabular") {
    throw InvalidArgument("learn_env_model needs the tabular model");
  }
}

json TrainConfig::to_json() const {
  return {{"lambda", lambda},
          {"batch_size", batch_size},
          {"trajectories_per_epoch", trajectories_per_epoch},
          {"steps_per_epoch", steps_per_epoch},
          {"epochs", epochs},
          {"buffer_capacity", buffer_capacity},
          {"temperature", temperature},
          {"objective", afn::to_string(objective)},
          {"opponent", afn::to_string(opponent)},
          {"learner_side", learner_side},
          {"seed", seed},
          {"lr", lr},
          {"lr_z", lr_z},
          {"uniform_opening_plies", uniform_opening_plies},
          {"uniform_behavior", uniform_behavior},
          {"eval_games", eval_games},
          {"learn_env_model", learn_env_model},
          {"env_model_weight", env_model_weight},
          {"q_form_threshold", q_form_threshold},
          {"track_flow_mae", track_flow_mae},
          {"mae_rollouts", mae_rollouts},
          {"model_kind", model_kind},
          {"hidden", hidden},
          {"blocks", blocks}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("train config must be an object");
  TrainConfig c;
  const json known = c.to_json();
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw InvalidArgument("unknown train config key '" + k + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw InvalidArgument(std::string("train config key '") + key + "' has the wrong type");
    }
  };
  get("lambda", c.lambda);
  get("batch_size", c.batch_size);
  get("trajectories_per_epoch", c.trajectories_per_epoch);
  get("steps_per_epoch", c.steps_per_epoch);
  get("epochs", c.epochs);
  get("buffer_capacity", c.buffer_capacity);
  get("temperature", c.temperature);
  std::string s;
  if (j.contains("objective")) {
    get("objective", s);
    c.objective = objective_from_string(s);
  }
  if (j.contains("opponent")) {
    get("opponent", s);
    c.opponent = opponent_mode_from_string(s);
  }
  get("learner_side", c.learner_side);
  get("seed", c.seed);
  get("lr", c.lr);
  get("lr_z", c.lr_z);
  get("uniform_opening_plies", c.uniform_opening_plies);
  get("uniform_behavior", c.uniform_behavior);
  get("eval_games", c.eval_games);
  get("learn_env_model", c.learn_env_model);
  get("env_model_weight", c.env_model_weight);
  get("q_form_threshold", c.q_form_threshold);
  get("track_flow_mae", c.track_flow_mae);
  get("mae_rollouts", c.mae_rollouts);
  get("model_kind", c.model_kind);
  get("hidden", c.hidden);
  get("blocks", c.blocks);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

TrainSetup make_train_setup(std::shared_ptr<const TreeEnv> env, const TrainConfig& cfg) {
  cfg.validate();
  TrainSetup s;
  const int n = env->num_players();
  if (n != 1 && n != 2) throw InvalidArgument("training supports one- and two-player environments");
  const bool game = n == 2;
  auto fixed_views = [&](bool both) {
    if (both) {
      for (int side : {1, 2}) {
        s.views.push_back(std::make_shared<FixedOpponentEnv>(env, side, cfg.lambda));
        s.view_side.push_back(side);
      }
    } else {
      s.views.push_back(std::make_shared<FixedOpponentEnv>(env, cfg.learner_side, cfg.lambda));
      s.view_side.push_back(cfg.learner_side);
    }
  };
  switch (cfg.objective) {
    case Objective::kTB:
      if (!game) throw InvalidArgument("trajectory balance needs a two-player game");
      s.views = {env};
      s.view_side = {0};
      break;
    case Objective::kNaiveGfn:
      s.views = {env};
      s.view_side = {game ? 0 : 1};
      break;
    case Objective::kEDB:
      if (game && cfg.opponent != OpponentMode::kSelfPlay) {
        fixed_views(cfg.opponent == OpponentMode::kBothPerspectives);
      } else {
        s.views = {env};
        s.view_side = {game ? 0 : 1};
      }
      break;
    case Objective::kStochGfn:
      if (game) {
        if (cfg.opponent == OpponentMode::kSelfPlay) {
          throw InvalidArgument("stoch-gfn on a game needs a fixed-uniform opponent mode");
        }
        fixed_views(cfg.opponent == OpponentMode::kBothPerspectives);
      } else {
        s.views = {env};
        s.view_side = {1};
      }
      break;
  }
  return s;
}

std::shared_ptr<PolicyModel> make_model(std::shared_ptr<const TreeEnv> env, const TrainConfig& cfg) {
  if (cfg.model_kind == "tabular") return std::make_shared<TabularModel>(env);
  NeuralArch arch;
  arch.hidden = cfg.hidden;
  arch.blocks = cfg.blocks;
  arch.sides = std::max(env->num_players(), 1);
  return std::make_shared<NeuralModel>(env, arch, cfg.seed);
}

namespace {

void attach_rewards(const TreeEnv& env, Trajectory& t, double lambda) {
  const NodeInfo ti = env.info(t.terminal_state());
  t.outcome = ti.outcome;
  auto& last = t.steps.back();
  if (!ti.log_rewards.empty()) {
    last.log_reward = ti.log_rewards;
  } else {
    last.log_reward = make_rewards(ti.outcome, lambda, t);
  }
}

}  // namespace

std::vector<Trajectory> generate_trajectories(const TreeEnv& env, PolicyModel& model, int k,
                                              const TrainConfig& cfg, Rng& rng,
                                              int single_agent_side) {
  if (model.action_space_size() != env.action_space_size()) {
    throw InvalidArgument("model action space does not match " + env.name());
  }
  const bool game = env.num_players() == 2;
  const int width = env.action_space_size();
  std::vector<Trajectory> out;
  out.reserve(k);
  NodeInfo ni;
  ModelOutput mo;
  for (int j = 0; j < k; ++j) {
    int learner = cfg.learner_side;
    if (cfg.opponent == OpponentMode::kBothPerspectives) learner = 1 + j % 2;
    const int opening = cfg.uniform_opening_plies > 0 ? rng.uniform_int(cfg.uniform_opening_plies + 1) : 0;
    Trajectory t;
    StateKey s;
    for (int ply = 0;; ++ply) {
      env.describe(s, ni);
      if (ni.terminal()) break;
      TrajectoryStep st;
      st.state = s;
      st.mask = ActionMask::from_actions(width, ni.actions);
      Action a;
      if (ni.kind == NodeKind::kEnvironment) {
        st.curr_player = Owner::environment();
        a = ni.actions[rng.categorical(ni.env_probs)];
      } else {
        st.curr_player = Owner::player(ni.player);
        const bool uniform = cfg.uniform_behavior || ply < opening ||
                             (game && cfg.opponent != OpponentMode::kSelfPlay && ni.player != learner);
        if (uniform) {
          a = ni.actions[rng.uniform_int(static_cast<int>(ni.actions.size()))];
        } else {
          const int head = game ? ni.player : single_agent_side;
          model.forward(s, head, mo);
          a = sample_action(mo.logits, st.mask, cfg.temperature, rng);
        }
      }
      st.action = a;
      t.steps.push_back(std::move(st));
      s.push(a);
    }
    if (t.steps.empty()) throw ContractError("the root of " + env.name() + " is terminal");
    t.steps.back().done = true;
    attach_rewards(env, t, cfg.lambda);
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Head {
  int player;  // reward / ownership index in the view
  int side;    // model head
};

std::vector<Head> heads_of(const TreeEnv& view, int view_side) {
  if (view.num_players() == 2) return {{1, 1}, {2, 2}};
  return {{1, view_side}};
}

// d(loss)/d(logits) from d(loss)/d(log p[a]) through a masked log-softmax.
void scatter_log_softmax_grad(const std::vector<double>& lp, const ActionMask& mask, Action a,
                              double g, std::vector<double>& out) {
  out.assign(lp.size(), 0.0);
  for (int j = 0; j < static_cast<int>(lp.size()); ++j) {
    if (!mask.test(j)) continue;
    out[j] = -g * std::exp(lp[j]);
  }
  out[a] += g;
}

class Accumulator {
 public:
  Accumulator(PolicyModel& model, double scale, bool with_grad)
      : model_(model), scale_(scale), with_grad_(with_grad) {}

  void flow(const StateKey& s, int side, double g) {
    if (with_grad_ && g != 0) model_.backward(s, side, {}, scale_ * g);
  }
  void logits(const StateKey& s, int side, std::vector<double> g) {
    if (!with_grad_) return;
    for (double& v : g) v *= scale_;
    model_.backward(s, side, g, 0.0);
  }
  void log_z(double g) {
    if (with_grad_) model_.log_z().grad[0] += scale_ * g;
  }
  bool with_grad() const { return with_grad_; }

 private:
  PolicyModel& model_;
  double scale_;
  bool with_grad_;
};

double tb_trajectory(const Trajectory& t, PolicyModel& model, const TrainConfig& cfg,
                     Accumulator& acc) {
  TbInput in = tb_input_skeleton(t, cfg.lambda);
  in.log_z = model.log_z().value[0];
  ModelOutput mo;
  for (std::size_t k = 0; k < t.steps.size(); ++k) {
    model.forward(t.steps[k].state, in.players[k], mo);
    in.logits[k] = mo.logits;
  }
  TbGrad g;
  const double v = tb_loss(in, acc.with_grad() ? &g : nullptr);
  if (acc.with_grad()) {
    acc.log_z(g.log_z);
    for (std::size_t k = 0; k < t.steps.size(); ++k) {
      acc.logits(t.steps[k].state, in.players[k], std::move(g.logits[k]));
    }
  }
  return v;
}

double naive_trajectory(const Trajectory& t, const TreeEnv& view, int view_side,
                        PolicyModel& model, const TrainConfig& cfg, Accumulator& acc) {
  TbInput in;
  std::vector<const StateKey*> states;
  ModelOutput mo;
  for (const auto& st : t.steps) {
    if (!st.curr_player.is_player()) continue;
    const int head = view.num_players() == 2 ? st.curr_player.id() : view_side;
    model.forward(st.state, head, mo);
    in.logits.push_back(mo.logits);
    in.masks.push_back(st.mask);
    in.players.push_back(head);
    in.actions.push_back(st.action);
    states.push_back(&st.state);
  }
  const auto& last = t.steps.back();
  in.log_r1 = t.outcome != Outcome::kNone && view.num_players() == 2
                  ? raw_outcome_log_reward(t.outcome, 1, cfg.lambda)
                  : last.log_reward.at(0);
  in.log_z = model.log_z().value[0];
  TbGrad g;
  const double v = naive_tb_loss(in, acc.with_grad() ? &g : nullptr);
  if (acc.with_grad()) {
    acc.log_z(g.log_z);
    for (std::size_t k = 0; k < states.size(); ++k) {
      acc.logits(*states[k], in.players[k], std::move(g.logits[k]));
    }
  }
  return v;
}

double stochgfn_trajectory(const Trajectory& t, const TreeEnv& view, int view_side,
                           PolicyModel& model, Accumulator& acc) {
  if (view.num_players() != 1) throw ContractError("stoch-gfn trains single-agent views only");
  const int side = view_side;
  double total = 0;
  ModelOutput ms, mc;
  std::vector<double> lp;
  NodeInfo ni;
  for (const auto& st : t.steps) {
    const StateKey c = st.state.child(st.action);
    model.forward(st.state, side, ms);
    model.forward(c, side, mc);
    double gs = 0, gp = 0, gc = 0;
    if (st.curr_player.is_player()) {
      masked_log_softmax(ms.logits, st.mask, lp);
      total += db_edge_term(ms.log_flow, lp[st.action], mc.log_flow, &gs, &gp, &gc);
      std::vector<double> gl;
      scatter_log_softmax_grad(lp, st.mask, st.action, gp, gl);
      acc.logits(st.state, side, std::move(gl));
    } else {
      view.describe(st.state, ni);
      const auto it = std::lower_bound(ni.actions.begin(), ni.actions.end(), st.action);
      const double lpe = std::log(ni.env_probs[it - ni.actions.begin()]);
      total += db_edge_term(ms.log_flow, lpe, mc.log_flow, &gs, nullptr, &gc);
    }
    acc.flow(st.state, side, gs);
    acc.flow(c, side, gc);
  }
  const StateKey x = t.terminal_state();
  model.forward(x, side, mc);
  double gx = 0;
  total += terminal_term(mc.log_flow, t.steps.back().log_reward.at(0), &gx);
  acc.flow(x, side, gx);
  return total;
}

constexpr int kEnvModelSide = 0;
constexpr int kQSideBase = 100;

double edb_trajectory(const Trajectory& t, const TreeEnv& view, int view_side, PolicyModel& model,
                      const TrainConfig& cfg, Accumulator& acc, std::map<std::string, double>& terms) {
  const auto heads = heads_of(view, view_side);
  const int np = view.num_players();
  std::vector<double> log_b(np, 0.0);
  NodeInfo ni, ci;
  ModelOutput mo;
  std::vector<std::vector<double>> lf(heads.size());
  std::vector<std::vector<char>> pinned(heads.size());
  std::vector<double> w, gc, lse_w;
  double total = 0;
  for (const auto& st : t.steps) {
    const StateKey& s = st.state;
    view.describe(s, ni);
    const int k = static_cast<int>(ni.actions.size());
    const bool env_state = ni.kind == NodeKind::kEnvironment;
    std::vector<StateKey> children;
    children.reserve(k);
    for (Action a : ni.actions) children.push_back(s.child(a));
    // Child log-flows per head, terminal children pinned to rewards.
    for (std::size_t h = 0; h < heads.size(); ++h) {
      lf[h].assign(k, 0.0);
      pinned[h].assign(k, 0);
    }
    for (int c = 0; c < k; ++c) {
      view.describe(children[c], ci);
      if (ci.terminal()) {
        for (std::size_t h = 0; h < heads.size(); ++h) {
          const int p = heads[h].player;
          double r;
          if (!ci.log_rewards.empty()) {
            r = ci.log_rewards.at(p - 1);
          } else {
            const double lb = log_b[p - 1] + (ni.kind == NodeKind::kPlayer && ni.player == p
                                                   ? std::log(static_cast<double>(k))
                                                   : 0.0);
            r = raw_outcome_log_reward(ci.outcome, p, cfg.lambda) - lb;
          }
          lf[h][c] = r;
          pinned[h][c] = 1;
        }
      } else {
        for (std::size_t h = 0; h < heads.size(); ++h) {
          model.forward(children[c], heads[h].side, mo);
          lf[h][c] = mo.log_flow;
        }
      }
    }
    const bool q_form = env_state && k > cfg.q_form_threshold;
    std::vector<double> env_lp;
    if (env_state) {
      env_lp.resize(k);
      if (cfg.learn_env_model) {
        model.forward(s, kEnvModelSide, mo);
        std::vector<double> el(k);
        for (int c = 0; c < k; ++c) el[c] = mo.logits[ni.actions[c]];
        const int observed =
            static_cast<int>(std::lower_bound(ni.actions.begin(), ni.actions.end(), st.action) -
                             ni.actions.begin());
        std::vector<double> ge(k, 0.0);
        const double nll = env_model_nll(el, observed, ge);
        terms["env_model"] += cfg.env_model_weight * nll;
        total += cfg.env_model_weight * nll;
        std::vector<double> gl(mo.logits.size(), 0.0);
        for (int c = 0; c < k; ++c) gl[ni.actions[c]] = cfg.env_model_weight * ge[c];
        acc.logits(s, kEnvModelSide, std::move(gl));
        const double z = log_sum_exp(el);
        for (int c = 0; c < k; ++c) env_lp[c] = el[c] - z;
      } else {
        for (int c = 0; c < k; ++c) env_lp[c] = std::log(ni.env_probs[c]);
      }
    }
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const int p = heads[h].player;
      model.forward(s, heads[h].side, mo);
      const double lf_s = mo.log_flow;
      double gs = 0;
      gc.assign(k, 0.0);
      double v;
      const char* term;
      if (q_form) {
        const int idx = static_cast<int>(
            std::lower_bound(ni.actions.begin(), ni.actions.end(), st.action) - ni.actions.begin());
        ModelOutput mq;
        model.forward(s, kQSideBase + heads[h].side, mq);
        std::vector<double> ql(k), gq(k, 0.0);
        for (int c = 0; c < k; ++c) ql[c] = mq.logits[ni.actions[c]];
        v = edb_env_q_term(lf_s, ql, idx, lf[h][idx], env_lp[idx], &gs, gq, &gc[idx]);
        std::vector<double> gl(mq.logits.size(), 0.0);
        for (int c = 0; c < k; ++c) gl[ni.actions[c]] = gq[c];
        acc.logits(s, kQSideBase + heads[h].side, std::move(gl));
        term = "env";
      } else {
        if (env_state) {
          w = env_lp;
          term = "env";
        } else if (np == 1 || ni.player == p) {
          w.assign(k, 0.0);
          term = "agent";
        } else {
          // The other player's current policy, held fixed.
          std::size_t o = 0;
          while (heads[o].player != ni.player) ++o;
          const double z = log_sum_exp(lf[o]);
          w.resize(k);
          for (int c = 0; c < k; ++c) w[c] = lf[o][c] - z;
          term = "opponent";
        }
        v = edb_env_term(lf_s, lf[h], w, &gs, gc);
      }
      terms[term] += v;
      total += v;
      acc.flow(s, heads[h].side, gs);
      for (int c = 0; c < k; ++c) {
        if (!pinned[h][c]) acc.flow(children[c], heads[h].side, gc[c]);
      }
    }
    if (ni.kind == NodeKind::kPlayer && np == 2) log_b[ni.player - 1] += std::log(static_cast<double>(k));
  }
  return total;
}

}  // namespace

BatchLoss batch_loss(const TrainSetup& setup, PolicyModel& model, const TrainConfig& cfg,
                     const ReplayBuffer& buffer, std::span<const std::size_t> batch,
                     bool with_grad) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  Accumulator acc(model, scale, with_grad);
  BatchLoss out;
  for (std::size_t i : batch) {
    const Trajectory& t = buffer.at(i);
    const int v = buffer.view_at(i);
    const TreeEnv& view = *setup.views.at(v);
    const int vs = setup.view_side.at(v);
    double l = 0;
    switch (cfg.objective) {
      case Objective::kTB: l = tb_trajectory(t, model, cfg, acc); break;
      case Objective::kNaiveGfn: l = naive_trajectory(t, view, vs, model, cfg, acc); break;
      case Objective::kStochGfn: l = stochgfn_trajectory(t, view, vs, model, acc); break;
      case Objective::kEDB: {
        std::map<std::string, double> terms;
        l = edb_trajectory(t, view, vs, model, cfg, acc, terms);
        for (const auto& [k, x] : terms) out.terms[k] += scale * x;
        break;
      }
    }
    out.loss += scale * l;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct MaeTarget {
  std::shared_ptr<const GameTree> tree;
  FlowTable table;
  std::vector<NodeId> states;
  std::vector<Head> heads;
};

std::vector<MaeTarget> build_mae_targets(const TrainSetup& setup, const TrainConfig& cfg) {
  std::vector<MaeTarget> out;
  for (std::size_t v = 0; v < setup.views.size(); ++v) {
    const TreeEnv& view = *setup.views[v];
    auto tree = GameTree::build(view);
    Rng rng(cfg.seed ^ 0x6d61652d73616d70ull ^ v);
    auto states = uniform_rollout_states(*tree, cfg.mae_rollouts, rng);
    if (view.num_players() == 2) {
      auto table = solve_afn(tree, outcome_rewards(*tree, cfg.lambda), {});
      out.push_back({tree, std::move(table), std::move(states), heads_of(view, 0)});
    } else {
      auto table = solve_eflow(tree, env_rewards(*tree), {});
      out.push_back({tree, std::move(table), std::move(states), heads_of(view, setup.view_side[v])});
    }
  }
  return out;
}

json mae_metrics(std::vector<MaeTarget>& targets, PolicyModel& model) {
  double node = 0, edge = 0;
  int count = 0;
  for (auto& t : targets) {
    for (const auto& h : t.heads) {
      const FlowMae m = flow_mae(t.table, h.player, t.states, model, h.side, true);
      node += m.node;
      edge += m.edge;
      ++count;
    }
  }
  return {{"node", node / count}, {"edge", edge / count}};
}

void write_file_atomic(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw InvalidArgument("cannot write " + path);
    os << body;
  }
  std::filesystem::rename(tmp, path);
}

json config_without_epochs(const TrainConfig& cfg) {
  json j = cfg.to_json();
  j.erase("epochs");
  return j;
}

}  // namespace

TrainResult train(std::shared_ptr<const TreeEnv> env, const TrainConfig& cfg, const TrainIo& io) {
  cfg.validate();
  const TrainSetup setup = make_train_setup(env, cfg);
  TrainResult res;
  res.model = make_model(env, cfg);
  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.lr_z = cfg.lr_z;
  Adam adam(ac);
  Rng rng(cfg.seed);
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));
  long long step = 0;
  int first_epoch = 0;

  if (io.resume) {
    if (io.checkpoint_path.empty()) throw InvalidArgument("resume needs a checkpoint path");
    Checkpoint ck = load_checkpoint(io.checkpoint_path, env);
    if (ck.extra.value("config", json()) .is_null() ||
        config_without_epochs(TrainConfig::from_json(ck.extra.at("config"))) != config_without_epochs(cfg)) {
      throw InvalidArgument("checkpoint " + io.checkpoint_path + " was written with a different config");
    }
    res.model = std::shared_ptr<PolicyModel>(std::move(ck.model));
    adam.set_steps(ck.adam_steps);
    rng.set_state(ck.rng_state);
    step = ck.step;
    first_epoch = ck.extra.at("epoch").get<int>();
    std::ifstream bs(io.checkpoint_path + ".buffer");
    if (!bs) throw InvalidArgument("missing replay buffer next to " + io.checkpoint_path);
    buffer = ReplayBuffer::from_json(json::parse(bs));
  }

  std::ofstream metrics;
  if (!io.metrics_path.empty()) {
    metrics.open(io.metrics_path, io.resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw InvalidArgument("cannot write metrics to " + io.metrics_path);
  }
  auto emit = [&](json rec) {
    if (metrics.is_open()) metrics << rec.dump() << '\n';
    res.metrics.push_back(std::move(rec));
  };

  std::vector<MaeTarget> mae;
  if (cfg.track_flow_mae) {
    if (cfg.objective != Objective::kEDB) throw InvalidArgument("track_flow_mae needs the edb objective");
    mae = build_mae_targets(setup, cfg);
  }
  const bool game = env->num_players() == 2;
  PolicyModel& model = *res.model;

  for (int epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
    // Generation sees a frozen model; the buffer is filled before any step.
    const int nv = static_cast<int>(setup.views.size());
    for (int v = 0; v < nv; ++v) {
      const int k = cfg.trajectories_per_epoch / nv + (v < cfg.trajectories_per_epoch % nv ? 1 : 0);
      TrainConfig gen = cfg;
      if (setup.views[v]->num_players() == 1) gen.opponent = OpponentMode::kSelfPlay;
      for (auto& t : generate_trajectories(*setup.views[v], model, k, gen, rng,
                                           std::max(setup.view_side[v], 1))) {
        buffer.push(std::move(t), v);
      }
    }
    double loss_sum = 0;
    for (int l = 0; l < cfg.steps_per_epoch; ++l) {
      const auto batch = buffer.sample(static_cast<std::size_t>(cfg.batch_size), rng);
      const BatchLoss bl = batch_loss(setup, model, cfg, buffer, batch, true);
      if (!std::isfinite(bl.loss)) {
        const std::string path = io.bad_batch_path.empty() ? "bad_batch.jsonl" : io.bad_batch_path;
        std::ofstream os(path);
        std::vector<Trajectory> ts;
        for (auto i : batch) ts.push_back(buffer.at(i));
        write_trajectories(os, ts);
        throw NumericError("nonfinite loss at step " + std::to_string(step) +
                           "; batch written to " + path);
      }
      adam.step(model);
      ++step;
      loss_sum += bl.loss;
      json rec = {{"type", "step"}, {"step", step}, {"epoch", epoch}, {"loss", bl.loss},
                  {"log_z", model.log_z().value[0]}};
      if (!bl.terms.empty()) rec["terms"] = bl.terms;
      emit(std::move(rec));
    }
    json rec = {{"type", "epoch"},
                {"epoch", epoch},
                {"step", step},
                {"loss_mean", loss_sum / cfg.steps_per_epoch},
                {"log_z", model.log_z().value[0]},
                {"buffer", buffer.size()}};
    if (game && cfg.eval_games > 0) {
      const PolicySource src = cfg.objective == Objective::kEDB ? PolicySource::kFlows : PolicySource::kLogits;
      ModelAgent agent("model", res.model, 0.0, src, cfg.lambda);
      const WinDrawLoss r = evaluate_vs_uniform(*env, agent, cfg.eval_games, cfg.seed * 7919 + epoch);
      rec["eval"] = {{"games", r.games}, {"win", r.win_rate()}, {"draw", r.draw_rate()},
                     {"loss", r.loss_rate()}};
    }
    if (!mae.empty()) rec["flow_mae"] = mae_metrics(mae, model);
    emit(rec);
    if (io.on_epoch) io.on_epoch(rec);
    if (!io.checkpoint_path.empty()) {
      write_file_atomic(io.checkpoint_path + ".buffer", buffer.to_json().dump());
      save_checkpoint(io.checkpoint_path, model, adam.steps(), step, rng,
                      {{"config", cfg.to_json()}, {"epoch", epoch + 1},
                       {"policy_source", cfg.objective == Objective::kEDB ? "flows" : "logits"},
                       {"lambda", cfg.lambda}});
    }
    if (io.stop_when && io.stop_when(rec)) break;
  }
  res.steps = step;
  return res;
}

}  // namespace afn
