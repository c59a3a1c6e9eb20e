#include <Eigen/Dense>
#include <cmath>
#include <functional>

#include "afn/exact_flows.hpp"
#include "afn/games.hpp"
#include "afn/math.hpp"
#include "afn/objectives.hpp"
#include "doctest.h"
#include "fd_check.hpp"
#include "test_util.hpp"

using namespace afn;

using testing::fd_error;
using testing::pack;
using testing::randn;
using testing::unpack;

TEST_CASE("masked log-softmax") {
  const std::vector<double> logits = {1.0, 2.0, 3.0, 100.0};
  const auto mask = ActionMask::from_actions(4, std::vector<Action>{0, 1, 2});
  std::vector<double> out;
  masked_log_softmax(logits, mask, out);
  CHECK(out[3] == kLogZero);
  CHECK(std::exp(out[0]) + std::exp(out[1]) + std::exp(out[2]) == doctest::Approx(1.0));
  CHECK(out[2] - out[1] == doctest::Approx(1.0));
  masked_log_softmax(logits, mask, out, 2.0);
  CHECK(out[2] - out[1] == doctest::Approx(0.5));
  CHECK_THROWS_AS(masked_log_softmax(logits, ActionMask(4), out), ContractError);
  CHECK_THROWS_AS(masked_log_softmax(logits, ActionMask(3), out), InvalidArgument);
  CHECK_THROWS_AS(masked_log_softmax(logits, mask, out, 0.0), InvalidArgument);
}

TEST_CASE("per-term gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const int k = 2 + rng.uniform_int(4);
    CAPTURE(seed);

    // fm and edb env terms: x = (log F(s), log F(children)).
    const auto x = randn(rng, 1 + k);
    const auto lpe = [&] {
      std::vector<double> w = randn(rng, k);
      log_softmax_inplace(w);
      return w;
    }();
    for (int form = 0; form < 2; ++form) {
      auto f = [&](const std::vector<double>& v) {
        std::span<const double> kids(v.data() + 1, k);
        return form == 0 ? fm_term(v[0], kids) : edb_env_term(v[0], kids, lpe);
      };
      std::vector<double> g(1 + k, 0.0);
      std::span<double> gk(g.data() + 1, k);
      if (form == 0) fm_term(x[0], std::span<const double>(x.data() + 1, k), &g[0], gk);
      else edb_env_term(x[0], std::span<const double>(x.data() + 1, k), lpe, &g[0], gk);
      CHECK(fd_error(f, x, g) <= 1e-4);
    }

    // db edge and terminal terms.
    const auto e = randn(rng, 3);
    std::vector<double> ge(3, 0.0);
    db_edge_term(e[0], e[1], e[2], &ge[0], &ge[1], &ge[2]);
    CHECK(fd_error([](const std::vector<double>& v) { return db_edge_term(v[0], v[1], v[2]); }, e,
                   ge) <= 1e-4);
    std::vector<double> gt(1, 0.0);
    terminal_term(e[0], e[1], &gt[0]);
    CHECK(fd_error([&](const std::vector<double>& v) { return terminal_term(v[0], e[1]); },
                   {e[0]}, gt) <= 1e-4);

    // Q-form env edge: x = (log F(s), q logits, log F(c)).
    const int child = rng.uniform_int(k);
    const auto q = randn(rng, 2 + k);
    auto fq = [&](const std::vector<double>& v) {
      return edb_env_q_term(v[0], std::span<const double>(v.data() + 1, k), child, v[1 + k],
                            lpe[child]);
    };
    std::vector<double> gq(2 + k, 0.0);
    edb_env_q_term(q[0], std::span<const double>(q.data() + 1, k), child, q[1 + k], lpe[child],
                   &gq[0], std::span<double>(gq.data() + 1, k), &gq[1 + k]);
    CHECK(fd_error(fq, q, gq) <= 1e-4);

    // Environment-model likelihood.
    const auto logits = randn(rng, k);
    std::vector<double> gl(k, 0.0);
    env_model_nll(logits, child, gl);
    CHECK(fd_error([&](const std::vector<double>& v) { return env_model_nll(v, child); }, logits,
                   gl) <= 1e-4);
  }
}

TEST_CASE("trajectory balance gradients match finite differences") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const Trajectory t = testing::uniform_rollout(*g, rng);
    TbInput in = tb_input_skeleton(t, 1.0 + seed);
    in.log_z = rng.normal();
    for (auto& l : in.logits) l = randn(rng, 9);
    const std::size_t n = in.logits.size();
    auto flat = [&](const TbInput& v) {
      std::vector<double> x = {v.log_z};
      for (const auto& l : v.logits) x.insert(x.end(), l.begin(), l.end());
      return x;
    };
    auto from = [&](const std::vector<double>& x) {
      TbInput v = in;
      v.log_z = x[0];
      for (std::size_t k = 0; k < n; ++k) v.logits[k].assign(x.begin() + 1 + 9 * k, x.begin() + 10 + 9 * k);
      return v;
    };
    for (bool naive : {false, true}) {
      TbGrad gr;
      const double v = naive ? naive_tb_loss(in, &gr) : tb_loss(in, &gr);
      if (!naive) CHECK(v == doctest::Approx(tb_residual(in) * tb_residual(in)));
      std::vector<double> ga = {gr.log_z};
      for (const auto& l : gr.logits) ga.insert(ga.end(), l.begin(), l.end());
      auto f = [&](const std::vector<double>& x) {
        return naive ? naive_tb_loss(from(x)) : tb_loss(from(x));
      };
      CHECK(fd_error(f, flat(in), ga) <= 1e-4);
    }
  }
}

TEST_CASE("whole-tree loss gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = GameTree::build(*make_random_toy_tree(seed, 3, 3));
    const auto r = env_rewards(*t);
    Rng rng(seed);
    const std::size_t n = t->size();
    const auto x = randn(rng, 3 * n);
    for (int which = 0; which < 3; ++which) {
      const auto items = which == 2 ? all_stochgfn_items(*t) : all_edb_items(*t, which == 1);
      auto f = [&](const std::vector<double>& v) {
        const TreeParams p = unpack(v, n);
        return which == 2 ? stochgfn_db_loss(*t, p, r, items).total
                          : edb_losses(*t, p, r, items).total;
      };
      TreeParams g;
      const TreeParams p = unpack(x, n);
      if (which == 2) stochgfn_db_loss(*t, p, r, items, &g);
      else edb_losses(*t, p, r, items, &g);
      CHECK(fd_error(f, x, pack(g)) <= 1e-4);
    }
  }
}

TEST_CASE("term routing rejects the wrong owner class") {
  const auto t = GameTree::build(*make_two_chance_tree());
  const auto r = env_rewards(*t);
  const TreeParams p = params_from_flows(solve_eflow(t, r));
  const NodeId env_child = t->find(StateKey::parse("0,0"));
  const NodeId agent_child = t->find(StateKey::parse("0"));
  const TermItem bad[] = {{TermKind::kAgentEdge, env_child}, {TermKind::kEnvState, t->root()},
                          {TermKind::kEnvEdgeQ, agent_child}, {TermKind::kTerminal, agent_child},
                          {TermKind::kEnvEdge, env_child}};
  for (const auto& it : bad) {
    CHECK_THROWS_AS(edb_losses(*t, p, r, std::span<const TermItem>(&it, 1)), ContractError);
  }
  const TermItem bad_db[] = {{TermKind::kEnvState, agent_child}, {TermKind::kEnvEdge, agent_child}};
  for (const auto& it : bad_db) {
    CHECK_THROWS_AS(stochgfn_db_loss(*t, p, r, std::span<const TermItem>(&it, 1)), ContractError);
  }
}

TEST_CASE("trajectory balance holds at the exact two-player flows") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  const auto tree = GameTree::build(*g);
  const double lambda = 1.0;
  const FlowTable f = solve_afn(tree, outcome_rewards(*tree, lambda));
  const EdgePolicy pol = exact_policy(f);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Trajectory t = testing::uniform_rollout(*g, rng);
    TbInput in = tb_input_skeleton(t, lambda);
    in.log_z = f.log_flow(tree->root(), 1);
    for (std::size_t k = 0; k < t.steps.size(); ++k) {
      const NodeId s = tree->find(t.steps[k].state);
      in.logits[k].assign(9, 0.0);
      for (int j = 0; j < tree->num_children(s); ++j) {
        const NodeId c = tree->child(s, j);
        in.logits[k][tree->action(c)] = pol[c];
      }
    }
    CHECK(std::abs(tb_residual(in)) < 1e-9);
  }
}

TEST_CASE("rewards from trajectories") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  Trajectory t;
  StateKey s;
  for (Action a : {0, 3, 1, 4, 2}) {
    TrajectoryStep st;
    st.state = s;
    const auto ni = g->info(s);
    st.mask = ActionMask::from_actions(9, ni.actions);
    st.curr_player = ni.owner();
    st.action = a;
    s.push(a);
    t.steps.push_back(st);
  }
  CHECK_THROWS_AS(branch_factor(t, 1), ContractError);
  t.steps.back().done = true;
  t.steps.back().log_reward = {1.0};
  t.outcome = Outcome::kP1Win;
  CHECK(branch_factor(t, 1) == doctest::Approx(std::log(9.0 * 7 * 5)));
  CHECK(branch_factor(t, 2) == doctest::Approx(std::log(8.0 * 6)));
  const auto r = make_rewards(t.outcome, 3.0, t);
  CHECK(r[0] == doctest::Approx(3.0 - std::log(315.0)));
  CHECK(r[1] == doctest::Approx(-3.0 - std::log(48.0)));
  const TbInput in = tb_input_skeleton(t, 3.0);
  CHECK(in.players == std::vector<int>{1, 2, 1, 2, 1});
  CHECK(in.log_r1 == doctest::Approx(r[0]));
  CHECK(in.log_b2 == doctest::Approx(std::log(48.0)));
  CHECK_THROWS_AS(make_rewards(Outcome::kNone, 1.0, t), InvalidArgument);
}

TEST_CASE("expected detailed balance is satisfiable where the augmented graph is not") {
  const auto t = GameTree::build(*make_two_chance_tree());
  const auto r = env_rewards(*t);
  const NodeId left = t->find(StateKey::parse("0"));
  const NodeId right = t->find(StateKey::parse("1"));

  TreeParams p;
  p.log_flow.assign(t->size(), 0.0);
  p.log_policy.assign(t->size(), 0.0);
  p.q_logits.assign(t->size(), 0.0);
  p.log_flow[t->root()] = std::log(7.5);
  p.log_flow[left] = std::log(1.5);
  p.log_flow[right] = std::log(6.0);
  p.log_policy[left] = std::log(0.2);
  p.log_policy[right] = std::log(0.8);
  for (NodeId n = 0; n < t->size(); ++n) {
    if (t->terminal(n)) p.log_flow[n] = r.log_reward(n, 1);
  }
  CHECK(edb_losses(*t, p, r, all_edb_items(*t)).total <= 1e-18);

  const TreeParams opt = params_from_flows(solve_eflow(t, r));
  CHECK(edb_losses(*t, opt, r, all_edb_items(*t)).total <= 1e-18);
  CHECK(edb_losses(*t, opt, r, all_edb_items(*t, true)).total <= 1e-18);

  // tests/oracles/stochgfn_bounds.py
  const double oracle = 0.240226506959;
  double grid_min = INFINITY;
  for (int i = 0; i <= 1000; ++i) {
    const double q = i / 1000.0;
    EdgePolicy pol(t->size(), 0.0);
    pol[left] = std::log(q);
    pol[right] = std::log(1 - q);
    const double v = stochgfn_min_loss_given_policy(*t, pol, r).loss;
    grid_min = std::min(grid_min, std::isnan(v) ? INFINITY : v);
  }
  CHECK(grid_min >= oracle - 1e-9);
  CHECK(grid_min == doctest::Approx(oracle).epsilon(1e-9));
  CHECK(stochgfn_loss_lower_bound(*t, r) == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("stochastic-GFN fit matches a dense least-squares oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = GameTree::build(*make_random_toy_tree(seed, 3, 3));
    const auto r = env_rewards(*t);
    Rng rng(seed);
    EdgePolicy pol(t->size(), 0.0);
    for (NodeId s = 0; s < t->size(); ++s) {
      if (t->kind(s) != NodeKind::kPlayer) continue;
      std::vector<double> w = randn(rng, t->num_children(s));
      log_softmax_inplace(w);
      for (int j = 0; j < t->num_children(s); ++j) pol[t->child(s, j)] = w[j];
    }
    const auto items = all_stochgfn_items(*t);
    const int n = static_cast<int>(t->size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(items.size(), n);
    Eigen::VectorXd b(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      const NodeId c = items[i].node;
      if (items[i].kind == TermKind::kTerminal) {
        a(i, c) = 1;
        b(i) = r.log_reward(c, 1);
      } else {
        const NodeId s = t->parent(c);
        a(i, s) = 1;
        a(i, c) = -1;
        b(i) = -(items[i].kind == TermKind::kEnvEdge ? std::log(t->env_prob(c)) : pol[c]);
      }
    }
    const Eigen::VectorXd x = a.colPivHouseholderQr().solve(b);
    const double want = (a * x - b).squaredNorm();
    const StochGfnFit fit = stochgfn_min_loss_given_policy(*t, pol, r);
    CHECK(fit.loss == doctest::Approx(want).epsilon(1e-9));
    TreeParams p;
    p.log_flow = fit.log_flow;
    p.log_policy = pol;
    p.q_logits.assign(t->size(), 0.0);
    CHECK(stochgfn_db_loss(*t, p, r, items).total == doctest::Approx(fit.loss).epsilon(1e-9));
    CHECK(stochgfn_loss_lower_bound(*t, r) <= fit.loss + 1e-12);
  }
}

TEST_CASE("sequence environment: exact optimum and augmented-graph bound") {
  // tests/oracles/stochgfn_bounds.py
  const double bounds[2][2] = {{0.0, 0.0}, {16371.131423692394, 23216.940069865672}};
  for (int ia = 0; ia < 2; ++ia) {
    for (int ib = 0; ib < 2; ++ib) {
      const double alpha = ia * 0.5, beta = ib ? 4.0 : 1.0;
      CAPTURE(alpha);
      CAPTURE(beta);
      const auto env = make_sequence_env(SequenceEnvSpec::with_random_pwm(4, 4, alpha, beta, 0));
      const auto t = GameTree::build(*env);
      const auto r = env_rewards(*t);
      const TreeParams opt = params_from_flows(solve_eflow(t, r));
      CHECK(edb_losses(*t, opt, r, all_edb_items(*t)).total <= 1e-18);
      const double lb = stochgfn_loss_lower_bound(*t, r);
      CHECK(lb == doctest::Approx(bounds[ia][ib]).epsilon(1e-9));
      if (alpha > 0) {
        const EdgePolicy pol = exact_policy(solve_eflow(t, r));
        CHECK(stochgfn_min_loss_given_policy(*t, pol, r).loss >= lb);
      }
    }
  }
}
