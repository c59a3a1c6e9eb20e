#include <cmath>
#include <set>
#include <sstream>

#include "afn/exact_flows.hpp"
#include "afn/games.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace afn;

namespace {

std::shared_ptr<const GameTree> ttt_tree() {
  static const auto t = GameTree::build(*make_board_game(BoardGameSpec::tictactoe()));
  return t;
}

}  // namespace

TEST_CASE("game tree structure") {
  const auto t = ttt_tree();
  CHECK(t->size() == 549946);
  CHECK(t->num_children(t->root()) == 9);
  CHECK(t->alternating_two_player());
  CHECK_FALSE(t->has_env_states());
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const NodeId n = static_cast<NodeId>(rng.uniform_int(static_cast<int>(t->size())));
    const StateKey k = t->key(n);
    CHECK(t->find(k) == n);
    CHECK(t->depth(n) == static_cast<int>(k.depth()));
    if (n != t->root()) {
      CHECK(t->key(t->parent(n)) == k.parent());
      CHECK(t->action(n) == k.back());
      CHECK(t->parent(n) < n);
    }
  }
  CHECK(t->find(StateKey::parse("0,0")) == kNoNode);
  // Player 1 faced 9 and 7 moves; player 2 faced 8.
  const NodeId n = t->find(StateKey::parse("0,1,2"));
  CHECK(t->log_branch(n, 1) == doctest::Approx(std::log(63.0)));
  CHECK(t->log_branch(n, 2) == doctest::Approx(std::log(8.0)));
  CHECK_THROWS_AS(GameTree::build(*make_board_game(BoardGameSpec::tictactoe()), 1000),
                  SizeGuardError);
}

TEST_CASE("stochastic toy tree flows") {
  const auto t = GameTree::build(*make_two_chance_tree());
  const auto r = env_rewards(*t);
  const FlowTable f = solve_eflow(t, r);
  const NodeId left = t->find(StateKey::parse("0"));
  const NodeId right = t->find(StateKey::parse("1"));
  CHECK(f.flow(left) == doctest::Approx(1.5));
  CHECK(f.flow(right) == doctest::Approx(6.0));
  CHECK(f.flow(t->root()) == doctest::Approx(7.5));
  CHECK(std::exp(f.log_policy(left)) == doctest::Approx(0.2));
  CHECK(std::exp(f.log_policy(t->find(StateKey::parse("1,1")))) == doctest::Approx(0.5));
  CHECK(edb_residual(f, r).max() < 1e-12);
  CHECK_THROWS_AS(solve_gfn(t, r), ContractError);

  const auto d = GameTree::build(*make_two_chance_tree(true));
  CHECK(solve_eflow(d, env_rewards(*d)).flow(d->root()) == doctest::Approx(5.0));

  // Without environment states the expected flows are the plain sums.
  const auto det = GameTree::build(*make_random_toy_tree(3, 4, 3, 0.0));
  REQUIRE_FALSE(det->has_env_states());
  const auto dr = env_rewards(*det);
  const FlowTable a = solve_gfn(det, dr);
  const FlowTable b = solve_eflow(det, dr);
  double total = 0;
  for (NodeId n = 0; n < det->size(); ++n) {
    CHECK(a.log_flow(n) == doctest::Approx(b.log_flow(n)));
    if (det->terminal(n)) total += std::exp(dr.log_reward(n, 1));
  }
  CHECK(a.flow(det->root()) == doctest::Approx(total));
}

TEST_CASE("two-player flows on small games") {
  // Single move, win or loss: log Z = log cosh(1) at lambda = 1.
  const auto single = GameTree::build(*make_single_move_game({Outcome::kP1Win, Outcome::kP2Win}));
  const FlowTable fs = solve_afn(single, outcome_rewards(*single, 1.0));
  CHECK(fs.flow(single->root(), 1) == doctest::Approx(1.5430806348));

  // Hand-derived: after move 0 player 2 weighs (win, draw) by e^-1 and 1;
  // after move 1 it weighs (loss, win) by e and e^-1.
  const auto tbt = GameTree::build(*make_two_by_two_game(
      {{{Outcome::kP1Win, Outcome::kDraw}, {Outcome::kP2Win, Outcome::kP1Win}}}));
  const FlowTable ft = solve_afn(tbt, outcome_rewards(*tbt, 1.0));
  const double e = std::exp(1.0);
  const double g0 = 2.0 / (1.0 + 1.0 / e);
  const double g1 = 2.0 / (e + 1.0 / e);
  CHECK(ft.flow(tbt->root(), 1) == doctest::Approx((g0 + g1) / 2));
  CHECK(std::exp(ft.log_policy(tbt->find(StateKey::parse("0")))) ==
        doctest::Approx(g0 / (g0 + g1)));
  CHECK(std::exp(ft.log_policy(tbt->find(StateKey::parse("0,1")))) ==
        doctest::Approx(1.0 / (1.0 + 1.0 / e)));
}

TEST_CASE("tic-tac-toe root flow matches the position-recursion oracle") {
  const auto t = ttt_tree();
  // tests/oracles/afn_tictactoe.py
  const std::pair<double, double> cases[] = {{1.0, 0.2689596085}, {10.0, 2.1405964573}};
  for (const auto& [lambda, want] : cases) {
    const auto r = outcome_rewards(*t, lambda);
    const FlowTable f = solve_afn(t, r);
    CHECK(f.log_flow(t->root(), 1) == doctest::Approx(want).epsilon(1e-9));
    CHECK(edb_residual(f, r).max() <= 1e-10);
    CHECK(check_product_flow(f, r) <= 1e-10);
    CHECK(check_branch_identity(f) <= 1e-10);
    const FlowTable rev = solve_afn(t, r, {.reverse_child_order = true});
    double diff = 0;
    for (NodeId n = 0; n < t->size(); n += 97) {
      diff = std::max(diff, std::abs(rev.log_flow(n, 1) - f.log_flow(n, 1)));
    }
    CHECK(diff < 1e-12);
  }
}

TEST_CASE("trajectory-balance constant under exact policies") {
  const auto t = ttt_tree();
  for (double lambda : {1.0, 10.0}) {
    const FlowTable f = solve_afn(t, outcome_rewards(*t, lambda));
    Rng rng(9);
    const auto res = tb_constant_check(*t, exact_policy(f), lambda, 1000, rng,
                                       f.log_flow(t->root(), 1));
    CHECK(res.log_z.size() == 1000);
    CHECK(res.max_deviation <= 1e-8);
    // A uniform policy is not at the fixed point.
    Rng rng2(9);
    CHECK(tb_constant_check(*t, uniform_policy(*t), lambda, 200, rng2).max_deviation > 0.1);
  }
}

TEST_CASE("product flow on 4x4 connect-3") {
  const auto t = GameTree::build(*make_board_game(BoardGameSpec::connect3(4, 4)));
  const auto r = outcome_rewards(*t, 1.0);
  const FlowTable f = solve_afn(t, r);
  CHECK(check_product_flow(f, r) <= 1e-10);
  CHECK(check_branch_identity(f) <= 1e-10);
  CHECK(edb_residual(f, r).max() <= 1e-10);
}

TEST_CASE("environment strategies") {
  const auto t = GameTree::build(*make_two_chance_tree());
  const auto gs = enumerate_env_strategies(*t);
  REQUIRE(gs.size() == 4);
  std::set<std::vector<NodeId>> distinct;
  double total = 0;
  for (const auto& g : gs) {
    CHECK(is_valid_env_strategy(*t, g));
    CHECK(g.probability == doctest::Approx(0.25));
    CHECK(g.vertices.size() == 5);
    distinct.insert(g.vertices);
    total += g.probability;
  }
  CHECK(distinct.size() == 4);
  CHECK(total == doctest::Approx(1.0));
  EnvStrategy broken = gs[0];
  broken.vertices.pop_back();
  CHECK_FALSE(is_valid_env_strategy(*t, broken));

  CHECK(check_strategy_marginalization(t, env_rewards(*t)) <= 1e-10);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto rt = GameTree::build(*make_random_toy_tree(seed, 3, 3));
    double p = 0;
    for (const auto& g : enumerate_env_strategies(*rt)) p += g.probability;
    CHECK(p == doctest::Approx(1.0));
    CHECK(check_strategy_marginalization(rt, env_rewards(*rt)) <= 1e-10);
  }
  CHECK_THROWS_AS(enumerate_env_strategies(*GameTree::build(*make_sequence_env(
                      SequenceEnvSpec::with_random_pwm(4, 4, 0.5, 1.0, 0)))),
                  SizeGuardError);
}

TEST_CASE("flows are expected raw rewards") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = GameTree::build(*make_random_game(seed, 2, 3));
    const FlowTable f = solve_afn(t, outcome_rewards(*t, 1.0));
    std::vector<NodeId> all(t->size());
    for (NodeId n = 0; n < t->size(); ++n) all[n] = n;
    CHECK(check_flow_as_expectation(f, 1.0, all) <= 1e-10);
  }
  const auto t = ttt_tree();
  const FlowTable f = solve_afn(t, outcome_rewards(*t, 10.0));
  Rng rng(5);
  const auto states = sample_nodes(*t, 2, 200, rng);
  CHECK(states.size() == 200);
  for (NodeId n : states) CHECK(t->depth(n) >= 2);
  CHECK(check_flow_as_expectation(f, 10.0, states) <= 1e-10);
}

TEST_CASE("rewards") {
  CHECK(raw_outcome_log_reward(Outcome::kP1Win, 1, 3.0) == 3.0);
  CHECK(raw_outcome_log_reward(Outcome::kP1Win, 2, 3.0) == -3.0);
  CHECK(raw_outcome_log_reward(Outcome::kDraw, 2, 3.0) == 0.0);
  const auto t = ttt_tree();
  const auto r = outcome_rewards(*t, 2.0);
  const NodeId x = t->find(StateKey::parse("0,3,1,4,2"));
  CHECK(r.log_reward(x, 1) == doctest::Approx(2.0 - std::log(9.0 * 7 * 5)));
  CHECK(r.log_reward(x, 2) == doctest::Approx(-2.0 - std::log(8.0 * 6)));
  CHECK(std::isnan(r.log_reward(t->root(), 1)));
  CHECK_THROWS_AS(env_rewards(*t), InvalidArgument);
}

TEST_CASE("flow export") {
  const auto t = GameTree::build(*make_two_chance_tree());
  const FlowTable f = solve_eflow(t, env_rewards(*t));
  std::stringstream ss;
  f.export_jsonl(ss);
  std::string line;
  int lines = 0;
  while (std::getline(ss, line)) {
    const auto j = nlohmann::json::parse(line);
    const NodeId n = t->find(StateKey::parse(j.at("state").get<std::string>()));
    CHECK(j.at("log_flow").at(0).get<double>() == doctest::Approx(f.log_flow(n)));
    ++lines;
  }
  CHECK(lines == 7);
  CHECK(f.log_flow(StateKey::parse("1")) == doctest::Approx(std::log(6.0)));
}
