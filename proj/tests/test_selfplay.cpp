#include <cmath>
#include <filesystem>
#include <fstream>

#include "afn/games.hpp"
#include "afn/objectives.hpp"
#include "afn/selfplay.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace afn;

namespace {

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("afn_test_selfplay_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

TrainConfig small_config() {
  TrainConfig c;
  c.lambda = 1.0;
  c.batch_size = 16;
  c.trajectories_per_epoch = 64;
  c.steps_per_epoch = 20;
  c.epochs = 4;
  c.buffer_capacity = 256;
  c.temperature = 1.0;
  c.eval_games = 10;
  c.lr = 0.05;
  return c;
}

std::vector<double> losses(const std::vector<nlohmann::json>& metrics) {
  std::vector<double> out;
  for (const auto& m : metrics) {
    if (m.at("type") == "step") out.push_back(m.at("loss").get<double>());
  }
  return out;
}

}  // namespace

TEST_CASE("replay buffer is FIFO") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  Rng rng(0);
  std::vector<Trajectory> ts;
  for (int i = 0; i < 5; ++i) ts.push_back(testing::uniform_rollout(*g, rng));
  ReplayBuffer b(3);
  for (int i = 0; i < 5; ++i) b.push(ts[i], i);
  REQUIRE(b.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(b.view_at(i) == i + 2);
    CHECK(trajectory_to_json_line(b.at(i)) == trajectory_to_json_line(ts[i + 2]));
  }
  const auto idx = b.sample(1000, rng);
  CHECK(idx.size() == 1000);
  std::vector<int> hits(3, 0);
  for (auto i : idx) ++hits.at(i);
  for (int h : hits) CHECK(h > 250);

  const ReplayBuffer back = ReplayBuffer::from_json(b.to_json());
  CHECK(back.capacity() == 3);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back.view_at(i) == b.view_at(i));
    CHECK(trajectory_to_json_line(back.at(i)) == trajectory_to_json_line(b.at(i)));
  }
  CHECK_THROWS_AS(ReplayBuffer(0), InvalidArgument);
}

TEST_CASE("training config") {
  const TrainConfig d;
  CHECK(d.batch_size == 512);
  CHECK(d.trajectories_per_epoch == 10240);
  CHECK(d.steps_per_epoch == 500);
  CHECK(d.buffer_capacity == 10240);
  CHECK(d.temperature == 1.5);
  CHECK(d.lr == 1e-3);
  CHECK(d.lr_z == 5e-2);

  TrainConfig c = small_config();
  c.objective = Objective::kEDB;
  c.opponent = OpponentMode::kBothPerspectives;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(TrainConfig::from_json({{"lambda", 2.0}}).lambda == 2.0);
  CHECK_THROWS_AS(TrainConfig::from_json({{"lamda", 2.0}}), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::from_json({{"objective", "ppo"}}), InvalidArgument);

  for (auto o : {Objective::kTB, Objective::kEDB, Objective::kStochGfn, Objective::kNaiveGfn}) {
    CHECK(objective_from_string(to_string(o)) == o);
  }
  for (auto m : {OpponentMode::kSelfPlay, OpponentMode::kFixedUniform, OpponentMode::kBothPerspectives}) {
    CHECK(opponent_mode_from_string(to_string(m)) == m);
  }
  c = small_config();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = small_config();
  c.learner_side = 3;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = small_config();
  c.model_kind = "neural";
  c.learn_env_model = true;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("train setups") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  TrainConfig c = small_config();
  CHECK(make_train_setup(g, c).views.size() == 1);
  c.objective = Objective::kEDB;
  c.opponent = OpponentMode::kBothPerspectives;
  const auto both = make_train_setup(g, c);
  REQUIRE(both.views.size() == 2);
  CHECK(both.views[0]->num_players() == 1);
  c.opponent = OpponentMode::kFixedUniform;
  c.learner_side = 2;
  const auto fixed = make_train_setup(g, c);
  REQUIRE(fixed.views.size() == 1);
  CHECK(fixed.views[0]->name() == g->name() + "/vs-uniform-p2");
  c.objective = Objective::kStochGfn;
  CHECK_NOTHROW(make_train_setup(g, c));
  CHECK_NOTHROW(make_train_setup(make_two_chance_tree(), c));
  c.opponent = OpponentMode::kSelfPlay;
  CHECK_THROWS_AS(make_train_setup(g, c), InvalidArgument);
  c.objective = Objective::kTB;
  CHECK_THROWS_AS(make_train_setup(make_two_chance_tree(), c), InvalidArgument);
}

TEST_CASE("generated trajectories") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  TrainConfig c = small_config();
  auto model = make_model(g, c);
  Rng a(3), b(3);
  const auto ts = generate_trajectories(*g, *model, 50, c, a);
  const auto us = generate_trajectories(*g, *model, 50, c, b);
  REQUIRE(ts.size() == 50);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    validate_trajectory(ts[i]);
    CHECK(trajectory_to_json_line(ts[i]) == trajectory_to_json_line(us[i]));
    const auto r = make_rewards(ts[i].outcome, c.lambda, ts[i]);
    CHECK(ts[i].steps.back().log_reward.size() == 2);
    CHECK(ts[i].steps.back().log_reward[0] == doctest::Approx(r[0]));
    CHECK(ts[i].steps.back().log_reward[1] == doctest::Approx(r[1]));
  }
  const auto fig = make_two_chance_tree();
  auto fm = make_model(fig, c);
  for (const auto& t : generate_trajectories(*fig, *fm, 20, c, a)) {
    validate_trajectory(t);
    CHECK(t.steps.size() == 2);
    CHECK(t.steps[1].curr_player == Owner::environment());
  }
}

TEST_CASE("trajectory balance on the single-move game reaches log cosh(1)") {
  const auto g = make_single_move_game({Outcome::kP1Win, Outcome::kP2Win});
  TrainConfig c = small_config();
  c.epochs = 30;
  c.eval_games = 0;
  c.lr_z = 0.1;
  const TrainResult on = train(g, c);
  CHECK(on.model->log_z().value[0] == doctest::Approx(std::log(1.5430806348)).epsilon(0.01));
  CHECK(on.steps == 30 * 20);

  c.uniform_behavior = true;
  const TrainResult off = train(g, c);
  CHECK(off.model->log_z().value[0] == doctest::Approx(std::log(1.5430806348)).epsilon(0.01));

  // The single-GFlowNet baseline targets the sum of raw rewards.
  c.uniform_behavior = false;
  c.objective = Objective::kNaiveGfn;
  const TrainResult naive = train(g, c);
  CHECK(naive.model->log_z().value[0] ==
        doctest::Approx(std::log(std::exp(1.0) + std::exp(-1.0))).epsilon(0.01));
}

TEST_CASE("expected detailed balance learns the stochastic toy flows") {
  const auto t = make_two_chance_tree();
  TrainConfig c = small_config();
  c.objective = Objective::kEDB;
  c.epochs = 40;
  const TrainResult r = train(t, c);
  ModelOutput out;
  r.model->forward(t->root(), 1, out);
  CHECK(std::exp(out.log_flow) == doctest::Approx(7.5).epsilon(0.02));
  r.model->forward(StateKey::parse("0"), 1, out);
  CHECK(std::exp(out.log_flow) == doctest::Approx(1.5).epsilon(0.02));
  r.model->forward(StateKey::parse("1"), 1, out);
  CHECK(std::exp(out.log_flow) == doctest::Approx(6.0).epsilon(0.02));

  // The augmented-graph objective cannot fit both environment states.
  c.objective = Objective::kStochGfn;
  const TrainResult s = train(t, c);
  double last = 0;
  for (const auto& m : s.metrics) {
    if (m.at("type") == "epoch") last = m.at("loss_mean").get<double>();
  }
  CHECK(last > 0.05);
}

TEST_CASE("learned environment model and Q-form terms") {
  const auto env = make_sequence_env(SequenceEnvSpec::with_random_pwm(2, 3, 0.5, 1.0, 0));
  TrainConfig c = small_config();
  c.objective = Objective::kEDB;
  c.learn_env_model = true;
  c.epochs = 30;
  const TrainResult r = train(env, c);
  bool saw_model_term = false;
  for (const auto& m : r.metrics) {
    if (m.at("type") == "step" && m.contains("terms") && m.at("terms").contains("env_model")) {
      saw_model_term = true;
    }
  }
  CHECK(saw_model_term);
  const auto tree = GameTree::build(*env);
  const FlowTable exact = solve_eflow(tree, env_rewards(*tree));
  ModelOutput out;
  r.model->forward(env->root(), 1, out);
  CHECK(out.log_flow == doctest::Approx(exact.log_flow(tree->root())).epsilon(0.05));

  c.learn_env_model = false;
  c.q_form_threshold = 1;
  const TrainResult q = train(env, c);
  q.model->forward(env->root(), 1, out);
  CHECK(out.log_flow == doctest::Approx(exact.log_flow(tree->root())).epsilon(0.05));
}

TEST_CASE("training is deterministic and resumable") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  TrainConfig c = small_config();
  const TrainResult a = train(g, c);
  const TrainResult b = train(g, c);
  CHECK(losses(a.metrics) == losses(b.metrics));
  CHECK(a.model->to_json() == b.model->to_json());

  const std::string dir = temp_dir("resume");
  TrainIo io;
  io.metrics_path = dir + "/metrics.jsonl";
  io.checkpoint_path = dir + "/checkpoint.json";
  TrainConfig half = c;
  half.epochs = 2;
  train(g, half, io);
  io.resume = true;
  const TrainResult rest = train(g, c, io);
  CHECK(rest.model->to_json() == a.model->to_json());

  std::ifstream is(io.metrics_path);
  std::vector<nlohmann::json> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(nlohmann::json::parse(line));
  CHECK(losses(lines) == losses(a.metrics));
  int epochs = 0;
  for (const auto& m : lines) {
    if (m.at("type") != "epoch") continue;
    CHECK(m.at("epoch") == epochs++);
    for (const char* k : {"step", "loss_mean", "log_z", "buffer", "eval"}) CHECK(m.contains(k));
    CHECK(m.at("eval").at("games") == 10);
  }
  CHECK(epochs == 4);

  TrainConfig other = c;
  other.lr = 0.1;
  CHECK_THROWS_AS(train(g, other, io), InvalidArgument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training stops early when asked") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  TrainConfig c = small_config();
  TrainIo io;
  io.stop_when = [](const nlohmann::json& rec) { return rec.at("epoch") == 1; };
  const TrainResult r = train(g, c, io);
  CHECK(r.steps == 2 * c.steps_per_epoch);
}

TEST_CASE("nonfinite losses stop training and keep the batch") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  TrainConfig c = small_config();
  c.lambda = 1e300;
  const std::string dir = temp_dir("bad");
  TrainIo io;
  io.bad_batch_path = dir + "/bad_batch.jsonl";
  CHECK_THROWS_AS(train(g, c, io), NumericError);
  std::ifstream is(io.bad_batch_path);
  CHECK(read_trajectories(is).size() == static_cast<std::size_t>(c.batch_size));
  std::filesystem::remove_all(dir);
}

TEST_CASE("fixed-opponent EDB tracks flow error") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  TrainConfig c = small_config();
  c.objective = Objective::kEDB;
  c.opponent = OpponentMode::kFixedUniform;
  c.track_flow_mae = true;
  c.mae_rollouts = 200;
  c.epochs = 2;
  const TrainResult r = train(g, c);
  int seen = 0;
  for (const auto& m : r.metrics) {
    if (m.at("type") != "epoch") continue;
    ++seen;
    CHECK(m.at("flow_mae").at("node").get<double>() >= 0);
    CHECK(m.at("flow_mae").at("edge").get<double>() >= 0);
  }
  CHECK(seen == 2);
  c.objective = Objective::kTB;
  CHECK_THROWS_AS(train(g, c), InvalidArgument);
}

TEST_CASE("neural model trains end to end") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  TrainConfig c = small_config();
  c.model_kind = "neural";
  c.hidden = 16;
  c.blocks = 1;
  c.epochs = 2;
  const TrainResult r = train(g, c);
  CHECK(r.model->kind() == "neural");
  CHECK(r.steps == 40);
  for (double l : losses(r.metrics)) CHECK(std::isfinite(l));
}
