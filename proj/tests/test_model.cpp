#include <cmath>
#include <filesystem>

#include "afn/games.hpp"
#include "afn/model.hpp"
#include "doctest.h"

using namespace afn;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("afn_test_model_" + name)).string();
}

double probe(NeuralModel& m, std::span<const double> x, int side, std::span<const double> c,
             double cf) {
  ModelOutput out;
  m.forward_features(x, side, out);
  double v = cf * out.log_flow;
  for (std::size_t a = 0; a < c.size(); ++a) v += c[a] * out.logits[a];
  return v;
}

}  // namespace

TEST_CASE("tabular entries are lazy and keyed by position") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  TabularModel m(g);
  ModelOutput out;
  m.forward(StateKey::parse("0,4,8"), 1, out);
  CHECK(out.logits == std::vector<double>(9, 0.0));
  CHECK(out.log_flow == 0.0);
  CHECK(m.num_entries() == 0);

  std::vector<double> d(9, 0.0);
  d[2] = 1.0;
  m.backward(StateKey::parse("0,4,8"), 1, d, -2.0);
  CHECK(m.num_entries() == 1);
  CHECK(m.find_entry(StateKey::parse("8,4,0"), 1) != nullptr);
  CHECK(m.find_entry(StateKey::parse("8,4,0"), 2) == nullptr);

  Adam adam(AdamConfig{.lr = 0.1});
  adam.step(m);
  m.forward(StateKey::parse("8,4,0"), 1, out);
  // The first Adam step moves each touched coordinate by lr against its gradient sign.
  CHECK(out.logits[2] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(out.logits[0] == 0.0);
  CHECK(out.log_flow == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(m.find_entry(StateKey::parse("8,4,0"), 1)->grad[2] == 0.0);

  // Untouched entries keep their values.
  m.backward(StateKey::parse("1"), 2, d, 0.0);
  adam.step(m);
  m.forward(StateKey::parse("0,4,8"), 1, out);
  CHECK(out.logits[2] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(adam.steps() == 2);
}

TEST_CASE("Adam matches a hand-rolled reference") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  TabularModel m(g);
  const AdamConfig cfg{.lr = 0.01, .lr_z = 0.5};
  Adam adam(cfg);
  double x = 0, mm = 0, vv = 0, z = 0, mz = 0, vz = 0;
  const double grads[] = {0.3, -1.2, 0.7, 2.0};
  for (int t = 1; t <= 4; ++t) {
    const double gr = grads[t - 1];
    m.backward(m.env().root(), 1, {}, gr);
    m.log_z().grad[0] = -gr;
    adam.step(m);
    mm = cfg.beta1 * mm + (1 - cfg.beta1) * gr;
    vv = cfg.beta2 * vv + (1 - cfg.beta2) * gr * gr;
    x -= cfg.lr * (mm / (1 - std::pow(cfg.beta1, t))) /
         (std::sqrt(vv / (1 - std::pow(cfg.beta2, t))) + cfg.eps);
    mz = cfg.beta1 * mz + (1 - cfg.beta1) * -gr;
    vz = cfg.beta2 * vz + (1 - cfg.beta2) * gr * gr;
    z -= cfg.lr_z * (mz / (1 - std::pow(cfg.beta1, t))) /
         (std::sqrt(vz / (1 - std::pow(cfg.beta2, t))) + cfg.eps);
  }
  ModelOutput out;
  m.forward(m.env().root(), 1, out);
  CHECK(out.log_flow == doctest::Approx(x).epsilon(1e-12));
  CHECK(m.log_z().value[0] == doctest::Approx(z).epsilon(1e-12));

  m.log_z().grad[0] = NAN;
  CHECK_THROWS_AS(adam.step(m), NumericError);
}

TEST_CASE("network gradients match finite differences") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    NeuralModel m(g, NeuralArch{.hidden = 6, .blocks = 2, .leak = 0.01, .sides = 2}, seed);
    Rng rng(seed + 50);
    std::vector<double> x(27), c(9);
    for (auto& v : x) v = rng.normal();
    for (auto& v : c) v = rng.normal();
    const double cf = rng.normal();
    const int side = 1 + static_cast<int>(seed % 2);
    m.zero_grad();
    ModelOutput out;
    m.forward_features(x, side, out);
    m.backward_features(x, side, c, cf);
    double num = 0, den = 0;
    m.visit_trainable([&](Tensor& t) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double v0 = t.value[i];
        t.value[i] = v0 + 1e-5;
        const double up = probe(m, x, side, c, cf);
        t.value[i] = v0 - 1e-5;
        const double dn = probe(m, x, side, c, cf);
        t.value[i] = v0;
        const double fd = (up - dn) / 2e-5;
        num += (fd - t.grad[i]) * (fd - t.grad[i]);
        den += fd * fd;
      }
    });
    CHECK(std::sqrt(num / den) <= 1e-4);
  }
}

TEST_CASE("network heads are independent per side") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  NeuralModel m(g, NeuralArch{.hidden = 8, .blocks = 1}, 3);
  ModelOutput a, b;
  m.forward(StateKey::parse("4"), 1, a);
  m.forward(StateKey::parse("4"), 2, b);
  CHECK(a.logits != b.logits);
  CHECK(m.num_parameters() > 0);
  CHECK_THROWS_AS(NeuralModel(g, NeuralArch{.hidden = 0}, 0), InvalidArgument);
  CHECK_THROWS_AS(NeuralModel(make_two_chance_tree(), NeuralArch{}, 0), InvalidArgument);
}

TEST_CASE("sampling") {
  const std::vector<double> logits = {0.0, 2.0, 2.0, 1.0};
  const auto mask = ActionMask::from_actions(4, std::vector<Action>{0, 2, 3});
  Rng rng(1);
  CHECK(sample_action(logits, mask, 0.0, rng) == 2);
  const std::vector<double> tie = {1.0, 1.0, 1.0};
  CHECK(sample_action(tie, ActionMask::parse("011"), 0.0, rng) == 1);
  CHECK_THROWS_AS(sample_action(logits, mask, -1.0, rng), InvalidArgument);

  std::vector<int> counts(4, 0);
  const int n = 200000;
  for (int i = 0; i < n; ++i) ++counts[sample_action(logits, mask, 2.0, rng)];
  const double z = std::exp(0.0) + std::exp(1.0) + std::exp(0.5);
  CHECK(counts[1] == 0);
  CHECK(counts[0] / double(n) == doctest::Approx(1.0 / z).epsilon(0.02));
  CHECK(counts[2] / double(n) == doctest::Approx(std::exp(1.0) / z).epsilon(0.02));
  CHECK(counts[3] / double(n) == doctest::Approx(std::exp(0.5) / z).epsilon(0.02));

  const auto g = make_board_game(BoardGameSpec::tictactoe());
  TabularModel m(g);
  const auto lp = policy_log_probs(m, StateKey::parse("4"), 2);
  CHECK(lp[4] == -INFINITY);
  CHECK(std::exp(lp[0]) == doctest::Approx(1.0 / 8));
  CHECK_THROWS_AS(policy_log_probs(m, StateKey::parse("4"), 1), ContractError);
  CHECK_THROWS_AS(policy_log_probs(m, StateKey::parse("0,3,1,4,2"), 1), ContractError);
}

TEST_CASE("checkpoints round-trip") {
  const auto g = make_board_game(BoardGameSpec::tictactoe());
  Rng rng(77);
  rng.next();

  TabularModel tab(g);
  std::vector<double> d(9, 0.5);
  tab.backward(StateKey::parse("0"), 2, d, 1.0);
  tab.log_z().grad[0] = 1.0;
  Adam adam;
  adam.step(tab);
  const std::string p1 = temp_path("tab.json");
  save_checkpoint(p1, tab, adam.steps(), 12, rng, {{"note", "x"}});
  Checkpoint c1 = load_checkpoint(p1, g);
  CHECK(c1.model->kind() == "tabular");
  CHECK(c1.adam_steps == 1);
  CHECK(c1.step == 12);
  CHECK(c1.extra.at("note") == "x");
  Rng back(0);
  back.set_state(c1.rng_state);
  CHECK(back == rng);
  ModelOutput a, b;
  tab.forward(StateKey::parse("0"), 2, a);
  c1.model->forward(StateKey::parse("0"), 2, b);
  CHECK(a.logits == b.logits);
  CHECK(a.log_flow == b.log_flow);
  CHECK(c1.model->log_z().value == tab.log_z().value);
  CHECK(c1.model->to_json() == tab.to_json());

  NeuralModel net(g, NeuralArch{.hidden = 8, .blocks = 2}, 5);
  const std::string p2 = temp_path("net.json");
  save_checkpoint(p2, net, 0, 0, rng);
  Checkpoint c2 = load_checkpoint(p2, g);
  CHECK(c2.model->kind() == "neural");
  net.forward(StateKey::parse("1,2"), 1, a);
  c2.model->forward(StateKey::parse("1,2"), 1, b);
  CHECK(a.logits == b.logits);
  CHECK(a.log_flow == b.log_flow);

  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.json"), g), InvalidArgument);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}
