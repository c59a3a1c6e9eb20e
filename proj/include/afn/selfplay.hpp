#pragma once

// Training loop: trajectory generation, FIFO replay, optimization epochs and
// per-epoch evaluation, for the trajectory-balance, expected-detailed-balance,
// stochastic-GFlowNet and naive single-GFlowNet objectives.

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afn/env.hpp"
#include "afn/exact_flows.hpp"
#include "afn/model.hpp"
#include "afn/rng.hpp"
#include "json.hpp"

namespace afn {

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Trajectory t, int view = 0);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  const Trajectory& at(std::size_t i) const { return items_[i].traj; }
  int view_at(std::size_t i) const { return items_[i].view; }
  // n indices drawn uniformly with replacement.
  std::vector<std::size_t> sample(std::size_t n, Rng& rng) const;

  nlohmann::json to_json() const;
  static ReplayBuffer from_json(const nlohmann::json& j);

 private:
  struct Item {
    Trajectory traj;
    int view = 0;
  };
  std::size_t capacity_;
  std::deque<Item> items_;
};

enum class Objective { kTB, kEDB, kStochGfn, kNaiveGfn };
std::string to_string(Objective o);
Objective objective_from_string(std::string_view s);

enum class OpponentMode { kSelfPlay, kFixedUniform, kBothPerspectives };
std::string to_string(OpponentMode m);
OpponentMode opponent_mode_from_string(std::string_view s);

struct TrainConfig {
  double lambda = 10.0;
  int batch_size = 512;           // n
  int trajectories_per_epoch = 10240;  // K
  int steps_per_epoch = 500;      // L
  int epochs = 100;               // N
  int buffer_capacity = 10240;    // M
  double temperature = 1.5;
  Objective objective = Objective::kTB;
  OpponentMode opponent = OpponentMode::kSelfPlay;
  int learner_side = 1;           // fixed-uniform mode
  std::uint64_t seed = 0;
  double lr = 1e-3;
  double lr_z = 5e-2;
  // Behavior policy: every move of the first k plies, with k drawn uniformly
  // from 0..uniform_opening_plies per trajectory, is uniform.
  int uniform_opening_plies = 0;
  // All behavior moves uniform (off-policy training).
  bool uniform_behavior = false;
  int eval_games = 100;
  // EDB: learned transition model at environment states (tabular only).
  bool learn_env_model = false;
  double env_model_weight = 1.0;
  // EDB: environment states with more children use the sampled-child Q form.
  int q_form_threshold = 32;
  // Exact-table flow error per epoch (EDB only; needs a small tree).
  bool track_flow_mae = false;
  int mae_rollouts = 2000;
  // Model.
  std::string model_kind = "tabular";
  int hidden = 64;
  int blocks = 4;

  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys throw InvalidArgument.
  static TrainConfig from_json(const nlohmann::json& j);
};

// One trajectory per entry; `views` are the environments trajectories were
// generated in (the game itself, or its fixed-opponent views).
struct TrainSetup {
  std::vector<std::shared_ptr<const TreeEnv>> views;
  std::vector<int> view_side;  // model head trained in each view
};

// The environments and heads a config trains on for `env`.
TrainSetup make_train_setup(std::shared_ptr<const TreeEnv> env, const TrainConfig& cfg);

// K complete episodes in `env`. Player p samples from model head p, or from
// `single_agent_side` in a single-agent env. In two-player games the
// non-learner side plays uniformly under kFixedUniform, and the learner
// alternates per episode (player 1 first) under kBothPerspectives.
// Log-rewards are attached: environment rewards, or branch-adjusted outcome
// rewards for games.
std::vector<Trajectory> generate_trajectories(const TreeEnv& env, PolicyModel& model, int k,
                                              const TrainConfig& cfg, Rng& rng,
                                              int single_agent_side = 1);

struct BatchLoss {
  double loss = 0;
  std::map<std::string, double> terms;
};

// Mean loss over the batch; accumulates gradients into the model when
// `with_grad`.
BatchLoss batch_loss(const TrainSetup& setup, PolicyModel& model, const TrainConfig& cfg,
                     const ReplayBuffer& buffer, std::span<const std::size_t> batch,
                     bool with_grad);

struct TrainResult {
  std::shared_ptr<PolicyModel> model;
  long long steps = 0;
  std::vector<nlohmann::json> metrics;
};

struct TrainIo {
  std::string metrics_path;     // line-delimited JSON; empty = in memory only
  std::string checkpoint_path;  // saved after every epoch; empty = none
  std::string bad_batch_path;   // where a batch with a nonfinite loss goes
  bool resume = false;          // continue from checkpoint_path
  // Called after every epoch with its metrics record.
  std::function<void(const nlohmann::json&)> on_epoch;
  // Ends training after the epoch whose record it accepts (once the checkpoint is saved).
  std::function<bool(const nlohmann::json&)> stop_when;
};

std::shared_ptr<PolicyModel> make_model(std::shared_ptr<const TreeEnv> env, const TrainConfig& cfg);

// Runs cfg.epochs epochs of (generate K, push, L steps on uniform batches,
// evaluate). Throws NumericError after writing the offending batch when a
// loss is nonfinite.
TrainResult train(std::shared_ptr<const TreeEnv> env, const TrainConfig& cfg, const TrainIo& io = {});

}  // namespace afn
