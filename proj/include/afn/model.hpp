#pragma once

// Policy/flow parameterizations. A model maps (state, side) to action logits
// over the full action space and a scalar log-flow, and carries a learnable
// log Z. Adam moments live next to the parameters they belong to.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "afn/env.hpp"
#include "afn/rng.hpp"
#include "json.hpp"

namespace afn {

struct Tensor {
  std::string name;
  std::vector<double> value, grad, m, v;

  Tensor() = default;
  Tensor(std::string n, std::size_t size)
      : name(std::move(n)), value(size, 0.0), grad(size, 0.0), m(size, 0.0), v(size, 0.0) {}
  std::size_t size() const { return value.size(); }
};

struct ModelOutput {
  std::vector<double> logits;
  double log_flow = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double lr_z = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class PolicyModel {
 public:
  explicit PolicyModel(std::shared_ptr<const TreeEnv> env) : env_(std::move(env)) {}
  virtual ~PolicyModel() = default;

  virtual std::string kind() const = 0;
  const TreeEnv& env() const { return *env_; }
  std::shared_ptr<const TreeEnv> env_ptr() const { return env_; }
  int action_space_size() const { return env_->action_space_size(); }

  // Raw outputs for `s` from `side`'s head (side is 1-based).
  virtual void forward(const StateKey& s, int side, ModelOutput& out) = 0;
  // Accumulates parameter gradients given d(loss)/d(logits) (may be empty)
  // and d(loss)/d(log_flow) at (s, side).
  virtual void backward(const StateKey& s, int side, std::span<const double> d_logits,
                        double d_log_flow) = 0;
  // Tensors with gradient since the last zero_grad (all tensors for dense models).
  virtual void visit_trainable(const std::function<void(Tensor&)>& fn) = 0;
  virtual void zero_grad() = 0;
  virtual std::size_t num_parameters() const = 0;

  Tensor& log_z() { return log_z_; }
  const Tensor& log_z() const { return log_z_; }

  // Checkpoint body (architecture, parameters, Adam moments, log Z).
  virtual nlohmann::json to_json() const = 0;

 protected:
  void base_to_json(nlohmann::json& j) const;
  void base_from_json(const nlohmann::json& j);

  std::shared_ptr<const TreeEnv> env_;
  Tensor log_z_{"log_z", 1};
};

// Lazily allocated per-(side, table_key) logits and log-flow.
class TabularModel final : public PolicyModel {
 public:
  explicit TabularModel(std::shared_ptr<const TreeEnv> env);

  std::string kind() const override { return "tabular"; }
  void forward(const StateKey& s, int side, ModelOutput& out) override;
  void backward(const StateKey& s, int side, std::span<const double> d_logits,
                double d_log_flow) override;
  void visit_trainable(const std::function<void(Tensor&)>& fn) override;
  void zero_grad() override;
  std::size_t num_parameters() const override;
  std::size_t num_entries() const { return table_.size(); }

  // Entry for (s, side), allocated on first use. value = [logits..., log_flow].
  Tensor& entry(const StateKey& s, int side);
  const Tensor* find_entry(const StateKey& s, int side) const;

  nlohmann::json to_json() const override;
  static std::unique_ptr<TabularModel> from_json(const nlohmann::json& j,
                                                 std::shared_ptr<const TreeEnv> env);

 private:
  std::string slot(const StateKey& s, int side) const;

  std::unordered_map<std::string, Tensor> table_;
  std::vector<Tensor*> touched_;
  std::unordered_set<const Tensor*> touched_set_;
};

struct NeuralArch {
  int hidden = 64;
  int blocks = 4;
  double leak = 0.01;
  int sides = 2;

  nlohmann::json to_json() const;
  static NeuralArch from_json(const nlohmann::json& j);
};

// Reverse-mode tape over dense, leaky-rectifier and residual-add nodes.
class Tape {
 public:
  int input(std::span<const double> x);
  int dense(int x, Tensor& w, Tensor& b);  // w: out x in, row-major
  int leaky_relu(int x, double leak);
  int add(int a, int b);

  const std::vector<double>& value(int node) const { return nodes_[node].v; }
  std::vector<double>& grad(int node) { return nodes_[node].g; }
  // Propagates the gradients seeded on any nodes back to the tensors.
  void backward();
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::vector<double> v, g;
    std::function<void(Tape&, int)> back;
  };
  int push(std::vector<double> v, std::function<void(Tape&, int)> back);
  std::vector<Node> nodes_;
};

// Dense residual network on env features: input layer, `blocks` residual
// blocks h <- lrelu(h + W2 lrelu(W1 h + b1) + b2), one policy and one
// log-flow head per side.
class NeuralModel final : public PolicyModel {
 public:
  NeuralModel(std::shared_ptr<const TreeEnv> env, NeuralArch arch, std::uint64_t seed);

  std::string kind() const override { return "neural"; }
  void forward(const StateKey& s, int side, ModelOutput& out) override;
  void backward(const StateKey& s, int side, std::span<const double> d_logits,
                double d_log_flow) override;
  void visit_trainable(const std::function<void(Tensor&)>& fn) override;
  void zero_grad() override;
  std::size_t num_parameters() const override;
  const NeuralArch& arch() const { return arch_; }

  // Forward pass on raw features (used for gradient checks).
  void forward_features(std::span<const double> x, int side, ModelOutput& out);
  void backward_features(std::span<const double> x, int side, std::span<const double> d_logits,
                         double d_log_flow);

  nlohmann::json to_json() const override;
  static std::unique_ptr<NeuralModel> from_json(const nlohmann::json& j,
                                                std::shared_ptr<const TreeEnv> env);

 private:
  struct Head {
    Tensor wp, bp, wf, bf;
  };
  void build(int side, std::span<const double> x, Tape& tape, int& logits, int& flow);
  std::vector<Tensor*> tensors();

  NeuralArch arch_;
  int input_size_ = 0;
  Tensor w_in_, b_in_;
  std::vector<Tensor> w1_, b1_, w2_, b2_;
  std::vector<Head> heads_;
  std::vector<double> features_;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // One update of every trainable tensor plus log Z, then zero_grad. Throws
  // NumericError naming the tensor on a nonfinite gradient.
  void step(PolicyModel& model);
  long long steps() const { return t_; }
  void set_steps(long long t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }

 private:
  void update(Tensor& t, double lr);

  AdamConfig cfg_;
  long long t_ = 0;
};

// Masked log-probabilities of (s, side) at `temperature`; ContractError if
// `side` does not own s.
std::vector<double> policy_log_probs(PolicyModel& model, const StateKey& s, int side,
                                     double temperature = 1.0);
// Samples from softmax(logits / temperature) over legal actions;
// temperature 0 is argmax with ties broken toward the lowest index.
Action sample_action(std::span<const double> logits, const ActionMask& mask, double temperature,
                     Rng& rng);
Action sample_action(PolicyModel& model, const StateKey& s, int side, double temperature,
                     Rng& rng);

struct Checkpoint {
  std::unique_ptr<PolicyModel> model;
  long long adam_steps = 0;
  long long step = 0;
  std::string rng_state;
  nlohmann::json extra;  // training config and progress
};

void save_checkpoint(const std::string& path, const PolicyModel& model, long long adam_steps,
                     long long step, const Rng& rng, const nlohmann::json& extra = {});
Checkpoint load_checkpoint(const std::string& path, std::shared_ptr<const TreeEnv> env);

}  // namespace afn
