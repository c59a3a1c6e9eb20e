#include "afn/model.hpp"

#include <cmath>
#include <fstream>

#include "afn/math.hpp"
#include "afn/objectives.hpp"

namespace afn {

using nlohmann::json;

namespace {

json tensor_to_json(const Tensor& t) {
  return json{{"value", t.value}, {"m", t.m}, {"v", t.v}};
}

void tensor_from_json(const json& j, Tensor& t) {
  auto value = j.at("value").get<std::vector<double>>();
  if (value.size() != t.size()) {
    throw InvalidArgument("checkpoint tensor '" + t.name + "' has the wrong size");
  }
  t.value = std::move(value);
  t.m = j.at("m").get<std::vector<double>>();
  t.v = j.at("v").get<std::vector<double>>();
  std::fill(t.grad.begin(), t.grad.end(), 0.0);
}

std::string to_hex(const std::string& s) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned char c : s) {
    out += digits[c >> 4];
    out += digits[c & 15];
  }
  return out;
}

std::string from_hex(const std::string& h) {
  if (h.size() % 2) throw InvalidArgument("odd-length hex key");
  std::string out;
  for (std::size_t i = 0; i < h.size(); i += 2) {
    out += static_cast<char>(std::stoi(h.substr(i, 2), nullptr, 16));
  }
  return out;
}

}  // namespace

void PolicyModel::base_to_json(json& j) const {
  j["kind"] = kind();
  j["env"] = env_->name();
  j["action_space"] = env_->action_space_size();
  j["log_z"] = tensor_to_json(log_z_);
}

void PolicyModel::base_from_json(const json& j) {
  if (j.at("env").get<std::string>() != env_->name()) {
    throw InvalidArgument("checkpoint was trained on '" + j.at("env").get<std::string>() +
                          "', not '" + env_->name() + "'");
  }
  if (j.at("action_space").get<int>() != env_->action_space_size()) {
    throw InvalidArgument("checkpoint action space does not match environment");
  }
  tensor_from_json(j.at("log_z"), log_z_);
}

// ---------------------------------------------------------------------------
// TabularModel

TabularModel::TabularModel(std::shared_ptr<const TreeEnv> env) : PolicyModel(std::move(env)) {}

std::string TabularModel::slot(const StateKey& s, int side) const {
  std::string k(1, static_cast<char>(side));
  k += env_->table_key(s);
  return k;
}

Tensor& TabularModel::entry(const StateKey& s, int side) {
  const std::string k = slot(s, side);
  auto it = table_.find(k);
  if (it == table_.end()) {
    it = table_.emplace(k, Tensor("table", action_space_size() + 1)).first;
  }
  return it->second;
}

const Tensor* TabularModel::find_entry(const StateKey& s, int side) const {
  auto it = table_.find(slot(s, side));
  return it == table_.end() ? nullptr : &it->second;
}

void TabularModel::forward(const StateKey& s, int side, ModelOutput& out) {
  const int a = action_space_size();
  out.logits.assign(a, 0.0);
  out.log_flow = 0.0;
  if (const Tensor* t = find_entry(s, side)) {
    std::copy(t->value.begin(), t->value.begin() + a, out.logits.begin());
    out.log_flow = t->value[a];
  }
}

void TabularModel::backward(const StateKey& s, int side, std::span<const double> d_logits,
                            double d_log_flow) {
  Tensor& t = entry(s, side);
  const int a = action_space_size();
  for (std::size_t i = 0; i < d_logits.size(); ++i) t.grad[i] += d_logits[i];
  t.grad[a] += d_log_flow;
  if (touched_set_.insert(&t).second) touched_.push_back(&t);
}

void TabularModel::visit_trainable(const std::function<void(Tensor&)>& fn) {
  for (Tensor* t : touched_) fn(*t);
}

void TabularModel::zero_grad() {
  for (Tensor* t : touched_) std::fill(t->grad.begin(), t->grad.end(), 0.0);
  touched_.clear();
  touched_set_.clear();
  log_z_.grad[0] = 0.0;
}

std::size_t TabularModel::num_parameters() const {
  return 1 + table_.size() * static_cast<std::size_t>(env_->action_space_size() + 1);
}

json TabularModel::to_json() const {
  json j;
  base_to_json(j);
  // Sorted for a deterministic file.
  std::vector<const std::pair<const std::string, Tensor>*> rows;
  for (const auto& kv : table_) rows.push_back(&kv);
  std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->first < b->first; });
  json entries = json::array();
  for (const auto* kv : rows) {
    json e = tensor_to_json(kv->second);
    e["slot"] = to_hex(kv->first);
    entries.push_back(std::move(e));
  }
  j["entries"] = std::move(entries);
  return j;
}

std::unique_ptr<TabularModel> TabularModel::from_json(const json& j,
                                                      std::shared_ptr<const TreeEnv> env) {
  auto m = std::make_unique<TabularModel>(std::move(env));
  m->base_from_json(j);
  for (const auto& e : j.at("entries")) {
    Tensor t("table", m->action_space_size() + 1);
    tensor_from_json(e, t);
    m->table_.emplace(from_hex(e.at("slot").get<std::string>()), std::move(t));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Tape

int Tape::push(std::vector<double> v, std::function<void(Tape&, int)> back) {
  Node n;
  n.g.assign(v.size(), 0.0);
  n.v = std::move(v);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::input(std::span<const double> x) {
  return push(std::vector<double>(x.begin(), x.end()), nullptr);
}

int Tape::dense(int x, Tensor& w, Tensor& b) {
  const std::size_t in = nodes_[x].v.size();
  const std::size_t out = b.size();
  if (w.size() != in * out) throw ContractError("dense layer shape mismatch for " + w.name);
  std::vector<double> y(b.value);
  const auto& xv = nodes_[x].v;
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = w.value.data() + o * in;
    double acc = 0;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * xv[i];
    y[o] += acc;
  }
  return push(std::move(y), [x, &w, &b, in, out](Tape& t, int self) {
    const auto& gy = t.nodes_[self].g;
    const auto& xv = t.nodes_[x].v;
    auto& gx = t.nodes_[x].g;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = gy[o];
      if (g == 0) continue;
      b.grad[o] += g;
      const double* row = w.value.data() + o * in;
      double* grow = w.grad.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        grow[i] += g * xv[i];
        gx[i] += g * row[i];
      }
    }
  });
}

int Tape::leaky_relu(int x, double leak) {
  std::vector<double> y(nodes_[x].v);
  for (double& v : y) v = v > 0 ? v : leak * v;
  return push(std::move(y), [x, leak](Tape& t, int self) {
    const auto& gy = t.nodes_[self].g;
    const auto& xv = t.nodes_[x].v;
    auto& gx = t.nodes_[x].g;
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += xv[i] > 0 ? gy[i] : leak * gy[i];
  });
}

int Tape::add(int a, int b) {
  std::vector<double> y(nodes_[a].v);
  const auto& bv = nodes_[b].v;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return push(std::move(y), [a, b](Tape& t, int self) {
    const auto& gy = t.nodes_[self].g;
    for (std::size_t i = 0; i < gy.size(); ++i) {
      t.nodes_[a].g[i] += gy[i];
      t.nodes_[b].g[i] += gy[i];
    }
  });
}

void Tape::backward() {
  for (int n = static_cast<int>(nodes_.size()); n-- > 0;) {
    if (nodes_[n].back) nodes_[n].back(*this, n);
  }
}

// ---------------------------------------------------------------------------
// NeuralModel

json NeuralArch::to_json() const {
  return json{{"hidden", hidden}, {"blocks", blocks}, {"leak", leak}, {"sides", sides}};
}

NeuralArch NeuralArch::from_json(const json& j) {
  NeuralArch a;
  a.hidden = j.at("hidden").get<int>();
  a.blocks = j.at("blocks").get<int>();
  a.leak = j.at("leak").get<double>();
  a.sides = j.at("sides").get<int>();
  return a;
}

NeuralModel::NeuralModel(std::shared_ptr<const TreeEnv> env, NeuralArch arch, std::uint64_t seed)
    : PolicyModel(std::move(env)), arch_(arch) {
  input_size_ = env_->feature_size();
  if (input_size_ <= 0) throw InvalidArgument(env_->name() + " has no feature encoding");
  if (arch_.hidden < 1 || arch_.blocks < 0 || arch_.sides < 1) {
    throw InvalidArgument("invalid network architecture");
  }
  const int h = arch_.hidden;
  const int a = action_space_size();
  Rng rng(seed);
  auto init = [&](Tensor& t, int fan_in, double scale) {
    const double sd = scale * std::sqrt(2.0 / fan_in);
    for (double& v : t.value) v = sd * rng.normal();
  };
  w_in_ = Tensor("input.w", static_cast<std::size_t>(h) * input_size_);
  b_in_ = Tensor("input.b", h);
  init(w_in_, input_size_, 1.0);
  for (int k = 0; k < arch_.blocks; ++k) {
    const std::string p = "block" + std::to_string(k);
    w1_.emplace_back(p + ".w1", static_cast<std::size_t>(h) * h);
    b1_.emplace_back(p + ".b1", h);
    w2_.emplace_back(p + ".w2", static_cast<std::size_t>(h) * h);
    b2_.emplace_back(p + ".b2", h);
    init(w1_.back(), h, 1.0);
    init(w2_.back(), h, 0.1);
  }
  for (int s = 1; s <= arch_.sides; ++s) {
    const std::string p = "head" + std::to_string(s);
    Head hd{Tensor(p + ".policy.w", static_cast<std::size_t>(a) * h), Tensor(p + ".policy.b", a),
            Tensor(p + ".flow.w", h), Tensor(p + ".flow.b", 1)};
    init(hd.wp, h, 0.01);
    init(hd.wf, h, 0.01);
    heads_.push_back(std::move(hd));
  }
}

std::vector<Tensor*> NeuralModel::tensors() {
  std::vector<Tensor*> out{&w_in_, &b_in_};
  for (int k = 0; k < arch_.blocks; ++k) {
    out.push_back(&w1_[k]);
    out.push_back(&b1_[k]);
    out.push_back(&w2_[k]);
    out.push_back(&b2_[k]);
  }
  for (auto& hd : heads_) {
    out.push_back(&hd.wp);
    out.push_back(&hd.bp);
    out.push_back(&hd.wf);
    out.push_back(&hd.bf);
  }
  return out;
}

void NeuralModel::build(int side, std::span<const double> x, Tape& tape, int& logits, int& flow) {
  if (side < 1 || side > arch_.sides) {
    throw ContractError("no head for side " + std::to_string(side));
  }
  if (static_cast<int>(x.size()) != input_size_) throw ContractError("feature size mismatch");
  int h = tape.leaky_relu(tape.dense(tape.input(x), w_in_, b_in_), arch_.leak);
  for (int k = 0; k < arch_.blocks; ++k) {
    const int t = tape.leaky_relu(tape.dense(h, w1_[k], b1_[k]), arch_.leak);
    const int u = tape.dense(t, w2_[k], b2_[k]);
    h = tape.leaky_relu(tape.add(h, u), arch_.leak);
  }
  Head& hd = heads_[side - 1];
  logits = tape.dense(h, hd.wp, hd.bp);
  flow = tape.dense(h, hd.wf, hd.bf);
}

void NeuralModel::forward_features(std::span<const double> x, int side, ModelOutput& out) {
  Tape tape;
  int lg, fl;
  build(side, x, tape, lg, fl);
  out.logits = tape.value(lg);
  out.log_flow = tape.value(fl)[0];
}

void NeuralModel::backward_features(std::span<const double> x, int side,
                                    std::span<const double> d_logits, double d_log_flow) {
  Tape tape;
  int lg, fl;
  build(side, x, tape, lg, fl);
  auto& g = tape.grad(lg);
  for (std::size_t i = 0; i < d_logits.size(); ++i) g[i] = d_logits[i];
  tape.grad(fl)[0] = d_log_flow;
  tape.backward();
}

void NeuralModel::forward(const StateKey& s, int side, ModelOutput& out) {
  env_->features(s, features_);
  forward_features(features_, side, out);
}

void NeuralModel::backward(const StateKey& s, int side, std::span<const double> d_logits,
                           double d_log_flow) {
  env_->features(s, features_);
  backward_features(features_, side, d_logits, d_log_flow);
}

void NeuralModel::visit_trainable(const std::function<void(Tensor&)>& fn) {
  for (Tensor* t : tensors()) fn(*t);
}

void NeuralModel::zero_grad() {
  for (Tensor* t : tensors()) std::fill(t->grad.begin(), t->grad.end(), 0.0);
  log_z_.grad[0] = 0.0;
}

std::size_t NeuralModel::num_parameters() const {
  std::size_t n = 1;
  for (Tensor* t : const_cast<NeuralModel*>(this)->tensors()) n += t->size();
  return n;
}

json NeuralModel::to_json() const {
  json j;
  base_to_json(j);
  j["arch"] = arch_.to_json();
  j["input_size"] = input_size_;
  json params = json::object();
  for (Tensor* t : const_cast<NeuralModel*>(this)->tensors()) params[t->name] = tensor_to_json(*t);
  j["params"] = std::move(params);
  return j;
}

std::unique_ptr<NeuralModel> NeuralModel::from_json(const json& j,
                                                    std::shared_ptr<const TreeEnv> env) {
  auto m = std::make_unique<NeuralModel>(std::move(env), NeuralArch::from_json(j.at("arch")), 0);
  m->base_from_json(j);
  if (j.at("input_size").get<int>() != m->input_size_) {
    throw InvalidArgument("checkpoint input size does not match environment features");
  }
  const json& params = j.at("params");
  for (Tensor* t : m->tensors()) {
    if (!params.contains(t->name)) throw InvalidArgument("checkpoint lacks tensor " + t->name);
    tensor_from_json(params.at(t->name), *t);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Adam

void Adam::update(Tensor& t, double lr) {
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double g = t.grad[i];
    t.m[i] = cfg_.beta1 * t.m[i] + (1 - cfg_.beta1) * g;
    t.v[i] = cfg_.beta2 * t.v[i] + (1 - cfg_.beta2) * g * g;
    t.value[i] -= lr * (t.m[i] / c1) / (std::sqrt(t.v[i] / c2) + cfg_.eps);
  }
}

void Adam::step(PolicyModel& model) {
  auto check = [](const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!std::isfinite(t.grad[i])) {
        throw NumericError("nonfinite gradient in " + t.name + "[" + std::to_string(i) + "]");
      }
    }
  };
  check(model.log_z());
  model.visit_trainable(check);
  ++t_;
  model.visit_trainable([&](Tensor& t) { update(t, cfg_.lr); });
  update(model.log_z(), cfg_.lr_z);
  model.zero_grad();
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<double> policy_log_probs(PolicyModel& model, const StateKey& s, int side,
                                     double temperature) {
  const NodeInfo ni = model.env().info(s);
  if (ni.terminal()) throw ContractError("policy queried at terminal state [" + s.to_string() + "]");
  if (ni.kind != NodeKind::kPlayer || ni.player != side) {
    throw ContractError("side " + std::to_string(side) + " does not own state [" +
                        s.to_string() + "]");
  }
  ModelOutput out;
  model.forward(s, side, out);
  std::vector<double> lp;
  masked_log_softmax(out.logits, ActionMask::from_actions(model.action_space_size(), ni.actions),
                     lp, temperature > 0 ? temperature : 1.0);
  return lp;
}

Action sample_action(std::span<const double> logits, const ActionMask& mask, double temperature,
                     Rng& rng) {
  if (temperature < 0) throw InvalidArgument("temperature must be >= 0");
  if (temperature == 0) {
    Action best = -1;
    for (Action a = 0; a < mask.width(); ++a) {
      if (mask.test(a) && (best < 0 || logits[a] > logits[best])) best = a;
    }
    if (best < 0) throw ContractError("no legal action under mask");
    return best;
  }
  std::vector<double> lp;
  masked_log_softmax(logits, mask, lp, temperature);
  std::vector<double> w(lp.size());
  for (std::size_t a = 0; a < lp.size(); ++a) w[a] = lp[a] == kLogZero ? 0.0 : std::exp(lp[a]);
  return rng.categorical(w);
}

Action sample_action(PolicyModel& model, const StateKey& s, int side, double temperature,
                     Rng& rng) {
  const NodeInfo ni = model.env().info(s);
  if (ni.terminal()) throw ContractError("cannot act at terminal state [" + s.to_string() + "]");
  if (ni.kind != NodeKind::kPlayer || ni.player != side) {
    throw ContractError("side " + std::to_string(side) + " does not own state [" +
                        s.to_string() + "]");
  }
  ModelOutput out;
  model.forward(s, side, out);
  return sample_action(out.logits, ActionMask::from_actions(model.action_space_size(), ni.actions),
                       temperature, rng);
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& path, const PolicyModel& model, long long adam_steps,
                     long long step, const Rng& rng, const json& extra) {
  json j;
  j["format"] = "afn-checkpoint";
  j["version"] = 1;
  j["model"] = model.to_json();
  j["adam_steps"] = adam_steps;
  j["step"] = step;
  j["rng"] = rng.state();
  j["extra"] = extra;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw InvalidArgument("cannot write checkpoint " + path);
    os << j.dump();
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw InvalidArgument("cannot move checkpoint into place at " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path, std::shared_ptr<const TreeEnv> env) {
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot open checkpoint " + path);
  json j = json::parse(is);
  if (j.value("format", "") != "afn-checkpoint") {
    throw InvalidArgument(path + " is not a checkpoint");
  }
  if (j.at("version").get<int>() != 1) throw InvalidArgument("unsupported checkpoint version");
  Checkpoint c;
  const json& m = j.at("model");
  const std::string kind = m.at("kind").get<std::string>();
  if (kind == "tabular") {
    c.model = TabularModel::from_json(m, std::move(env));
  } else if (kind == "neural") {
    c.model = NeuralModel::from_json(m, std::move(env));
  } else {
    throw InvalidArgument("unknown model kind '" + kind + "'");
  }
  c.adam_steps = j.at("adam_steps").get<long long>();
  c.step = j.at("step").get<long long>();
  c.rng_state = j.at("rng").get<std::string>();
  c.extra = j.value("extra", json::object());
  return c;
}

}  // namespace afn
