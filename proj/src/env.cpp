#include "afn/env.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace afn {

using nlohmann::json;

StateKey StateKey::from_actions(std::span<const Action> actions) {
  StateKey k;
  for (Action a : actions) k.push(a);
  return k;
}

StateKey StateKey::child(Action a) const {
  StateKey k = *this;
  k.push(a);
  return k;
}

StateKey StateKey::parent() const {
  if (history_.empty()) throw ContractError("root state has no parent");
  StateKey k = *this;
  k.pop();
  return k;
}

void StateKey::push(Action a) {
  if (a < 0 || a > 255) {
    throw InvalidArgument("action index out of byte range: " + std::to_string(a));
  }
  history_.push_back(static_cast<std::uint8_t>(a));
}

std::string StateKey::encode() const {
  return std::string(history_.begin(), history_.end());
}

StateKey StateKey::decode(std::string_view bytes) {
  return StateKey(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
}

std::string StateKey::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < history_.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(history_[i]);
  }
  return out;
}

StateKey StateKey::parse(std::string_view text) {
  StateKey k;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = text.find(',', i);
    if (j == std::string_view::npos) j = text.size();
    std::string tok(text.substr(i, j - i));
    if (tok.empty()) throw InvalidArgument("empty action in state key");
    std::size_t used = 0;
    int a = std::stoi(tok, &used);
    if (used != tok.size()) throw InvalidArgument("bad action '" + tok + "'");
    k.push(a);
    i = j + 1;
  }
  return k;
}

std::size_t StateKeyHash::operator()(const StateKey& k) const {
  // FNV-1a over the history bytes.
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint8_t b : k.history()) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return static_cast<std::size_t>(h ^ (k.depth() * 0x9e3779b97f4a7c15ull));
}

std::string to_string(Owner owner) {
  if (owner.is_environment()) return "env";
  return "p" + std::to_string(owner.id());
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::kNone: return "none";
    case Outcome::kP1Win: return "p1_win";
    case Outcome::kP2Win: return "p2_win";
    case Outcome::kDraw: return "draw";
  }
  return "none";
}

Outcome outcome_from_string(std::string_view s) {
  if (s == "none") return Outcome::kNone;
  if (s == "p1_win") return Outcome::kP1Win;
  if (s == "p2_win") return Outcome::kP2Win;
  if (s == "draw") return Outcome::kDraw;
  throw InvalidArgument("unknown outcome '" + std::string(s) + "'");
}

void TreeEnv::features(const StateKey&, std::vector<double>&) const {
  throw ContractError(name() + " has no dense feature encoding");
}

NodeInfo TreeEnv::info(const StateKey& s) const {
  NodeInfo out;
  describe(s, out);
  return out;
}

bool TreeEnv::is_terminal(const StateKey& s) const { return info(s).terminal(); }

std::vector<Child> TreeEnv::children(const StateKey& s) const {
  NodeInfo ni = info(s);
  if (ni.terminal()) {
    throw ContractError("children() queried on terminal state [" + s.to_string() + "]");
  }
  std::vector<Child> out;
  out.reserve(ni.actions.size());
  for (Action a : ni.actions) out.push_back({a, s.child(a)});
  return out;
}

Owner TreeEnv::owner(const StateKey& s) const {
  NodeInfo ni = info(s);
  if (ni.terminal()) {
    throw ContractError("owner() queried on terminal state [" + s.to_string() + "]");
  }
  return ni.owner();
}

std::vector<double> TreeEnv::env_transition(const StateKey& s) const {
  NodeInfo ni = info(s);
  if (ni.kind != NodeKind::kEnvironment) {
    throw ContractError("env_transition() queried on non-environment state [" +
                        s.to_string() + "]");
  }
  return ni.env_probs;
}

ActionMask ActionMask::from_actions(int width, std::span<const Action> actions) {
  ActionMask m(width);
  for (Action a : actions) m.set(a);
  return m;
}

int ActionMask::count() const {
  int n = 0;
  for (bool b : bits_) n += b;
  return n;
}

std::vector<Action> ActionMask::actions() const {
  std::vector<Action> out;
  for (int a = 0; a < width(); ++a) {
    if (bits_[a]) out.push_back(a);
  }
  return out;
}

std::string ActionMask::to_string() const {
  std::string s(bits_.size(), '0');
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i]) s[i] = '1';
  }
  return s;
}

ActionMask ActionMask::parse(std::string_view s) {
  ActionMask m(static_cast<int>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '1') {
      m.set(static_cast<Action>(i));
    } else if (s[i] != '0') {
      throw InvalidArgument("mask must contain only '0'/'1'");
    }
  }
  return m;
}

StateKey Trajectory::terminal_state() const {
  if (steps.empty()) throw ContractError("empty trajectory");
  return steps.back().state.child(steps.back().action);
}

void validate_trajectory(const Trajectory& t) {
  if (t.steps.empty()) throw ContractError("trajectory has no steps");
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const auto& st = t.steps[i];
    const bool last = i + 1 == t.steps.size();
    if (st.done != last) {
      throw ContractError("done flag must be set on exactly the last step");
    }
    if (!last && !st.log_reward.empty()) {
      throw ContractError("log_reward present on a non-final step");
    }
    if (last && st.log_reward.empty()) {
      throw ContractError("final step carries no log_reward");
    }
    if (!st.mask.test(st.action)) {
      throw ContractError("step " + std::to_string(i) + " takes masked action " +
                          std::to_string(st.action));
    }
    if (i > 0) {
      const auto& prev = t.steps[i - 1];
      if (!(st.state == prev.state.child(prev.action))) {
        throw ContractError("step " + std::to_string(i) +
                            " is not the child of the previous step");
      }
    }
  }
}

std::string trajectory_to_json_line(const Trajectory& t) {
  json steps = json::array();
  for (const auto& st : t.steps) {
    json j;
    json hist = json::array();
    for (auto a : st.state.history()) hist.push_back(static_cast<int>(a));
    j["state"] = std::move(hist);
    j["mask"] = st.mask.to_string();
    j["curr_player"] = st.curr_player.id();
    j["action"] = st.action;
    j["done"] = st.done;
    if (st.done) {
      j["log_reward"] = st.log_reward;
    } else {
      j["log_reward"] = nullptr;
    }
    steps.push_back(std::move(j));
  }
  json line;
  line["steps"] = std::move(steps);
  line["outcome"] = to_string(t.outcome);
  return line.dump();
}

Trajectory trajectory_from_json_line(std::string_view line) {
  json j = json::parse(line);
  Trajectory t;
  t.outcome = outcome_from_string(j.value("outcome", std::string("none")));
  for (const auto& js : j.at("steps")) {
    TrajectoryStep st;
    std::vector<Action> hist = js.at("state").get<std::vector<Action>>();
    st.state = StateKey::from_actions(hist);
    st.mask = ActionMask::parse(js.at("mask").get<std::string>());
    int cp = js.at("curr_player").get<int>();
    st.curr_player = cp == 0 ? Owner::environment() : Owner::player(cp);
    st.action = js.at("action").get<Action>();
    st.done = js.at("done").get<bool>();
    if (!js.at("log_reward").is_null()) {
      st.log_reward = js.at("log_reward").get<std::vector<double>>();
    }
    t.steps.push_back(std::move(st));
  }
  return t;
}

void write_trajectories(std::ostream& os, std::span<const Trajectory> ts) {
  for (const auto& t : ts) os << trajectory_to_json_line(t) << '\n';
}

std::vector<Trajectory> read_trajectories(std::istream& is) {
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(trajectory_from_json_line(line));
  }
  return out;
}

void for_each_state(const TreeEnv& env,
                    const std::function<void(const StateKey&, const NodeInfo&)>& visit,
                    std::size_t max_nodes) {
  // Depth-first with an explicit stack of (state, next child position).
  struct Frame {
    NodeInfo info;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  StateKey key;
  std::size_t count = 0;
  auto enter = [&]() {
    if (++count > max_nodes) {
      throw SizeGuardError("tree exceeds " + std::to_string(max_nodes) + " states");
    }
    stack.emplace_back();
    env.describe(key, stack.back().info);
    visit(key, stack.back().info);
  };
  enter();
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.info.actions.size()) {
      key.push(f.info.actions[f.next++]);
      enter();
    } else {
      stack.pop_back();
      if (!key.is_root()) key.pop();
    }
  }
}

std::size_t validate_env(const TreeEnv& env, bool alternating, std::size_t max_nodes) {
  std::size_t n = 0;
  for_each_state(
      env,
      [&](const StateKey& s, const NodeInfo& ni) {
        ++n;
        if (ni.terminal()) {
          if (!ni.actions.empty()) throw ContractError("terminal state has children");
          for (double r : ni.log_rewards) {
            if (!std::isfinite(r)) throw ContractError("nonfinite terminal log-reward");
          }
          return;
        }
        if (ni.actions.empty()) {
          throw ContractError("nonterminal state [" + s.to_string() + "] has no children");
        }
        for (std::size_t i = 0; i < ni.actions.size(); ++i) {
          if (ni.actions[i] < 0 || ni.actions[i] >= env.action_space_size()) {
            throw ContractError("action outside action space");
          }
          if (i && ni.actions[i] <= ni.actions[i - 1]) {
            throw ContractError("children not in ascending action order");
          }
        }
        if (ni.kind == NodeKind::kEnvironment) {
          if (ni.env_probs.size() != ni.actions.size()) {
            throw ContractError("env distribution size mismatch");
          }
          double total = 0;
          for (double p : ni.env_probs) {
            if (!(p > 0)) throw ContractError("env distribution lacks full support");
            total += p;
          }
          if (std::abs(total - 1.0) > 1e-12) {
            throw ContractError("env distribution does not sum to 1");
          }
        } else {
          if (ni.player < 1 || ni.player > env.num_players()) {
            throw ContractError("owner outside 1..num_players");
          }
          if (alternating) {
            int expected = 1 + static_cast<int>(s.depth() % 2);
            if (ni.player != expected) throw ContractError("owner does not alternate");
          }
        }
      },
      max_nodes);
  return n;
}

}  // namespace afn
