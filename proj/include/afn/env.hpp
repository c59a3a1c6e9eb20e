#pragma once

// Tree-structured environment contract shared by every game and toy problem.
//
// States are identified by their full action history (StateKey), so the
// reachable state graph is a tree even for games whose positions merge.
// Nonterminal states are owned either by a player (1-based index) or by the
// environment, which then supplies a transition distribution over children.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "afn/errors.hpp"

namespace afn {

using Action = int;

// Action history from the root. Equality is history equality.
class StateKey {
 public:
  StateKey() = default;
  explicit StateKey(std::vector<std::uint8_t> history)
      : history_(std::move(history)) {}
  static StateKey from_actions(std::span<const Action> actions);

  std::span<const std::uint8_t> history() const { return history_; }
  std::size_t depth() const { return history_.size(); }
  bool is_root() const { return history_.empty(); }
  Action back() const { return history_.back(); }

  StateKey child(Action a) const;
  StateKey parent() const;
  void push(Action a);
  void pop() { history_.pop_back(); }

  // Canonical byte encoding: one byte per action, root = empty string.
  std::string encode() const;
  static StateKey decode(std::string_view bytes);

  // Human-readable "a0,a1,..." form.
  std::string to_string() const;
  static StateKey parse(std::string_view text);

  friend bool operator==(const StateKey&, const StateKey&) = default;
  friend auto operator<=>(const StateKey&, const StateKey&) = default;

 private:
  std::vector<std::uint8_t> history_;
};

struct StateKeyHash {
  std::size_t operator()(const StateKey& k) const;
};

// Who acts at a nonterminal state.
class Owner {
 public:
  static constexpr Owner environment() { return Owner(0); }
  static constexpr Owner player(int index) { return Owner(index); }

  constexpr bool is_environment() const { return id_ == 0; }
  constexpr bool is_player() const { return id_ > 0; }
  // 1-based player index; 0 for the environment.
  constexpr int id() const { return id_; }

  friend constexpr bool operator==(Owner, Owner) = default;

 private:
  constexpr explicit Owner(int id) : id_(id) {}
  int id_;
};

std::string to_string(Owner owner);

// Game outcome from player 1's perspective. kNone for non-game terminals.
enum class Outcome : std::uint8_t { kNone, kP1Win, kP2Win, kDraw };

std::string to_string(Outcome o);
Outcome outcome_from_string(std::string_view s);

enum class NodeKind : std::uint8_t { kTerminal, kPlayer, kEnvironment };

// Everything an environment knows about one state.
struct NodeInfo {
  NodeKind kind = NodeKind::kTerminal;
  int player = 0;                    // 1-based, only for kPlayer
  std::vector<Action> actions;       // ascending legal actions
  std::vector<double> env_probs;     // aligned with actions, kEnvironment only
  std::vector<double> log_rewards;   // per player, terminal only; empty for games
  Outcome outcome = Outcome::kNone;  // games only

  Owner owner() const {
    return kind == NodeKind::kEnvironment ? Owner::environment()
                                          : Owner::player(player);
  }
  bool terminal() const { return kind == NodeKind::kTerminal; }
};

struct Child {
  Action action;
  StateKey state;
};

class TreeEnv {
 public:
  virtual ~TreeEnv() = default;

  virtual std::string name() const = 0;
  virtual int num_players() const = 0;
  virtual int action_space_size() const = 0;

  // Fills `out` for state `s`. Implementations reuse out's buffers.
  virtual void describe(const StateKey& s, NodeInfo& out) const = 0;

  // Key under which a tabular model stores parameters for `s`. Defaults to
  // the history; board games return the position instead.
  virtual std::string table_key(const StateKey& s) const { return s.encode(); }

  // Dense input encoding for neural models.
  virtual int feature_size() const { return 0; }
  virtual void features(const StateKey& s, std::vector<double>& out) const;

  StateKey root() const { return StateKey(); }
  NodeInfo info(const StateKey& s) const;
  bool is_terminal(const StateKey& s) const;

  // Legal children in ascending action order. Terminal state -> ContractError.
  std::vector<Child> children(const StateKey& s) const;
  // Terminal state -> ContractError.
  Owner owner(const StateKey& s) const;
  // Environment-owned states only; aligned with children().
  std::vector<double> env_transition(const StateKey& s) const;
};

// Bit-vector of legal actions, fixed width = action_space_size.
class ActionMask {
 public:
  ActionMask() = default;
  explicit ActionMask(int width) : bits_(width, false) {}
  static ActionMask from_actions(int width, std::span<const Action> actions);

  int width() const { return static_cast<int>(bits_.size()); }
  bool test(Action a) const { return a >= 0 && a < width() && bits_[a]; }
  void set(Action a) { bits_.at(a) = true; }
  int count() const;
  std::vector<Action> actions() const;

  std::string to_string() const;  // '0'/'1' per action
  static ActionMask parse(std::string_view s);

  friend bool operator==(const ActionMask&, const ActionMask&) = default;

 private:
  std::vector<bool> bits_;
};

struct TrajectoryStep {
  StateKey state;
  ActionMask mask;
  Owner curr_player = Owner::player(1);
  Action action = 0;
  bool done = false;
  std::vector<double> log_reward;  // per player, last step only
};

// A complete episode. The final step's action leads to a terminal state.
struct Trajectory {
  std::vector<TrajectoryStep> steps;
  Outcome outcome = Outcome::kNone;

  bool complete() const { return !steps.empty() && steps.back().done; }
  StateKey terminal_state() const;
};

// Checks the Trajectory invariants (single trailing done flag, reward only on
// the last step, legal actions, consistent parent chain).
void validate_trajectory(const Trajectory& t);

// Line-delimited JSON: one trajectory per line.
std::string trajectory_to_json_line(const Trajectory& t);
Trajectory trajectory_from_json_line(std::string_view line);
void write_trajectories(std::ostream& os, std::span<const Trajectory> ts);
std::vector<Trajectory> read_trajectories(std::istream& is);

// Walks the whole reachable tree (explicit stack) calling `visit` on every
// state. Throws SizeGuardError past `max_nodes`.
void for_each_state(const TreeEnv& env,
                    const std::function<void(const StateKey&, const NodeInfo&)>& visit,
                    std::size_t max_nodes = 50'000'000);

// Verifies the TreeEnv invariants on every reachable state (ordering,
// ownership, distribution normalization and support, alternation when
// `alternating`). Returns the number of states checked.
std::size_t validate_env(const TreeEnv& env, bool alternating,
                         std::size_t max_nodes = 5'000'000);

}  // namespace afn
