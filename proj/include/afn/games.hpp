#pragma once

// Concrete environments: bitboard k-in-a-row games (tic-tac-toe style and
// gravity/connect-k style), hand-built stochastic toy trees, and the noisy
// autoregressive sequence environment.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "afn/env.hpp"

namespace afn {

struct BoardGameSpec {
  int rows = 3;
  int cols = 3;
  int win_length = 3;
  bool gravity = false;

  static BoardGameSpec tictactoe() { return {3, 3, 3, false}; }
  static BoardGameSpec connect4() { return {6, 7, 4, true}; }
  static BoardGameSpec connect3(int rows, int cols) { return {rows, cols, 3, true}; }

  int cells() const { return rows * cols; }
  int action_space_size() const { return gravity ? cols : rows * cols; }
  // Throws InvalidArgument when the spec cannot be played on a bitboard.
  void validate() const;
  std::string name() const;

  friend bool operator==(const BoardGameSpec&, const BoardGameSpec&) = default;
};

// Position of a k-in-a-row game. Two bitboards, one per player, in a
// column-major layout with one padding bit on top of every column so that
// shift-and-AND line detection never wraps across columns.
class Board {
 public:
  explicit Board(const BoardGameSpec& spec);

  const BoardGameSpec& spec() const { return spec_; }
  int ply() const { return ply_; }
  int to_move() const { return 1 + (ply_ & 1); }  // 1 or 2
  bool can_play(Action a) const;
  void play(Action a);
  // Replays a move sequence; throws InvalidArgument on an illegal move.
  void play_all(std::span<const Action> moves);
  std::vector<Action> legal_actions() const;
  int num_legal() const;

  bool terminal() const { return winner_ != 0 || ply_ == spec_.cells(); }
  Outcome outcome() const;
  int winner() const { return winner_; }  // 0, 1 or 2

  // 1, 2 or 0 (empty) at (row, col); row 0 is the bottom for gravity games
  // and the top row otherwise.
  int cell(int row, int col) const;
  std::uint64_t pieces(int player) const { return pieces_[player - 1]; }
  // Pieces of the side to move / the side that just moved.
  std::uint64_t mover_pieces() const { return pieces_[ply_ & 1]; }
  std::uint64_t opponent_pieces() const { return pieces_[(ply_ & 1) ^ 1]; }

  // True iff `bits` holds win_length in a row in any direction.
  bool has_line(std::uint64_t bits) const;
  // Would the side to move win immediately by playing a?
  bool wins_immediately(Action a) const;

  // Position identity, independent of move order (16 bytes).
  std::string position_key() const;
  struct Key128 {
    std::uint64_t a, b;
    friend bool operator==(const Key128&, const Key128&) = default;
  };
  Key128 key128() const { return {pieces_[0], pieces_[1]}; }

  Action mirror_action(Action a) const;
  std::string to_string() const;

  // Bit index of (row, col) in the padded layout.
  int bit_index(int row, int col) const { return col * (spec_.rows + 1) + row; }
  // (row, col) targeted by action a in the current position.
  std::pair<int, int> target_cell(Action a) const;

 private:
  BoardGameSpec spec_;
  std::array<std::uint64_t, 2> pieces_{0, 0};
  std::uint64_t occupied_ = 0;
  int ply_ = 0;
  int winner_ = 0;
  std::array<int, 4> shifts_{};
};

class BoardGame final : public TreeEnv {
 public:
  explicit BoardGame(const BoardGameSpec& spec);

  std::string name() const override { return spec_.name(); }
  int num_players() const override { return 2; }
  int action_space_size() const override { return spec_.action_space_size(); }
  void describe(const StateKey& s, NodeInfo& out) const override;
  std::string table_key(const StateKey& s) const override;
  int feature_size() const override { return 3 * spec_.cells(); }
  void features(const StateKey& s, std::vector<double>& out) const override;

  const BoardGameSpec& spec() const { return spec_; }
  Board board_at(const StateKey& s) const;
  static void encode_features(const Board& b, std::vector<double>& out);

 private:
  BoardGameSpec spec_;
};

std::shared_ptr<const BoardGame> make_board_game(const BoardGameSpec& spec);

// Move sequences as text: one base-36 character per action ("0".."9",
// "a".."z"), or comma-separated decimal indices when a comma is present.
std::string encode_moves(std::span<const Action> moves, int action_space_size);
std::vector<Action> parse_moves(std::string_view text);

// ---------------------------------------------------------------------------
// Explicit toy trees.

struct ToyNode {
  NodeKind kind = NodeKind::kTerminal;
  int player = 1;
  std::vector<int> children;       // node indices; action = position in list
  std::vector<double> env_probs;   // kEnvironment only
  std::vector<double> log_rewards; // terminal only (per player), may be empty for games
  Outcome outcome = Outcome::kNone;
};

// A tree given as an explicit node list; node 0 is the root.
class ToyStochasticTree final : public TreeEnv {
 public:
  ToyStochasticTree(std::string name, int num_players, std::vector<ToyNode> nodes);

  std::string name() const override { return name_; }
  int num_players() const override { return num_players_; }
  int action_space_size() const override { return action_space_; }
  void describe(const StateKey& s, NodeInfo& out) const override;

  const std::vector<ToyNode>& nodes() const { return nodes_; }
  int node_of(const StateKey& s) const;

 private:
  std::string name_;
  int num_players_;
  int action_space_ = 1;
  std::vector<ToyNode> nodes_;
};

// Agent root with two actions, each leading to an environment state with a
// uniform two-way transition; terminal rewards (1, 2) on the left and (4, 8)
// on the right. `deterministic` keeps only the first child of each
// environment state.
std::shared_ptr<const ToyStochasticTree> make_two_chance_tree(bool deterministic = false);

// Random single-agent tree with `levels` levels of nonterminal states; each
// nonterminal is agent- or environment-owned at random, branching 1..max_branch,
// rewards in [0.1, 10], full-support environment distributions.
// `env_fraction` = 0 gives a deterministic tree.
std::shared_ptr<const ToyStochasticTree> make_random_toy_tree(
    std::uint64_t seed, int levels = 3, int max_branch = 3, double env_fraction = 0.5);

// Player 1 makes one move among outcomes.size() options, then the game ends.
std::shared_ptr<const ToyStochasticTree> make_single_move_game(std::vector<Outcome> outcomes);

// Player 1 chooses one of two moves, player 2 replies with one of two moves;
// outcomes indexed [first move][reply].
std::shared_ptr<const ToyStochasticTree> make_two_by_two_game(
    const std::array<std::array<Outcome, 2>, 2>& outcomes);

// Random alternating two-player game tree (player 1 first) with branching
// 1..max_branch, random depth up to `max_depth`, random outcomes.
std::shared_ptr<const ToyStochasticTree> make_random_game(std::uint64_t seed, int max_depth,
                                                          int max_branch);

// ---------------------------------------------------------------------------
// Noisy autoregressive sequence environment.

struct SequenceEnvSpec {
  int length = 4;           // L
  int alphabet = 4;         // A
  double corruption = 0.0;  // alpha
  double beta = 1.0;        // reward exponent
  // weights[pos * alphabet + symbol] > 0
  std::vector<double> weights;

  // Position-weight-matrix weights drawn deterministically from `seed`.
  static SequenceEnvSpec with_random_pwm(int length, int alphabet, double corruption,
                                         double beta, std::uint64_t seed);
  void validate() const;
};

class SequenceEnv final : public TreeEnv {
 public:
  explicit SequenceEnv(SequenceEnvSpec spec);

  std::string name() const override;
  int num_players() const override { return 1; }
  int action_space_size() const override { return spec_.alphabet; }
  void describe(const StateKey& s, NodeInfo& out) const override;
  int feature_size() const override { return spec_.length * (spec_.alphabet + 1) + 1; }
  void features(const StateKey& s, std::vector<double>& out) const override;

  const SequenceEnvSpec& spec() const { return spec_; }
  // f(x) in (0, 1]: summed weights normalized by the best achievable sum.
  double base_score(std::span<const int> sequence) const;
  double log_reward(std::span<const int> sequence) const;
  // Probability that the environment emits `symbol` after the agent chose `chosen`.
  double transition_prob(int chosen, int symbol) const;

 private:
  SequenceEnvSpec spec_;
  double max_sum_ = 1.0;
};

std::shared_ptr<const SequenceEnv> make_sequence_env(SequenceEnvSpec spec);


// ---------------------------------------------------------------------------
// A two-player game seen by one learner against a uniform random opponent:
// opponent states become environment states with uniform transitions, the
// learner is relabeled player 1, and terminals carry the learner's outcome
// log-reward (divided by the learner's branch factor when `branch_adjusted`).
// Keys, table keys and features are those of the wrapped game.
class FixedOpponentEnv final : public TreeEnv {
 public:
  FixedOpponentEnv(std::shared_ptr<const TreeEnv> game, int learner, double lambda,
                   bool branch_adjusted = true);

  std::string name() const override;
  int num_players() const override { return 1; }
  int action_space_size() const override { return game_->action_space_size(); }
  void describe(const StateKey& s, NodeInfo& out) const override;
  std::string table_key(const StateKey& s) const override { return game_->table_key(s); }
  int feature_size() const override { return game_->feature_size(); }
  void features(const StateKey& s, std::vector<double>& out) const override {
    game_->features(s, out);
  }

  const TreeEnv& game() const { return *game_; }
  int learner() const { return learner_; }
  double lambda() const { return lambda_; }

 private:
  std::shared_ptr<const TreeEnv> game_;
  int learner_;
  double lambda_;
  bool branch_adjusted_;
};

}  // namespace afn
