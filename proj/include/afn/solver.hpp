#pragma once

// Perfect-play solving of k-in-a-row boards (negamax, alpha-beta,
// transposition table) plus the baseline agents and move-quality metric
// built on it.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "afn/games.hpp"
#include "afn/rng.hpp"

namespace afn {

// Game value from the side to move. distance = plies until the game ends
// under optimal play (quickest win, slowest loss; draws fill the board).
struct SolveResult {
  bool solved = false;
  int sign = 0;  // +1 win, 0 draw, -1 loss
  int distance = 0;
  std::uint64_t nodes = 0;

  friend bool operator==(const SolveResult& a, const SolveResult& b) {
    return a.solved == b.solved && a.sign == b.sign && a.distance == b.distance;
  }
};

std::string to_string(const SolveResult& r);

struct SolverOptions {
  std::uint64_t node_budget = 200'000'000;
  bool use_table = true;
  int table_bits = 22;
};

class Solver {
 public:
  explicit Solver(SolverOptions opts = {});

  // Terminal positions report the finished game with distance 0.
  SolveResult solve(const Board& b);
  // Value of every legal move (from the mover's view), indexed by action;
  // nullopt for illegal actions or when the budget runs out.
  std::vector<std::optional<SolveResult>> move_values(const Board& b);
  // Raw negamax score: +(cells + 1 - end_ply) for a win by the side to move,
  // negated for a loss, 0 for a draw.
  std::optional<int> score(const Board& b);

  void clear();
  std::uint64_t total_nodes() const { return total_nodes_; }

 private:
  struct Entry {
    std::uint64_t a = 0, b = 0;
    std::int16_t lower = 0, upper = 0;
    std::int8_t move = -1;
    bool used = false;
  };
  struct Budget {};

  int negamax(const Board& b, int alpha, int beta);
  Entry* probe(const Board& b);
  std::vector<Action> ordered_moves(const Board& b, int tt_move) const;

  SolverOptions opts_;
  std::vector<Entry> table_;
  std::uint64_t nodes_ = 0;
  std::uint64_t total_nodes_ = 0;
  BoardGameSpec spec_{};
};

SolveResult result_from_score(const Board& b, int score);

enum class MoveQuality { kOptimal, kInaccuracy, kBlunder };
std::string to_string(MoveQuality q);

// Classifies `move` at `b`. optimal = achieves the best score; blunder = drops
// the value sign (win -> draw/loss, draw -> loss); otherwise inaccuracy.
// nullopt if the position cannot be solved within budget.
std::optional<MoveQuality> classify_move(Solver& solver, const Board& b, Action move);

// Positions reached by 2..10 uniform random plies from the empty board,
// skipping terminal positions and positions with a single legal move.
std::vector<std::vector<Action>> random_position_corpus(const BoardGameSpec& spec,
                                                        std::size_t count, std::uint64_t seed,
                                                        int min_plies = 2, int max_plies = 10);

struct QualityRates {
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
  std::size_t optimal = 0;
  std::size_t inaccuracy = 0;
  std::size_t blunder = 0;

  double optimal_rate() const { return evaluated ? double(optimal) / evaluated : 0.0; }
  double inaccuracy_rate() const { return evaluated ? double(inaccuracy) / evaluated : 0.0; }
  double blunder_rate() const { return evaluated ? double(blunder) / evaluated : 0.0; }
};

// Fixed-depth alpha-beta with an open-line heuristic at the horizon; ties go
// to the lowest action index.
Action tree_search_agent(const Board& b, int depth);
// Heuristic value of b for the side to move: weighted counts of windows of
// length k that contain pieces of one side only.
double open_line_heuristic(const Board& b);

}  // namespace afn
