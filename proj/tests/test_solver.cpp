#include "afn/solver.hpp"
#include "doctest.h"
#include "naive_minimax.hpp"

using namespace afn;

namespace {

void check_all_positions(const BoardGameSpec& spec) {
  const auto r = testing::compare_with_minimax(spec);
  CHECK(r.checked == r.oracle_positions);
  CHECK(r.mismatches == 0);
}

}  // namespace

TEST_CASE("solver agrees with exhaustive minimax on every tic-tac-toe position") {
  check_all_positions(BoardGameSpec::tictactoe());
}

TEST_CASE("solver agrees with exhaustive minimax on every 4x4 connect-3 position") {
  check_all_positions(BoardGameSpec::connect3(4, 4));
}

TEST_CASE("known values") {
  Solver s;
  const SolveResult empty = s.solve(Board(BoardGameSpec::tictactoe()));
  CHECK(empty.solved);
  CHECK(empty.sign == 0);
  CHECK(empty.distance == 9);

  Board b(BoardGameSpec::tictactoe());
  b.play_all(std::vector<Action>{0, 3, 1, 4});
  const SolveResult r = s.solve(b);
  CHECK(r.sign == 1);
  CHECK(r.distance == 1);
  CHECK(to_string(r) == "win in 1");
  CHECK(*s.score(b) == 9 + 1 - 5);

  b.play(2);
  const SolveResult done = s.solve(b);
  CHECK(done.sign == -1);
  CHECK(done.distance == 0);

  const auto mv = s.move_values(Board(BoardGameSpec::tictactoe()));
  REQUIRE(mv.size() == 9);
  for (const auto& v : mv) {
    REQUIRE(v.has_value());
    CHECK(v->sign == 0);
  }
}

TEST_CASE("move classification") {
  Solver s;
  Board b(BoardGameSpec::tictactoe());
  b.play_all(std::vector<Action>{0, 3, 1, 4});
  CHECK(*classify_move(s, b, 2) == MoveQuality::kOptimal);
  // Blocking still wins for X (fork threats remain), but slower.
  const auto block = classify_move(s, b, 5);
  REQUIRE(block.has_value());
  CHECK(*block != MoveQuality::kOptimal);
  // Ignoring both threats lets O win.
  CHECK(*classify_move(s, b, 8) == MoveQuality::kBlunder);

  Board e(BoardGameSpec::tictactoe());
  CHECK(*classify_move(s, e, 4) == MoveQuality::kOptimal);
  CHECK(*classify_move(s, e, 1) == MoveQuality::kOptimal);
  CHECK(to_string(MoveQuality::kInaccuracy) == "inaccuracy");
}

TEST_CASE("classification matches the oracle on random positions") {
  const auto spec = BoardGameSpec::connect3(4, 4);
  Solver s;
  const auto corpus = random_position_corpus(spec, 300, 11);
  for (const auto& moves : corpus) {
    Board b(spec);
    b.play_all(moves);
    const auto values = s.move_values(b);
    const SolveResult best = s.solve(b);
    for (Action a : b.legal_actions()) {
      const auto q = classify_move(s, b, a);
      REQUIRE(q.has_value());
      const SolveResult v = *values[a];
      // Value of a move from the mover's view.
      const bool same = v.sign == best.sign && v.distance == best.distance;
      if (same) CHECK(*q == MoveQuality::kOptimal);
      else if (v.sign < best.sign) CHECK(*q == MoveQuality::kBlunder);
      else CHECK(*q == MoveQuality::kInaccuracy);
    }
  }
}

TEST_CASE("budget exhaustion is reported") {
  Solver s(SolverOptions{.node_budget = 50});
  const SolveResult r = s.solve(Board(BoardGameSpec::connect4()));
  CHECK_FALSE(r.solved);
  CHECK_FALSE(s.score(Board(BoardGameSpec::connect4())).has_value());
  CHECK_FALSE(classify_move(s, Board(BoardGameSpec::connect4()), 3).has_value());
  CHECK_THROWS_AS(Solver(SolverOptions{.table_bits = 2}), InvalidArgument);
}

TEST_CASE("table and no-table solvers agree") {
  Solver with;
  Solver without(SolverOptions{.use_table = false});
  const auto corpus = random_position_corpus(BoardGameSpec::tictactoe(), 200, 5, 0, 6);
  for (const auto& m : corpus) {
    Board b(BoardGameSpec::tictactoe());
    b.play_all(m);
    CHECK(with.solve(b) == without.solve(b));
  }
}

TEST_CASE("random position corpus") {
  const auto spec = BoardGameSpec::connect3(5, 4);
  const auto a = random_position_corpus(spec, 500, 7);
  const auto b = random_position_corpus(spec, 500, 7);
  CHECK(a == b);
  CHECK(a != random_position_corpus(spec, 500, 8));
  for (const auto& m : a) {
    CHECK(m.size() >= 2);
    CHECK(m.size() <= 10);
    Board x(spec);
    x.play_all(m);
    CHECK_FALSE(x.terminal());
    CHECK(x.num_legal() >= 2);
  }
  CHECK_THROWS_AS(random_position_corpus(spec, 1, 0, 5, 3), InvalidArgument);
}

TEST_CASE("depth-limited search") {
  Board b(BoardGameSpec::tictactoe());
  b.play_all(std::vector<Action>{0, 3, 1, 4});
  CHECK(tree_search_agent(b, 1) == 2);
  // O to move must block X's top row.
  Board c(BoardGameSpec::tictactoe());
  c.play_all(std::vector<Action>{0, 4, 1});
  CHECK(tree_search_agent(c, 2) == 2);
  Board d(BoardGameSpec::connect4());
  d.play_all(std::vector<Action>{0, 6, 1, 6, 2});
  CHECK(tree_search_agent(d, 2) == 3);
  CHECK(open_line_heuristic(Board(BoardGameSpec::connect4())) == 0.0);
}
