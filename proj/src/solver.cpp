#include "afn/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace afn {

std::string to_string(const SolveResult& r) {
  if (!r.solved) return "unsolved";
  const char* s = r.sign > 0 ? "win" : r.sign < 0 ? "loss" : "draw";
  return std::string(s) + " in " + std::to_string(r.distance);
}

std::string to_string(MoveQuality q) {
  switch (q) {
    case MoveQuality::kOptimal: return "optimal";
    case MoveQuality::kInaccuracy: return "inaccuracy";
    case MoveQuality::kBlunder: return "blunder";
  }
  return "?";
}

Solver::Solver(SolverOptions opts) : opts_(opts) {
  if (opts_.use_table) {
    if (opts_.table_bits < 4 || opts_.table_bits > 30) {
      throw InvalidArgument("table_bits must be in 4..30");
    }
    table_.resize(std::size_t{1} << opts_.table_bits);
  }
}

void Solver::clear() {
  std::fill(table_.begin(), table_.end(), Entry{});
}

Solver::Entry* Solver::probe(const Board& b) {
  const auto k = b.key128();
  std::uint64_t h = k.a * 0x9e3779b97f4a7c15ull ^ (k.b + 0x632be59bd9b4e019ull) * 0xbf58476d1ce4e5b9ull;
  h ^= h >> 31;
  return &table_[h & (table_.size() - 1)];
}

std::vector<Action> Solver::ordered_moves(const Board& b, int tt_move) const {
  std::vector<Action> moves = b.legal_actions();
  const auto& s = b.spec();
  auto centrality = [&](Action a) {
    if (s.gravity) return std::abs(2 * a - (s.cols - 1));
    const int r = a / s.cols, c = a % s.cols;
    return std::abs(2 * r - (s.rows - 1)) + std::abs(2 * c - (s.cols - 1));
  };
  std::stable_sort(moves.begin(), moves.end(), [&](Action x, Action y) {
    if ((x == tt_move) != (y == tt_move)) return x == tt_move;
    return centrality(x) < centrality(y);
  });
  return moves;
}

int Solver::negamax(const Board& b, int alpha, int beta) {
  if (++nodes_ > opts_.node_budget) throw Budget{};
  const int cells = b.spec().cells();
  const int p = b.ply();
  if (p == cells) return 0;
  const auto legal = b.legal_actions();
  for (Action a : legal) {
    if (b.wins_immediately(a)) return cells - p;
  }
  // No immediate win: the mover wins at the earliest two plies later, the
  // opponent at the earliest on the next ply.
  const int hi = std::max(cells - p - 2, 0);
  const int lo = std::min(-(cells - p - 1), 0);
  int lo2 = lo, hi2 = hi;
  Entry* e = nullptr;
  int tt_move = -1;
  if (opts_.use_table) {
    e = probe(b);
    const auto k = b.key128();
    if (e->used && e->a == k.a && e->b == k.b) {
      lo2 = std::max(lo2, static_cast<int>(e->lower));
      hi2 = std::min(hi2, static_cast<int>(e->upper));
      tt_move = e->move;
    }
  }
  if (lo2 >= beta) return lo2;
  if (hi2 <= alpha) return hi2;
  if (lo2 == hi2) return lo2;
  alpha = std::max(alpha, lo2);
  beta = std::min(beta, hi2);
  const int alpha0 = alpha, beta0 = beta;
  int best = std::numeric_limits<int>::min();
  int best_move = -1;
  for (Action a : ordered_moves(b, tt_move)) {
    Board child = b;
    child.play(a);
    const int v = -negamax(child, -beta, -alpha);
    if (v > best) {
      best = v;
      best_move = a;
    }
    alpha = std::max(alpha, v);
    if (alpha >= beta) break;
  }
  if (e) {
    const auto k = b.key128();
    Entry n;
    n.a = k.a;
    n.b = k.b;
    n.used = true;
    n.move = static_cast<std::int8_t>(best_move);
    n.lower = static_cast<std::int16_t>(best >= beta0 ? best : (best <= alpha0 ? lo : best));
    n.upper = static_cast<std::int16_t>(best <= alpha0 ? best : (best >= beta0 ? hi : best));
    *e = n;
  }
  return best;
}

std::optional<int> Solver::score(const Board& b) {
  const int cells = b.spec().cells();
  if (b.terminal()) return b.winner() ? -(cells + 1 - b.ply()) : 0;
  nodes_ = 0;
  try {
    const int v = negamax(b, -(cells + 1), cells + 1);
    total_nodes_ += nodes_;
    return v;
  } catch (const Budget&) {
    total_nodes_ += nodes_;
    return std::nullopt;
  }
}

SolveResult result_from_score(const Board& b, int score) {
  const int cells = b.spec().cells();
  SolveResult r;
  r.solved = true;
  r.sign = score > 0 ? 1 : score < 0 ? -1 : 0;
  if (score == 0) {
    r.distance = cells - b.ply();
    if (b.terminal()) r.distance = 0;
  } else {
    r.distance = cells + 1 - std::abs(score) - b.ply();
  }
  return r;
}

SolveResult Solver::solve(const Board& b) {
  auto s = score(b);
  SolveResult r;
  if (s) r = result_from_score(b, *s);
  r.nodes = nodes_;
  return r;
}

std::vector<std::optional<SolveResult>> Solver::move_values(const Board& b) {
  std::vector<std::optional<SolveResult>> out(b.spec().action_space_size());
  for (Action a : b.legal_actions()) {
    Board child = b;
    child.play(a);
    if (auto s = score(child)) out[a] = result_from_score(b, -*s);
  }
  return out;
}

std::optional<MoveQuality> classify_move(Solver& solver, const Board& b, Action move) {
  if (!b.can_play(move)) throw InvalidArgument("move " + std::to_string(move) + " is illegal");
  int best = std::numeric_limits<int>::min();
  int chosen = 0;
  for (Action a : b.legal_actions()) {
    Board child = b;
    child.play(a);
    auto s = solver.score(child);
    if (!s) return std::nullopt;
    best = std::max(best, -*s);
    if (a == move) chosen = -*s;
  }
  auto sign = [](int v) { return (v > 0) - (v < 0); };
  if (chosen == best) return MoveQuality::kOptimal;
  if (sign(chosen) < sign(best)) return MoveQuality::kBlunder;
  return MoveQuality::kInaccuracy;
}

std::vector<std::vector<Action>> random_position_corpus(const BoardGameSpec& spec,
                                                        std::size_t count, std::uint64_t seed,
                                                        int min_plies, int max_plies) {
  if (min_plies < 0 || max_plies < min_plies) throw InvalidArgument("bad ply range");
  Rng rng(seed);
  std::vector<std::vector<Action>> out;
  std::size_t attempts = 0;
  while (out.size() < count) {
    if (++attempts > 1000 * (count + 1)) {
      throw InvalidArgument("cannot draw enough nonterminal positions for " + spec.name());
    }
    const int plies = min_plies + rng.uniform_int(max_plies - min_plies + 1);
    Board b(spec);
    std::vector<Action> moves;
    for (int i = 0; i < plies && !b.terminal(); ++i) {
      auto legal = b.legal_actions();
      const Action a = legal[rng.uniform_int(static_cast<int>(legal.size()))];
      b.play(a);
      moves.push_back(a);
    }
    if (b.terminal() || b.num_legal() < 2) continue;
    out.push_back(std::move(moves));
  }
  return out;
}

double open_line_heuristic(const Board& b) {
  const auto& s = b.spec();
  const int k = s.win_length;
  const std::uint64_t mine = b.mover_pieces();
  const std::uint64_t theirs = b.opponent_pieces();
  static const int dr[4] = {0, 1, 1, 1};
  static const int dc[4] = {1, 0, 1, -1};
  double v = 0;
  for (int r = 0; r < s.rows; ++r) {
    for (int c = 0; c < s.cols; ++c) {
      for (int d = 0; d < 4; ++d) {
        const int er = r + dr[d] * (k - 1), ec = c + dc[d] * (k - 1);
        if (er < 0 || er >= s.rows || ec < 0 || ec >= s.cols) continue;
        std::uint64_t w = 0;
        for (int i = 0; i < k; ++i) w |= std::uint64_t{1} << b.bit_index(r + dr[d] * i, c + dc[d] * i);
        const int nm = std::popcount(mine & w), nt = std::popcount(theirs & w);
        if (nm && !nt) v += std::ldexp(1.0, 2 * nm);
        if (nt && !nm) v -= std::ldexp(1.0, 2 * nt);
      }
    }
  }
  return v;
}

namespace {

constexpr double kWin = 1e7;

double search(const Board& b, int depth, double alpha, double beta) {
  const int cells = b.spec().cells();
  if (b.terminal()) return b.winner() ? -kWin * (cells + 1 - b.ply()) : 0.0;
  if (depth == 0) return open_line_heuristic(b);
  double best = -std::numeric_limits<double>::infinity();
  for (Action a : b.legal_actions()) {
    Board child = b;
    child.play(a);
    const double v = -search(child, depth - 1, -beta, -alpha);
    best = std::max(best, v);
    alpha = std::max(alpha, v);
    if (alpha >= beta) break;
  }
  return best;
}

}  // namespace

Action tree_search_agent(const Board& b, int depth) {
  if (depth < 1) throw InvalidArgument("search depth must be >= 1");
  if (b.terminal()) throw ContractError("no move at a terminal position");
  const double inf = std::numeric_limits<double>::infinity();
  double best = -inf;
  Action best_move = -1;
  for (Action a : b.legal_actions()) {
    Board child = b;
    child.play(a);
    const double v = -search(child, depth - 1, -inf, -best);
    if (best_move < 0 || v > best) {
      best = v;
      best_move = a;
    }
  }
  return best_move;
}

}  // namespace afn
