"""Exact two-player flows on tic-tac-toe by memoized recursion over positions.

With branch-adjusted rewards, G_i(s) = B_i(s) F_i(s) depends only on the
position: the mean of G_i over children at player i's states, and the
G_j-weighted mean at the opponent's states. log F_1(root) = log G_1(root).
Also prints the outcome distribution of uniformly random play.
"""
import math
import sys
from functools import lru_cache
from fractions import Fraction

LINES = [(0, 1, 2), (3, 4, 5), (6, 7, 8), (0, 3, 6), (1, 4, 7), (2, 5, 8), (0, 4, 8), (2, 4, 6)]


def winner(board):
    for a, b, c in LINES:
        if board[a] != 0 and board[a] == board[b] == board[c]:
            return board[a]
    return 0


def solve(lam):
    @lru_cache(maxsize=None)
    def g(board):
        w = winner(board)
        moves = [i for i in range(9) if board[i] == 0]
        if w or not moves:
            r1 = lam if w == 1 else -lam if w == 2 else 0.0
            return (math.exp(r1), math.exp(-r1))
        me = 1 if board.count(1) == board.count(2) else 2
        kids = []
        for m in moves:
            nb = list(board)
            nb[m] = me
            kids.append(g(tuple(nb)))
        mine = [k[me - 1] for k in kids]
        theirs = [k[2 - me] for k in kids]
        own = sum(mine) / len(mine)
        other = sum(t * m for t, m in zip(theirs, mine)) / sum(mine)
        return (own, other) if me == 1 else (other, own)

    return math.log(g((0,) * 9)[0])


def uniform_outcomes():
    @lru_cache(maxsize=None)
    def p(board):
        w = winner(board)
        moves = [i for i in range(9) if board[i] == 0]
        if w == 1:
            return (Fraction(1), Fraction(0), Fraction(0))
        if w == 2:
            return (Fraction(0), Fraction(0), Fraction(1))
        if not moves:
            return (Fraction(0), Fraction(1), Fraction(0))
        me = 1 if board.count(1) == board.count(2) else 2
        acc = [Fraction(0)] * 3
        for m in moves:
            nb = list(board)
            nb[m] = me
            for i, v in enumerate(p(tuple(nb))):
                acc[i] += v / len(moves)
        return tuple(acc)

    return p((0,) * 9)


if __name__ == "__main__":
    for lam in (1.0, 10.0):
        print(f"lambda={lam:g} log_F1_root={solve(lam):.10f}")
    win, draw, loss = uniform_outcomes()
    print(f"uniform_play p1_win={float(win):.10f} draw={float(draw):.10f} p2_win={float(loss):.10f}")
    sys.exit(0)
