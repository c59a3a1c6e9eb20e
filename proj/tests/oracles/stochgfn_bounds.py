"""Least-squares minima of the stochastic-GFN detailed balance loss.

Every constraint is linear in the log-flows, so for a fixed agent policy the
minimum over flows is an ordinary least-squares problem.

1. Two-action toy tree (rewards 1, 2 under the left environment state and
   4, 8 under the right one, uniform transitions): minimum over a 1001-point
   grid of the left-move probability p.
2. Sequence environment (length 4, alphabet 4, weights in
   tests/data/pwm_L4_A4_seed0.json): the policy-independent part of the
   minimum contributed by environment states whose children are terminal.
"""
import itertools
import json
import math
import os

import numpy as np


def lstsq_min(rows, rhs, nvars):
    a = np.zeros((len(rows), nvars))
    for i, terms in enumerate(rows):
        for j, c in terms:
            a[i, j] += c
    b = np.array(rhs)
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    r = a @ x - b
    return float(r @ r)


def toy_loss(p):
    # nodes: 0 root, 1 env L, 2 env R, 3..6 leaves with rewards 1, 2, 4, 8
    rows, rhs = [], []
    for child, prob in ((1, p), (2, 1 - p)):
        rows.append([(0, 1), (child, -1)])
        rhs.append(-math.log(prob))
    for env, leaves in ((1, (3, 4)), (2, (5, 6))):
        for leaf in leaves:
            rows.append([(env, 1), (leaf, -1)])
            rhs.append(-math.log(0.5))
    for leaf, r in zip((3, 4, 5, 6), (1, 2, 4, 8)):
        rows.append([(leaf, 1)])
        rhs.append(math.log(r))
    return lstsq_min(rows, rhs, 7)


def sequence_bound(weights, length, alphabet, alpha, beta):
    w = np.array(weights).reshape(length, alphabet)
    max_sum = w.max(axis=1).sum()
    total = 0.0
    # States are histories: every earlier choice is part of the key, so each
    # emitted prefix appears once per sequence of earlier choices.
    for _choices, prefix in itertools.product(
        itertools.product(range(alphabet), repeat=length - 1),
        itertools.product(range(alphabet), repeat=length - 1),
    ):
        base = sum(w[i, s] for i, s in enumerate(prefix))
        for chosen in range(alphabet):
            probs = [(1 - alpha) * (s == chosen) + alpha / alphabet for s in range(alphabet)]
            kids = [s for s in range(alphabet) if probs[s] > 0]
            rows, rhs = [], []
            for j, s in enumerate(kids):
                rows.append([(0, 1), (1 + j, -1)])
                rhs.append(-math.log(probs[s]))
                rows.append([(1 + j, 1)])
                rhs.append(beta * math.log((base + w[length - 1, s]) / max_sum))
            total += lstsq_min(rows, rhs, 1 + len(kids))
    return total


if __name__ == "__main__":
    grid = [i / 1000 for i in range(1, 1000)]
    losses = [toy_loss(p) for p in grid]
    k = int(np.argmin(losses))
    print(f"toy grid_min={losses[k]:.12f} at p={grid[k]:.3f}")
    here = os.path.dirname(os.path.abspath(__file__))
    with open(os.path.join(here, "..", "data", "pwm_L4_A4_seed0.json")) as f:
        pwm = json.load(f)
    for alpha in (0.0, 0.5):
        for beta in (1.0, 4.0):
            b = sequence_bound(pwm["weights"], pwm["length"], pwm["alphabet"], alpha, beta)
            print(f"sequence alpha={alpha:g} beta={beta:g} bound={b:.12f}")
