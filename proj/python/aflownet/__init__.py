"""Python access to the exact-flow solver, trainer, game solver and rating fit.

Environments are described by the same keys as the command-line run config's
"env" section, e.g. {"game": "board", "rows": 4, "cols": 4, "win_length": 3,
"gravity": True}.
"""

import json

from . import _core
from ._core import InvalidArgument, NumericError, SizeGuardError

__all__ = [
    "InvalidArgument",
    "NumericError",
    "SizeGuardError",
    "exact_flows",
    "fit_elo",
    "move_quality",
    "solve_position",
    "train",
]


def _env(env):
    return json.dumps(env or {})


def exact_flows(env=None, lam=10.0, branch_adjusted=True):
    """Root log-flows and constraint residuals of the exact flow tables."""
    return json.loads(_core.exact_flows(_env(env), float(lam), bool(branch_adjusted)))


def solve_position(moves=(), env=None):
    """Perfect-play value of the position after `moves`, for the side to move."""
    return json.loads(_core.solve_position(_env(env), list(moves)))


def train(env=None, **config):
    """Trains a model; keyword arguments are training-config keys."""
    return json.loads(_core.train(_env(env), json.dumps(config)))


def move_quality(agent="uniform", env=None, positions=1000, seed=7):
    """Optimal / inaccuracy / blunder rates of `agent` on a random position corpus."""
    return json.loads(_core.move_quality(_env(env), agent, int(positions), int(seed)))


def fit_elo(records, anchor="uniform"):
    """Ratings from (agent_a, agent_b, a_first, first_mover_result) records."""
    out = json.loads(_core.fit_elo([tuple(r) for r in records], anchor))
    if out["draw_param"] == "inf":
        out["draw_param"] = float("inf")
    return out
