import math

import pytest

import aflownet

CONNECT3_4X4 = {"game": "board", "rows": 4, "cols": 4, "win_length": 3, "gravity": True}


def test_tictactoe_exact_flows():
    out = aflownet.exact_flows({"game": "tictactoe"}, lam=1.0)
    assert out["nodes"] == 549946
    # Position-recursion oracle value.
    assert out["root_log_flow"][0] == pytest.approx(0.2689596085, abs=1e-9)
    assert out["edb_residual"] <= 1e-10
    assert out["product_flow"] <= 1e-10


def test_stochastic_toy_flows():
    out = aflownet.exact_flows({"game": "two_chance"})
    assert math.exp(out["root_log_flow"][0]) == pytest.approx(7.5)


def test_solver():
    assert aflownet.solve_position([], {"game": "tictactoe"})["sign"] == 0
    # Player 1 in the centre, player 2 on an edge: player 1 wins.
    out = aflownet.solve_position([4, 1], {"game": "tictactoe"})
    assert out["solved"] and out["sign"] == 1
    with pytest.raises(aflownet.InvalidArgument):
        aflownet.solve_position([4, 4], {"game": "tictactoe"})
    assert aflownet.solve_position([], CONNECT3_4X4)["solved"]


def test_unknown_env_key():
    with pytest.raises(aflownet.InvalidArgument):
        aflownet.exact_flows({"colour": "red"})


def test_training():
    out = aflownet.train(
        {"game": "tictactoe"},
        batch_size=16,
        trajectories_per_epoch=64,
        steps_per_epoch=5,
        epochs=2,
        eval_games=10,
    )
    assert out["steps"] == 10
    epochs = [m for m in out["metrics"] if m["type"] == "epoch"]
    assert len(epochs) == 2
    assert epochs[-1]["eval"]["games"] == 10
    with pytest.raises(aflownet.InvalidArgument):
        aflownet.train({"game": "tictactoe"}, batch_size=0)


def test_move_quality():
    perfect = aflownet.move_quality("perfect", CONNECT3_4X4, positions=200)
    assert perfect["optimal"] == 1.0
    uniform = aflownet.move_quality("uniform", CONNECT3_4X4, positions=200)
    assert uniform["optimal"] < 1.0
    assert uniform["optimal"] + uniform["inaccuracy"] + uniform["blunder"] == pytest.approx(1.0)


def test_elo():
    # b beats uniform in 3 of every 4 games, alternating who moves first.
    records = []
    for i in range(400):
        a_first = i % 2 == 0
        a_wins = i % 4 != 0
        first_wins = a_wins == a_first
        records.append(("b", "uniform", a_first, 1 if first_wins else -1))
    out = aflownet.fit_elo(records)
    assert out["ratings"]["uniform"] == 0.0
    assert out["ratings"]["b"] == pytest.approx(400 * math.log10(3), abs=1e-6)
