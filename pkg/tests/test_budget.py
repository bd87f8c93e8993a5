import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snrlora.adapter import AdapterLayer, forward
from snrlora.budget import (
    BudgetSchedule,
    allocate,
    apply_decision,
    budget_at,
    rank_distribution,
    read_rank_csv,
    write_rank_csv,
)
from snrlora.importance import TripletScore
from snrlora.numerics import Rng


def test_cubic_midpoint():
    s = BudgetSchedule(108, 72, 100, 200, 1000)
    # 72 + 36 * 0.5**3 = 76.5, floored
    assert budget_at(s, 450) == 76


def test_boundaries():
    s = BudgetSchedule(108, 72, 100, 200, 1000)
    assert budget_at(s, 0) == 108
    assert budget_at(s, 100) == 108
    assert budget_at(s, 101) <= 108
    assert budget_at(s, 800) == 72
    assert budget_at(s, 799) >= 72
    assert budget_at(s, 1000) == 72


def test_out_of_range():
    s = BudgetSchedule(12, 4, 10, 10, 100)
    with pytest.raises(ValueError):
        budget_at(s, -1)
    with pytest.raises(ValueError):
        budget_at(s, 101)


def test_bad_schedules():
    with pytest.raises(ValueError):
        BudgetSchedule(3, 4, 10, 10, 100)
    with pytest.raises(ValueError):
        BudgetSchedule(6, 4, 50, 50, 100)
    with pytest.raises(ValueError):
        BudgetSchedule(6, 0, 10, 10, 100)


def test_default_init():
    assert BudgetSchedule.with_default_init(72, 100, 200, 1000).b_init == 108
    assert BudgetSchedule.with_default_init(4, 10, 10, 100).b_init == 6


@settings(max_examples=60, deadline=None)
@given(
    b_target=st.integers(1, 50),
    extra=st.integers(0, 100),
    t_warmup=st.integers(0, 200),
    t_final=st.integers(0, 200),
    span=st.integers(1, 300),
)
def test_monotone_and_bounded(b_target, extra, t_warmup, t_final, span):
    s = BudgetSchedule(b_target + extra, b_target, t_warmup, t_final, t_warmup + t_final + span)
    b = np.array([budget_at(s, t) for t in range(s.t_total + 1)])
    assert np.all(np.diff(b) <= 0)
    assert b[t_warmup] == s.b_init
    assert b[s.t_total - t_final] == b_target
    assert b.min() == b_target


def _scores(values):
    return [TripletScore(l, k, float(v)) for (l, k), v in values.items()]


def test_allocate_full_budget_prunes_nothing():
    scores = _scores({(0, 0): 1.0, (0, 1): 2.0, (1, 0): 0.5})
    d = allocate(scores, 3)
    assert d.pruned == frozenset()
    assert len(d.kept) == 3


def test_allocate_ties_follow_index_order():
    scores = [TripletScore(l, k, 1.0) for l in (1, 0) for k in (2, 0, 1)]
    d = allocate(scores, 4)
    assert d.kept == {(0, 0), (0, 1), (0, 2), (1, 0)}


def test_allocate_matches_sort_oracle(np_rng):
    for _ in range(20):
        n_layers, rank = np_rng.integers(1, 6), np_rng.integers(1, 5)
        keys = [(l, k) for l in range(n_layers) for k in range(rank)]
        vals = np_rng.normal(size=len(keys))
        budget = int(np_rng.integers(0, len(keys) + 1))
        d = allocate([TripletScore(l, k, v) for (l, k), v in zip(keys, vals)], budget, step=7)
        order = np.argsort(-vals, kind="stable")
        assert d.kept == {keys[i] for i in order[:budget]}
        assert d.kept | d.pruned == set(keys)
        assert not d.kept & d.pruned
        assert d.step == 7 and d.budget == budget


def test_allocate_rejects_oversized_budget():
    with pytest.raises(ValueError):
        allocate(_scores({(0, 0): 1.0}), 2)


def _layers(rng, rank=3, n=3):
    return [AdapterLayer.init(rng.normal((5, 4)), rank, rng, name=f"l{i}") for i in range(n)]


def test_rank_distribution_and_conservation():
    layers = _layers(Rng(1))
    assert [r[2] for r in rank_distribution(layers)] == [3, 3, 3]
    scores = [TripletScore(l, k, float(l * 3 + k)) for l in range(3) for k in range(3)]
    apply_decision(layers, allocate(scores, 4))
    rows = rank_distribution(layers)
    assert [r[2] for r in rows] == [0, 1, 3]
    assert sum(r[2] for r in rows) == 4
    apply_decision(layers, allocate(scores, 1))
    assert sum(r[2] for r in rank_distribution(layers)) == 1


def test_reactivation_from_score_stream():
    layers = _layers(Rng(2), rank=2, n=2)
    stream = [
        {(0, 0): 3.0, (0, 1): 1.0, (1, 0): 2.0, (1, 1): 0.5},
        {(0, 0): 3.0, (0, 1): 1.0, (1, 0): 2.0, (1, 1): 0.5},
        {(0, 0): 3.0, (0, 1): 1.0, (1, 0): 0.1, (1, 1): 4.0},
    ]
    history = []
    for t, values in enumerate(stream):
        d = allocate(_scores(values), 2, step=t)
        apply_decision(layers, d)
        history.append(d)
    assert (1, 1) in history[0].pruned
    assert (1, 1) in history[2].kept
    assert layers[1].mask.tolist() == [False, True]


def test_mask_round_trip_bit_identical():
    rng = Rng(3)
    layers = _layers(rng, rank=3, n=1)
    layers[0].lam = rng.normal(3)
    x = rng.normal((6, 5))
    before = forward(layers[0], x)
    apply_decision(layers, allocate(_scores({(0, 0): 1, (0, 1): 0, (0, 2): 2}), 1))
    assert not np.array_equal(forward(layers[0], x), before)
    apply_decision(layers, allocate(_scores({(0, 0): 1, (0, 1): 1, (0, 2): 1}), 3))
    assert np.array_equal(forward(layers[0], x), before)


def test_rank_csv_round_trip(tmp_path):
    rows = [(0, "dense", 0), (1, "dense", 2), (2, "attn", 5)]
    path = tmp_path / "ranks.csv"
    write_rank_csv(rows, path)
    assert path.read_text().splitlines()[0] == "layer,module,rank"
    assert read_rank_csv(path) == rows


def test_rank_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,x,2\n")
    with pytest.raises(ValueError):
        read_rank_csv(path)
