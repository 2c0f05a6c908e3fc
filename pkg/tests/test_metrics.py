import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from navmorph.errors import DomainError, UsageError
from navmorph.metrics import (
    METRIC_FIELDS,
    MetricReport,
    Trajectory,
    aggregate,
    evaluate,
    report_from_mapping,
    reports_to_csv,
)


def straight(n, dx=1.0):
    return np.array([[i * dx, 0.0] for i in range(n)])


def test_success_within_three_units():
    traj = Trajectory([[0, 0], [7.1, 0]], [[0, 0], [10, 0]], [10, 0], 10.0, success_threshold=3.0)
    rep = evaluate(traj)
    assert rep.ne == pytest.approx(2.9)
    assert rep.sr == 1.0


def test_spl_halves_when_path_is_twice_the_shortest():
    pos = [[0, 0], [10, 0], [0, 0], [0, 0.0]]
    traj = Trajectory(pos + [[0, 0]], [[0, 0]], [0, 0], 10.0)
    rep = evaluate(traj)
    assert rep.tl == 20.0
    assert rep.spl == 0.5


def test_identical_path_ending_at_goal():
    ref = straight(5)
    rep = evaluate(Trajectory(ref, ref, ref[-1], 4.0))
    assert (rep.ndtw, rep.sdtw, rep.sr, rep.spl) == (1.0, 1.0, 1.0, 1.0)


def test_single_point_trajectory():
    rep = evaluate(Trajectory([[1.0, 1.0]], [[1.0, 1.0]], [1.2, 1.0], 0.2))
    assert rep.tl == 0.0
    assert rep.spl == rep.sr == 1.0


def test_osr_counts_passing_near_the_goal():
    rep = evaluate(Trajectory([[0, 0], [5, 0], [0, 0.0]], [[0, 0], [5, 0]], [5, 0.2], 5.0))
    assert rep.osr == 1.0 and rep.sr == 0.0 and rep.sdtw == 0.0


def test_invalid_trajectories():
    with pytest.raises(UsageError):
        Trajectory(np.zeros((0, 2)), [[0, 0]], [0, 0], 1.0)
    with pytest.raises(DomainError):
        Trajectory([[0, 0]], [[0, 0]], [0, 0], 0.0)


points = st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=12)


@given(points, points, st.tuples(st.floats(0, 10), st.floats(0, 10)),
       st.floats(0.1, 15), st.floats(0.1, 3))
@settings(max_examples=300, deadline=None)
def test_metric_invariants(pos, ref, goal, shortest, thr):
    rep = evaluate(Trajectory(pos, ref, goal, shortest, thr))
    assert rep.sr in (0.0, 1.0) and rep.osr in (0.0, 1.0)
    assert rep.spl <= rep.sr
    assert rep.osr >= rep.sr
    assert 0.0 < rep.ndtw <= 1.0
    assert rep.sdtw <= min(rep.sr, rep.ndtw)


def test_aggregate_examples_and_oracle():
    one = MetricReport(1, 2, 1, 1, 0.5, 0.8, 0.8)
    assert aggregate([one]) == one
    two = aggregate([one, MetricReport(3, 4, 0, 1, 0, 0.2, 0)])
    assert two.sr == 0.5 and two.tl == 2.0
    rng = np.random.default_rng(0)
    reports = [MetricReport(*rng.random(7)) for _ in range(100)]
    agg = aggregate(reports)
    for i, f in enumerate(METRIC_FIELDS):
        assert getattr(agg, f) == pytest.approx(np.mean([getattr(r, f) for r in reports]), abs=1e-15)
    with pytest.raises(UsageError):
        aggregate([])


def test_csv_round_trip():
    rows = [("a", MetricReport(0.1, 0.2, 1.0, 1.0, 0.3, 1 / 3, 1 / 3)),
            ("aggregate", MetricReport(*[math.pi] * 7))]
    parsed = list(csv.DictReader(io.StringIO(reports_to_csv(rows))))
    assert [r["episode_id"] for r in parsed] == ["a", "aggregate"]
    assert report_from_mapping(parsed[0]) == rows[0][1]
