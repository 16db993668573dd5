import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaysindy.optimizer import (BoConfig, CandidateGrid, EvaluationLog, Evaluation, axis_range, bo_minimize,
                                  expected_improvement, grid_minimize, log_expected_improvement,
                                  reduction_percentage, reduction_stats)


class TestExpectedImprovement:
    def test_zero_std(self):
        assert expected_improvement(2.0, 0.0, 1.0) == 0.0
        assert expected_improvement(0.5, 0.0, 1.0) == pytest.approx(0.5)

    def test_z_zero(self):
        assert expected_improvement(1.0, 1.0, 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)

    @pytest.mark.parametrize("mean,std,best", [(0.0, 1.0, 0.0), (1.0, 0.5, 0.2), (-0.3, 2.0, 0.1),
                                               (3.0, 1.0, 0.0), (0.0, 0.1, 0.25)])
    def test_monte_carlo(self, mean, std, best):
        rng = np.random.default_rng(99)
        draws = np.maximum(best - rng.normal(mean, std, 1_000_000), 0.0)
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(expected_improvement(mean, std, best) - draws.mean()) <= 3 * se

    @given(st.floats(-50, 50), st.one_of(st.just(0.0), st.floats(1e-12, 20)), st.floats(-50, 50))
    @settings(max_examples=200, deadline=None)
    def test_nonnegative_and_positive(self, mean, std, best):
        ei = float(expected_improvement(mean, std, best))
        assert ei >= 0.0
        if std > 0 and (best - mean) / std > -30:
            assert ei > 0.0

    def test_subnormal_std_is_finite(self):
        assert expected_improvement(1.0, 5e-324, 0.0) == 0.0
        assert expected_improvement(0.0, 5e-324, 1.0) == pytest.approx(1.0)

    def test_far_tail_stays_positive(self):
        assert expected_improvement(10.0, 1.0, 0.0) > 0.0

    def test_log_matches_linear(self):
        mean = np.linspace(-3, 6, 200)
        std = np.linspace(0.1, 2, 200)
        ei = expected_improvement(mean, std, 0.5)
        assert np.allclose(np.exp(log_expected_improvement(mean, std, 0.5)), ei, rtol=1e-10)

    def test_log_orders_underflowed_values(self):
        lei = log_expected_improvement(np.array([40.0, 50.0]), np.array([1.0, 1.0]), 0.0)
        assert np.all(np.isfinite(lei)) and lei[0] > lei[1]

    def test_negative_std_rejected(self):
        with pytest.raises(ValueError):
            expected_improvement(0.0, -1.0, 0.0)


class TestGrid:
    def test_two_delay_feasible_counts(self):
        for (start, stop, step), count in (((0.25, 4.75, 0.25), 171), ((0.20, 4.20, 0.10), 820),
                                           ((0.25, 3.25, 0.05), 1830)):
            axis = axis_range(start, stop, step)
            assert CandidateGrid([axis, axis], greater_than=[(0, 1)]).feasible_size == count

    def test_lex_order_and_filters(self):
        g = CandidateGrid([[1, 2, 3], [1, 2]], greater_than=[(0, 1)], excluded_below=[None, 2])
        assert g.feasible().tolist() == [[3.0, 2.0]]

    def test_invalid_axes(self):
        with pytest.raises(ValueError):
            CandidateGrid([[1, 1, 2]])
        with pytest.raises(ValueError):
            CandidateGrid([[1, 2]], constraint=lambda c: False)

    def test_axis_range_exact(self):
        a = axis_range(0.25, 4.24, 0.01)
        assert len(a) == 400 and a[75] == 1.0


class TestMinimize:
    def test_grid_small(self):
        r = grid_minimize(lambda c: abs(c[0] - 2), CandidateGrid([[1, 2, 3]]))
        assert r.argmin == (2.0,) and r.calls == 3 and reduction_stats(r) == 0.0

    def test_grid_first_occurrence_tie(self):
        r = grid_minimize(lambda c: 0.0, CandidateGrid([[1, 2, 3]]))
        assert r.argmin == (1.0,)

    def test_failures_become_inf(self):
        def g(c):
            if c[0] < 2:
                raise FloatingPointError("boom")
            return c[0]
        r = grid_minimize(g, CandidateGrid([[1, 2, 3]]))
        assert r.log.entries[0].value == math.inf and r.argmin == (2.0,)
        b = bo_minimize(g, CandidateGrid([[1, 2, 3]]), BoConfig(initial_design=2, budget=3, stall_patience=3))
        assert b.argmin == (2.0,)

    def test_quadratic_400(self):
        axis = axis_range(0.25, 4.24, 0.01)
        r = bo_minimize(lambda c: (c[0] - 1.0) ** 2, CandidateGrid([axis]), BoConfig(budget=100))
        assert r.argmin == (1.0,) and r.calls <= 100

    def test_full_budget_equals_grid(self):
        rng = np.random.default_rng(5)
        for trial in range(50):
            dim = int(rng.integers(1, 3))
            sizes = rng.integers(2, 7 if dim == 2 else 25, dim)
            axes = [np.sort(rng.choice(np.arange(1, 60), s, replace=False)) * 0.1 for s in sizes]
            grid = CandidateGrid(axes, greater_than=[(0, 1)] if dim == 2 and rng.random() < 0.5
                                 and (axes[0][-1] > axes[1][0]) else [])
            table = {tuple(p): float(v) for p, v in zip(grid.feasible(), rng.standard_normal(grid.feasible_size))}
            n = grid.feasible_size
            cfg = BoConfig(initial_design=max(1, min(3, n - 1)) if n > 1 else 1, budget=max(n, 2), stall_patience=n + 1,
                           seed=trial, target_transform="none")
            b = bo_minimize(table.__getitem__, grid, cfg)
            g = grid_minimize(table.__getitem__, grid)
            assert b.argmin == g.argmin and b.min_value == g.min_value and b.calls == n

    def test_no_reevaluation_and_feasibility(self):
        axis = axis_range(0.25, 4.75, 0.25)
        grid = CandidateGrid([axis, axis], greater_than=[(0, 1)])
        r = bo_minimize(lambda c: math.sin(3 * c[0]) + (c[1] - 0.5) ** 2, grid, BoConfig(initial_design=10, budget=60))
        cands = [e.candidate for e in r.log.entries]
        assert len(set(cands)) == len(cands) == r.calls
        assert all(c[0] > c[1] for c in cands)
        assert r.min_value == min(e.value for e in r.log.entries)
        assert all(a >= b for a, b in zip(r.log.best_so_far, r.log.best_so_far[1:]))
        assert [e.phase for e in r.log.entries[:10]] == ["initial"] * 10

    def test_seed_determinism(self):
        grid = CandidateGrid([axis_range(0.25, 4.24, 0.01)])
        f = lambda c: abs(math.sin(2 * c[0])) + 0.1 * c[0]  # noqa: E731
        a = bo_minimize(f, grid, BoConfig(seed=3))
        b = bo_minimize(f, grid, BoConfig(seed=3))
        c = bo_minimize(f, grid, BoConfig(seed=4))
        assert a.log.to_rows() == b.log.to_rows()
        assert a.log.to_rows()[:5] != c.log.to_rows()[:5]

    def test_stall_stops_early(self):
        grid = CandidateGrid([axis_range(0, 10, 0.01)])
        r = bo_minimize(lambda c: 1.0, grid, BoConfig(initial_design=5, budget=500, stall_patience=7))
        assert r.calls == 5 + 7


def test_reduction_values():
    assert reduction_percentage(85.5, 400) == pytest.approx(78.625)
    assert reduction_percentage(69.3, 400) == pytest.approx(82.675)
    assert reduction_percentage(400, 400) == 0.0


def test_log_csv(tmp_path):
    log = EvaluationLog()
    log.append(Evaluation((1.0, 0.5), 3.0, 0, "initial"))
    log.append(Evaluation((2.0, 0.5), 1.0, 1, "bo"))
    log.to_csv(tmp_path / "log.csv", ["tau1", "tau2"])
    rows = list(csv.reader(open(tmp_path / "log.csv")))
    assert rows[0] == ["iteration", "phase", "tau1", "tau2", "objective", "best_so_far"]
    assert [float(v) for v in rows[2][2:]] == [2.0, 0.5, 1.0, 1.0]
