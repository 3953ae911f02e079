import itertools
import math
import time
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pedassign.assign import (
    AnalyticEvaluator,
    UpdateParams,
    adapt_delta,
    check_termination,
    eligible_routes,
    extreme_routes,
    load_latency_spec,
    probability_shift,
    run_assignment,
    run_sweep,
    update_ratios,
)
from pedassign.errors import ConfigError, RunError
from pedassign.simulate import RouteStats


def wardrop_affine(latencies, total=1.0):
    """Closed-form user equilibrium for affine latencies t_i = a_i + b_i x_i.

    Water-filling over the support: common time t on carrying routes, zero
    flow on routes with a_i >= t.
    """
    order = sorted(range(len(latencies)), key=lambda i: latencies[i][0])
    support = []
    for idx in order:
        support.append(idx)
        a = [latencies[i][0] for i in support]
        b = [latencies[i][1] for i in support]
        t = (total + sum(ai / bi for ai, bi in zip(a, b))) / sum(1 / bi for bi in b)
        rest = [i for i in order if i not in support]
        if all(t <= latencies[i][0] for i in rest) and all(t >= ai for ai in a):
            x = np.zeros(len(latencies))
            for i in support:
                x[i] = (t - latencies[i][0]) / latencies[i][1]
            return x
    raise AssertionError("no equilibrium found")


def beckmann_bruteforce(latencies, total=1.0, points=10_000):
    """Grid minimization of the Beckmann potential over the simplex."""
    n = len(latencies)

    def phi(x):
        return sum(a * xi + 0.5 * b * xi * xi for (a, b), xi in zip(latencies, x))

    best_x, best_phi = None, math.inf
    if n == 2:
        for k in range(points + 1):
            x1 = total * k / points
            x = (x1, total - x1)
            p = phi(x)
            if p < best_phi:
                best_phi, best_x = p, x
        grid_step = total / points
    else:
        # compositions of m units over n routes, m chosen to get ~`points` nodes
        m = {3: 140, 4: 38}[n]
        for combo in itertools.combinations(range(m + n - 1), n - 1):
            parts = []
            prev = -1
            for c in combo:
                parts.append(c - prev - 1)
                prev = c
            parts.append(m + n - 2 - prev)
            x = tuple(total * p / m for p in parts)
            p = phi(x)
            if p < best_phi:
                best_phi, best_x = p, x
        grid_step = total / m
    return np.array(best_x), grid_step


FIVE_NETWORKS = [
    [(60.0, 40.0), (70.0, 20.0)],
    [(45.0, 90.0), (50.0, 30.0)],
    [(50.0, 10.0), (200.0, 10.0)],  # route 2 dominated at every split
    [(40.0, 60.0), (50.0, 40.0), (60.0, 20.0)],
    [(30.0, 80.0), (35.0, 60.0), (40.0, 40.0), (45.0, 20.0)],
]


class TestProbabilityShift:
    def test_hand_evaluated_grid(self):
        # exact decimal expectations evaluated by hand from the update rule
        cases = [
            # (alpha, delta, t_max, t_min, expected)
            (0.1, 1.0, 90.0, 60.0, 0.02),        # 0.1 * (30/150)
            (0.1, 1.0, 50.0, 50.0, 0.0),
            (0.1, 1.0, 150.0, 50.0, 0.05),       # 0.1 * 0.5
            (0.1, 1.0, 300.0, 100.0, 0.05),
            (0.1, 1.0, 110.0, 90.0, 0.01),       # 0.1 * (20/200)
            (0.1, 1.0, 75.0, 25.0, 0.05),
            (0.1, 1.0, 120.0, 80.0, 0.02),       # 0.1 * (40/200)
            (0.1, 1.0, 130.0, 70.0, 0.03),
            (0.1, 1.0, 140.0, 60.0, 0.04),
            (0.1, 1.0, 160.0, 40.0, 0.06),
            (0.1, 2.0, 75.0, 25.0, 0.025),       # 0.1 * 0.5^2
            (0.1, 2.0, 90.0, 60.0, 0.004),       # 0.1 * 0.2^2
            (0.1, 2.0, 120.0, 80.0, 0.004),
            (0.1, 3.0, 75.0, 25.0, 0.0125),      # 0.1 * 0.5^3
            (0.2, 1.0, 90.0, 60.0, 0.04),
            (0.2, 1.0, 75.0, 25.0, 0.1),
            (0.2, 2.0, 75.0, 25.0, 0.05),
            (0.5, 1.0, 90.0, 60.0, 0.1),
            (0.1, 0.5, 80.0, 45.0, 0.052915026221291815),  # 0.1 * 0.28^0.5
            (0.3, 1.0, 200.0, 120.0, 0.075),     # 0.3 * (80/320)
        ]
        assert len(cases) == 20
        for alpha, delta, t_max, t_min, expected in cases:
            params = UpdateParams(alpha=alpha, delta=delta)
            assert probability_shift(t_max, t_min, params) == pytest.approx(expected, abs=1e-12)

    def test_scale_invariance_examples(self):
        params = UpdateParams()
        for c in (2.0, 3.7, 10.0, 0.5):
            assert probability_shift(90 * c, 60 * c, params) == \
                pytest.approx(probability_shift(90, 60, params), abs=1e-12)

    @given(t_min=st.floats(1.0, 1e4), spread=st.floats(0.0, 1e4),
           c=st.floats(0.01, 100.0))
    @settings(max_examples=200, deadline=None)
    def test_scale_invariance_property(self, t_min, spread, c):
        params = UpdateParams()
        base = probability_shift(t_min + spread, t_min, params)
        scaled = probability_shift(c * (t_min + spread), c * t_min, params)
        assert scaled == pytest.approx(base, rel=1e-9, abs=1e-12)

    def test_monotone_in_spread_at_fixed_sum(self):
        params = UpdateParams()
        total = 200.0
        shifts = []
        for spread in np.linspace(0.0, 150.0, 40):
            t_max = (total + spread) / 2
            t_min = (total - spread) / 2
            shifts.append(probability_shift(t_max, t_min, params))
        assert all(b > a for a, b in zip(shifts, shifts[1:]))

    def test_bounded_by_alpha(self):
        params = UpdateParams(alpha=0.1)
        assert 0 <= probability_shift(1e9, 1e-3, params) < 0.1

    def test_nonpositive_t_min_rejected(self):
        with pytest.raises(RunError):
            probability_shift(10.0, 0.0, UpdateParams())


class TestUpdateRatios:
    def test_direct_application(self):
        p = np.array([0.25, 0.25, 0.25, 0.25])
        out, realized = update_ratios(p, [1, 2, 3, 4], argmax_route=2, argmin_route=4, dp=0.02)
        assert out == pytest.approx([0.25, 0.23, 0.25, 0.27])
        assert realized == pytest.approx(0.02)

    def test_clamped_at_zero(self):
        p = np.array([0.99, 0.01])
        out, realized = update_ratios(p, [1, 2], argmax_route=2, argmin_route=1, dp=0.02)
        assert out == pytest.approx([1.0, 0.0])
        assert realized == pytest.approx(0.01)

    def test_zero_dp_unchanged(self):
        p = np.array([0.5, 0.5])
        out, realized = update_ratios(p, [1, 2], argmax_route=1, argmin_route=2, dp=0.0)
        assert out == pytest.approx([0.5, 0.5])
        assert realized == 0.0

    def test_single_eligible_route_noop_with_warning(self):
        p = np.array([1.0])
        with pytest.warns(UserWarning):
            out, realized = update_ratios(p, [1], argmax_route=None, argmin_route=None, dp=0.05)
        assert out == pytest.approx([1.0])
        assert realized == 0.0

    @given(st.integers(2, 6), st.integers(0, 10_000), st.floats(0.0, 0.2))
    @settings(max_examples=150, deadline=None)
    def test_simplex_preserved(self, n, seed, dp):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(n))
        ids = list(range(1, n + 1))
        hi, lo = int(rng.integers(0, n)), int(rng.integers(0, n))
        if hi == lo:
            return
        out, _ = update_ratios(p, ids, argmax_route=ids[hi], argmin_route=ids[lo], dp=dp)
        assert abs(out.sum() - 1.0) <= 1e-9
        assert (out >= -1e-15).all()


class TestAdaptDelta:
    def test_first_iteration_unchanged(self):
        assert adapt_delta(None, (1, 2), 1.0, UpdateParams()) == 1.0

    def test_identical_pair_decreases(self):
        d = adapt_delta((2, 4), (2, 4), 1.0, UpdateParams())
        assert d == pytest.approx(2.0 / 3.0)

    def test_swapped_pair_increases(self):
        d = adapt_delta((2, 4), (4, 2), 1.0, UpdateParams())
        assert d == pytest.approx(1.5)

    def test_unrelated_pair_unchanged(self):
        assert adapt_delta((1, 2), (3, 4), 1.0, UpdateParams()) == 1.0

    def test_bounds_respected(self):
        params = UpdateParams()
        d = 0.26
        for _ in range(10):
            d = adapt_delta((1, 2), (1, 2), d, params)
        assert d == params.delta_bounds[0]
        d = 3.9
        for _ in range(10):
            d = adapt_delta((1, 2), (2, 1), d, params)
        assert d == params.delta_bounds[1]


class TestTermination:
    def _stats(self, means):
        return {i + 1: RouteStats(mean=m, count=100) for i, m in enumerate(means)}

    def test_small_spread_terminates(self):
        stats = self._stats([100.2, 100.5, 100.4])
        assert check_termination(stats, [1, 2, 3], 0.5) is True

    def test_large_spread_continues(self):
        stats = self._stats([100.0, 100.6])
        assert check_termination(stats, [1, 2], 0.5) is False

    def test_single_route_terminates(self):
        stats = self._stats([123.4])
        assert check_termination(stats, [1], 0.5) is True


class TestEligibility:
    def test_zero_probability_and_small_samples_excluded(self):
        stats = {1: RouteStats(80.0, 100), 2: RouteStats(70.0, 3),
                 3: RouteStats(90.0, 50), 4: RouteStats(60.0, 200)}
        probs = np.array([0.4, 0.3, 0.0, 0.3])
        elig = eligible_routes(probs, stats, [1, 2, 3, 4], min_samples=10)
        assert elig == [1, 4]

    def test_tie_breaking_lowest_id(self):
        stats = {1: RouteStats(80.0, 100), 2: RouteStats(80.0, 100),
                 3: RouteStats(60.0, 100), 4: RouteStats(60.0, 100)}
        slowest, fastest = extreme_routes(stats, [1, 2, 3, 4])
        assert slowest == 1
        assert fastest == 3


class TestRunAssignment:
    def test_wardrop_oracle_equivalence_five_networks(self):
        t0 = time.monotonic()
        for latencies in FIVE_NETWORKS:
            closed = wardrop_affine(latencies)
            brute, step = beckmann_bruteforce(latencies)
            assert np.abs(brute - closed).max() <= 2 * step, f"{latencies}"
            ev = AnalyticEvaluator(latencies, demand=1.0)
            res = run_assignment(ev, max_iterations=100)
            got = res.selected.probabilities
            assert np.abs(got - closed).max() <= 0.02, \
                f"{latencies}: got {got}, want {closed}"
        assert time.monotonic() - t0 < 5.0

    def test_dominated_route_driven_to_zero(self):
        latencies = FIVE_NETWORKS[2]
        # dominance check: route 2 slower at every split on the oracle
        for x1 in np.linspace(0, 1, 101):
            t1 = latencies[0][0] + latencies[0][1] * x1
            t2 = latencies[1][0] + latencies[1][1] * (1 - x1)
            if x1 < 1.0:
                assert t2 > t1
        res = run_assignment(AnalyticEvaluator(latencies), max_iterations=100)
        assert res.selected.probabilities[1] == 0.0

    def test_single_route_terminates_immediately(self):
        res = run_assignment(AnalyticEvaluator([(50.0, 10.0)]), max_iterations=100)
        assert res.terminated
        assert res.selected_iteration == 1
        assert res.selected.probabilities == pytest.approx([1.0])

    def test_zero_probability_route_never_reenters(self):
        latencies = [(50.0, 10.0), (200.0, 10.0), (55.0, 20.0)]
        res = run_assignment(AnalyticEvaluator(latencies), max_iterations=100)
        dead_since = None
        for it in res.history:
            if it.probabilities[1] == 0.0 and dead_since is None:
                dead_since = it.index
            if dead_since is not None and it.index >= dead_since:
                assert it.probabilities[1] == 0.0

    def test_selected_never_worse_than_first_iteration(self):
        for latencies in FIVE_NETWORKS:
            res = run_assignment(AnalyticEvaluator(latencies), max_iterations=100)
            assert res.selected.spread <= res.history[0].spread + 1e-12

    def test_uniform_initialization(self):
        res = run_assignment(AnalyticEvaluator(FIVE_NETWORKS[4]), max_iterations=1)
        assert res.history[0].probabilities == pytest.approx([0.25] * 4)

    def test_termination_contract(self):
        for latencies in FIVE_NETWORKS:
            for cap in (3, 100):
                res = run_assignment(AnalyticEvaluator(latencies), max_iterations=cap)
                if res.terminated:
                    assert res.history[-1].spread <= 0.5
                    assert res.selected_iteration == res.history[-1].index
                else:
                    spreads = [it.spread for it in res.history]
                    assert res.selected.spread == min(spreads)
                    first_best = min(range(len(spreads)), key=lambda i: spreads[i]) + 1
                    assert res.selected_iteration == first_best

    def test_simplex_preserved_every_iteration(self):
        res = run_assignment(AnalyticEvaluator(FIVE_NETWORKS[4]), max_iterations=100)
        for it in res.history:
            assert abs(it.probabilities.sum() - 1.0) <= 1e-9
            assert (it.probabilities >= 0).all()


class TestSweep:
    def test_oracle_sweep_shapes(self):
        results = {}
        latencies = FIVE_NETWORKS[0]

        class _Factory:
            route_ids = [1, 2]

        for demand in (0.5, 1.0):
            for seed in (1, 2):
                ev = AnalyticEvaluator(latencies, demand=demand)
                results[(demand, seed)] = run_assignment(ev, base_seed=seed)
        assert len(results) == 4

    def test_repeated_seed_identical(self, two_walls_routes):
        from pedassign.simulate import SimulationConfig
        cfg = SimulationConfig(demand=1.0, duration=60.0, window=(20, 60), seed=1)
        runs = []
        for _ in range(2):
            out = run_sweep(two_walls_routes, cfg, demands=[1.0], seeds=[5],
                            max_iterations=2, min_samples=1)
            (result,) = out.values()
            assert not isinstance(result, Exception)
            runs.append(result)
        r1, r2 = runs
        assert len(r1.history) == len(r2.history)
        for a, b in zip(r1.history, r2.history):
            assert np.array_equal(a.probabilities, b.probabilities)
            assert a.t_max == b.t_max and a.t_min == b.t_min

    def test_empty_lists_rejected(self, two_walls_routes):
        from pedassign.simulate import SimulationConfig
        cfg = SimulationConfig(demand=1.0, duration=60.0, window=(20, 60), seed=1)
        with pytest.raises(ConfigError):
            run_sweep(two_walls_routes, cfg, demands=[], seeds=[1])


class TestLatencySpec:
    def test_parse(self):
        text = "[route]\nfree_flow = 60\nslope = 40\n\n[route]\nfree_flow = 70\nslope = 20\n"
        assert load_latency_spec(text) == [(60.0, 40.0), (70.0, 20.0)]

    def test_rejects_unknown_section(self):
        with pytest.raises(ConfigError):
            load_latency_spec("[network]\nfree_flow = 60\n")

    def test_rejects_empty(self):
        with pytest.raises(ConfigError):
            load_latency_spec("# nothing\n")
