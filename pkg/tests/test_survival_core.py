"""Tests for Kaplan-Meier, RMST, pseudo-observations and the weighted Cox solver."""

import math

import numpy as np
import pytest
from scipy.optimize import minimize, minimize_scalar

from src.services.survival_core import (
    cox_fit,
    export_curve,
    km_fit,
    partial_log_likelihood,
    pseudo_rmst,
    rmst,
    survival_at,
)
from src.utils.exceptions import (
    AllZeroWeightsError,
    GroupTooSmallError,
    NoEventsError,
    SingularDesignError,
)


class TestKaplanMeier:
    """Tests for km_fit, survival_at and rmst."""

    def test_hand_example(self):
        """Test times [1, 2, 3], events [1, 0, 1]."""
        curve = km_fit([1, 2, 3], [1, 0, 1])

        assert curve.survival.tolist() == pytest.approx([2 / 3, 2 / 3, 0.0])
        assert survival_at(curve, 2.5) == pytest.approx(2 / 3)
        assert survival_at(curve, 0.5) == 1.0
        assert rmst(curve, 3.0) == pytest.approx(1 + 2 * (2 / 3), abs=1e-4)

    def test_integer_weights_match_duplication(self):
        """Test that weight 2 equals listing a patient twice."""
        weighted = km_fit([1, 2, 3, 4], [1, 1, 0, 1], weights=[2, 1, 1, 1])
        duplicated = km_fit([1, 1, 2, 3, 4], [1, 1, 1, 0, 1])

        assert np.allclose(weighted.survival, duplicated.survival)

    def test_weight_scale_invariance(self):
        """Test a non-integer common factor on every weight leaves the curve unchanged."""
        times = [1.0, 2.0, 2.0, 3.5, 4.0, 6.0]
        events = [1, 0, 1, 1, 0, 1]
        weights = np.array([0.4, 1.3, 2.0, 0.7, 1.1, 0.9])

        base = km_fit(times, events, weights=weights)
        scaled = km_fit(times, events, weights=0.37 * weights)

        assert np.allclose(scaled.survival, base.survival, atol=1e-12)
        assert rmst(scaled, 5.0) == pytest.approx(rmst(base, 5.0), abs=1e-12)

    def test_ties_aggregate(self):
        """Test tied event times share one step."""
        curve = km_fit([2, 2, 5, 6], [1, 1, 0, 1])
        assert curve.times.tolist() == [2.0, 5.0, 6.0]
        assert curve.survival[0] == pytest.approx(0.5)

    def test_all_censored(self):
        """Test a curve without events stays at one."""
        curve = km_fit([1, 2, 3], [0, 0, 0])
        assert np.all(curve.survival == 1.0)
        assert rmst(curve, 10.0) == pytest.approx(10.0)

    def test_rmst_beyond_last_time(self):
        """Test RMST carries the last value past the final time."""
        curve = km_fit([1.0, 2.0], [0, 1])
        # S = 1 on [0, 2), 0 afterwards
        assert rmst(curve, 5.0) == pytest.approx(2.0)

    def test_invalid_inputs(self):
        """Test domain errors."""
        with pytest.raises(ValueError):
            km_fit([1, -2], [1, 0])
        with pytest.raises(AllZeroWeightsError):
            km_fit([1, 2], [1, 0], weights=[0, 0])
        with pytest.raises(ValueError):
            rmst(km_fit([1], [1]), 0.0)

    def test_export_curve(self, tmp_path):
        """Test the two-column CSV export."""
        path = export_curve(km_fit([1, 2, 3], [1, 0, 1]), tmp_path / "km.csv")
        assert path.read_text().splitlines()[0] == "time,survival"


class TestPseudoRMST:
    """Tests for jackknife pseudo-observations."""

    def test_no_censoring_equals_truncated_time(self):
        """Test Y_i = min(T_i, tau) without censoring."""
        rng = np.random.default_rng(11)
        for n in (5, 40, 200):
            times = rng.uniform(0.1, 5.0, size=n)
            pseudo = pseudo_rmst(times, np.ones(n, dtype=int), tau=3.0)
            assert np.max(np.abs(pseudo.values - np.minimum(times, 3.0))) < 1e-10

    def test_mean_identity_with_event_last(self):
        """Test mean(Y) equals the full-sample RMST when the largest time is an event."""
        rng = np.random.default_rng(12)
        times = rng.uniform(0.1, 5.0, size=60)
        events = rng.binomial(1, 0.6, size=60)
        events[np.argmax(times)] = 1

        pseudo = pseudo_rmst(times, events, tau=3.0)
        full = rmst(km_fit(times, events), 3.0)
        assert abs(pseudo.values.mean() - full) < 1e-10

    def test_censored_example(self):
        """Test times [1, 2], events [0, 1], tau 2 gives Y = [2, 2]."""
        pseudo = pseudo_rmst([1.0, 2.0], [0, 1], tau=2.0)
        assert pseudo.values.tolist() == pytest.approx([2.0, 2.0])

    def test_two_events(self):
        """Test times [1, 3], events [1, 1], tau 2 gives Y_1 = 1."""
        pseudo = pseudo_rmst([1.0, 3.0], [1, 1], tau=2.0)
        assert pseudo.values[0] == pytest.approx(1.0)
        assert pseudo.values[1] == pytest.approx(2.0)

    def test_per_arm_scope(self):
        """Test per-arm pseudo-values equal separate per-arm computations."""
        times = np.array([1.0, 2.0, 4.0, 1.5, 2.5, 3.5])
        events = np.array([1, 1, 0, 1, 0, 1])
        arm = np.array([1, 1, 1, 0, 0, 0])
        pooled = pseudo_rmst(times, events, 3.0, "per-arm", arm)

        treated = pseudo_rmst(times[:3], events[:3], 3.0)
        assert np.allclose(pooled.values[:3], treated.values)
        assert pooled.scope == "per-arm"

    def test_group_too_small(self):
        """Test a singleton arm raises GroupTooSmallError."""
        with pytest.raises(GroupTooSmallError):
            pseudo_rmst([1.0, 2.0, 3.0], [1, 1, 1], 2.0, "per-arm", [1, 0, 0])

    def test_per_arm_needs_treatment(self):
        """Test per-arm scope without treatment raises ValueError."""
        with pytest.raises(ValueError):
            pseudo_rmst([1.0, 2.0], [1, 1], 2.0, "per-arm")


def _brute_force_cox(X, times, events, weights):
    """Maximize the partial likelihood directly."""
    d = X.shape[1]
    if d == 1:
        res = minimize_scalar(
            lambda b: -partial_log_likelihood([b], X, times, events, weights),
            bounds=(-8, 8), method="bounded", options={"xatol": 1e-10},
        )
        return np.array([res.x]), abs(res.x) < 7.9
    res = minimize(
        lambda b: -partial_log_likelihood(b, X, times, events, weights),
        np.zeros(d), method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000},
    )
    return res.x, res.success and np.all(np.abs(res.x) < 7.9)


def _efron_loop(beta, X, times, events, weights):
    """Weighted Efron log-likelihood written out one event time at a time."""
    X = np.asarray(X, dtype=float).reshape(len(times), -1)
    eta = X @ np.asarray(beta, dtype=float)
    risk_score = weights * np.exp(eta)
    total = 0.0
    for t in np.unique(times[events == 1]):
        dead = (times == t) & (events == 1)
        m = int(dead.sum())
        R = risk_score[times >= t].sum()
        D = risk_score[dead].sum()
        W = weights[dead].sum()
        total += float(np.sum(weights[dead] * eta[dead]))
        for l in range(m):
            total -= (W / m) * math.log(R - (l / m) * D)
    return total


def _hessian_fd(beta, X, times, events, h=1e-4):
    """Central-difference Hessian of the partial log-likelihood."""
    beta = np.asarray(beta, dtype=float)
    d = len(beta)
    H = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            ei, ej = np.eye(d)[i] * h, np.eye(d)[j] * h
            H[i, j] = (
                partial_log_likelihood(beta + ei + ej, X, times, events)
                - partial_log_likelihood(beta + ei - ej, X, times, events)
                - partial_log_likelihood(beta - ei + ej, X, times, events)
                + partial_log_likelihood(beta - ei - ej, X, times, events)
            ) / (4 * h * h)
    return H


@pytest.fixture
def two_column_data():
    rng = np.random.default_rng(22)
    n = 20
    treatment = np.array([0, 1] * 10)
    x = rng.standard_normal(n)
    times = rng.exponential(1.0, size=n) + 0.05
    events = np.ones(n, dtype=int)
    events[::5] = 0
    return treatment, x, times, events


class TestPartialLikelihood:
    """Tests for the weighted Efron partial log-likelihood."""

    def test_matches_event_time_loop(self):
        """Test the vectorized likelihood against a per-event-time loop on tied, weighted data."""
        rng = np.random.default_rng(24)
        for _ in range(20):
            n = int(rng.integers(6, 25))
            X = rng.standard_normal((n, 2))
            times = rng.integers(1, 6, size=n).astype(float)  # heavy ties
            events = rng.binomial(1, 0.7, size=n)
            events[0] = 1
            weights = rng.uniform(0.2, 3.0, size=n)
            beta = rng.normal(0.0, 0.8, size=2)

            assert partial_log_likelihood(beta, X, times, events, weights) == pytest.approx(
                _efron_loop(beta, X, times, events, weights), abs=1e-9
            )

    def test_unit_weights_hand_value(self):
        """Test a tied pair then a last death at beta = 0 gives -(log 3 + log 2)."""
        times = np.array([1.0, 1.0, 2.0])
        events = np.array([1, 1, 1])
        assert partial_log_likelihood([0.0], np.zeros(3), times, events) == pytest.approx(-math.log(6.0))


class TestCoxFit:
    """Tests for the weighted Efron Cox solver."""

    def test_matches_brute_force(self):
        """Test Newton estimates against direct maximization on small instances."""
        rng = np.random.default_rng(21)
        checked = 0
        for _ in range(50):
            n = int(rng.integers(8, 21))
            treatment = rng.binomial(1, 0.5, size=n)
            if treatment.min() == treatment.max():
                continue
            times = np.round(rng.exponential(2.0, size=n), 1) + 0.1
            events = rng.binomial(1, 0.8, size=n)
            weights = rng.uniform(0.5, 2.0, size=n)
            if events.sum() < 2:
                continue
            oracle, ok = _brute_force_cox(treatment.reshape(-1, 1).astype(float), times, events, weights)
            if not ok:
                # Monotone likelihood: no finite maximizer to compare against
                continue
            est = cox_fit(None, treatment, times, events, weights)
            assert est.converged
            assert est.log_hr == pytest.approx(oracle[0], abs=1e-4)
            checked += 1
        assert checked >= 20

    def test_identical_arms(self):
        """Test arms with identical records give log HR 0."""
        times = np.array([1.0, 2.5, 3.0, 4.0, 6.0, 7.5])
        events = np.array([1, 0, 1, 1, 0, 1])
        x = np.array([0.3, -1.0, 0.8, 0.0, 1.5, -0.4])

        est = cox_fit(np.concatenate([x, x]), np.repeat([1, 0], 6), np.tile(times, 2), np.tile(events, 2))
        assert est.log_hr == pytest.approx(0.0, abs=1e-10)

    def test_order_invariance(self, two_column_data):
        """Test permuting patient order leaves the coefficients unchanged."""
        treatment, x, times, events = two_column_data
        weights = np.linspace(0.5, 2.0, len(times))
        perm = np.random.default_rng(25).permutation(len(times))

        base = cox_fit(x, treatment, times, events, weights)
        shuffled = cox_fit(x[perm], treatment[perm], times[perm], events[perm], weights[perm])
        assert np.allclose(shuffled.coefficients, base.coefficients, atol=1e-8)

    def test_optimum_conditions(self, two_column_data):
        """Test gradient max-norm below 1e-6 and a negative definite Hessian at the optimum."""
        treatment, x, times, events = two_column_data
        est = cox_fit(x, treatment, times, events)
        X = np.column_stack([treatment, x]).astype(float)

        assert est.gradient_norm < 1e-6
        H = _hessian_fd(est.coefficients, X, times, events)
        assert np.all(np.linalg.eigvalsh((H + H.T) / 2) < 0)

    def test_two_columns_match_brute_force(self):
        """Test treatment plus one covariate against Nelder-Mead."""
        rng = np.random.default_rng(22)
        n = 20
        treatment = np.array([0, 1] * 10)
        x = rng.standard_normal(n)
        times = rng.exponential(1.0, size=n) + 0.05
        events = np.ones(n, dtype=int)
        events[::5] = 0

        est = cox_fit(x, treatment, times, events)
        oracle, ok = _brute_force_cox(np.column_stack([treatment, x]).astype(float), times, events, np.ones(n))
        assert ok
        assert np.allclose(est.coefficients, oracle, atol=1e-4)

    def test_weight_scale_invariance(self):
        """Test multiplying every weight by a constant leaves the estimate unchanged."""
        times = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 2.0, 7.0])
        events = np.array([1, 1, 0, 1, 1, 0, 1, 1])
        treatment = np.array([1, 0, 1, 0, 1, 0, 0, 1])
        weights = np.array([2.0, 1.0, 0.5, 1.0, 1.5, 1.0, 3.0, 1.0])

        base = cox_fit(None, treatment, times, events, weights=weights)
        scaled = cox_fit(None, treatment, times, events, weights=7.5 * weights)
        assert scaled.log_hr == pytest.approx(base.log_hr, abs=1e-8)

    def test_no_events(self):
        """Test that a fit without events raises NoEventsError."""
        with pytest.raises(NoEventsError):
            cox_fit(None, [1, 0, 1], [1, 2, 3], [0, 0, 0])

    def test_constant_treatment(self):
        """Test that a constant treatment raises SingularDesignError."""
        with pytest.raises(SingularDesignError):
            cox_fit(None, [1, 1, 1], [1, 2, 3], [1, 1, 0])

    def test_constant_covariate_dropped(self):
        """Test constant covariates are dropped and reported."""
        est = cox_fit(
            np.column_stack([np.ones(6), np.arange(6.0)]),
            [1, 0, 1, 0, 1, 0],
            [1, 2, 3, 4, 5, 6],
            [1, 1, 1, 0, 1, 1],
            column_names=["const", "age"],
        )
        assert est.dropped_columns == ("const",)
        assert est.column_names == ("treatment", "age")

    def test_collinear_design(self):
        """Test duplicated covariates raise SingularDesignError."""
        x = np.arange(6.0)
        with pytest.raises(SingularDesignError):
            cox_fit(np.column_stack([x, 2 * x]), [1, 0, 1, 0, 1, 0], [1, 2, 3, 4, 5, 6], [1, 1, 1, 0, 1, 1])

    def test_standard_error_positive(self):
        """Test the SE comes from the inverse observed information."""
        rng = np.random.default_rng(23)
        n = 200
        treatment = rng.binomial(1, 0.5, size=n)
        times = rng.exponential(1.0 / np.exp(-0.5 * treatment))
        est = cox_fit(None, treatment, times, np.ones(n, dtype=int))

        assert est.converged
        assert 0.05 < est.se < 0.3
        assert est.log_hr == pytest.approx(-0.5, abs=0.4)
        assert math.isfinite(est.log_likelihood)
