"""Tests for the latent prognostic factor."""

import numpy as np
import pandas as pd
import pytest

from src.models.latent import CENSORED_DIRECTION, EVENT_DIRECTION, LatentConfig, NeighborSet
from src.services.cohort_loader import standardize
from src.services.latent_factor import (
    NeighborFinder,
    ablation_latent,
    check_neighbor_sets,
    compute_latent,
    directional_neighbors,
    export_latent,
    hidden_factor_diagnostics,
    normalize_latent,
    permute_latent,
    raw_latent,
)
from src.services.survival_core import pseudo_rmst


@pytest.fixture(scope="module")
def synth_latent(request):
    synth = request.getfixturevalue("synth_cohort")
    cohort = standardize(synth.cohort)
    return cohort, compute_latent(cohort, None, LatentConfig(k=5))


class TestNeighborFinder:
    """Tests for directional neighbor search."""

    def test_event_anchor_looks_at_longer_survivors(self, small_cohort):
        """Test an event anchor only gets same-arm patients with larger times."""
        finder = NeighborFinder(small_cohort)
        ns = finder.nearest(0, k=3)  # treated, event at t=2

        assert ns.direction == EVENT_DIRECTION
        assert all(small_cohort.treatment[j] == 1 for j in ns.neighbors)
        assert all(small_cohort.times[j] > 2.0 for j in ns.neighbors)
        assert len(ns.neighbors) == 3

    def test_censored_anchor_looks_at_earlier_events(self, small_cohort):
        """Test a censored anchor only gets same-arm events with smaller times."""
        ns = NeighborFinder(small_cohort).nearest(5, k=10)  # treated, censored at 6.5

        assert ns.direction == CENSORED_DIRECTION
        assert set(ns.neighbors) == {0, 2, 4}
        assert ns.candidate_count == 3

    def test_empty_candidate_set(self, small_cohort):
        """Test the longest-surviving event in an arm has no neighbors."""
        ns = NeighborFinder(small_cohort).nearest(3, k=5)  # treated event at t=8, the arm's maximum
        assert ns.is_empty

    def test_nearest_beats_closer_in_time(self, make_cohort):
        """Test the nearer candidate in X wins over the nearer one in time."""
        cohort = make_cohort(
            times=[2.0, 3.0, 5.0, 1.0, 4.0],
            events=[1, 0, 0, 1, 1],
            treatment=[1, 1, 1, 1, 0],
            covariates=[[0.0], [0.5], [0.1], [0.0], [3.0]],
        )
        ns = NeighborFinder(cohort).nearest(0, k=1)

        assert ns.candidate_count == 2
        assert ns.neighbors == (2,)

    def test_distance_ties_break_on_index(self, make_cohort):
        """Test equidistant candidates are taken in index order."""
        cohort = make_cohort([1, 2, 3, 4, 1], [1, 1, 1, 1, 0], [1, 1, 1, 1, 0],
                             covariates=[[0.0], [1.0], [-1.0], [5.0], [0.0]])
        ns = NeighborFinder(cohort).nearest(0, k=1)
        assert ns.neighbors == (1,)

    def test_include_score_requires_scores(self, small_cohort):
        """Test include_score without scores raises ValueError."""
        with pytest.raises(ValueError):
            NeighborFinder(small_cohort, include_score=True)

    def test_directional_neighbors_wrapper(self, small_cohort):
        """Test the one-off helper agrees with the finder."""
        pseudo = pseudo_rmst(small_cohort.times, small_cohort.events, 5.0)
        ns = directional_neighbors(small_cohort, pseudo, small_cohort.external_scores, 0, 2, include_score=True)
        assert len(ns.neighbors) == 2


class TestRawAndNormalized:
    """Tests for raw differencing and normalization."""

    def test_raw_latent(self):
        """Test U = Y_i minus the neighbor mean, 0 when empty."""
        sets = [NeighborSet(0, (1, 2), 2, EVENT_DIRECTION), NeighborSet(1, (), 0, EVENT_DIRECTION),
                NeighborSet(2, (1,), 1, CENSORED_DIRECTION)]
        u = raw_latent(np.array([1.0, 3.0, 5.0]), sets)
        assert u.tolist() == [-3.0, 0.0, 2.0]

    def test_winsor_quantile(self):
        """Test [1, 2, 3, 4, 100] uses q = 80.8 at the 0.95 quantile."""
        out = normalize_latent([1.0, 2.0, 3.0, 4.0, 100.0], [1] * 5, 0.95)
        assert out == pytest.approx([1 / 80.8, 2 / 80.8, 3 / 80.8, 4 / 80.8, 1.0])

    def test_groups_by_arm_and_sign(self):
        """Test normalization is separate per arm and sign, and zeros stay zero."""
        out = normalize_latent([-2.0, -4.0, 0.0, 3.0, 6.0, 1.0], [0, 0, 0, 0, 0, 1], 1.0)
        assert out.tolist() == pytest.approx([-0.5, -1.0, 0.0, 0.5, 1.0, 1.0])

    def test_clipping_is_monotone(self):
        """Test a larger |U| never gets a smaller |Ũ| within an (arm, sign) group."""
        rng = np.random.default_rng(43)
        raw = rng.standard_t(2, size=200)
        arm = rng.integers(0, 2, size=200)
        out = normalize_latent(raw, arm, 0.9)

        for a in (0, 1):
            for sign in (-1.0, 1.0):
                mask = (arm == a) & (np.sign(raw) == sign)
                order = np.argsort(np.abs(raw[mask]), kind="mergesort")
                assert np.all(np.diff(np.abs(out[mask])[order]) >= 0)
        assert np.max(np.abs(out)) == 1.0

    def test_invalid_quantile(self):
        """Test quantiles outside (0.5, 1] are rejected."""
        with pytest.raises(ValueError):
            normalize_latent([1.0], [0], 0.5)


class TestComputeLatent:
    """Tests for the full construction."""

    def test_directional_invariant(self, synth_latent):
        """Test every neighbor set respects arm and time direction."""
        cohort, assignment = synth_latent
        check_neighbor_sets(cohort, assignment.neighbor_sets)
        assert np.all(np.abs(assignment.normalized_u) <= 1.0)

    def test_fallback_flags(self, small_cohort):
        """Test patients without neighbors fall back to zero."""
        assignment = compute_latent(small_cohort, None, LatentConfig(k=3, tau=5.0))

        assert assignment.fallback_flags[3]
        assert assignment.normalized_u[3] == 0.0
        assert assignment.fallback_count == int(np.sum([ns.is_empty for ns in assignment.neighbor_sets]))

    def test_deterministic(self, small_cohort):
        """Test repeated runs agree exactly."""
        config = LatentConfig(k=2, tau=5.0)
        first = compute_latent(small_cohort, None, config)
        second = compute_latent(small_cohort, None, config)
        assert np.array_equal(first.normalized_u, second.normalized_u)

    def test_sign_without_censoring(self, make_cohort):
        """Test event patients get U <= 0 when pseudo-values are monotone in time."""
        rng = np.random.default_rng(41)
        n = 40
        cohort = make_cohort(
            rng.uniform(0.5, 10.0, size=n), np.ones(n, dtype=int), np.arange(n) % 2,
            covariates=rng.standard_normal((n, 2)),
        )
        assignment = compute_latent(cohort, None, LatentConfig(k=3, tau=20.0))

        nonempty = ~assignment.fallback_flags
        assert np.all(assignment.raw_u[nonempty] < 0)

    def test_check_rejects_cross_arm(self, small_cohort):
        """Test the checker catches a neighbor from the other arm."""
        with pytest.raises(ValueError, match="crosses"):
            check_neighbor_sets(small_cohort, [NeighborSet(0, (6,), 1, EVENT_DIRECTION)])

    def test_check_rejects_wrong_direction(self, small_cohort):
        """Test the checker catches a neighbor with an earlier time for an event anchor."""
        with pytest.raises(ValueError, match="directional"):
            check_neighbor_sets(small_cohort, [NeighborSet(2, (0,), 1, EVENT_DIRECTION)])


class TestPermutations:
    """Tests for permutation diagnostics."""

    def test_u_global_preserves_values(self, synth_latent):
        """Test the global permutation reorders the same values."""
        _, assignment = synth_latent
        permuted = permute_latent(assignment, "u-global", 1, np.zeros(len(assignment)))

        assert np.array_equal(np.sort(permuted.normalized_u), np.sort(assignment.normalized_u))
        assert permuted.variant == "u-global"
        assert permuted.metadata["permutation_seed"] == 1

    def test_u_within_arm_preserves_arm_values(self, synth_latent):
        """Test within-arm permutation keeps each arm's multiset."""
        cohort, assignment = synth_latent
        permuted = permute_latent(assignment, "u-within-arm", 2, cohort.treatment)
        for arm in (0, 1):
            mask = cohort.treatment == arm
            assert np.array_equal(np.sort(permuted.normalized_u[mask]), np.sort(assignment.normalized_u[mask]))

    def test_y_within_arm_keeps_neighbors(self, synth_latent):
        """Test outcome permutation recomputes U over the same neighbor sets."""
        cohort, assignment = synth_latent
        permuted = permute_latent(assignment, "y-within-arm", 3, cohort.treatment)

        assert permuted.neighbor_sets == assignment.neighbor_sets
        assert not np.array_equal(permuted.raw_u, assignment.raw_u)
        assert np.all(np.abs(permuted.normalized_u) <= 1.0)

    def test_seeded(self, synth_latent):
        """Test the same seed gives the same permutation."""
        cohort, assignment = synth_latent
        a = permute_latent(assignment, "u-within-arm", 9, cohort.treatment)
        b = permute_latent(assignment, "u-within-arm", 9, cohort.treatment)
        assert np.array_equal(a.normalized_u, b.normalized_u)

    def test_unknown_mode(self, synth_latent):
        """Test unknown modes are rejected."""
        cohort, assignment = synth_latent
        with pytest.raises(ValueError):
            permute_latent(assignment, "shuffle", 0, cohort.treatment)


class TestAblations:
    """Tests for the simplified latent constructions."""

    def test_signed_outcome(self, small_cohort):
        """Test events map to -1 and censored patients to +1."""
        assignment = ablation_latent(small_cohort, "signed-outcome", LatentConfig(tau=5.0))
        expected = np.where(small_cohort.events == 1, -1.0, 1.0)
        assert np.array_equal(assignment.normalized_u, expected)

    def test_signed_rmst(self, small_cohort):
        """Test the sign follows the event flag and values are normalized."""
        assignment = ablation_latent(small_cohort, "signed-rmst", LatentConfig(tau=5.0))
        u = assignment.normalized_u
        assert np.all(np.sign(u[small_cohort.events == 1]) <= 0)
        assert np.all(np.abs(u) <= 1.0)

    def test_random_neighbors_respect_direction(self, small_cohort):
        """Test random sampling draws from the directional candidate set."""
        assignment = ablation_latent(small_cohort, "random-neighbors", LatentConfig(k=2, tau=5.0), seed=4)

        check_neighbor_sets(small_cohort, assignment.neighbor_sets)
        assert assignment.variant == "random-neighbors"

    def test_unknown_variant(self, small_cohort):
        """Test unknown variants are rejected."""
        with pytest.raises(ValueError):
            ablation_latent(small_cohort, "none", LatentConfig())


class TestDiagnosticsAndExport:
    """Tests for the hidden-factor report and the CSV export."""

    def test_hidden_factor_diagnostics(self, synth_cohort, synth_latent):
        """Test correlation summary fields."""
        _, assignment = synth_latent
        report = hidden_factor_diagnostics(synth_cohort.cohort, assignment, synth_cohort.hidden_v)

        assert -1.0 <= report["corr_u_v"] <= 1.0
        assert report["best_covariate"] in synth_cohort.cohort.feature_names
        assert isinstance(report["u_beats_covariates"], bool)

    def test_length_mismatch(self, synth_cohort, synth_latent):
        """Test a hidden factor of the wrong length is rejected."""
        _, assignment = synth_latent
        with pytest.raises(ValueError):
            hidden_factor_diagnostics(synth_cohort.cohort, assignment, [0.0, 1.0])

    def test_export(self, tmp_path, small_cohort):
        """Test the export lists neighbor ids."""
        assignment = compute_latent(small_cohort, None, LatentConfig(k=2, tau=5.0))
        frame = pd.read_csv(export_latent(small_cohort, assignment, tmp_path / "latent.csv"), keep_default_na=False)

        assert list(frame.columns) == ["id", "raw_u", "normalized_u", "fallback_flag", "neighbor_ids"]
        assert frame.loc[3, "neighbor_ids"] == ""
        assert frame.loc[0, "neighbor_ids"].count(";") == 1
