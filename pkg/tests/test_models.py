"""Tests for data models."""

import math

import numpy as np
import pytest

from src.models.balance import BalanceTarget, WeightedCohort
from src.models.cohort import Cohort, PatientRecord
from src.models.latent import LatentAssignment, LatentConfig, NeighborSet, ScoreAssignment
from src.models.run_config import GridInstance, RunConfig
from src.models.survival import HREstimate, SurvivalCurve
from src.models.synthetic import SynthConfig
from src.models.validation import (
    GapRecord,
    PairedDelta,
    RunRow,
    ValidationReport,
)
from src.utils.exceptions import (
    ConfigurationError,
    DuplicateIdError,
    EmptyCohortError,
    SingleArmCohortError,
)


class TestPatientRecord:
    """Tests for PatientRecord model."""

    def test_create_record(self):
        """Test creating a valid record."""
        record = PatientRecord(id="a", time=3.0, event=1, treatment=0, covariates=(0.5, 1.0))

        assert record.id == "a"
        assert record.external_score is None
        assert record.center is None

    def test_negative_time_rejected(self):
        """Test that negative follow-up raises ValueError."""
        with pytest.raises(ValueError, match="nonnegative"):
            PatientRecord(id="a", time=-1.0, event=1, treatment=0, covariates=())

    def test_event_flag_domain(self):
        """Test that a non-binary event flag raises ValueError."""
        with pytest.raises(ValueError, match="Event flag"):
            PatientRecord(id="a", time=1.0, event=2, treatment=0, covariates=())

    def test_nonfinite_covariate_rejected(self):
        """Test that NaN covariates raise ValueError."""
        with pytest.raises(ValueError, match="finite"):
            PatientRecord(id="a", time=1.0, event=0, treatment=1, covariates=(float("nan"),))

    def test_to_dict(self):
        """Test flattening a record with feature names."""
        record = PatientRecord(id="a", time=2.0, event=0, treatment=1, covariates=(1.5,), center="C1")
        row = record.to_dict(["age"])

        assert row["age"] == 1.5
        assert row["center"] == "C1"
        assert row["external_score"] is None


class TestCohort:
    """Tests for Cohort model."""

    def test_array_views(self, small_cohort):
        """Test the cached column arrays."""
        assert len(small_cohort) == 12
        assert small_cohort.covariates.shape == (12, 2)
        assert small_cohort.n_treated == 6
        assert small_cohort.n_control == 6
        assert small_cohort.external_scores[0] == pytest.approx(0.6)

    def test_duplicate_ids(self):
        """Test that duplicate ids raise DuplicateIdError."""
        rec = PatientRecord(id="a", time=1.0, event=1, treatment=1, covariates=())
        with pytest.raises(DuplicateIdError):
            Cohort(records=(rec, rec), feature_names=())

    def test_empty_cohort(self):
        """Test that a cohort without records raises EmptyCohortError."""
        with pytest.raises(EmptyCohortError):
            Cohort(records=(), feature_names=())

    def test_require_two_arms(self, make_cohort):
        """Test the two-arm precondition."""
        cohort = make_cohort([1.0, 2.0], [1, 0], [1, 1])
        with pytest.raises(SingleArmCohortError):
            cohort.require_two_arms()

    def test_zero_feature_cohort(self, make_cohort):
        """Test that a cohort without covariates has an (n, 0) matrix."""
        cohort = make_cohort([1.0, 2.0], [1, 0], [1, 0])
        assert cohort.covariates.shape == (2, 0)

    def test_subset_keeps_order(self, small_cohort):
        """Test subsetting by positions."""
        sub = small_cohort.subset([3, 0, 7])
        assert sub.ids == ["p3", "p0", "p7"]
        assert sub.feature_names == small_cohort.feature_names

    def test_with_treatment(self, small_cohort):
        """Test replacing the treatment column."""
        flipped = small_cohort.with_treatment(1 - small_cohort.treatment)
        assert flipped.n_treated == small_cohort.n_control
        assert np.array_equal(flipped.times, small_cohort.times)

    def test_center_labels_first_seen_order(self, make_cohort):
        """Test distinct center labels keep first-seen order."""
        cohort = make_cohort([1, 2, 3, 4], [1, 1, 0, 0], [1, 0, 1, 0], centers=["B", "A", "B", None])
        assert cohort.center_labels() == ["B", "A"]


class TestRunConfig:
    """Tests for RunConfig model."""

    def test_defaults_from_yaml(self):
        """Test that analysis defaults come from config.yml."""
        config = RunConfig.build({})

        assert config.tau == 60.0
        assert config.k_grid == [5, 10, 20]
        assert config.margin == pytest.approx(math.log(1.10))

    def test_empty_grid_rejected(self):
        """Test that an empty grid axis raises ConfigurationError."""
        with pytest.raises(ConfigurationError):
            RunConfig.build({"k_grid": []})

    def test_margin_must_be_positive(self):
        """Test that a nonpositive margin raises ConfigurationError."""
        with pytest.raises(ConfigurationError):
            RunConfig.build({"margin": 0.0})

    def test_permutation_and_ablation_exclusive(self):
        """Test that permutation and ablation cannot be combined."""
        with pytest.raises(ConfigurationError, match="mutually exclusive"):
            RunConfig.build({"permutation": "u-global", "ablation": "signed-outcome"})

    def test_overrides_win(self):
        """Test that non-None overrides replace file values."""
        config = RunConfig.build({"tau": 24.0, "seed": 1}, tau=36.0, seed=None)

        assert config.tau == 36.0
        assert config.seed == 1

    def test_synthetic_defaults(self):
        """Test that the synthetic experiment gets a default sweep."""
        config = RunConfig.build({"experiment": "synthetic"})
        assert config.synthetic is not None
        assert len(config.synthetic.seeds) == 20

    def test_benchmark_lookup(self):
        """Test scalar and per-dataset benchmarks."""
        scalar = RunConfig.build({"benchmark_loghr": -0.4})
        mapping = RunConfig.build({"benchmark_loghr": {"a": -0.2}})

        assert scalar.benchmark_for("anything") == -0.4
        assert mapping.benchmark_for("a") == -0.2
        assert mapping.benchmark_for("b") is None

    def test_config_hash_tracks_changes(self):
        """Test the hash changes iff the configuration changes."""
        a = RunConfig.build({"seed": 1})
        b = RunConfig.build({"seed": 1})
        c = RunConfig.build({"seed": 2})

        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()

    def test_grid_instances_count(self):
        """Test the Cartesian product size of the default grid."""
        config = RunConfig.build({"score_sources": ["external", "crossfit"]})
        instances = config.grid_instances()

        # (3 bins + 2 moments + 3 clips) x 2 sources x 3 k x 2 distance flags
        assert len(instances) == 8 * 2 * 3 * 2
        assert len({i.config_id for i in instances}) == len(instances)

    def test_default_instance(self):
        """Test the one-off configuration choice."""
        config = RunConfig.build({})

        assert config.default_instance("matching").param_value == 3
        assert config.default_instance("entropy").param_value == 2
        assert config.default_instance("iptw").param_value == 0.05

    def test_from_file(self, tmp_path):
        """Test loading a JSON run configuration."""
        path = tmp_path / "run.json"
        path.write_text('{"experiment": "rct-equivalence", "tau": 30}')

        config = RunConfig.from_file(path)
        assert config.experiment == "rct-equivalence"
        assert config.tau == 30.0

    def test_from_missing_file(self, tmp_path):
        """Test that an unreadable file raises ConfigurationError."""
        with pytest.raises(ConfigurationError):
            RunConfig.from_file(tmp_path / "missing.json")


class TestGridInstance:
    """Tests for GridInstance."""

    def test_config_id_and_baseline_key(self):
        """Test that k and the distance flag do not enter the baseline key."""
        a = GridInstance("matching", 5, False, "external", "n_bins", 3)
        b = GridInstance("matching", 20, True, "external", "n_bins", 3)

        assert a.config_id != b.config_id
        assert a.baseline_key == b.baseline_key
        assert a.axis_values() == {"k": 5, "include_score": False, "score_source": "external", "n_bins": 3}


class TestSynthConfig:
    """Tests for SynthConfig."""

    def test_rct_mode_forces_randomization(self):
        """Test that rct_mode zeroes selection effects."""
        config = SynthConfig(rct_mode=True, gamma_sel=2.0, alpha=[1.0, 1.0, 1.0])

        assert config.gamma_sel == 0.0
        assert config.alpha == [0.0, 0.0, 0.0]

    def test_center_shift_defaults(self):
        """Test per-center shifts are filled in."""
        config = SynthConfig(centers=4)
        assert len(config.center_alpha0_shifts) == 4

    def test_beta_length_checked(self):
        """Test mismatched coefficient lengths are rejected."""
        with pytest.raises(ValueError):
            SynthConfig(d=2, beta=[1.0])


class TestLatentModels:
    """Tests for latent factor models."""

    def test_score_assignment_rejects_nan(self):
        """Test that missing scores are rejected."""
        with pytest.raises(ValueError):
            ScoreAssignment(scores=np.array([0.1, np.nan]), source="external")

    def test_latent_range_enforced(self):
        """Test that normalized values outside [-1, 1] are rejected."""
        with pytest.raises(ValueError, match=r"\[-1, 1\]"):
            LatentAssignment(
                raw_u=np.array([2.0]),
                normalized_u=np.array([1.5]),
                fallback_flags=np.array([False]),
                config=LatentConfig(),
            )

    def test_with_values_records_variant(self):
        """Test copying an assignment with new values."""
        assignment = LatentAssignment(
            raw_u=np.array([0.5, -0.5]),
            normalized_u=np.array([1.0, -1.0]),
            fallback_flags=np.array([False, True]),
            config=LatentConfig(k=3),
        )
        permuted = assignment.with_values(np.array([-1.0, 1.0]), "u-global", permutation_seed=7)

        assert permuted.variant == "u-global"
        assert permuted.metadata["permutation_seed"] == 7
        assert np.array_equal(permuted.raw_u, assignment.raw_u)
        assert assignment.fallback_count == 1

    def test_neighbor_ids(self):
        """Test joining neighbor ids per patient."""
        assignment = LatentAssignment(
            raw_u=np.zeros(3),
            normalized_u=np.zeros(3),
            fallback_flags=np.array([False, True, True]),
            config=LatentConfig(),
            neighbor_sets=(NeighborSet(0, (1, 2), 2, "longer-survivors"), NeighborSet(1, (), 0, "earlier-events")),
        )
        assert assignment.neighbor_ids(["a", "b", "c"]) == ["b;c", "", ""]

    def test_latent_config_validation(self):
        """Test that k must be positive."""
        with pytest.raises(ValueError):
            LatentConfig(k=0)


class TestBalanceModels:
    """Tests for balancing models."""

    def test_without_squares(self):
        """Test dropping quadratic columns."""
        target = BalanceTarget(Z=np.zeros((4, 3)), columns=("x1", "score", "score^2"), include_score=True)
        assert target.without_squares().columns == ("x1", "score")

    def test_negative_weight_rejected(self, small_cohort):
        """Test that negative weights are rejected."""
        weights = np.ones(len(small_cohort))
        weights[0] = -1.0
        with pytest.raises(ValueError):
            WeightedCohort(small_cohort, weights, "entropy", np.arange(len(small_cohort)))

    def test_arm_needs_positive_weight(self, small_cohort):
        """Test that an arm with all-zero weight is rejected."""
        weights = np.where(small_cohort.treatment == 0, 0.0, 1.0)
        with pytest.raises(ValueError, match="arm 0"):
            WeightedCohort(small_cohort, weights, "iptw", np.arange(len(small_cohort)))

    def test_effective_sample_size(self, small_cohort):
        """Test Kish ESS: unit weights give the arm size."""
        weighted = WeightedCohort(small_cohort, np.ones(12), "entropy", np.arange(12))

        assert weighted.effective_sample_size(1) == pytest.approx(6.0)
        assert weighted.summary()["ess_control"] == pytest.approx(6.0)


class TestSurvivalModels:
    """Tests for survival models."""

    def test_curve_must_be_monotone(self):
        """Test that an increasing survival curve is rejected."""
        with pytest.raises(ValueError):
            SurvivalCurve(np.array([1.0, 2.0]), np.array([0.5, 0.8]), np.array([2.0, 1.0]), np.array([1.0, 0.0]))

    def test_hr_estimate(self):
        """Test HR and confidence interval derivation."""
        est = HREstimate(log_hr=math.log(0.5), se=0.1, iterations=4, converged=True)

        assert est.hr == pytest.approx(0.5)
        low, high = est.ci95
        assert high - low == pytest.approx(0.392)
        assert est.to_dict()["hr"] == pytest.approx(0.5)


class TestValidationReport:
    """Tests for ValidationReport model."""

    def test_empty_report(self):
        """Test a fresh report is empty."""
        report = ValidationReport(experiment="benchmark")

        assert report.is_empty
        assert report.start_time is not None

    def test_add_failure(self):
        """Test recording a failed configuration."""
        report = ValidationReport(experiment="benchmark")
        report.add_failure("d", "entropy|k=5", "x-plus-u", ConfigurationError("bad", details={"x": 1}))

        assert report.failed_count == 1
        assert not report.is_empty
        assert report.failures[0].error_type == "ConfigurationError"
        assert report.failures[0].details == {"x": 1}

    def test_to_dict_has_no_timestamps(self):
        """Test that the serialized report carries no wall-clock fields."""
        report = ValidationReport(experiment="rct-equivalence")
        report.add_row(RunRow("d", "iptw", "cfg", "x-only", -0.3, 0.1))
        report.finalize()
        data = report.to_dict()

        assert "start_time" not in data
        assert "duration" not in data
        assert data["row_count"] == 1

    def test_paired_delta_mean(self):
        """Test the cell mean of paired deltas."""
        cell = PairedDelta("d", "entropy")
        cell.add("a", 0.1)
        cell.add("b", 0.3)

        assert cell.mean == pytest.approx(0.2)
        with pytest.raises(ValueError):
            cell.add("c", float("inf"))

    def test_gap_record_classification(self):
        """Test the widened/fixed/retained flags."""
        record = GapRecord("A", "B", d_raw=0.05, d_base=0.10, d_aug=0.07, ordering_preserved=True)

        assert record.widened_by_x
        assert record.fixed_by_u
        assert record.retained

    def test_summary_lists_failures(self):
        """Test the human-readable summary."""
        report = ValidationReport(experiment="benchmark")
        report.add_failure("d", "cfg", "x-only", ValueError("boom"))
        summary = report.get_summary()

        assert "Failed: 1" in summary
        assert "boom" in summary
