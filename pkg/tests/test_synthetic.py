"""Synthetic cohort generator against its analytic ground truth."""

import numpy as np
import pytest

from strafe.errors import ParameterError
from strafe.survival import kaplan_meier
from strafe.synthetic import (SyntheticConfig, SyntheticGroundTruth,
                              expected_event_fraction, generate_synthetic_cohort,
                              make_vocabulary, oracle_survival)


def test_vocabulary_prefix_cycle():
    codes = make_vocabulary(6)
    assert codes == ["C0000", "P0001", "D0002", "C0003", "P0004", "D0005"]


def test_zero_hazard_all_censored():
    cfg = SyntheticConfig(n_patients=50, weight_scale=0.0, base_hazard_logit=-30.0,
                          censor_rate=0.0, seed=1)
    cohort, truth = generate_synthetic_cohort(cfg)
    assert all(not p.label.event for p in cohort)
    assert all(p.label.duration_months == cfg.t_max for p in cohort)
    for pid in truth.hazard:
        assert np.all(truth.hazard[pid] < 1e-12)


def test_saturated_hazard_all_events_at_zero():
    cfg = SyntheticConfig(n_patients=50, weight_scale=0.0, base_hazard_logit=30.0,
                          censor_rate=0.0, seed=2)
    cohort, _ = generate_synthetic_cohort(cfg)
    assert all(p.label.event and p.label.duration_months == 0 for p in cohort)


def test_empirical_event_fraction_matches_analytic():
    cfg = SyntheticConfig(n_patients=5000, seed=3)
    cohort, truth = generate_synthetic_cohort(cfg)
    expected = expected_event_fraction(truth, cfg.censor_rate)
    observed = cohort.event_rate()
    sigma = np.sqrt(expected * (1 - expected) / cfg.n_patients)
    assert abs(observed - expected) < 3 * sigma


def test_generator_deterministic():
    cfg = SyntheticConfig(n_patients=40, seed=4)
    c1, t1 = generate_synthetic_cohort(cfg)
    c2, t2 = generate_synthetic_cohort(cfg)
    assert c1 == c2
    assert t1.linear_predictor == t2.linear_predictor


def test_linear_predictor_counts_multiplicity():
    cfg = SyntheticConfig(n_patients=30, seed=5)
    cohort, truth = generate_synthetic_cohort(cfg)
    for p in cohort:
        lp = sum(truth.concept_weights[c] for v in p.visits for c in v.codes)
        assert truth.linear_predictor[p.id] == pytest.approx(lp, abs=1e-9)


def test_oracle_survival_laws():
    truth = SyntheticGroundTruth(concept_weights={}, linear_predictor={},
                                 hazard={"a": np.zeros(5), "b": np.full(5, 0.5)},
                                 t_max=4)
    assert np.array_equal(oracle_survival(truth, "a"), np.ones(5))
    assert np.allclose(oracle_survival(truth, "b"), 0.5 ** np.arange(1, 6))
    rng_lam = np.random.default_rng(6).random(8)
    truth.hazard["c"] = rng_lam
    s = oracle_survival(truth, "c")
    assert np.all(np.diff(s) <= 0)
    with pytest.raises(KeyError):
        truth.survival("missing")
    assert truth.mean_survival_time("b") == pytest.approx((0.5 ** np.arange(1, 6)).sum())


def test_ground_truth_round_trip(tmp_path):
    cfg = SyntheticConfig(n_patients=12, seed=7)
    _, truth = generate_synthetic_cohort(cfg)
    path = tmp_path / "truth.json"
    truth.save(path)
    loaded = SyntheticGroundTruth.load(path)
    assert loaded.t_max == truth.t_max
    assert loaded.concept_weights == truth.concept_weights
    for pid, lam in truth.hazard.items():
        assert np.allclose(loaded.hazard[pid], lam)


def test_kaplan_meier_tracks_population_survival():
    """Empirical KM of a large sample stays close to the mean analytic curve."""
    cfg = SyntheticConfig(n_patients=8000, censor_rate=0.3, seed=8)
    cohort, truth = generate_synthetic_cohort(cfg)
    km, _ = kaplan_meier([p.label for p in cohort], t_max=cfg.t_max)
    pop = np.mean([truth.survival(p.id) for p in cohort], axis=0)
    # KM is consistent under independent censoring; 8000 subjects give a
    # pointwise standard error well under 0.01 everywhere on this horizon
    assert np.max(np.abs(km - pop)) < 0.03


def test_config_validation():
    with pytest.raises(ParameterError):
        SyntheticConfig(n_patients=0).validate()
    with pytest.raises(ParameterError):
        SyntheticConfig(vocab_size=5).validate()
    with pytest.raises(ParameterError):
        SyntheticConfig(censor_rate=1.5).validate()
    with pytest.raises(ParameterError):
        SyntheticConfig(weight_scale=-1.0).validate()
    with pytest.raises(ParameterError):
        SyntheticConfig(t_max=0).validate()


def test_labels_within_horizon_and_no_censored_at_zero():
    cfg = SyntheticConfig(n_patients=300, censor_rate=0.6, seed=9)
    cohort, _ = generate_synthetic_cohort(cfg)
    for p in cohort:
        assert 0 <= p.label.duration_months <= cfg.t_max
        if not p.label.event:
            assert p.label.duration_months >= 1
