"""Synthetic visit-sequence cohorts with analytically known discrete hazards.

Each patient's monthly hazard is logistic-linear in their recorded concept
codes (counted with multiplicity) plus a mild upward time trend:

    hazard(t) = sigmoid(base_hazard_logit + sum of code weights + 0.02 * t)

so every generated cohort carries an exact per-patient hazard and survival
curve that downstream code can be verified against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Cohort, PatientRecord, SurvivalLabel, Visit
from .errors import ParameterError

TIME_TREND = 0.02  # per-month increase of the hazard logit

_DOMAIN_CYCLE = ("C", "P", "D")


@dataclass
class SyntheticConfig:
    n_patients: int = 5000
    vocab_size: int = 200
    t_max: int = 12
    base_hazard_logit: float = -3.0
    weight_scale: float = 0.5
    censor_rate: float = 0.3
    mean_visits: float = 12.0
    mean_codes_per_visit: float = 3.0
    max_history_days: int = 1095
    seed: int = 0

    def validate(self) -> None:
        if self.n_patients < 1:
            raise ParameterError("n_patients must be positive")
        if self.vocab_size < 10:
            raise ParameterError("vocab_size must be at least 10")
        if self.t_max < 1:
            raise ParameterError("t_max must be at least 1")
        if not 0.0 <= self.censor_rate <= 1.0:
            raise ParameterError("censor_rate must be in [0, 1]")
        if self.weight_scale < 0:
            raise ParameterError("weight_scale must be non-negative")
        if self.mean_visits < 1:
            raise ParameterError("mean_visits must be at least 1")


@dataclass
class SyntheticGroundTruth:
    """Analytic hazards retained for every generated patient."""

    concept_weights: dict[str, float]
    linear_predictor: dict[str, float]
    hazard: dict[str, np.ndarray]  # patient id -> lambda*(0..t_max)
    t_max: int = 0
    extras: dict = field(default_factory=dict)

    def survival(self, patient_id: str) -> np.ndarray:
        """Analytic S*(t) = prod_{tau<=t} (1 - lambda*(tau))."""
        if patient_id not in self.hazard:
            raise KeyError(f"no ground truth for patient {patient_id!r}")
        return np.cumprod(1.0 - self.hazard[patient_id])

    def mean_survival_time(self, patient_id: str) -> float:
        return float(self.survival(patient_id).sum())

    def save(self, path) -> None:
        obj = {
            "t_max": self.t_max,
            "concept_weights": self.concept_weights,
            "linear_predictor": self.linear_predictor,
            "hazard": {pid: [float(x) for x in lam] for pid, lam in self.hazard.items()},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SyntheticGroundTruth":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(concept_weights=obj["concept_weights"],
                   linear_predictor=obj["linear_predictor"],
                   hazard={pid: np.asarray(lam, dtype=np.float64)
                           for pid, lam in obj["hazard"].items()},
                   t_max=obj["t_max"])


def oracle_survival(truth: SyntheticGroundTruth, patient_id: str) -> np.ndarray:
    return truth.survival(patient_id)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def make_vocabulary(vocab_size: int) -> list[str]:
    """Opaque codes cycling through condition/procedure/drug prefixes."""
    return [f"{_DOMAIN_CYCLE[i % 3]}{i:04d}" for i in range(vocab_size)]


def generate_synthetic_cohort(config: SyntheticConfig) -> tuple[Cohort, SyntheticGroundTruth]:
    """Sample a cohort plus the exact hazards it was drawn from.

    Visit counts are geometric with the configured mean, codes follow a
    Zipf-like frequency profile, and censoring is drawn independently of the
    event process. Deterministic for a fixed config.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    codes = make_vocabulary(config.vocab_size)

    # Zipf-like concept popularity
    ranks = np.arange(1, config.vocab_size + 1, dtype=np.float64)
    code_probs = ranks ** -1.1
    code_probs /= code_probs.sum()

    weights = rng.normal(0.0, config.weight_scale, size=config.vocab_size)
    concept_weights = {c: float(w) for c, w in zip(codes, weights)}
    weight_by_code = dict(zip(codes, weights))

    months = np.arange(config.t_max + 1, dtype=np.float64)
    patients: list[PatientRecord] = []
    linear_predictor: dict[str, float] = {}
    hazards: dict[str, np.ndarray] = {}

    for i in range(config.n_patients):
        pid = f"synth-{i:06d}"
        n_visits = max(1, int(rng.geometric(1.0 / config.mean_visits)))
        days = np.sort(rng.integers(0, config.max_history_days + 1, size=n_visits))[::-1]
        visits = []
        all_codes: list[str] = []
        for day in days:
            n_codes = max(1, rng.poisson(config.mean_codes_per_visit))
            picked = rng.choice(config.vocab_size, size=min(n_codes, config.vocab_size),
                                replace=False, p=code_probs)
            visit_codes = tuple(codes[j] for j in sorted(picked))
            all_codes.extend(visit_codes)
            visits.append(Visit(days_before_index=int(day), codes=visit_codes))

        # every code incidence contributes: a concept recorded twice doubles
        # its weight in the linear predictor
        lp = float(sum(weight_by_code[c] for c in all_codes))
        lam = np.array([_sigmoid(config.base_hazard_logit + lp + TIME_TREND * t)
                        for t in months])
        linear_predictor[pid] = lp
        hazards[pid] = lam

        # event month from the discrete hazard; None if beyond the horizon
        event_month = None
        for t in range(config.t_max + 1):
            if rng.random() < lam[t]:
                event_month = t
                break

        if rng.random() < config.censor_rate:
            censor_month = int(rng.integers(0, config.t_max + 1))
        else:
            censor_month = config.t_max

        if event_month is not None and event_month <= censor_month:
            label = SurvivalLabel(duration_months=event_month, event=True)
        else:
            # censored-at-0 records are invalid; the earliest usable censor month is 1
            label = SurvivalLabel(duration_months=max(1, censor_month), event=False)

        age = int(rng.integers(40, 90))
        sex = "M" if rng.random() < 0.5 else "F"
        patients.append(PatientRecord(id=pid, age=age, sex=sex,
                                      visits=tuple(visits), label=label))

    truth = SyntheticGroundTruth(concept_weights=concept_weights,
                                 linear_predictor=linear_predictor,
                                 hazard=hazards, t_max=config.t_max)
    return Cohort(patients), truth


def expected_event_fraction(truth: SyntheticGroundTruth, censor_rate: float) -> float:
    """Analytic mean probability that a patient's event is observed.

    Averages, over patients, P(event at t and censor >= t) under the
    generator's censoring scheme (uniform censor month with probability
    censor_rate, administrative censoring at t_max otherwise).
    """
    t_max = truth.t_max
    total = 0.0
    for lam in truth.hazard.values():
        surv = 1.0
        p_obs = 0.0
        for t in range(t_max + 1):
            p_event_t = surv * lam[t]
            # censor month uniform on {0..t_max}: P(censor >= t) = (t_max+1-t)/(t_max+1)
            p_cge = censor_rate * (t_max + 1 - t) / (t_max + 1) + (1 - censor_rate)
            p_obs += p_event_t * p_cge
            surv *= 1.0 - lam[t]
        total += p_obs
    return total / len(truth.hazard)
