"""Visit-sequence cohort model: records, JSON-lines IO, splitting, filtering.

Cohort files are JSON-lines with a schema header line
``{"schema": "strafe-cohort-v1"}`` followed by one patient object per line:

    {"id": str, "age": int, "sex": "M"|"F",
     "visits": [{"days_before_index": int, "codes": [str, ...]}, ...],
     "label": {"duration_months": int, "event": bool}}

Visits are ordered oldest first (decreasing ``days_before_index``); ties keep
their input order.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CohortParseError, ParameterError, ValidationError

SCHEMA_V1 = "strafe-cohort-v1"

DAYS_PER_MONTH = 30

#: concept-code domain tags, keyed by identifier prefix (synthetic convention)
DOMAIN_PREFIXES = {"C": "condition", "P": "procedure", "D": "drug"}


def code_domain(code: str) -> str:
    """Domain tag for a concept code; unknown prefixes default to condition."""
    return DOMAIN_PREFIXES.get(code[:1], "condition")


@dataclass(frozen=True)
class Visit:
    days_before_index: int
    codes: tuple[str, ...]  # deduplicated, input order preserved

    def __post_init__(self):
        if self.days_before_index < 0:
            raise ValidationError("days_before_index must be non-negative")
        if not self.codes:
            raise ValidationError("visit has no codes")
        if len(set(self.codes)) != len(self.codes):
            raise ValidationError("visit codes contain duplicates")
        for c in self.codes:
            if not c:
                raise ValidationError("empty concept code")


@dataclass(frozen=True)
class SurvivalLabel:
    duration_months: int
    event: bool

    def __post_init__(self):
        if self.duration_months < 0:
            raise ValidationError("duration_months must be non-negative")
        if self.duration_months == 0 and not self.event:
            raise ValidationError("censored-at-0 records carry no information")


@dataclass(frozen=True)
class PatientRecord:
    id: str
    age: int
    sex: str
    visits: tuple[Visit, ...]
    label: SurvivalLabel

    def __post_init__(self):
        if not self.visits:
            raise ValidationError("patient has no visits")
        if self.sex not in ("M", "F"):
            raise ValidationError(f"sex must be 'M' or 'F', got {self.sex!r}")
        days = [v.days_before_index for v in self.visits]
        if any(a < b for a, b in zip(days, days[1:])):
            raise ValidationError("visits must be ordered by decreasing days_before_index")

    def recent_visits(self, n_v: int) -> tuple[Visit, ...]:
        """The n_v most recent visits (closest to the index date), oldest first."""
        return self.visits[-n_v:]


@dataclass
class Cohort:
    patients: list[PatientRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.patients)

    def __iter__(self):
        return iter(self.patients)

    def __getitem__(self, i):
        return self.patients[i]

    def __eq__(self, other):
        return isinstance(other, Cohort) and self.patients == other.patients

    def by_id(self, patient_id: str) -> PatientRecord:
        for p in self.patients:
            if p.id == patient_id:
                return p
        raise KeyError(f"no patient with id {patient_id!r}")

    def event_rate(self) -> float:
        if not self.patients:
            return 0.0
        return sum(p.label.event for p in self.patients) / len(self.patients)

    def all_codes(self) -> list[str]:
        """Every (visit, code) incidence in patient order."""
        return [c for p in self.patients for v in p.visits for c in v.codes]


def discretize_time(days: int) -> int:
    """Map a non-negative day count onto a 30-day month index."""
    if days < 0:
        raise ParameterError(f"days must be non-negative, got {days}")
    return days // DAYS_PER_MONTH


# -- JSON-lines IO ---------------------------------------------------------------


def _patient_from_obj(obj: dict, max_duration: int | None) -> PatientRecord:
    try:
        visits = tuple(
            Visit(days_before_index=int(v["days_before_index"]),
                  codes=tuple(dict.fromkeys(str(c) for c in v["codes"])))
            for v in obj["visits"]
        )
        label = SurvivalLabel(duration_months=int(obj["label"]["duration_months"]),
                              event=bool(obj["label"]["event"]))
        record = PatientRecord(id=str(obj["id"]), age=int(obj["age"]),
                               sex=str(obj["sex"]), visits=visits, label=label)
    except KeyError as exc:
        raise ValidationError(f"missing field {exc}") from exc
    if max_duration is not None and label.duration_months > max_duration:
        raise ValidationError(
            f"duration_months {label.duration_months} exceeds horizon {max_duration}")
    return record


def _patient_to_obj(p: PatientRecord) -> dict:
    return {
        "id": p.id,
        "age": p.age,
        "sex": p.sex,
        "visits": [{"days_before_index": v.days_before_index, "codes": list(v.codes)}
                   for v in p.visits],
        "label": {"duration_months": p.label.duration_months, "event": p.label.event},
    }


def load_cohort(path, max_duration: int | None = None) -> Cohort:
    """Load and validate a schema-v1 cohort file.

    Per-record failures are collected with their line numbers and raised as a
    single :class:`ValidationError`. An empty file yields an empty cohort with
    a warning.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not any(line.strip() for line in lines):
        warnings.warn(f"cohort file {path} is empty", stacklevel=2)
        return Cohort([])

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CohortParseError(f"line 1: not valid JSON ({exc.msg})") from exc
    if header.get("schema") != SCHEMA_V1:
        raise CohortParseError(f"line 1: expected schema header {SCHEMA_V1!r}")

    patients: list[PatientRecord] = []
    failures: list[str] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CohortParseError(f"line {lineno}: not valid JSON ({exc.msg})") from exc
        try:
            patients.append(_patient_from_obj(obj, max_duration))
        except ValidationError as exc:
            failures.append(f"line {lineno}: {exc}")
    if failures:
        raise ValidationError("; ".join(failures))
    return Cohort(patients)


def save_cohort(cohort: Cohort, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": SCHEMA_V1}, sort_keys=True) + "\n")
        for p in cohort:
            fh.write(json.dumps(_patient_to_obj(p), sort_keys=True) + "\n")


# -- splitting and fixed-time filtering --------------------------------------------


def split_train_test(cohort: Cohort, ratio: float, seed: int) -> tuple[Cohort, Cohort]:
    """Deterministic stratified split preserving the event rate."""
    if not 0.0 < ratio < 1.0:
        raise ParameterError(f"ratio must be in (0, 1), got {ratio}")
    if len(cohort) < 2:
        raise ParameterError("cohort must have at least 2 patients to split")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for flag in (True, False):
        idx = np.array([i for i, p in enumerate(cohort) if p.label.event is flag])
        if idx.size == 0:
            continue
        rng.shuffle(idx)
        n_train = int(round(ratio * idx.size))
        train_idx.extend(idx[:n_train])
        test_idx.extend(idx[n_train:])
    train_idx.sort()
    test_idx.sort()
    return (Cohort([cohort[i] for i in train_idx]),
            Cohort([cohort[i] for i in test_idx]))


def filter_fixed_time_cohort(cohort: Cohort, t_r: int) -> Cohort:
    """Patients fully observed through month ``t_r``.

    Keeps events at or before t_r (positives) and anyone followed to at least
    t_r (negatives, whether their event comes later or they are censored
    later); drops patients censored before t_r.
    """
    if t_r < 1:
        raise ParameterError(f"t_r must be >= 1, got {t_r}")
    kept = [p for p in cohort
            if (p.label.event and p.label.duration_months <= t_r)
            or p.label.duration_months >= t_r]
    return Cohort(kept)


def fixed_time_labels(cohort: Cohort, t_r: int) -> np.ndarray:
    """Binary event-within-window labels for a cohort already filtered at t_r."""
    return np.array([p.label.event and p.label.duration_months <= t_r for p in cohort],
                    dtype=bool)
