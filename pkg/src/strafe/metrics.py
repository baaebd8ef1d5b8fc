"""Evaluation metrics: C-index, MAE, AUC-ROC, bootstrap, decile and subgroup analyses.

The C-index follows the strict-inequality definition (ties contribute
nothing to the numerator); the common half-credit-for-ties convention is
available behind ``tie_credit=True`` and documented as a deviation from the
strict formula. Note the plain C-index becomes optimistic as censoring
grows; no IPCW correction is applied here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError, UndefinedMetricError


@dataclass
class PredictionSet:
    """Aligned predictions and outcomes for a set of patients."""

    predicted_time: np.ndarray          # mean survival time per patient
    duration: np.ndarray                # observed or censored month
    event: np.ndarray                   # True if observed
    curves: Optional[np.ndarray] = None  # (n, t_max+1) survival curves
    groups: Optional[np.ndarray] = None  # per-patient group tags

    def __post_init__(self):
        self.predicted_time = np.asarray(self.predicted_time, dtype=np.float64)
        self.duration = np.asarray(self.duration, dtype=np.float64)
        self.event = np.asarray(self.event, dtype=bool)
        n = self.predicted_time.shape[0]
        if self.duration.shape[0] != n or self.event.shape[0] != n:
            raise ParameterError("prediction set fields must have equal length")
        if not np.all(np.isfinite(self.predicted_time)):
            raise ParameterError("predicted times must be finite")

    def __len__(self):
        return len(self.predicted_time)

    def take(self, idx: np.ndarray) -> "PredictionSet":
        return PredictionSet(
            predicted_time=self.predicted_time[idx],
            duration=self.duration[idx],
            event=self.event[idx],
            curves=None if self.curves is None else self.curves[idx],
            groups=None if self.groups is None else self.groups[idx])


def c_index(preds: PredictionSet, tie_credit: bool = False) -> float:
    """Concordant over comparable pairs; pair (i, j) is comparable when
    patient i's event is observed and T_i < T_j."""
    t = preds.duration
    that = preds.predicted_time
    delta = preds.event
    comparable = delta[:, None] & (t[:, None] < t[None, :])
    n_comp = int(comparable.sum())
    if n_comp == 0:
        raise UndefinedMetricError("no comparable pairs")
    concordant = comparable & (that[:, None] < that[None, :])
    num = float(concordant.sum())
    if tie_credit:
        num += 0.5 * float((comparable & (that[:, None] == that[None, :])).sum())
    return num / n_comp


def mae(preds: PredictionSet) -> float:
    """Mean absolute error of predicted event month, observed patients only."""
    obs = preds.event
    if not obs.any():
        raise UndefinedMetricError("no observed patients")
    return float(np.abs(preds.duration[obs] - preds.predicted_time[obs]).mean())


def auc_roc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with midrank handling of tied scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC requires both classes")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = ranks[labels].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class BootstrapSummary:
    values: np.ndarray
    mean: float
    ci_low: float
    ci_high: float
    n_resamples: int
    n_degenerate: int
    seed: int
    paired_p_value: Optional[float] = None


def bootstrap_metric(metric: Callable[[PredictionSet], float], preds: PredictionSet,
                     n_resamples: int = 1000, seed: int = 0,
                     other: Optional[PredictionSet] = None) -> BootstrapSummary:
    """Patient-level resampling with replacement.

    Degenerate resamples (metric undefined) are skipped and counted. When a
    second prediction set over the same patients is given, a two-sided paired
    p-value is reported: twice the fraction of resamples where the first
    set's metric does not exceed the second's, capped at 1.
    """
    if other is not None and len(other) != len(preds):
        raise ParameterError("paired comparison requires equally sized prediction sets")
    rng = np.random.default_rng(seed)
    n = len(preds)
    values = []
    n_le = 0
    n_paired = 0
    degenerate = 0
    for _ in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        try:
            v = metric(preds.take(idx))
        except UndefinedMetricError:
            degenerate += 1
            continue
        values.append(v)
        if other is not None:
            try:
                v_other = metric(other.take(idx))
            except UndefinedMetricError:
                continue
            n_paired += 1
            if v <= v_other:
                n_le += 1
    if not values:
        raise UndefinedMetricError("all bootstrap resamples were degenerate")
    values = np.array(values)
    lo, hi = np.percentile(values, [2.5, 97.5])
    p_value = None
    if other is not None and n_paired > 0:
        p_value = min(1.0, 2.0 * n_le / n_paired)
    return BootstrapSummary(values=values, mean=float(values.mean()),
                            ci_low=float(lo), ci_high=float(hi),
                            n_resamples=n_resamples, n_degenerate=degenerate,
                            seed=seed, paired_p_value=p_value)


def _decile_bounds(n: int) -> list[tuple[int, int]]:
    """Ten contiguous near-equal slices; the remainder goes to the lowest deciles."""
    base, rem = divmod(n, 10)
    bounds = []
    start = 0
    for d in range(10):
        size = base + (1 if d < rem else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


@dataclass
class DecileRow:
    decile: int
    size: int
    q1: float
    median: float
    q3: float


def decile_progression(preds: PredictionSet) -> list[DecileRow]:
    """Actual event-time quartiles per decile of predicted mean survival time.

    Patients are ranked by predicted time ascending (stable order breaks
    ties); quartiles are computed over observed patients in each decile.
    """
    n = len(preds)
    if n < 10:
        raise ParameterError("decile analysis needs at least 10 patients")
    order = np.argsort(preds.predicted_time, kind="mergesort")
    rows = []
    for d, (lo, hi) in enumerate(_decile_bounds(n)):
        idx = order[lo:hi]
        obs_t = preds.duration[idx][preds.event[idx]]
        if obs_t.size:
            q1, med, q3 = np.percentile(obs_t, [25, 50, 75])
        else:
            q1 = med = q3 = float("nan")
        rows.append(DecileRow(decile=d, size=hi - lo, q1=float(q1),
                              median=float(med), q3=float(q3)))
    return rows


@dataclass
class PpvRow:
    decile: int            # 0 = highest predicted risk
    size: int
    event_rate: float


@dataclass
class PpvTable:
    rows: list[PpvRow]
    cohort_rate: float
    top_decile_lift: float


def decile_ppv(risks: np.ndarray, labels: np.ndarray,
               cohort_rate: Optional[float] = None) -> PpvTable:
    """Event fraction per predicted-risk decile, highest risk first."""
    risks = np.asarray(risks, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n = risks.size
    if n < 10:
        raise ParameterError("decile analysis needs at least 10 patients")
    if labels.all() or not labels.any():
        raise ParameterError("decile PPV needs both classes present")
    if cohort_rate is None:
        cohort_rate = float(labels.mean())
    order = np.argsort(-risks, kind="mergesort")
    rows = []
    for d, (lo, hi) in enumerate(_decile_bounds(n)):
        idx = order[lo:hi]
        rows.append(PpvRow(decile=d, size=hi - lo, event_rate=float(labels[idx].mean())))
    lift = rows[0].event_rate / cohort_rate if cohort_rate > 0 else float("inf")
    return PpvTable(rows=rows, cohort_rate=cohort_rate, top_decile_lift=lift)


def stratified_auc(scores: np.ndarray, labels: np.ndarray,
                   groups: np.ndarray) -> dict[str, Optional[float]]:
    """AUC per group tag; groups missing a class report None rather than failing."""
    scores = np.asarray(scores)
    labels = np.asarray(labels, dtype=bool)
    groups = np.asarray(groups)
    table: dict[str, Optional[float]] = {}
    for g in sorted(set(groups.tolist())):
        sel = groups == g
        try:
            table[str(g)] = auc_roc(scores[sel], labels[sel])
        except UndefinedMetricError:
            table[str(g)] = None
    return table
