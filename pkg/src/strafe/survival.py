"""Discrete-time survival math: curves, mean survival, loss, risk, Kaplan-Meier.

All functions here are plain numpy arithmetic. The training loop computes the
same loss through the differentiation engine; these direct implementations
double as its independent check.
"""

from __future__ import annotations

import numpy as np

from .data import SurvivalLabel
from .errors import ParameterError, ValidationError

SURVIVAL_CLAMP = 1e-7  # S is clamped to [eps, 1-eps] before logs


def survival_from_q(q: np.ndarray) -> np.ndarray:
    """Survival curve S(t) = prod_{tau<=t} q(tau) from hazard complements."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(q <= 0.0) or np.any(q >= 1.0):
        raise ValidationError("hazard complements must lie strictly in (0, 1)")
    return np.cumprod(q, axis=-1)


def mean_survival_time(s: np.ndarray) -> float:
    """Expected event month mu = sum_t S(t) over the horizon."""
    return float(np.asarray(s, dtype=np.float64).sum(axis=-1))


def fixed_time_risk(s: np.ndarray, t_r: int) -> float:
    """Probability of the event within month t_r, i.e. 1 - S(t_r)."""
    s = np.asarray(s)
    if not 0 <= t_r < s.shape[-1]:
        raise ParameterError(f"t_r must be in [0, {s.shape[-1] - 1}], got {t_r}")
    return float(1.0 - s[..., t_r])


def survival_loss(s_hat: np.ndarray, label: SurvivalLabel) -> float:
    """Negative log-likelihood of one patient's curve.

    Observed at month T: penalize survival terms before T and event terms
    from T through the horizon. Censored at T: survival terms only, through
    T-1. ``s_hat`` holds S(0..T_max).
    """
    s = np.clip(np.asarray(s_hat, dtype=np.float64), SURVIVAL_CLAMP, 1.0 - SURVIVAL_CLAMP)
    t_max = s.shape[-1] - 1
    t = label.duration_months
    if not 0 <= t <= t_max:
        raise ParameterError(f"duration {t} outside [0, {t_max}]")
    loss = -float(np.log(s[:t]).sum())
    if label.event:
        loss -= float(np.log(1.0 - s[t:]).sum())
    return loss


def batch_survival_loss(s_hat: np.ndarray, labels: list[SurvivalLabel]) -> float:
    """Sum of per-patient losses (sum reduction, not mean)."""
    return sum(survival_loss(row, lab) for row, lab in zip(s_hat, labels))


def kaplan_meier(labels: list[SurvivalLabel], t_max: int | None = None
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Product-limit estimate on the month grid 0..t_max.

    Returns (S, at_risk) where at_risk[t] counts subjects under observation
    at month t. Censored subjects leave the risk set after their month.
    """
    if not labels:
        raise ParameterError("kaplan_meier requires at least one label")
    if t_max is None:
        t_max = max(lab.duration_months for lab in labels)

    durations = np.array([lab.duration_months for lab in labels])
    events = np.array([lab.event for lab in labels])

    s = np.ones(t_max + 1)
    at_risk = np.zeros(t_max + 1, dtype=np.int64)
    surv = 1.0
    for t in range(t_max + 1):
        n_t = int(np.sum(durations >= t))
        d_t = int(np.sum((durations == t) & events))
        at_risk[t] = n_t
        if n_t > 0:
            surv *= 1.0 - d_t / n_t
        s[t] = surv
    return s, at_risk
