"""Training loops: survival model, SARD-style fixed-time baseline, logistic regression.

The survival loss here is the differentiation-engine route; the plain-numpy
implementation in :mod:`strafe.survival` is its independent counterpart and
the two are cross-checked in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, matmul
from .data import Cohort, PatientRecord, fixed_time_labels
from .embeddings import EmbeddingMatrix
from .errors import DivergenceError, NonFiniteError, ParameterError, ShapeError
from .model import (ModelConfig, contextualize_visits, encode_patients,
                    forward_encoded, init_parameters)
from .optim import Parameter, adam_step, zero_all_grads
from .survival import SURVIVAL_CLAMP


@dataclass
class TrainParams:
    batch_size: int = 256
    lr: float = 2e-3
    epochs: int = 10


def survival_curve_tensor(q: Tensor) -> Tensor:
    """S(t) = prod_{tau<=t} q(tau) along the last axis, via log-space cumsum."""
    return q.log().cumsum(axis=-1).exp()


def survival_loss_tensor(q: Tensor, durations: np.ndarray, events: np.ndarray) -> Tensor:
    """Batch negative log-likelihood (sum over patients) from hazard complements.

    ``q`` is (batch, t_max+1); censored patients contribute survival terms for
    months before their censoring month, observed patients additionally
    contribute event terms from their event month through the horizon.
    """
    batch, horizon = q.shape
    t_max = horizon - 1
    if np.any(durations < 0) or np.any(durations > t_max):
        raise ParameterError("durations must lie in [0, t_max]")
    s = survival_curve_tensor(q).clip(SURVIVAL_CLAMP, 1.0 - SURVIVAL_CLAMP)
    t_grid = np.arange(horizon)
    surv_mask = (t_grid[None, :] < durations[:, None]).astype(q.dtype)
    event_mask = (events[:, None] & (t_grid[None, :] >= durations[:, None])).astype(q.dtype)
    terms = Tensor(surv_mask) * s.log() + Tensor(event_mask) * (1.0 - s).log()
    return -terms.sum()


@dataclass
class TrainResult:
    params: dict[str, Parameter]
    loss_history: list[float] = field(default_factory=list)  # per-epoch mean per-patient loss


def train_strafe(cohort: Cohort, emb: EmbeddingMatrix, config: ModelConfig,
                 train_params: TrainParams | None = None,
                 params: dict[str, Parameter] | None = None) -> TrainResult:
    """Minimize the survival loss over shuffled mini-batches with Adam."""
    if len(cohort) == 0:
        raise ParameterError("training cohort is empty")
    tp = train_params or TrainParams()
    if params is None:
        params = init_parameters(config)

    enc, mask = encode_patients(list(cohort), emb, config)
    durations = np.array([p.label.duration_months for p in cohort])
    events = np.array([p.label.event for p in cohort])
    if np.any(durations > config.t_max):
        raise ParameterError("cohort contains durations beyond the model horizon")

    n = len(cohort)
    rng = np.random.default_rng(config.seed + 1)
    drop_rng = np.random.default_rng(config.seed + 2)
    history: list[float] = []
    param_list = list(params.values())

    for epoch in range(tp.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tp.batch_size):
            sel = order[start:start + tp.batch_size]
            try:
                result = forward_encoded(enc[sel], mask[sel], params, config,
                                         mode="train", rng=drop_rng)
                loss = survival_loss_tensor(result.q, durations[sel], events[sel])
            except NonFiniteError as exc:
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {start // tp.batch_size}"
                ) from exc
            zero_all_grads(param_list)
            loss.backward()
            adam_step(param_list, tp.lr)
            total += loss.item()
        history.append(total / n)
    zero_all_grads(param_list)
    return TrainResult(params=params, loss_history=history)


def predict_survival(patients: list[PatientRecord], emb: EmbeddingMatrix,
                     params: dict[str, Parameter], config: ModelConfig,
                     batch_size: int = 512) -> np.ndarray:
    """Eval-mode survival curves S(0..t_max) for a list of patients."""
    curves = []
    for start in range(0, len(patients), batch_size):
        chunk = patients[start:start + batch_size]
        result = forward_encoded(*encode_patients(chunk, emb, config), params,
                                 config, mode="eval")
        curves.append(np.cumprod(result.q.data, axis=-1))
    return np.concatenate(curves, axis=0)


# -- SARD-style fixed-time baseline ------------------------------------------------
#
# Shares the representation phase with the survival model (same hyperparameters)
# and replaces the survival head with mean-pooling over real visits, two
# demographic scalars, and a sigmoid MLP trained with binary cross-entropy.


def init_sard_parameters(config: ModelConfig, dtype=np.float32) -> dict[str, Parameter]:
    rng = np.random.default_rng(config.seed + 17)
    d = config.d_e

    def glorot(fan_in, fan_out, shape):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return Parameter(rng.uniform(-limit, limit, size=shape).astype(dtype), dtype=dtype)

    params: dict[str, Parameter] = {}
    for layer in range(config.blocks):
        for tag in ("wq", "wk", "wv", "wo"):
            params[f"rep.block{layer}.{tag}"] = glorot(d, d, (d, d))
    params["head.w1"] = glorot(d + 2, d, (d + 2, d))
    params["head.b1"] = Parameter(np.zeros(d, dtype=dtype), dtype=dtype)
    params["head.w2"] = glorot(d, 1, (d, 1))
    params["head.b2"] = Parameter(np.zeros(1, dtype=dtype), dtype=dtype)
    return params


def _demographics(patients: list[PatientRecord], dtype=np.float32) -> np.ndarray:
    return np.array([[p.age / 100.0, 1.0 if p.sex == "M" else 0.0] for p in patients],
                    dtype=dtype)


def sard_fixed_time_forward(patients: list[PatientRecord], emb: EmbeddingMatrix,
                            params: dict[str, Parameter], config: ModelConfig,
                            mode: str = "eval", rng=None) -> Tensor:
    """Event probability within the fixed window, one value per patient."""
    enc, mask = encode_patients(patients, emb, config)
    x = Tensor(enc)
    if config.contextualized:
        x = contextualize_visits(x, mask, params, config, mode, rng)
    weights = mask.astype(enc.dtype)
    weights = weights / weights.sum(axis=1, keepdims=True)
    pooled = (x * Tensor(weights[:, :, None])).sum(axis=1)          # (b, d)
    full = concat([pooled, Tensor(_demographics(patients))], axis=1)
    hidden = (matmul(full, params["head.w1"].value) + params["head.b1"].value).tanh()
    logits = matmul(hidden, params["head.w2"].value) + params["head.b2"].value
    return logits.reshape(logits.shape[0]).sigmoid().clip(1e-7, 1.0 - 1e-7)


def bce_loss_tensor(probs: Tensor, labels: np.ndarray) -> Tensor:
    y = Tensor(labels.astype(probs.dtype))
    return -(y * probs.log() + (1.0 - y) * (1.0 - probs).log()).sum()


def train_sard(cohort: Cohort, emb: EmbeddingMatrix, config: ModelConfig, t_r: int,
               train_params: TrainParams | None = None,
               params: dict[str, Parameter] | None = None) -> TrainResult:
    """Fit the SARD-style head on a cohort already filtered for full observation.

    Passing ``params`` continues training from an earlier result (optimizer
    state lives on the Parameter objects), matching :func:`train_strafe`.
    """
    if len(cohort) == 0:
        raise ParameterError("training cohort is empty")
    tp = train_params or TrainParams()
    if params is None:
        params = init_sard_parameters(config)
    labels = fixed_time_labels(cohort, t_r)
    patients = list(cohort)
    n = len(patients)
    rng = np.random.default_rng(config.seed + 3)
    drop_rng = np.random.default_rng(config.seed + 4)
    param_list = list(params.values())
    history: list[float] = []
    for epoch in range(tp.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tp.batch_size):
            sel = order[start:start + tp.batch_size]
            try:
                probs = sard_fixed_time_forward([patients[i] for i in sel], emb, params,
                                                config, mode="train", rng=drop_rng)
                loss = bce_loss_tensor(probs, labels[sel])
            except NonFiniteError as exc:
                raise DivergenceError(f"non-finite loss at epoch {epoch}") from exc
            zero_all_grads(param_list)
            loss.backward()
            adam_step(param_list, tp.lr)
            total += loss.item()
        history.append(total / n)
    zero_all_grads(param_list)
    return TrainResult(params=params, loss_history=history)


def predict_sard(patients: list[PatientRecord], emb: EmbeddingMatrix,
                 params: dict[str, Parameter], config: ModelConfig) -> np.ndarray:
    return sard_fixed_time_forward(patients, emb, params, config, mode="eval").data.copy()


# -- logistic regression ------------------------------------------------------------


def logistic_regression(features: np.ndarray, weights: np.ndarray, bias: float) -> np.ndarray:
    """sigmoid(w . x + b) for one feature vector or a feature matrix."""
    features = np.atleast_2d(features)
    if features.shape[1] != weights.shape[0]:
        raise ShapeError(f"feature length {features.shape[1]} != weights {weights.shape[0]}")
    z = features @ weights + bias
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.size > 1 else out.reshape(())[()]


def fit_logistic_regression(features: np.ndarray, labels: np.ndarray,
                            lr: float = 0.05, epochs: int = 200, batch_size: int = 256,
                            seed: int = 0) -> tuple[np.ndarray, float]:
    """Binary cross-entropy fit using the shared Adam update rule."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n, dim = features.shape
    w = Parameter(np.zeros(dim), dtype=np.float64)
    b = Parameter(np.zeros(1), dtype=np.float64)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            x, y = features[sel], labels[sel]
            p = logistic_regression(x, w.data, float(b.data[0]))
            p = np.atleast_1d(p)
            resid = p - y
            w.value.grad = x.T @ resid
            b.value.grad = np.array([resid.sum()])
            adam_step([w, b], lr)
            w.zero_grad()
            b.zero_grad()
    return w.data.copy(), float(b.data[0])
