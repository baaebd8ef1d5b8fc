"""Two-stage attention survival architecture and its ablation variants.

The forward pipeline: per-visit code-embedding sums plus sinusoidal time
encodings, multi-head self-attention over visits (representation phase,
skipped by the uncontextualized variants), a valid 1-D convolution mapping
the n_v visit positions onto the monthly horizon, month-position temporal
encodings, a second contextualization stage (self-attention or LSTM), and a
shared per-month MLP emitting hazard complements q(t) in (0, 1) for
t = 0..t_max.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, concat, conv1d_seq, dropout, matmul, softmax_lastdim, stack
from .data import PatientRecord
from .embeddings import EmbeddingMatrix
from .errors import ConfigError, DegenerateRowError
from .optim import Parameter

VARIANTS = ("strafe", "strafe-lstm", "uncontextualized-strafe", "uncontextualized-lstm")

TIME_CLIP_DAYS = 365

Q_CLAMP = 1e-7


@dataclass
class ModelConfig:
    d_e: int = 128
    n_v: int = 100
    heads: int = 4
    blocks: int = 1
    dropout: float = 0.3
    t_max: int = 48
    variant: str = "strafe"
    clip_visit_days: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.d_e % 2 != 0:
            raise ConfigError("d_e must be even for sinusoidal time encodings")
        if self.d_e % self.heads != 0:
            raise ConfigError("d_e must be divisible by the number of heads")
        if self.t_max < 1:
            raise ConfigError("t_max must be at least 1")
        if self.n_v < self.t_max:
            raise ConfigError("n_v must be >= t_max (convolution length constraint)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.blocks < 1:
            raise ConfigError("blocks must be at least 1")

    @property
    def contextualized(self) -> bool:
        return not self.variant.startswith("uncontextualized")

    @property
    def recurrent_stage2(self) -> bool:
        return self.variant.endswith("lstm")

    @property
    def conv_kernel_len(self) -> int:
        # chosen so the valid convolution maps n_v positions to exactly t_max
        return self.n_v - self.t_max + 1


def temporal_embedding(t: float, d_e: int) -> np.ndarray:
    """sin(t*w) concatenated with cos(t*w); w geometric from 1e-5 to 1."""
    if d_e % 2 != 0:
        raise ConfigError("d_e must be even")
    omega = np.geomspace(1e-5, 1.0, d_e // 2) if d_e > 2 else np.array([1e-5])
    return np.concatenate([np.sin(t * omega), np.cos(t * omega)])


def _month_encoding_table(t_max: int, d_e: int, dtype) -> np.ndarray:
    return np.stack([temporal_embedding(t, d_e) for t in range(t_max + 1)]).astype(dtype)


def embed_visit(codes, emb: EmbeddingMatrix) -> np.ndarray:
    """Permutation-invariant visit vector: sum of code embeddings (OOV -> 0)."""
    out = np.zeros(emb.d_e)
    for code in codes:
        vec = emb.lookup(code)
        if vec is not None:
            out += vec
    return out


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_parameters(config: ModelConfig, dtype=np.float32) -> dict[str, Parameter]:
    """Named parameter set for the configured variant, deterministic per seed."""
    rng = np.random.default_rng(config.seed)
    d = config.d_e
    params: dict[str, Parameter] = {}

    def proj(name: str, fan_in: int, fan_out: int, shape) -> None:
        params[name] = Parameter(_glorot(rng, fan_in, fan_out, shape, dtype), dtype=dtype)

    if config.contextualized:
        for layer in range(config.blocks):
            for tag in ("wq", "wk", "wv", "wo"):
                proj(f"rep.block{layer}.{tag}", d, d, (d, d))

    k = config.conv_kernel_len
    proj("conv.kernel", k * d, d, (k, d, d))
    params["conv.bias"] = Parameter(np.zeros(d, dtype=dtype), dtype=dtype)

    if config.recurrent_stage2:
        proj("pred.lstm.w", d, 4 * d, (d, 4 * d))
        proj("pred.lstm.u", d, 4 * d, (d, 4 * d))
        params["pred.lstm.b"] = Parameter(np.zeros(4 * d, dtype=dtype), dtype=dtype)
    else:
        for tag in ("wq", "wk", "wv", "wo"):
            proj(f"pred.attn.{tag}", d, d, (d, d))

    proj("head.w1", d, d, (d, d))
    params["head.b1"] = Parameter(np.zeros(d, dtype=dtype), dtype=dtype)
    proj("head.w2", d, 1, (d, 1))
    params["head.b2"] = Parameter(np.zeros(1, dtype=dtype), dtype=dtype)
    return params


def encode_patients(patients: list[PatientRecord], emb: EmbeddingMatrix,
                    config: ModelConfig, dtype=np.float32
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Fixed (batch, n_v, d_e) visit encodings and a real-visit mask.

    Keeps each patient's n_v most recent visits in chronological order, sums
    code embeddings, and adds the sinusoidal encoding of days-before-index
    (clipped at one year when configured). Padding positions are zero.
    """
    batch = len(patients)
    enc = np.zeros((batch, config.n_v, config.d_e), dtype=dtype)
    mask = np.zeros((batch, config.n_v), dtype=bool)
    for b, patient in enumerate(patients):
        visits = patient.recent_visits(config.n_v)
        for j, visit in enumerate(visits):
            t = visit.days_before_index
            if config.clip_visit_days:
                t = min(t, TIME_CLIP_DAYS)
            enc[b, j] = embed_visit(visit.codes, emb) + temporal_embedding(t, config.d_e)
            mask[b, j] = True
    return enc, mask


@dataclass
class ForwardResult:
    q: Tensor                                   # (batch, t_max + 1)
    attention: list[np.ndarray] = field(default_factory=list)  # per rep block: (B, H, n_v, n_v)


def _attention_block(x: Tensor, mask: np.ndarray | None, wq: Tensor, wk: Tensor,
                     wv: Tensor, wo: Tensor, heads: int, p_drop: float, mode: str,
                     rng, capture: list | None) -> Tensor:
    """One multi-head self-attention block with residual connection."""
    b, n, d = x.shape
    dh = d // heads

    def split_heads(t: Tensor) -> Tensor:
        return t.reshape(b, n, heads, dh).swapaxes(1, 2)   # (b, h, n, dh)

    q = split_heads(matmul(x, wq))
    k = split_heads(matmul(x, wk))
    v = split_heads(matmul(x, wv))
    scores = matmul(q, k.swapaxes(2, 3)) * (1.0 / np.sqrt(dh))
    key_mask = None if mask is None else mask[:, None, None, :]
    attn = softmax_lastdim(scores, key_mask)
    if capture is not None:
        capture.append(attn.data.copy())
    mixed = matmul(attn, v).swapaxes(1, 2).reshape(b, n, d)
    out = matmul(mixed, wo) + x
    return dropout(out, p_drop, mode, rng)


def contextualize_visits(x: Tensor, mask: np.ndarray, params: dict[str, Parameter],
                         config: ModelConfig, mode: str, rng=None,
                         capture: list | None = None) -> Tensor:
    """Representation-phase attention stack over visits."""
    if not mask.any(axis=1).all():
        raise DegenerateRowError("patient with no real visits in the batch")
    mask_t = Tensor(mask.astype(x.dtype)[:, :, None])
    for layer in range(config.blocks):
        x = _attention_block(
            x, mask,
            params[f"rep.block{layer}.wq"].value, params[f"rep.block{layer}.wk"].value,
            params[f"rep.block{layer}.wv"].value, params[f"rep.block{layer}.wo"].value,
            config.heads, config.dropout, mode, rng, capture)
        x = x * mask_t  # keep padding positions as zero vectors
    return x


def visits_to_months(x: Tensor, params: dict[str, Parameter], config: ModelConfig) -> Tensor:
    """Map (batch, n_v, d_e) visit positions onto (batch, t_max, d_e) months."""
    return conv1d_seq(x, params["conv.kernel"].value, params["conv.bias"].value)


def _lstm_stage(x: Tensor, params: dict[str, Parameter], d: int) -> Tensor:
    """Single-layer unidirectional LSTM over the month axis."""
    b, steps, _ = x.shape
    w, u = params["pred.lstm.w"].value, params["pred.lstm.u"].value
    bias = params["pred.lstm.b"].value
    h = Tensor(np.zeros((b, d), dtype=x.dtype))
    c = Tensor(np.zeros((b, d), dtype=x.dtype))
    outputs = []
    for t in range(steps):
        gates = matmul(x[:, t, :], w) + matmul(h, u) + bias
        i = gates[:, 0:d].sigmoid()
        f = gates[:, d:2 * d].sigmoid()
        g = gates[:, 2 * d:3 * d].tanh()
        o = gates[:, 3 * d:4 * d].sigmoid()
        c = f * c + i * g
        h = o * c.tanh()
        outputs.append(h)
    return stack(outputs, axis=1)


def predict_q(month_repr: Tensor, params: dict[str, Parameter], config: ModelConfig,
              mode: str, rng=None) -> Tensor:
    """Hazard complements q(0..t_max) from the monthly representation.

    The convolution yields t_max positions; month t_max reuses the final
    position's representation under its own temporal encoding, giving
    t_max + 1 outputs.
    """
    d = config.d_e
    extended = concat([month_repr, month_repr[:, -1:, :]], axis=1)  # (b, t_max+1, d)
    months = Tensor(_month_encoding_table(config.t_max, d, extended.dtype.type)[None])
    x = extended + months

    if config.recurrent_stage2:
        x = _lstm_stage(x, params, d)
    else:
        x = _attention_block(
            x, None,
            params["pred.attn.wq"].value, params["pred.attn.wk"].value,
            params["pred.attn.wv"].value, params["pred.attn.wo"].value,
            config.heads, config.dropout, mode, rng, None)

    hidden = (matmul(x, params["head.w1"].value) + params["head.b1"].value).tanh()
    logits = matmul(hidden, params["head.w2"].value) + params["head.b2"].value
    q = logits.reshape(logits.shape[0], logits.shape[1]).sigmoid()
    # keep q strictly inside (0, 1) even where float32 sigmoid saturates
    return q.clip(Q_CLAMP, 1.0 - Q_CLAMP)


def forward_encoded(enc: np.ndarray, mask: np.ndarray, params: dict[str, Parameter],
                    config: ModelConfig, mode: str = "eval", rng=None,
                    capture_attention: bool = False) -> ForwardResult:
    """Run the network on precomputed visit encodings."""
    x = Tensor(enc)
    attn: list[np.ndarray] = []
    if config.contextualized:
        x = contextualize_visits(x, mask, params, config, mode, rng,
                                 attn if capture_attention else None)
    months = visits_to_months(x, params, config)
    q = predict_q(months, params, config, mode, rng)
    return ForwardResult(q=q, attention=attn)


def forward(patients: list[PatientRecord], emb: EmbeddingMatrix,
            params: dict[str, Parameter], config: ModelConfig, mode: str = "eval",
            rng=None, capture_attention: bool = False,
            dtype=np.float32) -> ForwardResult:
    """End-to-end forward pass from patient records to hazard complements."""
    enc, mask = encode_patients(patients, emb, config, dtype=dtype)
    return forward_encoded(enc, mask, params, config, mode, rng, capture_attention)


def cast_params(params: dict[str, Parameter], dtype) -> dict[str, Parameter]:
    """Copy of a parameter set in another precision (used by gradient checks)."""
    out: dict[str, Parameter] = {}
    for name, p in params.items():
        out[name] = Parameter(p.data.astype(dtype), dtype=dtype)
    return out
