"""Per-patient attention extraction, interaction graphs, and visit-removal counterfactuals.

Attention scores express correlation between visits, not causation, and
their scale is not comparable across patients; exports are plot-ready data
files for downstream tooling rather than rendered figures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .data import PatientRecord, code_domain
from .embeddings import EmbeddingMatrix
from .errors import ParameterError, UnsupportedVariantError
from .model import ModelConfig, forward
from .optim import Parameter
from .survival import mean_survival_time


@dataclass
class AttentionResult:
    patient_id: str
    matrix: np.ndarray          # (n_real, n_real), mean over heads of the final layer
    per_head: np.ndarray        # (heads, n_real, n_real), final layer
    visit_days: list[int]

    def symmetric(self) -> np.ndarray:
        """Undirected interaction scores (A + A^T) / 2 used for graph export."""
        return 0.5 * (self.matrix + self.matrix.T)

    def top_pair(self) -> tuple[int, int]:
        """Visit pair with the strongest symmetric interaction (off-diagonal)."""
        sym = self.symmetric().copy()
        np.fill_diagonal(sym, -np.inf)
        if sym.shape[0] < 2:
            raise ParameterError("top_pair needs at least two visits")
        i, j = np.unravel_index(np.argmax(sym), sym.shape)
        return (min(i, j), max(i, j))


def extract_attention(patient: PatientRecord, emb: EmbeddingMatrix,
                      params: dict[str, Parameter], config: ModelConfig) -> AttentionResult:
    """Representation-phase attention over the patient's real visits.

    Uses the final attention layer, averaged over heads, with padded
    rows/columns removed and rows renormalized to probability vectors.
    """
    if not config.contextualized:
        raise UnsupportedVariantError(
            f"variant {config.variant!r} has no representation-phase attention")
    result = forward([patient], emb, params, config, mode="eval", capture_attention=True)
    final = result.attention[-1][0]                    # (heads, n_v, n_v)
    n_real = len(patient.recent_visits(config.n_v))
    per_head = final[:, :n_real, :n_real].astype(np.float64)
    per_head = per_head / per_head.sum(axis=-1, keepdims=True)
    matrix = per_head.mean(axis=0)
    matrix = matrix / matrix.sum(axis=-1, keepdims=True)
    days = [v.days_before_index for v in patient.recent_visits(config.n_v)]
    return AttentionResult(patient_id=patient.id, matrix=matrix,
                           per_head=per_head, visit_days=days)


def _dominant_domain(visit) -> str:
    tags = [code_domain(c) for c in visit.codes]
    return max(sorted(set(tags)), key=tags.count)


def visit_graph(attn: AttentionResult, patient: PatientRecord, config: ModelConfig,
                threshold: float) -> dict:
    """Node/edge interaction graph; edges keep symmetric weights above threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError("threshold must be in [0, 1]")
    visits = patient.recent_visits(config.n_v)
    nodes = [{"idx": i, "days_before_index": v.days_before_index,
              "domain_tag": _dominant_domain(v)} for i, v in enumerate(visits)]
    sym = attn.symmetric()
    edges = []
    for i in range(len(visits)):
        for j in range(i + 1, len(visits)):
            w = float(sym[i, j])
            if w > threshold:
                edges.append({"i": i, "j": j, "w": w})
    return {"patient_id": patient.id, "nodes": nodes, "edges": edges}


def export_graph_json(graph: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph, fh, sort_keys=True, indent=2)


def export_heatmap_csv(attn: AttentionResult, path) -> None:
    np.savetxt(path, attn.matrix, delimiter=",", fmt="%.10g")


@dataclass
class Counterfactual:
    original_curve: np.ndarray
    counterfactual_curve: np.ndarray
    delta_mu: float
    removed: tuple[int, ...]


def counterfactual_remove_visits(patient: PatientRecord, remove: list[int],
                                 emb: EmbeddingMatrix, params: dict[str, Parameter],
                                 config: ModelConfig) -> Counterfactual:
    """Re-run the model with the listed visits deleted from the kept window.

    Indices refer to the patient's n_v most recent visits (the same indexing
    the attention matrix uses). Visits are removed, not zeroed: the sequence
    shortens and padding adjusts. Removing everything is a contract error.
    """
    kept = patient.recent_visits(config.n_v)
    remove_set = set(remove)
    for idx in remove_set:
        if not 0 <= idx < len(kept):
            raise ParameterError(f"visit index {idx} out of range [0, {len(kept) - 1}]")
    remaining = tuple(v for i, v in enumerate(kept) if i not in remove_set)
    if not remaining:
        raise ParameterError("cannot remove every visit")

    original = forward([patient], emb, params, config, mode="eval").q.data[0]
    if remove_set:
        reduced = replace(patient, visits=remaining)
        altered = forward([reduced], emb, params, config, mode="eval").q.data[0]
    else:
        altered = original
    s_orig = np.cumprod(original)
    s_cf = np.cumprod(altered)
    delta = mean_survival_time(s_cf) - mean_survival_time(s_orig)
    return Counterfactual(original_curve=s_orig, counterfactual_curve=s_cf,
                          delta_mu=float(delta), removed=tuple(sorted(remove_set)))


def export_curves_csv(cf: Counterfactual, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,S_original,S_counterfactual\n")
        for t, (a, b) in enumerate(zip(cf.original_curve, cf.counterfactual_curve)):
            fh.write(f"{t},{a:.10g},{b:.10g}\n")
