"""Concept embeddings via skip-gram with negative sampling, plus baseline features.

Embedding training reads only code co-occurrence within 90-day "sentences";
survival labels never enter this module's API, so the embeddings cannot leak
outcome information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Cohort, PatientRecord
from .errors import ParameterError, ValidationError


class Vocabulary:
    """Bidirectional ConceptCode <-> dense index map with frequency counts."""

    def __init__(self, codes_with_counts: dict[str, int]):
        if any(n < 1 for n in codes_with_counts.values()):
            raise ValidationError("vocabulary frequencies must be >= 1")
        self.codes: list[str] = list(codes_with_counts)
        self.index: dict[str, int] = {c: i for i, c in enumerate(self.codes)}
        self.counts: np.ndarray = np.array(list(codes_with_counts.values()), dtype=np.int64)

    def __len__(self):
        return len(self.codes)

    def __contains__(self, code: str):
        return code in self.index

    @classmethod
    def from_cohort(cls, cohort: Cohort) -> "Vocabulary":
        counts: dict[str, int] = {}
        for code in cohort.all_codes():
            counts[code] = counts.get(code, 0) + 1
        return cls(dict(sorted(counts.items())))


@dataclass
class EmbeddingMatrix:
    vocab: Vocabulary
    vectors: np.ndarray  # vocab_size x d_e

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.vocab):
            raise ValidationError("embedding rows must align with the vocabulary")
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("embedding matrix contains non-finite values")

    @property
    def d_e(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, code: str) -> np.ndarray | None:
        i = self.vocab.index.get(code)
        return None if i is None else self.vectors[i]


def build_sentences(cohort: Cohort, window_days: int = 90) -> list[list[str]]:
    """Group each patient's visits into consecutive non-overlapping windows.

    Windows are anchored at the patient's earliest visit; each window's union
    of codes (deduplicated, sorted) forms one sentence. Empty windows are
    skipped.
    """
    if window_days <= 0:
        raise ParameterError("window_days must be positive")
    sentences: list[list[str]] = []
    for patient in cohort:
        anchor = max(v.days_before_index for v in patient.visits)
        windows: dict[int, set[str]] = {}
        for visit in patient.visits:
            w = (anchor - visit.days_before_index) // window_days
            windows.setdefault(w, set()).update(visit.codes)
        for w in sorted(windows):
            sentences.append(sorted(windows[w]))
    return sentences


def train_skipgram(corpus: list[list[str]], d_e: int, epochs: int = 3,
                   negatives_per_positive: int = 5, lr: float = 0.025,
                   seed: int = 0, vocab: Vocabulary | None = None
                   ) -> tuple[EmbeddingMatrix, list[float]]:
    """Skip-gram with negative sampling over whole-sentence contexts.

    Every other code in the same sentence is a context; negatives are drawn
    from the unigram distribution raised to 0.75. Deterministic per seed.
    Returns the input-side embedding matrix and the per-epoch mean loss.
    """
    if not corpus:
        raise ParameterError("corpus is empty")
    if d_e % 2 != 0:
        raise ParameterError("d_e must be even")
    if vocab is None:
        counts: dict[str, int] = {}
        for sent in corpus:
            for code in sent:
                counts[code] = counts.get(code, 0) + 1
        vocab = Vocabulary(dict(sorted(counts.items())))
    if len(vocab) < 2:
        raise ParameterError("skip-gram needs a vocabulary of at least 2 codes")

    rng = np.random.default_rng(seed)
    v = len(vocab)
    w_in = (rng.random((v, d_e)) - 0.5) / d_e
    w_out = np.zeros((v, d_e))

    noise = np.zeros(v)
    for sent in corpus:
        for code in sent:
            if code in vocab:
                noise[vocab.index[code]] += 1
    noise = noise ** 0.75
    noise /= noise.sum()

    # pre-index the corpus; sentences with one known code produce no pairs
    indexed = [np.array([vocab.index[c] for c in sent if c in vocab], dtype=np.int64)
               for sent in corpus]
    indexed = [s for s in indexed if s.size >= 2]
    if not indexed:
        raise ParameterError("corpus has no sentence with two known codes")

    centers_all = []
    contexts_all = []
    for sent in indexed:
        n = sent.size
        centers_all.append(np.repeat(sent, n - 1))
        ctx = np.broadcast_to(sent, (n, n))
        contexts_all.append(ctx[~np.eye(n, dtype=bool)])
    centers_all = np.concatenate(centers_all)
    contexts_all = np.concatenate(contexts_all)
    n_pairs = centers_all.size

    history: list[float] = []
    k = negatives_per_positive
    batch = 1024
    for _ in range(epochs):
        order = rng.permutation(n_pairs)
        epoch_loss = 0.0
        for start in range(0, n_pairs, batch):
            sel = order[start:start + batch]
            c_idx = centers_all[sel]
            pos_idx = contexts_all[sel]
            neg_idx = rng.choice(v, size=(sel.size, k), p=noise)

            c_vec = w_in[c_idx]                     # (b, d)
            pos_vec = w_out[pos_idx]                # (b, d)
            neg_vec = w_out[neg_idx]                # (b, k, d)

            pos_score = _sigmoid(np.einsum("bd,bd->b", c_vec, pos_vec))
            neg_score = _sigmoid(np.einsum("bd,bkd->bk", c_vec, neg_vec))
            epoch_loss -= np.log(np.clip(pos_score, 1e-10, None)).sum()
            epoch_loss -= np.log(np.clip(1.0 - neg_score, 1e-10, None)).sum()

            g_pos = (pos_score - 1.0)[:, None]      # d loss / d (c . pos)
            g_neg = neg_score[:, :, None]
            g_center = g_pos * pos_vec + np.einsum("bk,bkd->bd", neg_score, neg_vec)

            # average accumulated updates per row so frequent codes do not see
            # an effective learning rate multiplied by their batch count
            out_idx = np.concatenate([pos_idx, neg_idx.reshape(-1)])
            out_upd = np.concatenate([g_pos * c_vec,
                                      (g_neg * c_vec[:, None, :]).reshape(-1, d_e)])
            out_counts = np.bincount(out_idx, minlength=v)[out_idx, None]
            np.add.at(w_out, out_idx, -lr * out_upd / out_counts)
            in_counts = np.bincount(c_idx, minlength=v)[c_idx, None]
            np.add.at(w_in, c_idx, -lr * g_center / in_counts)
        history.append(epoch_loss / n_pairs)
    # rescale to unit mean row norm: raw skip-gram norms depend on corpus size
    # and epoch count, and downstream models add these vectors to fixed-scale
    # positional encodings, so the feature scale must be corpus-independent
    # (epochs=0 returns the raw initialization untouched)
    if epochs > 0:
        mean_norm = np.linalg.norm(w_in, axis=1).mean()
        if mean_norm > 0:
            w_in = w_in / mean_norm
    return EmbeddingMatrix(vocab=vocab, vectors=w_in), history


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def bow_featurize(patient: PatientRecord, vocab: Vocabulary) -> np.ndarray:
    """Visit-level concept counts over the entire history.

    Entry i counts the visits containing code i; the final extra entry is an
    out-of-vocabulary bucket. L1 norm equals the total code incidences.
    """
    counts = np.zeros(len(vocab) + 1)
    for visit in patient.visits:
        for code in visit.codes:
            i = vocab.index.get(code, len(vocab))
            counts[i] += 1
    return counts


def sum_embedding_featurize(patient: PatientRecord, emb: EmbeddingMatrix) -> np.ndarray:
    """Sum of code embeddings over all visits; OOV codes contribute zero."""
    out = np.zeros(emb.d_e)
    for visit in patient.visits:
        for code in visit.codes:
            vec = emb.lookup(code)
            if vec is not None:
                out += vec
    return out
