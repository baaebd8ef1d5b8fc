"""Shared test fixtures and builders."""

from __future__ import annotations

import numpy as np
import pytest

from strafe.data import Cohort, PatientRecord, SurvivalLabel, Visit
from strafe.embeddings import EmbeddingMatrix, Vocabulary


def make_patient(pid="p0", visits=((30, ("C0000", "P0001")),), duration=3,
                 event=True, age=60, sex="M") -> PatientRecord:
    vs = tuple(Visit(days_before_index=d, codes=tuple(codes)) for d, codes in visits)
    return PatientRecord(id=pid, age=age, sex=sex, visits=vs,
                         label=SurvivalLabel(duration_months=duration, event=event))


def make_cohort(n=20, seed=0, t_max=12, vocab=("C0000", "P0001", "D0002", "C0003")) -> Cohort:
    """Small random-but-valid cohort for plumbing tests."""
    rng = np.random.default_rng(seed)
    patients = []
    for i in range(n):
        n_visits = int(rng.integers(1, 6))
        days = sorted(rng.integers(0, 400, size=n_visits).tolist(), reverse=True)
        visits = []
        for d in days:
            k = int(rng.integers(1, len(vocab) + 1))
            codes = tuple(rng.choice(vocab, size=k, replace=False).tolist())
            visits.append((d, codes))
        event = bool(rng.random() < 0.5)
        duration = int(rng.integers(0 if event else 1, t_max + 1))
        patients.append(make_patient(f"t-{i:03d}", visits, duration, event,
                                     age=int(rng.integers(40, 90)),
                                     sex="M" if rng.random() < 0.5 else "F"))
    return Cohort(patients)


def make_embeddings(codes=("C0000", "P0001", "D0002", "C0003"), d_e=8,
                    seed=0) -> EmbeddingMatrix:
    rng = np.random.default_rng(seed)
    vocab = Vocabulary({c: 1 for c in codes})
    return EmbeddingMatrix(vocab=vocab, vectors=rng.normal(size=(len(codes), d_e)))


@pytest.fixture
def tiny_cohort():
    return make_cohort()


@pytest.fixture
def tiny_embeddings():
    return make_embeddings()
