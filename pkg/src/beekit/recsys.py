"""Scoring and top-K recommendation.

Two scoring routes: the full decoder reconstruction for supervised
collaborative filtering, and cosine-similarity aggregation over a user's
history for content-based (cold-start / zero-shot) recommendation.
"""

from dataclasses import dataclass

import numpy as np

from beekit.errors import DataError, DimensionMismatch
from beekit.sparse import CsrMatrix, normalize_rows, spmm


@dataclass
class EmbeddingMatrix:
    """Dense item embeddings aligned with external item IDs."""

    a: np.ndarray
    item_ids: list
    normalized: bool = False

    def __post_init__(self):
        self.a = np.ascontiguousarray(self.a, dtype=np.float64)
        if self.a.ndim != 2:
            raise DimensionMismatch("embeddings must be 2-D")
        if len(self.item_ids) != self.a.shape[0]:
            raise DataError("item_ids length must match embedding rows")

    @property
    def n_items(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.a.shape[1]

    def unit_rows(self) -> np.ndarray:
        return self.a if self.normalized else normalize_rows(self.a)


@dataclass
class RankedList:
    user: object
    items: np.ndarray
    scores: np.ndarray


def score_elsa(x_input: CsrMatrix, emb: EmbeddingMatrix) -> np.ndarray:
    """Decoder reconstruction ``X (A A^T) - X`` with the effective rows of A."""
    a = emb.a
    if x_input.n_cols != a.shape[0]:
        raise DimensionMismatch("input width does not match embedding rows")
    scores = spmm(x_input, a) @ a.T
    rows = np.repeat(np.arange(x_input.n_rows), np.diff(x_input.indptr))
    scores[rows, x_input.indices] -= x_input.data
    return scores


def score_cbf(x_input: CsrMatrix, emb: EmbeddingMatrix, candidate_items) -> np.ndarray:
    """Sum of cosine similarities between history items and each candidate.

    Zero embedding rows have cosine 0 against everything; scores are
    invariant under positive rescaling of any embedding row.
    """
    candidate_items = np.asarray(candidate_items, dtype=np.int64)
    if candidate_items.size == 0:
        raise DataError("candidate list must be nonempty")
    if x_input.n_cols != emb.n_items:
        raise DimensionMismatch("input width does not match embedding rows")
    if candidate_items.min() < 0 or candidate_items.max() >= emb.n_items:
        raise DataError("candidate index out of range")
    unit = emb.unit_rows()
    return spmm(x_input, unit) @ unit[candidate_items].T


def top_k(scores: np.ndarray, k: int, seen: CsrMatrix = None,
          mask_seen: bool = True, users=None, candidate_items=None) -> list:
    """Per-user K best columns, ties broken by lower item index.

    ``seen`` must be column-aligned with ``scores``; masked entries are
    excluded entirely (lists may come back shorter than K when fewer
    scoreable items remain). ``candidate_items`` translates score columns
    back to catalog indices in the returned lists.
    """
    if k < 1:
        raise DataError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    masked = scores.copy()
    if mask_seen and seen is not None:
        if seen.shape != scores.shape:
            raise DimensionMismatch("seen matrix must be aligned with scores")
        rows = np.repeat(np.arange(seen.n_rows), np.diff(seen.indptr))
        masked[rows, seen.indices] = -np.inf

    out = []
    n_users = scores.shape[0]
    user_refs = users if users is not None else np.arange(n_users)
    for u in range(n_users):
        row = masked[u]
        order = np.argsort(-row, kind="stable")
        order = order[np.isfinite(row[order])][:k]
        items = order if candidate_items is None else candidate_items[order]
        out.append(RankedList(user_refs[u], items, row[order].copy()))
    return out


def popularity_scorer(x_train):
    """Same score row for every user: item interaction counts in training data."""
    counts = np.zeros(x_train.n_cols if isinstance(x_train, CsrMatrix) else x_train.n_items)
    csr = x_train if isinstance(x_train, CsrMatrix) else x_train.csr
    np.add.at(counts, csr.indices, 1.0)

    def scorer(x_input: CsrMatrix, candidate_items=None):
        cols = counts if candidate_items is None else counts[np.asarray(candidate_items)]
        return np.tile(cols, (x_input.n_rows, 1))

    return scorer


def item_knn_scorer(x_train):
    """Cosine similarity between item interaction columns (reference baseline).

    Densifies the item-user matrix; intended for desk-scale evaluation only.
    """
    csr = x_train if isinstance(x_train, CsrMatrix) else x_train.csr
    item_vectors = normalize_rows(csr.to_dense().T)

    def scorer(x_input: CsrMatrix, candidate_items=None):
        pseudo = spmm(x_input, item_vectors)
        target = item_vectors if candidate_items is None \
            else item_vectors[np.asarray(candidate_items)]
        return pseudo @ target.T

    return scorer


def cbf_scorer(emb: EmbeddingMatrix):
    def scorer(x_input: CsrMatrix, candidate_items=None):
        cands = np.arange(emb.n_items) if candidate_items is None else candidate_items
        return score_cbf(x_input, emb, cands)

    return scorer


def elsa_scorer(emb: EmbeddingMatrix):
    def scorer(x_input: CsrMatrix, candidate_items=None):
        scores = score_elsa(x_input, emb)
        if candidate_items is not None:
            scores = scores[:, np.asarray(candidate_items)]
        return scores

    return scorer
