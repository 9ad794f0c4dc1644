"""Shallow linear autoencoder decoder: forward loss, analytic gradient,
and a standalone trainer that optimizes the item matrix directly.

The decoder approximates the item-to-item weight matrix as the low-rank
product ``A A^T`` with a zero diagonal (enforced by subtracting the input
from the reconstruction). The training loss for a user batch ``X`` is

    L = sum_u || rownorm(X_u) - rownorm(X_u (A A^T - I)) ||^2

summed (not averaged) over the batch. With ``normalize`` on, rows of ``A``
are L2-normalized before forming predictions and the gradient carries the
corresponding chain rule. Zero rows (users with no surviving interactions,
or zero-norm predictions) contribute zero loss and zero gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from beekit.errors import DataError, DimensionMismatch
from beekit.optim import Adam
from beekit.sparse import CsrMatrix, InteractionMatrix, normalize_rows, spmm, spmm_t


def _check_shapes(x_batch: CsrMatrix, a_sub: np.ndarray) -> np.ndarray:
    a_sub = np.ascontiguousarray(a_sub, dtype=np.float64)
    if a_sub.ndim != 2:
        raise DimensionMismatch("a_sub must be 2-D")
    if x_batch.n_cols != a_sub.shape[0]:
        raise DimensionMismatch(
            f"x_batch has {x_batch.n_cols} columns but a_sub has {a_sub.shape[0]} rows")
    return a_sub


def _subtract_sparse(dense: np.ndarray, x: CsrMatrix) -> np.ndarray:
    rows = np.repeat(np.arange(x.n_rows), np.diff(x.indptr))
    dense[rows, x.indices] -= x.data
    return dense


def predict(x_batch: CsrMatrix, a_sub: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Reconstruction ``X (A A^T) - X`` for a user batch."""
    a_sub = _check_shapes(x_batch, a_sub)
    a_eff = normalize_rows(a_sub) if normalize else a_sub
    s = spmm(x_batch, a_eff)
    p = s @ a_eff.T
    return _subtract_sparse(p, x_batch)


def loss(x_batch: CsrMatrix, a_sub: np.ndarray, normalize: bool = True) -> float:
    """Squared distance between row-normalized input and prediction."""
    p = predict(x_batch, a_sub, normalize=normalize)
    diff = normalize_rows(x_batch).to_dense() - normalize_rows(p)
    return float(np.sum(diff * diff))


def loss_and_grad(x_batch: CsrMatrix, a_sub: np.ndarray,
                  normalize: bool = True) -> tuple:
    """Loss together with the exact gradient with respect to ``a_sub``."""
    a_sub = _check_shapes(x_batch, a_sub)
    if normalize:
        a_norms = np.linalg.norm(a_sub, axis=1, keepdims=True)
        a_zero = a_norms == 0
        a_safe = np.where(a_zero, 1.0, a_norms)
        a_eff = np.where(a_zero, 0.0, a_sub / a_safe)
    else:
        a_eff = a_sub

    s = spmm(x_batch, a_eff)                      # X A          (u x d)
    p = _subtract_sparse(s @ a_eff.T, x_batch)    # X A A^T - X  (u x m)

    n = normalize_rows(x_batch).to_dense()
    p_norms = np.linalg.norm(p, axis=1, keepdims=True)
    p_zero = p_norms == 0
    p_safe = np.where(p_zero, 1.0, p_norms)
    q = np.where(p_zero, 0.0, p / p_safe)

    diff = n - q
    loss_val = float(np.sum(diff * diff))

    # d/dq of sum ||n - q||^2, then back through q = p / ||p||.
    g_q = -2.0 * diff
    g_p = g_q - q * np.sum(g_q * q, axis=1, keepdims=True)
    g_p = np.where(p_zero, 0.0, g_p / p_safe)

    # P = (X A) A^T - X: two appearances of A.
    g_a = spmm_t(x_batch, g_p @ a_eff) + g_p.T @ s
    if normalize:
        g_a = g_a - a_eff * np.sum(g_a * a_eff, axis=1, keepdims=True)
        g_a = np.where(a_zero, 0.0, g_a / a_safe)
    return loss_val, g_a


def loss_grad_a(x_batch: CsrMatrix, a_sub: np.ndarray, normalize: bool = True) -> np.ndarray:
    return loss_and_grad(x_batch, a_sub, normalize=normalize)[1]


@dataclass
class ElsaModel:
    """Directly optimized item matrix (the collaborative-filtering baseline)."""

    a: np.ndarray
    normalize_a: bool = True
    item_ids: list | None = None
    history: list = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.a.shape[1]

    @property
    def n_items(self) -> int:
        return self.a.shape[0]

    def effective_a(self) -> np.ndarray:
        return normalize_rows(self.a) if self.normalize_a else self.a


def init_item_matrix(n_items: int, d: int, seed: int) -> np.ndarray:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) init on the parameter-init seed stream."""
    rng = np.random.default_rng([seed, 0])
    bound = 1.0 / np.sqrt(d)
    return rng.uniform(-bound, bound, size=(n_items, d))


def train_elsa(x: InteractionMatrix, d: int, epochs: int, batch_users: int,
               lr: float = 1e-3, seed: int = 0, normalize: bool = True) -> ElsaModel:
    """Optimize the item matrix with Adam over shuffled user batches.

    Deterministic for a fixed seed; records per-epoch mean batch loss in
    ``model.history``.
    """
    if x.nnz == 0:
        raise DataError("cannot train on an empty interaction matrix")
    if d < 1 or d > x.n_items:
        raise DataError("embedding dimension must be in [1, n_items]")
    if epochs < 1:
        raise DataError("epochs must be >= 1")
    if batch_users < 1:
        raise DataError("batch_users must be >= 1")

    a = init_item_matrix(x.n_items, d, seed)
    opt = Adam(a.size, lr=lr)
    flat = a.reshape(-1)
    rng_users = np.random.default_rng([seed, 1])
    model = ElsaModel(a, normalize_a=normalize, item_ids=list(x.item_ids))

    for _ in range(epochs):
        perm = rng_users.permutation(x.n_users)
        batch_losses = []
        for start in range(0, x.n_users, batch_users):
            batch = x.csr.take_rows(perm[start:start + batch_users])
            loss_val, g = loss_and_grad(batch, a, normalize=normalize)
            opt.step(flat, g.reshape(-1))
            batch_losses.append(loss_val)
        model.history.append(float(np.mean(batch_losses)))
    return model
