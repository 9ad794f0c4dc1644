import numpy as np
import pytest

from beekit.sparse import CsrMatrix, InteractionMatrix


def random_dense01(rng, n_rows, n_cols, density=0.4):
    """Random binary matrix as float64."""
    return (rng.random((n_rows, n_cols)) < density).astype(np.float64)


def random_csr(rng, n_rows, n_cols, density=0.4, values="binary"):
    dense = random_dense01(rng, n_rows, n_cols, density)
    if values == "random":
        dense = dense * rng.random((n_rows, n_cols))
    return CsrMatrix.from_dense(dense), dense


def random_interactions(rng, n_users, n_items, density=0.2, timestamps=False,
                        min_per_user=0):
    dense = random_dense01(rng, n_users, n_items, density)
    for u in range(n_users):
        while dense[u].sum() < min_per_user:
            dense[u, rng.integers(n_items)] = 1.0
    csr = CsrMatrix.from_dense(dense)
    ts = rng.integers(0, 10_000, size=csr.nnz) if timestamps else None
    return InteractionMatrix(csr, [f"u{i}" for i in range(n_users)],
                             [f"i{j}" for j in range(n_items)], ts), dense


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
