"""Differentiable item encoders mapping item texts to embedding rows.

Texts are featurized once with a hashed bag-of-words (FNV-1a 64-bit,
masked to ``hash_bits`` buckets, term counts, L2-normalized rows); the
encoders are then differentiable functions of a single flat float64
parameter vector, so the optimizer and the finite-difference oracle treat
every encoder the same way.

Encoder kinds:

* ``EmbeddingTable``  -- one trainable row per item (no text involved);
  training through the decoder reduces exactly to the direct item-matrix
  optimization, which anchors the equivalence tests.
* ``BowLinear``       -- hashed features times a linear map.
* ``BowMlp``          -- one tanh hidden layer over hashed features.
* ``FrozenPlusHead``  -- externally supplied fixed embeddings followed by
  a trainable linear head (hook for precomputed sentence embeddings).

``encode`` is a pure function of (parameters, features). ``encode_backward``
returns d<output_grads, encode>/d(theta) and is additive across disjoint
item batches, which is what the chunked accumulation loop in the trainer
relies on.
"""

import re
from dataclasses import dataclass

import numpy as np

from beekit.errors import DataError, DimensionMismatch
from beekit.sparse import CsrMatrix, spmm, spmm_t

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(token: str) -> int:
    """FNV-1a 64-bit hash of the token's UTF-8 bytes."""
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _U64_MASK
    return h


def tokenize(text: str) -> list:
    """Lowercase and split on non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class ItemCorpus:
    """Item texts ordered to match the interaction matrix's item axis."""

    item_ids: list
    texts: list

    def __post_init__(self):
        if len(self.item_ids) != len(self.texts):
            raise DataError("item_ids and texts must have equal length")

    def __len__(self) -> int:
        return len(self.texts)

    def subset(self, item_indices) -> "ItemCorpus":
        idx = np.asarray(item_indices, dtype=np.int64)
        return ItemCorpus([self.item_ids[i] for i in idx],
                          [self.texts[i] for i in idx])


@dataclass
class FeatureMatrix:
    """Hashed term-frequency rows, L2-normalized."""

    csr: CsrMatrix
    hash_bits: int

    @property
    def n_items(self) -> int:
        return self.csr.n_rows

    @property
    def n_features(self) -> int:
        return self.csr.n_cols


def featurize(corpus: ItemCorpus, hash_bits: int = 16) -> FeatureMatrix:
    """Hash each token into ``2**hash_bits`` buckets and accumulate counts.

    Deterministic (fixed hash, no seed); empty texts yield zero rows.
    """
    if not 8 <= hash_bits <= 24:
        raise DataError("hash_bits must be in [8, 24]")
    n_features = 1 << hash_bits
    mask = n_features - 1
    rows, cols, vals = [], [], []
    for i, text in enumerate(corpus.texts):
        buckets = {}
        for token in tokenize(text):
            b = fnv1a_64(token) & mask
            buckets[b] = buckets.get(b, 0) + 1
        for b, count in sorted(buckets.items()):
            rows.append(i)
            cols.append(b)
            vals.append(count)
    csr = CsrMatrix.from_coo(rows, cols, np.asarray(vals, dtype=np.float64),
                             (len(corpus), n_features))
    norms = csr.row_norms()
    inv = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
    return FeatureMatrix(csr.scale_rows(inv), hash_bits)


def _uniform_init(rng, fan_in: int, size: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=size)


class ItemEncoder:
    """Base class; subclasses fill ``theta`` and the param layout."""

    kind = "base"

    def __init__(self):
        self.theta = np.zeros(0)
        self._layout = {}  # name -> (offset, shape)

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def param(self, name: str) -> np.ndarray:
        offset, shape = self._layout[name]
        return self.theta[offset:offset + int(np.prod(shape))].reshape(shape)

    def param_layout(self) -> dict:
        return {name: shape for name, (offset, shape) in self._layout.items()}

    def _register(self, names_shapes, rng, fan_ins):
        offset = 0
        chunks = []
        for (name, shape), fan_in in zip(names_shapes, fan_ins):
            size = int(np.prod(shape))
            self._layout[name] = (offset, shape)
            chunks.append(_uniform_init(rng, fan_in, size))
            offset += size
        self.theta = np.concatenate(chunks) if chunks else np.zeros(0)

    def set_theta(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.theta.size:
            raise DimensionMismatch("parameter vector has the wrong length")
        self.theta = theta.copy()

    def encode(self, item_indices) -> np.ndarray:
        raise NotImplementedError

    def encode_backward(self, item_indices, output_grads, out=None) -> np.ndarray:
        raise NotImplementedError

    def _check_backward(self, item_indices, output_grads, out):
        item_indices = np.asarray(item_indices, dtype=np.int64)
        output_grads = np.ascontiguousarray(output_grads, dtype=np.float64)
        if output_grads.shape != (item_indices.size, self.dim):
            raise DimensionMismatch("output_grads shape must match encode output")
        if out is None:
            out = np.zeros(self.n_params)
        elif out.shape != self.theta.shape:
            raise DimensionMismatch("gradient buffer has the wrong length")
        return item_indices, output_grads, out

    def _slice(self, out, name):
        offset, shape = self._layout[name]
        return out[offset:offset + int(np.prod(shape))].reshape(shape)

    def config(self) -> dict:
        raise NotImplementedError


class EmbeddingTable(ItemEncoder):
    """One trainable embedding row per item."""

    kind = "table"

    def __init__(self, n_items: int, d: int, seed: int = 0):
        super().__init__()
        self.n_items = n_items
        self._d = d
        rng = np.random.default_rng([seed, 0])
        self._register([("table", (n_items, d))], rng, [d])

    @property
    def dim(self) -> int:
        return self._d

    def encode(self, item_indices) -> np.ndarray:
        idx = self._check_indices(item_indices)
        return self.param("table")[idx].copy()

    def _check_indices(self, item_indices):
        idx = np.asarray(item_indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_items):
            raise DataError("item index out of range")
        return idx

    def encode_backward(self, item_indices, output_grads, out=None) -> np.ndarray:
        idx = self._check_indices(item_indices)
        idx, output_grads, out = self._check_backward(idx, output_grads, out)
        np.add.at(self._slice(out, "table"), idx, output_grads)
        return out

    def config(self) -> dict:
        return {"kind": self.kind, "n_items": self.n_items, "d": self._d}


class _FeatureEncoder(ItemEncoder):
    """Shared row-slicing over a FeatureMatrix."""

    def __init__(self, features: FeatureMatrix):
        super().__init__()
        self.features = features

    def _rows(self, item_indices) -> CsrMatrix:
        idx = np.asarray(item_indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.features.n_items):
            raise DataError("item index out of range")
        return self.features.csr.take_rows(idx)


class BowLinear(_FeatureEncoder):
    """Linear map on hashed bag-of-words features."""

    kind = "bow-linear"

    def __init__(self, features: FeatureMatrix, d: int, seed: int = 0, bias: bool = True):
        super().__init__(features)
        self._d = d
        self.bias = bias
        rng = np.random.default_rng([seed, 0])
        f = features.n_features
        names = [("w", (f, d))] + ([("b", (d,))] if bias else [])
        self._register(names, rng, [f] * len(names))

    @property
    def dim(self) -> int:
        return self._d

    def encode(self, item_indices) -> np.ndarray:
        rows = self._rows(item_indices)
        a = spmm(rows, self.param("w"))
        if self.bias:
            a += self.param("b")
        return a

    def encode_backward(self, item_indices, output_grads, out=None) -> np.ndarray:
        rows = self._rows(item_indices)
        _, output_grads, out = self._check_backward(item_indices, output_grads, out)
        self._slice(out, "w")[...] += spmm_t(rows, output_grads)
        if self.bias:
            self._slice(out, "b")[...] += output_grads.sum(axis=0)
        return out

    def config(self) -> dict:
        return {"kind": self.kind, "d": self._d, "bias": self.bias,
                "hash_bits": self.features.hash_bits}


class BowMlp(_FeatureEncoder):
    """One tanh hidden layer over hashed bag-of-words features."""

    kind = "bow-mlp"

    def __init__(self, features: FeatureMatrix, d: int, hidden: int = 64,
                 seed: int = 0, bias: bool = True):
        super().__init__(features)
        self._d = d
        self.hidden = hidden
        self.bias = bias
        rng = np.random.default_rng([seed, 0])
        f = features.n_features
        names, fans = [("w1", (f, hidden))], [f]
        if bias:
            names.append(("b1", (hidden,)))
            fans.append(f)
        names.append(("w2", (hidden, d)))
        fans.append(hidden)
        if bias:
            names.append(("b2", (d,)))
            fans.append(hidden)
        self._register(names, rng, fans)

    @property
    def dim(self) -> int:
        return self._d

    def _forward(self, rows: CsrMatrix):
        z = spmm(rows, self.param("w1"))
        if self.bias:
            z += self.param("b1")
        h = np.tanh(z)
        a = h @ self.param("w2")
        if self.bias:
            a += self.param("b2")
        return h, a

    def encode(self, item_indices) -> np.ndarray:
        return self._forward(self._rows(item_indices))[1]

    def encode_backward(self, item_indices, output_grads, out=None) -> np.ndarray:
        rows = self._rows(item_indices)
        _, output_grads, out = self._check_backward(item_indices, output_grads, out)
        h, _ = self._forward(rows)
        g_h = output_grads @ self.param("w2").T
        g_z = g_h * (1.0 - h * h)
        self._slice(out, "w2")[...] += h.T @ output_grads
        self._slice(out, "w1")[...] += spmm_t(rows, g_z)
        if self.bias:
            self._slice(out, "b2")[...] += output_grads.sum(axis=0)
            self._slice(out, "b1")[...] += g_z.sum(axis=0)
        return out

    def config(self) -> dict:
        return {"kind": self.kind, "d": self._d, "hidden": self.hidden,
                "bias": self.bias, "hash_bits": self.features.hash_bits}


class FrozenPlusHead(ItemEncoder):
    """Fixed externally supplied embeddings followed by a trainable linear head."""

    kind = "frozen-head"

    def __init__(self, base: np.ndarray, d: int, seed: int = 0, bias: bool = True):
        super().__init__()
        self.base = np.ascontiguousarray(base, dtype=np.float64)
        if self.base.ndim != 2:
            raise DimensionMismatch("base embeddings must be 2-D")
        self._d = d
        self.bias = bias
        rng = np.random.default_rng([seed, 0])
        e = self.base.shape[1]
        names = [("w", (e, d))] + ([("b", (d,))] if bias else [])
        self._register(names, rng, [e] * len(names))

    @property
    def dim(self) -> int:
        return self._d

    def _rows(self, item_indices) -> np.ndarray:
        idx = np.asarray(item_indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.base.shape[0]):
            raise DataError("item index out of range")
        return self.base[idx]

    def encode(self, item_indices) -> np.ndarray:
        a = self._rows(item_indices) @ self.param("w")
        if self.bias:
            a += self.param("b")
        return a

    def encode_backward(self, item_indices, output_grads, out=None) -> np.ndarray:
        rows = self._rows(item_indices)
        _, output_grads, out = self._check_backward(item_indices, output_grads, out)
        self._slice(out, "w")[...] += rows.T @ output_grads
        if self.bias:
            self._slice(out, "b")[...] += output_grads.sum(axis=0)
        return out

    def config(self) -> dict:
        return {"kind": self.kind, "d": self._d, "bias": self.bias,
                "base_dim": int(self.base.shape[1])}
