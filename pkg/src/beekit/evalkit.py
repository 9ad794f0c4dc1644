"""Dataset splitters, ranking metrics, bootstrap standard errors, and the
evaluation protocols tying them together.

Item-split protocols (cold-start / zero-shot): per user, inputs are the
interactions with training items, targets the interactions with held-out
test items, and candidates are restricted to the test items. Time-split
(supervised): inputs are the user's training-period interactions, targets
the test-period ones, candidates all items minus the already-seen. Users
with empty inputs or empty targets are excluded.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from beekit.errors import DataError
from beekit.sparse import CsrMatrix, InteractionMatrix, gather_columns, zero_columns


@dataclass
class ItemSplit:
    train_items: np.ndarray
    test_items: np.ndarray
    seed: int


@dataclass
class TimeSplit:
    train: InteractionMatrix
    test: InteractionMatrix
    boundary: int


def split_items(x: InteractionMatrix, corpus=None, n_test: int = 2000,
                seed: int = 0) -> ItemSplit:
    """Hold out ``n_test`` uniformly random items; deterministic per seed."""
    if n_test >= x.n_items:
        raise DataError(f"n_test must be < n_items ({x.n_items})")
    if n_test < 1:
        raise DataError("n_test must be >= 1")
    if corpus is not None and len(corpus) != x.n_items:
        raise DataError("corpus is not aligned with the interaction matrix")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(x.n_items)
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    return ItemSplit(train, test, seed)


def split_time(x: InteractionMatrix, fraction: float = 0.2) -> TimeSplit:
    """Last ``ceil(fraction * N)`` interactions by timestamp go to test.

    Stable sort: ties keep the matrix's canonical interaction order.
    """
    if x.timestamps is None:
        raise DataError("time split requires per-interaction timestamps")
    if not 0.0 < fraction < 1.0:
        raise DataError("fraction must be in (0, 1)")
    n = x.nnz
    n_test = int(np.ceil(fraction * n))
    order = np.argsort(x.timestamps, kind="stable")
    test_pos = order[n - n_test:]
    boundary = int(x.timestamps[test_pos[0]]) if n_test else 0

    mask = np.zeros(n, dtype=bool)
    mask[test_pos] = True
    rows = np.repeat(np.arange(x.n_users), np.diff(x.csr.indptr))

    def build(keep):
        csr = CsrMatrix.from_coo(rows[keep], x.csr.indices[keep],
                                 x.csr.data[keep], x.csr.shape)
        return InteractionMatrix(csr, x.user_ids, x.item_ids, x.timestamps[keep])

    return TimeSplit(build(~mask), build(mask), boundary)


def recall_at_k(ranked_items, relevant, k: int, denominator: str = "calibrated") -> float:
    """|top-K intersect relevant| over min(K, |relevant|) (or |relevant|)."""
    relevant = set(relevant)
    if not relevant:
        raise DataError("relevant set must be nonempty")
    hits = sum(1 for i in ranked_items[:k] if i in relevant)
    if denominator == "calibrated":
        return hits / min(k, len(relevant))
    if denominator == "full":
        return hits / len(relevant)
    raise DataError(f"unknown recall denominator {denominator!r}")


def ndcg_at_k(ranked_items, relevant, k: int = 100) -> float:
    """Binary-relevance NDCG with log base 2."""
    relevant = set(relevant)
    if not relevant:
        raise DataError("relevant set must be nonempty")
    dcg = 0.0
    for rank, item in enumerate(ranked_items[:k], start=1):
        if item in relevant:
            dcg += 1.0 / np.log2(rank + 1)
    ideal = min(k, len(relevant))
    idcg = float(np.sum(1.0 / np.log2(np.arange(1, ideal + 1) + 1)))
    return dcg / idcg


def bootstrap_se(per_user_values, b: int = 1000, seed: int = 0) -> float:
    """Bootstrap standard error of the per-user metric mean.

    Users are resampled with replacement B times; the reported value is
    std(resampled means, ddof=1) / sqrt(n_users). Deterministic per seed.
    """
    values = np.asarray(per_user_values, dtype=np.float64)
    n = values.size
    if n < 2:
        raise DataError("bootstrap requires at least 2 users")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(b, n))
    means = values[idx].mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n))


@dataclass
class MetricValue:
    value: float
    se: float
    n_users: int


@dataclass
class EvalReport:
    scenario: str
    metrics: dict
    n_users: int
    config: dict = field(default_factory=dict)
    model_id: str = ""

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "model_id": self.model_id,
            "n_users": self.n_users,
            "metrics": {name: {"value": mv.value, "se": mv.se, "n_users": mv.n_users}
                        for name, mv in self.metrics.items()},
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        width = max([len(n) for n in self.metrics] + [6])
        lines = [f"{'metric'.ljust(width)}  {'value':>10}  {'se':>10}  {'users':>7}"]
        for name, mv in self.metrics.items():
            lines.append(f"{name.ljust(width)}  {mv.value:>10.4f}  {mv.se:>10.6f}  "
                         f"{mv.n_users:>7d}")
        return "\n".join(lines)


_ITEM_SPLIT_SCENARIOS = ("zero-shot", "cold-start")
_TIME_SPLIT_SCENARIOS = ("supervised",)


def evaluate(scorer, x: InteractionMatrix, split, scenario: str,
             k_list=(20, 50), ndcg_k: int = 100, b: int = 1000, seed: int = 0,
             recall_denominator: str = "calibrated", config=None,
             model_id: str = "") -> EvalReport:
    """Run a scenario's protocol and aggregate metrics with bootstrap SEs."""
    if scenario in _ITEM_SPLIT_SCENARIOS:
        if not isinstance(split, ItemSplit):
            raise DataError(f"scenario {scenario!r} requires an item split")
        inputs_full, targets, candidates = _item_split_frames(x, split)
        mask_seen = False
    elif scenario in _TIME_SPLIT_SCENARIOS:
        if not isinstance(split, TimeSplit):
            raise DataError(f"scenario {scenario!r} requires a time split")
        inputs_full, targets, candidates = _time_split_frames(split)
        mask_seen = True
    else:
        raise DataError(f"unknown scenario {scenario!r}")

    in_nnz = inputs_full.row_nnz()
    tgt_nnz = targets.row_nnz()
    eligible = np.flatnonzero((in_nnz > 0) & (tgt_nnz > 0))
    if eligible.size == 0:
        raise DataError("no users with both inputs and targets")

    x_in = inputs_full.take_rows(eligible)
    scores = np.asarray(scorer(x_in, candidates), dtype=np.float64)
    if scores.shape != (eligible.size, candidates.size):
        raise DataError("scorer returned a wrongly shaped matrix")

    if mask_seen:
        seen = gather_columns(x_in, candidates)
        rows = np.repeat(np.arange(seen.n_rows), np.diff(seen.indptr))
        scores[rows, seen.indices] = -np.inf

    # Rank once at the largest depth needed, then read off prefixes.
    depth = max(max(k_list), ndcg_k)
    per_metric = {f"recall@{k}": [] for k in k_list}
    per_metric[f"ndcg@{ndcg_k}"] = []
    tgt_small = gather_columns(targets.take_rows(eligible), candidates)
    for u in range(eligible.size):
        row = scores[u]
        order = np.argsort(-row, kind="stable")
        order = order[np.isfinite(row[order])][:depth]
        relevant = set(tgt_small.row(u)[0].tolist())
        for k in k_list:
            per_metric[f"recall@{k}"].append(
                recall_at_k(order, relevant, k, denominator=recall_denominator))
        per_metric[f"ndcg@{ndcg_k}"].append(ndcg_at_k(order, relevant, ndcg_k))

    metrics = {}
    for name, vals in per_metric.items():
        arr = np.asarray(vals)
        se = bootstrap_se(arr, b=b, seed=seed) if arr.size >= 2 else 0.0
        metrics[name] = MetricValue(float(arr.mean()), se, int(arr.size))
    return EvalReport(scenario, metrics, int(eligible.size),
                      config=dict(config or {}), model_id=model_id)


def _item_split_frames(x: InteractionMatrix, split: ItemSplit):
    inputs = zero_columns(x.csr, split.test_items)
    targets = zero_columns(x.csr, split.train_items)
    return inputs, targets, np.asarray(split.test_items, dtype=np.int64)


def _time_split_frames(split: TimeSplit):
    candidates = np.arange(split.train.n_items, dtype=np.int64)
    return split.train.csr, split.test.csr, candidates
