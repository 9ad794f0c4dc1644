"""Memory-bounded training loop pushing decoder gradients through an encoder.

Each step touches at most ``m`` items regardless of catalog size:

1. the items interacted with by the user batch are padded with uniformly
   random extra items (without replacement) up to exactly ``m``;
2. the encoder embeds those items in chunks with no gradient tracking;
3. the decoder loss and its gradient with respect to the assembled
   embedding block (the *checkpoint*) are computed once;
4. the items are re-encoded chunk by chunk and parameter gradients are
   accumulated against the matching checkpoint slice, followed by a single
   optimizer update.

Per-step cost therefore depends on (batch_users, m, d, encoder size) only,
not on the total number of items.

Seed streams (shared with the direct item-matrix trainer so that the
embedding-table reduction is exact): ``[seed, 0]`` parameter init,
``[seed, 1]`` user shuffling, ``[seed, 2]`` negative sampling.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from beekit import elsa
from beekit.encoders import ItemEncoder
from beekit.errors import SamplerError, TrainingError
from beekit.optim import Adam
from beekit.sparse import CsrMatrix, InteractionMatrix


@dataclass
class SamplerConfig:
    m: int
    batch_users: int
    seed: int = 0

    def validate(self, n_items: int) -> None:
        if not 1 <= self.m <= n_items:
            raise SamplerError(f"m must be in [1, {n_items}], got {self.m}")
        if self.batch_users < 1:
            raise SamplerError("batch_users must be >= 1")


@dataclass
class SampledBatch:
    user_indices: np.ndarray
    item_indices: np.ndarray        # length exactly m, unique
    x_sub: CsrMatrix                # batch_users x m

    @property
    def m(self) -> int:
        return self.item_indices.size


def sample_batch(x: InteractionMatrix, user_indices, m: int, rng) -> SampledBatch:
    """Batch items plus uniform negatives, with the restricted user rows.

    The batch's own items occupy the first positions (sorted), negatives
    follow in draw order. Columns beyond the batch items are all-zero.
    """
    user_indices = np.asarray(user_indices, dtype=np.int64)
    rows = x.csr.take_rows(user_indices)
    batch_items = np.unique(rows.indices)
    if batch_items.size > m:
        raise SamplerError(
            f"user batch touches {batch_items.size} items but m={m}; "
            "reduce batch_users or increase m")

    negatives = _draw_negatives(x.n_items, batch_items, m - batch_items.size, rng)
    item_indices = np.concatenate([batch_items, negatives])

    # Batch rows only reference batch_items, so remapping is a pure gather.
    position = np.empty(x.n_items, dtype=np.int64)
    position[batch_items] = np.arange(batch_items.size)
    x_sub = CsrMatrix(rows.n_rows, m, rows.indptr, position[rows.indices],
                      rows.data)
    return SampledBatch(user_indices, item_indices, x_sub)


def _draw_negatives(n_items: int, batch_items: np.ndarray, k: int, rng) -> np.ndarray:
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    complement = n_items - batch_items.size
    if k * 2 >= complement:
        # Dense regime: permute the explicit complement.
        pool = np.setdiff1d(np.arange(n_items, dtype=np.int64), batch_items,
                            assume_unique=True)
        return pool[rng.permutation(pool.size)[:k]]
    # Sparse regime: rejection sampling, expected O(k) draws since k << catalog.
    taken = set(batch_items.tolist())
    out = np.empty(k, dtype=np.int64)
    filled = 0
    while filled < k:
        draws = rng.integers(0, n_items, size=2 * (k - filled))
        for cand in draws:
            if cand not in taken:
                taken.add(int(cand))
                out[filled] = cand
                filled += 1
                if filled == k:
                    break
    return out


class BatchSampler:
    """Deterministic epoch iterator over user batches with negative padding."""

    def __init__(self, x: InteractionMatrix, cfg: SamplerConfig):
        cfg.validate(x.n_items)
        self.x = x
        self.cfg = cfg
        self.rng_users = np.random.default_rng([cfg.seed, 1])
        self.rng_negatives = np.random.default_rng([cfg.seed, 2])

    def epoch(self):
        perm = self.rng_users.permutation(self.x.n_users)
        for start in range(0, self.x.n_users, self.cfg.batch_users):
            users = perm[start:start + self.cfg.batch_users]
            yield sample_batch(self.x, users, self.cfg.m, self.rng_negatives)


def step_gradient(enc: ItemEncoder, batch: SampledBatch, item_chunk_size: int,
                  normalize: bool = True) -> tuple:
    """Loss and accumulated parameter gradient for one step (no update).

    Phase 1 encodes in chunks, phase 2 computes the decoder gradient
    (checkpoint), phase 3 re-encodes chunk by chunk and accumulates
    d<checkpoint, encode>/d(theta).
    """
    m = batch.m
    chunk = m if item_chunk_size is None or item_chunk_size <= 0 else item_chunk_size

    a_sub = np.empty((m, enc.dim))
    for s in range(0, m, chunk):
        a_sub[s:s + chunk] = enc.encode(batch.item_indices[s:s + chunk])

    loss_val, checkpoint = elsa.loss_and_grad(batch.x_sub, a_sub, normalize=normalize)
    if not np.isfinite(loss_val) or not np.all(np.isfinite(checkpoint)):
        raise TrainingError(
            f"non-finite loss or checkpoint gradient (loss={loss_val!r})")

    grad = np.zeros(enc.n_params)
    for s in range(0, m, chunk):
        enc.encode_backward(batch.item_indices[s:s + chunk],
                            checkpoint[s:s + chunk], out=grad)
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite parameter gradient")
    return loss_val, grad


def train_step(enc: ItemEncoder, batch: SampledBatch, opt: Adam,
               item_chunk_size: int = 0, normalize: bool = True) -> float:
    """One optimizer update; returns the pre-update batch loss."""
    loss_val, grad = step_gradient(enc, batch, item_chunk_size, normalize=normalize)
    opt.step(enc.theta, grad)
    return loss_val


@dataclass
class StepRecord:
    step: int
    epoch: int
    loss: float
    seconds: float


@dataclass
class TrainReport:
    config: dict
    steps: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)

    def loss_log_lines(self):
        """Deterministic log: wall-clock lives only in the summary."""
        return [f"{r.step}\t{r.epoch}\t{r.loss!r}" for r in self.steps]

    def summary(self) -> dict:
        times = [r.seconds for r in self.steps]
        return {
            "config": self.config,
            "n_steps": len(self.steps),
            "epoch_losses": self.epoch_losses,
            "final_loss": self.steps[-1].loss if self.steps else None,
            "total_seconds": float(np.sum(times)) if times else 0.0,
            "median_step_seconds": float(np.median(times)) if times else 0.0,
        }


def train(enc: ItemEncoder, x: InteractionMatrix, corpus=None,
          cfg: SamplerConfig = None, epochs: int = 1, lr: float = 1e-3,
          item_chunk_size: int = 0, seed: int = None,
          normalize: bool = True) -> tuple:
    """Run ``epochs`` passes of checkpointed steps; returns (encoder, report)."""
    if cfg is None:
        raise SamplerError("a SamplerConfig is required")
    if seed is not None and seed != cfg.seed:
        cfg = SamplerConfig(cfg.m, cfg.batch_users, seed)
    if epochs < 1:
        raise TrainingError("epochs must be >= 1")
    if corpus is not None and len(corpus) != x.n_items:
        raise TrainingError("corpus is not aligned with the interaction matrix")

    sampler = BatchSampler(x, cfg)
    opt = Adam(enc.n_params, lr=lr)
    report = TrainReport(config={
        "m": cfg.m, "batch_users": cfg.batch_users, "seed": cfg.seed,
        "epochs": epochs, "lr": lr, "item_chunk_size": item_chunk_size,
        "normalize": normalize, "encoder": enc.config(),
    })
    step = 0
    for epoch in range(epochs):
        losses = []
        for batch in sampler.epoch():
            t0 = time.perf_counter()
            loss_val = train_step(enc, batch, opt, item_chunk_size, normalize=normalize)
            report.steps.append(StepRecord(step, epoch, loss_val,
                                           time.perf_counter() - t0))
            losses.append(loss_val)
            step += 1
        report.epoch_losses.append(float(np.mean(losses)))
    return enc, report
