"""Ingestion of raw interaction/text data and the shared file formats.

Binary container format (used for embedding exports, model checkpoints and
encoder parameters):

    bytes 0:8    magic ``b"BEEKBIN1"``
    bytes 8:16   little-endian uint64 header length H
    bytes 16:16+H  UTF-8 JSON header:
                   {"version": 1,
                    "arrays": [{"name", "rows", "cols", "dtype"}...],
                    "meta": {...}}
    remainder    array payloads, concatenated in header order, row-major,
                 little-endian ("<f8" or "<f4")

Import validates the payload length against the header and re-checks item
IDs when the caller supplies an expected catalog.
"""

import csv
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from beekit import elsa
from beekit.encoders import (BowLinear, BowMlp, EmbeddingTable, FeatureMatrix,
                             FrozenPlusHead, ItemCorpus, featurize)
from beekit.errors import CorruptFileError, DataError, IngestError
from beekit.recsys import EmbeddingMatrix
from beekit.sparse import InteractionMatrix

log = logging.getLogger(__name__)

_MAGIC = b"BEEKBIN1"


@dataclass
class RawInteractions:
    users: list
    items: list
    ratings: np.ndarray | None
    timestamps: np.ndarray | None
    n_malformed: int = 0

    def __len__(self) -> int:
        return len(self.users)


@dataclass
class DatasetBundle:
    x: InteractionMatrix
    corpus: ItemCorpus | None = None
    meta: dict = field(default_factory=dict)


_DEFAULT_COLUMNS = {"user": "user_id", "item": "item_id",
                    "rating": "rating", "timestamp": "timestamp"}


def load_interactions(path, fmt: str = "csv", columns: dict = None,
                      malformed_threshold: float = 0.01) -> RawInteractions:
    """Streamed parse of a delimited interactions file.

    Malformed lines (missing user/item, unparseable rating or timestamp)
    are counted and reported; exceeding the threshold fraction aborts.
    """
    cols = dict(_DEFAULT_COLUMNS)
    cols.update(columns or {})
    delimiter = {"csv": ",", "tsv": "\t"}.get(fmt)
    if delimiter is None:
        raise IngestError(f"unknown interactions format {fmt!r}")

    users, items, ratings, timestamps = [], [], [], []
    have_rating = have_ts = None
    n_malformed = n_total = 0
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle, delimiter=delimiter)
        if reader.fieldnames is None:
            raise IngestError(f"{path} is empty")
        for need in (cols["user"], cols["item"]):
            if need not in reader.fieldnames:
                raise IngestError(f"column {need!r} not found in {path}")
        if have_rating is None:
            have_rating = cols["rating"] in reader.fieldnames
            have_ts = cols["timestamp"] in reader.fieldnames
        for row in reader:
            n_total += 1
            user = (row.get(cols["user"]) or "").strip()
            item = (row.get(cols["item"]) or "").strip()
            if not user or not item:
                n_malformed += 1
                continue
            rating = ts = None
            try:
                if have_rating:
                    rating = float(row.get(cols["rating"]) or "")
                    if not np.isfinite(rating):
                        raise ValueError
                if have_ts:
                    ts = int(float(row.get(cols["timestamp"]) or ""))
            except (TypeError, ValueError):
                n_malformed += 1
                continue
            users.append(user)
            items.append(item)
            if have_rating:
                ratings.append(rating)
            if have_ts:
                timestamps.append(ts)

    if n_total == 0:
        log.warning("%s contains a header but no records", path)
    if n_total and n_malformed / n_total > malformed_threshold:
        raise IngestError(
            f"{n_malformed}/{n_total} malformed lines exceeds the "
            f"{malformed_threshold:.0%} threshold")
    if n_malformed:
        log.warning("%s: skipped %d malformed of %d lines", path, n_malformed, n_total)
    return RawInteractions(
        users, items,
        np.asarray(ratings) if have_rating else None,
        np.asarray(timestamps, dtype=np.int64) if have_ts else None,
        n_malformed)


def implicitize(raw: RawInteractions, rating_threshold: float = 4.0,
                min_user_interactions: int = 5) -> DatasetBundle:
    """Explicit-to-implicit conversion with user-level filtering.

    Keeps interactions at or above the rating threshold, collapses
    duplicate (user, item) pairs keeping the earliest timestamp, then
    iteratively drops users below the interaction minimum and items left
    with no interactions, rebuilding contiguous index maps.
    """
    if rating_threshold is not None and raw.ratings is None:
        raise IngestError("rating threshold requires a rating column")
    users = np.asarray(raw.users, dtype=object)
    items = np.asarray(raw.items, dtype=object)
    ts = raw.timestamps
    if rating_threshold is not None:
        keep = raw.ratings >= rating_threshold
        users, items = users[keep], items[keep]
        if ts is not None:
            ts = ts[keep]
    if users.size == 0:
        raise IngestError("no interactions survive the rating threshold")

    all_users, user_idx = np.unique(users, return_inverse=True)
    all_items, item_idx = np.unique(items, return_inverse=True)

    # Collapse duplicate (user, item) pairs, keeping the earliest timestamp,
    # before counting interactions for the user minimum.
    pair_key = user_idx * np.int64(all_items.size) + item_idx
    order = np.lexsort((ts, pair_key)) if ts is not None \
        else np.argsort(pair_key, kind="stable")
    pair_key = pair_key[order]
    first = np.concatenate([[True], pair_key[1:] != pair_key[:-1]])
    order = order[first]
    user_idx, item_idx = user_idx[order], item_idx[order]
    if ts is not None:
        ts = ts[order]

    dropped_users = 0
    while True:
        user_counts = np.bincount(user_idx, minlength=all_users.size)
        bad = (user_counts > 0) & (user_counts < min_user_interactions)
        if not bad.any():
            break
        dropped_users += int(bad.sum())
        keep = ~bad[user_idx]
        user_idx, item_idx = user_idx[keep], item_idx[keep]
        if ts is not None:
            ts = ts[keep]
        if user_idx.size == 0:
            raise IngestError("no users survive the interaction minimum")

    kept_users = np.flatnonzero(np.bincount(user_idx, minlength=all_users.size) > 0)
    kept_items = np.flatnonzero(np.bincount(item_idx, minlength=all_items.size) > 0)
    user_map = np.zeros(all_users.size, dtype=np.int64)
    user_map[kept_users] = np.arange(kept_users.size)
    item_map = np.zeros(all_items.size, dtype=np.int64)
    item_map[kept_items] = np.arange(kept_items.size)
    x = InteractionMatrix.from_pairs(
        user_map[user_idx], item_map[item_idx], kept_users.size, kept_items.size,
        user_ids=all_users[kept_users].tolist(),
        item_ids=all_items[kept_items].tolist(),
        timestamps=ts)
    meta = {
        "rating_threshold": rating_threshold,
        "min_user_interactions": min_user_interactions,
        "n_users": x.n_users, "n_items": x.n_items, "n_interactions": x.nnz,
        "density": x.density(),
        "dropped_users": dropped_users,
        "malformed_lines": raw.n_malformed,
    }
    return DatasetBundle(x, None, meta)


def load_texts(path, fmt: str = "csv", id_field: str = "item_id",
               text_field: str = "description") -> dict:
    """External item ID -> description text."""
    texts = {}
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    with handle:
        if fmt == "jsonl":
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                texts[str(rec[id_field])] = str(rec.get(text_field, ""))
        elif fmt == "csv":
            reader = csv.DictReader(handle)
            if reader.fieldnames is None or id_field not in reader.fieldnames:
                raise IngestError(f"column {id_field!r} not found in {path}")
            for row in reader:
                texts[str(row[id_field])] = str(row.get(text_field) or "")
        else:
            raise IngestError(f"unknown texts format {fmt!r}")
    return texts


def join_texts(bundle: DatasetBundle, texts: dict,
               min_user_interactions: int = 5) -> DatasetBundle:
    """Attach item texts; drop items without one and re-filter users.

    Filtering runs to a fixpoint so the user-interaction minimum holds in
    the final data.
    """
    x = bundle.x
    described = [i for i, ext in enumerate(x.item_ids) if texts.get(str(ext), "").strip()]
    if not described:
        raise IngestError("no items have descriptions")

    rows = np.repeat(np.arange(x.n_users), np.diff(x.csr.indptr))
    cols = x.csr.indices
    ts = x.timestamps

    item_keep_mask = np.zeros(x.n_items, dtype=bool)
    item_keep_mask[described] = True
    keep = item_keep_mask[cols]
    rows, cols = rows[keep], cols[keep]
    if ts is not None:
        ts = ts[keep]

    while True:
        user_counts = np.bincount(rows, minlength=x.n_users)
        bad_users = (user_counts > 0) & (user_counts < min_user_interactions)
        if not bad_users.any():
            break
        keep = ~bad_users[rows]
        rows, cols = rows[keep], cols[keep]
        if ts is not None:
            ts = ts[keep]
    if rows.size == 0:
        raise IngestError("no interactions survive the text join")

    kept_users = np.flatnonzero(np.bincount(rows, minlength=x.n_users) > 0)
    kept_items = np.flatnonzero(np.bincount(cols, minlength=x.n_items) > 0)
    user_map = np.full(x.n_users, -1, dtype=np.int64)
    user_map[kept_users] = np.arange(kept_users.size)
    item_map = np.full(x.n_items, -1, dtype=np.int64)
    item_map[kept_items] = np.arange(kept_items.size)

    user_ids = [x.user_ids[i] for i in kept_users]
    item_ids = [x.item_ids[i] for i in kept_items]
    new_x = InteractionMatrix.from_pairs(
        user_map[rows], item_map[cols], kept_users.size, kept_items.size,
        user_ids=user_ids, item_ids=item_ids, timestamps=ts)
    corpus = ItemCorpus(item_ids, [texts[str(ext)] for ext in item_ids])
    meta = dict(bundle.meta)
    meta.update({
        "n_users": new_x.n_users, "n_items": new_x.n_items,
        "n_interactions": new_x.nnz, "density": new_x.density(),
        "items_without_text": x.n_items - len(described),
    })
    return DatasetBundle(new_x, corpus, meta)


# ---------------------------------------------------------------------------
# Binary container
# ---------------------------------------------------------------------------

def write_container(path, arrays: dict, meta: dict, precision: str = "f8") -> None:
    """Write named float arrays plus a JSON metadata document."""
    if precision not in ("f8", "f4"):
        raise DataError(f"unknown precision {precision!r}")
    dtype = "<" + precision
    entries, payloads = [], []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        payload = arr.astype(dtype, copy=False)
        entries.append({"name": name, "rows": int(arr.shape[0]),
                        "cols": int(arr.shape[1]), "dtype": dtype})
        payloads.append(payload.tobytes(order="C"))
    header = json.dumps({"version": 1, "arrays": entries, "meta": meta},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)


def read_container(path) -> tuple:
    """Read back (arrays, meta); validates magic, header and payload length."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CorruptFileError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 16 or blob[:8] != _MAGIC:
        raise CorruptFileError(f"{path}: bad magic, not a container file")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if 16 + header_len > len(blob):
        raise CorruptFileError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: corrupt header ({exc})") from exc

    arrays = {}
    offset = 16 + header_len
    for entry in header.get("arrays", []):
        dtype = np.dtype(entry["dtype"])
        count = entry["rows"] * entry["cols"]
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(blob):
            raise CorruptFileError(f"{path}: truncated payload for {entry['name']!r}")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(entry["rows"], entry["cols"]).astype(np.float64)
        offset += nbytes
    if offset != len(blob):
        raise CorruptFileError(f"{path}: {len(blob) - offset} trailing bytes")
    return arrays, header.get("meta", {})


def export_embeddings(emb: EmbeddingMatrix, path, precision: str = "f8") -> None:
    meta = {"kind": "embeddings", "n_rows": emb.n_items, "n_cols": emb.d,
            "item_ids": [str(i) for i in emb.item_ids],
            "normalized": bool(emb.normalized)}
    write_container(path, {"embeddings": emb.a}, meta, precision=precision)


def import_embeddings(path, expect_item_ids=None) -> EmbeddingMatrix:
    arrays, meta = read_container(path)
    if meta.get("kind") != "embeddings" or "embeddings" not in arrays:
        raise CorruptFileError(f"{path} is not an embedding file")
    item_ids = meta["item_ids"]
    a = arrays["embeddings"]
    if len(item_ids) != a.shape[0]:
        raise CorruptFileError(f"{path}: item ID count does not match rows")
    if expect_item_ids is not None and [str(i) for i in expect_item_ids] != item_ids:
        raise DataError("embedding file item IDs do not match this catalog")
    return EmbeddingMatrix(a, item_ids, normalized=bool(meta.get("normalized")))


def save_elsa(model: elsa.ElsaModel, path) -> None:
    meta = {"kind": "elsa", "d": model.d, "n_items": model.n_items,
            "normalize_a": bool(model.normalize_a),
            "item_ids": [str(i) for i in (model.item_ids or range(model.n_items))]}
    write_container(path, {"a": model.a}, meta)


def load_elsa(path) -> elsa.ElsaModel:
    arrays, meta = read_container(path)
    if meta.get("kind") != "elsa":
        raise CorruptFileError(f"{path} is not a saved item-matrix model")
    return elsa.ElsaModel(arrays["a"], normalize_a=bool(meta["normalize_a"]),
                          item_ids=list(meta["item_ids"]))


def save_encoder(enc, path, item_ids=None, extra_meta=None) -> None:
    """Checkpoint: encoder config + flat parameters (+ frozen base rows)."""
    meta = {"kind": "encoder", "encoder": enc.config()}
    if item_ids is not None:
        meta["item_ids"] = [str(i) for i in item_ids]
    if extra_meta:
        meta.update(extra_meta)
    arrays = {"theta": enc.theta}
    if isinstance(enc, FrozenPlusHead):
        arrays["base"] = enc.base
    write_container(path, arrays, meta)


def load_encoder(path, corpus: ItemCorpus = None, features: FeatureMatrix = None):
    """Rebuild an encoder from a checkpoint.

    Bag-of-words kinds need a corpus (or a prebuilt feature matrix) to
    encode against; it may be a different catalog than the training one,
    which is what makes cold-start/zero-shot encoding work.
    """
    arrays, meta = read_container(path)
    if meta.get("kind") != "encoder":
        raise CorruptFileError(f"{path} is not an encoder checkpoint")
    cfg = meta["encoder"]
    kind = cfg["kind"]
    if kind == "table":
        enc = EmbeddingTable(cfg["n_items"], cfg["d"])
    elif kind in ("bow-linear", "bow-mlp"):
        if features is None:
            if corpus is None:
                raise DataError(f"{kind} checkpoints need a corpus to encode")
            features = featurize(corpus, cfg["hash_bits"])
        if features.hash_bits != cfg["hash_bits"]:
            raise DataError("feature hash_bits do not match the checkpoint")
        if kind == "bow-linear":
            enc = BowLinear(features, cfg["d"], bias=cfg["bias"])
        else:
            enc = BowMlp(features, cfg["d"], hidden=cfg["hidden"], bias=cfg["bias"])
    elif kind == "frozen-head":
        enc = FrozenPlusHead(arrays["base"], cfg["d"], bias=cfg["bias"])
    else:
        raise CorruptFileError(f"unknown encoder kind {kind!r}")
    enc.set_theta(arrays["theta"].reshape(-1))
    return enc, meta


# ---------------------------------------------------------------------------
# Bundle persistence
# ---------------------------------------------------------------------------

def save_bundle(bundle: DatasetBundle, out_dir) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    x = bundle.x
    np.savez(os.path.join(out_dir, "interactions.npz"),
             indptr=x.csr.indptr, indices=x.csr.indices,
             n_users=x.n_users, n_items=x.n_items,
             timestamps=x.timestamps if x.timestamps is not None
             else np.zeros(0, dtype=np.int64),
             has_timestamps=x.timestamps is not None)
    with open(os.path.join(out_dir, "ids.json"), "w", encoding="utf-8") as fh:
        json.dump({"user_ids": [str(u) for u in x.user_ids],
                   "item_ids": [str(i) for i in x.item_ids]}, fh)
    if bundle.corpus is not None:
        with open(os.path.join(out_dir, "corpus.jsonl"), "w", encoding="utf-8") as fh:
            for ext, text in zip(bundle.corpus.item_ids, bundle.corpus.texts):
                fh.write(json.dumps({"item_id": str(ext), "description": text}) + "\n")
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(bundle.meta, fh, indent=2, sort_keys=True)


def load_bundle(in_dir) -> DatasetBundle:
    import os

    try:
        npz = np.load(os.path.join(in_dir, "interactions.npz"))
        with open(os.path.join(in_dir, "ids.json"), encoding="utf-8") as fh:
            ids = json.load(fh)
    except (OSError, ValueError) as exc:
        raise CorruptFileError(f"cannot load bundle from {in_dir}: {exc}") from exc
    from beekit.sparse import CsrMatrix

    n_users, n_items = int(npz["n_users"]), int(npz["n_items"])
    indptr = npz["indptr"]
    indices = npz["indices"]
    csr = CsrMatrix(n_users, n_items, indptr.astype(np.int64),
                    indices.astype(np.int64), np.ones(indices.size))
    ts = npz["timestamps"] if bool(npz["has_timestamps"]) else None
    x = InteractionMatrix(csr, ids["user_ids"], ids["item_ids"], ts)

    corpus = None
    corpus_path = os.path.join(in_dir, "corpus.jsonl")
    if os.path.exists(corpus_path):
        ext_ids, texts = [], []
        with open(corpus_path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                ext_ids.append(rec["item_id"])
                texts.append(rec["description"])
        if ext_ids != [str(i) for i in x.item_ids]:
            raise CorruptFileError("bundle corpus is not aligned with the matrix")
        corpus = ItemCorpus(ext_ids, texts)
    meta = {}
    meta_path = os.path.join(in_dir, "meta.json")
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    return DatasetBundle(x, corpus, meta)
