"""Reference database: cached embeddings, pair-error tables, and exact kNN.

Built offline once per trained model set.  For every window center the
builder resolves the window's endpoint ranks to populated ranks, scores
candidate reference pairs by their mean absolute relative-rank error over a
pool of nearby training instances, and stores the best and worst pairs so
inference is a table lookup.  Embeddings are cached per model and the file
records each model's parameter digest, so a stale database refuses to load.
"""

from __future__ import annotations

import enum
import json
import os
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from rankwin.data import Dataset
from rankwin.errors import (ConfigError, DigestMismatchError, SelectionError,
                            ShapeError)
from rankwin.nets import RelativeRegressor, model_digest
from rankwin.partition import RankGroup
from rankwin.windows import RankRange, RankScale, ScaleKind, SearchWindow, make_window

__all__ = [
    "SelectionKind",
    "SelectionScheme",
    "WindowEntry",
    "ReferenceDatabase",
    "gamma_error",
    "build_database",
    "select_references",
    "knn_ranks",
    "save_database",
    "load_database",
    "IDENTITY_DIGEST",
    "TAG_GLOBAL",
    "TAG_RAW",
    "local_tag",
]

DB_VERSION = 1
TAG_GLOBAL = "global"
TAG_RAW = "raw"
IDENTITY_DIGEST = "identity"

_STREAM_POOL = 11
_STREAM_PAIRS = 12


def local_tag(group_index: int) -> str:
    return f"local{group_index}"


def _tag_key(tag: str) -> int:
    # stable non-negative int for rng seeding
    return zlib.crc32(tag.encode())


class SelectionKind(enum.Enum):
    MIN_ERROR = "min"
    MAX_ERROR = "max"
    RANDOM = "random"


@dataclass(frozen=True)
class SelectionScheme:
    """How inference picks a reference pair for a window."""

    kind: SelectionKind
    seed: int = 0

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"scheme seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class WindowEntry:
    """Precomputed pair choices for one window center of one model."""

    center: int
    low: int
    high: int
    low_rank: int
    high_rank: int
    min_pair: tuple[int, int]
    min_gamma: float
    max_pair: tuple[int, int]
    max_gamma: float
    n_pairs_scored: int
    pool_size: int


@dataclass
class ReferenceDatabase:
    """Training instances plus per-model embeddings and window tables."""

    ids: tuple[str, ...]
    ranks: np.ndarray
    scale: RankScale
    domain: RankRange
    alpha: int
    features: dict[str, np.ndarray]
    digests: dict[str, str]
    tables: dict[str, dict[int, WindowEntry]]
    pool_cap: int | None
    pair_cap: int | None
    seed: int

    def __post_init__(self) -> None:
        # positions sorted by id give deterministic tie-breaks everywhere
        order = np.lexsort((np.array(self.ids),))
        inverse = np.empty(len(order), dtype=np.int64)
        inverse[order] = np.arange(len(order))
        self._id_rank_order = inverse
        index: dict[int, list[int]] = {}
        for pos in order:
            index.setdefault(int(self.ranks[pos]), []).append(int(pos))
        self._rank_index = {r: np.array(p) for r, p in index.items()}

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def tags(self) -> tuple[str, ...]:
        return tuple(self.features)

    def instances_at(self, rank: int) -> np.ndarray:
        """Positions with the given rank, ordered by instance id."""
        positions = self._rank_index.get(int(rank))
        if positions is None:
            raise SelectionError(f"no instances at rank {rank}")
        return positions

    def populated_ranks(self) -> np.ndarray:
        return np.array(sorted(self._rank_index), dtype=np.int64)


def _axis(values: np.ndarray, scale: RankScale) -> np.ndarray:
    return np.log(values) if scale.is_geometric else np.asarray(values, dtype=np.float64)


def _true_rho(pool_ranks: np.ndarray, low_rank: int, high_rank: int,
              scale: RankScale) -> np.ndarray:
    a1, a2 = _axis(np.array([low_rank]), scale)[0], _axis(np.array([high_rank]), scale)[0]
    mid, half = (a1 + a2) / 2.0, (a2 - a1) / 2.0
    return np.clip((_axis(pool_ranks, scale) - mid) / half, -1.0, 1.0)


def gamma_error(model: RelativeRegressor, encoded: np.ndarray, ranks: np.ndarray,
                y1: int, y2: int, pool, *, alpha: int, scale: RankScale) -> float:
    """Mean |predicted - true| relative rank of one pair over its local pool.

    The pool is filtered to ranks within alpha of the pair's span, and the
    references never score themselves.  Empty pool raises SelectionError.
    """
    r1, r2 = int(ranks[y1]), int(ranks[y2])
    if r1 >= r2:
        raise SelectionError(f"pair ranks must satisfy low < high, got ({r1}, {r2})")
    pool = np.asarray(pool, dtype=np.int64)
    in_span = (ranks[pool] >= r1 - alpha) & (ranks[pool] <= r2 + alpha)
    pool = pool[in_span & (pool != y1) & (pool != y2)]
    if len(pool) == 0:
        raise SelectionError(f"empty validation pool for pair ranks ({r1}, {r2})")
    n = len(pool)
    rho_hat = model.regress(encoded[pool],
                            np.broadcast_to(encoded[y1], (n, encoded.shape[1])),
                            np.broadcast_to(encoded[y2], (n, encoded.shape[1])))
    rho_true = _true_rho(ranks[pool], r1, r2, scale)
    return float(np.mean(np.abs(np.atleast_1d(rho_hat) - rho_true)))


def _nearest_populated(populated: np.ndarray, value: int, prefer_lower: bool) -> int:
    i = int(np.searchsorted(populated, value))
    candidates = []
    if i < len(populated):
        candidates.append(int(populated[i]))
    if i > 0:
        candidates.append(int(populated[i - 1]))
    best = None
    for c in candidates:
        if best is None or abs(c - value) < abs(best - value):
            best = c
        elif abs(c - value) == abs(best - value):
            best = min(best, c) if prefer_lower else max(best, c)
    return best


def _resolve_endpoints(window: SearchWindow, populated: np.ndarray) -> tuple[int, int] | None:
    """Populated ranks closest to the window's ends, kept strictly ordered."""
    low = _nearest_populated(populated, window.low, prefer_lower=True)
    high = _nearest_populated(populated, window.high, prefer_lower=False)
    if low < high:
        return low, high
    below = populated[populated < high]
    if len(below):
        return int(below.max()), high
    above = populated[populated > low]
    if len(above):
        return low, int(above.min())
    return None


def _window_entry(model: RelativeRegressor, encoded: np.ndarray, db_ranks: np.ndarray,
                  rank_index: dict[int, np.ndarray], window: SearchWindow,
                  scale: RankScale, alpha: int, pool_cap: int | None,
                  pair_cap: int | None, seed: int, tag_key: int) -> WindowEntry | None:
    populated = np.array(sorted(rank_index), dtype=np.int64)
    resolved = _resolve_endpoints(window, populated)
    if resolved is None:
        return None
    low_rank, high_rank = resolved
    lows = rank_index[low_rank]
    highs = rank_index[high_rank]
    pool = np.nonzero((db_ranks >= low_rank - alpha) & (db_ranks <= high_rank + alpha))[0]
    if pool_cap is not None and len(pool) > pool_cap:
        rng = np.random.default_rng([seed, _STREAM_POOL, tag_key, window.center])
        pool = np.sort(rng.choice(pool, size=pool_cap, replace=False))
    total_pairs = len(lows) * len(highs)
    if pair_cap is not None and total_pairs > pair_cap:
        rng = np.random.default_rng([seed, _STREAM_PAIRS, tag_key, window.center])
        flat = np.sort(rng.choice(total_pairs, size=pair_cap, replace=False))
    else:
        flat = np.arange(total_pairs)
    yi = lows[flat // len(highs)]
    yj = highs[flat % len(highs)]
    rho_hat = model.regress_grid(encoded[pool], encoded[yi], encoded[yj])
    rho_true = _true_rho(db_ranks[pool], low_rank, high_rank, scale)
    err = np.abs(rho_hat - rho_true[None, :])
    include = (pool[None, :] != yi[:, None]) & (pool[None, :] != yj[:, None])
    counts = include.sum(axis=1)
    with np.errstate(invalid="ignore"):
        gammas = np.where(counts > 0, (err * include).sum(axis=1) / np.maximum(counts, 1), np.nan)
    if np.all(np.isnan(gammas)):
        return None
    best = int(np.nanargmin(gammas))
    worst = int(np.nanargmax(gammas))
    return WindowEntry(
        center=window.center, low=window.low, high=window.high,
        low_rank=low_rank, high_rank=high_rank,
        min_pair=(int(yi[best]), int(yj[best])), min_gamma=float(gammas[best]),
        max_pair=(int(yi[worst]), int(yj[worst])), max_gamma=float(gammas[worst]),
        n_pairs_scored=int(len(flat)), pool_size=int(len(pool)))


def build_database(dataset: Dataset, models: dict[str, RelativeRegressor | None],
                   scale: RankScale, domain: RankRange, *,
                   groups: list[RankGroup] | None = None, alpha: int = 6,
                   pool_cap: int | None = 256, pair_cap: int | None = 64,
                   seed: int = 0) -> ReferenceDatabase:
    """Embed the dataset under every model and precompute its window tables.

    ``models`` maps tag to model; a None model stores raw features under the
    tag with no table (kNN only).  Local tags ``local{i}`` take their window
    geometry from ``groups[i]``.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot build a reference database from an empty dataset")
    if seed < 0:
        raise ConfigError(f"seed must be >= 0, got {seed}")
    features: dict[str, np.ndarray] = {}
    digests: dict[str, str] = {}
    tables: dict[str, dict[int, WindowEntry]] = {}
    db = ReferenceDatabase(
        ids=tuple(dataset.ids), ranks=dataset.ranks.copy(), scale=scale,
        domain=domain, alpha=alpha, features=features, digests=digests,
        tables=tables, pool_cap=pool_cap, pair_cap=pair_cap, seed=seed)
    for tag, model in models.items():
        if model is None:
            features[tag] = dataset.features.copy()
            digests[tag] = IDENTITY_DIGEST
            continue
        if model.input_dim != dataset.feature_dim:
            raise ShapeError(
                f"model {tag!r} expects {model.input_dim} features, dataset has {dataset.feature_dim}")
        encoded = model.encode(dataset.features)
        features[tag] = encoded
        digests[tag] = model_digest(model)
        if tag.startswith("local"):
            if groups is None:
                raise ConfigError(f"tag {tag!r} needs its group geometry")
            group = groups[int(tag[len("local"):])]
            centers = range(group.theta_min, group.theta_max + 1)
            window_domain = group.extended_range
        else:
            centers = iter(domain)
            window_domain = domain
        table: dict[int, WindowEntry] = {}
        tag_key = _tag_key(tag)
        for center in centers:
            window = make_window(center, scale, window_domain)
            entry = _window_entry(model, encoded, db.ranks, db._rank_index, window,
                                  scale, alpha, pool_cap, pair_cap, seed, tag_key)
            if entry is not None:
                table[center] = entry
        if not table:
            raise ConfigError(f"no usable windows for model {tag!r}; dataset too sparse")
        tables[tag] = table
    return db


def select_references(db: ReferenceDatabase, window: SearchWindow,
                      scheme: SelectionScheme, tag: str = TAG_GLOBAL) -> tuple[int, int]:
    """Pick the reference pair for a window; returns positions into the db."""
    if tag not in db.tables:
        raise ConfigError(f"database has no window table for tag {tag!r}")
    entry = db.tables[tag].get(window.center)
    if entry is None:
        raise SelectionError(f"no usable reference pair for window center {window.center}")
    if (entry.low, entry.high) != (window.low, window.high):
        raise ConfigError(
            f"window mismatch at center {window.center}: database was built for "
            f"[{entry.low}, {entry.high}], got [{window.low}, {window.high}]")
    if scheme.kind is SelectionKind.MIN_ERROR:
        return entry.min_pair
    if scheme.kind is SelectionKind.MAX_ERROR:
        return entry.max_pair
    rng = np.random.default_rng([scheme.seed, _tag_key(tag), window.center])
    lows = db.instances_at(entry.low_rank)
    highs = db.instances_at(entry.high_rank)
    return int(lows[rng.integers(len(lows))]), int(highs[rng.integers(len(highs))])


def knn_ranks(db: ReferenceDatabase, feature: np.ndarray, k: int,
              tag: str = TAG_GLOBAL) -> np.ndarray:
    """Ranks of the k nearest stored instances (exact, id-ordered ties)."""
    if tag not in db.features:
        raise ConfigError(f"database has no features for tag {tag!r}")
    feats = db.features[tag]
    if k < 1 or k > len(feats):
        raise ConfigError(f"k must be in [1, {len(feats)}], got {k}")
    q = np.asarray(feature, dtype=np.float64)
    if q.shape != (feats.shape[1],):
        raise ShapeError(f"query must have shape ({feats.shape[1]},), got {q.shape}")
    d2 = ((feats - q) ** 2).sum(axis=1)
    order = np.lexsort((db._id_rank_order, d2))
    return db.ranks[order[:k]].copy()


def _meta_dict(db: ReferenceDatabase) -> dict:
    return {
        "format_version": DB_VERSION,
        "scale_kind": db.scale.kind.value,
        "tau": db.scale.tau,
        "domain": [db.domain.lo, db.domain.hi],
        "alpha": db.alpha,
        "pool_cap": db.pool_cap,
        "pair_cap": db.pair_cap,
        "seed": db.seed,
        "tags": list(db.features),
        "digests": db.digests,
        "tabled_tags": list(db.tables),
    }


_TABLE_COLS = ("center", "low", "high", "low_rank", "high_rank",
               "min_i", "min_j", "max_i", "max_j", "n_pairs_scored", "pool_size")


def save_database(db: ReferenceDatabase, path: str, run_id: str | None = None) -> None:
    """Single-file npz snapshot, written atomically.

    ``run_id`` stamps the file with the manifest that produced it.
    """
    meta = _meta_dict(db)
    if run_id is not None:
        meta["run_id"] = run_id
    arrays: dict[str, np.ndarray] = {
        "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                              dtype=np.uint8),
        "ids": np.array(db.ids),
        "ranks": db.ranks,
    }
    for tag, feats in db.features.items():
        arrays[f"feat__{tag}"] = feats
    for tag, table in db.tables.items():
        entries = [table[c] for c in sorted(table)]
        ints = np.array([[e.center, e.low, e.high, e.low_rank, e.high_rank,
                          e.min_pair[0], e.min_pair[1], e.max_pair[0], e.max_pair[1],
                          e.n_pairs_scored, e.pool_size] for e in entries], dtype=np.int64)
        arrays[f"tab__{tag}__ints"] = ints
        arrays[f"tab__{tag}__gammas"] = np.array(
            [[e.min_gamma, e.max_gamma] for e in entries], dtype=np.float64)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp.npz")
    os.close(fd)
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def load_database(path: str, expected_digests: dict[str, str] | None = None,
                  ) -> ReferenceDatabase:
    """Load a snapshot, refusing if stored model digests do not match."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format_version") != DB_VERSION:
            raise DigestMismatchError(f"unsupported database version {meta.get('format_version')}")
        digests = dict(meta["digests"])
        if expected_digests:
            for tag, expected in expected_digests.items():
                stored = digests.get(tag)
                if stored != expected:
                    raise DigestMismatchError(
                        f"database entry {tag!r} was built for digest {stored}, expected {expected}")
        kind = ScaleKind(meta["scale_kind"])
        features = {tag: np.array(data[f"feat__{tag}"]) for tag in meta["tags"]}
        tables: dict[str, dict[int, WindowEntry]] = {}
        for tag in meta["tabled_tags"]:
            ints = data[f"tab__{tag}__ints"]
            gammas = data[f"tab__{tag}__gammas"]
            table = {}
            for row, (gmin, gmax) in zip(ints, gammas):
                entry = WindowEntry(
                    center=int(row[0]), low=int(row[1]), high=int(row[2]),
                    low_rank=int(row[3]), high_rank=int(row[4]),
                    min_pair=(int(row[5]), int(row[6])), min_gamma=float(gmin),
                    max_pair=(int(row[7]), int(row[8])), max_gamma=float(gmax),
                    n_pairs_scored=int(row[9]), pool_size=int(row[10]))
                table[entry.center] = entry
            tables[tag] = table
        return ReferenceDatabase(
            ids=tuple(str(s) for s in data["ids"]),
            ranks=np.array(data["ranks"], dtype=np.int64),
            scale=RankScale(kind, float(meta["tau"])),
            domain=RankRange(int(meta["domain"][0]), int(meta["domain"][1])),
            alpha=int(meta["alpha"]),
            features=features,
            digests=digests,
            tables=tables,
            pool_cap=meta["pool_cap"],
            pair_cap=meta["pair_cap"],
            seed=int(meta["seed"]),
        )
