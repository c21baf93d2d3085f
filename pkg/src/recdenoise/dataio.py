"""Rating-log ingestion, k-core filtering, chronological splitting and noise labels.

Training data is kept implicit (every observed interaction is a positive), while
validation and test keep only interactions whose rating marks them as true
positives.  Ratings below ``fp_threshold`` are false positives.
"""

from __future__ import annotations

import io
import math
import os
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

__all__ = [
    "DataFormatError",
    "NoiseLabel",
    "RatingRecord",
    "InteractionTable",
    "SplitDataset",
    "parse_ratings",
    "read_ratings",
    "filter_min_interactions",
    "build_split",
    "inject_synthetic_noise",
    "make_synthetic_split",
    "save_split",
    "load_split",
    "split_stats",
]

FORMATS = ("csv", "dat")


class DataFormatError(ValueError):
    """Raised for malformed rating files; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NoiseLabel(IntEnum):
    UNKNOWN = -1
    FALSE_POSITIVE = 0
    TRUE_POSITIVE = 1

    @property
    def code(self) -> str:
        return {-1: "UNK", 0: "FP", 1: "TP"}[int(self)]

    @classmethod
    def from_code(cls, code: str) -> "NoiseLabel":
        return {"UNK": cls.UNKNOWN, "FP": cls.FALSE_POSITIVE, "TP": cls.TRUE_POSITIVE}[code]


@dataclass(frozen=True)
class RatingRecord:
    user: str
    item: str
    rating: float
    timestamp: int

    def __post_init__(self):
        if not 1.0 <= self.rating <= 5.0:
            raise ValueError(f"rating {self.rating} outside [1, 5]")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")


@dataclass(eq=False)
class InteractionTable:
    """Columnar interaction list with dense user/item indices.

    ``rating`` is NaN where no explicit rating exists (synthetic false positives).
    """

    user: np.ndarray
    item: np.ndarray
    y: np.ndarray
    rating: np.ndarray
    timestamp: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        self.user = np.asarray(self.user, dtype=np.int64)
        self.item = np.asarray(self.item, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int8)
        self.rating = np.asarray(self.rating, dtype=np.float64)
        self.timestamp = np.asarray(self.timestamp, dtype=np.int64)
        self.noise = np.asarray(self.noise, dtype=np.int8)
        n = len(self.user)
        for name in ("item", "y", "rating", "timestamp", "noise"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self) -> int:
        return len(self.user)

    @classmethod
    def empty(cls) -> "InteractionTable":
        return cls(*(np.zeros(0),) * 6)

    def take(self, idx) -> "InteractionTable":
        idx = np.asarray(idx)
        return InteractionTable(
            self.user[idx], self.item[idx], self.y[idx],
            self.rating[idx], self.timestamp[idx], self.noise[idx],
        )

    @staticmethod
    def concat(tables: Sequence["InteractionTable"]) -> "InteractionTable":
        if not tables:
            return InteractionTable.empty()
        cols = ("user", "item", "y", "rating", "timestamp", "noise")
        return InteractionTable(*(np.concatenate([getattr(t, c) for t in tables]) for c in cols))

    def equals(self, other: "InteractionTable") -> bool:
        return (
            np.array_equal(self.user, other.user)
            and np.array_equal(self.item, other.item)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.rating, other.rating, equal_nan=True)
            and np.array_equal(self.timestamp, other.timestamp)
            and np.array_equal(self.noise, other.noise)
        )


@dataclass(eq=False)
class SplitDataset:
    m: int
    n: int
    train: InteractionTable
    validation: InteractionTable
    test: InteractionTable
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)
    n_records: int = 0

    def __post_init__(self):
        self._train_items = None

    @property
    def per_user_train_items(self) -> list[np.ndarray]:
        """Sorted unique train item indices for every user."""
        if self._train_items is None:
            order = np.lexsort((self.train.item, self.train.user))
            users, items = self.train.user[order], self.train.item[order]
            bounds = np.searchsorted(users, np.arange(self.m + 1))
            self._train_items = [np.unique(items[bounds[u]:bounds[u + 1]]) for u in range(self.m)]
        return self._train_items

    def train_mask(self) -> np.ndarray:
        """Dense ``m x n`` boolean matrix of train interactions."""
        mask = np.zeros((self.m, self.n), dtype=bool)
        mask[self.train.user, self.train.item] = True
        return mask

    def item_frequencies(self) -> np.ndarray:
        return np.bincount(self.train.item, minlength=self.n)

    def user_index(self) -> dict[str, int]:
        return {raw: i for i, raw in enumerate(self.user_ids)}

    def item_index(self) -> dict[str, int]:
        return {raw: i for i, raw in enumerate(self.item_ids)}

    def with_train(self, train: InteractionTable) -> "SplitDataset":
        return SplitDataset(self.m, self.n, train, self.validation, self.test,
                            list(self.user_ids), list(self.item_ids), self.n_records)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _decode_lines(source) -> Iterable[str]:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    text = io.TextIOWrapper(source, encoding="utf-8", newline=None) if not isinstance(source, io.TextIOBase) else source
    for line in text:
        yield line.rstrip("\r\n")


def _parse_fields(fields: list[str], lineno: int) -> RatingRecord:
    if len(fields) != 4:
        raise DataFormatError(f"expected 4 fields, found {len(fields)}", lineno)
    user, item, rating_s, ts_s = (f.strip() for f in fields)
    if not user or not item:
        raise DataFormatError("empty user or item id", lineno)
    try:
        rating = float(rating_s)
        ts = int(ts_s)
    except ValueError:
        raise DataFormatError(f"cannot parse rating/timestamp {rating_s!r}, {ts_s!r}", lineno) from None
    if not (1.0 <= rating <= 5.0):
        raise DataFormatError(f"rating {rating} outside [1, 5]", lineno)
    if ts < 0:
        raise DataFormatError(f"negative timestamp {ts}", lineno)
    return RatingRecord(user, item, rating, ts)


def parse_ratings(source: bytes | BinaryIO, fmt: str = "csv") -> list[RatingRecord]:
    """Parse a rating log.

    Parameters
    ----------
    source : bytes or binary stream
        UTF-8 content with Unix or Windows line endings.
    fmt : {"csv", "dat"}
        ``csv`` is the MovieLens-latest layout (header, then
        ``userId,movieId,rating,timestamp``); ``dat`` is the ML-1M layout
        ``UserID::MovieID::Rating::Timestamp`` without header.

    Returns
    -------
    list of RatingRecord
        One record per data line, in file order.  Blank lines are skipped.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    records = []
    lines = _decode_lines(source)
    start = 1
    if fmt == "csv":
        header = next(lines, None)
        if header is None:
            return records
        if len(header.split(",")) != 4:
            raise DataFormatError("header must have 4 comma-separated columns", 1)
        start = 2
    sep = "," if fmt == "csv" else "::"
    for lineno, line in enumerate(lines, start=start):
        if not line.strip():
            continue
        records.append(_parse_fields(line.split(sep), lineno))
    return records


def read_ratings(path: str | os.PathLike, fmt: str | None = None) -> list[RatingRecord]:
    """Read a rating file from disk; format is inferred from the suffix if omitted."""
    path = Path(path)
    if fmt is None:
        fmt = "dat" if path.suffix == ".dat" else "csv"
    with open(path, "rb") as fh:
        return parse_ratings(fh, fmt)


# ---------------------------------------------------------------------------
# filtering and splitting
# ---------------------------------------------------------------------------

def filter_min_interactions(records: Sequence[RatingRecord], min_count: int) -> list[RatingRecord]:
    """Drop users and items with fewer than ``min_count`` records until stable."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    kept = list(records)
    while True:
        users = Counter(r.user for r in kept)
        step = [r for r in kept if users[r.user] >= min_count]
        items = Counter(r.item for r in step)
        step = [r for r in step if items[r.item] >= min_count]
        if len(step) == len(kept):
            return step
        kept = step


def _split_sizes(count: int, ratios: Sequence[int]) -> tuple[int, int, int]:
    total = sum(ratios)
    if count < 3:
        return count, 0, 0
    n_train = -(-ratios[0] * count // total)
    n_val = min(-(-ratios[1] * count // total), count - n_train)
    return n_train, n_val, count - n_train - n_val


def build_split(
    records: Sequence[RatingRecord],
    ratios: Sequence[int] = (4, 1, 1),
    fp_threshold: float = 3.0,
) -> SplitDataset:
    """Chronological per-user split with implicit train and clean validation/test.

    Each user's records are stably sorted by timestamp.  The first
    ``ceil(4/6 c)`` go to train, the next ``ceil(1/6 c)`` to validation and the
    rest to test.  Train keeps everything as ``y = 1`` with the rating-derived
    noise label; validation and test drop ratings below ``fp_threshold``.
    Users with fewer than 3 records contribute to train only.
    """
    if not records:
        raise ValueError("cannot split an empty record list")
    if len(ratios) != 3 or min(ratios) < 0 or sum(ratios) == 0:
        raise ValueError(f"bad ratios {ratios!r}")

    by_user: OrderedDict[str, list[tuple[int, RatingRecord]]] = OrderedDict()
    for pos, r in enumerate(records):
        by_user.setdefault(r.user, []).append((pos, r))

    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    parts: list[list[tuple]] = [[], [], []]
    for raw_user, rows in by_user.items():
        rows.sort(key=lambda pr: (pr[1].timestamp, pr[0]))
        u = user_map.setdefault(raw_user, len(user_map))
        sizes = _split_sizes(len(rows), ratios)
        start = 0
        for part, size in enumerate(sizes):
            for _, r in rows[start:start + size]:
                v = item_map.setdefault(r.item, len(item_map))
                label = NoiseLabel.FALSE_POSITIVE if r.rating < fp_threshold else NoiseLabel.TRUE_POSITIVE
                if part > 0 and label == NoiseLabel.FALSE_POSITIVE:
                    continue
                parts[part].append((u, v, 1, r.rating, r.timestamp, int(label)))
            start += size

    def table(rows):
        if not rows:
            return InteractionTable.empty()
        return InteractionTable(*map(np.asarray, zip(*rows)))

    return SplitDataset(
        m=len(user_map),
        n=len(item_map),
        train=table(parts[0]),
        validation=table(parts[1]),
        test=table(parts[2]),
        user_ids=list(user_map),
        item_ids=list(item_map),
        n_records=len(records),
    )


def split_stats(split: SplitDataset) -> dict[str, float]:
    """Dataset statistics using the convention interactions / (users * items)."""
    m, n, act = split.m, split.n, split.n_records
    return {
        "users": m,
        "items": n,
        "interactions": act,
        "density": act / (m * n) if m and n else 0.0,
        "train": len(split.train),
        "validation": len(split.validation),
        "test": len(split.test),
        "train_false_positives": int(np.sum(split.train.noise == NoiseLabel.FALSE_POSITIVE)),
    }


# ---------------------------------------------------------------------------
# synthetic noise
# ---------------------------------------------------------------------------

def inject_synthetic_noise(
    clean: InteractionTable,
    fp_rate: float,
    rng_seed: int,
    n_users: int | None = None,
    n_items: int | None = None,
    exclude: InteractionTable | None = None,
) -> tuple[InteractionTable, np.ndarray]:
    """Add uniformly sampled false-positive pairs so they make up ``fp_rate`` of the result.

    ``floor(fp_rate * N / (1 - fp_rate))`` pairs are drawn without replacement
    from (user, item) pairs absent from ``clean`` (and ``exclude``, typically
    the validation and test interactions).  Injected rows get a timestamp
    drawn from the same user's clean timestamps so per-user chronology holds,
    and NaN rating.  The combined table is shuffled with ``rng_seed``.

    Returns
    -------
    noisy : InteractionTable
    labels : ndarray of int8
        Ground-truth :class:`NoiseLabel` per row of ``noisy``.
    """
    if not 0.0 <= fp_rate < 1.0:
        raise ValueError("fp_rate must lie in [0, 1)")
    if np.any(clean.noise != NoiseLabel.TRUE_POSITIVE):
        raise ValueError("clean interactions must all be true positives")
    if fp_rate == 0.0:
        return clean.take(np.arange(len(clean))), clean.noise.copy()

    n_users = int(clean.user.max()) + 1 if n_users is None else n_users
    n_items = int(clean.item.max()) + 1 if n_items is None else n_items
    # the epsilon keeps exact ratios such as 0.2 * 100 / 0.8 from flooring to 24
    k = math.floor(fp_rate * len(clean) / (1.0 - fp_rate) + 1e-9)

    taken = np.zeros((n_users, n_items), dtype=bool)
    taken[clean.user, clean.item] = True
    if exclude is not None and len(exclude):
        taken[exclude.user, exclude.item] = True
    # only users that own clean rows can receive a chronologically valid timestamp
    owners = np.zeros(n_users, dtype=bool)
    owners[clean.user] = True
    taken[~owners] = True
    free = np.flatnonzero(~taken.ravel())
    if k > len(free):
        raise ValueError(f"cannot inject {k} false positives: only {len(free)} free pairs remain")

    rng = np.random.default_rng(rng_seed)
    picks = np.sort(rng.choice(free, size=k, replace=False))
    users, items = np.divmod(picks, n_items)

    order = np.argsort(clean.user, kind="stable")
    bounds = np.searchsorted(clean.user[order], np.arange(n_users + 1))
    offsets = rng.integers(0, bounds[users + 1] - bounds[users])
    stamps = clean.timestamp[order][bounds[users] + offsets]

    injected = InteractionTable(
        users, items, np.ones(k), np.full(k, np.nan), stamps,
        np.full(k, int(NoiseLabel.FALSE_POSITIVE)),
    )
    noisy = InteractionTable.concat([clean, injected])
    noisy = noisy.take(rng.permutation(len(noisy)))
    return noisy, noisy.noise.copy()


def make_synthetic_split(
    n_users: int = 500,
    n_items: int = 300,
    per_user: int = 20,
    fp_rate: float = 0.3,
    rank: int = 8,
    temperature: float = 0.1,
    seed: int = 0,
) -> SplitDataset:
    """Low-rank synthetic interaction log with injected false positives in train.

    Every user consumes ``per_user`` distinct items drawn by a Gumbel top-k
    over ``<p_u, q_v> / temperature`` from hidden Gaussian factors, so all
    clean interactions carry genuine structure.  Timestamps are random, the
    chronological split is applied, then ``fp_rate`` of the training set is
    replaced by uniformly random false positives.
    """
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(n_users, rank)) / math.sqrt(rank)
    q = rng.normal(size=(n_items, rank))
    logits = p @ q.T / temperature
    gumbel = rng.gumbel(size=logits.shape)
    chosen = np.argsort(-(logits + gumbel), axis=1, kind="stable")[:, :per_user]
    records = []
    for u in range(n_users):
        stamps = np.sort(rng.integers(0, 10**9, size=per_user))
        for v, t in zip(chosen[u], stamps):
            records.append(RatingRecord(f"u{u}", f"i{v}", 5.0, int(t)))
    split = build_split(records)
    exclude = InteractionTable.concat([split.validation, split.test])
    noisy, _ = inject_synthetic_noise(
        split.train, fp_rate, seed + 1, split.m, split.n, exclude=exclude
    )
    out = split.with_train(noisy)
    out.n_records = len(noisy) + len(split.validation) + len(split.test)
    return out


# ---------------------------------------------------------------------------
# archive
# ---------------------------------------------------------------------------

_COLUMNS = ("user", "item", "y", "rating", "timestamp", "noise_label")


def _write_table(path: Path, table: InteractionTable) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(_COLUMNS) + "\n")
        for u, v, y, r, t, z in zip(table.user, table.item, table.y, table.rating,
                                    table.timestamp, table.noise):
            rating = "nan" if np.isnan(r) else repr(float(r))
            fh.write(f"{u}\t{v}\t{y}\t{rating}\t{t}\t{NoiseLabel(int(z)).code}\n")


def _read_table(path: Path) -> InteractionTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != _COLUMNS:
            raise DataFormatError(f"{path.name}: unexpected header {header}", 1)
        rows = []
        for lineno, line in enumerate(fh, start=2):
            f = line.rstrip("\n").split("\t")
            if len(f) != 6:
                raise DataFormatError(f"{path.name}: expected 6 columns", lineno)
            rows.append((int(f[0]), int(f[1]), int(f[2]), float(f[3]), int(f[4]),
                         int(NoiseLabel.from_code(f[5]))))
    if not rows:
        return InteractionTable.empty()
    return InteractionTable(*map(np.asarray, zip(*rows)))


def save_split(split: SplitDataset, out_dir: str | os.PathLike) -> Path:
    """Write ``train.tsv``, ``val.tsv``, ``test.tsv`` and ``meta.tsv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_table(out / "train.tsv", split.train)
    _write_table(out / "val.tsv", split.validation)
    _write_table(out / "test.tsv", split.test)
    with open(out / "meta.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"m\t{split.m}\nn\t{split.n}\nrecords\t{split.n_records}\n")
        for i, raw in enumerate(split.user_ids):
            fh.write(f"user\t{i}\t{raw}\n")
        for i, raw in enumerate(split.item_ids):
            fh.write(f"item\t{i}\t{raw}\n")
    return out


def load_split(split_dir: str | os.PathLike) -> SplitDataset:
    d = Path(split_dir)
    if not (d / "meta.tsv").exists():
        raise FileNotFoundError(f"no split archive at {d} (meta.tsv missing)")
    scalars: dict[str, int] = {}
    user_ids: list[str] = []
    item_ids: list[str] = []
    with open(d / "meta.tsv", encoding="utf-8") as fh:
        for line in fh:
            f = line.rstrip("\n").split("\t")
            if f[0] == "user":
                user_ids.append(f[2])
            elif f[0] == "item":
                item_ids.append(f[2])
            else:
                scalars[f[0]] = int(f[1])
    return SplitDataset(
        m=scalars["m"], n=scalars["n"],
        train=_read_table(d / "train.tsv"),
        validation=_read_table(d / "val.tsv"),
        test=_read_table(d / "test.tsv"),
        user_ids=user_ids, item_ids=item_ids,
        n_records=scalars.get("records", 0),
    )
