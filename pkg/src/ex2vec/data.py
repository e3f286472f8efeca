"""Listening-event ingestion, filtering and train/validation/test splitting.

Events live in a :class:`Dataset`: parallel numpy arrays sorted by
``(user, item, t)`` with dense integer indices. Every operation returns a new
dataset; arrays are frozen on construction.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

LISTEN_THRESHOLD = 0.8
SECONDS_PER_HOUR = 3600.0

LABELED_HEADER = ("user_id", "item_id", "timestamp", "label")
TIMED_HEADER = ("user_id", "item_id", "timestamp", "listen_time", "duration")
CANONICAL_HEADER = ("user_idx", "item_idx", "t", "L")
SPLIT_HEADER = ("user_idx", "item_idx", "role")


class DataError(ValueError):
    """Malformed or invalid input data."""


class ParseError(DataError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class EmptyDatasetError(DataError):
    pass


class RepetitionClass(str, enum.Enum):
    EXCLUDED = "Excluded"
    LOW = "LowRep"
    MOD = "ModRep"
    HIGH = "HighRep"
    VERY_HIGH = "VHRep"

    # numpy coerces str subclasses through str(); keep that equal to the value
    def __str__(self) -> str:
        return self.value


REPETITION_CLASSES = (
    RepetitionClass.LOW,
    RepetitionClass.MOD,
    RepetitionClass.HIGH,
    RepetitionClass.VERY_HIGH,
)

# Most frequent total sequence length inside each class.
POPULAR_LENGTHS = {
    RepetitionClass.LOW: 5,
    RepetitionClass.MOD: 17,
    RepetitionClass.HIGH: 28,
    RepetitionClass.VERY_HIGH: 39,
}

_TIME_SCALE = {"seconds": 1.0, "hours": SECONDS_PER_HOUR}


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Exposure events sorted by ``(user, item, t)``.

    ``user_ids``/``item_ids`` map dense indices back to the original tokens.
    """

    user: np.ndarray
    item: np.ndarray
    t: np.ndarray
    label: np.ndarray
    n_users: int
    n_items: int
    time_unit: str = "hours"
    user_ids: tuple = ()
    item_ids: tuple = ()

    def __post_init__(self):
        if self.time_unit not in _TIME_SCALE:
            raise DataError(f"unknown time unit {self.time_unit!r}")
        user = _frozen(self.user, np.int64)
        item = _frozen(self.item, np.int64)
        t = _frozen(self.t, np.float64)
        label = _frozen(self.label, np.int8)
        if not (len(user) == len(item) == len(t) == len(label)):
            raise DataError("event arrays differ in length")
        if len(user):
            if user.min() < 0 or user.max() >= self.n_users:
                raise DataError("user index out of range")
            if item.min() < 0 or item.max() >= self.n_items:
                raise DataError("item index out of range")
        object.__setattr__(self, "user", user)
        object.__setattr__(self, "item", item)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "label", label)
        if not self.user_ids:
            object.__setattr__(self, "user_ids", tuple(str(i) for i in range(self.n_users)))
        if not self.item_ids:
            object.__setattr__(self, "item_ids", tuple(str(i) for i in range(self.n_items)))

    @classmethod
    def from_arrays(cls, user, item, t, label, n_users=None, n_items=None, **kw) -> "Dataset":
        """Build a dataset from unsorted arrays, sorting and deduplicating.

        Rows sharing ``(user, item, t)`` collapse into one; a positive label wins.
        """
        user = np.asarray(user, dtype=np.int64)
        item = np.asarray(item, dtype=np.int64)
        t = np.asarray(t, dtype=np.float64)
        label = np.asarray(label, dtype=np.int8)
        order = np.lexsort((-label, t, item, user))
        user, item, t, label = user[order], item[order], t[order], label[order]
        if len(user):
            first = np.ones(len(user), dtype=bool)
            first[1:] = (user[1:] != user[:-1]) | (item[1:] != item[:-1]) | (t[1:] != t[:-1])
            user, item, t, label = user[first], item[first], t[first], label[first]
        if n_users is None:
            n_users = int(user.max()) + 1 if len(user) else 0
        if n_items is None:
            n_items = int(item.max()) + 1 if len(item) else 0
        return cls(user, item, t, label, n_users, n_items, **kw)

    def __len__(self) -> int:
        return len(self.user)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_users == other.n_users
            and self.n_items == other.n_items
            and self.time_unit == other.time_unit
            and np.array_equal(self.user, other.user)
            and np.array_equal(self.item, other.item)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.label, other.label)
        )

    __hash__ = None

    def _subset(self, keep: np.ndarray) -> "Dataset":
        return Dataset(
            self.user[keep], self.item[keep], self.t[keep], self.label[keep],
            self.n_users, self.n_items, self.time_unit, self.user_ids, self.item_ids,
        )

    def pair_starts(self) -> np.ndarray:
        """Boolean mask marking the first event of every (user, item) pair."""
        start = np.ones(len(self), dtype=bool)
        if len(self):
            start[1:] = (self.user[1:] != self.user[:-1]) | (self.item[1:] != self.item[:-1])
        return start

    def pairs(self) -> np.ndarray:
        """Distinct (user, item) pairs as an ``(n, 2)`` array, in event order."""
        start = self.pair_starts()
        return np.stack([self.user[start], self.item[start]], axis=1)

    def pair_lengths(self) -> np.ndarray:
        """Number of exposures of each pair, aligned with :meth:`pairs`."""
        idx = np.flatnonzero(self.pair_starts())
        return np.diff(np.append(idx, len(self)))

    def exposure_index(self) -> np.ndarray:
        """1-based position of each event within its pair's sequence."""
        start = self.pair_starts()
        pair_id = np.cumsum(start) - 1
        first = np.flatnonzero(start)
        return np.arange(len(self)) - first[pair_id] + 1

    def select_pairs(self, pairs) -> "Dataset":
        """Events belonging to the given (user, item) pairs."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        key = self.user * self.n_items + self.item
        wanted = pairs[:, 0] * self.n_items + pairs[:, 1]
        return self._subset(np.isin(key, wanted))

    def drop_pairs(self, pairs) -> "Dataset":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        key = self.user * self.n_items + self.item
        wanted = pairs[:, 0] * self.n_items + pairs[:, 1]
        return self._subset(~np.isin(key, wanted))

    def reindexed(self) -> "Dataset":
        """Drop users/items without events and make indices dense again."""
        users, user = np.unique(self.user, return_inverse=True)
        items, item = np.unique(self.item, return_inverse=True)
        return Dataset(
            user, item, self.t, self.label, len(users), len(items), self.time_unit,
            tuple(self.user_ids[u] for u in users), tuple(self.item_ids[i] for i in items),
        )


def label_listens(listen_time, duration):
    """1 when more than 80% of the track was played, else 0.

    Works elementwise on arrays. Exactly 80% counts as not listened.
    """
    listen_time = np.asarray(listen_time, dtype=np.float64)
    duration = np.asarray(duration, dtype=np.float64)
    if np.any(duration <= 0):
        raise DataError("duration must be positive")
    if np.any(listen_time < 0):
        raise DataError("listen_time must be non-negative")
    out = (listen_time / duration > LISTEN_THRESHOLD).astype(np.int8)
    return int(out) if out.ndim == 0 else out


def parse_events(path, schema: str = "labeled", time_unit: str = "hours") -> Dataset:
    """Read a raw event CSV into a :class:`Dataset`.

    ``schema`` is ``"labeled"`` (user_id,item_id,timestamp,label) or ``"timed"``
    (user_id,item_id,timestamp,listen_time,duration). Timestamps are integer
    seconds and get converted to ``time_unit``. Indices are assigned in sorted
    token order so the result does not depend on row order.
    """
    if schema not in ("labeled", "timed"):
        raise DataError(f"unknown schema {schema!r}")
    if time_unit not in _TIME_SCALE:
        raise DataError(f"unknown time unit {time_unit!r}")
    header = LABELED_HEADER if schema == "labeled" else TIMED_HEADER
    users, items, stamps, labels = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path}: empty file") from None
        if tuple(c.strip() for c in first) != header:
            raise ParseError(path, 1, f"expected header {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(path, line, f"expected {len(header)} fields, got {len(row)}")
            user_id, item_id = row[0].strip(), row[1].strip()
            if not user_id or not item_id:
                raise ParseError(path, line, "empty identifier")
            try:
                ts = int(row[2])
            except ValueError:
                raise ParseError(path, line, f"bad timestamp {row[2]!r}") from None
            if ts < 0:
                raise ParseError(path, line, "negative timestamp")
            if schema == "labeled":
                if row[3].strip() not in ("0", "1"):
                    raise ParseError(path, line, f"label must be 0 or 1, got {row[3]!r}")
                lab = int(row[3])
            else:
                try:
                    listen, dur = float(row[3]), float(row[4])
                except ValueError:
                    raise ParseError(path, line, "non-numeric listen_time/duration") from None
                if not dur > 0:
                    raise DataError(f"{path}:{line}: duration must be positive, got {dur}")
                if not listen >= 0:
                    raise ParseError(path, line, "listen_time must be non-negative")
                lab = label_listens(listen, dur)
            users.append(user_id)
            items.append(item_id)
            stamps.append(ts)
            labels.append(lab)
    if not users:
        raise EmptyDatasetError(f"{path}: no events")
    user_ids, user = np.unique(np.array(users, dtype=object), return_inverse=True)
    item_ids, item = np.unique(np.array(items, dtype=object), return_inverse=True)
    t = np.asarray(stamps, dtype=np.float64) / _TIME_SCALE[time_unit]
    return Dataset.from_arrays(
        user, item, t, labels, len(user_ids), len(item_ids),
        time_unit=time_unit, user_ids=tuple(user_ids), item_ids=tuple(item_ids),
    )


def write_canonical(dataset: Dataset, path) -> None:
    """Write ``user_idx,item_idx,t,L`` with t at 6 decimal places."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_HEADER)
        for u, i, t, lab in zip(dataset.user.tolist(), dataset.item.tolist(),
                                dataset.t.tolist(), dataset.label.tolist()):
            w.writerow((u, i, f"{t:.6f}", lab))


def read_canonical(path, time_unit: str = "hours") -> Dataset:
    """Load a processed ``user_idx,item_idx,t,L`` file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path}: empty file") from None
        if tuple(c.strip() for c in first) != CANONICAL_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(CANONICAL_HEADER)}")
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(path, reader.line_num, f"expected 4 fields, got {len(row)}")
            try:
                rows.append((int(row[0]), int(row[1]), float(row[2]), int(row[3])))
            except ValueError as exc:
                raise ParseError(path, reader.line_num, str(exc)) from None
    if not rows:
        raise EmptyDatasetError(f"{path}: no events")
    u, i, t, lab = (np.array(c) for c in zip(*rows))
    return Dataset.from_arrays(u, i, t, lab, time_unit=time_unit)


def window_trim(dataset: Dataset, fraction: float = 0.8) -> Dataset:
    """Drop every pair whose first event falls after ``fraction`` of the time window."""
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot trim an empty dataset")
    if not 0 < fraction <= 1:
        raise DataError("fraction must be in (0, 1]")
    t_min, t_max = dataset.t.min(), dataset.t.max()
    cutoff = t_min + fraction * (t_max - t_min)
    start = dataset.pair_starts()
    pair_id = np.cumsum(start) - 1
    first_t = dataset.t[start]
    return dataset._subset(first_t[pair_id] <= cutoff)


def kcore_filter(dataset: Dataset, k_item: int, k_user: int) -> Dataset:
    """Peel users with fewer than ``k_item`` distinct items and items with fewer
    than ``k_user`` distinct users until nothing changes, then re-densify."""
    if k_item < 1 or k_user < 1:
        raise DataError("k_item and k_user must be >= 1")
    pairs = dataset.pairs()
    alive = np.ones(len(pairs), dtype=bool)
    while True:
        u, i = pairs[alive, 0], pairs[alive, 1]
        user_deg = np.bincount(u, minlength=dataset.n_users)
        item_deg = np.bincount(i, minlength=dataset.n_items)
        bad = (user_deg[pairs[:, 0]] < k_item) | (item_deg[pairs[:, 1]] < k_user)
        drop = alive & bad
        if not drop.any():
            break
        alive &= ~bad
    pair_id = np.cumsum(dataset.pair_starts()) - 1
    return dataset._subset(alive[pair_id]).reindexed()


def assign_repetition_class(pair_length: int) -> RepetitionClass:
    if pair_length < 5 or pair_length > 50:
        return RepetitionClass.EXCLUDED
    if pair_length <= 16:
        return RepetitionClass.LOW
    if pair_length <= 27:
        return RepetitionClass.MOD
    if pair_length <= 38:
        return RepetitionClass.HIGH
    return RepetitionClass.VERY_HIGH


@dataclass(frozen=True)
class SplitAssignment:
    seed: int
    held_out: dict  # user -> (validation items, test items)


class Split(NamedTuple):
    train: Dataset
    validation: np.ndarray  # (n, 2) user, item pairs
    test: np.ndarray
    assignment: SplitAssignment


def holdout_split(dataset: Dataset, seed: int, n_val: int = 2, n_test: int = 2) -> Split:
    """Hold out ``n_val + n_test`` random items per user.

    All events of a held-out pair leave the training set; the items remain
    available through other users.
    """
    n_out = n_val + n_test
    pairs = dataset.pairs()
    rng = np.random.default_rng(seed)
    users = np.unique(pairs[:, 0])
    bounds = np.searchsorted(pairs[:, 0], users, side="left"), np.searchsorted(pairs[:, 0], users, side="right")
    held, val, test = {}, [], []
    for user, lo, hi in zip(users.tolist(), *bounds):
        items = pairs[lo:hi, 1]
        if len(items) <= n_out:
            raise DataError(
                f"user {dataset.user_ids[user]!r} (index {user}) has {len(items)} distinct items, "
                f"needs at least {n_out + 1}"
            )
        chosen = rng.choice(items, size=n_out, replace=False)
        v, te = tuple(int(x) for x in chosen[:n_val]), tuple(int(x) for x in chosen[n_val:])
        held[user] = (v, te)
        val.extend((user, x) for x in v)
        test.extend((user, x) for x in te)
    val = np.array(val, dtype=np.int64).reshape(-1, 2)
    test = np.array(test, dtype=np.int64).reshape(-1, 2)
    train = dataset.drop_pairs(np.concatenate([val, test]))
    return Split(train, val, test, SplitAssignment(seed, held))


def write_split_manifest(split: Split, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPLIT_HEADER)
        rows = [(int(u), int(i), "val") for u, i in split.validation]
        rows += [(int(u), int(i), "test") for u, i in split.test]
        w.writerows(sorted(rows))


def read_split_manifest(path) -> tuple[np.ndarray, np.ndarray]:
    val, test = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SPLIT_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(SPLIT_HEADER)}")
        for row in reader:
            role = row["role"]
            if role not in ("val", "test"):
                raise ParseError(path, reader.line_num, f"unknown role {role!r}")
            (val if role == "val" else test).append((int(row["user_idx"]), int(row["item_idx"])))
    return np.array(val, dtype=np.int64).reshape(-1, 2), np.array(test, dtype=np.int64).reshape(-1, 2)


class Batch(NamedTuple):
    """Vectorised model input. ``hist`` holds past positive times, padded;
    ``mask`` marks the real entries."""

    user: np.ndarray
    item: np.ndarray
    t: np.ndarray
    label: np.ndarray
    hist: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return len(self.user)


class ExposureTable:
    """Events of a dataset paired with their own-pair positive history.

    The history of an event is every earlier ``L=1`` event of the same
    (user, item) pair. Histories are stored as slices into one flat array of
    positive timestamps.
    """

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.user = dataset.user
        self.item = dataset.item
        self.t = dataset.t
        self.label = dataset.label
        start = dataset.pair_starts()
        pos = dataset.label.astype(np.int64)
        cum_before = np.cumsum(pos) - pos  # positives strictly before each event
        pair_id = np.cumsum(start) - 1
        pair_first = np.flatnonzero(start)
        self.hist_start = cum_before[pair_first][pair_id]
        self.hist_len = cum_before - self.hist_start
        self.pos_times = dataset.t[dataset.label == 1]
        self.exposure_index = dataset.exposure_index()

    def __len__(self):
        return len(self.user)

    def history(self, k: int) -> np.ndarray:
        s = self.hist_start[k]
        return self.pos_times[s:s + self.hist_len[k]]

    def batch(self, idx=None) -> Batch:
        if idx is None:
            idx = np.arange(len(self))
        idx = np.asarray(idx, dtype=np.int64)
        lens = self.hist_len[idx]
        width = int(lens.max()) if len(idx) else 0
        cols = np.arange(width)
        mask = cols[None, :] < lens[:, None]
        gather = np.where(mask, self.hist_start[idx][:, None] + cols[None, :], 0)
        hist = self.pos_times[gather] if len(self.pos_times) else np.zeros(gather.shape)
        hist = np.where(mask, hist, 0.0)
        return Batch(self.user[idx], self.item[idx], self.t[idx],
                     self.label[idx].astype(np.float64), hist, mask)


def make_batch(samples: Sequence) -> Batch:
    """Build a :class:`Batch` from ``(user, item, history, t, label)`` tuples."""
    width = max((len(s[2]) for s in samples), default=0)
    n = len(samples)
    hist = np.zeros((n, width))
    mask = np.zeros((n, width), dtype=bool)
    for k, (_, _, h, _, _) in enumerate(samples):
        hist[k, :len(h)] = h
        mask[k, :len(h)] = True
    return Batch(
        np.array([s[0] for s in samples], dtype=np.int64),
        np.array([s[1] for s in samples], dtype=np.int64),
        np.array([s[3] for s in samples], dtype=np.float64),
        np.array([s[4] for s in samples], dtype=np.float64),
        hist, mask,
    )
