"""Interaction data: rating-log ingestion, k-core filtering, splitting and sampling."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class DatasetError(ValueError):
    """Raised when a dataset is empty or cannot be constructed."""


class ParseError(DatasetError):
    def __init__(self, path, line_no: int, line: str, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}: {line.rstrip()!r}")
        self.path = path
        self.line_no = line_no


class UnsampleableError(ValueError):
    """The user has interacted with every item, so no negative exists."""


class SyntheticConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RawInteraction:
    user_key: Hashable
    item_key: Hashable
    rating: float | None = None
    timestamp: int | None = None


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Implicit-feedback pairs over contiguous user/item IDs.

    ``users``/``items`` are parallel arrays sorted by (user, item); ``indptr``
    gives the CSR row boundaries so ``items[indptr[u]:indptr[u+1]]`` is the
    sorted history of user ``u``.  Split views share the full ID space, so a
    view may contain users or items without interactions.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    indptr: np.ndarray
    user_ids: tuple = ()
    item_ids: tuple = ()
    _csr: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_arrays(cls, users, items, num_users: int, num_items: int,
                    user_ids: tuple = (), item_ids: tuple = ()) -> "InteractionDataset":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.size:
            if users.min() < 0 or users.max() >= num_users:
                raise DatasetError("user index out of range")
            if items.min() < 0 or items.max() >= num_items:
                raise DatasetError("item index out of range")
        keys = np.unique(users * num_items + items)
        users, items = np.divmod(keys, num_items)
        indptr = np.zeros(num_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(users, minlength=num_users), out=indptr[1:])
        return cls(num_users, num_items, users, items, indptr, tuple(user_ids), tuple(item_ids))

    def __len__(self) -> int:
        return int(self.users.size)

    @property
    def num_interactions(self) -> int:
        return int(self.users.size)

    @property
    def density(self) -> float:
        return density(self.num_users, self.num_items, self.num_interactions)

    @property
    def keys(self) -> np.ndarray:
        """Sorted ``u * N + i`` encoding of every pair."""
        return self.users * self.num_items + self.items

    def row(self, user: int) -> np.ndarray:
        return self.items[self.indptr[user]:self.indptr[user + 1]]

    @property
    def row_index(self) -> list[np.ndarray]:
        return [self.row(u) for u in range(self.num_users)]

    def user_degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    def contains(self, users, items) -> np.ndarray:
        """Vectorised membership test for (user, item) pairs."""
        q = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        keys = self.keys
        if keys.size == 0:
            return np.zeros(q.shape, dtype=bool)
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, keys.size - 1)
        return keys[pos] == q

    def csr(self, dtype=np.float64) -> sp.csr_matrix:
        """The binary user-item matrix X."""
        cached = self._csr
        if cached is None or cached.dtype != dtype:
            data = np.ones(self.users.size, dtype=dtype)
            cached = sp.csr_matrix((data, self.items.copy(), self.indptr.copy()),
                                   shape=(self.num_users, self.num_items))
            cached.has_sorted_indices = True
            object.__setattr__(self, "_csr", cached)
        return cached

    def with_pairs(self, users, items) -> "InteractionDataset":
        """A view over the same ID space holding a different pair set."""
        return InteractionDataset.from_arrays(users, items, self.num_users, self.num_items,
                                              self.user_ids, self.item_ids)

    def check(self, require_coverage: bool = True) -> None:
        if self.users.size != self.indptr[-1]:
            raise DatasetError("row index does not cover every pair")
        if np.unique(self.keys).size != self.users.size:
            raise DatasetError("duplicate pairs")
        if require_coverage:
            if (self.user_degrees() == 0).any() or (self.item_degrees() == 0).any():
                raise DatasetError("every user and item must appear in at least one pair")


@dataclass(frozen=True)
class SplitBundle:
    train: InteractionDataset
    valid: InteractionDataset
    test: InteractionDataset
    seed: int

    def phase(self, name: str) -> InteractionDataset:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown phase {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class SyntheticSkewConfig:
    """Shape of a synthetic many-users/few-items dataset.

    Users are assigned round-robin to ``num_clusters`` taste groups; each
    group boosts an equal-sized slice of the catalogue by ``affinity``, so
    the popularity marginal stays a power law in item rank.
    """

    num_users: int = 16216
    num_items: int = 437
    target_interactions: int = 540557
    popularity_exponent: float = 1.0
    seed: int = 0
    num_clusters: int = 16
    affinity: float = 50.0
    k_core: int = 10


def density(num_users: int, num_items: int, num_interactions: int) -> float:
    return num_interactions / (num_users * num_items)


# -- ingestion ---------------------------------------------------------------

def _parse_line(line: str) -> list[str] | None:
    stripped = line.strip()
    if not stripped:
        return None
    if "::" in stripped:
        return stripped.split("::")
    if "\t" in stripped:
        return stripped.split("\t")
    if "," in stripped:
        return next(csv.reader([stripped]))
    return stripped.split()


def load_movielens(path, rating_threshold: float = 3.0) -> list[RawInteraction]:
    """Read a MovieLens ``ratings.dat`` (``user::item::rating::timestamp``).

    Tab- and comma-separated files are accepted too; a comma file may start
    with the header ``user,item,rating,timestamp``.  Records rated below
    ``rating_threshold`` are dropped and repeated (user, item) records keep
    only the first occurrence.  Records without a rating are kept.
    """
    path = Path(path)
    seen: set = set()
    out: list[RawInteraction] = []
    with path.open("r", encoding="latin-1") as fh:
        for line_no, line in enumerate(fh, start=1):
            fields = _parse_line(line)
            if fields is None:
                continue
            if line_no == 1 and fields[0].strip().lower() in ("user", "user_id", "userid"):
                continue
            if len(fields) < 2 or len(fields) > 4:
                raise ParseError(path, line_no, line, f"expected 2-4 fields, got {len(fields)}")
            user, item = fields[0].strip(), fields[1].strip()
            if not user or not item:
                raise ParseError(path, line_no, line, "empty user or item key")
            rating = timestamp = None
            try:
                if len(fields) > 2 and fields[2].strip():
                    rating = float(fields[2])
                if len(fields) > 3 and fields[3].strip():
                    timestamp = int(fields[3])
            except ValueError as exc:
                raise ParseError(path, line_no, line, str(exc)) from None
            if rating is not None and not math.isfinite(rating):
                raise ParseError(path, line_no, line, "non-finite rating")
            if rating is not None and rating < rating_threshold:
                continue
            key = (user, item)
            if key in seen:
                continue
            seen.add(key)
            out.append(RawInteraction(user, item, rating, timestamp))
    if not out:
        raise DatasetError(f"{path}: no interactions at rating >= {rating_threshold}")
    return out


# -- k-core ------------------------------------------------------------------

def _as_pair_arrays(pairs) -> tuple[np.ndarray, np.ndarray, tuple, tuple]:
    """Encode arbitrary hashable keys as integers (first-seen order)."""
    if isinstance(pairs, InteractionDataset):
        return pairs.users, pairs.items, pairs.user_ids, pairs.item_ids
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], np.ndarray):
        u, i = pairs
        return np.asarray(u), np.asarray(i), (), ()
    umap: dict = {}
    imap: dict = {}
    us, its = [], []
    for p in pairs:
        if isinstance(p, RawInteraction):
            uk, ik = p.user_key, p.item_key
        else:
            uk, ik = p
        us.append(umap.setdefault(uk, len(umap)))
        its.append(imap.setdefault(ik, len(imap)))
    return (np.asarray(us, dtype=np.int64), np.asarray(its, dtype=np.int64),
            tuple(umap), tuple(imap))


def _kcore_mask(users: np.ndarray, items: np.ndarray, k: int, schedule: str) -> np.ndarray:
    keep = np.ones(users.size, dtype=bool)
    nu = int(users.max()) + 1
    ni = int(items.max()) + 1
    while True:
        changed = False
        for side in {"simultaneous": ("both",), "users_first": ("users", "items"),
                     "items_first": ("items", "users")}[schedule]:
            ud = np.bincount(users[keep], minlength=nu)
            idg = np.bincount(items[keep], minlength=ni)
            drop = np.zeros_like(keep)
            if side in ("both", "users"):
                drop |= ud[users] < k
            if side in ("both", "items"):
                drop |= idg[items] < k
            drop &= keep
            if drop.any():
                keep &= ~drop
                changed = True
        if not changed:
            return keep


def kcore_filter(pairs, k: int = 10, schedule: str = "simultaneous"):
    """Iteratively drop users and items with fewer than ``k`` interactions.

    ``pairs`` may be an iterable of ``(user_key, item_key)`` tuples or
    :class:`RawInteraction` records (returned as a list of tuples), or a
    ``(users, items)`` pair of integer arrays (returned the same way).  The
    fixed point does not depend on ``schedule``; the option exists so that
    can be checked.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if schedule not in ("simultaneous", "users_first", "items_first"):
        raise ValueError(f"unknown schedule {schedule!r}")
    array_input = isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], np.ndarray)
    if array_input:
        users, items = np.asarray(pairs[0]), np.asarray(pairs[1])
        ukeys = ikeys = None
    else:
        records = list(pairs)
        users, items, ukeys, ikeys = _as_pair_arrays(records)
    if users.size == 0:
        raise DatasetError("empty interaction set")
    keep = _kcore_mask(users, items, k, schedule)
    if not keep.any():
        raise DatasetError(f"{k}-core is empty")
    if array_input:
        return users[keep], items[keep]
    return [(ukeys[u], ikeys[i]) for u, i in zip(users[keep], items[keep])]


def build_dataset(pairs) -> InteractionDataset:
    """Assign contiguous IDs in first-seen order and build the row index."""
    users, items, ukeys, ikeys = _as_pair_arrays(pairs if not isinstance(pairs, np.ndarray)
                                                 else [tuple(p) for p in pairs])
    if users.size == 0:
        raise DatasetError("cannot build a dataset from no pairs")
    # re-index to first-seen order (array inputs may have gaps)
    uniq_u, first_u = np.unique(users, return_index=True)
    order_u = uniq_u[np.argsort(first_u, kind="stable")]
    uniq_i, first_i = np.unique(items, return_index=True)
    order_i = uniq_i[np.argsort(first_i, kind="stable")]
    umap = np.full(int(uniq_u.max()) + 1, -1, dtype=np.int64)
    umap[order_u] = np.arange(order_u.size)
    imap = np.full(int(uniq_i.max()) + 1, -1, dtype=np.int64)
    imap[order_i] = np.arange(order_i.size)
    user_ids = tuple(ukeys[j] for j in order_u) if ukeys else tuple(int(j) for j in order_u)
    item_ids = tuple(ikeys[j] for j in order_i) if ikeys else tuple(int(j) for j in order_i)
    return InteractionDataset.from_arrays(umap[users], imap[items], order_u.size, order_i.size,
                                          user_ids, item_ids)


# -- splitting and sampling --------------------------------------------------

def split_counts(n: int, ratios: Sequence[float] = (0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    """Per-user (train, valid, test) sizes; remainders go train, test, valid."""
    counts = [int(math.floor(n * r + 1e-9)) for r in ratios]
    rest = n - sum(counts)
    for slot in (0, 2, 1):
        if rest <= 0:
            break
        counts[slot] += 1
        rest -= 1
    counts[0] += rest
    return counts[0], counts[1], counts[2]


def split(dataset: InteractionDataset, ratios: Sequence[float] = (0.6, 0.2, 0.2),
          seed: int = 0) -> SplitBundle:
    """Per-user stratified random split."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    phase = np.empty(dataset.num_interactions, dtype=np.int8)
    for u in range(dataset.num_users):
        lo, hi = dataset.indptr[u], dataset.indptr[u + 1]
        n = int(hi - lo)
        if n == 0:
            continue
        ntr, nva, _ = split_counts(n, ratios)
        perm = rng.permutation(n)
        labels = np.full(n, 2, dtype=np.int8)
        labels[perm[:ntr]] = 0
        labels[perm[ntr:ntr + nva]] = 1
        phase[lo:hi] = labels
    views = [dataset.with_pairs(dataset.users[phase == p], dataset.items[phase == p])
             for p in range(3)]
    return SplitBundle(views[0], views[1], views[2], seed)


def sample_negatives(user: int, count: int, train_view: InteractionDataset,
                     rng: np.random.Generator) -> list[int]:
    """Draw ``count`` items uniformly from those the user has not interacted with."""
    if count <= 0:
        return []
    seen = train_view.row(user)
    if seen.size >= train_view.num_items:
        raise UnsampleableError(f"user {user} has interacted with every item")
    out = rng.integers(0, train_view.num_items, size=count)
    bad = np.isin(out, seen)
    while bad.any():
        out[bad] = rng.integers(0, train_view.num_items, size=int(bad.sum()))
        bad = np.isin(out, seen)
    return out.tolist()


def sample_negatives_batch(users: np.ndarray, train_view: InteractionDataset,
                           rng: np.random.Generator) -> np.ndarray:
    """One negative item per entry of ``users``, by rejection resampling."""
    users = np.asarray(users, dtype=np.int64)
    full = train_view.user_degrees()[users] >= train_view.num_items
    if full.any():
        raise UnsampleableError(f"user {int(users[full][0])} has interacted with every item")
    out = rng.integers(0, train_view.num_items, size=users.size)
    bad = train_view.contains(users, out)
    while bad.any():
        out[bad] = rng.integers(0, train_view.num_items, size=int(bad.sum()))
        bad[bad] = train_view.contains(users[bad], out[bad])
    return out


# -- synthetic data ----------------------------------------------------------

def _allocate_degrees(cfg: SyntheticSkewConfig, rng: np.random.Generator) -> np.ndarray:
    k, m, n = cfg.k_core, cfg.num_users, cfg.num_items
    weights = rng.lognormal(0.0, 0.75, size=m)
    extra = cfg.target_interactions - m * k
    share = weights / weights.sum() * extra
    deg = np.minimum(k + np.floor(share).astype(np.int64), n)
    rest = cfg.target_interactions - int(deg.sum())
    order = np.argsort(-(share - np.floor(share)), kind="stable")
    while rest > 0:
        room = order[deg[order] < n]
        take = room[:rest]
        deg[take] += 1
        rest -= take.size
    return deg


def generate_synthetic(config: SyntheticSkewConfig) -> InteractionDataset:
    """Sample a clustered, popularity-skewed dataset with exact counts.

    Every user and item ends with at least ``config.k_core`` interactions so
    the result is its own k-core.
    """
    m, n, p, k = config.num_users, config.num_items, config.target_interactions, config.k_core
    if min(m, n, p, config.num_clusters) <= 0 or k < 1:
        raise SyntheticConfigError("sizes must be positive")
    if k > n or k > m:
        raise SyntheticConfigError(f"{k}-core needs at least {k} users and {k} items")
    if p < m * k or p < n * k or p > m * n:
        raise SyntheticConfigError(
            f"target_interactions={p} infeasible for {m}x{n} with {k}-core")
    rng = np.random.default_rng(config.seed)
    rank = np.arange(1, n + 1, dtype=np.float64)
    popularity = rank ** -config.popularity_exponent
    popularity = popularity[rng.permutation(n)]
    clusters = config.num_clusters
    boost = np.ones((clusters, n))
    for c in range(clusters):
        boost[c, np.arange(n) % clusters == c] += config.affinity
    prefs = popularity * boost
    prefs /= prefs.sum(axis=1, keepdims=True)

    degrees = _allocate_degrees(config, rng)
    rows = []
    for u in range(m):
        # Gumbel top-k == sequential sampling without replacement
        keys = np.log(prefs[u % clusters]) - np.log(-np.log(rng.random(n)))
        rows.append(np.sort(np.argpartition(-keys, degrees[u] - 1)[:degrees[u]]))
    member = np.zeros((m, n), dtype=bool)
    for u, r in enumerate(rows):
        member[u, r] = True
    _repair_item_degrees(member, k, rng)
    users, items = np.nonzero(member)
    return InteractionDataset.from_arrays(users, items, m, n,
                                          tuple(range(m)), tuple(range(n)))


def _repair_item_degrees(member: np.ndarray, k: int, rng: np.random.Generator) -> None:
    """Swap interactions from the most popular items to starved ones in place."""
    deg = member.sum(axis=0)
    for item in np.flatnonzero(deg < k):
        while deg[item] < k:
            donor = int(np.argmax(deg))
            if deg[donor] <= k:
                raise SyntheticConfigError("cannot satisfy item k-core")
            cand = np.flatnonzero(member[:, donor] & ~member[:, item])
            if cand.size == 0:
                raise SyntheticConfigError("cannot satisfy item k-core")
            u = int(cand[rng.integers(cand.size)])
            member[u, donor] = False
            member[u, item] = True
            deg[donor] -= 1
            deg[item] += 1


# -- processed on-disk format ------------------------------------------------

def write_pairs(path, view: InteractionDataset) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for u, i in zip(view.users.tolist(), view.items.tolist()):
            fh.write(f"{u}\t{i}\n")


def read_pairs(path) -> tuple[np.ndarray, np.ndarray]:
    arr = np.loadtxt(path, dtype=np.int64, delimiter="\t", ndmin=2)
    if arr.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return arr[:, 0], arr[:, 1]


def save_processed(out_dir, split_bundle: SplitBundle, extra_stats: dict | None = None) -> None:
    """Write ``{train,valid,test}.tsv`` and the ``meta.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    full = split_bundle.train
    total = sum(len(split_bundle.phase(p)) for p in ("train", "valid", "test"))
    for name in ("train", "valid", "test"):
        write_pairs(out / f"{name}.tsv", split_bundle.phase(name))
    meta = {
        "num_users": full.num_users,
        "num_items": full.num_items,
        "num_interactions": total,
        "seed": split_bundle.seed,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if full.user_ids:
        (out / "user_ids.txt").write_text("".join(f"{k}\n" for k in full.user_ids))
        (out / "item_ids.txt").write_text("".join(f"{k}\n" for k in full.item_ids))
    stats = dict(meta)
    stats["density"] = round(density(full.num_users, full.num_items, total), 6)
    for name in ("train", "valid", "test"):
        stats[f"{name}_interactions"] = len(split_bundle.phase(name))
    stats.update(extra_stats or {})
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")


def load_processed(directory) -> SplitBundle:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    m, n = int(meta["num_users"]), int(meta["num_items"])
    uids: tuple = ()
    iids: tuple = ()
    if (d / "user_ids.txt").exists():
        uids = tuple((d / "user_ids.txt").read_text().splitlines())
        iids = tuple((d / "item_ids.txt").read_text().splitlines())
    views = []
    for name in ("train", "valid", "test"):
        u, i = read_pairs(d / f"{name}.tsv")
        views.append(InteractionDataset.from_arrays(u, i, m, n, uids, iids))
    return SplitBundle(*views, seed=int(meta["seed"]))


def merge(views: Iterable[InteractionDataset]) -> InteractionDataset:
    views = list(views)
    return views[0].with_pairs(np.concatenate([v.users for v in views]),
                               np.concatenate([v.items for v in views]))
