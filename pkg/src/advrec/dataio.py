"""Interaction ingestion, id remapping, split management, negative sampling,
long-tail test-split construction, and synthetic biased-exposure data.

External format: UTF-8 TSV, one "user<TAB>item" pair per line, lines starting
with '#' ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadParam,
    DegenerateSpec,
    EmptySplitError,
    NoNegativesError,
    ParseError,
)
from .rng import substream

SPLITS = ("train", "valid", "test")


@dataclass
class InteractionSet:
    """Remapped user/item id space plus observed positive pairs per split.

    Immutable after construction; safe for concurrent readers.
    """

    n_users: int
    n_items: int
    train_pairs: np.ndarray  # (k, 2) int64, deduplicated
    valid_pairs: np.ndarray
    test_pairs: np.ndarray

    def __post_init__(self):
        for name in SPLITS:
            pairs = np.asarray(getattr(self, f"{name}_pairs"), dtype=np.int64).reshape(-1, 2)
            setattr(self, f"{name}_pairs", pairs)
            if pairs.size:
                if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= self.n_users:
                    raise BadParam(f"{name}: user id out of range")
                if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= self.n_items:
                    raise BadParam(f"{name}: item id out of range")
                if len({(int(u), int(i)) for u, i in pairs}) != len(pairs):
                    raise BadParam(f"{name}: duplicate (user, item) pair")
        # Per-user positive sets and train popularity, built once.
        self._pos = {}
        for name in SPLITS:
            sets = [set() for _ in range(self.n_users)]
            for u, i in getattr(self, f"{name}_pairs"):
                sets[u].add(int(i))
            self._pos[name] = sets
        pop = np.zeros(self.n_items, dtype=np.int64)
        if len(self.train_pairs):
            np.add.at(pop, self.train_pairs[:, 1], 1)
        self.item_popularity = pop

        # original-id -> dense-id maps; None when ids are already native
        self.user_remap: dict[int, int] | None = None
        self.item_remap: dict[int, int] | None = None

    def positives(self, u: int, split: str = "train") -> set[int]:
        return self._pos[split][u]

    def remap_pairs(self, pairs: np.ndarray) -> np.ndarray:
        """Translate original-id pairs into this set's dense id space.
        Pairs referencing ids unseen at load time are dropped."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if self.user_remap is None and self.item_remap is None:
            return pairs
        out = []
        for u, i in pairs:
            mu = self.user_remap.get(int(u)) if self.user_remap else int(u)
            mi = self.item_remap.get(int(i)) if self.item_remap else int(i)
            if mu is not None and mi is not None:
                out.append((mu, mi))
        return np.asarray(out, dtype=np.int64).reshape(-1, 2)

    def pairs(self, split: str) -> np.ndarray:
        return getattr(self, f"{split}_pairs")

    def users_with_positives(self, split: str) -> np.ndarray:
        pairs = self.pairs(split)
        return np.unique(pairs[:, 0]) if len(pairs) else np.zeros(0, dtype=np.int64)


@dataclass
class NegativeSample:
    """One observed anchor pair plus n sampled negative item ids (uniform
    with replacement over the user's non-train items)."""

    anchor: tuple[int, int]
    negatives: np.ndarray


def _read_pairs(path) -> list[tuple[int, int]]:
    pairs = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ParseError(path, line_no, "expected 'user<TAB>item'")
            try:
                u, i = int(fields[0]), int(fields[1])
            except ValueError:
                raise ParseError(path, line_no, f"non-integer id in {fields!r}")
            if u < 0 or i < 0:
                raise ParseError(path, line_no, "negative id")
            if (u, i) in seen:
                raise ParseError(path, line_no, f"duplicate pair ({u}, {i})")
            seen.add((u, i))
            pairs.append((u, i))
    return pairs


def load_interactions(train_path, valid_path, test_path) -> InteractionSet:
    """Load three TSV splits, remapping ids to dense 0-based ranges in
    first-seen order (train scanned first, then valid, then test)."""
    raw = {name: _read_pairs(p) for name, p in
           zip(SPLITS, (train_path, valid_path, test_path))}
    if not raw["train"]:
        raise EmptySplitError(f"train split {train_path} has no interactions")
    user_map, item_map = {}, {}
    remapped = {}
    for name in SPLITS:
        out = []
        for u, i in raw[name]:
            out.append((user_map.setdefault(u, len(user_map)),
                        item_map.setdefault(i, len(item_map))))
        remapped[name] = np.asarray(out, dtype=np.int64).reshape(-1, 2)
    dataset = InteractionSet(
        n_users=len(user_map),
        n_items=len(item_map),
        train_pairs=remapped["train"],
        valid_pairs=remapped["valid"],
        test_pairs=remapped["test"],
    )
    dataset.user_remap = user_map
    dataset.item_remap = item_map
    return dataset


def write_pairs(path, pairs) -> None:
    """Write pairs in the TSV exchange format (deterministic order)."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in np.asarray(pairs, dtype=np.int64).reshape(-1, 2):
            fh.write(f"{int(u)}\t{int(i)}\n")


def read_pairs(path) -> np.ndarray:
    """Read a TSV pair file without remapping (raw ids as written)."""
    return np.asarray(_read_pairs(path), dtype=np.int64).reshape(-1, 2)


def sample_negatives(
    dataset: InteractionSet,
    u: int,
    n: int,
    rng: np.random.Generator,
    anchor_item: int = -1,
) -> NegativeSample:
    """Draw n items uniformly with replacement from the user's non-train
    items. Deterministic given the rng state."""
    pos = dataset.positives(u, "train")
    n_items = dataset.n_items
    if len(pos) >= n_items:
        raise NoNegativesError(f"user {u} has interacted with every item")
    if len(pos) > n_items // 2:
        # Dense user: enumerate the complement once and index into it.
        cand = np.setdiff1d(np.arange(n_items, dtype=np.int64),
                            np.fromiter(pos, dtype=np.int64, count=len(pos)))
        negs = cand[rng.integers(0, len(cand), size=n)]
    else:
        out = np.empty(n, dtype=np.int64)
        filled = 0
        while filled < n:
            draws = rng.integers(0, n_items, size=max(8, int(1.3 * (n - filled)) + 4))
            ok = draws[[int(d) not in pos for d in draws]]
            take = min(len(ok), n - filled)
            out[filled:filled + take] = ok[:take]
            filled += take
        negs = out
    return NegativeSample(anchor=(u, anchor_item), negatives=negs)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def gamma_quotas(n0: int, gamma: float, groups: int) -> np.ndarray:
    """Per-group test quota: round(n0 * gamma^(-(i-1)/(groups-1))), i 1-based.

    Smaller gamma yields a flatter (more out-of-distribution) test split.
    """
    if gamma <= 0:
        raise BadParam("gamma must be > 0")
    if groups < 2:
        raise BadParam("groups must be >= 2")
    if n0 < 1:
        raise BadParam("n0 must be >= 1")
    i = np.arange(1, groups + 1, dtype=np.float64)
    return _round_half_up(n0 * gamma ** (-(i - 1) / (groups - 1)))


@dataclass
class GammaSplitResult:
    quotas: np.ndarray        # per-group target counts
    drawn: np.ndarray         # per-group realized test counts
    item_group: np.ndarray    # group index (0-based) per item
    train_pairs: np.ndarray
    valid_pairs: np.ndarray
    test_pairs: np.ndarray


def gamma_split(
    pool_pairs: np.ndarray,
    n_items: int,
    gamma: float,
    n0: int,
    rng: np.random.Generator,
    groups: int = 50,
) -> GammaSplitResult:
    """Carve a popularity-controlled long-tail test split out of a pool.

    Items are sorted by descending pool popularity (ties by ascending id)
    into `groups` near-equal-size groups; group i receives
    min(quota_i, available) test interactions drawn uniformly; the remaining
    pool is split 60:10 into train:valid by seeded shuffle.
    """
    quotas = gamma_quotas(n0, gamma, groups)
    pool = np.asarray(pool_pairs, dtype=np.int64).reshape(-1, 2)
    pop = np.zeros(n_items, dtype=np.int64)
    if len(pool):
        np.add.at(pop, pool[:, 1], 1)
    order = np.lexsort((np.arange(n_items), -pop))  # desc popularity, asc id
    item_group = np.zeros(n_items, dtype=np.int64)
    for g, chunk in enumerate(np.array_split(order, groups)):
        item_group[chunk] = g

    pair_group = item_group[pool[:, 1]] if len(pool) else np.zeros(0, dtype=np.int64)
    is_test = np.zeros(len(pool), dtype=bool)
    drawn = np.zeros(groups, dtype=np.int64)
    for g in range(groups):
        idx = np.flatnonzero(pair_group == g)
        k = min(int(quotas[g]), len(idx))
        if k > 0:
            chosen = rng.choice(idx, size=k, replace=False)
            is_test[chosen] = True
        drawn[g] = k
    test = pool[is_test]
    rest = pool[~is_test]
    perm = rng.permutation(len(rest))
    n_train = int(round(len(rest) * 6.0 / 7.0))
    train = rest[perm[:n_train]]
    valid = rest[perm[n_train:]]
    return GammaSplitResult(quotas, drawn, item_group, train, valid, test)


@dataclass
class SyntheticSpec:
    """Configuration of the biased-exposure synthetic generator.

    fn_plant_rate may be 0 to produce a dataset without planted false
    negatives (the test split is then empty).
    """

    n_users: int = 2000
    n_items: int = 1000
    latent_dim: int = 8
    exposure_bias_strength: float = 2.0
    train_fraction: float = 0.5
    fn_plant_rate: float = 0.2
    seed: int = 0
    relevance_quantile: float = 0.02  # fraction of user-item pairs that are relevant

    def __post_init__(self):
        if self.n_users <= 0 or self.n_items <= 0 or self.latent_dim <= 0:
            raise BadParam("dims must be positive")
        if not (0 < self.train_fraction < 1):
            raise BadParam("train_fraction must lie in (0, 1)")
        if not (0 <= self.fn_plant_rate < 1):
            raise BadParam("fn_plant_rate must lie in [0, 1)")
        if self.exposure_bias_strength < 0:
            raise BadParam("exposure_bias_strength must be >= 0")
        if not (0 < self.relevance_quantile < 1):
            raise BadParam("relevance_quantile must lie in (0, 1)")


@dataclass
class SyntheticResult:
    dataset: InteractionSet
    planted_fn: np.ndarray        # (k, 2) relevant pairs hidden from train, placed in test
    exposure_weight: np.ndarray   # per-item relative exposure weight used for biasing


def generate_synthetic(spec: SyntheticSpec) -> SyntheticResult:
    """Generate a biased-exposure dataset with known false negatives.

    Latent user/item vectors define true relevance (top quantile of the dot
    product). Relevant pairs are exposed into the observed pool with
    probability proportional to a Zipf-like per-item weight raised to
    exposure_bias_strength; the observed pool is split 6/7:1/7 into
    train:valid. A fn_plant_rate fraction of relevant-but-unexposed pairs is
    planted as false negatives and becomes the unbiased test split.
    """
    users = substream(spec.seed, "latent-user").normal(size=(spec.n_users, spec.latent_dim))
    items = substream(spec.seed, "latent-item").normal(size=(spec.n_items, spec.latent_dim))
    affinity = users @ items.T
    cutoff = np.quantile(affinity, 1.0 - spec.relevance_quantile)
    rel_u, rel_i = np.nonzero(affinity > cutoff)
    if rel_u.size == 0:
        raise DegenerateSpec("no relevant pair at the requested quantile")

    # Zipf-like item weighting: item at popularity rank r gets weight 1/(r+1).
    rank = np.empty(spec.n_items, dtype=np.int64)
    rank[substream(spec.seed, "zipf").permutation(spec.n_items)] = np.arange(spec.n_items)
    w = (1.0 / (rank + 1.0)) ** spec.exposure_bias_strength
    w = w / w.mean()
    p_expose = np.clip(spec.train_fraction * w[rel_i], 0.0, 1.0)
    exposed = substream(spec.seed, "expose").random(rel_u.size) < p_expose

    observed = np.stack([rel_u[exposed], rel_i[exposed]], axis=1)
    hidden = np.stack([rel_u[~exposed], rel_i[~exposed]], axis=1)
    if len(observed) == 0:
        raise DegenerateSpec("no pair was exposed into the observed pool")

    perm = substream(spec.seed, "observed-split").permutation(len(observed))
    n_train = int(round(len(observed) * 6.0 / 7.0))
    train = observed[perm[:n_train]]
    valid = observed[perm[n_train:]]
    if len(train) == 0:
        raise DegenerateSpec("train split is empty")

    k = int(round(spec.fn_plant_rate * len(hidden)))
    if k > 0:
        chosen = substream(spec.seed, "fn-plant").choice(len(hidden), size=k, replace=False)
        planted = hidden[np.sort(chosen)]
    else:
        planted = np.zeros((0, 2), dtype=np.int64)

    dataset = InteractionSet(
        n_users=spec.n_users,
        n_items=spec.n_items,
        train_pairs=train,
        valid_pairs=valid,
        test_pairs=planted,
    )
    return SyntheticResult(dataset=dataset, planted_fn=planted, exposure_weight=w)


def write_synthetic(out_dir, result: SyntheticResult) -> dict:
    """Write train/valid/test TSVs plus planted_fn.tsv; returns file map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in SPLITS:
        path = out / f"{name}.tsv"
        write_pairs(path, result.dataset.pairs(name))
        files[name] = str(path)
    fn_path = out / "planted_fn.tsv"
    write_pairs(fn_path, result.planted_fn)
    files["planted_fn"] = str(fn_path)
    return files
