"""All-ranking Top-K evaluation, representation diagnostics, and hardness
diagnostics (popularity profile, false-negative identification rate)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import InteractionSet, sample_negatives
from .encoder import Encoder, representations
from .errors import EmptyEval, EmptyFnList, EmptySample, NoCandidates
from .loss import advinfonce_forward, hardness_forward, softmax_hardness


@dataclass
class RankResult:
    """Full candidate ranking for one user: every item except the user's
    train positives, sorted by descending score with ties broken by
    ascending item id. Positions of the evaluated split's positives are
    1-based."""

    user: int
    ranking: np.ndarray
    positions: np.ndarray


@dataclass
class MetricReport:
    hr: float
    recall: float
    ndcg: float
    k_eval: int
    n_users: int
    per_user: dict[int, tuple[float, float, float]]


def rank_all(
    enc: Encoder,
    user: int,
    dataset: InteractionSet,
    split: str = "test",
    reps: tuple[np.ndarray, np.ndarray] | None = None,
    candidate_items: np.ndarray | None = None,
) -> RankResult:
    """Rank every candidate item for one user.

    Candidates default to all items minus the user's train positives;
    candidate_items restricts the pool (for datasets whose unbiased feedback
    covers only a fully-exposed subset). Deterministic: equal scores order
    by ascending item id.
    """
    if reps is None:
        reps = representations(enc)
    user_reps, item_reps = reps
    train_pos = dataset.positives(user, "train")
    pool = np.arange(dataset.n_items) if candidate_items is None \
        else np.unique(np.asarray(candidate_items, dtype=np.int64))
    mask = np.ones(len(pool), dtype=bool)
    if train_pos:
        mask &= ~np.isin(pool, np.fromiter(train_pos, dtype=np.int64, count=len(train_pos)))
    candidates = pool[mask]
    if candidates.size == 0:
        raise NoCandidates(f"user {user} has no candidate items")
    u = user_reps[user]
    cand_reps = item_reps[candidates]
    scores = (cand_reps @ u) / (
        np.linalg.norm(u) * np.linalg.norm(cand_reps, axis=1) * enc.tau
    )
    # candidates are in ascending id order; a stable sort keeps that order
    # within tied scores.
    order = np.argsort(-scores, kind="stable")
    ranking = candidates[order]
    rank_of = {int(item): pos + 1 for pos, item in enumerate(ranking)}
    positives = dataset.positives(user, split)
    positions = np.array(sorted(rank_of[i] for i in positives if i in rank_of),
                         dtype=np.int64)
    return RankResult(user=user, ranking=ranking, positions=positions)


def _ideal_dcg(n: int) -> float:
    return float(np.sum(1.0 / np.log2(np.arange(2, n + 2))))


def topk_metrics(results: list[RankResult], k_eval: int = 20) -> MetricReport:
    """Macro-averaged hit ratio, recall and NDCG at k over users that have at
    least one positive in the evaluated split. Binary gains; ideal DCG over
    min(k, #positives)."""
    if k_eval < 1:
        raise ValueError("k_eval must be >= 1")
    per_user = {}
    for r in results:
        n_pos = len(r.positions)
        if n_pos == 0:
            continue
        in_top = r.positions[r.positions <= k_eval]
        hr = 1.0 if len(in_top) else 0.0
        recall = len(in_top) / n_pos
        dcg = float(np.sum(1.0 / np.log2(1.0 + in_top)))
        ndcg = dcg / _ideal_dcg(min(k_eval, n_pos))
        per_user[r.user] = (hr, recall, ndcg)
    if not per_user:
        raise EmptyEval("no user has positives in the evaluated split")
    table = np.array(list(per_user.values()))
    means = table.mean(axis=0)
    return MetricReport(hr=float(means[0]), recall=float(means[1]),
                        ndcg=float(means[2]), k_eval=k_eval,
                        n_users=len(per_user), per_user=per_user)


def evaluate_split(
    enc: Encoder,
    dataset: InteractionSet,
    split: str,
    k_eval: int = 20,
    candidate_items: np.ndarray | None = None,
) -> MetricReport:
    """Rank and score every user that has positives in the split."""
    reps = representations(enc)
    results = [
        rank_all(enc, int(u), dataset, split=split, reps=reps,
                 candidate_items=candidate_items)
        for u in dataset.users_with_positives(split)
    ]
    return topk_metrics(results, k_eval)


def dcg_bound_check(s_pos: float, s_negs, deltas) -> tuple[float, float, bool]:
    """Single-positive DCG bound against the k=1 loss.

    The hardness-adjusted rank is pi = 1 + #{j : s_j - s_pos + d_j > 0};
    -log(1/log2(1+pi)) never exceeds the loss because 1(x>0) <= exp(x) and
    log2(1+pi) <= pi for pi >= 1.
    """
    s_negs = np.asarray(s_negs, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    pi = 1 + int(np.sum(s_negs - s_pos + deltas > 0.0))
    neg_log_dcg = float(np.log(np.log2(1.0 + pi)))
    loss = advinfonce_forward(s_pos, s_negs, deltas, 1.0)
    return neg_log_dcg, loss, neg_log_dcg <= loss + 1e-12


def alignment_uniformity(
    enc: Encoder,
    positive_pairs: np.ndarray,
    entities: list[tuple[str, int]],
) -> tuple[float, float]:
    """Representation quality on L2-normalized final representations.

    align  = mean over positive pairs of squared distance (lower = tighter);
    uniform = log mean over distinct entity pairs of exp(-2 * squared
    distance) (lower = more spread out).
    """
    positive_pairs = np.asarray(positive_pairs, dtype=np.int64).reshape(-1, 2)
    if len(positive_pairs) == 0 or len(entities) < 2:
        raise EmptySample("need at least one positive pair and two entities")
    user_reps, item_reps = representations(enc)
    user_n = user_reps / np.linalg.norm(user_reps, axis=1, keepdims=True)
    item_n = item_reps / np.linalg.norm(item_reps, axis=1, keepdims=True)

    diffs = user_n[positive_pairs[:, 0]] - item_n[positive_pairs[:, 1]]
    align = float(np.mean(np.sum(diffs * diffs, axis=1)))

    points = np.stack([
        user_n[idx] if kind == "user" else item_n[idx] for kind, idx in entities
    ])
    sq = np.sum(points * points, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    iu = np.triu_indices(len(points), k=1)
    uniform = float(np.log(np.mean(np.exp(-2.0 * d2[iu]))))
    return align, uniform


def fn_identification_rate(
    model,
    planted_fn: np.ndarray,
    enc: Encoder,
    dataset: InteractionSet,
    n_negatives: int,
    rng: np.random.Generator,
    n_resamples: int = 3,
) -> float:
    """Fraction of planted false negatives receiving strictly negative
    hardness when dropped into a sampled negative context (the planted item
    plus n_negatives - 1 uniform draws), averaged over resamplings."""
    planted_fn = np.asarray(planted_fn, dtype=np.int64).reshape(-1, 2)
    if len(planted_fn) == 0:
        raise EmptyFnList("dataset has no planted false negatives")
    hits = 0
    total = 0
    for _ in range(n_resamples):
        for u, j in planted_fn:
            u, j = int(u), int(j)
            others = sample_negatives(dataset, u, max(n_negatives - 1, 1), rng).negatives
            negatives = np.concatenate([[j], others])
            batch = hardness_forward(model, u, -1, negatives, enc)
            hits += bool(batch.deltas[0] < 0.0)
            total += 1
    return hits / total


def hardness_popularity_profile(
    model,
    enc: Encoder,
    dataset: InteractionSet,
    bins: int,
    n_negatives: int,
    rng: np.random.Generator,
    n_anchor_samples: int = 200,
) -> list[tuple[int, float, int]]:
    """Mean learned sampling probability per item-popularity bin.

    Items are sorted by descending train popularity (ties by ascending id)
    into `bins` near-equal-size bins; rows are (bin, mean_p, count). The
    uniform reference is 1/n_negatives.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    pop = dataset.item_popularity
    order = np.lexsort((np.arange(dataset.n_items), -pop))
    item_bin = np.zeros(dataset.n_items, dtype=np.int64)
    for b, chunk in enumerate(np.array_split(order, bins)):
        item_bin[chunk] = b

    train = dataset.train_pairs
    if len(train) == 0:
        raise EmptySample("no train pairs to sample anchors from")
    anchors = train[rng.integers(0, len(train), size=min(n_anchor_samples, len(train)))]
    sums = np.zeros(bins)
    counts = np.zeros(bins, dtype=np.int64)
    for u, i in anchors:
        negs = sample_negatives(dataset, int(u), n_negatives, rng).negatives
        g = model.raw_scores_batch(np.array([int(u)]), negs[None, :], enc)[0]
        probs, _ = softmax_hardness(g)
        np.add.at(sums, item_bin[negs], probs)
        np.add.at(counts, item_bin[negs], 1)
    return [
        (b, float(sums[b] / counts[b]) if counts[b] else float("nan"), int(counts[b]))
        for b in range(bins)
    ]
