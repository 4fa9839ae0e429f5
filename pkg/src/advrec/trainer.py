"""Alternating min-max training loop: minimize the adversarial contrastive
loss over encoder parameters, periodically maximize it over hardness
parameters, with early stopping on validation Recall@K.

Phases are strictly alternated: a minimization step never touches hardness
parameters and an adversarial step never touches the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import InteractionSet, sample_negatives
from .encoder import Encoder, batch_backward, batch_forward, build_encoder, representations
from .errors import NonFinite, SkippedAdvStep
from .evaluation import evaluate_split
from .loss import (
    AdamHyper,
    EmbedHardness,
    MlpHardness,
    advinfonce_backward_batch,
    hardness_grad_from_delta,
    softmax_hardness,
)
from .numkit import adam_step
from .rng import substream

STRATEGIES = ("adv", "reverse", "rand", "none")


@dataclass
class TrainConfig:
    """Every knob of the training procedure and evaluation protocol.

    Defaults target full-scale corpora (millions of interactions); shrink
    batch_size, n_negatives and max_epochs for desk-scale runs.
    """

    lr: float = 1e-3
    lr_adv: float = 5e-5
    batch_size: int = 2048
    n_negatives: int = 128
    k_weight: float = 64.0
    tau: float = 0.09
    e_adv_max: int = 7
    t_adv_interval: int = 5
    max_epochs: int = 100
    eval_every: int = 1
    patience: int = 20
    hardness_strategy: str = "adv"
    seed: int = 0
    # artifact plumbing beyond the core procedure
    backbone: str = "mf"            # "mf" | "lightgcn"
    embed_dim: int = 64
    gcn_layers: int = 2
    hardness_kind: str = "embed"    # "embed" | "mlp"
    adv_dim: int = 0                # 0 means: same as embed_dim
    mlp_latent: int = 4
    k_eval: int = 20

    def __post_init__(self):
        for name in ("lr", "lr_adv", "tau", "k_weight"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch_size", "n_negatives", "max_epochs", "eval_every",
                     "t_adv_interval", "embed_dim", "k_eval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.e_adv_max < 0:
            raise ValueError("e_adv_max must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.hardness_strategy not in STRATEGIES:
            raise ValueError(f"hardness_strategy must be one of {STRATEGIES}")
        if self.backbone not in ("mf", "lightgcn"):
            raise ValueError("backbone must be 'mf' or 'lightgcn'")
        if self.hardness_kind not in ("embed", "mlp"):
            raise ValueError("hardness_kind must be 'embed' or 'mlp'")


@dataclass
class Batch:
    users: np.ndarray       # (B,)
    pos_items: np.ndarray   # (B,)
    negatives: np.ndarray   # (B, N)


@dataclass
class TrainState:
    encoder: Encoder
    hardness: object | None
    cfg: TrainConfig
    epoch: int = 0
    e_adv: int = 0          # completed adversarial epochs; never exceeds e_adv_max
    best_metric: float = -np.inf
    best_epoch: int = -1
    evals_since_improve: int = 0
    history: list = field(default_factory=list)
    best_encoder: Encoder | None = None
    best_hardness: object | None = None


@dataclass
class TrainResult:
    state: TrainState
    history: list
    best_metric: float
    best_epoch: int
    stopped_epoch: int


def build_hardness(cfg: TrainConfig, n_users: int, n_items: int):
    if cfg.hardness_strategy not in ("adv", "reverse"):
        return None
    if cfg.hardness_kind == "mlp":
        return MlpHardness.init(cfg.embed_dim, cfg.seed, latent=cfg.mlp_latent)
    dim = cfg.adv_dim or cfg.embed_dim
    return EmbedHardness.init(n_users, n_items, dim, cfg.seed)


def init_state(dataset: InteractionSet, cfg: TrainConfig) -> TrainState:
    enc = build_encoder(
        cfg.backbone, dataset.n_users, dataset.n_items, cfg.embed_dim,
        cfg.tau, cfg.seed, layers=cfg.gcn_layers, train_pairs=dataset.train_pairs,
    )
    return TrainState(encoder=enc,
                      hardness=build_hardness(cfg, dataset.n_users, dataset.n_items),
                      cfg=cfg)


def iter_batches(dataset: InteractionSet, cfg: TrainConfig, epoch: int, phase: str):
    """Deterministic epoch iterator: seeded shuffle of the train pairs and
    fresh per-step negative samples."""
    pairs = dataset.train_pairs
    perm = substream(cfg.seed, f"{phase}-shuffle", epoch).permutation(len(pairs))
    for b, start in enumerate(range(0, len(pairs), cfg.batch_size)):
        chunk = pairs[perm[start:start + cfg.batch_size]]
        rng = substream(cfg.seed, f"{phase}-neg", epoch, b)
        negs = np.stack([
            sample_negatives(dataset, int(u), cfg.n_negatives, rng).negatives
            for u in chunk[:, 0]
        ])
        yield Batch(chunk[:, 0], chunk[:, 1], negs)


def _batch_deltas(state: TrainState, batch: Batch, delta_rng=None):
    """Per-negative hardness for the configured strategy; probs only exist
    for the learned strategies."""
    cfg = state.cfg
    if cfg.hardness_strategy in ("adv", "reverse"):
        g = state.hardness.raw_scores_batch(batch.users, batch.negatives, state.encoder)
        probs, deltas = softmax_hardness(g)
        return probs, deltas
    if cfg.hardness_strategy == "rand":
        if delta_rng is None:
            raise ValueError("rand strategy needs a delta rng")
        return None, delta_rng.uniform(-0.5, 0.5, size=batch.negatives.shape)
    return None, np.zeros(batch.negatives.shape)


def min_step(state: TrainState, batch: Batch, delta_rng=None) -> float:
    """One encoder update (mean-loss gradient over the batch); hardness
    parameters are read-only here. Returns the batch mean loss."""
    cfg = state.cfg
    enc = state.encoder
    items = np.concatenate([batch.pos_items[:, None], batch.negatives], axis=1)
    scores, cache = batch_forward(enc, batch.users, items)
    _, deltas = _batch_deltas(state, batch, delta_rng)
    loss_vec, d_pos, d_neg, _ = advinfonce_backward_batch(
        scores[:, 0], scores[:, 1:], deltas, cfg.k_weight
    )
    if not np.all(np.isfinite(loss_vec)):
        raise NonFinite("non-finite loss in minimization step")
    n = len(batch.users)
    upstream = np.concatenate([d_pos[:, None], d_neg], axis=1) / n
    u_grads, i_grads = batch_backward(enc, cache, upstream)
    hyper = AdamHyper(lr=cfg.lr)
    adam_step(enc.user_table, u_grads, hyper)
    adam_step(enc.item_table, i_grads, hyper)
    return float(loss_vec.mean())


def adv_step(state: TrainState, batch: Batch) -> float:
    """One hardness update on a frozen encoder: gradient ascent for the
    adversarial strategy, descent for the reversed ablation. Returns the
    batch mean loss evaluated before the update."""
    cfg = state.cfg
    if state.hardness is None:
        raise SkippedAdvStep("strategy has no trainable hardness")
    if state.e_adv >= cfg.e_adv_max:
        raise SkippedAdvStep("adversarial epoch budget exhausted")
    enc = state.encoder
    items = np.concatenate([batch.pos_items[:, None], batch.negatives], axis=1)
    scores, _ = batch_forward(enc, batch.users, items)
    probs, deltas = _batch_deltas(state, batch)
    loss_vec, _, _, d_delta = advinfonce_backward_batch(
        scores[:, 0], scores[:, 1:], deltas, cfg.k_weight
    )
    if not np.all(np.isfinite(loss_vec)):
        raise NonFinite("non-finite loss in adversarial step")
    d_g = hardness_grad_from_delta(probs, d_delta / len(batch.users))
    grads = state.hardness.grad_batch(batch.users, batch.negatives, d_g, enc)
    state.hardness.apply_grads(grads, AdamHyper(lr=cfg.lr_adv),
                               maximize=(cfg.hardness_strategy == "adv"))
    return float(loss_vec.mean())


def mean_batch_loss(state: TrainState, batches: list[Batch]) -> float:
    """Mean loss over fixed batches without touching any parameter (learned
    and zero-hardness strategies only; random hardness has no fixed loss)."""
    cfg = state.cfg
    total, count = 0.0, 0
    for batch in batches:
        items = np.concatenate([batch.pos_items[:, None], batch.negatives], axis=1)
        scores, _ = batch_forward(state.encoder, batch.users, items)
        _, deltas = _batch_deltas(state, batch)
        loss_vec, *_ = advinfonce_backward_batch(
            scores[:, 0], scores[:, 1:], deltas, cfg.k_weight
        )
        total += float(loss_vec.sum())
        count += len(loss_vec)
    return total / max(count, 1)


def hardness_divergence(state: TrainState, dataset: InteractionSet, epoch: int,
                        n_anchors: int = 256):
    """(mean KL(uniform || p), max deviation from 1/N) over a seeded sample
    of anchor pairs; both are 0 for strategies without a hardness model."""
    cfg = state.cfg
    if state.hardness is None:
        return 0.0, 0.0
    rng = substream(cfg.seed, "diag", epoch)
    train = dataset.train_pairs
    take = min(n_anchors, len(train))
    anchors = train[rng.integers(0, len(train), size=take)]
    negs = np.stack([
        sample_negatives(dataset, int(u), cfg.n_negatives, rng).negatives
        for u in anchors[:, 0]
    ])
    g = state.hardness.raw_scores_batch(anchors[:, 0], negs, state.encoder)
    probs, deltas = softmax_hardness(g)
    kl_mean = float(np.mean(-deltas.mean(axis=1)))
    eps_proxy = float(np.max(np.abs(probs - 1.0 / cfg.n_negatives)))
    return kl_mean, eps_proxy


def run_training(dataset: InteractionSet, cfg: TrainConfig, log_fn=None) -> TrainResult:
    """Full training: per epoch one pass of minimization steps; every
    t_adv_interval epochs (while budget remains) one full adversarial pass;
    every eval_every epochs a validation evaluation with early stopping
    after `patience` evaluations without Recall improvement."""
    state = init_state(dataset, cfg)
    has_valid = len(dataset.users_with_positives("valid")) > 0
    stopped_epoch = cfg.max_epochs
    for epoch in range(1, cfg.max_epochs + 1):
        state.epoch = epoch
        epoch_loss, n_batches = 0.0, 0
        for b, batch in enumerate(iter_batches(dataset, cfg, epoch, "min")):
            delta_rng = substream(cfg.seed, "rand-delta", epoch, b)
            epoch_loss += min_step(state, batch, delta_rng)
            n_batches += 1
        epoch_loss /= max(n_batches, 1)

        if (state.hardness is not None and epoch % cfg.t_adv_interval == 0
                and state.e_adv < cfg.e_adv_max):
            for batch in iter_batches(dataset, cfg, epoch, "adv"):
                adv_step(state, batch)
            state.e_adv += 1

        if epoch % cfg.eval_every == 0 and has_valid:
            report = evaluate_split(state.encoder, dataset, "valid", cfg.k_eval)
            kl_mean, eps_proxy = hardness_divergence(state, dataset, epoch)
            record = {
                "epoch": epoch,
                "split": "valid",
                f"hr@{cfg.k_eval}": report.hr,
                f"recall@{cfg.k_eval}": report.recall,
                f"ndcg@{cfg.k_eval}": report.ndcg,
                "loss": epoch_loss,
                "kl_mean": kl_mean,
                "eps_proxy": eps_proxy,
                "e_adv": state.e_adv,
            }
            state.history.append(record)
            if log_fn is not None:
                log_fn(record)
            if report.recall > state.best_metric:
                state.best_metric = report.recall
                state.best_epoch = epoch
                state.evals_since_improve = 0
                state.best_encoder = Encoder(
                    kind=state.encoder.kind,
                    user_table=state.encoder.user_table.copy(),
                    item_table=state.encoder.item_table.copy(),
                    tau=state.encoder.tau,
                    layers=state.encoder.layers,
                    adj=state.encoder.adj,
                )
                state.best_hardness = (
                    state.hardness.copy() if state.hardness is not None else None
                )
            else:
                state.evals_since_improve += 1
                if state.evals_since_improve >= cfg.patience:
                    stopped_epoch = epoch
                    break
    return TrainResult(state=state, history=state.history,
                       best_metric=state.best_metric, best_epoch=state.best_epoch,
                       stopped_epoch=stopped_epoch)
