"""Dense/sparse numerical kernel: embedding tables, sparse-lazy Adam,
temperature-scaled cosine scoring, and symmetric-normalized graph propagation.

Everything is 64-bit; the test tolerances (1e-10 .. 1e-12) depend on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import DimMismatch, NonFiniteGradient, ZeroNormError

NORM_FLOOR = 1e-12


@dataclass
class AdamHyper:
    """Adam hyperparameters. Defaults follow common practice."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class EmbeddingTable:
    """Row-major parameter matrix with paired Adam moment accumulators."""

    values: np.ndarray
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimMismatch("embedding table must be 2-D")
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.values)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.values)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def uniform_init(cls, rows: int, dim: int, rng: np.random.Generator) -> "EmbeddingTable":
        """Uniform init in [-0.5/sqrt(d), 0.5/sqrt(d)]; keeps row norms nonzero
        and initial scores small."""
        bound = 0.5 / np.sqrt(dim)
        values = rng.uniform(-bound, bound, size=(rows, dim))
        table = cls(values)
        norms = np.linalg.norm(table.values, axis=1)
        # A row of all-tiny draws is astronomically unlikely; re-draw it anyway.
        while np.any(norms <= NORM_FLOOR):
            bad = norms <= NORM_FLOOR
            table.values[bad] = rng.uniform(-bound, bound, size=(int(bad.sum()), dim))
            norms = np.linalg.norm(table.values, axis=1)
        return table

    @classmethod
    def zeros(cls, rows: int, dim: int) -> "EmbeddingTable":
        """All-zero table (used for adversarial hardness parameters)."""
        return cls(np.zeros((rows, dim)))

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(
            self.values.copy(), self.adam_m.copy(), self.adam_v.copy(), self.step_count
        )


def cosine_scores(u_vec: np.ndarray, i_mat: np.ndarray, tau: float) -> np.ndarray:
    """(1/tau) * cosine(u_vec, row) for every row of i_mat."""
    u_vec = np.asarray(u_vec, dtype=np.float64)
    i_mat = np.atleast_2d(np.asarray(i_mat, dtype=np.float64))
    if u_vec.shape[-1] != i_mat.shape[-1]:
        raise DimMismatch(f"vector length {u_vec.shape[-1]} != {i_mat.shape[-1]}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    u_norm = np.linalg.norm(u_vec)
    i_norms = np.linalg.norm(i_mat, axis=-1)
    if u_norm <= NORM_FLOOR or np.any(i_norms <= NORM_FLOOR):
        raise ZeroNormError("row norm below 1e-12")
    return (i_mat @ u_vec) / (u_norm * i_norms * tau)


def cosine_score(u_vec: np.ndarray, i_vec: np.ndarray, tau: float) -> float:
    """Temperature-scaled cosine similarity; result lies in [-1/tau, 1/tau]."""
    return float(cosine_scores(u_vec, np.asarray(i_vec)[None, :], tau)[0])


def cosine_score_grad(u_vec, i_vec, tau) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of cosine_score w.r.t. both vectors.

    grad_v = (1/tau) * (u_hat/|i| - cos * i/|i|^2), symmetric for grad_u.
    grad_v is orthogonal to i_vec (cosine ignores radial direction).
    """
    u_vec = np.asarray(u_vec, dtype=np.float64)
    i_vec = np.asarray(i_vec, dtype=np.float64)
    if u_vec.shape != i_vec.shape:
        raise DimMismatch("vector lengths differ")
    u_norm = np.linalg.norm(u_vec)
    i_norm = np.linalg.norm(i_vec)
    if u_norm <= NORM_FLOOR or i_norm <= NORM_FLOOR:
        raise ZeroNormError("row norm below 1e-12")
    cos = float(u_vec @ i_vec) / (u_norm * i_norm)
    grad_u = (i_vec / (i_norm * u_norm) - cos * u_vec / u_norm**2) / tau
    grad_v = (u_vec / (u_norm * i_norm) - cos * i_vec / i_norm**2) / tau
    return grad_u, grad_v


def _adam_update(values, m, v, grads, hyper: AdamHyper, t: int) -> None:
    """In-place Adam with bias correction at step t. Shared by sparse and
    dense paths so both produce identical arithmetic."""
    m *= hyper.beta1
    m += (1.0 - hyper.beta1) * grads
    v *= hyper.beta2
    v += (1.0 - hyper.beta2) * (grads * grads)
    m_hat = m / (1.0 - hyper.beta1**t)
    v_hat = v / (1.0 - hyper.beta2**t)
    values -= hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)


def adam_step(
    table: EmbeddingTable,
    row_grads: Mapping[int, np.ndarray] | tuple[np.ndarray, np.ndarray],
    hyper: AdamHyper,
) -> EmbeddingTable:
    """Sparse/lazy Adam: update only the rows present in row_grads.

    Moments of untouched rows are not decayed, matching common embedding
    training practice; this changes trajectories versus dense Adam.
    step_count increments once per call, even for an empty gradient map.

    row_grads is either a {row: grad_vector} map or a pre-stacked
    (row_ids, grad_matrix) pair with unique ids.
    """
    if isinstance(row_grads, tuple):
        ids, grads = row_grads
        ids = np.asarray(ids, dtype=np.int64)
        grads = np.asarray(grads, dtype=np.float64)
    else:
        ids = np.fromiter(row_grads.keys(), dtype=np.int64, count=len(row_grads))
        grads = (
            np.stack([np.asarray(g, dtype=np.float64) for g in row_grads.values()])
            if len(row_grads)
            else np.zeros((0, table.dim))
        )
    table.step_count += 1
    if ids.size == 0:
        return table
    if grads.shape != (ids.size, table.dim):
        raise DimMismatch(f"gradient block shape {grads.shape} != ({ids.size}, {table.dim})")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    m = table.adam_m[ids]
    v = table.adam_v[ids]
    w = table.values[ids]
    _adam_update(w, m, v, grads, hyper, table.step_count)
    table.adam_m[ids] = m
    table.adam_v[ids] = v
    table.values[ids] = w
    return table


@dataclass
class NormAdjacency:
    """Symmetric-normalized sparse adjacency: entry (r, c) carries weight
    1/sqrt(deg(r) * deg(c)). Stored as parallel edge arrays, both directions
    present. Degree-zero nodes have no entries."""

    node_count: int
    rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))

    @classmethod
    def from_undirected_edges(
        cls, node_count: int, edges: Iterable[tuple[int, int]]
    ) -> "NormAdjacency":
        """Build from unique undirected (a, b) pairs."""
        pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        deg = np.zeros(node_count, dtype=np.int64)
        np.add.at(deg, pairs[:, 0], 1)
        np.add.at(deg, pairs[:, 1], 1)
        rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
        weights = 1.0 / np.sqrt(deg[rows].astype(np.float64) * deg[cols].astype(np.float64))
        return cls(node_count, rows, cols, weights)

    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.weights.tolist()))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """A @ x for the normalized adjacency A."""
        if x.shape[0] != self.node_count:
            raise DimMismatch(f"input rows {x.shape[0]} != node count {self.node_count}")
        out = np.zeros_like(x)
        np.add.at(out, self.rows, self.weights[:, None] * x[self.cols])
        return out


def propagate(layer0: np.ndarray, adj: NormAdjacency, layers: int) -> np.ndarray:
    """Mean of A^l @ layer0 over l = 0..layers. layers=0 returns layer0 exactly."""
    layer0 = np.asarray(layer0, dtype=np.float64)
    if layer0.shape[0] != adj.node_count:
        raise DimMismatch(f"layer0 rows {layer0.shape[0]} != node count {adj.node_count}")
    if layers == 0:
        return layer0.copy()
    acc = layer0.copy()
    current = layer0
    for _ in range(layers):
        current = adj.apply(current)
        acc += current
    return acc / (layers + 1)


def propagate_backward(grad_out: np.ndarray, adj: NormAdjacency, layers: int) -> np.ndarray:
    """Gradient of any scalar loss through propagate. A is symmetric and the
    map is linear, so the backward pass is propagate itself."""
    return propagate(grad_out, adj, layers)
