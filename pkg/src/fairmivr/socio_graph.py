"""Zone graph construction and fairness weights.

Builds the Gaussian distance kernel between zone centroids, correlates the
zones' demographic histories, combines the two into a sparse enriched
adjacency and extracts per-zone fairness weights from its leading rank-one
component.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

ENRICH_THRESHOLD = 0.1
WEIGHT_SPREAD = 0.1


class GraphError(ValueError):
    """Raised for degenerate or inconsistent graph inputs."""


@dataclass(frozen=True)
class ZoneSet:
    zone_ids: tuple[int, ...]
    xy: np.ndarray  # (n, 2) projected centroids in meters

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise GraphError(f"centroids must have shape (n, 2), got {xy.shape}")
        if len(self.zone_ids) != xy.shape[0]:
            raise GraphError("zone_ids and centroids differ in length")
        if len(self.zone_ids) < 1:
            raise GraphError("zone set is empty")
        if len(set(self.zone_ids)) != len(self.zone_ids):
            raise GraphError("zone ids are not unique")
        if not np.all(np.isfinite(xy)):
            raise GraphError("centroids must be finite")
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "zone_ids", tuple(int(z) for z in self.zone_ids))

    @property
    def n(self) -> int:
        return len(self.zone_ids)

    def index(self, zone_id: int) -> int:
        try:
            return self.zone_ids.index(int(zone_id))
        except ValueError:
            raise KeyError(f"unknown zone id {zone_id}") from None

    def distances(self) -> np.ndarray:
        """Pairwise Euclidean centroid distances in meters."""
        diff = self.xy[:, None, :] - self.xy[None, :, :]
        return np.sqrt((diff**2).sum(axis=-1))


@dataclass(frozen=True)
class RankOne:
    value: float
    left: np.ndarray
    right: np.ndarray
    iterations: int
    converged: bool

    def matrix(self) -> np.ndarray:
        return self.value * np.outer(self.left, self.right)


def distance_sigma(dist: np.ndarray) -> float:
    """Std of the n(n-1)/2 distinct pairwise distances (one global scalar)."""
    iu = np.triu_indices(dist.shape[0], k=1)
    return float(np.std(dist[iu]))


def build_distance_adjacency(zones: ZoneSet) -> np.ndarray:
    if zones.n < 2:
        raise GraphError("distance adjacency needs at least two zones")
    dist = zones.distances()
    sigma = distance_sigma(dist)
    if sigma <= 0.0:
        raise GraphError("degenerate geometry: all pairwise distances are equal")
    W = np.exp(-(dist**2) / sigma**2)
    np.fill_diagonal(W, 1.0)
    return W


def build_demo_correlation(demo) -> np.ndarray:
    """Pearson correlation between zone demographic vectors.

    Rows of ``demo`` are the per-zone vectors z_i. Any pair involving a
    constant (including all-zero) vector gets 0.
    """
    Z = np.asarray(demo, dtype=float)
    if Z.ndim != 2:
        raise GraphError("demographic table must be 2-D (zones x features)")
    if Z.shape[1] < 2:
        raise GraphError("demographic vectors need at least two entries")
    centered = Z - Z.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered**2).sum(axis=1))
    valid = norms > 0.0
    safe = np.where(valid, norms, 1.0)
    unit = centered / safe[:, None]
    corr = unit @ unit.T
    corr[~valid, :] = 0.0
    corr[:, ~valid] = 0.0
    np.clip(corr, -1.0, 1.0, out=corr)
    idx = np.flatnonzero(valid)
    corr[idx, idx] = 1.0
    return corr


def enrich_adjacency(W: np.ndarray, corr: np.ndarray, threshold: float = ENRICH_THRESHOLD) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    corr = np.asarray(corr, dtype=float)
    if W.shape != corr.shape:
        raise GraphError(f"shape mismatch: {W.shape} vs {corr.shape}")
    prod = W * corr
    return np.where(prod >= threshold, prod, 0.0)


def rank_one_decompose(Wstar: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> RankOne:
    """Leading singular triple of ``Wstar`` by power iteration on W^T W.

    The start vector is the normalized all-ones vector, so the result is
    deterministic. ``right`` is signed so its largest-magnitude entry is
    positive.
    """
    A = np.asarray(Wstar, dtype=float)
    if A.ndim != 2:
        raise GraphError("expected a matrix")
    if not np.any(A):
        raise GraphError("cannot decompose an all-zero matrix")
    G = A.T @ A
    v = np.ones(A.shape[1]) / np.sqrt(A.shape[1])
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = G @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start vector orthogonal to the row space; fall back to a basis vector
            v = np.zeros_like(v)
            v[int(np.argmax(np.abs(A).sum(axis=0)))] = 1.0
            continue
        w /= norm
        if np.linalg.norm(w - v) < tol:
            v = w
            converged = True
            break
        v = w
    if not converged:
        logger.warning("power iteration stopped after %d iterations without converging", it)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    u = A @ v
    sigma = float(np.linalg.norm(u))
    u = u / sigma
    return RankOne(sigma, u, v, it, converged)


def fairness_weights(b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    lo, hi = b.min(), b.max()
    if hi - lo <= 0.0:
        return np.ones_like(b)
    scaled = (b - lo) / (hi - lo)
    return 1.0 - WEIGHT_SPREAD * scaled


def normalize_adjacency(Wstar: np.ndarray) -> np.ndarray:
    """Row-stochastic version of ``Wstar``; empty rows become self-loops."""
    A = np.asarray(Wstar, dtype=float)
    sums = A.sum(axis=1)
    out = np.zeros_like(A)
    nz = sums > 0
    out[nz] = A[nz] / sums[nz, None]
    empty = np.flatnonzero(~nz)
    out[empty, empty] = 1.0
    return out


@dataclass(frozen=True)
class ZoneGraph:
    zones: ZoneSet
    distance_adjacency: np.ndarray
    correlation: np.ndarray
    enriched: np.ndarray
    rank_one: RankOne
    weights: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        return normalize_adjacency(self.enriched)


def build_zone_graph(zones: ZoneSet, demo) -> ZoneGraph:
    """Run the whole chain: kernel, correlation, enrichment, weights."""
    W = build_distance_adjacency(zones)
    corr = build_demo_correlation(demo)
    if corr.shape != W.shape:
        raise GraphError("demographic table does not cover the zone set")
    Wstar = enrich_adjacency(W, corr)
    r1 = rank_one_decompose(Wstar)
    return ZoneGraph(zones, W, corr, Wstar, r1, fairness_weights(r1.right))
