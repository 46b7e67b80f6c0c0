"""Target extraction: heatmap-seeded K-means, DBI model selection, outlier
removal and rotational-symmetry detection.

Clustering works on (x, y) only. Every routine accepts an event container
(anything with ``x``/``y`` arrays) or a plain (N, 2) array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyInput,
    ExtractionFailed,
    InsufficientCandidates,
    SymmetryUndetermined,
    UndefinedMetric,
)

DEFAULT_GRID = 4
DEFAULT_EPSILON = 0.3
MAX_ITER = 100
CONVERGED_SHIFT = 0.5
# above this best multi-cluster DBI the scene is read as a single target
SINGLE_TARGET_DBI = 0.65
# same rule for blades; sector splits of one blade score >= ~0.63
SINGLE_BLADE_DBI = 0.58
SYMMETRY_EVENTS = 300
MAX_BLADES = 6


def as_xy(events) -> np.ndarray:
    if hasattr(events, "x") and hasattr(events, "y"):
        return np.column_stack([events.x, events.y]).astype(np.float64)
    pts = np.asarray(events, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 2:
        raise ValueError("expected an (N, 2) point array or an event container")
    return pts[:, :2]


@dataclass(frozen=True)
class Heatmap:
    grid_size: int
    width: int
    height: int
    counts: np.ndarray  # shape (rows, cols)

    @property
    def cols(self) -> int:
        return self.counts.shape[1]

    @property
    def rows(self) -> int:
        return self.counts.shape[0]

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        """Mean pixel coordinate of the pixels the cell covers."""
        g = self.grid_size
        x0, x1 = col * g, min((col + 1) * g, self.width)
        y0, y1 = row * g, min((row + 1) * g, self.height)
        return ((x0 + x1 - 1) / 2.0, (y0 + y1 - 1) / 2.0)

    def to_csv(self) -> str:
        return "\n".join(",".join(str(int(v)) for v in row) for row in self.counts) + "\n"


def build_heatmap(events, grid_size: int = DEFAULT_GRID, width: int | None = None, height: int | None = None) -> Heatmap:
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    xy = as_xy(events).astype(np.int64)
    # bare arrays carry no geometry: use the bounding box of the points
    if width is None:
        width = getattr(events, "width", None) or int(xy[:, 0].max(initial=0)) + 1
    if height is None:
        height = getattr(events, "height", None) or int(xy[:, 1].max(initial=0)) + 1
    cols = -(-width // grid_size)
    rows = -(-height // grid_size)
    counts = np.zeros((rows, cols), dtype=np.int64)
    np.add.at(counts, (xy[:, 1] // grid_size, xy[:, 0] // grid_size), 1)
    return Heatmap(grid_size, width, height, counts)


def init_centroids(heatmap: Heatmap, k: int, epsilon: float = DEFAULT_EPSILON) -> list[tuple[float, float]]:
    """Densest cell first, then greedily the candidate cell (count > epsilon * max)
    with the largest mean distance to the centroids chosen so far."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must be in (0, 1)")
    counts = heatmap.counts
    h = counts.max() if counts.size else 0
    if h <= 0:
        raise InsufficientCandidates("heatmap is empty")
    # row-major flat order gives the lexicographic (row, col) tie rule for free
    flat = counts.ravel()
    first = int(np.argmax(flat))
    cand = np.flatnonzero(flat > epsilon * h)
    if len(cand) < k:
        raise InsufficientCandidates(f"{len(cand)} candidate cells for k={k}")
    rows, cols = np.divmod(cand, heatmap.cols)
    centers = np.array([heatmap.cell_center(r, c) for r, c in zip(rows, cols)])

    chosen = [int(np.flatnonzero(cand == first)[0])]
    dist_sum = np.linalg.norm(centers - centers[chosen[0]], axis=1)
    available = np.ones(len(cand), dtype=bool)
    available[chosen[0]] = False
    while len(chosen) < k:
        score = np.where(available, dist_sum, -np.inf)
        nxt = int(np.argmax(score))
        chosen.append(nxt)
        available[nxt] = False
        dist_sum += np.linalg.norm(centers - centers[nxt], axis=1)
    return [tuple(map(float, centers[i])) for i in chosen]


@dataclass(frozen=True)
class ClusterResult:
    k: int
    centroids: np.ndarray  # (k, 2)
    assignment: np.ndarray  # (N,) cluster index per event
    dbi: float  # NaN when k == 1
    iterations: int = 0

    def members(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == i)


def _assign(xy: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = ((xy[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=1)


def _means(xy: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.bincount(labels, minlength=k)
    sx = np.bincount(labels, weights=xy[:, 0], minlength=k)
    sy = np.bincount(labels, weights=xy[:, 1], minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.column_stack([sx / n, sy / n]), n


def kmeans(events, init: Sequence[tuple[float, float]] | np.ndarray) -> ClusterResult:
    """Lloyd iterations from the given centroids. Clusters that empty out are
    dropped, so the returned ``k`` may be smaller than ``len(init)``."""
    xy = as_xy(events)
    if len(xy) == 0:
        raise EmptyInput("cannot cluster an empty event set")
    centroids = np.asarray(init, dtype=np.float64).reshape(-1, 2)
    if len(centroids) == 0:
        raise ValueError("need at least one initial centroid")
    it = 0
    while True:
        it += 1
        labels = _assign(xy, centroids)
        new, n = _means(xy, labels, len(centroids))
        keep = n > 0
        if not keep.all():
            # drop empty clusters and relabel densely
            remap = np.cumsum(keep) - 1
            labels = remap[labels]
            new, centroids = new[keep], centroids[keep]
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < CONVERGED_SHIFT or it >= MAX_ITER:
            break
    k = len(centroids)
    res = ClusterResult(k, centroids, labels, math.nan, it)
    if k >= 2:
        res = ClusterResult(k, centroids, labels, dbi(res, xy), it)
    return res


def dbi(result: ClusterResult, events) -> float:
    """Davies-Bouldin index of a partition (mean Euclidean dispersion)."""
    if result.k < 2:
        raise UndefinedMetric("DBI needs at least two clusters")
    xy = as_xy(events)
    c = np.asarray(result.centroids, dtype=np.float64)
    lab = result.assignment
    d = np.sqrt(((xy - c[lab]) ** 2).sum(axis=1))
    n = np.bincount(lab, minlength=result.k)
    disp = np.bincount(lab, weights=d, minlength=result.k) / n
    sep = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1))
    np.fill_diagonal(sep, np.inf)
    sim = (disp[:, None] + disp[None, :]) / sep
    return float(sim.max(axis=1).mean())


def select_k(
    events,
    k_candidates: Iterable[int] = range(2, 7),
    *,
    grid_size: int = DEFAULT_GRID,
    epsilon: float = DEFAULT_EPSILON,
    single_target_dbi: float = SINGLE_TARGET_DBI,
) -> ClusterResult:
    """Cluster with every candidate k and keep the partition of lowest DBI.

    A single cluster is returned instead when no multi-cluster partition has
    DBI at or below ``single_target_dbi``.
    """
    xy = as_xy(events)
    if len(xy) == 0:
        raise EmptyInput("cannot select k on an empty event set")
    hm = build_heatmap(events, grid_size)
    best: ClusterResult | None = None
    ks = sorted(set(k_candidates))
    for k in ks:
        if k < 2:
            continue
        try:
            init = init_centroids(hm, k, epsilon)
        except InsufficientCandidates:
            continue
        res = kmeans(xy, init)
        if res.k < 2:
            continue
        if best is None or (res.dbi, res.k) < (best.dbi, best.k):
            best = res
    if best is not None and best.dbi <= single_target_dbi:
        return best
    try:
        return kmeans(xy, init_centroids(hm, 1, epsilon))
    except InsufficientCandidates:
        raise ExtractionFailed("no candidate k produced a valid clustering") from None


def median_distance(d: np.ndarray) -> float:
    return float(np.median(d))


def remove_outliers(events, centroid: tuple[float, float]) -> np.ndarray:
    """Boolean keep-mask: events within 3x the median distance to ``centroid``."""
    xy = as_xy(events)
    if len(xy) == 0:
        raise EmptyInput("cluster is empty")
    d = np.sqrt(((xy - np.asarray(centroid, dtype=np.float64)) ** 2).sum(axis=1))
    return d <= 3.0 * median_distance(d)


@dataclass(frozen=True)
class SymmetryInfo:
    n_repeats: int
    theta_c: float

    @classmethod
    def from_repeats(cls, n: int) -> SymmetryInfo:
        return cls(n, 2.0 * math.pi / n)


def kmeans_pp_init(xy: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [xy[rng.integers(len(xy))]]
    d2 = ((xy - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(len(xy))
        else:
            idx = rng.choice(len(xy), p=d2 / total)
        centers.append(xy[idx])
        d2 = np.minimum(d2, ((xy - xy[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _sse(xy: np.ndarray, res: ClusterResult) -> float:
    return float(((xy - res.centroids[res.assignment]) ** 2).sum())


def symmetry_angle(
    cluster,
    n_events: int = SYMMETRY_EVENTS,
    *,
    max_blades: int = MAX_BLADES,
    n_init: int = 5,
    seed: int = 0,
    single_target_dbi: float = SINGLE_BLADE_DBI,
) -> SymmetryInfo:
    """Count the blades in the first ``n_events`` events (in time order).

    Events must already be time ordered. For each blade count the best of
    ``n_init`` k-means++ restarts (lowest SSE) is scored by DBI.
    """
    xy = as_xy(cluster)
    if len(xy) < n_events:
        raise SymmetryUndetermined(f"{len(xy)} events, need {n_events}")
    xy = xy[:n_events]
    rng = np.random.default_rng(seed)
    best_b, best_dbi = 1, math.inf
    for b in range(2, max_blades + 1):
        runs = [kmeans(xy, kmeans_pp_init(xy, b, rng)) for _ in range(n_init)]
        runs = [r for r in runs if r.k == b]
        if not runs:
            continue
        res = min(runs, key=lambda r: _sse(xy, r))
        if res.dbi < best_dbi:
            best_b, best_dbi = b, res.dbi
    if best_dbi > single_target_dbi:
        best_b = 1
    return SymmetryInfo.from_repeats(best_b)
