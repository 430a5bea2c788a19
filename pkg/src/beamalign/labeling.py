"""Ground-truth labels: oracle DFT beam, fine beam direction, direction clusters."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import Dataset
from .codebook import DftCodebook, dft_codebook
from .errors import DegenerateInputError, DimensionError, DomainError
from .numerics import STREAM_KMEANS, RngStream, stream_id

DEFAULT_FINE_GRID = 1024


def oracle_best_beam(h, codebook: DftCodebook) -> int:
    """Noiseless ``argmax_i |h^H v_i|^2``; ties go to the lowest index."""
    h = np.asarray(h, dtype=np.complex128)
    if h.shape[-1] != codebook.n_antennas:
        raise DimensionError(f"channel length {h.shape[-1]} vs {codebook.n_antennas} antennas")
    return int(np.argmax(np.abs(h.conj() @ codebook.beams) ** 2))


def oracle_best_beams(channels: np.ndarray, codebook: DftCodebook) -> np.ndarray:
    """Vectorised :func:`oracle_best_beam` over the rows of ``channels``."""
    channels = np.asarray(channels, dtype=np.complex128)
    if channels.shape[-1] != codebook.n_antennas:
        raise DimensionError("channel length does not match the codebook")
    return np.argmax(np.abs(channels.conj() @ codebook.beams) ** 2, axis=-1)


def fine_direction(h, n_grid: int = DEFAULT_FINE_GRID, spacing: float = 0.5) -> float:
    """Sine of the winning beam direction in an ``n_grid``-beam DFT codebook."""
    return float(fine_directions(np.asarray(h)[None, :], n_grid, spacing)[0])


def fine_directions(channels: np.ndarray, n_grid: int = DEFAULT_FINE_GRID,
                    spacing: float = 0.5, chunk: int = 2048) -> np.ndarray:
    channels = np.asarray(channels, dtype=np.complex128)
    grid = dft_codebook(channels.shape[1], n_grid, spacing)
    out = np.empty(len(channels))
    for s in range(0, len(channels), chunk):
        out[s:s + chunk] = grid.sin_values[oracle_best_beams(channels[s:s + chunk], grid)]
    return out


# ---------------------------------------------------------------------------
# 1-D k-means


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray  # ascending

    @property
    def n_groups(self) -> int:
        return len(self.centroids)

    def assign(self, values) -> np.ndarray:
        """Nearest centroid; a value exactly between two goes to the lower one."""
        values = np.asarray(values, dtype=float)
        return np.argmin(np.abs(values[..., None] - self.centroids), axis=-1)

    def cells(self) -> list:
        """Voronoi cell ``(low, high)`` of each centroid within [-1, 1]."""
        mids = (self.centroids[1:] + self.centroids[:-1]) / 2
        edges = np.concatenate([[-1.0], mids, [1.0]])
        return [(float(edges[k]), float(edges[k + 1])) for k in range(self.n_groups)]


def sse(values: np.ndarray, assignment: np.ndarray, centroids: np.ndarray) -> float:
    """Within-cluster sum of squared distances."""
    return float(np.sum((values - centroids[assignment]) ** 2))


def _farthest_point_seeds(values: np.ndarray, k: int, first: float) -> np.ndarray:
    seeds = [first]
    dist = np.abs(values - first)
    for _ in range(k - 1):
        nxt = values[int(np.argmax(dist))]
        seeds.append(nxt)
        dist = np.minimum(dist, np.abs(values - nxt))
    return np.sort(np.asarray(seeds))


def _lloyd(values: np.ndarray, centroids: np.ndarray, max_iter: int):
    history = []
    assignment = None
    for _ in range(max_iter):
        new = np.argmin(np.abs(values[:, None] - centroids[None, :]), axis=1)
        counts = np.bincount(new, minlength=len(centroids))
        while (counts == 0).any():
            # move the point farthest from its centroid into the empty cluster
            empty = int(np.argmin(counts))
            dist = np.abs(values - centroids[new])
            dist[counts[new] <= 1] = -1.0
            j = int(np.argmax(dist))
            new[j] = empty
            centroids = centroids.copy()
            centroids[empty] = values[j]
            counts = np.bincount(new, minlength=len(centroids))
        history.append(sse(values, new, centroids))
        if assignment is not None and np.array_equal(new, assignment):
            break
        assignment = new
        sums = np.bincount(assignment, weights=values, minlength=len(centroids))
        centroids = sums / counts
        history.append(sse(values, assignment, centroids))
    return centroids, assignment, history


def _quantile_seeds(values: np.ndarray, k: int) -> np.ndarray:
    # medians of k equal-count slices of the sorted values
    parts = np.array_split(np.sort(values), k)
    return np.array([np.median(p) for p in parts])


def _d2_seeds(values: np.ndarray, k: int, rng: RngStream) -> np.ndarray:
    seeds = [values[int(rng.integers(len(values)))]]
    dist = (values - seeds[0]) ** 2
    for _ in range(k - 1):
        total = dist.sum()
        if total <= 0:
            break
        nxt = values[int(rng.generator.choice(len(values), p=dist / total))]
        seeds.append(nxt)
        dist = np.minimum(dist, (values - nxt) ** 2)
    return np.sort(np.asarray(seeds))


def _hartigan(values: np.ndarray, centroids: np.ndarray, assignment: np.ndarray,
              history: list, max_pass: int = 50):
    """Block transfers that strictly lower the sum of squares.

    All copies of a value move together: shifting ``w`` copies of ``x`` from
    cluster a (size n_a) to b changes the objective by
    ``n_b w/(n_b+w) |x-c_b|^2 - n_a w/(n_a-w) |x-c_a|^2``. A Lloyd fixpoint
    can still admit such moves, notably when duplicated values have to
    change cluster together.
    """
    distinct, first, weight = np.unique(values, return_index=True, return_counts=True)
    dist_assign = assignment[first].copy()
    if not np.array_equal(dist_assign[np.searchsorted(distinct, values)], assignment):
        return centroids, assignment, history        # split duplicates: leave as is
    k = len(centroids)
    counts = np.bincount(dist_assign, weights=weight, minlength=k)
    sums = np.bincount(dist_assign, weights=weight * distinct, minlength=k)
    for _ in range(max_pass):
        moved = False
        for i, x in enumerate(distinct):
            a, w = dist_assign[i], weight[i]
            if counts[a] <= w:
                continue
            c = sums / counts
            remove = counts[a] * w / (counts[a] - w) * (x - c[a]) ** 2
            add = counts * w / (counts + w) * (x - c) ** 2
            add[a] = np.inf
            b = int(np.argmin(add))
            if add[b] < remove * (1 - 1e-12):
                counts[a] -= w
                counts[b] += w
                sums[a] -= w * x
                sums[b] += w * x
                dist_assign[i] = b
                moved = True
        if not moved:
            break
        assignment = dist_assign[np.searchsorted(distinct, values)]
        counts = np.bincount(assignment, minlength=k).astype(float)
        sums = np.bincount(assignment, weights=values, minlength=k)
        centroids = sums / counts
        history.append(sse(values, assignment, centroids))
    return centroids, assignment, history


def kmeans_1d(values, n_groups: int, seed: int = 0, n_init: int = 60,
              max_iter: int = 300):
    """Cluster scalar values with Lloyd iterations.

    Restarts alternate three seedings: farthest-point traversal from a
    randomly drawn first value, equal-count quantile medians, and squared-
    distance-weighted sampling. The restart with the smallest within-cluster
    sum of squares wins. Each Lloyd run is followed by Hartigan-style block
    transfers, which escape Lloyd fixpoints without raising the objective.
    Returns ``(model, assignments, history)`` where
    ``history`` is the objective recorded after every assignment and every
    update step of the winning restart.
    """
    values = np.asarray(values, dtype=float)
    if n_groups < 1:
        raise DomainError("need at least one group")
    distinct = np.unique(values)
    if len(distinct) < n_groups:
        raise DegenerateInputError(
            f"{len(distinct)} distinct values cannot form {n_groups} groups")
    rng = RngStream(seed, stream_id(STREAM_KMEANS))
    inits = [_quantile_seeds(values, n_groups)]
    for r in range(max(n_init - 1, 0)):
        if r % 2 == 0:
            first = float(distinct[int(rng.integers(len(distinct)))])
            inits.append(_farthest_point_seeds(distinct, n_groups, first))
        else:
            inits.append(_d2_seeds(values, n_groups, rng))
    best = None
    for init in inits:
        if len(np.unique(init)) < n_groups:
            # duplicate seeds: fall back to a farthest-point fill
            init = _farthest_point_seeds(distinct, n_groups, float(init[0]))
        centroids, assignment, history = _lloyd(values, init, max_iter)
        centroids, assignment, history = _hartigan(values, centroids, assignment, history)
        score = sse(values, assignment, centroids)
        if best is None or score < best[0]:
            best = (score, centroids, assignment, history)
    _, centroids, assignment, history = best
    order = np.argsort(centroids, kind="stable")
    relabel = np.empty_like(order)
    relabel[order] = np.arange(len(order))
    return ClusterModel(centroids[order]), relabel[assignment], history


# ---------------------------------------------------------------------------
# label sets


@dataclass
class LabelSet:
    oracle: np.ndarray     # index into the transmission codebook
    sin_psi: np.ndarray    # fine-grid direction
    group: np.ndarray      # cluster id
    n_beams: int
    clusters: ClusterModel
    sample_ids: Optional[np.ndarray] = None

    @property
    def n_groups(self) -> int:
        return self.clusters.n_groups

    def __len__(self) -> int:
        return len(self.oracle)

    @property
    def group_onehot(self) -> np.ndarray:
        return np.eye(self.n_groups)[self.group]

    @property
    def beam_onehot(self) -> np.ndarray:
        return np.eye(self.n_beams)[self.oracle]

    def subset(self, indices) -> "LabelSet":
        ids = None if self.sample_ids is None else self.sample_ids[indices]
        return LabelSet(self.oracle[indices], self.sin_psi[indices], self.group[indices],
                        self.n_beams, self.clusters, ids)


def build_labels(ds: Dataset, codebook: DftCodebook, n_grid: int = DEFAULT_FINE_GRID,
                 n_groups: int = 4, seed: int = 0,
                 clusters: Optional[ClusterModel] = None) -> LabelSet:
    """Oracle beams, fine directions and group ids for every sample.

    Clustering is fitted on ``ds`` unless an existing ``clusters`` model is
    supplied (used to label a test split with the training clusters).
    """
    if len(ds) == 0:
        raise DomainError("empty dataset")
    if n_grid < codebook.size:
        raise DomainError("fine grid must be at least as large as the codebook")
    oracle = oracle_best_beams(ds.channels, codebook)
    sin_psi = fine_directions(ds.channels, n_grid, codebook.spacing)
    if clusters is None:
        clusters, group, _ = kmeans_1d(sin_psi, n_groups, seed)
    else:
        group = clusters.assign(sin_psi)
    return LabelSet(oracle, sin_psi, np.asarray(group), codebook.size, clusters,
                    np.asarray(ds.ids))


def save_labels(labels: LabelSet, path) -> None:
    ids = labels.sample_ids if labels.sample_ids is not None else np.arange(len(labels))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "oracle_index", "sin_psi", "group_id"])
        for i in range(len(labels)):
            w.writerow([int(ids[i]), int(labels.oracle[i]), repr(float(labels.sin_psi[i])),
                        int(labels.group[i])])


def load_label_rows(path):
    """Read a label cache; returns ``(sample_id, oracle, sin_psi, group)`` arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([int(r["sample_id"]) for r in rows]),
            np.array([int(r["oracle_index"]) for r in rows]),
            np.array([float(r["sin_psi"]) for r in rows]),
            np.array([int(r["group_id"]) for r in rows]))
