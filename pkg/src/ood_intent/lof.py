"""Exact Local Outlier Factor against a fixed reference set.

Neighbourhoods include every point tied with the k-th nearest distance,
so |N_k(A)| can exceed k. Stored points never count themselves as
neighbours; query points are scored against the stored set only.

A local reachability density is +inf when all reachability distances are
zero (A sits on top of its neighbours). Ratios lrd(B)/lrd(A) then follow
inf/inf = 1, inf/finite = inf and finite/inf = 0.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .metrics import binary_f1

CONTAMINATION_GRID = tuple(round(0.01 * i, 2) for i in range(1, 51))


def _density_ratio(lrd_b: np.ndarray, lrd_a: float) -> np.ndarray:
    if np.isinf(lrd_a):
        return np.where(np.isinf(lrd_b), 1.0, 0.0)
    return lrd_b / lrd_a


class NeighborIndex:
    """Reference vectors with precomputed k-distances, densities and LOF values."""

    def __init__(self, points, k: int = 20, chunk: int = 256):
        X = np.asarray(points, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("points must be a 2-d array")
        if not 0 < k < len(X):
            raise ValueError(f"k={k} needs more than k stored points, got {len(X)}")
        self.X, self.k, self.chunk = X, k, chunk
        self._sq = np.einsum("ij,ij->i", X, X)
        self.neighbors: list[np.ndarray] = []
        self.neighbor_dists: list[np.ndarray] = []
        kd = np.empty(len(X))
        for start in range(0, len(X), chunk):
            rows = np.arange(start, min(start + chunk, len(X)))
            for r, (idx, d, kdist) in zip(rows, self._knn(X[rows], exclude=rows)):
                self.neighbors.append(idx)
                self.neighbor_dists.append(d)
                kd[r] = kdist
        self.kdist = kd
        self.lrd_stored = np.array([self._lrd(idx, d) for idx, d in zip(self.neighbors, self.neighbor_dists)])
        self.lof_stored = np.array(
            [self._lof(idx, lrd) for idx, lrd in zip(self.neighbors, self.lrd_stored)]
        )

    def __len__(self) -> int:
        return len(self.X)

    def _knn(self, Q: np.ndarray, exclude: np.ndarray | None = None):
        """Exact neighbourhoods of each query row.

        Squared distances from the Gram expansion pick candidates; their
        rounding error is bounded by `slack`, and the final distances and
        tie set are recomputed exactly on the candidates.
        """
        qsq = np.einsum("ij,ij->i", Q, Q)
        d2 = qsq[:, None] + self._sq[None, :] - 2.0 * Q @ self.X.T
        np.maximum(d2, 0.0, out=d2)
        if exclude is not None:
            d2[np.arange(len(Q)), exclude] = np.inf
        kth = np.partition(d2, self.k - 1, axis=1)[:, self.k - 1]
        slack = 1e-8 * (qsq + self._sq.max()) + 1e-300
        out = []
        for r in range(len(Q)):
            cand = np.flatnonzero(d2[r] <= kth[r] + 2 * slack[r])
            dist = np.sqrt(np.sum((self.X[cand] - Q[r]) ** 2, axis=1))
            kdist = np.partition(dist, self.k - 1)[self.k - 1]
            keep = dist <= kdist
            out.append((cand[keep], dist[keep], kdist))
        return out

    def _lrd(self, idx: np.ndarray, dist: np.ndarray) -> float:
        total = np.maximum(self.kdist[idx], dist).sum()
        return np.inf if total == 0 else len(idx) / total

    def _lof(self, idx: np.ndarray, own_lrd: float) -> float:
        return float(_density_ratio(self.lrd_stored[idx], own_lrd).mean())

    def _query(self, point):
        if isinstance(point, (int, np.integer)):
            i = int(point)
            return self.neighbors[i], self.neighbor_dists[i], self.kdist[i]
        return self._knn(np.asarray(point, dtype=np.float64)[None, :])[0]

    def distance(self, a, b) -> float:
        va = self.X[a] if isinstance(a, (int, np.integer)) else np.asarray(a, dtype=np.float64)
        vb = self.X[b] if isinstance(b, (int, np.integer)) else np.asarray(b, dtype=np.float64)
        return float(np.sqrt(np.sum((va - vb) ** 2)))

    def neighborhood(self, point) -> np.ndarray:
        return self._query(point)[0]

    def k_distance(self, point) -> float:
        """Distance to the k-th nearest stored point; an int refers to a stored point."""
        return float(self._query(point)[2])

    def reach_dist(self, a, b: int) -> float:
        """max(kdist(b), d(a, b)) for a stored point b."""
        return max(float(self.kdist[b]), self.distance(a, b))

    def lrd(self, point) -> float:
        if isinstance(point, (int, np.integer)):
            return float(self.lrd_stored[int(point)])
        idx, dist, _ = self._query(point)
        return self._lrd(idx, dist)

    def lof_score(self, point) -> float:
        if isinstance(point, (int, np.integer)):
            return float(self.lof_stored[int(point)])
        idx, dist, _ = self._query(point)
        return self._lof(idx, self._lrd(idx, dist))

    def score(self, queries) -> np.ndarray:
        """LOF of many query vectors against the stored set."""
        Q = np.asarray(queries, dtype=np.float64)
        out = np.empty(len(Q))
        for start in range(0, len(Q), self.chunk):
            res = self._knn(Q[start:start + self.chunk])
            for j, (idx, dist, _) in enumerate(res):
                out[start + j] = self._lof(idx, self._lrd(idx, dist))
        return out


def k_distance(index: NeighborIndex, point) -> float:
    return index.k_distance(point)


def reach_dist(index: NeighborIndex, a, b: int) -> float:
    return index.reach_dist(a, b)


def lrd(index: NeighborIndex, point) -> float:
    return index.lrd(point)


def lof_score(index: NeighborIndex, point) -> float:
    return index.lof_score(point)


def _finite(x: np.ndarray) -> np.ndarray:
    big = np.finfo(np.float64).max
    return np.clip(np.asarray(x, dtype=np.float64), -big, big)


def tune_contamination(valid_scores, valid_is_ood, train_scores,
                       grid: Sequence[float] = CONTAMINATION_GRID) -> tuple[float, float]:
    """Pick the contamination rate whose implied threshold maximises validation macro-F1.

    A rate c flags the top c fraction of training-point LOF values, i.e. the
    threshold is their (1 - c) quantile. Returns (rate, threshold); the
    smaller rate wins ties.
    """
    valid_scores, train_scores = _finite(valid_scores), _finite(train_scores)
    labels = np.asarray(valid_is_ood, dtype=bool)
    if labels.all() or not labels.any():
        raise ValueError("validation must contain both ID and OOD examples")
    best = None
    for c in grid:
        t = float(np.quantile(train_scores, 1.0 - c))
        f1 = binary_f1((valid_scores, labels), t)[0]
        if best is None or f1 > best[0]:
            best = (f1, c, t)
    return best[1], best[2]
