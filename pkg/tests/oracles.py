"""Independent reference implementations used as test oracles.

Everything here is written straight from the definitions with plain
Python loops and sets, deliberately avoiding the vectorized code paths in
the package so that agreement between the two is meaningful.
"""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import numpy as np


def pairwise_sq_oracle(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = float(np.sum((x[i] - x[j]) ** 2))
    return out


def cross_agreement_oracle(lists_a: np.ndarray, lists_b: np.ndarray) -> np.ndarray:
    scores = []
    for row_a, row_b in zip(lists_a, lists_b):
        sa, sb = set(int(v) for v in row_a), set(int(v) for v in row_b)
        scores.append(len(sa & sb) / len(sa | sb))
    return np.array(scores)


def dbscan_oracle(
    dist: np.ndarray, eps: float, min_samples: int
) -> Tuple[np.ndarray, int]:
    """Brute-force DBSCAN: union-find over every core-core pair, border
    points claimed by their lowest-indexed core neighbor, labels renumbered
    by first appearance."""
    d = np.asarray(dist, dtype=np.float64)
    n = d.shape[0]
    near = [[j for j in range(n) if j != i and d[i, j] <= eps] for i in range(n)]
    core = [len(near[i]) >= min_samples for i in range(n)]

    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        if not core[i]:
            continue
        for j in near[i]:
            if core[j] and j > i:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj

    raw = [-1] * n
    for i in range(n):
        if core[i]:
            raw[i] = find(i)
        else:
            claimants = [j for j in near[i] if core[j]]
            if claimants:
                raw[i] = find(min(claimants))

    remap: Dict[int, int] = {}
    labels = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if raw[i] == -1:
            continue
        if raw[i] not in remap:
            remap[raw[i]] = len(remap)
        labels[i] = remap[raw[i]]
    return labels, len(remap)


def k_reciprocal_oracle(
    features: np.ndarray, k1: int, k2: int, blend_lambda: float
) -> np.ndarray:
    """Definition-level k-reciprocal Jaccard distance with explicit sets."""
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    d = pairwise_sq_oracle(x)
    dmax = d.max()
    dn = d / dmax if dmax > 0 else d
    ranking = [sorted(range(n), key=lambda j, i=i: (dn[i, j], j)) for i in range(n)]

    def top(i: int, depth: int) -> set:
        return set(ranking[i][: depth + 1])

    def reciprocal(i: int, depth: int) -> set:
        return {j for j in top(i, depth) if i in top(j, depth)}

    half = int(round(k1 / 2))
    v = np.zeros((n, n))
    for i in range(n):
        base = reciprocal(i, k1)
        expanded = set(base)
        for q in sorted(base):
            cand = reciprocal(q, half)
            if 3 * len(cand & base) >= 2 * len(cand):
                expanded |= cand
        idx = sorted(expanded)
        weights = np.array([np.exp(-dn[i, j]) for j in idx])
        v[i, idx] = weights / weights.sum()

    if k2 > 1:
        expanded_v = np.zeros_like(v)
        for i in range(n):
            neighbors = ranking[i][:k2]
            expanded_v[i] = sum(v[j] for j in neighbors) / k2
        v = expanded_v

    jaccard = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            mins = float(np.minimum(v[i], v[j]).sum())
            maxs = float(np.maximum(v[i], v[j]).sum())
            jaccard[i, j] = 1.0 - mins / maxs

    final = (1.0 - blend_lambda) * jaccard + blend_lambda * dn
    final = (final + final.T) / 2.0
    np.fill_diagonal(final, 0.0)
    return np.clip(final, 0.0, 1.0)


def average_precision_oracle(relevance: Sequence[bool]) -> float:
    hits = 0
    total = 0.0
    for position, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            total += hits / position
    if hits == 0:
        raise ValueError("no relevant item")
    return total / hits


def map_cmc_oracle(
    query_feats: np.ndarray,
    gallery_feats: np.ndarray,
    query_ids: np.ndarray,
    gallery_ids: np.ndarray,
    query_cams: np.ndarray,
    gallery_cams: np.ndarray,
    ranks: Sequence[int],
) -> Tuple[float, Dict[int, float], int]:
    aps: List[float] = []
    cmc_hits = {r: 0 for r in ranks}
    excluded = 0
    for i in range(len(query_feats)):
        dists = [
            float(np.sum((query_feats[i] - gallery_feats[j]) ** 2))
            for j in range(len(gallery_feats))
        ]
        order = sorted(range(len(gallery_feats)), key=lambda j: (dists[j], j))
        kept = [
            j
            for j in order
            if not (gallery_ids[j] == query_ids[i] and gallery_cams[j] == query_cams[i])
        ]
        relevance = [bool(gallery_ids[j] == query_ids[i]) for j in kept]
        if not any(relevance):
            excluded += 1
            continue
        aps.append(average_precision_oracle(relevance))
        first = relevance.index(True)
        for r in ranks:
            if first < r:
                cmc_hits[r] += 1
    if not aps:
        raise ValueError("no valid query")
    return (
        float(np.mean(aps)),
        {r: cmc_hits[r] / len(aps) for r in ranks},
        excluded,
    )


def fd_gradient(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    grad_flat = grad.ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        up = fn(x)
        flat[idx] = orig - step
        down = fn(x)
        flat[idx] = orig
        grad_flat[idx] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)
