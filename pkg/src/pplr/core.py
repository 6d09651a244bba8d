"""Shared domain types: feature banks, pseudo-labels, ranked lists, soft labels.

Every container in this module is immutable after construction (frozen
dataclass holding read-only array copies), so instances can be shared freely
across worker threads. All validation happens in ``__post_init__``; an
invalid instance cannot exist.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

NORM_ATOL = 1e-6
PROB_SUM_ATOL = 1e-6

GLOBAL_SPACE = "global"


def part_space(n: int) -> str:
    """Canonical space id for the n-th part feature space."""
    return f"part{n}"


class PPLRError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PPLRError):
    """Invalid configuration value or unknown configuration key."""


class DataFormatError(PPLRError):
    """Malformed serialized artifact (bad magic, truncation, and so on)."""


class NumericalError(PPLRError):
    """Numerically invalid data: NaN/inf entries, zero-norm rows."""


def _frozen(values: np.ndarray) -> np.ndarray:
    out = np.array(values, copy=True)
    out.flags.writeable = False
    return out


def l2_normalize(matrix: np.ndarray) -> np.ndarray:
    """Scale every row of a 2-D matrix to unit Euclidean norm.

    Computation is done in float64 regardless of input dtype so that
    normalizing twice is a no-op to within 1e-12.

    Raises:
        NumericalError: on non-finite entries or an all-zero row; the
            message names the first offending row.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        bad = int(np.flatnonzero(~np.isfinite(m).all(axis=1))[0])
        raise NumericalError(f"non-finite entry in row {bad}")
    norms = np.linalg.norm(m, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise NumericalError(f"zero-norm row {int(zero[0])}")
    return m / norms[:, None]


def one_hot(label: int, k: int) -> np.ndarray:
    """Length-k float64 indicator vector for ``label``."""
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range for {k} clusters")
    vec = np.zeros(k, dtype=np.float64)
    vec[label] = 1.0
    return vec


@dataclass(frozen=True, eq=False)
class FeatureBank:
    """One global plus ``n_parts`` part feature matrices for N samples.

    ``camera_ids`` and ``gt_ids`` are optional per-sample integer vectors;
    ``gt_ids`` exists only for synthetic data where ground truth is known.
    The ``normalized`` flag asserts that every row of every matrix has unit
    L2 norm (checked at construction).
    """

    global_feats: np.ndarray
    part_feats: Tuple[np.ndarray, ...]
    camera_ids: Optional[np.ndarray] = None
    gt_ids: Optional[np.ndarray] = None
    normalized: bool = False

    def __post_init__(self) -> None:
        g = np.asarray(self.global_feats)
        if g.ndim != 2 or not np.issubdtype(g.dtype, np.floating):
            raise ValueError("global features must be a 2-D float matrix")
        parts = tuple(np.asarray(p) for p in self.part_feats)
        if not parts:
            raise ValueError("at least one part feature space is required")
        n, dim = g.shape
        for idx, p in enumerate(parts):
            if p.shape != (n, dim):
                raise ValueError(
                    f"part {idx} has shape {p.shape}, expected {(n, dim)}"
                )
        for space_id, m in [(GLOBAL_SPACE, g)] + [
            (part_space(i), p) for i, p in enumerate(parts)
        ]:
            if not np.all(np.isfinite(m)):
                raise NumericalError(f"non-finite entry in {space_id} features")
            if self.normalized:
                norms = np.linalg.norm(np.asarray(m, dtype=np.float64), axis=1)
                if np.any(np.abs(norms - 1.0) > NORM_ATOL):
                    raise ValueError(
                        f"bank flagged normalized but {space_id} rows are not unit-norm"
                    )
        object.__setattr__(self, "global_feats", _frozen(g))
        object.__setattr__(self, "part_feats", tuple(_frozen(p) for p in parts))
        for name in ("camera_ids", "gt_ids"):
            vec = getattr(self, name)
            if vec is None:
                continue
            arr = np.asarray(vec)
            if arr.shape != (n,) or not np.issubdtype(arr.dtype, np.integer):
                raise ValueError(f"{name} must be a length-{n} integer vector")
            object.__setattr__(self, name, _frozen(arr.astype(np.int64)))

    @property
    def n_samples(self) -> int:
        return self.global_feats.shape[0]

    @property
    def dim(self) -> int:
        return self.global_feats.shape[1]

    @property
    def n_parts(self) -> int:
        return len(self.part_feats)

    def spaces(self) -> Tuple[Tuple[str, np.ndarray], ...]:
        """All (space_id, matrix) pairs, global first."""
        return ((GLOBAL_SPACE, self.global_feats),) + tuple(
            (part_space(i), p) for i, p in enumerate(self.part_feats)
        )


def normalize_bank(bank: FeatureBank) -> FeatureBank:
    """A float64 copy of ``bank`` with every feature row L2-normalized."""
    return FeatureBank(
        global_feats=l2_normalize(bank.global_feats),
        part_feats=tuple(l2_normalize(p) for p in bank.part_feats),
        camera_ids=bank.camera_ids,
        gt_ids=bank.gt_ids,
        normalized=True,
    )


@dataclass(frozen=True, eq=False)
class PseudoLabels:
    """Hard cluster assignment per sample; -1 marks outliers."""

    labels: np.ndarray
    k_clusters: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("labels must be a 1-D integer vector")
        arr = arr.astype(np.int64)
        if arr.size and arr.min() < -1:
            raise ValueError("labels below -1 are not allowed")
        present = np.unique(arr[arr >= 0])
        if present.size != self.k_clusters or (
            present.size and not np.array_equal(present, np.arange(self.k_clusters))
        ):
            raise ValueError(
                f"labels must cover 0..{self.k_clusters - 1} exactly; "
                f"found clusters {present.tolist()}"
            )
        object.__setattr__(self, "labels", _frozen(arr))

    @property
    def n_samples(self) -> int:
        return self.labels.shape[0]

    @property
    def outlier_mask(self) -> np.ndarray:
        return self.labels < 0

    @property
    def n_outliers(self) -> int:
        return int(np.count_nonzero(self.labels < 0))

    def cluster_members(self) -> Tuple[np.ndarray, ...]:
        """Per-cluster arrays of member indices, ascending."""
        return tuple(
            np.flatnonzero(self.labels == b) for b in range(self.k_clusters)
        )


@dataclass(frozen=True, eq=False)
class RankedLists:
    """Top-k neighbor indices per sample for one feature space.

    Row i holds the k nearest neighbors of sample i (self excluded),
    ascending by distance with ties broken by smaller index.
    """

    space_id: str
    k: int
    lists: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.lists)
        if arr.ndim != 2 or not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("lists must be a 2-D integer matrix")
        n, k = arr.shape
        if k != self.k:
            raise ValueError(f"declared k={self.k} but lists have {k} columns")
        if arr.size:
            if arr.min() < 0 or arr.max() >= n:
                raise ValueError("neighbor index out of range")
            if np.any(arr == np.arange(n)[:, None]):
                raise ValueError("a ranked list contains its own sample index")
            srt = np.sort(arr, axis=1)
            if k > 1 and np.any(srt[:, 1:] == srt[:, :-1]):
                raise ValueError("duplicate index within a ranked list")
        object.__setattr__(self, "lists", _frozen(arr.astype(np.int64)))

    @property
    def n_samples(self) -> int:
        return self.lists.shape[0]


@dataclass(frozen=True, eq=False)
class CrossAgreement:
    """Per-sample, per-part agreement scores in [0, 1]."""

    scores: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("scores must be an N x n_parts matrix")
        if not np.all(np.isfinite(arr)):
            raise NumericalError("non-finite agreement score")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("agreement scores must lie in [0, 1]")
        object.__setattr__(self, "scores", _frozen(arr))

    @property
    def n_samples(self) -> int:
        return self.scores.shape[0]

    @property
    def n_parts(self) -> int:
        return self.scores.shape[1]

    def mean_per_part(self) -> np.ndarray:
        return self.scores.mean(axis=0)


@dataclass(frozen=True, eq=False)
class SoftLabel:
    """A probability vector over the current K clusters."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("probs must be a non-empty 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise NumericalError("non-finite probability entry")
        if arr.min() < 0.0:
            raise ValueError("negative probability entry")
        total = float(arr.sum())
        if abs(total - 1.0) > PROB_SUM_ATOL:
            raise ValueError(f"probabilities sum to {total!r}, expected 1")
        object.__setattr__(self, "probs", _frozen(arr))

    @property
    def k(self) -> int:
        return self.probs.shape[0]


def as_probs(values) -> np.ndarray:
    """Coerce a SoftLabel or array-like into a validated probability vector."""
    if isinstance(values, SoftLabel):
        return values.probs
    return SoftLabel(np.asarray(values, dtype=np.float64)).probs
