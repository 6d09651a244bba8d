"""Training losses with analytic gradients, and camera-aware proxies.

All losses are plain numpy with hand-derived gradients; every gradient is
cross-checked against central finite differences in the test suite. Scalar
single-sample forms mirror the definitions; ``*_batch`` variants are the
vectorized versions the trainer uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Tuple

import numpy as np

from .core import PseudoLabels, SoftLabel, as_probs, _frozen
from .refine import aals_target

MODE_BASELINE = "baseline"
MODE_PPLR = "pplr"

_COMPONENTS = {
    MODE_BASELINE: ("gce", "pce", "triplet", "cam"),
    MODE_PPLR: ("aals", "pglr", "triplet", "cam"),
}


@dataclass(frozen=True)
class LossWeights:
    """Scalar knobs shared by the contrastive camera term.

    ``cam_per_space`` switches the inter-camera loss from the default
    global-feature-only form to averaging the same loss over every feature
    space (proxies built per space).
    """

    lambda_cam: float = 0.5
    tau: float = 0.07
    n_hard_negatives: int = 50
    cam_per_space: bool = False

    def __post_init__(self) -> None:
        if self.lambda_cam < 0:
            raise ValueError("lambda_cam must be >= 0")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.n_hard_negatives < 1:
            raise ValueError("n_hard_negatives must be >= 1")


@dataclass(eq=False)
class ClassifierHead:
    """Bias-free linear map over features, one per feature space.

    The weight matrix is mutable: the trainer re-creates heads at every
    clustering stage (K changes) and updates them in place between stages.
    """

    weight: np.ndarray
    space_id: str

    def __post_init__(self) -> None:
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("head weight must be K x D")
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite head weight")
        self.weight = w

    @classmethod
    def from_centroids(cls, centroids: np.ndarray, space_id: str) -> "ClassifierHead":
        return cls(weight=np.array(centroids, dtype=np.float64), space_id=space_id)

    @property
    def k_classes(self) -> int:
        return self.weight.shape[0]

    def logits(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weight.T

    def predict(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.logits(features), axis=-1)


@dataclass(frozen=True, eq=False)
class CameraProxySet:
    """Per-(camera, cluster) feature centroids.

    One proxy per non-empty pair, ordered by (cluster, camera); outliers
    never contribute. Proxies are raw means of their member rows.
    """

    proxies: np.ndarray
    proxy_camera: np.ndarray
    proxy_cluster: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.proxies, dtype=np.float64)
        cam = np.asarray(self.proxy_camera, dtype=np.int64)
        clu = np.asarray(self.proxy_cluster, dtype=np.int64)
        if p.ndim != 2 or cam.shape != (p.shape[0],) or clu.shape != (p.shape[0],):
            raise ValueError("proxy arrays disagree on M")
        object.__setattr__(self, "proxies", _frozen(p))
        object.__setattr__(self, "proxy_camera", _frozen(cam))
        object.__setattr__(self, "proxy_cluster", _frozen(clu))

    @property
    def n_proxies(self) -> int:
        return self.proxies.shape[0]


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max subtraction)."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = np.exp(z - z.max(axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_forward(logits) -> SoftLabel:
    """Softmax of one logit vector as a validated SoftLabel."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("logits must be a 1-D vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logit")
    return SoftLabel(softmax(z))


def cross_entropy(target, probs) -> Tuple[float, np.ndarray]:
    """H(target, probs) and its gradient with respect to the logits.

    The gradient assumes ``probs`` came out of a softmax, in which case
    d H / d logits = probs - target.
    """
    t = as_probs(target)
    q = as_probs(probs)
    if t.shape != q.shape:
        raise ValueError(f"dimension mismatch: target {t.shape} vs probs {q.shape}")
    loss = float(-np.sum(t * np.log(q)))
    return loss, q - t


def aals_loss(label: int, alpha: float, probs) -> Tuple[float, np.ndarray]:
    """Agreement-weighted blend of cross-entropy and uniform KL terms.

    Computes alpha * H(onehot, q) + (1 - alpha) * KL(u || q) directly.
    Identical (up to the constant -(1 - alpha) * log K) to cross-entropy
    against the smoothed target, so the gradient with respect to the
    logits is q minus that smoothed target.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} out of [0, 1]")
    q = as_probs(probs)
    k = q.shape[0]
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range for K={k}")
    log_q = np.log(q)
    hard_term = -log_q[label]
    kl_uniform = -np.log(k) - log_q.mean()
    loss = float(alpha * hard_term + (1.0 - alpha) * kl_uniform)
    return loss, q - aals_target(label, k, alpha).probs


def softmax_triplet_loss(
    batch_features: np.ndarray, batch_labels: np.ndarray
) -> Tuple[float, np.ndarray, int]:
    """Hard-mined softmax-triplet loss over one batch.

    Per anchor, the hardest positive is the same-label sample at maximum
    L2 distance and the hardest negative the different-label sample at
    minimum L2 distance (mining ties go to the smaller index); the anchor
    contributes softplus(d_pos - d_neg). Anchors lacking a positive or a
    negative are skipped and counted.

    Returns:
        (mean loss over valid anchors, gradient w.r.t. features, skipped count)
    """
    f = np.asarray(batch_features, dtype=np.float64)
    labels = np.asarray(batch_labels)
    b = f.shape[0]
    if labels.shape != (b,):
        raise ValueError("one label per feature row is required")

    diff_sq = _pairwise_sq(f)
    dist = np.sqrt(diff_sq)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    other = labels[:, None] != labels[None, :]

    grad = np.zeros_like(f)
    total = 0.0
    n_valid = 0
    skipped = 0
    mined = []
    for i in range(b):
        pos = np.flatnonzero(same[i])
        neg = np.flatnonzero(other[i])
        if pos.size == 0 or neg.size == 0:
            skipped += 1
            continue
        p = pos[np.argmax(dist[i, pos])]
        n_ = neg[np.argmin(dist[i, neg])]
        mined.append((i, p, n_))
        total += np.logaddexp(0.0, dist[i, p] - dist[i, n_])
        n_valid += 1
    if n_valid == 0:
        return 0.0, grad, skipped

    for i, p, n_ in mined:
        s = _sigmoid(dist[i, p] - dist[i, n_]) / n_valid
        u_pos = _unit_difference(f[i], f[p], dist[i, p])
        u_neg = _unit_difference(f[i], f[n_], dist[i, n_])
        grad[i] += s * (u_pos - u_neg)
        grad[p] -= s * u_pos
        grad[n_] += s * u_neg
    return float(total / n_valid), grad, skipped


def _pairwise_sq(f: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", f, f)
    d = sq[:, None] + sq[None, :] - 2.0 * (f @ f.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def _unit_difference(a: np.ndarray, b: np.ndarray, norm: float) -> np.ndarray:
    if norm == 0.0:
        return np.zeros_like(a)
    return (a - b) / norm


def build_camera_proxies(
    features: np.ndarray, labels: PseudoLabels, camera_ids: np.ndarray
) -> CameraProxySet:
    """Mean feature per non-empty (camera, cluster) pair; outliers excluded."""
    if camera_ids is None:
        raise ValueError("camera ids are required to build camera proxies")
    x = np.asarray(features, dtype=np.float64)
    cams = np.asarray(camera_ids)
    lab = labels.labels
    keys = sorted(
        {(int(lab[i]), int(cams[i])) for i in range(lab.size) if lab[i] >= 0}
    )
    if not keys:
        return CameraProxySet(
            proxies=np.zeros((0, x.shape[1])),
            proxy_camera=np.zeros(0, dtype=np.int64),
            proxy_cluster=np.zeros(0, dtype=np.int64),
        )
    proxies = np.empty((len(keys), x.shape[1]), dtype=np.float64)
    for m, (b, a) in enumerate(keys):
        members = np.flatnonzero((lab == b) & (cams == a))
        proxies[m] = x[members].mean(axis=0)
    clusters, cameras = zip(*keys)
    return CameraProxySet(
        proxies=proxies,
        proxy_camera=np.asarray(cameras, dtype=np.int64),
        proxy_cluster=np.asarray(clusters, dtype=np.int64),
    )


def inter_camera_loss(
    feature: np.ndarray,
    own_label: int,
    own_cam: int,
    proxies: CameraProxySet,
    weights: LossWeights,
) -> Tuple[float, np.ndarray, bool]:
    """Contrastive pull toward same-cluster proxies from other cameras.

    Positives are proxies sharing the sample's cluster under a different
    camera; negatives are the ``n_hard_negatives`` most similar proxies
    from other clusters (similarity = dot product, ties to smaller proxy
    index). With no positive proxy the sample contributes nothing and is
    flagged skipped.

    Returns:
        (loss, gradient w.r.t. the feature, skipped flag)
    """
    f = np.asarray(feature, dtype=np.float64)
    grad = np.zeros_like(f)
    pos_idx = np.flatnonzero(
        (proxies.proxy_cluster == own_label) & (proxies.proxy_camera != own_cam)
    )
    if own_label < 0 or pos_idx.size == 0:
        return 0.0, grad, True

    sims = proxies.proxies @ f
    neg_pool = np.flatnonzero(proxies.proxy_cluster != own_label)
    if neg_pool.size:
        order = np.argsort(-sims[neg_pool], kind="stable")
        neg_idx = neg_pool[order[: weights.n_hard_negatives]]
    else:
        neg_idx = neg_pool
    support = np.concatenate([pos_idx, neg_idx])
    logits = sims[support] / weights.tau
    log_probs = logits - _logsumexp(logits)
    n_pos = pos_idx.size
    loss = float(-log_probs[:n_pos].mean())

    # d loss / d f = -(mean of positive proxies - softmax-weighted proxies) / tau
    probs = np.exp(log_probs)
    pos_mean = proxies.proxies[pos_idx].mean(axis=0)
    weighted = probs @ proxies.proxies[support]
    grad = (weighted - pos_mean) / weights.tau
    return loss, grad, False


def _logsumexp(x: np.ndarray) -> float:
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def inter_camera_loss_batch(
    features: np.ndarray,
    labels: np.ndarray,
    cams: np.ndarray,
    proxies: CameraProxySet,
    weights: LossWeights,
) -> Tuple[float, np.ndarray, int]:
    """Mean inter-camera loss over a batch (skipped samples contribute 0)."""
    f = np.asarray(features, dtype=np.float64)
    b = f.shape[0]
    grads = np.zeros_like(f)
    total = 0.0
    skipped = 0
    for i in range(b):
        loss_i, grad_i, was_skipped = inter_camera_loss(
            f[i], int(labels[i]), int(cams[i]), proxies, weights
        )
        if was_skipped:
            skipped += 1
            continue
        total += loss_i
        grads[i] = grad_i / b
    return total / b, grads, skipped


def total_loss(
    components: Mapping[str, float], weights: LossWeights, mode: str = MODE_PPLR
) -> float:
    """Weighted sum of the per-batch loss components.

    ``components`` must provide the keys for the requested mode:
    gce/pce/triplet/cam for "baseline", aals/pglr/triplet/cam for "pplr".
    lambda_cam = 0 makes the result independent of the camera term.
    """
    if mode not in _COMPONENTS:
        raise ValueError(f"unknown mode {mode!r}")
    names = _COMPONENTS[mode]
    missing = [name for name in names if name not in components]
    if missing:
        raise ValueError(f"missing loss components for mode {mode!r}: {missing}")
    g, p, tri, cam = (float(components[name]) for name in names)
    return g + p + tri + weights.lambda_cam * cam
