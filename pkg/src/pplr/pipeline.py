"""Alternating clustering/training driver over a toy linear backbone.

Each epoch first re-derives pseudo-labels and cross agreement scores from
the current features (clustering stage), then runs PK-sampled gradient
steps on the classifier heads and the shared linear projection (training
stage). The projection stands in for a feature extractor: it is the
reason features, and therefore pseudo-labels, evolve between epochs.

Every artifact produced by :func:`run` is a pure function of the config
and the input bank bytes. Reports serialize without wall-clock times so
that identical runs produce identical files.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .agreement import agreement_matrix
from .cluster import DbscanParams, cluster_centroids, dbscan
from .core import (
    GLOBAL_SPACE,
    CrossAgreement,
    DataFormatError,
    FeatureBank,
    NumericalError,
    PseudoLabels,
    RankedLists,
    part_space,
)
from .evaluate import LabelQuality, RetrievalResult, label_quality, map_cmc
from .neighbors import k_reciprocal_jaccard, pairwise_sq_euclidean, topk_ranked_lists
from .objectives import (
    MODE_BASELINE,
    MODE_PPLR,
    CameraProxySet,
    ClassifierHead,
    LossWeights,
    build_camera_proxies,
    inter_camera_loss_batch,
    log_softmax,
    softmax_triplet_loss,
    total_loss,
)
from .refine import RefinementConfig, aals_targets, pglr_targets

# Clustering-distance constants: the re-ranked Jaccard metric with its
# canonical parameters (encoding depth 30, query expansion 6, no blend).
CLUSTER_K1 = 30
CLUSTER_K2 = 6
CLUSTER_BLEND_LAMBDA = 0.0

MODEL_MAGIC = b"PPLM"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sIIIII")


@dataclass(frozen=True)
class PipelineConfig:
    """Desk-scale driver configuration; defaults favor quick, seeded runs."""

    epochs: int = 15
    iters_per_epoch: int = 50
    batch_p: int = 16
    batch_k: int = 4
    learning_rate: float = 0.5
    k_agreement: int = 20
    proj_dim: int = 32
    dbscan: DbscanParams = field(default_factory=DbscanParams)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    mode: str = MODE_PPLR

    def __post_init__(self) -> None:
        for name in ("iters_per_epoch", "batch_p", "batch_k", "k_agreement", "proj_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_p * self.batch_k < 4:
            raise ValueError("batch_p * batch_k must be >= 4")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.mode not in (MODE_BASELINE, MODE_PPLR):
            raise ValueError(f"mode must be '{MODE_BASELINE}' or '{MODE_PPLR}'")


@dataclass(eq=False)
class ToyModel:
    """Learnable linear projection plus one classifier head per space."""

    projection: np.ndarray
    heads: List[ClassifierHead] = field(default_factory=list)

    def __post_init__(self) -> None:
        p = np.asarray(self.projection, dtype=np.float64)
        if p.ndim != 2 or not np.all(np.isfinite(p)):
            raise ValueError("projection must be a finite 2-D matrix")
        self.projection = p


@dataclass(eq=False)
class TrainingTrace:
    """Per-iteration loss components plus aggregated warnings."""

    iterations: List[Dict[str, float]] = field(default_factory=list)
    replacement_batches: int = 0
    triplet_skipped: int = 0
    cam_skipped: int = 0
    skipped_stage: bool = False

    def warnings_dict(self) -> Dict[str, int]:
        return {
            "replacement_batches": self.replacement_batches,
            "triplet_skipped": self.triplet_skipped,
            "cam_skipped": self.cam_skipped,
            "skipped_stage": int(self.skipped_stage),
        }


@dataclass(frozen=True, eq=False)
class EpochReport:
    """Everything observable about one epoch.

    Quality and retrieval metrics are present only when the bank carries
    ground-truth ids. ``wall_time`` stays in memory; it is deliberately
    dropped from the serialized form to keep report files reproducible.
    """

    epoch: int
    k_clusters: int
    n_outliers: int
    mean_agreement: Tuple[float, ...]
    losses: Tuple[Dict[str, float], ...]
    warnings: Dict[str, int]
    raw_quality: Optional[LabelQuality] = None
    refined_quality: Optional[LabelQuality] = None
    retrieval: Optional[RetrievalResult] = None
    wall_time: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "k_clusters": self.k_clusters,
            "n_outliers": self.n_outliers,
            "mean_agreement": list(self.mean_agreement),
            "losses": list(self.losses),
            "warnings": self.warnings,
            "raw_quality": None if self.raw_quality is None else vars(self.raw_quality).copy(),
            "refined_quality": None
            if self.refined_quality is None
            else vars(self.refined_quality).copy(),
            "retrieval": None if self.retrieval is None else self.retrieval.to_json_dict(),
        }


@dataclass(frozen=True, eq=False)
class ClusteringResult:
    labels: PseudoLabels
    agreement: CrossAgreement
    global_lists: RankedLists
    part_lists: Tuple[RankedLists, ...]


def _epoch_rng(seed: int, slot: int) -> np.random.Generator:
    # Child streams keyed by (seed, slot); slot 0 is model init, slot 1+e
    # drives epoch e. Spawning is deterministic in the slot index.
    children = np.random.SeedSequence(seed).spawn(slot + 1)
    return np.random.default_rng(children[slot])


def initial_model(cfg: PipelineConfig, bank_raw: FeatureBank) -> ToyModel:
    """Seed-determined random projection, before any training."""
    rng = _epoch_rng(cfg.seed, 0)
    projection = rng.standard_normal((bank_raw.dim, cfg.proj_dim)) / np.sqrt(bank_raw.dim)
    return ToyModel(projection=projection)


def project_bank(model: ToyModel, bank_raw: FeatureBank) -> FeatureBank:
    """Project every raw space through the model and L2-normalize rows."""
    mats = []
    for space_id, raw in bank_raw.spaces():
        v = np.asarray(raw, dtype=np.float64) @ model.projection
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms == 0.0):
            bad = int(np.flatnonzero(norms == 0.0)[0])
            raise NumericalError(f"projection collapsed row {bad} of {space_id} to zero")
        mats.append(v / norms[:, None])
    return FeatureBank(
        global_feats=mats[0],
        part_feats=tuple(mats[1:]),
        camera_ids=bank_raw.camera_ids,
        gt_ids=bank_raw.gt_ids,
        normalized=True,
    )


def clustering_stage(bank: FeatureBank, cfg: PipelineConfig) -> ClusteringResult:
    """Pseudo-labels from the re-ranked global distance, plus per-space
    ranked lists (plain squared Euclidean) and the agreement matrix."""
    if not bank.normalized:
        raise ValueError("clustering_stage requires a normalized bank")
    n = bank.n_samples
    k1 = min(CLUSTER_K1, n - 1)
    k2 = min(CLUSTER_K2, k1)
    cluster_dist = k_reciprocal_jaccard(bank.global_feats, k1, k2, CLUSTER_BLEND_LAMBDA)
    labels = dbscan(cluster_dist, cfg.dbscan)

    global_lists = topk_ranked_lists(
        pairwise_sq_euclidean(bank.global_feats), cfg.k_agreement, GLOBAL_SPACE
    )
    part_lists = tuple(
        topk_ranked_lists(pairwise_sq_euclidean(p), cfg.k_agreement, part_space(i))
        for i, p in enumerate(bank.part_feats)
    )
    agreement = agreement_matrix(global_lists, part_lists)
    return ClusteringResult(
        labels=labels,
        agreement=agreement,
        global_lists=global_lists,
        part_lists=part_lists,
    )


def init_heads(feats: FeatureBank, labels: PseudoLabels) -> List[ClassifierHead]:
    """Fresh heads with rows set to cluster centroids, one per space."""
    return [
        ClassifierHead.from_centroids(cluster_centroids(mat, labels), space_id)
        for space_id, mat in feats.spaces()
    ]


def _pk_sample(
    rng: np.random.Generator,
    members: Sequence[np.ndarray],
    batch_p: int,
    batch_k: int,
) -> Tuple[np.ndarray, bool]:
    """PK batch: batch_p clusters (distinct when possible) x batch_k members."""
    k = len(members)
    with_replacement = k < batch_p
    chosen = rng.choice(k, size=batch_p, replace=with_replacement)
    idx = np.empty(batch_p * batch_k, dtype=np.int64)
    for j, c in enumerate(chosen):
        pool = members[int(c)]
        take = rng.choice(pool.size, size=batch_k, replace=pool.size < batch_k)
        idx[j * batch_k : (j + 1) * batch_k] = pool[take]
    return idx, with_replacement


def _build_proxies(
    feats: FeatureBank, labels: PseudoLabels, lw: LossWeights
) -> Optional[List[Tuple[int, CameraProxySet]]]:
    """Stage-start proxies; None when the camera term is inactive.

    Returns (space index, proxy set) pairs: just the global space by
    default, every space when ``cam_per_space`` is set.
    """
    if lw.lambda_cam == 0 or feats.camera_ids is None or labels.k_clusters == 0:
        return None
    spaces = feats.spaces()
    wanted = range(len(spaces)) if lw.cam_per_space else [0]
    return [
        (s, build_camera_proxies(spaces[s][1], labels, feats.camera_ids)) for s in wanted
    ]


def training_stage(
    model: ToyModel,
    bank_raw: FeatureBank,
    labels: PseudoLabels,
    agreements: CrossAgreement,
    cfg: PipelineConfig,
    epoch: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> TrainingTrace:
    """One epoch of PK-sampled gradient steps; mutates ``model`` in place.

    Heads are re-created from cluster centroids at entry (K changed), the
    camera proxies are frozen from the stage-start features, and every
    iteration re-projects its batch through the current projection so the
    losses see evolving features.
    """
    if rng is None:
        rng = _epoch_rng(cfg.seed, 1 + epoch)
    trace = TrainingTrace()
    if labels.k_clusters == 0:
        trace.skipped_stage = True
        return trace

    feats = project_bank(model, bank_raw)
    model.heads = init_heads(feats, labels)
    proxies = _build_proxies(feats, labels, cfg.loss_weights)
    members = labels.cluster_members()

    for _ in range(cfg.iters_per_epoch):
        batch, replaced = _pk_sample(rng, members, cfg.batch_p, cfg.batch_k)
        trace.replacement_batches += int(replaced)
        step = _train_step(model, bank_raw, batch, labels, agreements, cfg, epoch, proxies)
        trace.triplet_skipped += step.pop("_triplet_skipped")
        trace.cam_skipped += step.pop("_cam_skipped")
        trace.iterations.append(step)
    return trace


def _train_step(
    model: ToyModel,
    bank_raw: FeatureBank,
    batch: np.ndarray,
    labels: PseudoLabels,
    agreements: CrossAgreement,
    cfg: PipelineConfig,
    epoch: int,
    proxies: Optional[List[Tuple[int, CameraProxySet]]],
) -> Dict[str, float]:
    lw = cfg.loss_weights
    ref = cfg.refinement
    k = labels.k_clusters
    n_parts = bank_raw.n_parts
    b = batch.size
    lab = labels.labels[batch]
    ca = agreements.scores[batch]

    # Forward: shared projection, per-space normalization, head softmax.
    raw = [np.asarray(m[batch], dtype=np.float64) for _, m in bank_raw.spaces()]
    norms, fs = [], []
    for x in raw:
        v = x @ model.projection
        nrm = np.linalg.norm(v, axis=1)
        if np.any(nrm == 0.0):
            raise NumericalError("projection collapsed a batch row to zero norm")
        norms.append(nrm)
        fs.append(v / nrm[:, None])
    logqs = [log_softmax(head.logits(f)) for head, f in zip(model.heads, fs)]
    qs = [np.exp(lq) for lq in logqs]

    # Targets (constants: nothing backpropagates through them).
    if cfg.mode == MODE_PPLR:
        if epoch < ref.aals_warmup_epochs:
            alphas = np.ones_like(ca)
        elif ref.constant_alpha is not None:
            alphas = np.full_like(ca, ref.constant_alpha)
        else:
            alphas = ca
        t_global = pglr_targets(lab, k, np.stack(qs[1:]), ca, ref.beta)
    else:
        alphas = np.ones_like(ca)
        t_global = np.zeros((b, k))
        t_global[np.arange(b), lab] = 1.0
    t_parts = [aals_targets(lab, k, alphas[:, n]) for n in range(n_parts)]

    # Scalar components. The part term uses the smoothing decomposition
    # directly so that alpha = 1 reduces bit-exactly to hard cross-entropy.
    rows = np.arange(b)
    loss_global = float(-(t_global * logqs[0]).sum(axis=1).mean())
    loss_parts = 0.0
    for n in range(n_parts):
        lq = logqs[1 + n]
        hard = -lq[rows, lab]
        kl_uniform = -np.log(k) - lq.mean(axis=1)
        loss_parts += float(
            (alphas[:, n] * hard + (1.0 - alphas[:, n]) * kl_uniform).mean()
        )
    loss_parts /= n_parts

    loss_tri, grad_tri, tri_skipped = softmax_triplet_loss(fs[0], lab)

    loss_cam = 0.0
    cam_skipped = 0
    cam_grads: Dict[int, np.ndarray] = {}
    if proxies is not None:
        cams = bank_raw.camera_ids[batch]
        for space_idx, proxy_set in proxies:
            l_s, g_s, sk = inter_camera_loss_batch(fs[space_idx], lab, cams, proxy_set, lw)
            loss_cam += l_s / len(proxies)
            cam_grads[space_idx] = g_s / len(proxies)
            cam_skipped += sk

    # Backward. d loss / d logits is (q - target) scaled by the batch mean.
    dfs = []
    for s in range(1 + n_parts):
        if s == 0:
            dz = (qs[0] - t_global) / b
        else:
            dz = (qs[s] - t_parts[s - 1]) / (b * n_parts)
        dW = dz.T @ fs[s]
        df = dz @ model.heads[s].weight
        if s == 0:
            df = df + grad_tri
        if s in cam_grads:
            df = df + lw.lambda_cam * cam_grads[s]
        model.heads[s].weight -= cfg.learning_rate * dW
        dfs.append(df)

    d_proj = np.zeros_like(model.projection)
    for s in range(1 + n_parts):
        df, f, nrm = dfs[s], fs[s], norms[s]
        dv = (df - (df * f).sum(axis=1, keepdims=True) * f) / nrm[:, None]
        d_proj += raw[s].T @ dv
    model.projection -= cfg.learning_rate * d_proj

    key_global = "pglr" if cfg.mode == MODE_PPLR else "gce"
    key_parts = "aals" if cfg.mode == MODE_PPLR else "pce"
    components = {
        key_global: loss_global,
        key_parts: loss_parts,
        "triplet": loss_tri,
        "cam": loss_cam,
    }
    return {
        "total": total_loss(components, lw, cfg.mode),
        **components,
        "_triplet_skipped": tri_skipped,
        "_cam_skipped": cam_skipped,
    }


def _refined_hard_labels(
    feats: FeatureBank,
    heads: List[ClassifierHead],
    labels: PseudoLabels,
    agreements: CrossAgreement,
    beta: float,
) -> np.ndarray:
    """Argmax of the PGLR targets per clustered sample; outliers stay -1."""
    refined = np.full(labels.n_samples, -1, dtype=np.int64)
    clustered = np.flatnonzero(labels.labels >= 0)
    if clustered.size == 0 or labels.k_clusters == 0:
        return refined
    preds = np.stack(
        [heads[1 + n].predict(feats.part_feats[n][clustered]) for n in range(feats.n_parts)]
    )
    targets = pglr_targets(
        labels.labels[clustered],
        labels.k_clusters,
        preds,
        agreements.scores[clustered],
        beta,
    )
    refined[clustered] = np.argmax(targets, axis=1)
    return refined


def run(
    cfg: PipelineConfig,
    bank_raw: FeatureBank,
    report_path=None,
    model_path=None,
    config_echo: Optional[dict] = None,
) -> Tuple[List[EpochReport], ToyModel]:
    """Alternate clustering and training for ``cfg.epochs`` epochs.

    Returns the per-epoch reports and the final model; optionally persists
    the reports as JSON-lines (first line echoes the fully-resolved
    config) and the model as a binary blob.
    """
    model = initial_model(cfg, bank_raw)
    has_gt = bank_raw.gt_ids is not None
    reports: List[EpochReport] = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        feats = project_bank(model, bank_raw)
        clust = clustering_stage(feats, cfg)
        labels, agreement = clust.labels, clust.agreement

        raw_quality = refined_quality = retrieval = None
        if has_gt:
            raw_quality = label_quality(labels.labels, bank_raw.gt_ids)
            if labels.k_clusters > 0:
                heads = init_heads(feats, labels)
                refined = _refined_hard_labels(
                    feats, heads, labels, agreement, cfg.refinement.beta
                )
                refined_quality = label_quality(refined, bank_raw.gt_ids)
            if bank_raw.camera_ids is not None:
                retrieval = map_cmc(
                    feats.global_feats,
                    feats.global_feats,
                    bank_raw.gt_ids,
                    bank_raw.gt_ids,
                    bank_raw.camera_ids,
                    bank_raw.camera_ids,
                )

        trace = training_stage(model, bank_raw, labels, agreement, cfg, epoch=epoch)
        reports.append(
            EpochReport(
                epoch=epoch,
                k_clusters=labels.k_clusters,
                n_outliers=labels.n_outliers,
                mean_agreement=tuple(float(v) for v in agreement.mean_per_part()),
                losses=tuple(trace.iterations),
                warnings=trace.warnings_dict(),
                raw_quality=raw_quality,
                refined_quality=refined_quality,
                retrieval=retrieval,
                wall_time=time.perf_counter() - t0,
            )
        )

    if report_path is not None:
        write_reports(reports, report_path, cfg, config_echo)
    if model_path is not None:
        save_model(model, model_path)
    return reports, model


def write_reports(
    reports: Sequence[EpochReport],
    path,
    cfg: PipelineConfig,
    config_echo: Optional[dict] = None,
) -> None:
    """JSON-lines report file: a config echo line, then one epoch per line."""
    echo = config_echo if config_echo is not None else asdict(cfg)
    lines = [json.dumps({"config": echo}, sort_keys=True)]
    lines += [json.dumps(r.to_json_dict(), sort_keys=True) for r in reports]
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def save_model(model: ToyModel, path) -> None:
    """Binary blob: header then f32 matrices in declaration order."""
    d_raw, d = model.projection.shape
    n_heads = len(model.heads)
    k = model.heads[0].k_classes if n_heads else 0
    buf = bytearray()
    buf += _MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, d_raw, d, n_heads, k)
    buf += np.ascontiguousarray(model.projection, dtype="<f4").tobytes()
    for head in model.heads:
        if head.k_classes != k:
            raise ValueError("all heads must share K for serialization")
        buf += np.ascontiguousarray(head.weight, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_model(path) -> ToyModel:
    data = Path(path).read_bytes()
    if len(data) < _MODEL_HEADER.size:
        raise DataFormatError(f"truncated header: {len(data)} bytes")
    magic, version, d_raw, d, n_heads, k = _MODEL_HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise DataFormatError(f"bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise DataFormatError(f"unsupported version {version}")
    expected = _MODEL_HEADER.size + (d_raw * d + n_heads * k * d) * 4
    if len(data) != expected:
        raise DataFormatError(
            f"model blob has {len(data)} bytes, expected {expected}"
        )
    offset = _MODEL_HEADER.size
    proj = np.frombuffer(data, "<f4", d_raw * d, offset).reshape(d_raw, d).astype(np.float64)
    offset += d_raw * d * 4
    heads = []
    for i in range(n_heads):
        w = np.frombuffer(data, "<f4", k * d, offset).reshape(k, d).astype(np.float64)
        offset += k * d * 4
        space_id = GLOBAL_SPACE if i == 0 else part_space(i - 1)
        heads.append(ClassifierHead(weight=w, space_id=space_id))
    return ToyModel(projection=proj, heads=heads)
