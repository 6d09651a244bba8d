"""Command-line surface: config loading, overrides, and one subcommand per
pipeline stage.

    pplr simgen   --config c.json --out bank.pplb
    pplr cluster  --bank bank.pplb
    pplr agree    --bank bank.pplb
    pplr refine   --bank bank.pplb
    pplr train    --bank bank.pplb --out trace.jsonl
    pplr pipeline --bank bank.pplb --out report.jsonl
    pplr eval     --bank bank.pplb

Exit codes: 0 success, 2 config error, 3 data-format or file error,
4 runtime numerical error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .cluster import DbscanParams
from .core import ConfigError, DataFormatError, FeatureBank, NumericalError, normalize_bank
from .evaluate import map_cmc
from .ingest import SynthConfig, generate_synthetic_bank, read_feature_bank, write_feature_bank
from .objectives import LossWeights
from .pipeline import (
    PipelineConfig,
    clustering_stage,
    init_heads,
    initial_model,
    project_bank,
    run,
    save_model,
    training_stage,
)
from .refine import RefinementConfig, pglr_targets, aals_targets

DEFAULT_CONFIG: Dict[str, dict] = {
    "synth": {
        "n_identities": 30,
        "samples_per_identity": 20,
        "dim": 64,
        "n_parts": 3,
        "n_cameras": 4,
        "cluster_spread": 0.9,
        "occlusion_fraction": 0.2,
        "camera_shift": 0.4,
        "seed": 7,
    },
    "dbscan": {"eps": 0.6, "min_samples": 4},
    "refinement": {"beta": 0.5, "aals_warmup_epochs": 5, "constant_alpha": None},
    "loss_weights": {
        "lambda_cam": 0.5,
        "tau": 0.07,
        "n_hard_negatives": 50,
        "cam_per_space": False,
    },
    "pipeline": {
        "epochs": 15,
        "iters_per_epoch": 50,
        "batch_p": 16,
        "batch_k": 4,
        "learning_rate": 0.5,
        "k_agreement": 20,
        "proj_dim": 32,
        "seed": 0,
        "mode": "pplr",
    },
    "paths": {"bank_in": None, "bank_out": None, "report_out": None, "model_out": None},
}

# Fields whose prototype (null) does not pin the type.
_NULLABLE_NUMBER = {"refinement.constant_alpha"}
_NULLABLE_STRING = {"paths.bank_in", "paths.bank_out", "paths.report_out", "paths.model_out"}
_NULLABLE = _NULLABLE_NUMBER | _NULLABLE_STRING
_NUMBER_OR_LIST = {"synth.occlusion_fraction"}


@dataclass(frozen=True)
class RunConfig:
    """Fully-resolved configuration for any subcommand."""

    synth: SynthConfig
    dbscan: DbscanParams
    refinement: RefinementConfig
    loss_weights: LossWeights
    pipeline: PipelineConfig
    paths: Dict[str, Optional[str]]
    resolved: dict

    def echo(self) -> dict:
        """The dict embedded into run artifacts for reproducibility."""
        return copy.deepcopy(self.resolved)


def _check_value(path: str, value, prototype) -> None:
    if path in _NUMBER_OR_LIST:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if isinstance(value, list):
            ok = all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        if not ok:
            raise ConfigError(f"{path}: expected number or list of numbers")
        return
    if value is None:
        if path in _NULLABLE:
            return
        raise ConfigError(f"{path}: null is not allowed")
    if isinstance(prototype, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected bool, got {type(value).__name__}")
    elif isinstance(prototype, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {type(value).__name__}")
    elif isinstance(prototype, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {type(value).__name__}")
    elif isinstance(prototype, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {type(value).__name__}")
    elif prototype is None:
        if path in _NULLABLE_STRING and not isinstance(value, str):
            raise ConfigError(f"{path}: expected string or null")
        if path in _NULLABLE_NUMBER and (
            isinstance(value, bool) or not isinstance(value, (int, float))
        ):
            raise ConfigError(f"{path}: expected number or null")


def _merge(document: dict) -> dict:
    merged = copy.deepcopy(DEFAULT_CONFIG)
    if not isinstance(document, dict):
        raise ConfigError("config document must be a JSON object")
    for section, content in document.items():
        if section not in merged:
            raise ConfigError(f"unknown key: {section}")
        if not isinstance(content, dict):
            raise ConfigError(f"{section}: expected an object")
        for key, value in content.items():
            if key not in merged[section]:
                raise ConfigError(f"unknown key: {section}.{key}")
            _check_value(f"{section}.{key}", value, DEFAULT_CONFIG[section][key])
            merged[section][key] = value
    return merged


def _build_section(section: str, factory, values: dict):
    try:
        return factory(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def parse_config(
    config_path: Optional[str] = None, overrides: Optional[Dict[str, object]] = None
) -> RunConfig:
    """Defaults, then the config file, then flag overrides; validated.

    ``overrides`` maps dotted key paths (e.g. ``refinement.beta``) to
    values. Unknown keys, type mismatches, and constraint violations raise
    :class:`ConfigError` naming the offending key path.
    """
    document: dict = {}
    if config_path is not None:
        text = Path(config_path).read_text("utf-8")
        if text.strip():
            try:
                document = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
    merged = _merge(document)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in merged or key not in merged[section]:
            raise ConfigError(f"unknown key: {dotted}")
        _check_value(dotted, value, DEFAULT_CONFIG[section][key])
        merged[section][key] = value

    occ = merged["synth"]["occlusion_fraction"]
    synth = _build_section(
        "synth",
        SynthConfig,
        {**merged["synth"], "occlusion_fraction": tuple(occ) if isinstance(occ, list) else occ},
    )
    dbscan_params = _build_section("dbscan", DbscanParams, merged["dbscan"])
    refinement = _build_section("refinement", RefinementConfig, merged["refinement"])
    loss_weights = _build_section("loss_weights", LossWeights, merged["loss_weights"])
    pipeline_cfg = _build_section(
        "pipeline",
        PipelineConfig,
        {
            **merged["pipeline"],
            "dbscan": dbscan_params,
            "refinement": refinement,
            "loss_weights": loss_weights,
        },
    )
    return RunConfig(
        synth=synth,
        dbscan=dbscan_params,
        refinement=refinement,
        loss_weights=loss_weights,
        pipeline=pipeline_cfg,
        paths=dict(merged["paths"]),
        resolved=merged,
    )


_OVERRIDE_FLAGS = [
    # (flag, dotted path, type)
    ("--beta", "refinement.beta", float),
    ("--warmup-epochs", "refinement.aals_warmup_epochs", int),
    ("--constant-alpha", "refinement.constant_alpha", float),
    ("--eps", "dbscan.eps", float),
    ("--min-samples", "dbscan.min_samples", int),
    ("--tau", "loss_weights.tau", float),
    ("--lambda-cam", "loss_weights.lambda_cam", float),
    ("--hard-negatives", "loss_weights.n_hard_negatives", int),
    ("--epochs", "pipeline.epochs", int),
    ("--iters", "pipeline.iters_per_epoch", int),
    ("--batch-p", "pipeline.batch_p", int),
    ("--batch-k", "pipeline.batch_k", int),
    ("--lr", "pipeline.learning_rate", float),
    ("--k-agreement", "pipeline.k_agreement", int),
    ("--proj-dim", "pipeline.proj_dim", int),
    ("--mode", "pipeline.mode", str),
    ("--n-identities", "synth.n_identities", int),
    ("--samples-per-identity", "synth.samples_per_identity", int),
    ("--synth-dim", "synth.dim", int),
    ("--n-parts", "synth.n_parts", int),
    ("--n-cameras", "synth.n_cameras", int),
    ("--spread", "synth.cluster_spread", float),
    ("--occlusion", "synth.occlusion_fraction", float),
    ("--camera-shift", "synth.camera_shift", float),
]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pplr", description="Pseudo-label refinement engine over feature banks"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simgen", "generate a synthetic feature bank"),
        ("cluster", "pseudo-labels from the re-ranked clustering distance"),
        ("agree", "cross agreement scores per sample and part"),
        ("refine", "refined soft labels (PGLR and AALS targets)"),
        ("train", "one training stage on fixed pseudo-labels"),
        ("pipeline", "full alternating clustering/training run"),
        ("eval", "cross-camera retrieval metrics on global features"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (defaults apply if omitted)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--threads", type=int, default=None, help="worker cap")
        p.add_argument("--out", help="output path (stdout where applicable)")
        if name != "simgen":
            p.add_argument("--bank", help="input feature-bank file")
        if name in ("train", "pipeline"):
            p.add_argument("--model-out", help="model blob output path")
        for flag, dotted, typ in _OVERRIDE_FLAGS:
            p.add_argument(flag, dest=dotted.replace(".", "__"), type=typ, default=None)
    return parser


def _resolve_threads(args) -> int:
    value = args.threads
    if value is None:
        env = os.environ.get("PPLR_THREADS")
        try:
            value = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"PPLR_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise ConfigError(f"--threads must be >= 1, got {value}")
    # The implementation runs its stages single-threaded; the flag is an
    # upper bound on internal parallelism, so any value yields identical
    # output by construction.
    return value


def _collect_overrides(args) -> Dict[str, object]:
    overrides: Dict[str, object] = {}
    for _, dotted, _ in _OVERRIDE_FLAGS:
        value = getattr(args, dotted.replace(".", "__"), None)
        if value is not None:
            overrides[dotted] = value
    if args.seed is not None:
        target = "synth.seed" if args.command == "simgen" else "pipeline.seed"
        overrides[target] = args.seed
    return overrides


def _load_bank(args, cfg: RunConfig) -> FeatureBank:
    path = args.bank or cfg.paths.get("bank_in")
    if not path:
        raise ConfigError("no input bank: pass --bank or set paths.bank_in")
    return read_feature_bank(path)


def _emit(text: str, out_path: Optional[str]) -> None:
    if out_path:
        Path(out_path).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)


def _cmd_simgen(args, cfg: RunConfig) -> int:
    out = args.out or cfg.paths.get("bank_out")
    if not out:
        raise ConfigError("no output path: pass --out or set paths.bank_out")
    bank = generate_synthetic_bank(cfg.synth)
    write_feature_bank(bank, out)
    return 0


def _cmd_cluster(args, cfg: RunConfig) -> int:
    feats = normalize_bank(_load_bank(args, cfg))
    result = clustering_stage(feats, cfg.pipeline)
    lines = [
        json.dumps({"index": i, "label": int(lab)})
        for i, lab in enumerate(result.labels.labels)
    ]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_agree(args, cfg: RunConfig) -> int:
    feats = normalize_bank(_load_bank(args, cfg))
    result = clustering_stage(feats, cfg.pipeline)
    lines = [
        json.dumps({"index": i, "scores": [float(s) for s in row]})
        for i, row in enumerate(result.agreement.scores)
    ]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_refine(args, cfg: RunConfig) -> int:
    feats = normalize_bank(_load_bank(args, cfg))
    result = clustering_stage(feats, cfg.pipeline)
    labels, agreement = result.labels, result.agreement
    n, k = labels.n_samples, labels.k_clusters
    records: list = [{"index": i, "pglr": None, "aals": None} for i in range(n)]
    if k > 0:
        # Predictions come from centroid-initialized heads, mirroring the
        # state a training stage starts from.
        heads = init_heads(feats, labels)
        clustered = np.flatnonzero(labels.labels >= 0)
        preds = np.stack(
            [heads[1 + p].predict(feats.part_feats[p][clustered]) for p in range(feats.n_parts)]
        )
        lab = labels.labels[clustered]
        ca = agreement.scores[clustered]
        pglr = pglr_targets(lab, k, preds, ca, cfg.refinement.beta)
        if cfg.refinement.constant_alpha is not None:
            alphas = np.full_like(ca, cfg.refinement.constant_alpha)
        else:
            alphas = ca
        aals_by_part = [aals_targets(lab, k, alphas[:, p]) for p in range(feats.n_parts)]
        for row, i in enumerate(clustered):
            records[int(i)] = {
                "index": int(i),
                "pglr": pglr[row].tolist(),
                "aals": [aals_by_part[p][row].tolist() for p in range(feats.n_parts)],
            }
    lines = [json.dumps(r) for r in records]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_train(args, cfg: RunConfig) -> int:
    out = args.out or cfg.paths.get("report_out")
    if not out:
        raise ConfigError("no output path: pass --out or set paths.report_out")
    bank = _load_bank(args, cfg)
    model = initial_model(cfg.pipeline, bank)
    feats = project_bank(model, bank)
    result = clustering_stage(feats, cfg.pipeline)
    trace = training_stage(model, bank, result.labels, result.agreement, cfg.pipeline)
    lines = [json.dumps({"config": cfg.echo()}, sort_keys=True)]
    lines += [json.dumps(it, sort_keys=True) for it in trace.iterations]
    lines.append(json.dumps({"warnings": trace.warnings_dict()}, sort_keys=True))
    Path(out).write_text("\n".join(lines) + "\n", "utf-8")
    model_out = args.model_out or cfg.paths.get("model_out")
    if model_out:
        save_model(model, model_out)
    return 0


def _cmd_pipeline(args, cfg: RunConfig) -> int:
    out = args.out or cfg.paths.get("report_out")
    if not out:
        raise ConfigError("no output path: pass --out or set paths.report_out")
    model_out = args.model_out or cfg.paths.get("model_out") or f"{out}.model"
    bank = _load_bank(args, cfg)
    run(cfg.pipeline, bank, report_path=out, model_path=model_out, config_echo=cfg.echo())
    return 0


def _cmd_eval(args, cfg: RunConfig) -> int:
    bank = _load_bank(args, cfg)
    if bank.gt_ids is None:
        raise DataFormatError("bank carries no gt ids; eval requires ground truth")
    if bank.camera_ids is None:
        raise DataFormatError("bank carries no camera ids; eval is cross-camera")
    feats = normalize_bank(bank)
    result = map_cmc(
        feats.global_feats,
        feats.global_feats,
        bank.gt_ids,
        bank.gt_ids,
        bank.camera_ids,
        bank.camera_ids,
    )
    _emit(json.dumps(result.to_json_dict(), sort_keys=True) + "\n", args.out)
    return 0


_COMMANDS = {
    "simgen": _cmd_simgen,
    "cluster": _cmd_cluster,
    "agree": _cmd_agree,
    "refine": _cmd_refine,
    "train": _cmd_train,
    "pipeline": _cmd_pipeline,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _resolve_threads(args)
        cfg = parse_config(args.config, _collect_overrides(args))
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, ValueError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
