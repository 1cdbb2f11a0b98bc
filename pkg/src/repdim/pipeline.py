"""End-to-end run from a JSON configuration.

Stages: ingest the dataset, build (or load) a model, probe it at
initialisation, train, probe again, detect phases and write reports. All
outputs of a failed run are removed.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List

import jsonschema
import numpy as np

from .data import (
    LabeledDataset,
    PointCloud,
    generate_class_manifolds,
    generate_hypercube,
    generate_hypersphere,
    generate_swiss_roll,
    load_csv,
    load_idx_dataset,
)
from .errors import DataFormatError, RepdimError, UsageError
from .nn import TrainConfig, build_mlp, load_model, save_model, train
from .probe import (
    ENTRY_FIELDS,
    SUMMARY_FIELDS,
    ProbeReport,
    _cell,
    detect_phases,
    now_stamp,
    probe_layers,
    relu_expansion_ratios,
)

_POS_INT = {"type": "integer", "minimum": 1}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset", "output"],
    "properties": {
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["source"],
            "properties": {
                "source": {"enum": ["generator", "csv", "idx"]},
                "generator": {"enum": ["class_manifolds", "hypercube", "hypersphere", "swiss_roll"]},
                "n": _POS_INT,
                "n_per_class": _POS_INT,
                "n_classes": _POS_INT,
                "latent_dim": _POS_INT,
                "ambient_dim": _POS_INT,
                "dim": _POS_INT,
                "noise": {"type": "number", "minimum": 0},
                "thickness": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
                "path": {"type": "string"},
                "images": {"type": "string"},
                "labels": {"type": "string"},
                "limit": _POS_INT,
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden_widths": {"type": "array", "items": _POS_INT},
                "activation": {"enum": ["relu", "linear"]},
                "init": {"enum": ["random", "identity"]},
                "init_scale": {"type": "number", "exclusiveMinimum": 0},
                "bias": {"type": "boolean"},
                "seed": {"type": "integer"},
                "checkpoint": {"type": "string"},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "learning_rate_start": {"type": "number", "exclusiveMinimum": 0},
                "learning_rate_decay_per_epoch": {"type": "number", "minimum": 0},
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": _POS_INT,
                "weight_noise_sigma": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
            },
        },
        "probe": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "layers": {"oneOf": [{"const": "all"}, {"type": "array", "items": {"type": "integer", "minimum": 0}}]},
                "methods": {"type": "array", "items": {"enum": ["local", "global"]}, "minItems": 1},
                "subsample": _POS_INT,
                "seed": {"type": "integer"},
                "relu_ratios": {"type": "boolean"},
                "n_jobs": _POS_INT,
                "local": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"discard_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
                },
                "global": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"k": _POS_INT, "d_min": _POS_INT, "d_max": _POS_INT},
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dir"],
            "properties": {"dir": {"type": "string"}, "prefix": {"type": "string"}},
        },
    },
}


class StageError(RepdimError):
    """A pipeline stage failed; keeps the underlying exit code."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2 if isinstance(cause, OSError) else 3)


def validate_config(config: dict) -> dict:
    """Schema check; raises UsageError naming the offending key path."""
    try:
        jsonschema.validate(config, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"invalid run config at {where}: {exc.message}") from None
    return config


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from None
    return validate_config(doc)


def ingest(source_cfg: dict) -> PointCloud:
    src = source_cfg["source"]
    seed = source_cfg.get("seed", 0)
    if src == "generator":
        kind = source_cfg.get("generator", "class_manifolds")
        if kind == "class_manifolds":
            return generate_class_manifolds(
                source_cfg.get("n_per_class", 500), source_cfg.get("n_classes", 10), source_cfg.get("latent_dim", 4),
                source_cfg.get("ambient_dim", 64), source_cfg.get("noise", 0.05), seed,
            )
        n = source_cfg.get("n", 1000)
        if kind == "hypercube":
            c = generate_hypercube(n, source_cfg.get("dim", 2), seed)
        elif kind == "hypersphere":
            c = generate_hypersphere(n, source_cfg.get("dim", 2), seed)
        else:
            c = generate_swiss_roll(n, source_cfg.get("thickness", 0.0), seed)
        return PointCloud(c.points, np.zeros(c.n, dtype=np.int64))
    if src == "csv":
        if "path" not in source_cfg:
            raise UsageError("csv dataset needs 'path'")
        cloud = load_csv(source_cfg["path"], label_column=True)
    else:
        if "images" not in source_cfg or "labels" not in source_cfg:
            raise UsageError("idx dataset needs 'images' and 'labels'")
        cloud = load_idx_dataset(source_cfg["images"], source_cfg["labels"])
    if "limit" in source_cfg and cloud.n > source_cfg["limit"]:
        cloud = cloud.subset(np.arange(source_cfg["limit"]))
    return cloud


@dataclass
class RunResult:
    before: ProbeReport
    after: ProbeReport
    losses: np.ndarray
    phases: dict
    relu: dict
    files: List[Path] = field(default_factory=list)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (RepdimError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc


def _probe_all(model, dataset, pc, layers, relu):
    methods = pc.get("methods", ["local"])
    opts = {m: pc[m] for m in ("local", "global") if m in pc}
    kw = dict(methods=methods, subsample=pc.get("subsample", 1000), seed=pc.get("seed", 0),
              options=opts, n_jobs=pc.get("n_jobs", 1))
    post = probe_layers(model, dataset, layers, **kw)
    ratios = None
    if relu:
        hidden = [l for l in layers if 0 < l <= model.n_layers and model.layers[l - 1].activation == "relu"]
        if hidden:
            pre = probe_layers(model, dataset, hidden, pre_activation=True, **kw)
            matched = replace(post, entries=[e for e in post.entries if e.layer_index in hidden])
            ratios = relu_expansion_ratios(pre, matched)
    return post, ratios


def _phase_dict(report):
    out = {}
    for m in report.metadata["methods"]:
        try:
            out[m] = detect_phases(report, m).as_dict()
        except RepdimError as exc:
            out[m] = {"error": str(exc)}
    return out


def run(config: dict) -> RunResult:
    """Execute the whole pipeline; returns the reports and written files.

    Re-running an identical config produces byte-identical files apart
    from the ``timestamp`` field of the JSON report.
    """
    config = validate_config(config)
    out_dir = Path(config["output"]["dir"])
    prefix = config["output"].get("prefix", "run")
    written: List[Path] = []
    try:
        cloud = _stage("ingest", ingest, config["dataset"])
        dataset = _stage("ingest", LabeledDataset.from_cloud, cloud)

        mc = config.get("model", {})
        if "checkpoint" in mc:
            model = _stage("model", load_model, mc["checkpoint"])
            if model.input_dim != cloud.dim:
                raise StageError("model", UsageError(f"checkpoint expects {model.input_dim} inputs, data has {cloud.dim}"))
        else:
            widths = [cloud.dim] + list(mc.get("hidden_widths", [200] * 7)) + [dataset.n_classes]
            model = _stage("model", build_mlp, widths, mc.get("activation", "relu"), mc.get("init", "identity"),
                           mc.get("init_scale", 1.0), mc.get("bias", False), mc.get("seed", 0))

        pc = config.get("probe", {})
        layers = pc.get("layers", "all")
        layers = list(range(model.n_layers + 1)) if layers == "all" else list(layers)
        relu = pc.get("relu_ratios", True)
        before, _ = _stage("probe-before", _probe_all, model, dataset, pc, layers, False)

        tc = _stage("train", TrainConfig, **config.get("train", {}))
        trained, losses = _stage("train", train, model, dataset, tc)
        after, ratios = _stage("probe-after", _probe_all, trained, dataset, pc, layers, relu)

        phases = {"before": _phase_dict(before), "after": _phase_dict(after)}
        relu_doc = ratios.as_dict() if ratios is not None else None
        report = {
            "timestamp": now_stamp(),
            "config": config,
            "n_points": cloud.n,
            "n_classes": dataset.n_classes,
            "widths": model.widths,
            "loss_initial": float(losses[0]),
            "loss_final": float(losses[-1]),
            "before": {k: v for k, v in before.to_dict().items() if k != "timestamp"},
            "after": {k: v for k, v in after.to_dict().items() if k != "timestamp"},
            "phases": phases,
            "relu_expansion": relu_doc,
        }
        before.check_consistency()
        after.check_consistency()

        def write(name, text):
            path = out_dir / f"{prefix}_{name}"
            written.append(path)
            path.write_text(text)

        def write_all():
            out_dir.mkdir(parents=True, exist_ok=True)
            write("report.json", json.dumps(report, indent=1, allow_nan=True))
            stages = [("before", before), ("after", after)]
            write("entries.csv", _stage_csv(ENTRY_FIELDS, [(s, r.entries) for s, r in stages]))
            write("profile.csv", _stage_csv(SUMMARY_FIELDS, [(s, r.summary) for s, r in stages]))
            ckpt = out_dir / f"{prefix}_model.json"
            written.append(ckpt)
            save_model(ckpt, trained)
            write("loss.csv", "epoch,loss\n" + "".join(f"{e},{v!r}\n" for e, v in enumerate(map(float, losses))))

        _stage("write", write_all)
    except BaseException:
        for p in written:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        raise
    return RunResult(before, after, losses, phases, relu_doc, written)


def _stage_csv(fields, groups) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("stage",) + tuple(fields))
    for stage, rows in groups:
        for r in rows:
            w.writerow([stage] + [_cell(getattr(r, f)) for f in fields])
    return buf.getvalue()
