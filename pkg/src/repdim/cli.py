"""Command line: ``repdim {generate,estimate,train,probe,run,oracle}``.

Exit codes: 0 success, 1 usage, 2 data or file format, 3 numerical or
estimation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .errors import DataFormatError, EstimationError, RepdimError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump(obj, out=None):
    text = json.dumps(obj, indent=1, allow_nan=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _load_points(path, labels=False, idx_labels=None):
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: no such file")
    name = path.name.lower()
    if "idx" in name or name.endswith("-ubyte") or name.endswith("-ubyte.gz"):
        if idx_labels:
            return D.load_idx_dataset(path, idx_labels)
        return D.load_idx_images(path)
    return D.load_csv(path, label_column=labels)


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(a):
    if a.kind == "hypercube":
        cloud = D.generate_hypercube(a.n, a.dim, a.seed)
    elif a.kind == "hypersphere":
        cloud = D.generate_hypersphere(a.n, a.dim, a.seed)
    elif a.kind == "swiss-roll":
        cloud = D.generate_swiss_roll(a.n, a.thickness, a.seed)
    else:
        per = max(1, a.n // a.classes)
        cloud = D.generate_class_manifolds(per, a.classes, a.dim, a.ambient_dim, a.noise, a.seed)
    D.save_csv(a.out, cloud)
    print(f"wrote {cloud.n} x {cloud.dim} points to {a.out}", file=sys.stderr)
    return 0


def _estimate_one(cloud, a):
    if a.method == "local":
        from .local_id import estimate_local_id

        return estimate_local_id(cloud, discard_fraction=a.discard_fraction)
    from .global_id import estimate_global_id

    return estimate_global_id(cloud, k=a.k, d_min=a.d_min, d_max=a.d_max, n_jobs=a.jobs)


def cmd_estimate(a):
    cloud = _load_points(a.input, labels=a.labels or a.per_class, idx_labels=a.idx_labels)
    if a.per_class:
        results = []
        for sub in D.split_by_class(cloud):
            lab = int(sub.labels[0])
            try:
                est = _estimate_one(sub, a).as_dict()
            except EstimationError as exc:
                est = {"error": str(exc)}
            results.append({"class_id": lab, **est})
        dims = [r["dimension"] for r in results if "dimension" in r]
        _dump({"classes": results, "mean": float(np.mean(dims)) if dims else None}, a.out)
        return 0 if dims else 3
    _dump(_estimate_one(cloud, a).as_dict(), a.out)
    return 0


def _train_config(a):
    from .nn import TrainConfig

    doc = {}
    if a.config:
        try:
            doc = json.loads(Path(a.config).read_text())
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{a.config}: invalid JSON ({exc})") from None
    model_doc = doc.pop("model", {})
    for key, val in [
        ("learning_rate_start", a.lr), ("learning_rate_decay_per_epoch", a.lr_decay),
        ("epochs", a.epochs), ("batch_size", a.batch_size),
        ("weight_noise_sigma", a.sigma), ("seed", a.seed),
    ]:
        if val is not None:
            doc[key] = val
    try:
        return TrainConfig(**doc), model_doc
    except TypeError as exc:
        raise UsageError(f"bad training config: {exc}") from None


def cmd_train(a):
    from .nn import build_mlp, load_model, save_model, train

    cloud = _load_points(a.data, labels=True, idx_labels=a.idx_labels)
    dataset = D.LabeledDataset.from_cloud(cloud)
    cfg, mdoc = _train_config(a)
    if a.model:
        model = load_model(a.model)
    else:
        hidden = a.widths if a.widths else mdoc.get("hidden_widths", [200] * 7)
        widths = [cloud.dim] + list(hidden) + [dataset.n_classes]
        model = build_mlp(widths, a.activation or mdoc.get("activation", "relu"),
                          a.init or mdoc.get("init", "identity"), mdoc.get("init_scale", 1.0),
                          mdoc.get("bias", False), mdoc.get("seed", cfg.seed))
    trained, losses = train(model, dataset, cfg)
    save_model(a.checkpoint, trained)
    if a.loss_trace:
        Path(a.loss_trace).write_text(
            "epoch,loss\n" + "".join(f"{e},{float(v)!r}\n" for e, v in enumerate(losses))
        )
    print(f"loss {losses[0]!r} -> {losses[-1]!r} after {len(losses) - 1} epochs", file=sys.stderr)
    return 0


def cmd_probe(a):
    from .nn import load_model
    from .probe import detect_phases, probe_layers

    model = load_model(a.checkpoint)
    cloud = _load_points(a.data, labels=True, idx_labels=a.idx_labels)
    opts = {"local": {"discard_fraction": a.discard_fraction}, "global": {"k": a.k, "d_max": a.d_max}}
    rep = probe_layers(model, cloud, a.layers, a.methods, a.subsample, a.seed, a.pre_activation, opts, a.jobs)
    doc = rep.to_dict()
    if len(rep.series(a.methods[0])[0]) >= 3:
        try:
            doc["phases"] = detect_phases(rep, a.methods[0]).as_dict()
        except RepdimError as exc:
            doc["phases"] = {"error": str(exc)}
    rep.check_consistency()
    _dump(doc, a.out)
    if a.csv:
        Path(a.csv).write_text(rep.entries_csv())
    return 0


def cmd_run(a):
    from .pipeline import load_config, run

    res = run(load_config(a.config))
    for p in res.files:
        print(p)
    return 0


def cmd_oracle(a):
    from .oracle import run_oracle_suite

    ok = run_oracle_suite(quick=a.quick, seed=a.seed, out=sys.stdout)
    return 0 if ok else 3


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="repdim", description="Intrinsic dimension of data and of network representations.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    g.add_argument("kind", choices=["hypercube", "hypersphere", "swiss-roll", "class-manifolds"])
    g.add_argument("--n", type=int, default=1000, help="points (total for class-manifolds)")
    g.add_argument("--dim", type=int, default=2, help="cube/sphere dimension or latent dimension")
    g.add_argument("--thickness", type=float, default=0.0)
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--ambient-dim", type=int, default=64)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("estimate", help="intrinsic dimension of a point cloud")
    e.add_argument("input", help="CSV file or IDX image file")
    e.add_argument("--method", choices=["local", "global"], default="local")
    e.add_argument("--k", type=int, default=20)
    e.add_argument("--discard-fraction", type=float, default=0.1)
    e.add_argument("--d-min", type=int, default=1)
    e.add_argument("--d-max", type=int, default=50)
    e.add_argument("--labels", action="store_true", help="last CSV column holds class labels")
    e.add_argument("--idx-labels", help="IDX label file matching an IDX image input")
    e.add_argument("--per-class", action="store_true", help="estimate every class separately")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    t = sub.add_parser("train", help="train an MLP and write a checkpoint")
    t.add_argument("data", help="labelled CSV (label last) or IDX images")
    t.add_argument("--idx-labels")
    t.add_argument("--config", help="JSON with TrainConfig fields and an optional 'model' block")
    t.add_argument("--model", help="start from this checkpoint")
    t.add_argument("--widths", type=int, nargs="+", help="hidden layer widths")
    t.add_argument("--activation", choices=["relu", "linear"])
    t.add_argument("--init", choices=["random", "identity"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lr-decay", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--sigma", type=float, help="weight noise standard deviation")
    t.add_argument("--seed", type=int)
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--loss-trace")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("probe", help="per-layer, per-class dimension report")
    pr.add_argument("checkpoint")
    pr.add_argument("data")
    pr.add_argument("--idx-labels")
    pr.add_argument("--layers", type=int, nargs="+")
    pr.add_argument("--methods", nargs="+", choices=["local", "global"], default=["local"])
    pr.add_argument("--subsample", type=int, default=1000)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--pre-activation", action="store_true")
    pr.add_argument("--discard-fraction", type=float, default=0.1)
    pr.add_argument("--k", type=int, default=20)
    pr.add_argument("--d-max", type=int, default=50)
    pr.add_argument("--jobs", type=int, default=1)
    pr.add_argument("--out")
    pr.add_argument("--csv")
    pr.set_defaults(func=cmd_probe)

    r = sub.add_parser("run", help="full pipeline from a JSON config")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="check the two-layer theory against its closed forms")
    o.add_argument("--quick", action="store_true", help="fewer instances and steps")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except RepdimError as exc:
        print(f"repdim: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"repdim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
