"""Command-line entry point: gen / train / eval / compare / bins.

Configuration precedence is flags > config file (JSON) > built-in defaults.
The fully resolved configuration is frozen into a manifest next to the
outputs; the manifest hash covers the command, config, dataset hash and
artifact version (not the output paths), so re-running a manifest anywhere
reproduces byte-identical logs, checkpoints and reports.

Exit codes: 0 success, 1 usage error, 2 data validation error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__, evalreport, model, trainer
from .dataio import SynthConfig, fold_split, generate_synthetic, load_jsonl, save_jsonl
from .errors import DataValidationError, NumericalAbortError
from .losses import LossConfig
from .model import ModelConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


TRAIN_DEFAULTS = {
    "objective": "amber",
    "student": "at",
    "lambda_rai": 1.0,
    "lambda_mai": 0.5,
    "kappa": 4.0,
    "expert_supervision": "rai",
    "mai_grad": "detached",
    "hidden": 256,
    "fusion_dim": 256,
    "lr": 3e-4,
    "weight_decay": 1e-2,
    "batch": 128,
    "epochs": 30,
    "seeds": 5,
    "folds": None,
    "bins": 4,
    "jobs": None,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="amber", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[], help="generate a synthetic dataset")
    gen.add_argument("--samples", type=int, required=True)
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--dim-a", type=int, default=16)
    gen.add_argument("--dim-t", type=int, default=16)
    gen.add_argument("--raters", type=int, default=10)
    gen.add_argument("--alpha", type=float, default=0.7)
    gen.add_argument("--conflict", type=float, default=0.3)
    gen.add_argument("--noise", type=float, default=0.5)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--folds", type=int, default=5)
    gen.add_argument("--out", required=True)

    train = sub.add_parser("train", help="cross-validated training + evaluation")
    train.add_argument("--data", required=True)
    train.add_argument("--config", help="JSON config file or a previous manifest")
    train.add_argument("--out-dir", required=True)
    train.add_argument("--objective", choices=trainer.OBJECTIVES)
    train.add_argument("--student", choices=model.MODALITIES)
    train.add_argument("--lambda-rai", type=float, dest="lambda_rai")
    train.add_argument("--lambda-mai", type=float, dest="lambda_mai")
    train.add_argument("--kappa", type=float)
    train.add_argument("--expert-supervision", choices=("rai", "none"), dest="expert_supervision")
    train.add_argument("--mai-grad", choices=("detached", "coupled"), dest="mai_grad")
    train.add_argument("--hidden", type=int)
    train.add_argument("--fusion-dim", type=int, dest="fusion_dim")
    train.add_argument("--lr", type=float)
    train.add_argument("--weight-decay", type=float, dest="weight_decay")
    train.add_argument("--batch", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--seeds", type=int, help="number of seeds (0..N-1)")
    train.add_argument("--folds", type=int, help="re-partition into this many folds")
    train.add_argument("--bins", type=int, help="entropy bins in reports")
    train.add_argument("--jobs", type=int, help="parallel (fold, seed) workers")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    ev.add_argument("--bins", type=int, default=4)
    ev.add_argument("--out-dir", required=True)

    cmp_ = sub.add_parser("compare", help="side-by-side aggregate of two report files")
    cmp_.add_argument("--baseline", required=True)
    cmp_.add_argument("--candidate", required=True)
    cmp_.add_argument("--out", help="write the comparison table as CSV")

    bins = sub.add_parser("bins", help="entropy-binned table from report files")
    bins.add_argument("--report", action="append", required=True, help="repeatable, max twice")
    bins.add_argument("--out", help="write the binned table as CSV")

    return parser


# ---------------------------------------------------------------------------
# helpers


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _manifest(command, config, dataset_sha=None, execution=None):
    """Resolved-run record; the hash covers identity, not execution details.

    `config` must contain everything that determines the outputs. Paths and
    worker counts go into `execution`, which is recorded but not hashed, so
    a parallel re-run in another directory reproduces the same hash.
    """
    core = {
        "artifact_version": __version__,
        "command": command,
        "config": config,
        "dataset_sha256": dataset_sha,
    }
    canonical = json.dumps(core, sort_keys=True, separators=(",", ":"))
    core["manifest_sha256"] = hashlib.sha256(canonical.encode()).hexdigest()
    core["execution"] = execution or {}
    return core


def _write_json(path, blob):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=2)
        fh.write("\n")


def _load_config_file(path):
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if isinstance(blob, dict) and "config" in blob and "command" in blob:
        blob = blob["config"]  # accept a prior manifest
    if not isinstance(blob, dict):
        raise DataValidationError("config file must hold a JSON object", path=path)
    return blob


_INT_KEYS = ("hidden", "fusion_dim", "batch", "epochs", "seeds", "folds", "bins", "jobs")
_FLOAT_KEYS = ("lambda_rai", "lambda_mai", "kappa", "lr", "weight_decay")


def _resolve_train_config(ns, parser):
    resolved = dict(TRAIN_DEFAULTS)
    if ns.config:
        file_cfg = _load_config_file(ns.config)
        unknown = set(file_cfg) - set(TRAIN_DEFAULTS) - {"data"}
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        resolved.update({k: v for k, v in file_cfg.items() if k in TRAIN_DEFAULTS})
    for key in TRAIN_DEFAULTS:
        flag = getattr(ns, key, None)
        if flag is not None:
            resolved[key] = flag
    if resolved["jobs"] is None:
        resolved["jobs"] = int(os.environ.get("AMBER_JOBS", "1"))
    try:
        for key in _INT_KEYS:
            if resolved[key] is not None:
                resolved[key] = int(resolved[key])
        for key in _FLOAT_KEYS:
            resolved[key] = float(resolved[key])
    except (TypeError, ValueError):
        parser.error(f"non-numeric config value for {key!r}")
    if resolved["seeds"] < 1:
        parser.error("--seeds must be >= 1")
    if resolved["jobs"] < 1:
        parser.error("--jobs must be >= 1")
    if resolved["bins"] < 2:
        parser.error("--bins must be >= 2")
    return resolved


def _train_config(resolved, ds) -> trainer.TrainConfig:
    model_cfg = ModelConfig(
        dim_a=ds.dim_a,
        dim_t=ds.dim_t,
        n_classes=ds.n_classes,
        hidden=resolved["hidden"],
        fusion_dim=resolved["fusion_dim"],
        student=resolved["student"],
    )
    loss_cfg = LossConfig(
        lambda_rai=resolved["lambda_rai"],
        lambda_mai=resolved["lambda_mai"],
        kappa=resolved["kappa"],
        expert_supervision=resolved["expert_supervision"],
        mai_expert_grad=resolved["mai_grad"],
    )
    return trainer.TrainConfig(
        model=model_cfg,
        loss=loss_cfg,
        objective=resolved["objective"],
        lr=resolved["lr"],
        weight_decay=resolved["weight_decay"],
        batch=resolved["batch"],
        epochs=resolved["epochs"],
        seeds=tuple(range(resolved["seeds"])),
        n_bins=resolved["bins"],
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(ns, parser):
    try:
        cfg = SynthConfig(
            n_samples=ns.samples,
            n_classes=ns.classes,
            dim_a=ns.dim_a,
            dim_t=ns.dim_t,
            n_raters=ns.raters,
            ambiguity_alpha=ns.alpha,
            conflict_rate=ns.conflict,
            noise_sigma=ns.noise,
            seed=ns.seed,
            fold_count=ns.folds,
        )
        ds = generate_synthetic(cfg)
    except ValueError as exc:
        parser.error(str(exc))
    save_jsonl(ds, ns.out)
    manifest = _manifest(
        "gen",
        cfg.to_dict(),
        dataset_sha=_sha256_file(ns.out),
        execution={"outputs": {"dataset": str(ns.out)}},
    )
    _write_json(str(ns.out) + ".manifest.json", manifest)
    print(f"wrote {len(ds)} samples to {ns.out}")
    return EXIT_OK


def cmd_train(ns, parser):
    resolved = _resolve_train_config(ns, parser)
    ds = load_jsonl(ns.data)
    if resolved["folds"] is not None:
        if resolved["folds"] < 3:
            parser.error("--folds must be >= 3")
        ds = ds.with_fold_count(resolved["folds"])
    elif ds.fold_count < 3:
        raise DataValidationError(
            f"dataset declares {ds.fold_count} folds; training needs >= 3", path=ns.data
        )
    try:
        cfg = _train_config(resolved, ds)
    except ValueError as exc:
        parser.error(str(exc))

    out_dir = Path(ns.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "checkpoints").mkdir(exist_ok=True)

    stable = {k: v for k, v in resolved.items() if k != "jobs"}
    manifest = _manifest(
        "train",
        stable,
        _sha256_file(ns.data),
        execution={
            "data": str(ns.data),
            "jobs": resolved["jobs"],
            "outputs": {
                "log": str(out_dir / "train-log.jsonl"),
                "checkpoints": str(out_dir / "checkpoints"),
                "report": str(out_dir / "report.json"),
            },
        },
    )
    _write_json(out_dir / "manifest.json", manifest)

    records, _ = trainer.cross_validate(ds, cfg, jobs=resolved["jobs"])
    for rec in records:
        rec.report.provenance["manifest"] = manifest["manifest_sha256"]

    with open(out_dir / "train-log.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            run_id = f"f{rec.fold}-s{rec.seed}"
            for entry in rec.epochs:
                fh.write(json.dumps({"run_id": run_id, "epoch": entry["epoch"],
                                     "split": "train", **entry["train"]}) + "\n")
                fh.write(json.dumps({"run_id": run_id, "epoch": entry["epoch"],
                                     "split": "val", **entry["val"]}) + "\n")

    for rec in records:
        model.save_checkpoint(
            out_dir / "checkpoints" / f"ckpt-f{rec.fold}-s{rec.seed}.json",
            cfg.model,
            rec.selected_params,
            provenance={
                "system": cfg.objective,
                "fold": rec.fold,
                "seed": rec.seed,
                "selected_epoch": rec.selected_epoch,
                "manifest": manifest["manifest_sha256"],
            },
        )

    reports = [rec.report for rec in records]
    evalreport.emit_report(reports, out_dir / "report.json", "json")
    evalreport.emit_report(reports, out_dir / "report.csv", "csv")
    evalreport.emit_report(reports, out_dir / "report.md", "markdown")
    print(evalreport.render_markdown(reports, evalreport.aggregate(reports)))
    return EXIT_OK


def cmd_eval(ns, parser):
    try:
        model_cfg, params, provenance = model.load_checkpoint(ns.checkpoint)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataValidationError(f"invalid checkpoint: {exc}", path=ns.checkpoint) from None
    ds = load_jsonl(ns.data)
    if ns.split == "all":
        subset = ds
    else:
        fold = provenance.get("fold")
        if fold is None:
            raise DataValidationError(
                "checkpoint has no fold provenance; use --split all", path=ns.checkpoint
            )
        try:
            train, val, test = fold_split(ds, int(fold))
        except ValueError as exc:
            raise DataValidationError(str(exc), path=ns.data) from None
        subset = {"train": train, "val": val, "test": test}[ns.split]

    h_a, h_t, y = subset.matrices()
    preds = model.predict(params, model_cfg, h_a, h_t)[model_cfg.student]
    report = evalreport.EvalReport(
        system=provenance.get("system", "checkpoint"),
        fold=provenance.get("fold", "all"),
        seed=provenance.get("seed", "all"),
        metrics=evalreport.all_metrics(preds, y),
        bins=evalreport.ambiguity_bins(preds, y, ns.bins),
        provenance={**provenance, "split": ns.split},
    )
    out_dir = Path(ns.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    evalreport.emit_report([report], out_dir / "eval-report.json", "json")
    evalreport.emit_report([report], out_dir / "eval-report.csv", "csv")
    print(evalreport.render_markdown([report], evalreport.aggregate([report])))
    return EXIT_OK


def _relative_improvement(metric, base, cand):
    if base == 0:
        return None
    if metric in evalreport.LOWER_IS_BETTER:
        return (base - cand) / base
    return (cand - base) / base


def cmd_compare(ns, parser):
    _, base_agg = evalreport.load_report(ns.baseline)
    _, cand_agg = evalreport.load_report(ns.candidate)
    base_metrics, cand_metrics = base_agg["metrics"], cand_agg["metrics"]
    if set(base_metrics) != set(cand_metrics):
        missing = set(base_metrics) ^ set(cand_metrics)
        raise DataValidationError(f"metric sets differ between reports: {sorted(missing)}")

    rows = []
    for name in evalreport.METRIC_ORDER:
        if name not in base_metrics:
            continue
        b, c = base_metrics[name]["mean"], cand_metrics[name]["mean"]
        rel = _relative_improvement(name, b, c)
        rows.append((name, b, c, c - b, rel))

    lines = ["| metric | baseline | candidate | delta | improvement |", "|---|---|---|---|---|"]
    for name, b, c, delta, rel in rows:
        rel_txt = f"{100 * rel:+.1f}%" if rel is not None else "-"
        lines.append(f"| {name} | {b:.4f} | {c:.4f} | {delta:+.4f} | {rel_txt} |")
    table = "\n".join(lines)
    print(table)

    if ns.out:
        import csv as _csv

        with open(ns.out, "w", encoding="utf-8", newline="") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "baseline_mean", "candidate_mean", "delta", "relative_improvement"])
            for name, b, c, delta, rel in rows:
                writer.writerow([name, repr(b), repr(c), repr(delta), "" if rel is None else repr(rel)])
    return EXIT_OK


def cmd_bins(ns, parser):
    if len(ns.report) > 2:
        parser.error("--report may be given at most twice")
    loaded = []
    for path in ns.report:
        reports, agg = evalreport.load_report(path)
        name = reports[0].system if reports else path
        loaded.append((name, agg["bins"]))

    metric_names = [m for m in evalreport.METRIC_ORDER if m != "R2_raw"]
    header = ["bin", "lo", "hi"]
    for name, _ in loaded:
        header.extend(f"{name}:{m}" for m in metric_names)
    rows = []
    n_bins = max(len(b) for _, b in loaded)
    for i in range(n_bins):
        cells = {}
        row = [i]
        for _, bins_list in loaded:
            if i < len(bins_list):
                cells = bins_list[i]
                break
        row.extend([f"{cells.get('lo', 0):.4f}", f"{cells.get('hi', 0):.4f}"])
        for _, bins_list in loaded:
            bin_row = bins_list[i] if i < len(bins_list) else {"metrics": {}}
            for m in metric_names:
                cell = bin_row["metrics"].get(m)
                row.append(repr(cell["mean"]) if cell else "")
        rows.append(row)

    print(",".join(header))
    for row in rows:
        print(",".join(str(x) for x in row))
    if ns.out:
        with open(ns.out, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(str(x) for x in row) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "gen": cmd_gen,
        "train": cmd_train,
        "eval": cmd_eval,
        "compare": cmd_compare,
        "bins": cmd_bins,
    }
    try:
        return handlers[ns.command](ns, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    except DataValidationError as exc:
        sys.stderr.write(f"amber: data validation error: {exc}\n")
        return EXIT_DATA
    except NumericalAbortError as exc:
        sys.stderr.write(f"amber: numerical abort: {exc}\n")
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        sys.stderr.write(f"amber: {exc}\n")
        return EXIT_DATA


def app():
    sys.exit(main())


if __name__ == "__main__":
    app()
