"""Distributional and classification metrics, entropy binning, report emission.

JS and BC are means of the per-sample `distlib` values, sharing one code
path with the losses. R-squared is a pooled goodness-of-fit over every
(sample, class) cell against the class-mean baseline; the reported value is
clamped to [0, 1] while the raw value is kept alongside for audit. Hard
labels come from argmax with ties broken toward the lowest class index, for
predictions and targets alike.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import distlib

METRIC_ORDER = ("JS", "BC", "R2", "R2_raw", "F1_macro", "WF1", "ACC")
LOWER_IS_BETTER = ("JS",)

CSV_COLUMNS = ("system", "fold", "seed", "bin", "metric", "value", "mean", "std")


@dataclass
class EvalReport:
    """Metrics of one system evaluation, with the entropy-binned breakdown."""

    system: str
    fold: object
    seed: object
    metrics: dict
    bins: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "system": self.system,
            "fold": self.fold,
            "seed": self.seed,
            "metrics": self.metrics,
            "bins": self.bins,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, blob):
        return cls(
            system=blob["system"],
            fold=blob["fold"],
            seed=blob["seed"],
            metrics=blob["metrics"],
            bins=blob.get("bins", []),
            provenance=blob.get("provenance", {}),
        )


def _as_matrix(rows) -> np.ndarray:
    if isinstance(rows, np.ndarray) and rows.ndim == 2:
        return rows.astype(np.float64, copy=False)
    out = []
    for r in rows:
        out.append(r.probs if isinstance(r, distlib.SoftLabel) else np.asarray(r, dtype=np.float64))
    return np.stack(out)


def dist_metrics(preds, targets) -> dict:
    """JS / BC / R2 over a split; R2 is missing when all targets coincide."""
    p = _as_matrix(preds)
    y = _as_matrix(targets)
    if p.shape != y.shape or p.shape[0] < 1:
        raise ValueError(f"prediction/target shapes differ: {p.shape} vs {y.shape}")
    js = float(np.mean([distlib.js_divergence(p[i], y[i]) for i in range(len(p))]))
    bc = float(np.mean([distlib.bhattacharyya(p[i], y[i]) for i in range(len(p))]))
    y_bar = y.mean(axis=0)
    ss_tot = float(((y - y_bar) ** 2).sum())
    if ss_tot == 0.0:
        r2_raw, r2 = None, None
    else:
        r2_raw = 1.0 - float(((y - p) ** 2).sum()) / ss_tot
        r2 = min(max(r2_raw, 0.0), 1.0)
    return {"JS": js, "BC": bc, "R2": r2, "R2_raw": r2_raw}


def hard_labels(rows) -> np.ndarray:
    return np.argmax(_as_matrix(rows), axis=1)


def cls_metrics(preds, targets) -> dict:
    """Macro-F1, support-weighted F1 and accuracy on argmax labels.

    Classes absent from both targets and predictions contribute F1 = 0 to
    the macro average and zero weight to the weighted one.
    """
    p = _as_matrix(preds)
    y = _as_matrix(targets)
    if p.shape != y.shape or p.shape[0] < 1:
        raise ValueError(f"prediction/target shapes differ: {p.shape} vs {y.shape}")
    n_classes = y.shape[1]
    p_hat = np.argmax(p, axis=1)
    y_hat = np.argmax(y, axis=1)

    f1 = np.zeros(n_classes)
    support = np.zeros(n_classes)
    for c in range(n_classes):
        tp = int(np.sum((p_hat == c) & (y_hat == c)))
        fp = int(np.sum((p_hat == c) & (y_hat != c)))
        fn = int(np.sum((p_hat != c) & (y_hat == c)))
        support[c] = tp + fn
        if 2 * tp + fp + fn > 0:
            f1[c] = 2.0 * tp / (2 * tp + fp + fn)

    acc = float(np.mean(p_hat == y_hat))
    macro = float(f1.mean())
    wf1 = float((f1 * support).sum() / support.sum()) if support.sum() > 0 else 0.0
    return {"F1_macro": macro, "WF1": wf1, "ACC": acc}


def all_metrics(preds, targets) -> dict:
    out = dist_metrics(preds, targets)
    out.update(cls_metrics(preds, targets))
    return out


def bin_edges(n_classes: int, n_bins: int) -> np.ndarray:
    return np.linspace(0.0, np.log2(n_classes), n_bins + 1)


def assign_bin(entropy: float, edges: np.ndarray) -> int:
    """Equal-width entropy bin; boundary values fall into the lower bin."""
    h = min(max(entropy, edges[0]), edges[-1])
    return max(0, int(np.searchsorted(edges, h, side="left")) - 1)


def ambiguity_bins(preds, targets, n_bins: int = 4) -> list:
    """Per-bin metric rows stratified by target-label entropy (in bits)."""
    if n_bins < 2:
        raise ValueError("need at least 2 ambiguity bins")
    p = _as_matrix(preds)
    y = _as_matrix(targets)
    edges = bin_edges(y.shape[1], n_bins)
    entropy = distlib.entropy_bits_rows(y)
    membership = np.asarray([assign_bin(h, edges) for h in entropy])

    rows = []
    for b in range(n_bins):
        mask = membership == b
        count = int(mask.sum())
        row = {"bin": b, "lo": float(edges[b]), "hi": float(edges[b + 1]), "count": count}
        row["metrics"] = all_metrics(p[mask], y[mask]) if count else None
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# aggregation and emission


def aggregate(reports) -> dict:
    """Mean/std (population) per metric over runs, overall and per bin."""
    if not reports:
        raise ValueError("nothing to aggregate")
    metrics = {}
    for name in METRIC_ORDER:
        values = [r.metrics[name] for r in reports if r.metrics.get(name) is not None]
        if values:
            metrics[name] = {
                "mean": float(np.mean(values)),
                "std": float(np.std(values)),
                "n": len(values),
            }
    bins = []
    n_bins = max((len(r.bins) for r in reports), default=0)
    for b in range(n_bins):
        cell = {"bin": b, "count": 0, "metrics": {}}
        per_run = [r.bins[b] for r in reports if len(r.bins) > b]
        if per_run:
            cell["lo"] = per_run[0]["lo"]
            cell["hi"] = per_run[0]["hi"]
        cell["count"] = int(sum(row["count"] for row in per_run))
        for name in METRIC_ORDER:
            values = [
                row["metrics"][name]
                for row in per_run
                if row["metrics"] is not None and row["metrics"].get(name) is not None
            ]
            if values:
                cell["metrics"][name] = {
                    "mean": float(np.mean(values)),
                    "std": float(np.std(values)),
                    "n": len(values),
                }
        bins.append(cell)
    return {"metrics": metrics, "bins": bins}


def _fmt(x):
    return "" if x is None else repr(float(x))


def _order_key(value):
    text = str(value)
    return (0, int(text), "") if text.lstrip("-").isdigit() else (1, 0, text)


def render_csv(reports, summary) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in sorted(reports, key=lambda r: (str(r.system), _order_key(r.fold), _order_key(r.seed))):
        for name in METRIC_ORDER:
            if r.metrics.get(name) is None:
                continue
            writer.writerow([r.system, r.fold, r.seed, "all", name, _fmt(r.metrics[name]), "", ""])
        for row in r.bins:
            writer.writerow([r.system, r.fold, r.seed, row["bin"], "count", row["count"], "", ""])
            if row["metrics"] is None:
                continue
            for name in METRIC_ORDER:
                if row["metrics"].get(name) is None:
                    continue
                writer.writerow(
                    [r.system, r.fold, r.seed, row["bin"], name, _fmt(row["metrics"][name]), "", ""]
                )
    system = reports[0].system if reports else ""
    for name, cell in summary["metrics"].items():
        writer.writerow([system, "all", "all", "all", name, "", _fmt(cell["mean"]), _fmt(cell["std"])])
    for row in summary["bins"]:
        writer.writerow([system, "all", "all", row["bin"], "count", row["count"], "", ""])
        for name, cell in row["metrics"].items():
            writer.writerow(
                [system, "all", "all", row["bin"], name, "", _fmt(cell["mean"]), _fmt(cell["std"])]
            )
    return buf.getvalue()


def render_markdown(reports, summary) -> str:
    system = reports[0].system if reports else ""
    lines = [f"### {system}: {len(reports)} run(s)", ""]
    lines.append("| metric | mean | std | n |")
    lines.append("|---|---|---|---|")
    for name, cell in summary["metrics"].items():
        lines.append(f"| {name} | {cell['mean']:.4f} | {cell['std']:.4f} | {cell['n']} |")
    if summary["bins"]:
        lines.append("")
        lines.append("| bin | entropy range (bits) | count | " + " | ".join(
            name for name in METRIC_ORDER if name != "R2_raw") + " |")
        lines.append("|---" * (3 + len(METRIC_ORDER) - 1) + "|")
        for row in summary["bins"]:
            cells = [str(row["bin"]), f"[{row.get('lo', 0):.3f}, {row.get('hi', 0):.3f}]", str(row["count"])]
            for name in METRIC_ORDER:
                if name == "R2_raw":
                    continue
                cell = row["metrics"].get(name)
                cells.append(f"{cell['mean']:.4f}" if cell else "-")
            lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    return "\n".join(lines)


def render_json(reports, summary) -> str:
    blob = {
        "reports": [r.to_dict() for r in reports],
        "aggregate": summary,
    }
    return json.dumps(blob, indent=2) + "\n"


def emit_report(reports, path, fmt: str):
    """Write runs + aggregate in one of {csv, markdown, json}, deterministically."""
    if not reports:
        raise ValueError("emit_report needs at least one report")
    summary = aggregate(reports)
    renderers = {"csv": render_csv, "markdown": render_markdown, "json": render_json}
    if fmt not in renderers:
        raise ValueError(f"unknown report format {fmt!r}")
    text = renderers[fmt](reports, summary)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def load_report(path):
    """Read back a JSON report: (reports, aggregate)."""
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    return [EvalReport.from_dict(r) for r in blob["reports"]], blob["aggregate"]
