"""Evaluation metrics, CSV reports and small self-rendered SVG plots."""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateInput, InvalidParameter, IoError, ShapeMismatch
from .nn import NeuralNet, grids_to_tensor, tensor_to_grids
from .uncertainty import McConfig, mc_predict, summarize

EVAL_COLUMNS = ("example", "baseline_mse", "nn_mse", "uncertainty")
ITERATION_COLUMNS = ("iteration", "val_mse_before", "val_mse_after", "mean_uncertainty_before",
                     "mean_uncertainty_after", "num_selected", "trainset_size")
TRAIN_COLUMNS = ("epoch", "train_mse", "val_mse")


def mse(a, b) -> float:
    """Mean of ``|a - b|**2`` over all entries."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    d = a.astype(np.complex128) - b.astype(np.complex128)
    return float(np.mean(d.real ** 2 + d.imag ** 2))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ShapeMismatch("pearson needs sequences of equal length")
    if x.size < 2:
        raise DegenerateInput("pearson needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise DegenerateInput("pearson is undefined for a constant sequence")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


@dataclass
class EvalResult:
    baseline_mse: np.ndarray
    nn_mse: np.ndarray
    uncertainty: np.ndarray
    uncertainty_defined: bool = True
    config: dict = field(default_factory=dict)

    @property
    def mean_baseline_mse(self) -> float:
        return float(np.mean(self.baseline_mse))

    @property
    def mean_nn_mse(self) -> float:
        return float(np.mean(self.nn_mse))

    @property
    def pearson_r(self) -> float:
        """Correlation of uncertainty with NN squared error; NaN when undefined."""
        try:
            return pearson(self.uncertainty, self.nn_mse)
        except DegenerateInput:
            return float("nan")


def evaluate(net: NeuralNet, test_set, mc: McConfig = McConfig()) -> EvalResult:
    """Score the pilot baseline and the network on every example of ``test_set``.

    The example input is the interpolated pilot estimate, so the baseline MSE is
    ``mse(input, target)``. With fewer than two MC passes the uncertainty is
    undefined and reported as zeros.
    """
    examples = list(test_set)
    if not examples:
        raise InvalidParameter("cannot evaluate on an empty set")
    defined = mc.num_passes >= 2
    if not defined:
        warnings.warn("uncertainty needs at least 2 MC passes; reporting zeros", RuntimeWarning)
    base, nn_err, unc = [], [], []
    for e in examples:
        x = grids_to_tensor(e.input)
        base.append(mse(e.input, e.target))
        nn_err.append(mse(tensor_to_grids(net.forward(x)), e.target))
        unc.append(summarize(mc_predict(net, x, mc), mc.alpha).scalar_entropy if defined else 0.0)
    return EvalResult(np.array(base), np.array(nn_err), np.array(unc), defined,
                      {"num_passes": mc.num_passes, "seed": mc.seed, "alpha": mc.alpha})


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_atomic(path, data) -> None:
    """Write ``data`` (str or bytes) to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        mode = "wb" if isinstance(data, bytes) else "w"
        with open(tmp, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            tmp.unlink()
        except OSError:
            pass
        raise IoError(f"cannot write {path}: {exc}") from exc


def eval_csv(result: EvalResult) -> str:
    rows = zip(range(len(result.nn_mse)), result.baseline_mse, result.nn_mse, result.uncertainty)
    return _csv_text(EVAL_COLUMNS, rows)


def iterations_csv(records) -> str:
    rows = ((r.iteration, r.val_mse_before, r.val_mse_after, r.mean_uncertainty_before,
             r.mean_uncertainty_after, r.num_selected, r.trainset_size) for r in records)
    return _csv_text(ITERATION_COLUMNS, rows)


def train_report_csv(report) -> str:
    rows = ((i + 1, tr, va) for i, (tr, va) in enumerate(zip(report.train_loss, report.val_loss)))
    return _csv_text(TRAIN_COLUMNS, rows)


def _svg(series: Sequence[dict], title: str, xlabel: str, ylabel: str) -> str:
    """Render scatter/line series as a standalone SVG document."""
    width, height, margin = 480, 360, 56
    xs = np.concatenate([np.asarray(s["x"], float) for s in series])
    ys = np.concatenate([np.asarray(s["y"], float) for s in series])
    finite = np.isfinite(xs) & np.isfinite(ys)
    if finite.any():
        x0, x1 = xs[finite].min(), xs[finite].max()
        y0, y1 = ys[finite].min(), ys[finite].max()
    else:
        x0 = x1 = y0 = y1 = 0.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(x):
        return margin + (x - x0) / (x1 - x0) * (width - 2 * margin)

    def py(y):
        return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 16}" text-anchor="middle">{xlabel}</text>',
        f'<text x="16" y="{height / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {height / 2})">{ylabel}</text>',
        f'<text x="{margin}" y="{height - margin + 14}" text-anchor="middle">{x0:.3g}</text>',
        f'<text x="{width - margin}" y="{height - margin + 14}" text-anchor="middle">{x1:.3g}</text>',
        f'<text x="{margin - 4}" y="{height - margin}" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{margin - 4}" y="{margin + 4}" text-anchor="end">{y1:.3g}</text>',
    ]
    for k, s in enumerate(series):
        color = s.get("color", "#1f77b4")
        pts = [(px(x), py(y)) for x, y in zip(s["x"], s["y"]) if math.isfinite(x) and math.isfinite(y)]
        if s.get("kind") == "line" and pts:
            coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for a, b in pts:
            out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{color}"/>')
        if s.get("label"):
            out.append(f'<text x="{width - margin}" y="{margin + 14 * k}" text-anchor="end" '
                       f'fill="{color}">{s["label"]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(results, out_dir) -> list:
    """Write CSV and SVG artifacts for an :class:`EvalResult` or a list of iteration records.

    Returns the list of written paths.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    if isinstance(results, EvalResult):
        files = {
            "eval.csv": eval_csv(results),
            "uncertainty_vs_error.svg": _svg(
                [{"x": results.uncertainty, "y": results.nn_mse, "label": "DL model"}],
                "Uncertainty vs. NN squared error", "uncertainty (entropy, nats)", "NN MSE"),
        }
    else:
        records = list(results)
        it = [r.iteration for r in records]
        files = {
            "iterations.csv": iterations_csv(records),
            "mse_per_iteration.svg": _svg(
                [{"x": it, "y": [r.val_mse_before for r in records], "kind": "line",
                  "label": "val MSE before", "color": "#ff7f0e"},
                 {"x": it, "y": [r.val_mse_after for r in records], "kind": "line",
                  "label": "val MSE after", "color": "#1f77b4"}],
                "Validation MSE per retraining iteration", "iteration", "MSE"),
        }
    paths = []
    for name, text in files.items():
        write_atomic(out_dir / name, text)
        paths.append(out_dir / name)
    return paths
