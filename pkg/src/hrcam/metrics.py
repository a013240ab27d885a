"""Threshold-sweep localization metrics against ground-truth masks.

A normalized activation map is binarized at nine thresholds (0.1 .. 0.9,
strict greater-than), each binary map is matched against the mask's positive
and negative pixels, and sensitivity / specificity / precision / fall-out
are reported per threshold plus as unweighted means over the nine rows.
Dataset-level numbers average per-sample metrics per threshold across
samples first, then across thresholds.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .cams import CamMap
from .model import HeadWeights, ModelSpec, Parameters, TapSet, forward, head_features
from .ops import dense_forward
from .simdata import Sample

log = logging.getLogger(__name__)

THRESHOLDS: tuple[float, ...] = tuple((i + 1) / 10 for i in range(9))
METRIC_NAMES = ("sensitivity", "specificity", "precision", "fallout")


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class ThresholdRow:
    threshold: float
    sensitivity: float
    specificity: float
    precision: float
    fallout: float


@dataclass
class EvalMetrics:
    per_threshold: list[ThresholdRow]
    means: dict[str, float]


def binarize(cam: CamMap, t: float) -> np.ndarray:
    """Binary map of pixels strictly above ``t``; requires a normalized map."""
    if not cam.normalized:
        raise ValueError("binarize expects a normalized map; call normalize_cam first")
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {t}")
    return cam.values > t


def confusion(a_c: np.ndarray, a_t: np.ndarray) -> ConfusionCounts:
    if a_c.shape != a_t.shape:
        raise ValueError(f"map {a_c.shape} and mask {a_t.shape} shapes differ")
    pred = a_c.astype(bool)
    truth = a_t.astype(bool)
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(np.count_nonzero(~pred & ~truth))
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> float:
    # 0/0 cells report 0 so threshold rows stay rectangular
    return num / den if den else 0.0


def metrics_from_counts(c: ConfusionCounts) -> dict[str, float]:
    """The four quantifiers; fall-out is fp/(fp+tn), realized as the exact
    float complement of specificity so the identity holds bit for bit."""
    specificity = _ratio(c.tn, c.tn + c.fp)
    return {
        "sensitivity": _ratio(c.tp, c.tp + c.fn),
        "specificity": specificity,
        "precision": _ratio(c.tp, c.tp + c.fp),
        "fallout": 1.0 - specificity if (c.fp + c.tn) else 0.0,
    }


def _mean_row(rows: list[ThresholdRow]) -> dict[str, float]:
    """Unweighted means; fall-out stays the exact complement of specificity."""
    means = {name: sum(getattr(r, name) for r in rows) / len(rows)
             for name in ("sensitivity", "specificity", "precision")}
    means["fallout"] = 1.0 - means["specificity"]
    return means


def sweep(cam: CamMap, mask: np.ndarray) -> EvalMetrics:
    """Per-threshold metrics for one map against one binary mask."""
    positives = int(np.count_nonzero(mask))
    if positives == 0 or positives == mask.size:
        raise ValueError("mask needs at least one positive and one negative pixel")
    rows = []
    for t in THRESHOLDS:
        m = metrics_from_counts(confusion(binarize(cam, t), mask))
        rows.append(ThresholdRow(t, **m))
    return EvalMetrics(rows, _mean_row(rows))


def evaluate_method(samples: Iterable[Sample],
                    cam_fn: Callable[[Sample], CamMap]) -> EvalMetrics:
    """Average per-sample sweeps across a test set.

    ``cam_fn`` must return a normalized map for a sample. Samples whose mask
    is empty or full are excluded with a warning since their metrics are
    undefined. Worker count comes from HRCAM_THREADS (default 1); results
    are reduced in sample order either way.
    """
    samples = list(samples)

    def one(sample: Sample) -> EvalMetrics | None:
        positives = int(np.count_nonzero(sample.mask))
        if positives == 0 or positives == sample.mask.size:
            return None
        return sweep(cam_fn(sample), sample.mask)

    workers = int(os.environ.get("HRCAM_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, samples))
    else:
        results = [one(s) for s in samples]

    kept = [r for r in results if r is not None]
    skipped = len(results) - len(kept)
    if skipped:
        log.warning("excluded %d sample(s) with empty or full masks", skipped)
    if not kept:
        raise ValueError("no evaluable samples: every mask was empty or full")

    rows = []
    for i, t in enumerate(THRESHOLDS):
        row = {name: sum(getattr(r.per_threshold[i], name) for r in kept) / len(kept)
               for name in ("sensitivity", "specificity", "precision")}
        row["fallout"] = 1.0 - row["specificity"]
        rows.append(ThresholdRow(t, **row))
    return EvalMetrics(rows, _mean_row(rows))


def classification_accuracy(samples: list[Sample], params: Parameters, spec: ModelSpec,
                            tapset: TapSet, head: HeadWeights | None,
                            batch_size: int = 32) -> dict[str, float]:
    """Argmax accuracy of the backbone classifier and (if given) the head.

    Ties resolve to the lower class index.
    """
    images = np.stack([s.image for s in samples]).astype(np.float32, copy=False)
    labels = np.array([s.label for s in samples])
    out: dict[str, float] = {}

    preds = []
    for start in range(0, images.shape[0], batch_size):
        logits, _ = forward(params, spec, images[start : start + batch_size])
        preds.append(np.argmax(logits, axis=1))
    out["backbone"] = float(np.mean(np.concatenate(preds) == labels))

    if head is not None:
        feats = head_features(params, spec, images, batch_size)
        logits, _ = dense_forward(feats, head.weights, head.bias)
        out["head"] = float(np.mean(np.argmax(logits, axis=1) == labels))
    return out


# ---------------------------------------------------------------------------
# delimited output
# ---------------------------------------------------------------------------

def write_metrics_csv(path: str | Path, by_method: dict[str, EvalMetrics]) -> None:
    """One row per method and threshold plus a means row; floats use repr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "threshold"] + list(METRIC_NAMES))
        for method, metrics in by_method.items():
            for row in metrics.per_threshold:
                writer.writerow([method, repr(row.threshold)]
                                + [repr(getattr(row, n)) for n in METRIC_NAMES])
            writer.writerow([method, "mean"]
                            + [repr(metrics.means[n]) for n in METRIC_NAMES])


def read_metrics_csv(path: str | Path) -> dict[str, EvalMetrics]:
    by_method: dict[str, EvalMetrics] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows: dict[str, list[ThresholdRow]] = {}
        means: dict[str, dict[str, float]] = {}
        for rec in reader:
            method = rec["method"]
            values = {n: float(rec[n]) for n in METRIC_NAMES}
            if rec["threshold"] == "mean":
                means[method] = values
            else:
                rows.setdefault(method, []).append(
                    ThresholdRow(float(rec["threshold"]), **values))
    for method in rows:
        by_method[method] = EvalMetrics(rows[method], means.get(method, {}))
    return by_method


def ordering_report(by_method: dict[str, EvalMetrics]) -> tuple[bool, list[str]]:
    """Check the expected multi-level > gradient > final-layer ordering.

    Sensitivity, specificity and precision must be non-increasing over
    (hrcam, gradcam, zhou) and fall-out non-decreasing; ties pass.
    """
    required = ("hrcam", "gradcam", "zhou")
    missing = [m for m in required if m not in by_method]
    if missing:
        raise KeyError(f"metrics for method(s) {missing} not found")

    lines = []
    ok = True
    for name in ("sensitivity", "specificity", "precision"):
        a, b, c = (by_method[m].means[name] for m in required)
        holds = a >= b >= c
        ok &= holds
        lines.append(f"{name:12s} hrcam {a:.4f} >= gradcam {b:.4f} >= zhou {c:.4f}: "
                     + ("ok" if holds else "VIOLATED"))
    a, b, c = (by_method[m].means["fallout"] for m in required)
    holds = a <= b <= c
    ok &= holds
    lines.append(f"{'fallout':12s} hrcam {a:.4f} <= gradcam {b:.4f} <= zhou {c:.4f}: "
                 + ("ok" if holds else "VIOLATED"))
    return ok, lines
