"""Metrics, quality-stratified AUCPR curves and attention-map reports."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from squwa.core import DOWNSAMPLE, downsample_mask
from squwa.errors import DegenerateError


def _check(probs, labels):
    probs = np.asarray(probs, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(int)
    if probs.shape != labels.shape:
        raise ValueError("probs and labels must have the same length")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise DegenerateError("both classes must be present")
    return probs, labels


def auroc(probs, labels) -> float:
    """Mann-Whitney rank statistic with tie midranks."""
    probs, labels = _check(probs, labels)
    ranks = rankdata(probs)
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def aucpr(probs, labels) -> float:
    """Step-wise area under the precision-recall curve (average precision).

    Tied scores form one threshold, so the value depends only on the order
    of the scores.
    """
    probs, labels = _check(probs, labels)
    order = np.argsort(-probs, kind="mergesort")
    p, y = probs[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(p) != 0), len(p) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def f1(probs, labels, threshold: float = 0.5) -> float:
    probs, labels = _check(probs, labels)
    pred = probs >= threshold
    tp = np.sum(pred & (labels == 1))
    fp = np.sum(pred & (labels == 0))
    fn = np.sum(~pred & (labels == 1))
    return float(2 * tp / (2 * tp + fp + fn))


def metrics(probs, labels) -> dict:
    return {"AUROC": auroc(probs, labels), "F1": f1(probs, labels), "AUCPR": aucpr(probs, labels)}


def bad_quality_fraction(sqi, threshold: float = 0.5) -> np.ndarray:
    """Share of SQI timesteps below ``threshold`` per record."""
    sqi = np.atleast_2d(np.asarray(sqi))
    return (sqi < threshold).mean(axis=1)


def quality_stratified_aucpr(probs, labels, bad_fraction, thresholds) -> list[dict]:
    """AUCPR over records whose bad-quality fraction is at most each threshold.

    Thresholds where the included subset lacks a class are skipped.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    bad_fraction = np.asarray(bad_fraction, dtype=np.float64)
    curve = []
    for tau in thresholds:
        sel = bad_fraction <= tau + 1e-12
        try:
            value = aucpr(probs[sel], labels[sel])
        except DegenerateError:
            continue
        curve.append({"threshold": float(tau), "n_records": int(sel.sum()), "aucpr": value})
    return curve


def write_curve_csv(curve: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "n_records", "aucpr"])
        for row in curve:
            w.writerow([f"{row['threshold']:.4f}", row["n_records"], f"{row['aucpr']:.6f}"])


def read_curve_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{"threshold": float(r["threshold"]), "n_records": int(r["n_records"]), "aucpr": float(r["aucpr"])}
                for r in csv.DictReader(f)]


def region_attention_mass(weights: np.ndarray, mask_t: np.ndarray) -> dict:
    """Mean column attention mass on masked versus unmasked timesteps."""
    mass = np.asarray(weights).sum(axis=0)
    mask_t = np.asarray(mask_t).astype(bool)
    masked = float(mass[mask_t].mean()) if mask_t.any() else None
    clean = float(mass[~mask_t].mean()) if (~mask_t).any() else None
    ratio = masked / clean if masked is not None and clean else None
    return {"masked_mass": masked, "unmasked_mass": clean, "ratio": ratio}


def attention_report(record, weights, sqi, mask=None, composite=None,
                     downsample: int = DOWNSAMPLE) -> dict:
    """Traces and summary statistics behind one attention figure.

    ``weights`` is the T x T attention matrix (rows: hidden-state time,
    columns: SQI time).
    """
    weights = np.asarray(weights, dtype=np.float64)
    T = weights.shape[0]
    if mask is None:
        mask = record.quality_mask if record.quality_mask is not None else np.zeros(len(record.samples))
    mask_t = downsample_mask(mask, downsample)[:T]
    return {
        "record_id": record.record_id,
        "label": int(record.label),
        "raw": np.asarray(record.samples, dtype=np.float64),
        "composite": None if composite is None else np.asarray(composite, dtype=np.float64),
        "sqi": np.asarray(sqi, dtype=np.float64),
        "mask": np.asarray(mask, dtype=np.uint8),
        "mask_t": mask_t,
        "attention": weights,
        "column_mass": weights.sum(axis=0),
        "stats": region_attention_mass(weights, mask_t),
    }


def write_attention_report(report: dict, out_dir, probability: Optional[float] = None) -> dict:
    """Write traces (CSV), the attention matrix (binary dump) and a JSON summary."""
    from squwa.checkpoint import write_blocks

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rid = report["record_id"]
    with open(out / f"{rid}_signal.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample", "raw", "composite", "mask"])
        comp = report["composite"]
        for i, (x, m) in enumerate(zip(report["raw"], report["mask"])):
            w.writerow([i, f"{x:.6g}", "" if comp is None else f"{comp[i]:.6g}", int(m)])
    with open(out / f"{rid}_sqi.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestep", "sqi", "mask", "column_mass"])
        for t, (s, m, c) in enumerate(zip(report["sqi"], report["mask_t"], report["column_mass"])):
            w.writerow([t, f"{s:.6f}", int(m), f"{c:.6f}"])
    write_blocks(out / f"{rid}_attention.bin", {"attention": report["attention"]},
                 {"kind": "attention", "record_id": rid, "rows": "hidden-state time", "cols": "SQI time"})
    summary = {"record_id": rid, "label": report["label"], **report["stats"]}
    if probability is not None:
        summary["probability"] = probability
    (out / f"{rid}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary
