"""Train-and-evaluate helpers shared by the CLI and the experiment tests."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from squwa.core import downsample_mask
from squwa.evaluate import bad_quality_fraction, metrics, quality_stratified_aucpr, region_attention_mass
from squwa.synth import Corpus
from squwa.trainer import TrainConfig, TrainResult, predict, prepare, train
from squwa.variants import BLOCKS, VARIANT_BLOCKS, VARIANTS, ModelConfig, SQUWAModel, build_variant

THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 11))


@dataclass
class Evaluation:
    probs: np.ndarray
    labels: np.ndarray
    bad_fraction: np.ndarray
    metrics: dict
    curve: list

    def curve_value(self, threshold: float) -> Optional[float]:
        for row in self.curve:
            if abs(row["threshold"] - threshold) < 1e-9:
                return row["aucpr"]
        return None


@dataclass
class VariantResult:
    variant: str
    model: SQUWAModel
    train: TrainResult
    test: Evaluation
    extra: dict = field(default_factory=dict)


def evaluate_model(model: SQUWAModel, records: Sequence, thresholds=THRESHOLDS) -> Evaluation:
    """Test metrics and the quality-stratified curve.

    Records are stratified by the quality model's SQIs, so every variant
    built on the same quality model sees the same strata.
    """
    data = prepare(model, records)
    probs = predict(model, data)
    labels = data.y.numpy().astype(int)
    sqi = model.sq_model.sqi(data.x[:, :1]).numpy() if model.vc.sqi_source == "random" else data.sqi.numpy()
    bad = bad_quality_fraction(sqi)
    return Evaluation(probs, labels, bad, metrics(probs, labels),
                      quality_stratified_aucpr(probs, labels, bad, thresholds))


def run_variant(variant: str, corpus: Corpus, sq_model, mc: Optional[ModelConfig] = None,
                tc: Optional[TrainConfig] = None) -> VariantResult:
    model = build_variant(variant, mc, sq_model)
    result = train(model, corpus.split("train"), corpus.split("val"), tc)
    return VariantResult(variant, model, result, evaluate_model(model, corpus.split("test")))


def ablation(corpus: Corpus, sq_model, mc: Optional[ModelConfig] = None, tc: Optional[TrainConfig] = None,
             variants: Sequence[str] = VARIANTS) -> list[VariantResult]:
    return [run_variant(v, corpus, sq_model, mc, tc) for v in variants]


def ablation_rows(results: Sequence[VariantResult]) -> list[dict]:
    rows = []
    for r in results:
        row = {"variant": r.variant}
        row.update({b: int(VARIANT_BLOCKS[r.variant][b]) for b in BLOCKS})
        row.update({k: r.test.metrics[k] for k in ("AUROC", "F1", "AUCPR")})
        row.update({"best_epoch": r.train.best_epoch, "epochs": r.train.epochs_run})
        rows.append(row)
    return rows


def write_ablation_csv(rows: Sequence[dict], path) -> None:
    columns = ["variant", *BLOCKS, "AUROC", "F1", "AUCPR", "best_epoch", "epochs"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for row in rows:
            w.writerow([f"{row[c]:.6f}" if isinstance(row[c], float) else row[c] for c in columns])


@torch.no_grad()
def attention_mass_ratio(model: SQUWAModel, records: Sequence, lo: float = 0.2, hi: float = 0.4) -> dict:
    """Mean attention column mass on corrupted versus clean timesteps.

    Uses records whose corruption fraction lies in ``[lo, hi]`` and whose
    downsampled mask has both regions.
    """
    chosen = [r for r in records if lo <= r.corruption_fraction <= hi]
    masks = [downsample_mask(r.quality_mask, model.mc.downsample)[:model.mc.T] for r in chosen]
    keep = [i for i, m in enumerate(masks) if 0 < m.mean() < 1]
    chosen, masks = [chosen[i] for i in keep], [masks[i] for i in keep]
    if not chosen:
        return {"n_records": 0, "masked_mass": None, "unmasked_mass": None, "ratio": None}
    data = prepare(model, chosen)
    model.eval()
    weights = []
    for i in range(0, len(data), 256):
        out = model(data.x[i:i + 256], data.sqi[i:i + 256])
        if out.attention is None:
            raise ValueError(f"{model.vc.variant} has no attention layer")
        weights.append(out.attention.numpy())
    weights = np.concatenate(weights)
    stats = [region_attention_mass(w, m) for w, m in zip(weights, masks)]
    masked = float(np.mean([s["masked_mass"] for s in stats]))
    clean = float(np.mean([s["unmasked_mass"] for s in stats]))
    return {"n_records": len(stats), "masked_mass": masked, "unmasked_mass": clean, "ratio": masked / clean}
