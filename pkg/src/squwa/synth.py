"""Synthetic PPG corpora with AF-like rhythm irregularity and artifact spans.

Each beat is a systolic Gaussian plus a smaller dicrotic Gaussian.  AF beats
are spaced by log-normal RR intervals with a large coefficient of variation
and their amplitude follows the preceding interval; Non-AF beats are nearly
regular with occasional premature (PVC-like) beats.  Artifacts are written
as contiguous spans and recorded in ``quality_mask``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.signal import find_peaks

from squwa.core import AF, NON_AF, PPGRecord, validate_record
from squwa.errors import ChecksumError, ConfigError

CORRUPTION_KINDS = ("flatline", "noise_burst", "baseline_wander", "amplitude_dropout")
SPLITS = ("train", "val", "test")
CORPUS_FORMAT = "squwa-corpus"
CORPUS_VERSION = 1


@dataclass
class SynthConfig:
    n_records: int = 1000
    af_fraction: float = 0.5
    fs: float = 80.0
    duration_s: float = 30.0
    hr_range_bpm: tuple = (55.0, 110.0)
    af_rr_cv: float = 0.25
    nsr_rr_cv: float = 0.04
    pvc_rate: float = 0.03
    noise_std: float = 0.02
    corruption_fraction_range: tuple = (0.0, 0.5)
    # when set, each record draws its corruption fraction from this list
    corruption_choices: Optional[list] = None
    corruption_kind_weights: dict = field(default_factory=lambda: {k: 1.0 for k in CORRUPTION_KINDS})
    max_spans: int = 3
    min_span_s: float = 1.0
    records_per_patient: int = 10
    split_fractions: tuple = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        self.hr_range_bpm = tuple(self.hr_range_bpm)
        self.corruption_fraction_range = tuple(self.corruption_fraction_range)
        self.split_fractions = tuple(self.split_fractions)
        self.validate()

    def validate(self) -> None:
        lo, hi = self.hr_range_bpm
        if not 0 < lo <= hi:
            raise ConfigError(f"bad hr_range_bpm {self.hr_range_bpm}")
        if not self.af_rr_cv > self.nsr_rr_cv >= 0:
            raise ConfigError("af_rr_cv must exceed nsr_rr_cv (AF is the irregular class)")
        if not 0 <= self.af_fraction <= 1:
            raise ConfigError("af_fraction must lie in [0, 1]")
        flo, fhi = self.corruption_fraction_range
        if not 0 <= flo <= fhi <= 1:
            raise ConfigError(f"bad corruption_fraction_range {self.corruption_fraction_range}")
        if self.corruption_choices is not None and any(not 0 <= c <= 1 for c in self.corruption_choices):
            raise ConfigError("corruption_choices must lie in [0, 1]")
        unknown = set(self.corruption_kind_weights) - set(CORRUPTION_KINDS)
        if unknown:
            raise ConfigError(f"unknown corruption kinds {sorted(unknown)}")
        w = list(self.corruption_kind_weights.values())
        if any(v < 0 for v in w) or sum(w) <= 0:
            raise ConfigError("corruption_kind_weights must be nonnegative with positive sum")
        if self.n_records < 0 or self.records_per_patient < 1 or self.max_spans < 1:
            raise ConfigError("counts must be positive")
        if self.fs <= 0 or self.duration_s <= 0:
            raise ConfigError("fs and duration_s must be positive")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1) > 1e-9:
            raise ConfigError("split_fractions must be three values summing to 1")
        if not 0 <= self.pvc_rate < 1:
            raise ConfigError("pvc_rate must lie in [0, 1)")

    @property
    def length(self) -> int:
        return int(round(self.fs * self.duration_s))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown synth config keys {sorted(unknown)}")
        return cls(**d)


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per record so serial and parallel generation agree."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _lognormal_rr(mean_rr: float, cv: float, rng: np.random.Generator) -> float:
    if cv <= 0:
        return mean_rr
    s2 = math.log1p(cv * cv)
    return float(rng.lognormal(math.log(mean_rr) - s2 / 2, math.sqrt(s2)))


def _beats(rhythm: int, cfg: SynthConfig, rng: np.random.Generator):
    hr = rng.uniform(*cfg.hr_range_bpm)
    mean_rr = 60.0 / hr
    t = -rng.uniform(0.0, mean_rr)
    times, amps = [], []
    prev_rr = mean_rr
    pending_compensation = False
    while t < cfg.duration_s + 1.0:
        times.append(t)
        if rhythm == AF:
            amp = np.clip(1.0 + 0.6 * (prev_rr / mean_rr - 1.0), 0.3, 1.7) * rng.normal(1.0, 0.05)
            rr = float(np.clip(_lognormal_rr(mean_rr, cfg.af_rr_cv, rng), 0.25, 2.5))
        else:
            amp = rng.normal(1.0, 0.04)
            rr = _lognormal_rr(mean_rr, cfg.nsr_rr_cv, rng)
            if pending_compensation:
                amp *= 0.55
                rr = mean_rr * 1.4
                pending_compensation = False
            elif cfg.pvc_rate > 0 and rng.random() < cfg.pvc_rate:
                rr = mean_rr * 0.6
                pending_compensation = True
        amps.append(amp)
        prev_rr = rr
        t += rr
    return np.asarray(times), np.asarray(amps)


def synth_pulse_train(rhythm: int, cfg: SynthConfig, rng: np.random.Generator,
                      record_id: str = "", patient_id: str = "") -> PPGRecord:
    """Clean PPG window of ``fs * duration_s`` samples for the given rhythm."""
    if rhythm not in (AF, NON_AF):
        raise ConfigError(f"rhythm must be AF (1) or NonAF (0), got {rhythm!r}")
    cfg.validate()
    n = cfg.length
    t = np.arange(n) / cfg.fs
    beat_t, beat_a = _beats(rhythm, cfg, rng)
    x = np.zeros(n)
    for tb, a in zip(beat_t, beat_a):
        d = t - tb
        x += a * np.exp(-0.5 * (d / 0.08) ** 2)
        x += 0.45 * a * np.exp(-0.5 * ((d - 0.3) / 0.12) ** 2)
    f_resp = rng.uniform(0.15, 0.35)
    x += 0.1 * np.sin(2 * np.pi * f_resp * t + rng.uniform(0, 2 * np.pi))
    x += rng.normal(0.0, cfg.noise_std, n)
    gain = rng.uniform(0.5, 2.0)
    offset = rng.normal(0.0, 1.0)
    x = gain * x + offset
    return PPGRecord(samples=x.astype(np.float32), fs=cfg.fs, label=rhythm,
                     quality_mask=np.zeros(n, dtype=np.uint8),
                     record_id=record_id, patient_id=patient_id)


def _composition(total: int, parts: int, rng: np.random.Generator, positive: bool) -> np.ndarray:
    if parts == 1:
        return np.array([total])
    if positive:
        cuts = np.sort(rng.choice(np.arange(1, total), size=parts - 1, replace=False))
    else:
        cuts = np.sort(rng.integers(0, total + 1, size=parts - 1))
    return np.diff(np.concatenate([[0], cuts, [total]]))


def _kind_weights(kinds) -> tuple[list, np.ndarray]:
    if kinds is None:
        kinds = {k: 1.0 for k in CORRUPTION_KINDS}
    if not isinstance(kinds, dict):
        kinds = {k: 1.0 for k in kinds}
    names = [k for k, w in kinds.items() if w > 0]
    unknown = set(names) - set(CORRUPTION_KINDS)
    if unknown or not names:
        raise ConfigError(f"bad corruption kinds {kinds}")
    w = np.array([kinds[k] for k in names], dtype=np.float64)
    return names, w / w.sum()


def _apply_artifact(x: np.ndarray, s: int, e: int, kind: str, fs: float,
                    scale: float, rng: np.random.Generator) -> None:
    n = e - s
    tt = np.arange(n) / fs
    if kind == "flatline":
        x[s:e] = x[s]
    elif kind == "noise_burst":
        # irregular sharp transients over broadband noise, like motion spikes
        noise = rng.normal(0.0, 1.0, n + 3)
        noise = np.convolve(noise, np.ones(4) / 2.0, mode="valid")[:n]
        burst = rng.uniform(0.5, 1.5) * noise
        t_spike = np.cumsum(rng.exponential(1.0 / rng.uniform(1.0, 3.0), size=int(4 * n / fs) + 2))
        for ts in t_spike[t_spike < n / fs]:
            burst += rng.uniform(1.0, 4.0) * np.exp(-0.5 * ((tt - ts) / rng.uniform(0.04, 0.15)) ** 2)
        mu = x[s:e].mean()
        x[s:e] = mu + 0.3 * (x[s:e] - mu) + scale * burst
    elif kind == "baseline_wander":
        f = rng.uniform(0.2, 1.5)
        x[s:e] += rng.uniform(2.0, 5.0) * scale * np.sin(2 * np.pi * f * tt + rng.uniform(0, 2 * np.pi))
    elif kind == "amplitude_dropout":
        mu = x[s:e].mean()
        x[s:e] = mu + 0.05 * (x[s:e] - mu) + rng.normal(0.0, 0.1 * scale, n)
    else:
        raise ConfigError(f"unknown corruption kind {kind!r}")


def corrupt(r: PPGRecord, fraction: float, kinds=None, rng: Optional[np.random.Generator] = None,
            max_spans: int = 3, min_span: Optional[int] = None) -> PPGRecord:
    """Overwrite contiguous spans totalling ``round(fraction * L)`` samples."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    rng = rng if rng is not None else np.random.default_rng()
    n = len(r.samples)
    mask = np.zeros(n, dtype=np.uint8) if r.quality_mask is None else r.quality_mask.copy()
    n_bad = int(round(fraction * n))
    if n_bad == 0:
        return r.replace(quality_mask=mask)
    names, probs = _kind_weights(kinds)
    min_span = int(min_span if min_span is not None else r.fs)
    n_spans = int(rng.integers(1, max_spans + 1))
    n_spans = max(1, min(n_spans, n_bad // max(min_span, 1)))
    lengths = _composition(n_bad, n_spans, rng, positive=True)
    gaps = _composition(n - n_bad, n_spans + 1, rng, positive=False)
    x = np.asarray(r.samples, dtype=np.float64).copy()
    scale = float(np.std(x)) or 1.0
    pos = int(gaps[0])
    for i, length in enumerate(lengths):
        s, e = pos, pos + int(length)
        _apply_artifact(x, s, e, names[rng.choice(len(names), p=probs)], r.fs, scale, rng)
        mask[s:e] = 1
        pos = e + int(gaps[i + 1])
    return r.replace(samples=x.astype(np.float32), quality_mask=mask)


def peak_intervals(samples: np.ndarray, fs: float) -> np.ndarray:
    """Beat-to-beat intervals (s) from a simple systolic peak detector."""
    x = np.asarray(samples, dtype=np.float64)
    x = (x - np.median(x)) / (np.std(x) or 1.0)
    peaks, props = find_peaks(x, distance=max(1, int(0.25 * fs)), prominence=0.3)
    if len(peaks) == 0:
        return np.zeros(0)
    # dicrotic bumps have a small fraction of the systolic prominence
    prom = props["prominences"]
    peaks = peaks[prom >= 0.35 * np.percentile(prom, 75)]
    return np.diff(peaks) / fs


def interval_cv(samples: np.ndarray, fs: float) -> float:
    rr = peak_intervals(samples, fs)
    if len(rr) < 2:
        return 0.0
    return float(np.std(rr) / np.mean(rr))


@dataclass
class Corpus:
    records: list
    splits: dict  # patient_id -> split name
    config: Optional[SynthConfig] = None
    flipped: list = field(default_factory=list)  # record ids whose label was flipped

    def split_of(self, r: PPGRecord) -> str:
        return self.splits[r.patient_id]

    def split(self, name: str) -> list:
        return [r for r in self.records if self.splits[r.patient_id] == name]

    def by_id(self, record_id: str) -> PPGRecord:
        for r in self.records:
            if r.record_id == record_id:
                return r
        raise KeyError(record_id)

    def counts(self, records: Optional[Iterable[PPGRecord]] = None) -> dict:
        records = self.records if records is None else list(records)
        n_af = sum(1 for r in records if r.label == AF)
        return {"AF": n_af, "NonAF": len(records) - n_af}


def assign_splits(patients: Sequence[str], fractions, rng: np.random.Generator) -> dict:
    patients = list(patients)
    order = rng.permutation(len(patients))
    n = len(patients)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n >= 3:
        n_train = min(max(1, n_train), n - 2)
        n_val = min(max(1, n_val), n - n_train - 1)
    out = {}
    for rank, i in enumerate(order):
        out[patients[i]] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return out


def generate_corpus(cfg: SynthConfig) -> Corpus:
    cfg.validate()
    master = record_rng(cfg.seed, 2**31 - 1)
    n = cfg.n_records
    n_af = int(round(cfg.af_fraction * n))
    labels = np.zeros(n, dtype=int)
    labels[master.permutation(n)[:n_af]] = AF
    records = []
    for i in range(n):
        rng = record_rng(cfg.seed, i)
        rid = f"R{i:06d}"
        pid = f"P{i // cfg.records_per_patient:05d}"
        r = synth_pulse_train(int(labels[i]), cfg, rng, record_id=rid, patient_id=pid)
        if cfg.corruption_choices:
            frac = float(cfg.corruption_choices[rng.integers(len(cfg.corruption_choices))])
        else:
            frac = float(rng.uniform(*cfg.corruption_fraction_range))
        r = corrupt(r, frac, cfg.corruption_kind_weights, rng,
                    max_spans=cfg.max_spans, min_span=int(cfg.min_span_s * cfg.fs))
        records.append(validate_record(r, cfg.length))
    patients = sorted({r.patient_id for r in records})
    return Corpus(records, assign_splits(patients, cfg.split_fractions, master), cfg)


def flip_records(corpus: Corpus, record_ids: Iterable[str]) -> Corpus:
    """Flip the labels of the given records; flipping twice restores them."""
    ids = set(record_ids)
    records = [r.replace(label=1 - r.label) if r.record_id in ids else r for r in corpus.records]
    flipped = sorted(set(corpus.flipped) ^ ids)
    return Corpus(records, dict(corpus.splits), corpus.config, flipped)


def flip_labels(corpus: Corpus, rate: float, rng: np.random.Generator,
                splits: Optional[Sequence[str]] = None) -> Corpus:
    """Flip exactly ``round(rate * n)`` uniformly chosen labels.

    ``splits`` restricts the candidates (e.g. keep the test split clean).
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    pool = [r.record_id for r in corpus.records
            if splits is None or corpus.splits[r.patient_id] in splits]
    k = int(round(rate * len(pool)))
    chosen = [pool[i] for i in rng.choice(len(pool), size=k, replace=False)] if k else []
    return flip_records(corpus, chosen)


def mask_to_rle(mask: Optional[np.ndarray]) -> list:
    if mask is None:
        return []
    m = np.concatenate([[0], np.asarray(mask, dtype=np.int8), [0]])
    d = np.diff(m)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return [[int(s), int(e - s)] for s, e in zip(starts, ends)]


def rle_to_mask(rle: list, n: int) -> np.ndarray:
    mask = np.zeros(n, dtype=np.uint8)
    for s, length in rle:
        mask[s:s + length] = 1
    return mask


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_corpus(corpus: Corpus, path) -> dict:
    """Write one directory per split plus a top-level ``manifest.json``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    checksums = {}
    counts = {"total": corpus.counts()}
    for split in SPLITS:
        recs = corpus.split(split)
        d = root / split
        d.mkdir(exist_ok=True)
        offset = 0
        with open(d / "records.bin", "wb") as fb, open(d / "meta.jsonl", "w") as fm:
            for r in recs:
                blob = np.asarray(r.samples, dtype="<f4").tobytes()
                fb.write(blob)
                meta = {"record_id": r.record_id, "offset": offset, "length": len(r.samples),
                        "label": int(r.label), "patient_id": r.patient_id, "fs": r.fs,
                        "mask_rle": mask_to_rle(r.quality_mask),
                        "has_mask": r.quality_mask is not None,
                        "corruption_fraction": r.corruption_fraction}
                fm.write(json.dumps(meta) + "\n")
                offset += len(blob)
        counts[split] = corpus.counts(recs)
        for name in ("records.bin", "meta.jsonl"):
            checksums[f"{split}/{name}"] = _sha256(d / name)
    manifest = {
        "format": CORPUS_FORMAT,
        "version": CORPUS_VERSION,
        "counts": counts,
        "config": corpus.config.to_dict() if corpus.config is not None else None,
        "checksums": checksums,
        "splits": corpus.splits,
        "flipped": list(corpus.flipped),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def read_corpus(path) -> Corpus:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format") != CORPUS_FORMAT or manifest.get("version") != CORPUS_VERSION:
        raise ChecksumError(f"{root}: not a version-{CORPUS_VERSION} corpus")
    for rel, digest in manifest["checksums"].items():
        if _sha256(root / rel) != digest:
            raise ChecksumError(f"{root / rel}: checksum mismatch")
    records = []
    for split in SPLITS:
        d = root / split
        data = (d / "records.bin").read_bytes()
        split_recs = []
        for line in (d / "meta.jsonl").read_text().splitlines():
            m = json.loads(line)
            start, n = m["offset"], m["length"]
            samples = np.frombuffer(data, dtype="<f4", count=n, offset=start)
            mask = rle_to_mask(m["mask_rle"], n) if m["has_mask"] else None
            split_recs.append(PPGRecord(samples=samples, fs=m["fs"], label=m["label"],
                                        quality_mask=mask, record_id=m["record_id"],
                                        patient_id=m["patient_id"]))
        if {"AF": sum(r.label for r in split_recs), "NonAF": sum(1 - r.label for r in split_recs)} \
                != manifest["counts"][split]:
            raise ChecksumError(f"{d}: class counts disagree with manifest")
        records.extend(split_recs)
    records.sort(key=lambda r: r.record_id)
    cfg = SynthConfig.from_dict(manifest["config"]) if manifest["config"] else None
    return Corpus(records, manifest["splits"], cfg, list(manifest["flipped"]))
