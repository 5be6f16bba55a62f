import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from squwa.core import AF, NON_AF
from squwa.errors import ChecksumError, ConfigError
from squwa.evaluate import auroc
from squwa.synth import (CORRUPTION_KINDS, Corpus, SynthConfig, corrupt, flip_labels, flip_records,
                         generate_corpus, interval_cv, mask_to_rle, peak_intervals, read_corpus,
                         record_rng, rle_to_mask, synth_pulse_train, write_corpus)

from conftest import make_record


def _clean(rhythm, seed, **kw):
    cfg = SynthConfig(**kw)
    return synth_pulse_train(rhythm, cfg, record_rng(seed, 0))


def test_clean_record_shape_and_mask():
    r = _clean(AF, 0)
    assert len(r.samples) == 2400 and r.fs == 80.0 and r.label == AF
    assert r.quality_mask is not None and not r.quality_mask.any()


def test_regular_rhythm_has_one_second_intervals():
    for seed in range(5):
        r = _clean(NON_AF, seed, hr_range_bpm=(60, 60), nsr_rr_cv=0.0, pvc_rate=0.0, noise_std=0.0)
        rr = peak_intervals(r.samples, r.fs)
        assert len(rr) >= 25
        assert np.all(np.abs(rr - 1.0) <= 2 / 80.0)


def test_af_interval_cv_in_range():
    cvs = [interval_cv(_clean(AF, s, af_rr_cv=0.25).samples, 80.0) for s in range(30)]
    assert all(0.15 <= cv <= 0.35 for cv in cvs), cvs


def test_same_seed_same_record():
    a, b = _clean(AF, 7), _clean(AF, 7)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, _clean(AF, 8).samples)


def test_generation_is_repeatable_and_order_free():
    cfg = SynthConfig(n_records=12, seed=5)
    a, b = generate_corpus(cfg), generate_corpus(cfg)
    for x, y in zip(a.records, b.records):
        assert np.array_equal(x.samples, y.samples) and np.array_equal(x.quality_mask, y.quality_mask)
    # each record has its own stream, so a longer corpus shares its prefix
    c = generate_corpus(SynthConfig(n_records=12, seed=5, af_fraction=0.5))
    assert np.array_equal(c.records[3].samples, a.records[3].samples)


def test_invalid_rhythm_and_config():
    with pytest.raises(ConfigError):
        synth_pulse_train(2, SynthConfig(), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        SynthConfig(af_rr_cv=0.04, nsr_rr_cv=0.05)
    with pytest.raises(ConfigError):
        SynthConfig(hr_range_bpm=(100, 60))
    with pytest.raises(ConfigError):
        SynthConfig(corruption_fraction_range=(0.6, 0.2))
    with pytest.raises(ConfigError):
        SynthConfig(corruption_kind_weights={"lightning": 1.0})
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"n_record": 3})


def test_config_dict_round_trip():
    cfg = SynthConfig(n_records=7, seed=3, hr_range_bpm=(50, 90))
    assert SynthConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_corrupt_zero_is_identity():
    r = _clean(AF, 1)
    c = corrupt(r, 0.0, rng=np.random.default_rng(0))
    assert np.array_equal(c.samples, r.samples) and not c.quality_mask.any()


def test_corrupt_full_record():
    c = corrupt(_clean(AF, 1), 1.0, rng=np.random.default_rng(0))
    assert c.quality_mask.all()


def test_corrupt_fraction_rejected_outside_unit_interval():
    with pytest.raises(ValueError):
        corrupt(_clean(AF, 1), 1.2)


@given(st.floats(0.0, 1.0), st.integers(0, 2**31), st.sampled_from(CORRUPTION_KINDS), st.integers(1, 4))
def test_corrupt_properties(fraction, seed, kind, spans):
    r = _clean(AF if seed % 2 else NON_AF, seed % 97)
    c = corrupt(r, fraction, {kind: 1.0}, np.random.default_rng(seed), max_spans=spans, min_span=80)
    mask = c.quality_mask.astype(bool)
    assert mask.sum() == round(fraction * 2400)
    assert c.label == r.label
    assert np.array_equal(c.samples[~mask], r.samples[~mask])
    assert np.all(np.isfinite(c.samples))
    assert len(mask_to_rle(mask)) <= spans


def test_corrupt_fraction_point_three():
    for seed in range(10):
        c = corrupt(_clean(NON_AF, seed), 0.3, rng=np.random.default_rng(seed))
        assert 0.28 <= c.quality_mask.mean() <= 0.32


def test_each_kind_changes_the_span():
    r = _clean(NON_AF, 3)
    for kind in CORRUPTION_KINDS:
        c = corrupt(r, 0.25, {kind: 1.0}, np.random.default_rng(1), max_spans=1)
        m = c.quality_mask.astype(bool)
        assert not np.allclose(c.samples[m], r.samples[m]), kind
    flat = corrupt(r, 0.25, {"flatline": 1.0}, np.random.default_rng(1), max_spans=1)
    assert np.ptp(flat.samples[flat.quality_mask.astype(bool)]) == 0


def test_rle_round_trip():
    m = np.zeros(50, dtype=np.uint8)
    m[3:9] = 1
    m[40:] = 1
    assert mask_to_rle(m) == [[3, 6], [40, 10]]
    assert np.array_equal(rle_to_mask(mask_to_rle(m), 50), m)
    assert mask_to_rle(None) == []


def _dummy_corpus(n):
    recs = [make_record(np.zeros(2400), label=i % 2, rid=f"R{i:06d}", pid=f"P{i // 10:05d}") for i in range(n)]
    splits = {f"P{p:05d}": ("train", "val", "test")[p % 3] for p in range((n + 9) // 10)}
    return Corpus(recs, splits)


def test_flip_rate_zero_is_identity():
    c = _dummy_corpus(100)
    f = flip_labels(c, 0.0, np.random.default_rng(0))
    assert [r.label for r in f.records] == [r.label for r in c.records] and f.flipped == []


def test_flip_quarter_of_thousand():
    c = _dummy_corpus(1000)
    f = flip_labels(c, 0.25, np.random.default_rng(0))
    changed = [a.record_id for a, b in zip(c.records, f.records) if a.label != b.label]
    assert len(changed) == 250 and sorted(changed) == f.flipped


def test_flip_restricted_to_splits():
    c = _dummy_corpus(300)
    f = flip_labels(c, 0.5, np.random.default_rng(1), splits=("train",))
    assert all(c.splits[c.by_id(rid).patient_id] == "train" for rid in f.flipped)
    assert len(f.flipped) == round(0.5 * len(c.split("train")))


def test_flip_is_an_involution():
    c = _dummy_corpus(100)
    f = flip_labels(c, 0.3, np.random.default_rng(2))
    back = flip_records(f, f.flipped)
    assert [r.label for r in back.records] == [r.label for r in c.records] and back.flipped == []


def test_flip_rate_validated():
    with pytest.raises(ValueError):
        flip_labels(_dummy_corpus(10), 1.5, np.random.default_rng(0))


@pytest.fixture(scope="module")
def small_corpus():
    return generate_corpus(SynthConfig(n_records=60, seed=11))


def test_splits_disjoint_by_patient(small_corpus):
    c = small_corpus
    names = {s: {r.patient_id for r in c.split(s)} for s in ("train", "val", "test")}
    assert all(names.values())
    assert not (names["train"] & names["val"] or names["train"] & names["test"] or names["val"] & names["test"])
    assert sum(len(c.split(s)) for s in names) == len(c.records)


def test_class_balance(small_corpus):
    assert small_corpus.counts() == {"AF": 30, "NonAF": 30}


def test_corpus_round_trip(tmp_path, small_corpus):
    c = flip_labels(small_corpus, 0.1, np.random.default_rng(0))
    manifest = write_corpus(c, tmp_path)
    back = read_corpus(tmp_path)
    assert [r.record_id for r in back.records] == [r.record_id for r in c.records]
    for a, b in zip(c.records, back.records):
        assert a.samples.tobytes() == b.samples.tobytes()
        assert np.array_equal(a.quality_mask, b.quality_mask)
        assert (a.label, a.patient_id, a.fs) == (b.label, b.patient_id, b.fs)
    assert back.splits == c.splits and back.flipped == c.flipped and back.config == c.config
    for split in ("train", "val", "test"):
        assert manifest["counts"][split] == c.counts(c.split(split))
    meta = [json.loads(x) for x in (tmp_path / "test" / "meta.jsonl").read_text().splitlines()]
    assert {"record_id", "offset", "label", "patient_id", "mask_rle", "corruption_fraction"} <= set(meta[0])


def test_tampered_corpus_raises(tmp_path, small_corpus):
    write_corpus(small_corpus, tmp_path)
    p = tmp_path / "train" / "records.bin"
    data = bytearray(p.read_bytes())
    data[100] ^= 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        read_corpus(tmp_path)


def test_missing_corpus_raises_ioerror(tmp_path):
    with pytest.raises(IOError):
        read_corpus(tmp_path / "nowhere")


def test_clean_data_is_separable_by_interval_cv():
    c = generate_corpus(SynthConfig(n_records=200, corruption_fraction_range=(0.0, 0.0), seed=21))
    score = [interval_cv(r.samples, r.fs) for r in c.records]
    assert auroc(score, [r.label for r in c.records]) > 0.95
