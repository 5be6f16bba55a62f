import warnings

import numpy as np
import pytest
import torch

from squwa.core import downsample_mask
from squwa.errors import ConfigError, ConvergenceWarning
from squwa.sq_model import (BAD, GOOD, SQModel, SQModelConfig, SQTrainConfig, calibrated_sqi,
                            class_activation_map, cam_sqi, quality_label, record_sqi, train_sq)
from squwa.synth import SynthConfig, corrupt, generate_corpus, record_rng, synth_pulse_train

from conftest import make_record


def test_feature_map_has_75_columns():
    m = SQModel().eval()
    logits, fmap = m(torch.randn(2, 1, 2400))
    assert logits.shape == (2, 2) and fmap.shape == (2, 64, 75)
    assert m.downsample == 32


def test_zero_network_gives_even_odds():
    m = SQModel().eval()
    with torch.no_grad():
        for p in m.parameters():
            p.zero_()
    logits, _ = m(torch.randn(1, 1, 2400))
    assert torch.equal(logits, torch.zeros(1, 2))
    assert torch.allclose(torch.softmax(logits, -1), torch.full((1, 2), 0.5))


def test_logits_are_classifier_of_pooled_features():
    m = SQModel().eval()
    logits, fmap = m(torch.randn(3, 1, 2400))
    assert torch.allclose(logits, m.classifier(fmap.mean(-1)), atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_cam_mean_equals_logit(seed):
    g = torch.Generator().manual_seed(seed)
    fmap = torch.randn(4, 16, 75, generator=g, dtype=torch.float64) * 3
    w = torch.randn(2, 16, generator=g, dtype=torch.float64)
    b = torch.randn(2, generator=g, dtype=torch.float64)
    logits = fmap.mean(-1) @ w.T + b
    for cls in (GOOD, BAD):
        cam = class_activation_map(fmap, w, cls, b)
        assert torch.allclose(cam.mean(-1), logits[:, cls], atol=1e-5)


def test_zero_good_weights_give_flat_half_sqi():
    fmap = torch.randn(2, 8, 75)
    w = torch.zeros(2, 8)
    w[BAD] = 1.0
    assert torch.equal(cam_sqi(fmap, w, GOOD), torch.full((2, 75), 0.5))


def test_minmax_sqi_range_and_argmin():
    g = torch.Generator().manual_seed(0)
    fmap, w = torch.randn(5, 8, 75, generator=g), torch.randn(2, 8, generator=g)
    sqi = cam_sqi(fmap, w, GOOD)
    cam = class_activation_map(fmap, w, GOOD)
    assert torch.all((sqi >= 0) & (sqi <= 1))
    assert torch.equal(sqi.argmin(-1), cam.argmin(-1))
    assert torch.allclose(sqi.amin(-1), torch.zeros(5)) and torch.allclose(sqi.amax(-1), torch.ones(5))


def test_sigmoid_sqi_reads_contrast_log_odds():
    g = torch.Generator().manual_seed(1)
    fmap, w, b = torch.randn(5, 8, 75, generator=g), torch.randn(2, 8, generator=g), torch.randn(2, generator=g)
    sqi = calibrated_sqi(fmap, w, GOOD, b)
    contrast = class_activation_map(fmap, w, GOOD, b) - class_activation_map(fmap, w, BAD, b)
    assert torch.all((sqi > 0) & (sqi < 1))
    assert torch.equal(sqi.argmin(-1), contrast.argmin(-1))
    logits = fmap.mean(-1) @ w.T + b
    assert torch.allclose(torch.logit(sqi.double()).mean(-1).float(), logits[:, GOOD] - logits[:, BAD], atol=1e-4)


def test_model_sqi_respects_normalization_choice():
    x = torch.randn(2, 1, 2400)
    for norm in ("minmax", "sigmoid"):
        m = SQModel(SQModelConfig(sqi_normalization=norm)).eval()
        s = m.sqi(x)
        assert s.shape == (2, 75) and torch.all((s >= 0) & (s <= 1))
    with pytest.raises(ConfigError):
        SQModelConfig(sqi_normalization="softmax")


def test_quality_label_threshold():
    m = np.zeros(2400, dtype=np.uint8)
    m[:480] = 1
    assert quality_label(make_record(mask=m)) == GOOD
    m[480] = 1
    assert quality_label(make_record(mask=m)) == BAD
    assert quality_label(make_record(mask=m), bad_threshold=0.5) == GOOD


def test_separable_toy_corpus_is_learned():
    c = generate_corpus(SynthConfig(n_records=240, corruption_choices=[0.0, 1.0], seed=4))
    _, report = train_sq(c.split("train"), c.split("val"), SQTrainConfig(seed=0))
    assert report.val_accuracy >= 0.99


def test_zero_epochs_keep_initialization():
    c = generate_corpus(SynthConfig(n_records=20, seed=1))
    torch.manual_seed(3)
    init = SQModel()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model, _ = train_sq(c.split("train"), c.split("val"), SQTrainConfig(epochs=0, seed=3))
    for (n, a), b in zip(init.state_dict().items(), model.state_dict().values()):
        assert torch.equal(a, b), n


def test_training_is_deterministic():
    c = generate_corpus(SynthConfig(n_records=60, seed=2))
    tc = SQTrainConfig(epochs=1, seed=5, min_accuracy=0.0)
    a, ra = train_sq(c.split("train"), c.split("val"), tc)
    b, rb = train_sq(c.split("train"), c.split("val"), tc)
    assert ra.val_accuracy == rb.val_accuracy
    for x, y in zip(a.state_dict().values(), b.state_dict().values()):
        assert torch.equal(x, y)


def test_low_accuracy_warns():
    c = generate_corpus(SynthConfig(n_records=40, seed=2))
    with pytest.warns(ConvergenceWarning):
        train_sq(c.split("train"), c.split("val"), SQTrainConfig(epochs=0, min_accuracy=1.01))


def test_trained_model_is_frozen(quality_model):
    model, report = quality_model
    assert not model.training
    assert all(not p.requires_grad for p in model.parameters())
    assert report.val_accuracy >= 0.8


def test_sqi_lower_inside_corrupted_span(quality_model):
    model, _ = quality_model
    cfg = SynthConfig()
    inside, outside = [], []
    for i in range(40):
        rng = record_rng(999, i)
        r = synth_pulse_train(i % 2, cfg, rng)
        r = corrupt(r, 0.3, None, rng, max_spans=1)
        sqi = record_sqi(model, r)
        m = downsample_mask(r.quality_mask).astype(bool)
        inside.append(sqi[m].mean())
        outside.append(sqi[~m].mean())
    assert np.mean(np.array(inside) < np.array(outside)) >= 0.9
    assert np.mean(inside) < np.mean(outside)
