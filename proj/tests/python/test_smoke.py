import math

import numpy as np
import pytest

import calab


def test_tokenize_splits_punctuation():
    assert calab.tokenize("Hello, World!") == ["hello", ",", "world", "!"]


def test_metrics():
    assert calab.accuracy([1, 0, 1], [1, 1, 1]) == pytest.approx(2 / 3)
    assert calab.mcc([0, 1, 0], [1, 0, 1]) == pytest.approx(-1.0)
    assert calab.spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    with pytest.raises(calab.MetricError):
        calab.spearman([1, 1, 1], [1, 2, 3])


def test_info_nce_anchors():
    x = np.random.default_rng(0).normal(size=(1, 5)).astype(np.float32)
    assert calab.info_nce(x, x) == 0.0
    same = np.ones((4, 3), dtype=np.float32)
    assert calab.info_nce(same, same) == pytest.approx(math.log(4), abs=1e-6)


def test_fgm_norm_and_fgsm_values():
    g = np.random.default_rng(1).normal(size=(3, 4, 5)).astype(np.float32)
    d = calab.attack_delta(g, "fgm", 0.3)
    assert d.shape == g.shape
    norms = np.sqrt((d.astype(np.float64).reshape(3, -1) ** 2).sum(axis=1))
    assert np.allclose(norms, 0.3, atol=1e-6)
    s = calab.attack_delta(g, "fgsm", 0.2)
    assert set(np.unique(np.abs(s)).tolist()) <= {np.float32(0.2), 0.0}


def test_bad_attack_config_raises():
    with pytest.raises(calab.ConfigError):
        calab.attack_delta(np.zeros((1, 2), dtype=np.float32), "fgm", -1.0)


def test_vocab_reserved_ids():
    v = calab.Vocab.build(["a b", "b c"])
    assert len(v) == 7
    assert "b" in v
    assert v.id("zzz") == 1


def test_train_and_embed_small_model():
    train, dev = calab.motif_task(200, 50, 3)
    config = "\n".join(
        ["mode=scal", "hidden=16", "layers=1", "heads=2", "ffn_dim=32", "max_len=16",
         "lr=0.003", "max_steps=20", "batch_size=16", "eval_interval=10", "seed=5"])
    sents, labels = zip(*train)
    model = calab.Model.train(config, list(sents), list(labels))
    dsents, dlabels = zip(*dev)
    acc = model.accuracy(list(dsents), list(dlabels))
    assert 0.0 <= acc <= 1.0
    clean, robust = model.robust_accuracy(list(dsents), list(dlabels), 0.0)
    assert clean == robust
    e = model.embed(["ma mb mc", "d1"])
    assert e.shape == (2, 16)
    assert np.isfinite(e).all()


def test_selfcheck_passes():
    results = calab.selfcheck()
    assert results
    assert all(ok for _, ok, _ in results)
