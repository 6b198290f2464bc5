import importlib

import numpy as np
import pytest

from lvpnet.container import compress_image
from lvpnet.corpus import Corpus, constant_images, smooth_gradient_images
from lvpnet.errors import ConfigurationError, ModelCorruptError, RoundTripError, TrainingError
from lvpnet.evaluate import evaluate
from lvpnet.model import CodecConfig, LVPNet, load_model, model_hash, save_model
from lvpnet.tensor import backward, scale
from lvpnet.train import TrainConfig, train

# the package re-exports the evaluate function under the submodule's name
ev = importlib.import_module("lvpnet.evaluate")

SMALL = dict(qcm_blocks=2, predictor_channels=8, batch_size=4)


def snapshot(model):
    return {n: p.data.copy() for n, p in model.named_parameters()}


def test_lr_zero_leaves_parameters_unchanged():
    corpus = Corpus(smooth_gradient_images(8, 16, seed=0))
    cfg = TrainConfig(lr=0.0, epochs=3, **SMALL)
    before = snapshot(LVPNet(cfg.codec_config()))
    res = train(corpus, cfg)
    after = snapshot(res.model)
    for k in before:
        np.testing.assert_array_equal(before[k], after[k])
    losses = [e.loss_bpp for e in res.history]
    # batches are reshuffled each epoch, so only the summation order changes
    assert losses[1] == pytest.approx(losses[0], rel=1e-12)
    assert losses[2] == pytest.approx(losses[0], rel=1e-12)


def test_same_seed_same_history_and_bytes():
    corpus = Corpus(smooth_gradient_images(8, 16, seed=1))
    cfg = TrainConfig(lr=1e-3, epochs=3, seed=9, **SMALL)
    a = train(corpus, cfg)
    b = train(corpus, cfg)
    assert [e.loss_bpp for e in a.history] == [e.loss_bpp for e in b.history]
    assert a.model.to_bytes() == b.model.to_bytes()


def test_gradient_reaches_every_module():
    corpus = Corpus(smooth_gradient_images(4, 16, seed=2))
    cfg = TrainConfig(lr=1e-3, epochs=1, **SMALL)
    before = snapshot(LVPNet(cfg.codec_config()))
    after = snapshot(train(corpus, cfg).model)
    changed = {k.split(".")[0] for k in before if not np.array_equal(before[k], after[k])}
    assert changed == {"gmsm", "qcm", "predictor"}


def test_every_parameter_gets_a_gradient():
    m = LVPNet(CodecConfig(qcm_blocks=2, predictor_channels=8))
    x = np.stack(smooth_gradient_images(2, 16, seed=3))
    loss, _ = m.forward_bits(x)
    backward(scale(loss, 1 / x.size))
    for name, p in m.named_parameters():
        assert p.grad is not None and np.isfinite(p.grad).all(), name
    assert any(np.any(p.grad != 0) for _, p in m.gmsm.named_parameters())


def test_constant_corpus_loss_drops():
    corpus = Corpus(constant_images(16, 16, seed=4))
    hist = train(corpus, TrainConfig(lr=1e-3, epochs=10, **SMALL)).history
    assert len(hist) == 10
    assert hist[-1].loss_bpp < hist[0].loss_bpp


def test_mixed_sizes_and_masks():
    imgs = smooth_gradient_images(3, 16, seed=5) + [np.full((12, 20), 9, np.uint8)]
    res = train(Corpus(imgs), TrainConfig(lr=1e-3, epochs=1, **SMALL))
    assert np.isfinite(res.history[0].loss_bpp)


def test_lr_schedule():
    cfg = TrainConfig(lr=1e-3, decay=0.5, decay_every=30)
    assert cfg.lr_at(0) == 1e-3
    assert cfg.lr_at(29) == 1e-3
    assert cfg.lr_at(30) == 5e-4
    assert cfg.lr_at(65) == 2.5e-4


def test_mode_defaults():
    assert TrainConfig().resolved_qcm_blocks == 24
    assert TrainConfig(mode="single").resolved_qcm_blocks == 3
    assert TrainConfig(mode="single", qcm_blocks=5).resolved_qcm_blocks == 5
    with pytest.raises(ConfigurationError):
        TrainConfig(mode="both")
    with pytest.raises(ConfigurationError):
        TrainConfig(lr=-1.0)


def test_single_mode_needs_one_image():
    with pytest.raises(ConfigurationError):
        train(Corpus(constant_images(2, 16)), TrainConfig(mode="single", epochs=1, **SMALL))
    res = train(Corpus(constant_images(1, 16)), TrainConfig(mode="single", epochs=1,
                                                            lr=1e-3, **SMALL))
    assert res.model.cfg.qcm_blocks == 2


def test_empty_corpus():
    with pytest.raises(ConfigurationError):
        train(Corpus([]), TrainConfig(epochs=1))


def test_divergence_is_reported():
    cfg = TrainConfig(lr=1e-3, epochs=1, **SMALL)
    m = LVPNet(cfg.codec_config())
    m.predictor.head[0].data[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingError):
        train(Corpus(constant_images(2, 16)), cfg, model=m)


def test_save_load_round_trip(tmp_path):
    m = LVPNet(CodecConfig(qcm_blocks=2, predictor_channels=8, init_seed=6))
    digest = save_model(m, tmp_path / "m.lvpm")
    back = load_model(tmp_path / "m.lvpm")
    assert back.cfg == m.cfg
    assert back.to_bytes() == m.to_bytes()
    for (n1, p1), (n2, p2) in zip(m.named_parameters(), back.named_parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
    assert digest == model_hash((tmp_path / "m.lvpm").read_bytes()) == back.hash()


def test_truncated_or_modified_model(tmp_path):
    blob = LVPNet(CodecConfig(qcm_blocks=1, predictor_channels=4)).to_bytes()
    for bad in (blob[:-1], blob[:100], b"", blob[:50] + bytes([blob[50] ^ 1]) + blob[51:]):
        with pytest.raises(ModelCorruptError):
            LVPNet.from_bytes(bad)


def test_container_hash_matches_model_file(tmp_path):
    m = LVPNet(CodecConfig(qcm_blocks=1, predictor_channels=4))
    digest = m.save(tmp_path / "m.lvpm")
    c = compress_image(np.zeros((8, 8), np.uint8), m)
    assert c.model_hash == digest


def test_evaluate_report(monkeypatch):
    m = LVPNet(CodecConfig(qcm_blocks=1, predictor_channels=4))
    corpus = Corpus(smooth_gradient_images(3, 16, seed=7))
    rep = evaluate(corpus, m, runs=1)
    assert [r.name for r in rep.images] == corpus.names
    assert rep.mean_bpp == pytest.approx(np.mean([r.bpp for r in rep.images]))
    assert all(r.pixel_bpp < r.bpp for r in rep.images)
    again = evaluate(corpus, m, runs=1)
    assert [r.bpp for r in again.images] == [r.bpp for r in rep.images]

    monkeypatch.setattr(ev, "decompress_image", lambda *a: np.zeros((16, 16), np.uint8))
    with pytest.raises(RoundTripError):
        evaluate(corpus, m, runs=1)
