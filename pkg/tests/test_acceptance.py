"""Acceptance criteria, one test each.

Every test prints a single ``CRITERION n ... PASS|FAIL`` line. Run with
``pytest tests/test_acceptance.py -v`` or as a script:
``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import lvpnet.gmsm
import lvpnet.predictor
import lvpnet.qcm
import lvpnet.tensor
from lvpnet.container import compress_image, decompress
from lvpnet.corpus import (Corpus, constant_images, marginal_entropy_bpp, smooth_gradient_images,
                           write_pgm)
from lvpnet.entropy import FREQ_TOTAL, attach_frequencies, arith_decode, arith_encode, huffman_build, quantize_probs
from lvpnet.evaluate import evaluate
from lvpnet.model import CodecConfig, LVPNet
from lvpnet.predictor import nll_bits
from lvpnet.quantizer import dequantize, quantize, ste_backward
from lvpnet.tensor import Tensor, backward
from lvpnet.train import TrainConfig, train

sys.path.insert(0, str(Path(__file__).parent))
from oracles import ideal_bits, optimal_prefix_cost, rel_err  # noqa: E402

# toy-scale training schedule shared by criteria 6-8
TOY = dict(lr=1e-3, batch_size=8, decay_every=60)
TOY_EPOCHS = 200
ORDER_TOL = 0.02


@pytest.fixture
def report(capsys):
    """Print one result line past pytest's output capture."""
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}", flush=True)
    return emit


# -- 1. losslessness ------------------------------------------------------------

def _structured(rng, h, w):
    kind = rng.integers(4)
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:
        img = rng.uniform(0, 255) + rng.uniform(-3, 3) * xx + rng.uniform(-3, 3) * yy
    elif kind == 1:
        img = np.where((xx // max(1, w // 8) + yy // max(1, h // 8)) % 2, 230, 20)
    elif kind == 2:
        img = 128 + 100 * np.sin(xx * rng.uniform(0.05, 1.0)) * np.cos(yy * rng.uniform(0.05, 1.0))
    else:
        img = np.full((h, w), rng.integers(256))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def lossless_corpus(seed=0):
    rng = np.random.default_rng(seed)
    plan = [((8, 8), 160), ((17, 23), 160), ((32, 32), 120), ((128, 96), 50), ((512, 512), 10)]
    for (h, w), count in plan:
        for i in range(count):
            if i % 2:
                yield rng.integers(0, 256, (h, w), dtype=np.uint8)
            else:
                yield _structured(rng, h, w)


def test_criterion_1_losslessness(report):
    model = LVPNet(CodecConfig())
    digest = model.hash()
    t0 = time.perf_counter()
    n = bad = 0
    for img in lossless_corpus():
        blob = compress_image(img, model, digest).to_bytes()
        out = decompress(blob, model, digest)
        n += 1
        bad += not (out.shape == img.shape and np.array_equal(out, img))
    elapsed = time.perf_counter() - t0
    ok = n == 500 and bad == 0 and elapsed < 600
    report(1, ok, f"{n} images, {bad} mismatches, {elapsed:.0f} s (limit 600 s)")
    assert ok


# -- 2. entropy-coder optimality -------------------------------------------------

def test_criterion_2_entropy_coders(report):
    hist_checked = hist_bad = 0
    for n in range(1, 5):
        for counts in itertools.product(range(1, 9), repeat=n):
            table = huffman_build(dict(enumerate(counts)))
            cost = sum(c * l for c, l in zip(counts, table.code_lengths))
            hist_checked += 1
            hist_bad += cost != optimal_prefix_cost(list(counts))

    rng = np.random.default_rng(2)
    worst = -np.inf
    below = trips = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 300))
        alpha = rng.choice([0.05, 0.5, 5.0])
        p = rng.dirichlet(np.full(256, alpha), n)
        freqs = quantize_probs(lvpnet.predictor.apply_floor(p, axis=1))
        cum = np.cumsum(freqs, axis=1)
        syms = (cum < rng.integers(0, FREQ_TOTAL, (n, 1)) + 1).sum(axis=1)
        bits = arith_encode(syms, freqs)
        h = ideal_bits(freqs, syms.tolist())
        below += bits.bit_count < h
        worst = max(worst, bits.bit_count - h - 0.001 * n)
        trips += arith_decode(bits, freqs, n) == syms.tolist()
    ok = hist_bad == 0 and below == 0 and worst <= 48 and trips == 10_000
    report(2, ok, f"huffman {hist_checked} histograms, {hist_bad} suboptimal; arith 10000 streams, "
                  f"{below} below H, max excess over H+0.001n {worst:.2f} bits (limit 48), "
                  f"{trips} exact round trips")
    assert ok


# -- 3. quantizer contract ---------------------------------------------------------

def test_criterion_3_quantizer(report):
    rng = np.random.default_rng(3)
    y = np.concatenate([rng.uniform(-1000, 1000, 400_000), rng.standard_normal(400_000),
                        rng.uniform(-0.05, 0.05, 200_000)])
    q = 0.01
    r = y - dequantize(quantize(y, q))
    viol = int(np.sum((r < 0) | (r >= q)))
    ste = float(ste_backward(0.5, 0.01))
    ok = y.size == 1_000_000 and viol == 0 and ste == 50.0
    report(3, ok, f"{y.size} samples, {viol} outside [0, q); STE(0.5, 0.01) = {ste!r}")
    assert ok


# -- 4. gradient check ---------------------------------------------------------------

class ReluMonitor:
    """Records the sign pattern of every relu input during a forward pass."""

    def __init__(self, monkeypatch):
        self.signs = []
        orig = lvpnet.tensor.relu

        def relu(x):
            self.signs.append(x.data > 0)
            return orig(x)

        for mod in (lvpnet.gmsm, lvpnet.qcm, lvpnet.predictor):
            monkeypatch.setattr(mod, "relu", relu)

    def take(self):
        out = np.concatenate([s.ravel() for s in self.signs])
        self.signs = []
        return out


def _gradcheck(model, x, monitor, h=1e-5):
    """Analytic and central-difference gradients for every parameter entry.

    Returns None as soon as a +-h perturbation flips the sign of any relu
    input: the loss has a kink inside the difference stencil there, so central
    differences are not a valid reference at that point.
    """
    y0 = model.encode_latent(x[0])
    offset = (dequantize(quantize(y0, model.cfg.q_step)) - y0)[None]
    hard = float(model.forward_bits(x)[0].data)
    monitor.take()
    loss = model.forward_bits(x, frozen_offset=offset)[0]
    assert abs(hard - float(loss.data)) <= 1e-12 * abs(hard)
    base = monitor.take()
    backward(loss)

    def f():
        return float(model.forward_bits(x, frozen_offset=offset)[0].data)

    ana, num = [], []
    for _, p in model.named_parameters():
        flat = p.data.reshape(-1)
        g = p.grad.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            sp = monitor.take()
            flat[i] = old - h
            fm = f()
            sm = monitor.take()
            flat[i] = old
            if not (np.array_equal(sp, base) and np.array_equal(sm, base)):
                return None
            ana.append(g[i])
            num.append((fp - fm) / (2 * h))
    return np.array(ana), np.array(num), hard


def test_criterion_4_gradients(monkeypatch, report):
    monitor = ReluMonitor(monkeypatch)
    cfg = CodecConfig(qcm_blocks=3)  # single-image configuration
    skipped = []
    result = None
    for seed in range(10):
        model = LVPNet(dataclasses.replace(cfg, init_seed=seed))
        x = np.random.default_rng(seed).integers(0, 256, (1, 8, 8))
        result = _gradcheck(model, x, monitor)
        if result is not None:
            break
        skipped.append(seed)
    assert result is not None, "no kink-free evaluation point found"
    ana, num, loss = result
    err = rel_err(ana, num)
    bad = err >= 1e-4
    # one ulp of the loss divided by the stencil width: the float64 resolution
    # of a central difference at this h
    floor = np.spacing(loss) / 2e-5
    worst_abs = np.abs(ana - num)[bad].max() if bad.any() else 0.0
    ok = not bad.any()
    report(4, ok, f"{ana.size} parameters, max relative error {err.max():.2e} (limit 1e-4), "
                  f"{int(bad.sum())} entries over; largest |analytic - fd| among them {worst_abs:.1e}"
                  f" (float64 resolution of the difference {floor:.1e}); seed {seed}, skipped "
                  f"seeds with relu kinks within h: {skipped}")
    assert ok


# -- 5. loss / file size agreement -------------------------------------------------

def test_criterion_5_loss_filesize(report):
    # nll_bits is taken under the frequency tables the coder actually uses;
    # the float-probability figure is reported alongside
    rng = np.random.default_rng(5)
    worst_lo = worst_hi = float_gap = -np.inf
    cases = 0
    for seed in range(6):
        model = LVPNet(CodecConfig(init_seed=seed, qcm_blocks=[24, 3][seed % 2]))
        if seed == 5:
            for _, p in model.predictor.named_parameters():
                p.data[...] *= 20  # very peaked predictions
        for img in (rng.integers(0, 256, (32, 32), dtype=np.uint8),
                    smooth_gradient_images(1, 32, seed=seed)[0],
                    np.full((32, 32), seed * 40, np.uint8)):
            c = compress_image(img, model)
            y_hat = dequantize(quantize(model.encode_latent(img), model.cfg.q_step))
            dist = model.predictor.predict(Tensor(model.compensate(y_hat)), img.shape)
            float_nll = nll_bits(dist, img)
            nll = nll_bits(attach_frequencies(dist), img)
            bits = c.pixels.bit_count
            worst_lo = max(worst_lo, (nll - 1) - bits)
            worst_hi = max(worst_hi, bits - (nll + 48 + 1.1))
            float_gap = max(float_gap, abs(float_nll - nll))
            cases += 1
    ok = worst_lo <= 0 and worst_hi <= 0
    report(5, ok, f"{cases} model/image pairs; worst shortfall below nll-1: {max(worst_lo, 0):.2f}"
                  f" bits, worst excess above nll+49.1: {max(worst_hi, 0):.2f} bits; largest "
                  f"|float-prob nll - coded nll| {float_gap:.2f} bits")
    assert ok


# -- 6-8. training ----------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def toy_corpus():
    return Corpus(smooth_gradient_images(256, 32, seed=1))


@functools.lru_cache(maxsize=None)
def toy_run(variant: str):
    changes = {"full": {}, "no_qcm": {"use_qcm": False}, "cnn_sampling": {"sampler": "cnn"},
               "cnn_no_qcm": {"sampler": "cnn", "use_qcm": False}}[variant]
    cfg = TrainConfig(epochs=TOY_EPOCHS, rate=0.15, q_step=0.01, mode="dataset", seed=0, **TOY,
                      **changes)
    t0 = time.perf_counter()
    res = train(toy_corpus(), cfg)
    rep = evaluate(toy_corpus(), res.model, runs=1)
    return res, rep, time.perf_counter() - t0


def test_criterion_6_toy_training(report):
    res, rep, elapsed = toy_run("full")
    baseline = marginal_entropy_bpp(toy_corpus())
    smooth_ok = rep.mean_pixel_bpp < 4.0 and rep.mean_pixel_bpp < baseline

    const = Corpus(constant_images(64, 32, seed=2))
    t0 = time.perf_counter()
    cres = train(const, TrainConfig(epochs=50, rate=0.15, q_step=0.01, seed=0, **TOY))
    crep = evaluate(const, cres.model, runs=1)
    const_elapsed = time.perf_counter() - t0
    const_ok = crep.mean_pixel_bpp < 1.0
    ok = smooth_ok and const_ok and elapsed + const_elapsed < 7200
    report(6, ok, f"smooth corpus pixel bpp {rep.mean_pixel_bpp:.3f} (limit 4.0, marginal baseline "
                  f"{baseline:.3f}, container {rep.mean_bpp:.3f}) in {elapsed:.0f} s; constant "
                  f"corpus pixel bpp {crep.mean_pixel_bpp:.3f} after 50 epochs (limit 1.0)")
    assert ok


def test_criterion_7_ablation_order(report):
    bpp = {v: toy_run(v)[1].mean_pixel_bpp for v in ("full", "no_qcm", "cnn_sampling",
                                                     "cnn_no_qcm")}
    singles = ("no_qcm", "cnn_sampling")
    ok = all(bpp["full"] <= bpp[v] + ORDER_TOL for v in singles)
    ok &= all(bpp[v] <= bpp["cnn_no_qcm"] + ORDER_TOL for v in singles)
    table = ", ".join(f"{k} {v:.3f}" for k, v in bpp.items())
    report(7, ok, f"pixel bpp: {table} (tolerance {ORDER_TOL})")
    assert ok


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "lvpnet", *args], cwd=cwd, capture_output=True,
                          text=True)


def test_criterion_8_determinism(tmp_path, report):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for i, im in enumerate(smooth_gradient_images(32, 32, seed=8)):
        write_pgm(corpus / f"im{i:02d}.pgm", im)
    runs = []
    for r in range(2):
        d = tmp_path / f"run{r}"
        d.mkdir()
        t = _cli("train", "--corpus", str(corpus), "--out", str(d / "model.lvpm"), "--epochs", "5",
                 "--seed", "11", "--lr", str(TOY["lr"]), "--batch-size", "8", cwd=d)
        v = _cli("verify", "--model", str(d / "model.lvpm"), str(corpus), cwd=d)
        blobs = []
        for p in sorted(corpus.glob("*.pgm")):
            out = d / (p.stem + ".lvp")
            _cli("compress", "--model", str(d / "model.lvpm"), str(p), str(out), cwd=d)
            blobs.append(out.read_bytes())
        runs.append((t.returncode, v.returncode, t.stdout, (d / "model.lvpm").read_bytes(), blobs,
                     v.stdout))
    (t0, v0, log0, m0, b0, rep0), (t1, v1, log1, m1, b1, rep1) = runs
    ok = (t0 == t1 == 0 and v0 == v1 == 0 and m0 == m1 and b0 == b1 and log0 == log1
          and rep0 == rep1 and len(b0) == 32)
    report(8, ok, f"exit codes train {t0}/{t1} verify {v0}/{v1}; model files identical: {m0 == m1}"
                  f"; {len(b0)} containers identical: {b0 == b1}; epoch logs identical: "
                  f"{log0 == log1}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
