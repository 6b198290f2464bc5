"""End-to-end training under the code-length loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .container import pad_image
from .corpus import Corpus
from .errors import ConfigurationError, TrainingError
from .model import CodecConfig, LVPNet
from .tensor import Adam, backward, scale

log = logging.getLogger(__name__)

MODES = ("dataset", "single")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    decay: float = 0.5
    decay_every: int = 30
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0
    mode: str = "dataset"
    qcm_blocks: Optional[int] = None  # 24 in dataset mode, 3 for a single image
    rate: float = 0.15
    q_step: float = 0.01
    stages: int = 3
    predictor_channels: int = 32
    sampler: str = "gmsm"
    use_qcm: bool = True

    def __post_init__(self):
        if self.mode == "single_image":
            self.mode = "single"
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.lr >= 0:
            raise ConfigurationError("lr must be non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.decay_every < 1:
            raise ConfigurationError("epochs, batch_size and decay_every must be positive")

    @property
    def resolved_qcm_blocks(self) -> int:
        if self.qcm_blocks is not None:
            return self.qcm_blocks
        return 24 if self.mode == "dataset" else 3

    def codec_config(self) -> CodecConfig:
        return CodecConfig.from_rate(
            self.rate, q_step=self.q_step, stages=self.stages,
            qcm_blocks=self.resolved_qcm_blocks, use_qcm=self.use_qcm, sampler=self.sampler,
            predictor_channels=self.predictor_channels, init_seed=self.seed)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay ** (epoch // self.decay_every)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class EpochLog:
    epoch: int
    loss_bpp: float
    lr: float


@dataclass
class TrainResult:
    model: LVPNet
    history: list[EpochLog] = field(default_factory=list)


def _batches(corpus: Corpus, block: int, batch_size: int, rng: np.random.Generator):
    """Same-size batches of padded images, with masks of the real pixels."""
    buckets: dict[tuple[int, int], list[int]] = {}
    for i, im in enumerate(corpus.images):
        ph = -im.shape[0] % block
        pw = -im.shape[1] % block
        buckets.setdefault((im.shape[0] + ph, im.shape[1] + pw), []).append(i)
    batches = []
    for key in sorted(buckets):
        idx = buckets[key]
        order = [idx[j] for j in rng.permutation(len(idx))]
        batches += [order[k:k + batch_size] for k in range(0, len(order), batch_size)]
    return [batches[j] for j in rng.permutation(len(batches))]


def train(corpus: Corpus, cfg: TrainConfig,
          on_epoch: Optional[Callable[[EpochLog], None]] = None,
          model: Optional[LVPNet] = None) -> TrainResult:
    if not isinstance(corpus, Corpus):
        corpus = Corpus(list(corpus))
    if len(corpus) == 0:
        raise ConfigurationError("cannot train on an empty corpus")
    if cfg.mode == "single" and len(corpus) != 1:
        raise ConfigurationError(f"single-image mode trains on exactly one image, got {len(corpus)}")
    if model is None:
        model = LVPNet(cfg.codec_config())
    block = model.cfg.block
    padded = []
    for im in corpus.images:
        p, (ph, pw) = pad_image(im, block)
        mask = np.zeros(p.shape, dtype=bool)
        mask[:im.shape[0], :im.shape[1]] = True
        padded.append((p, mask))

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    result = TrainResult(model)
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        bits = 0.0
        pixels = 0
        for batch in _batches(corpus, block, cfg.batch_size, rng):
            x = np.stack([padded[i][0] for i in batch])
            mask = np.stack([padded[i][1] for i in batch])
            n_pix = int(mask.sum())
            opt.zero_grad()
            loss, _ = model.forward_bits(x, mask)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"loss diverged at epoch {epoch + 1}")
            bits += value
            pixels += n_pix
            # optimise bits per pixel so the step size is independent of batch geometry
            backward(scale(loss, 1.0 / n_pix))
            opt.step()
        entry = EpochLog(epoch + 1, bits / pixels, opt.lr)
        result.history.append(entry)
        log.info("epoch %d loss %.4f bpp lr %.3g", entry.epoch, entry.loss_bpp, entry.lr)
        if on_epoch is not None:
            on_epoch(entry)
    return result
