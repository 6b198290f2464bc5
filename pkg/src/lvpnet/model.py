"""Codec configuration, the composed network and its model file."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ModelCorruptError
from .gmsm import Gmsm, GmsmConfig
from .predictor import Predictor
from .qcm import Qcm, QcmConfig
from .quantizer import (QuantizedLatent, dequantize, dequantize_t, frozen_offset_quantize,
                        quantize_ste)
from .tensor import Parameter, Tensor, softmax_bits

MODEL_MAGIC = b"LVPM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class CodecConfig:
    """Everything the encoder and decoder must agree on."""

    rate_num: int = 15
    rate_den: int = 100
    q_step: float = 0.01
    stages: int = 3
    qcm_blocks: int = 24
    use_qcm: bool = True
    sampler: str = "gmsm"
    predictor_channels: int = 32
    init_seed: int = 0

    def __post_init__(self):
        if not (0 < self.rate_num <= self.rate_den < 1 << 16):
            raise ConfigurationError(f"rate {self.rate_num}/{self.rate_den} must lie in (0, 1] "
                                     "with a 16-bit denominator")
        if not self.q_step > 0:
            raise ConfigurationError("q_step must be positive")
        if not 1 <= self.stages <= 7:
            raise ConfigurationError("stages must be in [1, 7]")
        if self.predictor_channels < 1:
            raise ConfigurationError("predictor_channels must be positive")
        self.gmsm_config()
        self.qcm_config()

    @classmethod
    def from_rate(cls, rate: float, **kw) -> "CodecConfig":
        fr = Fraction(rate).limit_denominator(1000)
        return cls(rate_num=fr.numerator, rate_den=fr.denominator, **kw)

    @property
    def rate(self) -> Fraction:
        return Fraction(self.rate_num, self.rate_den)

    @property
    def block(self) -> int:
        return 2 ** self.stages

    def gmsm_config(self) -> GmsmConfig:
        return GmsmConfig(self.stages, self.rate, self.sampler)

    def qcm_config(self) -> QcmConfig:
        return QcmConfig(self.qcm_blocks, self.gmsm_config().latent_channels)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CodecConfig":
        raw = json.loads(text)
        known = {f.name for f in fields(cls)}
        if set(raw) != known:
            raise ModelCorruptError(f"model config keys {sorted(raw)} do not match {sorted(known)}")
        return cls(**raw)


class LVPNet:
    """Encoder, quantizer, compensation network and pixel predictor."""

    def __init__(self, cfg: CodecConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        self.gmsm = Gmsm(cfg.gmsm_config(), rng)
        self.qcm = Qcm(cfg.qcm_config(), rng, cfg.q_step) if cfg.use_qcm else None
        self.predictor = Predictor(cfg.gmsm_config().latent_channels, cfg.stages,
                                   cfg.predictor_channels, rng)

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out = self.gmsm.named_parameters()
        if self.qcm is not None:
            out += self.qcm.named_parameters()
        return out + self.predictor.named_parameters()

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    # -- inference path (shared verbatim by encoder and decoder) ----------

    def encode_latent(self, x: np.ndarray) -> np.ndarray:
        """Real latent ``y`` for one padded image given as 8-bit values."""
        return self.gmsm.forward(Tensor(normalize(x)[None])).data

    def compensate(self, y_hat: np.ndarray) -> np.ndarray:
        if self.qcm is None:
            return y_hat
        return self.qcm.forward(Tensor(y_hat)).data

    def hidden(self, z: np.ndarray) -> np.ndarray:
        """Predictor features for integer latents ``z`` (m x g x g)."""
        y_hat = dequantize(QuantizedLatent(np.asarray(z, dtype=np.int32), self.cfg.q_step))
        return self.predictor.hidden(Tensor(self.compensate(y_hat))).data

    # -- training path ----------------------------------------------------

    def forward_bits(self, x: np.ndarray, mask: Optional[np.ndarray] = None,
                     frozen_offset: Optional[np.ndarray] = None) -> tuple[Tensor, np.ndarray]:
        """Total code length in bits of a batch ``N x H x W`` of 8-bit images.

        ``frozen_offset`` replaces the hard quantizer by ``y + offset`` with a
        constant offset; see :func:`quantizer.frozen_offset_quantize`.
        """
        x = np.asarray(x)
        xt = Tensor(normalize(x)[:, None])
        y = self.gmsm.forward(xt)
        if frozen_offset is None:
            y_hat = dequantize_t(quantize_ste(y, self.cfg.q_step), self.cfg.q_step)
        else:
            y_hat = frozen_offset_quantize(y, frozen_offset)
        comp = self.qcm.forward(y_hat) if self.qcm is not None else y_hat
        logits = self.predictor.logits(self.predictor.hidden(comp))
        return softmax_bits(logits, x.astype(np.int64), mask)

    # -- serialisation ----------------------------------------------------

    def to_bytes(self) -> bytes:
        body = bytearray(MODEL_MAGIC)
        body += struct.pack("<B", MODEL_VERSION)
        cfg = self.cfg.to_json().encode()
        body += struct.pack("<I", len(cfg)) + cfg
        params = self.named_parameters()
        body += struct.pack("<I", len(params))
        for name, p in params:
            nb = name.encode()
            body += struct.pack("<H", len(nb)) + nb
            body += struct.pack("<B", p.data.ndim)
            body += struct.pack(f"<{p.data.ndim}I", *p.data.shape)
            body += p.data.astype("<f8").tobytes()
        body += hashlib.sha256(body).digest()
        return bytes(body)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "LVPNet":
        if len(blob) < 4 + 1 + 4 + 32 or blob[:4] != MODEL_MAGIC:
            raise ModelCorruptError("not a model file")
        body, digest = blob[:-32], blob[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise ModelCorruptError("model file hash mismatch (truncated or modified)")
        try:
            return cls._parse(body)
        except (struct.error, UnicodeDecodeError, ValueError, ConfigurationError) as exc:
            raise ModelCorruptError(f"malformed model file: {exc}") from None

    @classmethod
    def _parse(cls, body: bytes) -> "LVPNet":
        pos = 4
        (version,) = struct.unpack_from("<B", body, pos)
        pos += 1
        if version != MODEL_VERSION:
            raise ModelCorruptError(f"unsupported model version {version}")
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        cfg = CodecConfig.from_json(body[pos:pos + n].decode())
        pos += n
        model = cls(cfg)
        expected = model.named_parameters()
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        if count != len(expected):
            raise ModelCorruptError(f"model file has {count} tensors, expected {len(expected)}")
        for name, p in expected:
            (ln,) = struct.unpack_from("<H", body, pos)
            pos += 2
            got = body[pos:pos + ln].decode()
            pos += ln
            (nd,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{nd}I", body, pos)
            pos += 4 * nd
            if got != name or tuple(shape) != p.shape:
                raise ModelCorruptError(f"tensor {got}{tuple(shape)} does not match {name}{p.shape}")
            size = int(np.prod(shape)) * 8
            if pos + size > len(body):
                raise ModelCorruptError("model file truncated")
            p.value.data[...] = np.frombuffer(body, dtype="<f8", count=size // 8, offset=pos).reshape(shape)
            pos += size
        if pos != len(body):
            raise ModelCorruptError("trailing bytes in model file")
        return model

    def hash(self) -> bytes:
        return model_hash(self.to_bytes())

    def save(self, path) -> bytes:
        blob = self.to_bytes()
        Path(path).write_bytes(blob)
        return model_hash(blob)

    @classmethod
    def load(cls, path) -> "LVPNet":
        return cls.from_bytes(Path(path).read_bytes())

    def with_config(self, **changes) -> "LVPNet":
        return LVPNet(replace(self.cfg, **changes))


def model_hash(blob: bytes) -> bytes:
    """8-byte identifier of a model file, stored in every container."""
    return hashlib.sha256(blob).digest()[:8]


def normalize(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) / 255.0


def save_model(model: LVPNet, path) -> bytes:
    return model.save(path)


def load_model(path) -> LVPNet:
    return LVPNet.load(path)
