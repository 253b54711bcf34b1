"""End-to-end encoder and decoder.

Encoding: VAE latent -> predicted (gamma, t) -> quantize -> entropy code.
Decoding: entropy decode -> dequantize -> t DDIM steps -> VAE decode.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .autoencoder import ToyVAE, decode_latent, encode_image, pad_to_multiple
from .diffusion import CountingBackbone, ToyDenoiser, denoise_from
from .entropy import (
    CompressedStream,
    EntropyModel,
    StreamHeader,
    compress_latent,
    decompress_latent,
    parse,
    serialize,
)
from .entropy.bitstream import FLAG_CONTEXT, FLAG_RESCALE, LAMBDA_OTHER
from .param_estimator import TRAINED_LAMBDAS, ParamEstimator, check_lambda, timestep_to_discrete
from .quantization import QuantParams, dequantize, quantize
from .schedule import KIND_CODES, KINDS, NoiseSchedule, build_schedule

DEFAULT_MAX_PIXELS = 1024 * 1024


class ComponentMismatch(ValueError):
    """Loaded components, or a stream header, disagree on C, f or the schedule."""


class CapacityError(ValueError):
    pass


@dataclass
class CodecContext:
    vae: ToyVAE
    backbone: object
    estimator: ParamEstimator
    entropy: EntropyModel
    schedule: NoiseSchedule
    rescale: bool = False
    max_pixels: int = DEFAULT_MAX_PIXELS
    device: str = "cpu"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def channels(self) -> int:
        return self.vae.channels

    @property
    def factor(self) -> int:
        return self.vae.factor

    @property
    def pad_multiple(self) -> int:
        return self.factor * getattr(self.backbone, "spatial_multiple", 1)

    def validate(self) -> None:
        C = self.vae.channels
        for name, comp in (("backbone", self.backbone), ("estimator", self.estimator), ("entropy", self.entropy)):
            if comp.channels != C:
                raise ComponentMismatch(f"{name} has {comp.channels} channels, VAE has {C}")
        if self.backbone.schedule != self.schedule:
            raise ComponentMismatch("backbone schedule differs from the codec schedule")
        if self.device != "cpu":
            raise ComponentMismatch(f"device {self.device!r} unavailable; only cpu is supported")

    def trained_parameter_count(self) -> int:
        return sum(p.numel() for m in (self.estimator, self.entropy) for p in m.parameters())

    def frozen_parameter_count(self) -> int:
        return sum(p.numel() for m in (self.vae, self.backbone) for p in m.parameters())

    # --- persistence -------------------------------------------------------------

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        components = {
            name: ckpt.save_component(directory, name, module)
            for name, module in (
                ("vae", self.vae), ("backbone", self.backbone),
                ("estimator", self.estimator), ("entropy", self.entropy),
            )
        }
        s = self.schedule
        ckpt.write_manifest(directory, {
            "components": components,
            "schedule": {"kind": s.kind, "T_max": s.T_max, "beta_start": s.beta_start, "beta_end": s.beta_end},
            "rescale": self.rescale,
            "meta": self.meta,
        })

    @classmethod
    def load(cls, directory, device: str = "cpu", max_pixels: int = DEFAULT_MAX_PIXELS) -> "CodecContext":
        directory = Path(directory)
        manifest = ckpt.read_manifest(directory)
        comps = manifest["components"]
        sch = manifest["schedule"]
        schedule = build_schedule(sch["kind"], sch["T_max"], sch["beta_start"], sch["beta_end"])
        vae = ckpt.load_component(directory, "vae", ToyVAE(**_cfg(comps["vae"])), comps["vae"])
        backbone = ckpt.load_component(
            directory, "backbone", ToyDenoiser(schedule, **_cfg(comps["backbone"])), comps["backbone"]
        )
        estimator = ckpt.load_component(
            directory, "estimator", ParamEstimator(**_cfg(comps["estimator"])), comps["estimator"]
        )
        entropy = ckpt.load_component(directory, "entropy", EntropyModel(**_cfg(comps["entropy"])), comps["entropy"])
        return cls(vae, backbone, estimator, entropy, schedule, rescale=manifest.get("rescale", False),
                   max_pixels=max_pixels, device=device, meta=manifest.get("meta", {}))


def _cfg(entry: dict) -> dict:
    cfg = dict(entry["config"])
    for key in ("widths",):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    return cfg


@dataclass
class EncodeResult:
    stream: CompressedStream
    data: bytes
    timestep: int
    tau: float
    gamma: QuantParams
    bit_estimate: float
    clamped: int
    seconds: float
    symbols: torch.Tensor | None = field(default=None, repr=False)

    @property
    def bpp(self) -> float:
        h = self.stream.header
        return len(self.data) * 8.0 / (h.height * h.width)


def lambda_index(lam: float) -> int:
    return TRAINED_LAMBDAS.index(lam) if lam in TRAINED_LAMBDAS else LAMBDA_OTHER


@torch.no_grad()
def encode(ctx: CodecContext, image: np.ndarray, lam: float, force_timestep: int | None = None) -> EncodeResult:
    """Compress an HxWx3 image in [0, 1]."""
    lam = check_lambda(lam)
    H, W = image.shape[:2]
    if H * W > ctx.max_pixels:
        raise CapacityError(
            f"{H}x{W} exceeds the {ctx.max_pixels}-pixel cap; crop or downscale the image first"
        )
    if H > 0xFFFF or W > 0xFFFF:
        raise CapacityError("image dimensions must fit in 16 bits")
    start = time.perf_counter()
    padded = pad_to_multiple(np.asarray(image, dtype=np.float32), ctx.pad_multiple)
    y = encode_image(ctx.vae, padded)
    pred = ctx.estimator(y, lam)
    gamma = QuantParams(pred.gamma.log_scale[0], pred.gamma.offset[0]).to_float32()
    tau = float(pred.tau[0])
    t = timestep_to_discrete(tau, ctx.schedule.T_max) if force_timestep is None else int(force_timestep)
    if not 0 <= t <= ctx.schedule.T_max:
        raise ValueError(f"timestep {t} outside [0, {ctx.schedule.T_max}]")
    zq = quantize(y[0], gamma)
    hyper, main, bits = compress_latent(zq.symbols, ctx.entropy)
    s = ctx.schedule
    header = StreamHeader(
        height=H, width=W, channels=ctx.channels, factor=ctx.factor,
        schedule_kind=KIND_CODES[s.kind], T_max=s.T_max, beta_start=s.beta_start, beta_end=s.beta_end,
        timestep=t, lambda_index=lambda_index(lam), symbol_bound=ctx.entropy.symbol_bound,
        hyper_bound=ctx.entropy.hyper_bound,
        log_scale=tuple(float(v) for v in gamma.log_scale), offset=tuple(float(v) for v in gamma.offset),
        flags=(FLAG_CONTEXT if ctx.entropy.context else 0) | (FLAG_RESCALE if ctx.rescale else 0),
    )
    stream = CompressedStream(header, hyper, main)
    data = serialize(stream)
    return EncodeResult(stream, data, t, tau, gamma, bits, zq.clamped, time.perf_counter() - start, zq.symbols)


def check_header(ctx: CodecContext, h: StreamHeader) -> None:
    s = ctx.schedule
    expected = {
        "channels": ctx.channels, "factor": ctx.factor, "T_max": s.T_max,
        "schedule_kind": KIND_CODES[s.kind], "beta_start": s.beta_start, "beta_end": s.beta_end,
        "symbol_bound": ctx.entropy.symbol_bound, "hyper_bound": ctx.entropy.hyper_bound,
    }
    for key, value in expected.items():
        if getattr(h, key) != value:
            raise ComponentMismatch(f"stream {key}={getattr(h, key)} but checkpoint has {value}")
    if h.context != ctx.entropy.context:
        raise ComponentMismatch("stream and checkpoint disagree on the context model")
    if not 0 <= h.timestep <= s.T_max:
        raise ComponentMismatch(f"stream timestep {h.timestep} outside [0, {s.T_max}]")


@dataclass
class DecodeResult:
    image: np.ndarray
    timestep: int
    backbone_calls: int
    seconds: float


@torch.no_grad()
def decode(ctx: CodecContext, data) -> DecodeResult:
    """Decompress bytes (or a parsed stream) to an HxWx3 image in [0, 1]."""
    start = time.perf_counter()
    stream = data if isinstance(data, CompressedStream) else parse(bytes(data))
    h = stream.header
    check_header(ctx, h)
    m = ctx.pad_multiple
    hp, wp = math.ceil(h.height / m) * m, math.ceil(h.width / m) * m
    size = (hp // ctx.factor, wp // ctx.factor)
    z = decompress_latent(stream.hyper, stream.main, ctx.entropy, size)
    gamma = QuantParams(torch.tensor(h.log_scale, dtype=torch.float32), torch.tensor(h.offset, dtype=torch.float32))
    y_t = dequantize(z, gamma)[None]
    counter = CountingBackbone(ctx.backbone)
    y0 = denoise_from(y_t, h.timestep, counter, rescale=h.rescale)
    x = decode_latent(ctx.vae, y0)[0].permute(1, 2, 0).numpy()
    image = np.ascontiguousarray(x[: h.height, : h.width])
    return DecodeResult(image, h.timestep, counter.calls, time.perf_counter() - start)


def schedule_kind_name(code: int) -> str:
    return KINDS[code]
