"""Rate-distortion training and the staged asymmetric schedule.

The schedule starts from one symmetric model (S0). S1 swaps in the light
synthesis transform and trains only that, on distortion. S2 swaps in the light
hyper decoder and context model and trains them together with the hyper
encoder on the full objective. S3 merges the two branches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .config import MODULES, ModelConfig, preset, validate
from .entropy import (
    GaussianParams,
    gaussian_likelihood,
    quantize,
    rate_estimate,
    slice_params,
    split_slices,
    z_params,
)
from .errors import AssemblyError, ConfigurationError, UsageError
from .imageio import list_images, read_image, to_tensor_layout
from .model import Model, _build_module
from .optim import Adam
from .tensor import Tensor, concat, mean, no_grad, square

LAMBDAS = (0.0025, 0.0035, 0.0067, 0.0130, 0.0250, 0.0500)
RD = "RD"
D_ONLY = "D_only"

S0 = "S0_symmetric"
S1 = "S1_gs"
S2 = "S2_hyper"
S3 = "S3_assemble"


def lambda_index(lmbda: float) -> int:
    """Position of ``lmbda`` in the standard set, or 255 for a custom value."""
    for i, v in enumerate(LAMBDAS):
        if math.isclose(v, lmbda, rel_tol=1e-9):
            return i
    return 255


@dataclass
class TrainConfig:
    lmbda: float = 0.0130
    batch_size: int = 8
    crop: int = 64
    lr: float = 1e-4
    lr_final: float = 1e-5
    final_fraction: float = 0.2
    steps: dict = field(default_factory=lambda: {S0: 3000, S1: 800, S2: 1500})
    seed: int = 0
    log_interval: int = 50
    allow_custom_lambda: bool = False

    def __post_init__(self) -> None:
        if not self.allow_custom_lambda and lambda_index(self.lmbda) == 255:
            raise ConfigurationError(f"lambda {self.lmbda} is not in {LAMBDAS}; set allow_custom_lambda")
        if self.batch_size < 1 or self.crop < 1:
            raise ConfigurationError("batch_size and crop must be positive")
        if not 0.0 <= self.final_fraction < 1.0:
            raise ConfigurationError("final_fraction must be in [0, 1)")

    def lr_at(self, step: int, total: int) -> float:
        """Learning rate for 0-based ``step``; drops once, for the last ``final_fraction``."""
        drop_at = total - int(round(self.final_fraction * total))
        return self.lr if step < drop_at else self.lr_final


@dataclass(frozen=True)
class StagePlan:
    stage: str
    trainable: tuple[str, ...]
    loss: str
    substitutions: tuple[str, ...] = ()

    @classmethod
    def for_stage(cls, stage: str) -> "StagePlan":
        if stage == S0:
            return cls(S0, MODULES, RD)
        if stage == S1:
            return cls(S1, ("g_s",), D_ONLY, ("g_s",))
        if stage == S2:
            return cls(S2, ("h_a", "h_s", "f_c"), RD, ("h_s", "f_c"))
        if stage == S3:
            return cls(S3, (), RD)
        raise UsageError(f"unknown stage {stage!r}")


# -- objective -----------------------------------------------------------------------------

def mse_255(x: Tensor, x_hat: Tensor) -> Tensor:
    if x.shape != x_hat.shape:
        raise UsageError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return mean(square(x_hat - x)) * (255.0**2)


def rd_loss(x: Tensor, x_hat: Tensor, rate_bpp, lmbda: float, loss_kind: str = RD) -> Tensor:
    d = mse_255(x, x_hat) * lmbda
    if loss_kind == D_ONLY:
        return d
    if loss_kind != RD:
        raise UsageError(f"unknown loss kind {loss_kind!r}")
    return d + rate_bpp


@dataclass
class ForwardResult:
    x_hat: Tensor
    y: Tensor
    y_hat: Tensor
    rate_bits: Optional[Tensor]
    bpp: Optional[Tensor]


def forward(
    model: Model,
    x: Tensor,
    mode: str = "noise",
    rng: Optional[np.random.Generator] = None,
    with_rate: bool = True,
) -> ForwardResult:
    """Training-time pass through all five modules.

    With ``with_rate=False`` and noise quantization the entropy path is skipped,
    since additive noise does not depend on the predicted means.
    """
    y = model.g_a(x)
    pixels = x.shape[0] * x.shape[2] * x.shape[3]
    if not with_rate and mode == "noise":
        y_hat = quantize(y, 0.0, mode, rng)
        return ForwardResult(model.g_s(y_hat), y, y_hat, None, None)
    z = model.h_a(y)
    prior = z_params(model)
    z_hat = quantize(z, prior.mu, mode, rng)
    liks = [gaussian_likelihood(z_hat, prior)]
    hf = model.h_s(z_hat)
    decoded: list[Tensor] = []
    for y_i in split_slices(y, model.f_c.slices):
        params = slice_params(model, hf, decoded)
        y_hat_i = quantize(y_i, params.mu, mode, rng)
        liks.append(gaussian_likelihood(y_hat_i, params))
        decoded.append(y_hat_i)
    y_hat = concat(decoded, axis=1) if len(decoded) > 1 else decoded[0]
    bits = rate_estimate(*liks)
    return ForwardResult(model.g_s(y_hat), y, y_hat, bits, bits * (1.0 / pixels))


# -- data ----------------------------------------------------------------------------------

def load_dataset(directory) -> list[np.ndarray]:
    paths = list_images(directory)
    if not paths:
        raise UsageError(f"no .ppm or .png images in {directory}")
    return [read_image(p) for p in paths]


class CropSampler:
    """Uniform random crops drawn with a seeded generator."""

    def __init__(self, images: Sequence[np.ndarray], crop: int, batch_size: int, rng: np.random.Generator):
        if not images:
            raise UsageError("empty training set")
        small = [im.shape for im in images if im.shape[0] < crop or im.shape[1] < crop]
        if small:
            raise UsageError(f"images smaller than the {crop}px crop: {small[:3]}")
        self.images = [to_tensor_layout(im) for im in images]
        self.crop = crop
        self.batch_size = batch_size
        self.rng = rng

    def batch(self) -> np.ndarray:
        c = self.crop
        out = np.empty((self.batch_size, 3, c, c), dtype=np.float32)
        for b in range(self.batch_size):
            im = self.images[self.rng.integers(len(self.images))]
            top = self.rng.integers(im.shape[1] - c + 1)
            left = self.rng.integers(im.shape[2] - c + 1)
            out[b] = im[:, top : top + c, left : left + c]
        return out


# -- stages --------------------------------------------------------------------------------

@dataclass
class StageResult:
    model: Model
    log: list[dict]


def substitute_modules(model: Model, modules: Iterable[str], new_config: ModelConfig, seed: int) -> Model:
    """Swap ``modules`` for freshly initialized ones built from ``new_config``.

    Everything outside ``modules`` must be described identically by the two
    configurations, so the interfaces line up and the other parameters stay.
    """
    modules = tuple(modules)
    new_config = validate(new_config)
    old = model.config
    if (new_config.latent_channels, new_config.hyper_channels) != (old.latent_channels, old.hyper_channels):
        raise ConfigurationError("latent or hyper channel count differs from the model's")
    for m in MODULES:
        if m not in modules and new_config.module_layers(m) != old.module_layers(m):
            raise ConfigurationError(f"{m} differs between configurations but is not being substituted")
    if "f_c" not in modules and new_config.f_c.slices != old.f_c.slices:
        raise ConfigurationError("slice count differs but f_c is not being substituted")
    model.config = new_config
    for m in modules:
        model.modules[m] = _build_module(new_config, m, seed)
    model._check_names()
    return model


def substitute_module(model: Model, module: str, new_config: ModelConfig, seed: int) -> Model:
    return substitute_modules(model, (module,), new_config, seed)


def _stage_config(model: Model, plan: StagePlan, target: ModelConfig) -> ModelConfig:
    cfg = model.config
    for m in plan.substitutions:
        cfg = replace(cfg, f_c=target.f_c) if m == "f_c" else cfg.with_module(m, target.module_layers(m))
    if "g_s" in plan.substitutions:
        cfg = replace(cfg, variant_tag=target.variant_tag)
    return cfg


def run_stage(
    model: Model,
    plan: StagePlan,
    data: Sequence[np.ndarray],
    config: TrainConfig,
    target: Optional[ModelConfig] = None,
    steps: Optional[int] = None,
    on_record: Optional[Callable[[dict], None]] = None,
) -> StageResult:
    """Train ``model`` in place according to ``plan``.

    ``target`` supplies the layer descriptions for substituted modules.
    """
    if plan.stage == S3:
        raise UsageError("S3 has no training; use assemble_asymmetric")
    steps = config.steps.get(plan.stage, 0) if steps is None else steps
    if plan.substitutions:
        if target is None:
            raise UsageError(f"{plan.stage} substitutes {plan.substitutions} and needs a target config")
        substitute_modules(model, plan.substitutions, _stage_config(model, plan, target), config.seed)
    model.set_trainable(plan.trainable)
    params = model.parameters()
    live = [p for p in params if not p.frozen]
    if steps > 0 and not live:
        raise ConfigurationError(f"{plan.stage} has nothing to train")

    stage_no = (S0, S1, S2).index(plan.stage)
    rng = np.random.default_rng([config.seed, stage_no])
    sampler = CropSampler(data, config.crop, config.batch_size, rng)
    opt = Adam(live, lr=config.lr)
    log: list[dict] = []
    ema = None
    for step in range(steps):
        opt.lr = config.lr_at(step, steps)
        x = Tensor(sampler.batch())
        record_step = (step + 1) % config.log_interval == 0 or step == steps - 1
        out = forward(model, x, "noise", rng, with_rate=plan.loss == RD)
        loss = rd_loss(x, out.x_hat, out.bpp, config.lmbda, plan.loss)
        opt.zero_grad()
        loss.backward()
        opt.step()
        value = loss.item()
        ema = value if ema is None else 0.9 * ema + 0.1 * value
        if record_step:
            rec = {"stage": plan.stage, "step": step + 1, "loss": value, "loss_ema": ema, "lr": opt.lr}
            rec.update(batch_metrics(model, x, out))
            log.append(rec)
            if on_record is not None:
                on_record(rec)
    for p in params:
        p.grad = None
        p.frozen = False
    return StageResult(model, log)


def batch_metrics(model: Model, x: Tensor, out: Optional[ForwardResult] = None) -> dict:
    """Estimated bpp and PSNR of ``x`` through the rounding path."""
    with no_grad():
        res = forward(model, x, "round")
        x_hat = np.clip(res.x_hat.data, 0.0, 1.0)
        mse = float(np.mean((x_hat.astype(np.float64) - x.data) ** 2)) * 255.0**2
    psnr = 99.0 if mse == 0 else 10.0 * math.log10(255.0**2 / mse)
    return {"bpp": float(res.bpp.item()), "psnr": psnr}


def assemble_asymmetric(s1_model: Model, s2_model: Model) -> Model:
    """Combine g_s from S1 with g_a, h_a, h_s and f_c from S2."""
    if s1_model.lineage is None or s1_model.lineage != s2_model.lineage:
        raise AssemblyError(
            f"stage models descend from different S0 checkpoints ({s1_model.lineage} vs {s2_model.lineage})"
        )
    cfg = replace(s2_model.config.with_module("g_s", s1_model.config.g_s), variant_tag=s1_model.config.variant_tag)
    out = Model(validate(cfg), s2_model.seed)
    src = {**s2_model.named_parameters(), **{p.name: p for p in s1_model.parameters(("g_s",))}}
    for name, p in out.named_parameters().items():
        p.data = src[name].data.copy()
    out.lineage = s2_model.lineage
    return out


def mark_ancestor(model: Model) -> str:
    """Stamp ``model`` with its own digest so derived stages can be matched up."""
    model.lineage = model.digest()[:16]
    return model.lineage


@dataclass
class ScheduleResult:
    s0: Model
    s1: Model
    s2: Model
    final: Model
    log: list[dict]


def run_schedule(
    data: Sequence[np.ndarray],
    config: TrainConfig,
    symmetric: Optional[ModelConfig] = None,
    target: Optional[ModelConfig] = None,
    s0_model: Optional[Model] = None,
    on_record: Optional[Callable[[dict], None]] = None,
) -> ScheduleResult:
    """S0 (unless ``s0_model`` is given), then S1 and S2 from copies of it, then S3."""
    profile = (symmetric or (s0_model.config if s0_model else None) or preset()).scale_profile
    target = target or preset("AsymOurs", profile)
    log: list[dict] = []
    if s0_model is None:
        s0_model = Model(symmetric or preset("Symmetric", profile), config.seed)
        log += run_stage(s0_model, StagePlan.for_stage(S0), data, config, on_record=on_record).log
    if s0_model.lineage is None:
        mark_ancestor(s0_model)
    s1 = s0_model.copy()
    log += run_stage(s1, StagePlan.for_stage(S1), data, config, target, on_record=on_record).log
    s2 = s0_model.copy()
    log += run_stage(s2, StagePlan.for_stage(S2), data, config, target, on_record=on_record).log
    return ScheduleResult(s0_model, s1, s2, assemble_asymmetric(s1, s2), log)


def write_log(path, records: Iterable[dict]) -> None:
    with Path(path).open("a") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


