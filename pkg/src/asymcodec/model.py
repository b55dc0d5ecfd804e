"""Model construction, parameter bookkeeping and the two main transforms."""

from __future__ import annotations

import zlib
from pathlib import Path
from typing import Iterator, Optional, Union

import json
import numpy as np

from . import checkpoint
from .config import (
    MODULES,
    PROFILES,
    DECODER_VARIANTS,
    ContextConfig,
    LayerSpec,
    ModelConfig,
    preset,
    validate,
)
from .errors import ConfigurationError, FormatError, UsageError
from .layers import Sequential
from .tensor import Parameter, Tensor, clamp, concat, lower_bound, softplus

SIGMA_MIN = 0.04
PAD_MULTIPLE = 64


def module_rng(seed: int, module: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(module.encode())])


class ZPrior:
    """Per-channel discretized Gaussian for the side information."""

    def __init__(self, channels: int, prefix: str) -> None:
        self.mean = Parameter(np.zeros(channels), name=f"{prefix}/z_prior/mean")
        # softplus(0.5413) = 1.0
        self.scale = Parameter(np.full(channels, 0.5413), name=f"{prefix}/z_prior/scale")

    def parameters(self) -> Iterator[Parameter]:
        yield self.mean
        yield self.scale

    def params(self) -> tuple[Tensor, Tensor]:
        mu = self.mean.reshape(1, -1, 1, 1)
        sigma = lower_bound(softplus(self.scale), SIGMA_MIN).reshape(1, -1, 1, 1)
        return mu, sigma


class HyperSynthesis:
    def __init__(self, specs, hyper_channels: int, rng: np.random.Generator) -> None:
        self.net = Sequential(specs, "h_s", rng)
        self.prior = ZPrior(hyper_channels, "h_s")

    def parameters(self) -> Iterator[Parameter]:
        yield from self.net.parameters()
        yield from self.prior.parameters()

    def __call__(self, z_hat: Tensor) -> Tensor:
        return self.net(z_hat)


class ContextModel:
    """One small network per latent slice; slice ``i`` sees hyper features and slices ``< i``."""

    def __init__(self, cfg: ContextConfig, latent_channels: int, hyper_channels: int, rng) -> None:
        self.cfg = cfg
        self.slice_width = latent_channels // cfg.slices
        self.nets = [
            Sequential(cfg.slice_layers(i, latent_channels, hyper_channels), f"f_c/slice{i}", rng)
            for i in range(cfg.slices)
        ]

    @property
    def slices(self) -> int:
        return self.cfg.slices

    def parameters(self) -> Iterator[Parameter]:
        for net in self.nets:
            yield from net.parameters()

    def __call__(self, hyper_features: Tensor, decoded: list[Tensor]) -> tuple[Tensor, Tensor]:
        i = len(decoded)
        if i >= self.slices:
            raise UsageError(f"context model has {self.slices} slices; got {i} decoded slices")
        inp = concat([hyper_features, *decoded], axis=1) if decoded else hyper_features
        out = self.nets[i](inp)
        w = self.slice_width
        mu = out[:, :w]
        sigma = lower_bound(softplus(out[:, w:]), SIGMA_MIN)
        return mu, sigma


def _build_module(config: ModelConfig, module: str, seed: int):
    rng = module_rng(seed, module)
    if module == "h_s":
        return HyperSynthesis(config.h_s, config.hyper_channels, rng)
    if module == "f_c":
        return ContextModel(config.f_c, config.latent_channels, config.hyper_feature_channels, rng)
    return Sequential(getattr(config, module), module, rng)


class Model:
    """Parameters plus executable graphs for all five modules."""

    def __init__(self, config: ModelConfig, seed: int = 0) -> None:
        self.config = validate(config)
        self.seed = seed
        self.modules = {m: _build_module(config, m, seed) for m in MODULES}
        self.lineage: Optional[str] = None
        # free-form metadata persisted with the checkpoint (lambda, model_id, stage)
        self.info: dict = {}
        self._check_names()

    def _check_names(self) -> None:
        names = [p.name for p in self.parameters()]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate parameter names")

    @property
    def g_a(self) -> Sequential:
        return self.modules["g_a"]

    @property
    def g_s(self) -> Sequential:
        return self.modules["g_s"]

    @property
    def h_a(self) -> Sequential:
        return self.modules["h_a"]

    @property
    def h_s(self) -> HyperSynthesis:
        return self.modules["h_s"]

    @property
    def f_c(self) -> ContextModel:
        return self.modules["f_c"]

    def parameters(self, modules=MODULES) -> list[Parameter]:
        return [p for m in modules for p in self.modules[m].parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def param_count(self, modules=MODULES) -> int:
        return sum(p.size for p in self.parameters(modules))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.astype(np.float32) for p in self.parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))[:3]
            extra = sorted(set(arrays) - set(params))[:3]
            raise FormatError(f"checkpoint does not match model (missing {missing}, unexpected {extra})")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise FormatError(f"shape mismatch for {name}")
            p.data = np.array(arrays[name], dtype=p.data.dtype)

    def set_trainable(self, prefixes) -> None:
        """Freeze every parameter whose name does not start with one of ``prefixes``."""
        prefixes = tuple(f"{m.rstrip('/')}/" for m in prefixes)
        for p in self.parameters():
            p.frozen = not p.name.startswith(prefixes)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def digest(self, modules=MODULES) -> str:
        return checkpoint.digest({p.name: p.data for p in self.parameters(modules)})

    # -- persistence -------------------------------------------------------
    def save(self, path: Union[str, Path]) -> None:
        """Write ``path`` (parameters) and ``path.json`` (config and metadata)."""
        path = Path(path)
        checkpoint.save(path, self.state_dict())
        meta = {"config": self.config.to_dict(), "seed": self.seed, "lineage": self.lineage, "info": self.info}
        Path(f"{path}.json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Model":
        path = Path(path)
        meta_path = Path(f"{path}.json")
        if not meta_path.exists():
            raise FormatError(f"missing model metadata {meta_path}")
        meta = json.loads(meta_path.read_text())
        model = cls(ModelConfig.from_dict(meta["config"]), seed=meta.get("seed", 0))
        model.load_state_dict(checkpoint.load(path))
        model.lineage = meta.get("lineage")
        model.info = dict(meta.get("info", {}))
        return model

    def copy(self) -> "Model":
        other = Model(self.config, self.seed)
        src = self.named_parameters()
        for name, p in other.named_parameters().items():
            p.data = src[name].data.copy()
            p.frozen = src[name].frozen
        other.lineage = self.lineage
        other.info = dict(self.info)
        return other


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    return Model(config, seed)


def replace_module(model: Model, module: str, config: ModelConfig, seed: int) -> None:
    """Rebuild ``module`` of ``model`` from ``config`` with fresh parameters."""
    model.config = validate(config)
    model.modules[module] = _build_module(config, module, seed)
    model._check_names()


def check_padded(x: Tensor) -> None:
    if x.ndim != 4 or x.shape[1] != 3:
        raise UsageError(f"expected an (N, 3, H, W) image tensor, got {x.shape}")
    h, w = x.shape[2:]
    if h % PAD_MULTIPLE or w % PAD_MULTIPLE:
        raise UsageError(f"image size {h}x{w} is not padded to a multiple of {PAD_MULTIPLE}")


def analyze(model: Model, x: Tensor) -> Tensor:
    check_padded(x)
    return model.g_a(x)


def synthesize_raw(model: Model, y_hat: Tensor) -> Tensor:
    if y_hat.ndim != 4 or y_hat.shape[1] != model.config.latent_channels:
        raise UsageError(f"latent must be (N, {model.config.latent_channels}, h, w), got {y_hat.shape}")
    return model.g_s(y_hat)


def synthesize(model: Model, y_hat: Tensor, variant: Optional[str] = None) -> Tensor:
    if variant is not None and variant != model.config.variant_tag:
        raise UsageError(f"model carries the {model.config.variant_tag} decoder, not {variant}")
    return clamp(synthesize_raw(model, y_hat), 0.0, 1.0)


def list_variants() -> dict[tuple[str, str], ModelConfig]:
    """The synthesis-decoder variants at both scale profiles."""
    return {(v, p): preset(v, p) for p in PROFILES for v in DECODER_VARIANTS}


__all__ = [
    "Model",
    "build_model",
    "analyze",
    "synthesize",
    "list_variants",
    "LayerSpec",
]
