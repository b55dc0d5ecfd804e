"""Declarative architecture descriptions and the shipped presets.

A model is five layer lists (``g_a``, ``g_s``, ``h_a``, ``h_s`` and the
per-slice networks of ``f_c``). The same description drives parameter
construction, the forward pass, and static complexity counting.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

from .errors import ConfigurationError

CONV = "Conv"
RESIDUAL = "ResidualBlock"
RBU = "ResidualBlockUpsample"
ATTENTION = "WindowAttentionBlock"
PIXEL_SHUFFLE = "PixelShuffleUpsample"
TRANSPOSED = "TransposedConv"

LAYER_KINDS = (CONV, RESIDUAL, RBU, ATTENTION, PIXEL_SHUFFLE, TRANSPOSED)
UPSAMPLING_KINDS = (RBU, PIXEL_SHUFFLE, TRANSPOSED)

VARIANTS = ("Symmetric", "Conv_k5", "RBU", "TCM_pruned", "AsymOurs")
DECODER_VARIANTS = ("Conv_k5", "RBU", "TCM_pruned", "AsymOurs")
PROFILES = ("micro", "paper-replica")
MODULES = ("g_a", "g_s", "h_a", "h_s", "f_c")
DECODER_MODULES = ("g_s", "h_s", "f_c")
ENCODER_MODULES = ("g_a", "h_a")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    stride_or_scale: int = 1
    kernel: int = 3
    window: int = 0
    shifted: bool = False
    heads: int = 0

    @property
    def is_upsampling(self) -> bool:
        return self.kind in UPSAMPLING_KINDS

    @property
    def is_downsampling(self) -> bool:
        return self.kind == CONV and self.stride_or_scale == 2

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        if self.is_upsampling:
            return h * self.stride_or_scale, w * self.stride_or_scale
        if self.kind == CONV and self.stride_or_scale > 1:
            s, k = self.stride_or_scale, self.kernel
            p = k // 2
            return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        return h, w


@dataclass(frozen=True)
class ContextConfig:
    """Channel-wise context model: ``slices`` groups, each predicted by a small network."""

    slices: int = 5
    attention_channels: int = 32
    residual_layers: int = 1
    shifted: bool = False
    heads: int = 2
    window: int = 4

    def slice_layers(self, index: int, latent_channels: int, hyper_channels: int) -> list[LayerSpec]:
        """Layer list of the network predicting slice ``index``."""
        width = latent_channels // self.slices
        a = self.attention_channels
        layers = [LayerSpec(CONV, hyper_channels + index * width, a, 1, 3)]
        layers += [LayerSpec(RESIDUAL, a, a, 1, 3) for _ in range(self.residual_layers)]
        layers.append(LayerSpec(ATTENTION, a, a, 1, 1, self.window, self.shifted, self.heads))
        layers.append(LayerSpec(CONV, a, 2 * width, 1, 1))
        return layers


@dataclass(frozen=True)
class ModelConfig:
    g_a: tuple[LayerSpec, ...]
    g_s: tuple[LayerSpec, ...]
    h_a: tuple[LayerSpec, ...]
    h_s: tuple[LayerSpec, ...]
    f_c: ContextConfig
    latent_channels: int
    hyper_channels: int
    variant_tag: str = "Symmetric"
    scale_profile: str = "micro"

    @property
    def hyper_feature_channels(self) -> int:
        return self.h_s[-1].out_channels

    def module_layers(self, module: str) -> tuple[LayerSpec, ...]:
        if module == "f_c":
            return tuple(
                spec
                for i in range(self.f_c.slices)
                for spec in self.f_c.slice_layers(i, self.latent_channels, self.hyper_feature_channels)
            )
        return getattr(self, module)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        for m in ("g_a", "g_s", "h_a", "h_s"):
            d[m] = [asdict(s) for s in getattr(self, m)]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            layers = {m: tuple(LayerSpec(**s) for s in d[m]) for m in ("g_a", "g_s", "h_a", "h_s")}
            return cls(
                **layers,
                f_c=ContextConfig(**d["f_c"]),
                latent_channels=int(d["latent_channels"]),
                hyper_channels=int(d["hyper_channels"]),
                variant_tag=d.get("variant_tag", "Symmetric"),
                scale_profile=d.get("scale_profile", "micro"),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed model config: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ModelConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def with_module(self, module: str, layers) -> "ModelConfig":
        return replace(self, **{module: tuple(layers) if module != "f_c" else layers})


# -- validation ---------------------------------------------------------------

def _check_layer(module: str, i: int, spec: LayerSpec) -> None:
    where = f"{module} layer {i}"
    if spec.kind not in LAYER_KINDS:
        raise ConfigurationError(f"{where}: unknown kind {spec.kind!r}")
    if spec.in_channels <= 0 or spec.out_channels <= 0:
        raise ConfigurationError(f"{where}: channel counts must be positive")
    if spec.kernel % 2 == 0 or spec.kernel <= 0:
        raise ConfigurationError(f"{where}: kernel must be a positive odd integer")
    if spec.kind in (RESIDUAL, ATTENTION):
        if spec.stride_or_scale != 1:
            raise ConfigurationError(f"{where}: {spec.kind} must have stride_or_scale = 1")
        if spec.in_channels != spec.out_channels:
            raise ConfigurationError(f"{where}: {spec.kind} must preserve channels")
    if spec.kind == ATTENTION:
        if spec.heads <= 0 or spec.in_channels % spec.heads:
            raise ConfigurationError(f"{where}: channels not divisible by heads")
        if spec.window <= 0 or spec.window % 2:
            raise ConfigurationError(f"{where}: window must be a positive even integer")
    if spec.kind == CONV and spec.stride_or_scale not in (1, 2):
        raise ConfigurationError(f"{where}: conv stride must be 1 or 2")
    if spec.is_upsampling and spec.stride_or_scale != 2:
        raise ConfigurationError(f"{where}: upsampling layers must scale by 2")


def _check_chain(module: str, layers, first_in: int, last_out: Optional[int]) -> None:
    if not layers:
        raise ConfigurationError(f"{module}: empty layer list")
    expected = first_in
    for i, spec in enumerate(layers):
        _check_layer(module, i, spec)
        if spec.in_channels != expected:
            raise ConfigurationError(
                f"{module} layer {i}: in_channels {spec.in_channels} does not match "
                f"predecessor output {expected}"
            )
        expected = spec.out_channels
    if last_out is not None and expected != last_out:
        raise ConfigurationError(f"{module}: ends at {expected} channels, expected {last_out}")


def _mirror_kind(spec: LayerSpec) -> str:
    return "up/down" if spec.is_upsampling or spec.is_downsampling else spec.kind


def validate(cfg: ModelConfig) -> ModelConfig:
    """Structural checks. ``variant_tag`` names the synthesis transform, so its rules only touch g_s."""
    m = cfg.latent_channels
    if cfg.variant_tag not in VARIANTS:
        raise ConfigurationError(f"unknown variant_tag {cfg.variant_tag!r}")
    if cfg.scale_profile not in PROFILES:
        raise ConfigurationError(f"unknown scale_profile {cfg.scale_profile!r}")
    _check_chain("g_a", cfg.g_a, 3, m)
    _check_chain("g_s", cfg.g_s, m, 3)
    _check_chain("h_a", cfg.h_a, m, cfg.hyper_channels)
    _check_chain("h_s", cfg.h_s, cfg.hyper_channels, None)

    def count(layers, pred):
        return sum(1 for s in layers if pred(s))

    if count(cfg.g_a, lambda s: s.is_downsampling) != 4 or count(cfg.g_a, lambda s: s.is_upsampling):
        raise ConfigurationError("g_a must contain exactly 4 stride-2 stages")
    if count(cfg.g_s, lambda s: s.is_upsampling) != 4 or count(cfg.g_s, lambda s: s.is_downsampling):
        raise ConfigurationError("g_s must contain exactly 4 upsampling stages")
    if count(cfg.h_a, lambda s: s.is_downsampling) != 2 or count(cfg.h_a, lambda s: s.is_upsampling):
        raise ConfigurationError("h_a must contain exactly 2 stride-2 stages")
    if count(cfg.h_s, lambda s: s.is_upsampling) != 2 or count(cfg.h_s, lambda s: s.is_downsampling):
        raise ConfigurationError("h_s must contain exactly 2 upsampling stages")

    fc = cfg.f_c
    if fc.slices <= 0 or m % fc.slices:
        raise ConfigurationError(f"f_c: {fc.slices} slices do not divide {m} latent channels")
    for i in range(fc.slices):
        _check_chain(
            f"f_c slice {i}",
            fc.slice_layers(i, m, cfg.hyper_feature_channels),
            cfg.hyper_feature_channels + i * (m // fc.slices),
            2 * (m // fc.slices),
        )

    if cfg.variant_tag == "AsymOurs":
        widths = [m] + [s.out_channels for s in cfg.g_s]
        for i in range(1, len(widths)):
            if widths[i] > widths[i - 1]:
                raise ConfigurationError(
                    f"g_s layer {i - 1}: channel width grows ({widths[i - 1]} -> {widths[i]}); "
                    "AsymOurs requires a non-increasing width schedule"
                )
        for i, s in enumerate(cfg.g_s):
            if s.kind == ATTENTION and s.shifted:
                raise ConfigurationError(f"g_s layer {i}: AsymOurs attention must be unshifted")
    if cfg.variant_tag == "Symmetric":
        kinds_a = [_mirror_kind(s) for s in reversed(cfg.g_a)]
        kinds_s = [_mirror_kind(s) for s in cfg.g_s]
        if kinds_a != kinds_s:
            raise ConfigurationError("Symmetric variant requires g_s to mirror the layer kinds of g_a")
    return cfg


# -- presets ------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleProfile:
    name: str
    widths: tuple[int, int, int]  # stage widths from the image side inward
    latent: int
    hyper: int
    window: int
    heads: int
    context_wide: int
    context_narrow: int


MICRO = ScaleProfile("micro", (24, 32, 48), 60, 32, 4, 2, 48, 32)
REPLICA = ScaleProfile("paper-replica", (128, 160, 192), 320, 192, 8, 8, 224, 96)
_PROFILES = {p.name: p for p in (MICRO, REPLICA)}


def scale_profile(name: str) -> ScaleProfile:
    try:
        return _PROFILES[name]
    except KeyError:
        raise ConfigurationError(f"unknown scale profile {name!r}") from None


def _attn(p: ScaleProfile, c: int, shifted: bool) -> LayerSpec:
    return LayerSpec(ATTENTION, c, c, 1, 1, p.window, shifted, p.heads)


def encoder_layers(p: ScaleProfile) -> list[LayerSpec]:
    c1, c2, c3 = p.widths
    return [
        LayerSpec(CONV, 3, c1, 2, 5),
        LayerSpec(RESIDUAL, c1, c1),
        LayerSpec(CONV, c1, c2, 2, 3),
        _attn(p, c2, False),
        _attn(p, c2, True),
        LayerSpec(CONV, c2, c3, 2, 3),
        _attn(p, c3, False),
        _attn(p, c3, True),
        LayerSpec(CONV, c3, p.latent, 2, 3),
    ]


def synthesis_layers(variant: str, p: ScaleProfile) -> list[LayerSpec]:
    c1, c2, c3 = p.widths
    m = p.latent
    if variant == "Symmetric":
        return [
            LayerSpec(RBU, m, c3, 2),
            _attn(p, c3, False),
            _attn(p, c3, True),
            LayerSpec(RBU, c3, c2, 2),
            _attn(p, c2, False),
            _attn(p, c2, True),
            LayerSpec(RBU, c2, c1, 2),
            LayerSpec(RESIDUAL, c1, c1),
            LayerSpec(RBU, c1, 3, 2),
        ]
    if variant == "Conv_k5":
        return [
            LayerSpec(TRANSPOSED, m, c3, 2, 5),
            LayerSpec(CONV, c3, c3, 1, 5),
            LayerSpec(TRANSPOSED, c3, c2, 2, 5),
            LayerSpec(CONV, c2, c2, 1, 5),
            LayerSpec(TRANSPOSED, c2, c1, 2, 5),
            LayerSpec(TRANSPOSED, c1, 3, 2, 5),
        ]
    if variant == "RBU":
        return [
            LayerSpec(RBU, m, c3, 2),
            LayerSpec(RESIDUAL, c3, c3),
            LayerSpec(RBU, c3, c2, 2),
            LayerSpec(RESIDUAL, c2, c2),
            LayerSpec(RBU, c2, c1, 2),
            LayerSpec(RBU, c1, 3, 2),
        ]
    if variant == "TCM_pruned":
        # identical widths across stages, two Swin blocks (one shifted)
        return [
            LayerSpec(RBU, m, c3, 2),
            _attn(p, c3, False),
            _attn(p, c3, True),
            LayerSpec(RBU, c3, c3, 2),
            LayerSpec(RBU, c3, c3, 2),
            LayerSpec(RBU, c3, 3, 2),
        ]
    if variant == "AsymOurs":
        return [
            LayerSpec(PIXEL_SHUFFLE, m, c3, 2),
            _attn(p, c3, False),
            _attn(p, c3, False),
            LayerSpec(PIXEL_SHUFFLE, c3, c2, 2),
            _attn(p, c2, False),
            _attn(p, c2, False),
            LayerSpec(PIXEL_SHUFFLE, c2, c1, 2),
            LayerSpec(PIXEL_SHUFFLE, c1, 3, 2),
        ]
    raise ConfigurationError(f"unknown variant {variant!r}")


def hyper_analysis_layers(p: ScaleProfile) -> list[LayerSpec]:
    h = p.hyper
    return [
        LayerSpec(CONV, p.latent, h, 1, 3),
        _attn(p, h, False),
        _attn(p, h, True),
        LayerSpec(CONV, h, h, 2, 3),
        LayerSpec(CONV, h, h, 2, 3),
    ]


def hyper_synthesis_layers(p: ScaleProfile, lightweight: bool) -> list[LayerSpec]:
    h = p.hyper
    if lightweight:
        return [
            LayerSpec(PIXEL_SHUFFLE, h, h, 2),
            LayerSpec(PIXEL_SHUFFLE, h, h, 2),
            _attn(p, h, False),
            LayerSpec(CONV, h, p.latent, 1, 3),
        ]
    return [
        LayerSpec(PIXEL_SHUFFLE, h, h, 2),
        LayerSpec(PIXEL_SHUFFLE, h, h, 2),
        _attn(p, h, False),
        _attn(p, h, True),
        LayerSpec(CONV, h, p.latent, 1, 3),
    ]


def context_config(p: ScaleProfile, lightweight: bool, slices: int = 5) -> ContextConfig:
    if lightweight:
        return ContextConfig(slices, p.context_narrow, 1, False, p.heads, p.window)
    return ContextConfig(slices, p.context_wide, 2, True, p.heads, p.window)


def preset(variant: str = "Symmetric", profile: str = "micro", slices: int = 5) -> ModelConfig:
    """Build one of the shipped configurations.

    Every variant shares the heavy encoder side. ``AsymOurs`` additionally
    swaps in the lightweight hyper decoder and context model; the other
    decoder variants only replace the synthesis transform.
    """
    p = scale_profile(profile)
    light = variant == "AsymOurs"
    return validate(
        ModelConfig(
            g_a=tuple(encoder_layers(p)),
            g_s=tuple(synthesis_layers(variant, p)),
            h_a=tuple(hyper_analysis_layers(p)),
            h_s=tuple(hyper_synthesis_layers(p, light)),
            f_c=context_config(p, light, slices),
            latent_channels=p.latent,
            hyper_channels=p.hyper,
            variant_tag=variant,
            scale_profile=profile,
        )
    )


def preset_filename(variant: str, profile: str) -> str:
    return f"{variant.lower()}_{profile.replace('-', '_')}.json"


def write_presets(directory: Union[str, Path]) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for profile in PROFILES:
        for variant in VARIANTS:
            path = directory / preset_filename(variant, profile)
            preset(variant, profile).save(path)
            paths.append(path)
    return paths
