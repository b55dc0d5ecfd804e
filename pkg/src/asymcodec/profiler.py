"""Static MAC/parameter counts and receptive-field measurement.

One MAC is one multiply-accumulate inside a convolution or matrix product.
Additions, activations, softmax and bias terms cost nothing. Counts follow
the arithmetic the kernels in ``functional`` actually perform, so they can be
checked against an instrumented run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import (
    ATTENTION,
    CONV,
    DECODER_MODULES,
    ENCODER_MODULES,
    MODULES,
    PIXEL_SHUFFLE,
    RBU,
    RESIDUAL,
    TRANSPOSED,
    LayerSpec,
    ModelConfig,
    validate,
)
from .errors import ConfigurationError, UsageError
from .layers import Layer, Sequential
from .tensor import Tensor, count_macs, precision

SIDES = {"encoder": ENCODER_MODULES, "decoder": DECODER_MODULES, "total": MODULES}


def _conv(k: int, cin: int, cout: int, hw: int) -> tuple[int, int]:
    return k * k * cin * cout * hw, k * k * cin * cout + cout


def count_layer(spec: LayerSpec, in_h: int, in_w: int) -> tuple[int, int]:
    """``(MACs, params)`` of one layer applied to an ``in_h`` x ``in_w`` map (per image)."""
    k, cin, cout = spec.kernel, spec.in_channels, spec.out_channels
    kind = spec.kind
    if kind == CONV:
        ho, wo = spec.output_size(in_h, in_w)
        return _conv(k, cin, cout, ho * wo)
    if kind == RESIDUAL:
        m1, p1 = _conv(k, cin, cout, in_h * in_w)
        m2, p2 = _conv(k, cout, cout, in_h * in_w)
        return m1 + m2, p1 + p2
    if kind == RBU:
        hw = in_h * in_w * spec.stride_or_scale**2
        m1, p1 = _conv(k, cin, cout, hw)
        m2, p2 = _conv(k, cout, cout, hw)
        return m1 + m2, p1 + p2
    if kind == PIXEL_SHUFFLE:
        r = spec.stride_or_scale
        return _conv(k, cin, cout * r * r, in_h * in_w)
    if kind == TRANSPOSED:
        return k * k * cin * cout * in_h * in_w, k * k * cin * cout + cout
    if kind == ATTENTION:
        c, t, hw = cin, spec.window * spec.window, in_h * in_w
        # qkv 3c^2, scores t*c, weighted sum t*c, proj c^2, two 1x1 MLP convs 4c^2
        macs = hw * (8 * c * c + 2 * t * c)
        params = 8 * c * c + 7 * c + (2 * spec.window - 1) ** 2 * spec.heads
        return macs, params
    raise ConfigurationError(f"unknown layer kind {kind!r}")


@dataclass
class LayerRecord:
    module: str
    index: int
    name: str
    kind: str
    in_shape: tuple[int, int, int]
    out_shape: tuple[int, int, int]
    macs: int
    params: int


@dataclass
class ComplexityReport:
    side: str
    height: int
    width: int
    layers: list[LayerRecord] = field(default_factory=list)

    @property
    def macs(self) -> int:
        return sum(r.macs for r in self.layers)

    @property
    def params(self) -> int:
        return sum(r.params for r in self.layers)

    def module_totals(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for r in self.layers:
            agg = out.setdefault(r.module, {"macs": 0, "params": 0})
            agg["macs"] += r.macs
            agg["params"] += r.params
        return out

    def records(self) -> list[dict]:
        return [asdict(r) for r in self.layers]

    def to_json(self) -> str:
        return json.dumps(
            {
                "side": self.side,
                "resolution": [self.width, self.height],
                "macs": self.macs,
                "params": self.params,
                "modules": self.module_totals(),
                "layers": self.records(),
            },
            indent=2,
        )

    def table(self) -> str:
        lines = [f"{'layer':<24}{'kind':<24}{'output':>16}{'MACs':>18}{'params':>12}"]
        for r in self.layers:
            shape = "x".join(map(str, r.out_shape))
            lines.append(f"{r.name:<24}{r.kind:<24}{shape:>16}{r.macs:>18,}{r.params:>12,}")
        for m, agg in self.module_totals().items():
            lines.append(f"{m + ' total':<64}{agg['macs']:>18,}{agg['params']:>12,}")
        lines.append(f"{self.side + ' total':<64}{self.macs:>18,}{self.params:>12,}")
        lines.append(f"({self.width}x{self.height} input; {self.macs / 1e9:.3f} GMACs, {self.params / 1e6:.3f} M params)")
        return "\n".join(lines)


def _stack_records(module: str, specs: Sequence[LayerSpec], c: int, h: int, w: int, prefix: str = "") -> tuple:
    recs = []
    for i, spec in enumerate(specs):
        if spec.in_channels != c:
            raise ConfigurationError(f"{module} layer {i}: expects {spec.in_channels} channels, gets {c}")
        macs, params = count_layer(spec, h, w)
        ho, wo = spec.output_size(h, w)
        name = f"{prefix or module}/layer{i}"
        recs.append(LayerRecord(module, i, name, spec.kind, (c, h, w), (spec.out_channels, ho, wo), macs, params))
        c, h, w = spec.out_channels, ho, wo
    return recs, (c, h, w)


def module_records(config: ModelConfig, module: str, h: int, w: int) -> list[LayerRecord]:
    """Per-layer records of ``module`` for an ``h`` x ``w`` image."""
    m, hc = config.latent_channels, config.hyper_channels
    lh, lw = h // 16, w // 16
    if module == "g_a":
        return _stack_records("g_a", config.g_a, 3, h, w)[0]
    if module == "g_s":
        return _stack_records("g_s", config.g_s, m, lh, lw)[0]
    if module == "h_a":
        return _stack_records("h_a", config.h_a, m, lh, lw)[0]
    if module == "h_s":
        recs = _stack_records("h_s", config.h_s, hc, lh // 4, lw // 4)[0]
        recs.append(LayerRecord("h_s", len(recs), "h_s/z_prior", "ZPrior", (hc, 1, 1), (hc, 1, 1), 0, 2 * hc))
        return recs
    if module == "f_c":
        recs = []
        f = config.hyper_feature_channels
        for i in range(config.f_c.slices):
            specs = config.f_c.slice_layers(i, m, f)
            recs += _stack_records("f_c", specs, specs[0].in_channels, lh, lw, f"f_c/slice{i}")[0]
        return recs
    raise UsageError(f"unknown module {module!r}")


def profile_model(config: ModelConfig, h: int, w: int, side: str = "total") -> ComplexityReport:
    if side not in SIDES:
        raise UsageError(f"side must be one of {sorted(SIDES)}")
    if h % 64 or w % 64:
        raise UsageError(f"resolution {w}x{h} must be a multiple of 64")
    config = validate(config)
    report = ComplexityReport(side, h, w)
    for module in SIDES[side]:
        report.layers += module_records(config, module, h, w)
    return report


def count_params(config: ModelConfig, modules: Sequence[str] = MODULES) -> int:
    return sum(r.params for m in modules for r in module_records(config, m, 64, 64))


def synthesis_stage_macs(config: ModelConfig, h: int, w: int) -> list[int]:
    """g_s MACs grouped into stages, each opened by an upsampling layer."""
    stages: list[int] = []
    for r, spec in zip(module_records(config, "g_s", h, w), config.g_s):
        if spec.is_upsampling or not stages:
            stages.append(0)
        stages[-1] += r.macs
    return stages


# -- instrumented execution ---------------------------------------------------------------

def measured_layer_macs(spec: LayerSpec, in_h: int, in_w: int, seed: int = 0) -> int:
    """Multiplies actually executed by one forward pass of a layer on one image."""
    rng = np.random.default_rng(seed)
    layer = Layer(spec, "probe", rng)
    x = Tensor(rng.standard_normal((1, spec.in_channels, in_h, in_w)))
    with count_macs() as counter:
        layer(x)
    return counter.total


def measured_module_macs(model, module: str, h: int, w: int, seed: int = 0) -> int:
    from .model import Model

    if not isinstance(model, Model):
        raise UsageError("measured_module_macs needs a built model")
    cfg = model.config
    rng = np.random.default_rng(seed)
    lh, lw = h // 16, w // 16
    with count_macs() as counter:
        if module == "g_a":
            model.g_a(Tensor(rng.random((1, 3, h, w))))
        elif module == "g_s":
            model.g_s(Tensor(rng.standard_normal((1, cfg.latent_channels, lh, lw))))
        elif module == "h_a":
            model.h_a(Tensor(rng.standard_normal((1, cfg.latent_channels, lh, lw))))
        elif module == "h_s":
            model.h_s(Tensor(rng.standard_normal((1, cfg.hyper_channels, lh // 4, lw // 4))))
        elif module == "f_c":
            hf = Tensor(rng.standard_normal((1, cfg.hyper_feature_channels, lh, lw)))
            width = cfg.latent_channels // cfg.f_c.slices
            decoded = []
            for _ in range(cfg.f_c.slices):
                model.f_c(hf, decoded)
                decoded.append(Tensor(rng.standard_normal((1, width, lh, lw))))
        else:
            raise UsageError(f"unknown module {module!r}")
    return counter.total


# -- receptive fields ---------------------------------------------------------------------

@dataclass
class ReceptiveField:
    """Input region that can influence one output position, as inclusive index bounds."""

    rows: tuple[int, int]
    cols: tuple[int, int]
    mask: Optional[np.ndarray] = None

    @property
    def height(self) -> int:
        return self.rows[1] - self.rows[0] + 1

    @property
    def width(self) -> int:
        return self.cols[1] - self.cols[0] + 1

    @property
    def extent(self) -> tuple[int, int]:
        return self.height, self.width

    def region(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        out[self.rows[0] : self.rows[1] + 1, self.cols[0] : self.cols[1] + 1] = True
        return out


def _clip(lo: int, hi: int, size: int) -> tuple[int, int]:
    return max(lo, 0), min(hi, size - 1)


def _window_union(lo: int, hi: int, window: int, offset: int, size: int) -> tuple[int, int]:
    """Union of the ``window``-blocks (shifted left by ``offset``) touching ``[lo, hi]``."""
    a = ((lo + offset) // window) * window - offset
    b = ((hi + offset) // window + 1) * window - offset - 1
    return _clip(a, b, size)


def _back_conv(lo: int, hi: int, k: int, stride: int, size: int) -> tuple[int, int]:
    p = k // 2
    return _clip(lo * stride - p, hi * stride - p + k - 1, size)


def _back_interval(spec: LayerSpec, lo: int, hi: int, in_size: int) -> tuple[int, int]:
    """Input interval feeding output interval ``[lo, hi]`` along one axis."""
    k, s = spec.kernel, spec.stride_or_scale
    if spec.kind == CONV:
        return _back_conv(lo, hi, k, s, in_size)
    if spec.kind == RESIDUAL:
        lo, hi = _back_conv(lo, hi, k, 1, in_size)
        return _back_conv(lo, hi, k, 1, in_size)
    if spec.kind == RBU:
        up = in_size * s
        lo, hi = _back_conv(lo, hi, k, 1, up)
        lo, hi = _back_conv(lo, hi, k, 1, up)
        return lo // s, hi // s
    if spec.kind == PIXEL_SHUFFLE:
        return _back_conv(lo // s, hi // s, k, 1, in_size)
    if spec.kind == TRANSPOSED:
        p = k // 2
        return _clip(-((-(lo + p - k + 1)) // s), (hi + p) // s, in_size)
    if spec.kind == ATTENTION:
        offset = spec.window // 2 if spec.shifted else 0
        return _window_union(lo, hi, spec.window, offset, in_size)
    raise ConfigurationError(f"unknown layer kind {spec.kind!r}")


def analytic_receptive_field(
    specs: Sequence[LayerSpec], in_h: int, in_w: int, position: Optional[tuple[int, int]] = None
) -> ReceptiveField:
    """Exact interval propagation from one output position back to the input."""
    sizes = [(in_h, in_w)]
    for spec in specs:
        sizes.append(spec.output_size(*sizes[-1]))
    oh, ow = sizes[-1]
    r, c = position if position is not None else (oh // 2, ow // 2)
    if not (0 <= r < oh and 0 <= c < ow):
        raise UsageError(f"position {(r, c)} outside the {oh}x{ow} output")
    rows, cols = (r, r), (c, c)
    for spec, (h, w) in zip(reversed(specs), reversed(sizes[:-1])):
        rows = _back_interval(spec, *rows, h)
        cols = _back_interval(spec, *cols, w)
    return ReceptiveField(rows, cols)


def gradient_receptive_field(
    net: Sequential, in_channels: int, in_h: int, in_w: int, position=None, seed: int = 0
) -> ReceptiveField:
    """Backpropagate from one output position; the mask marks inputs with nonzero gradient."""
    rng = np.random.default_rng(seed)
    with precision("float64"):
        x = Tensor(rng.standard_normal((1, in_channels, in_h, in_w)), requires_grad=True)
        params = list(net.parameters())
        saved = [(p, p.data) for p in params]
        try:
            for p in params:
                p.data = p.data.astype(np.float64)
            out = net(x)
            oh, ow = out.shape[2:]
            r, c = position if position is not None else (oh // 2, ow // 2)
            pick = np.zeros(out.shape)
            pick[0, :, r, c] = 1.0
            (out * Tensor(pick)).sum().backward()
        finally:
            for p, data in saved:
                p.data = data
                p.grad = None
    mask = np.abs(x.grad[0]).sum(axis=0) > 1e-12
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return ReceptiveField((0, -1), (0, -1), mask)
    return ReceptiveField((int(ys.min()), int(ys.max())), (int(xs.min()), int(xs.max())), mask)


def module_input(config: ModelConfig, module: str, h: int, w: int) -> tuple[int, int, int]:
    if module == "g_a":
        return 3, h, w
    if module in ("g_s", "h_a"):
        return config.latent_channels, h // 16, w // 16
    if module == "h_s":
        return config.hyper_channels, h // 64, w // 64
    raise UsageError(f"receptive fields are defined for g_a, g_s, h_a and h_s, not {module!r}")


def receptive_field(
    config: ModelConfig,
    module: str = "g_s",
    method: str = "analytic",
    h: int = 256,
    w: int = 256,
    position=None,
    model=None,
    seed: int = 0,
) -> ReceptiveField:
    """Receptive field of one output position of ``module`` for an ``h`` x ``w`` image.

    The gradient-mask method uses ``model``'s weights when given, otherwise a
    freshly initialized model built with ``seed``.
    """
    c, ih, iw = module_input(config, module, h, w)
    specs = config.module_layers(module)
    if method == "analytic":
        return analytic_receptive_field(specs, ih, iw, position)
    if method == "gradient-mask":
        if model is None:
            from .model import Model

            model = Model(config, seed)
        net = model.modules[module]
        net = getattr(net, "net", net)
        return gradient_receptive_field(net, c, ih, iw, position, seed)
    raise UsageError(f"unknown receptive-field method {method!r}")


def shifted_counterpart(config: ModelConfig, module: str = "g_s") -> ModelConfig:
    """Same layers with every second attention block of a run shifted, as in the usual W/SW pairing."""
    specs = list(config.module_layers(module))
    out = []
    run = 0
    for spec in specs:
        if spec.kind == ATTENTION:
            out.append(LayerSpec(**{**asdict(spec), "shifted": run % 2 == 1}))
            run += 1
        else:
            out.append(spec)
            run = 0
    return config.with_module(module, out)


__all__ = [
    "count_layer",
    "profile_model",
    "count_params",
    "ComplexityReport",
    "LayerRecord",
    "ReceptiveField",
    "receptive_field",
    "analytic_receptive_field",
    "gradient_receptive_field",
    "measured_layer_macs",
    "measured_module_macs",
    "synthesis_stage_macs",
    "shifted_counterpart",
]
