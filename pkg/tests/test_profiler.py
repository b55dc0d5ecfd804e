import json

import numpy as np
import pytest

from asymcodec.config import (
    ATTENTION,
    CONV,
    PIXEL_SHUFFLE,
    RBU,
    RESIDUAL,
    TRANSPOSED,
    LayerSpec,
    preset,
)
from asymcodec.errors import UsageError
from asymcodec.layers import Sequential
from asymcodec.model import Model
from asymcodec.profiler import (
    analytic_receptive_field,
    count_layer,
    count_params,
    gradient_receptive_field,
    measured_layer_macs,
    measured_module_macs,
    module_records,
    profile_model,
    receptive_field,
    shifted_counterpart,
    synthesis_stage_macs,
)

from oracles import conv_rf_recursion

LAYERS = [
    LayerSpec(CONV, 5, 7, 1, 3),
    LayerSpec(CONV, 5, 7, 2, 5),
    LayerSpec(CONV, 5, 7, 1, 1),
    LayerSpec(RESIDUAL, 6, 6),
    LayerSpec(RBU, 6, 4, 2),
    LayerSpec(PIXEL_SHUFFLE, 6, 4, 2),
    LayerSpec(TRANSPOSED, 6, 4, 2, 5),
    LayerSpec(ATTENTION, 8, 8, 1, 1, 4, False, 2),
    LayerSpec(ATTENTION, 8, 8, 1, 1, 4, True, 2),
]


@pytest.mark.parametrize("spec", LAYERS, ids=lambda s: f"{s.kind}-{s.kernel}-{s.stride_or_scale}-{s.shifted}")
def test_static_macs_equal_instrumented(spec):
    assert count_layer(spec, 8, 12)[0] == measured_layer_macs(spec, 8, 12)


def test_hand_counted_layers():
    # written out by hand from the layer definitions
    assert count_layer(LayerSpec(CONV, 16, 32, 1, 3), 64, 64) == (9 * 16 * 32 * 64 * 64, 9 * 16 * 32 + 32)
    assert count_layer(LayerSpec(CONV, 3, 8, 2, 5), 64, 64)[0] == 25 * 3 * 8 * 32 * 32
    assert count_layer(LayerSpec(PIXEL_SHUFFLE, 8, 4, 2), 10, 10) == (9 * 8 * 16 * 100, 9 * 8 * 16 + 16)
    assert count_layer(LayerSpec(TRANSPOSED, 8, 4, 2, 5), 10, 10)[0] == 25 * 8 * 4 * 100
    # RBU: two 3x3 convs at the upsampled resolution
    assert count_layer(LayerSpec(RBU, 8, 4, 2), 10, 10)[0] == 9 * 8 * 4 * 400 + 9 * 4 * 4 * 400
    # attention on 16 tokens of width 8 inside 4x4 windows, 64 positions
    qkv, scores, mix, proj, mlp = 3 * 64, 16 * 8, 16 * 8, 64, 2 * (2 * 8) * 8
    assert count_layer(LayerSpec(ATTENTION, 8, 8, 1, 1, 4, False, 2), 8, 8)[0] == 64 * (qkv + scores + mix + proj + mlp)


@pytest.mark.parametrize("variant", ["Symmetric", "AsymOurs", "Conv_k5"])
def test_module_totals_equal_instrumented(variant):
    model = Model(preset(variant), 0)
    for module in ("g_a", "g_s", "h_a", "h_s", "f_c"):
        static = sum(r.macs for r in module_records(model.config, module, 128, 64))
        assert static == measured_module_macs(model, module, 128, 64), module


@pytest.mark.parametrize("variant", ["Symmetric", "AsymOurs", "RBU", "TCM_pruned"])
def test_param_counts_match_model(variant):
    cfg = preset(variant)
    assert count_params(cfg) == Model(cfg, 0).param_count()


def test_report_serialization_and_checks():
    report = profile_model(preset("AsymOurs"), 128, 192, "decoder")
    data = json.loads(report.to_json())
    assert data["macs"] == report.macs == sum(v["macs"] for v in data["modules"].values())
    assert set(data["modules"]) == {"g_s", "h_s", "f_c"}
    assert "GMACs" in report.table()
    with pytest.raises(UsageError):
        profile_model(preset("AsymOurs"), 100, 64)
    with pytest.raises(UsageError):
        profile_model(preset("AsymOurs"), 64, 64, "both")


def test_macs_scale_with_area():
    cfg = preset("AsymOurs", "paper-replica")
    assert profile_model(cfg, 512, 768).macs == 4 * profile_model(cfg, 256, 384).macs


def _random_conv_stack(rng):
    specs, c = [], 3
    for _ in range(int(rng.integers(1, 5))):
        out = int(rng.integers(1, 4))
        specs.append(LayerSpec(CONV, c, out, int(rng.integers(1, 3)), int(rng.choice([1, 3, 5]))))
        c = out
    return specs


@pytest.mark.parametrize("seed", range(8))
def test_conv_rf_matches_gradient_mask_and_recursion(seed):
    rng = np.random.default_rng(seed)
    specs = _random_conv_stack(rng)
    net = Sequential(specs, "probe", rng)
    size = 48
    grad = gradient_receptive_field(net, 3, size, size, seed=seed)
    ana = analytic_receptive_field(specs, size, size)
    assert (grad.rows, grad.cols) == (ana.rows, ana.cols)
    # strided 1x1 layers leave holes, but nothing falls outside the bounding box
    assert not (grad.mask & ~ana.region(grad.mask.shape)).any()
    expected = conv_rf_recursion([(s.kernel, s.stride_or_scale) for s in specs])
    if ana.rows[0] > 0 and ana.rows[1] < size - 1:
        assert ana.height == expected


def test_transposed_stack_rf_exact():
    cfg = preset("Conv_k5")
    ana = receptive_field(cfg, "g_s", "analytic", 128, 128)
    grad = receptive_field(cfg, "g_s", "gradient-mask", 128, 128)
    assert (ana.rows, ana.cols) == (grad.rows, grad.cols)


def test_shifted_attention_widens_analytic_rf():
    cfg = preset("AsymOurs")
    plain = receptive_field(cfg, "g_s", "analytic", 256, 256)
    shifted = receptive_field(shifted_counterpart(cfg), "g_s", "analytic", 256, 256)
    assert plain.height <= shifted.height and plain.width <= shifted.width


def test_rf_position_checked():
    with pytest.raises(UsageError):
        analytic_receptive_field([LayerSpec(CONV, 3, 3, 1, 3)], 8, 8, (8, 0))
    with pytest.raises(UsageError):
        receptive_field(preset(), "f_c")


def test_reversed_pyramid_flattens_stage_macs():
    def spread(variant):
        stages = synthesis_stage_macs(preset(variant), 512, 768)
        return max(stages) / min(stages)

    assert spread("AsymOurs") <= 4 < spread("Symmetric")


@pytest.mark.parametrize("seed", [0, 1])
def test_asymmetric_rf_within_symmetric(seed):
    rf = {
        v: receptive_field(preset(v), "g_s", "gradient-mask", 256, 256, seed=seed)
        for v in ("AsymOurs", "Symmetric")
    }
    assert rf["AsymOurs"].height <= rf["Symmetric"].height
    assert rf["AsymOurs"].width <= rf["Symmetric"].width
