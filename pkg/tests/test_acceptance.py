"""Release acceptance checks, one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest

from asymcodec import rangecoder
from asymcodec.codec import decode_latents, decompress, encode
from asymcodec.config import (
    ATTENTION,
    CONV,
    PIXEL_SHUFFLE,
    RBU,
    RESIDUAL,
    DECODER_VARIANTS,
    TRANSPOSED,
    LayerSpec,
    preset,
)
from asymcodec.evaluation import evaluate_images, slice_ablation
from asymcodec.layers import Sequential
from asymcodec.metrics import RDCurve, bd_rate
from asymcodec.profiler import (
    analytic_receptive_field,
    count_layer,
    gradient_receptive_field,
    measured_layer_macs,
    module_records,
    profile_model,
    shifted_counterpart,
)
from asymcodec.training import S1, S2, StagePlan, assemble_asymmetric, run_stage

import gradcheck
from fuzz import ideal_bits, random_table, sample_symbols
from oracles import bd_rate_fine_grid

pytestmark = pytest.mark.slow

STAGE_STEPS = 200


def report(capsys, name: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def coder_cases():
    """50 table sets with 20k symbols each (10^6 in total)."""
    rng = np.random.default_rng(2024)
    cases = []
    for _ in range(50):
        tables = [random_table(rng) for _ in range(int(rng.integers(1, 9)))]
        cases.append(sample_symbols(rng, tables, 20_000))
    return cases


def test_c01_range_coder_round_trip(coder_cases, capsys):
    total = failures = 0
    enc_time = dec_time = 0.0
    for symbols, tables in coder_cases:
        t = time.perf_counter()
        payload = rangecoder.encode(symbols, tables)
        enc_time += time.perf_counter() - t
        t = time.perf_counter()
        back = rangecoder.decode(payload, tables)
        dec_time += time.perf_counter() - t
        failures += back != symbols
        total += len(symbols)
    enc_rate, dec_rate = total / enc_time, total / dec_time
    ok = total == 10**6 and failures == 0 and min(enc_rate, dec_rate) >= 1e5
    report(capsys, "range-coder round trip", ok,
           f"{total} symbols, {failures} failures, encode {enc_rate:,.0f} sym/s, decode {dec_rate:,.0f} sym/s")


def test_c02_rate_fidelity(coder_cases, capsys):
    worst, overhead = -np.inf, 0.0
    for symbols, tables in coder_cases:
        assert len(symbols) >= 10**4
        ideal = ideal_bits(symbols, tables)
        actual = 8 * len(rangecoder.encode(symbols, tables))
        worst = max(worst, abs(actual - ideal) - (0.02 * ideal + 64))
        overhead = max(overhead, (actual - ideal) / ideal)
    report(capsys, "rate fidelity", worst <= 0,
           f"{len(coder_cases)} cases, largest overhead {100 * overhead:.3f}%, worst slack to the bound {worst:+.1f} bits")


def test_c03_gradient_suite(capsys):
    start = time.perf_counter()
    errors = {op: gradcheck.run_op(op) for op in gradcheck.OPS}
    seconds = time.perf_counter() - start
    worst_op = max(errors, key=errors.get)
    ok = errors[worst_op] < gradcheck.TOLERANCE and seconds < 60
    report(capsys, "gradient suite", ok,
           f"{len(errors)} ops x {gradcheck.SHAPES_PER_OP} shapes, worst {worst_op} {errors[worst_op]:.2e}, {seconds:.1f} s")


def test_c06_toy_rd_training(toy_s0, heldout_images, capsys):
    first = next(r for r in toy_s0.log if r["step"] == 50)["loss_ema"]
    last = toy_s0.log[-1]["loss_ema"]
    before = evaluate_images(toy_s0.untrained, heldout_images)
    after = evaluate_images(toy_s0.model, heldout_images)
    gain = after.mean_psnr - before.mean_psnr
    loss_ok = last < 0.5 * first
    psnr_ok = gain >= 10.0 and after.mean_bpp <= 1.1 * before.mean_bpp
    time_ok = toy_s0.seconds <= 15 * 60
    report(capsys, "toy RD training", loss_ok and psnr_ok and time_ok,
           f"smoothed loss {first:.1f} -> {last:.2f}; PSNR {before.mean_psnr:.2f} -> {after.mean_psnr:.2f} dB "
           f"at {before.mean_bpp:.4f} -> {after.mean_bpp:.4f} bpp; {toy_s0.seconds:.0f} s")


@pytest.fixture(scope="module")
def stage_models(toy_s0, train_images):
    target = preset("AsymOurs")
    s1, s2 = toy_s0.model.copy(), toy_s0.model.copy()
    run_stage(s1, StagePlan.for_stage(S1), train_images, toy_s0.config, target=target, steps=STAGE_STEPS)
    run_stage(s2, StagePlan.for_stage(S2), train_images, toy_s0.config, target=target, steps=STAGE_STEPS)
    return s1, s2


def test_c04_stage1_bitstream_invariance(toy_s0, stage_models, heldout_images, capsys):
    s0, s1 = toy_s0.model, stage_models[0]
    frozen = ("g_a", "h_a", "h_s", "f_c")
    identical = psnr_changed = 0
    for image in heldout_images:
        a, b = encode(image, s0), encode(image, s1)
        identical += a.bitstream.to_bytes() == b.bitstream.to_bytes()
        psnr_changed += not np.array_equal(decompress(a.bitstream, s0), decompress(b.bitstream, s1))
    hashes = s0.digest(frozen) == s1.digest(frozen)
    psnr_before = evaluate_images(s0, heldout_images).mean_psnr
    psnr_after = evaluate_images(s1, heldout_images).mean_psnr
    ok = identical == len(heldout_images) == 10 and psnr_before != psnr_after and psnr_changed > 0 and hashes
    report(capsys, "stage-1 bitstream invariance", ok,
           f"{identical}/{len(heldout_images)} streams identical, PSNR {psnr_before:.3f} -> {psnr_after:.3f} dB, "
           f"frozen hashes {'equal' if hashes else 'differ'}")


def test_c05_stage2_frozen_invariance(toy_s0, stage_models, heldout_images, capsys):
    s0 = toy_s0.model
    s1, s2 = stage_models
    kept = s0.digest(("g_a",)) == s2.digest(("g_a",)) and s0.digest(("g_s",)) == s2.digest(("g_s",))
    final = assemble_asymmetric(s1, s2)
    lossless = 0
    for image in heldout_images:
        res = encode(image, final)
        y_hat, z_hat = decode_latents(res.bitstream, final)
        same = np.array_equal(y_hat.data, res.y_hat.data) and np.array_equal(z_hat.data, res.z_hat.data)
        same = same and np.array_equal(decompress(res.bitstream.to_bytes(), final), res.reconstruction)
        lossless += same
    ok = kept and lossless == len(heldout_images)
    report(capsys, "stage-2 frozen invariance", ok,
           f"g_a/g_s hashes {'equal' if kept else 'differ'}; {lossless}/{len(heldout_images)} assembled round trips exact")


def test_c07_context_slice_ordering(toy_s0, train_images, heldout_images, capsys):
    bpp = slice_ablation(toy_s0.model, train_images, heldout_images, (1, 2, 5), (0, 1, 2), STAGE_STEPS, toy_s0.config)
    mean = {s: float(np.mean(v)) for s, v in bpp.items()}
    ok = mean[5] <= mean[2] <= mean[1]
    per_seed = "; ".join(f"S={s}: " + ", ".join(f"{v:.4f}" for v in bpp[s]) for s in (1, 2, 5))
    report(capsys, "context-slice ordering", ok,
           f"mean bpp S=5 {mean[5]:.4f} <= S=2 {mean[2]:.4f} <= S=1 {mean[1]:.4f} ({per_seed})")


PROFILE_LAYERS = [
    LayerSpec(CONV, 6, 5, 1, 3),
    LayerSpec(CONV, 4, 9, 1, 3),
    LayerSpec(CONV, 4, 9, 2, 5),
    LayerSpec(CONV, 4, 9, 1, 1),
    LayerSpec(RESIDUAL, 6, 6),
    LayerSpec(RBU, 6, 4, 2),
    LayerSpec(PIXEL_SHUFFLE, 6, 4, 2),
    LayerSpec(TRANSPOSED, 6, 4, 2, 5),
    LayerSpec(ATTENTION, 8, 8, 1, 1, 4, False, 2),
    LayerSpec(ATTENTION, 8, 8, 1, 1, 4, True, 2),
]


def test_c08_profiler_exactness(capsys):
    mismatched = [s.kind for s in PROFILE_LAYERS if count_layer(s, 16, 12)[0] != measured_layer_macs(s, 16, 12)]
    g_s = {v: sum(r.macs for r in module_records(preset(v, "paper-replica"), "g_s", 512, 768)) for v in DECODER_VARIANTS}
    order = sorted(g_s, key=g_s.get)
    cfg = preset("AsymOurs", "paper-replica")
    dec = profile_model(cfg, 512, 768, "decoder").macs
    enc = profile_model(cfg, 512, 768, "encoder").macs
    ok = not mismatched and order == ["Conv_k5", "AsymOurs", "RBU", "TCM_pruned"] and dec < enc
    listing = ", ".join(f"{v} {g_s[v] / 1e9:.2f}" for v in order)
    report(capsys, "profiler exactness", ok,
           f"{len(PROFILE_LAYERS) - len(mismatched)}/{len(PROFILE_LAYERS)} layer kinds exact; g_s GMACs {listing}; "
           f"AsymOurs decoder {dec / 1e9:.2f} < encoder {enc / 1e9:.2f} GMACs")


def _random_curve(rng, lo):
    n = int(rng.integers(4, 7))
    psnr = np.linspace(lo, lo + 8, n) + rng.uniform(-0.3, 0.3, n)
    bpp = np.cumsum(rng.uniform(0.05, 0.5, n))
    return RDCurve.from_arrays(bpp, psnr)


def test_c09_bd_rate(capsys):
    rng = np.random.default_rng(9)
    base = _random_curve(rng, 28)
    zero = bd_rate(base, base)
    doubled = bd_rate(base, RDCurve.from_arrays(base.bpp * 2, base.psnr))
    worst = 0.0
    for _ in range(100):
        a, t = _random_curve(rng, 28), _random_curve(rng, 28 + rng.uniform(-3, 3))
        got = bd_rate(a, t)
        want = bd_rate_fine_grid(list(zip(a.bpp, a.psnr)), list(zip(t.bpp, t.psnr)))
        worst = max(worst, abs(got - want))
    ok = zero == 0.0 and abs(doubled - 100.0) <= 1e-6 and worst <= 0.05
    report(capsys, "BD-rate", ok,
           f"identical {zero}, x2 rate {doubled:.9f}%, worst oracle gap over 100 trials {worst:.2e} pp")


def test_c10_receptive_field(capsys):
    rng = np.random.default_rng(10)
    exact = 0
    stacks = []
    for _ in range(10):
        specs, c = [], 3
        for _ in range(int(rng.integers(1, 6))):
            out = int(rng.integers(1, 4))
            specs.append(LayerSpec(CONV, c, out, int(rng.integers(1, 3)), int(rng.choice([1, 3, 5]))))
            c = out
        stacks.append(specs)
    stacks.append(list(preset("Conv_k5").g_s))
    for i, specs in enumerate(stacks):
        cin = specs[0].in_channels
        size = 8 if specs[0].kind == TRANSPOSED else 64
        net = Sequential(specs, "probe", np.random.default_rng(i))
        g = gradient_receptive_field(net, cin, size, size, seed=i)
        a = analytic_receptive_field(specs, size, size)
        exact += (g.rows, g.cols) == (a.rows, a.cols)

    plain = list(preset("AsymOurs").g_s)
    shifted = list(shifted_counterpart(preset("AsymOurs")).g_s)
    m = preset("AsymOurs").latent_channels
    never_larger = 0
    for seed in range(10):
        rf_plain = gradient_receptive_field(Sequential(plain, "g_s", np.random.default_rng(seed)), m, 16, 16, seed=seed)
        rf_shift = gradient_receptive_field(Sequential(shifted, "g_s", np.random.default_rng(seed)), m, 16, 16, seed=seed)
        # the unshifted mask must sit inside the shifted one, not merely be smaller
        inside = not np.any(rf_plain.mask & ~rf_shift.mask)
        never_larger += inside and rf_plain.height <= rf_shift.height and rf_plain.width <= rf_shift.width
    ok = exact == len(stacks) and never_larger == 10
    report(capsys, "receptive field", ok,
           f"{exact}/{len(stacks)} conv stacks exact; shift removal never enlarged the RF in {never_larger}/10 draws")
