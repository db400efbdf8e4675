"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s``; the lines are also
repeated in the terminal summary of any run that includes this module.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from gradcheck import check, random_batch
from snoc.cnn import BASELINE, LIGHT, CnnModel, TrainingConfig, forward, serialize
from snoc.codec import (
    CodecConfig,
    bitrate_report,
    decode_sequence,
    encode_sequence,
    read_header,
)
from snoc.coder import TOTAL, decode_symbols, encode_symbols, ideal_codelength, quantize_pmfs
from snoc.core import load_voxelized_cloud
from snoc.octree import level_stack, upsample_candidates
from snoc.synthetic import blob_sequence, random_cloud, random_walk_surface, sphere_shell, tilted_plane

# Training for the compression runs. Desk-scale stores hold ~2e4 distinct
# contexts, so a batch of 1e4 gives two steps per epoch; smaller batches reach
# a useful model in far fewer epochs, and the cap stops the model from
# memorizing the five training frames (held-out frames get worse past ~300
# epochs on this sequence).
GAIN_TRAINING = TrainingConfig(batch_size=500, max_epochs=100)
# frozen after the first oracle run, which measured a 64% gain
MIN_GAIN = 0.50


def coded_blocks(cloud):
    total = 0
    for r, lvl in level_stack(cloud).items():
        if r < cloud.resolution_bits:
            cands = upsample_candidates(lvl)
            total += len(np.unique(cands.points // [2, 2, 1], axis=0))
    return total


# ---------------------------------------------------------------------------
# 1


def randomized_clouds(rng, count=200):
    """Random (r, density) pairs covering r = 3..7 and densities 0.1%..50%.

    Densities are log-uniform. At r = 7 they are capped at 5% except for one
    cloud at 50%, which alone is ~1e6 points and ~25 s to round-trip.
    """
    clouds = [random_cloud(3, 0.5, rng), random_cloud(3, 0.001, rng), random_cloud(7, 0.5, rng), random_cloud(7, 0.001, rng)]
    while len(clouds) < count:
        r = int(rng.integers(3, 8))
        hi = 0.05 if r == 7 else 0.5
        density = float(np.exp(rng.uniform(np.log(0.001), np.log(hi))))
        clouds.append(random_cloud(r, density, rng))
    return clouds


def structured_clouds(rng):
    return [
        sphere_shell(6, 20.0),
        sphere_shell(5, 7.0, thickness=3.0),
        tilted_plane(6),
        tilted_plane(5, normal=(0.0, 1.0, 0.2)),
        random_walk_surface(6, rng),
        random_walk_surface(5, rng, roughness=1.5),
    ]


def test_c1_lossless_round_trip(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    clouds = randomized_clouds(rng)
    structured = structured_clouds(rng)
    combos = [(p, preset, k) for p in (4, 1) for preset in ("baseline", "lm") for k in (1, 5)]
    chunks = np.array_split(np.arange(len(clouds)), len(combos))
    failures, checked = [], 0
    for (phases, preset, k), idx in zip(combos, chunks):
        frames = structured + [clouds[i] for i in idx]
        cfg = CodecConfig(train_frames=k, n_phases=phases, preset=preset, training=TrainingConfig(max_epochs=1))
        got = decode_sequence(encode_sequence(frames, cfg).data)
        checked += len(frames)
        failures += [(phases, preset, k, i) for i, (a, b) in enumerate(zip(got, frames)) if a != b]
    elapsed = time.perf_counter() - t0
    rs = sorted({c.resolution_bits for c in clouds})
    verdict(
        "C1 lossless round trip",
        not failures and elapsed < 300,
        f"{checked} frames ({len(clouds)} random, r in {rs}) over {len(combos)} configurations, "
        f"{len(failures)} mismatches, {elapsed:.0f} s (limit 300 s)",
    )


# ---------------------------------------------------------------------------
# 2


def test_c2_coder_near_ideal_length(verdict):
    rng = np.random.default_rng(1)
    n = 100_000
    p = rng.dirichlet(np.full(16, 0.4), size=n)
    freqs = quantize_pmfs(p)
    cum = np.cumsum(freqs, axis=1)
    symbols = (cum > rng.integers(0, TOTAL, size=(n, 1))).argmax(axis=1)
    t0 = time.perf_counter()
    data = encode_symbols(symbols, freqs)
    same = np.array_equal(decode_symbols(data, freqs), symbols)
    elapsed = time.perf_counter() - t0
    ideal = ideal_codelength(symbols, freqs)
    measured = 8 * len(data)
    bound = ideal * 1.001 + 32
    verdict(
        "C2 coder optimality",
        same and measured <= bound,
        f"{measured} bits vs ideal {ideal:.1f} (bound {bound:.1f}), round trip {'exact' if same else 'BROKEN'}, {elapsed:.1f} s",
    )


# ---------------------------------------------------------------------------
# 3


def test_c3_gradient_matches_finite_differences(verdict):
    rng = np.random.default_rng(3)
    ctx, counts = random_batch(rng, 16)
    # nonzero biases and weights so every layer carries signal
    weights = rng.normal(0, 0.3, BASELINE.parameter_count)
    errors, skipped = check(BASELINE, weights, ctx, counts, 120, rng, step=1e-3)
    verdict(
        "C3 gradient correctness",
        len(errors) >= 100 and errors.max() < 1e-3,
        f"{len(errors)} weights, max relative error {errors.max():.2e} (limit 1e-3), "
        f"{skipped} draws skipped for crossing a LeakyReLU kink",
    )


# ---------------------------------------------------------------------------
# 4


def test_c4_receptive_field(verdict):
    rng = np.random.default_rng(4)
    outside_changed = inside_unchanged = 0
    outside_total = 0
    for trial in range(50):
        W, H = 2 * rng.integers(3, 7, size=2)
        stack = rng.integers(0, 2, size=(4, W, H)).astype(np.uint8)
        stack[2] = rng.integers(0, 4, size=(W, H))
        m, n = int(rng.integers(0, W // 2)), int(rng.integers(0, H // 2))
        model = CnnModel(BASELINE, rng.normal(0, 0.3, BASELINE.parameter_count))
        ref = forward(model, stack)[:, m, n]
        inside_moved = False
        for c in range(4):
            for i in range(W):
                for j in range(H):
                    pert = stack.copy()
                    pert[c, i, j] = (pert[c, i, j] + 1) % (4 if c == 2 else 2)
                    out = forward(model, pert)[:, m, n]
                    inside = 2 * m - 2 <= i <= 2 * m + 3 and 2 * n - 2 <= j <= 2 * n + 3
                    if inside:
                        inside_moved |= not np.array_equal(out, ref)
                    else:
                        outside_total += 1
                        outside_changed += not np.array_equal(out, ref)
        inside_unchanged += not inside_moved
    verdict(
        "C4 receptive field",
        outside_changed == 0 and inside_unchanged == 0,
        f"50 stacks: {outside_changed}/{outside_total} outside perturbations changed the pmf, "
        f"{inside_unchanged} stacks insensitive to every inside pixel",
    )


# ---------------------------------------------------------------------------
# 5, 6, 8 share one synthetic sequence


@pytest.fixture(scope="module")
def blob_runs():
    frames = blob_sequence(20, r=6, seed=0, size=1.5)
    runs = {}
    for phases in (4, 1):
        t0 = time.perf_counter()
        enc = encode_sequence(frames, CodecConfig(train_frames=5, n_phases=phases, training=GAIN_TRAINING))
        runs[phases] = (enc, time.perf_counter() - t0)
    return frames, runs


def test_c5_compression_gain(verdict, blob_runs):
    frames, runs = blob_runs
    enc, elapsed = runs[4]
    total = 8 * len(enc.data)
    uniform = 4 * sum(coded_blocks(f) for f in frames)
    gain = 1 - total / uniform
    avg = bitrate_report(enc.data, frames).average_bpp
    verdict(
        "C5 compression gain",
        total < uniform and gain >= MIN_GAIN and elapsed < 600,
        f"{total} bits incl. model vs {uniform} uniform, gain {gain:.1%} (threshold {MIN_GAIN:.0%}), "
        f"{avg:.3f} bpp, {elapsed:.0f} s (limit 600 s)",
    )


def test_c6_four_phases_beat_single_phase(verdict, blob_runs):
    _, runs = blob_runs
    four, single = 8 * len(runs[4][0].data), 8 * len(runs[1][0].data)
    verdict(
        "C6 phase benefit",
        four <= single,
        f"4-phase {four} bits vs single-phase {single} bits ({1 - four / single:+.2%})",
    )


# ---------------------------------------------------------------------------
# 7


def test_c7_model_accounting(verdict):
    count = BASELINE.parameter_count
    blob = serialize(CnnModel(BASELINE, np.zeros(count, dtype=np.float32)))
    ratio = LIGHT.parameter_count / count
    verdict(
        "C7 model accounting",
        13_000 <= count <= 16_000 and len(blob) == 4 * count and 0.25 <= ratio <= 0.40,
        f"{count} parameters, {len(blob)} byte weight blob, light preset {LIGHT.parameter_count} ({ratio:.2f}x)",
    )


# ---------------------------------------------------------------------------
# 8


def test_c8_accounting_identity(verdict, blob_runs):
    frames, runs = blob_runs
    mismatches = []
    for phases, (enc, _) in runs.items():
        rep = bitrate_report(enc.data, frames)
        if sum(rep.frame_bits) + rep.model_bits + rep.framing_bits != 8 * len(enc.data):
            mismatches.append(phases)
    small = blob_sequence(3, r=5, seed=9)
    enc = encode_sequence(small, CodecConfig(preset="lm", training=TrainingConfig(max_epochs=2)))
    rep = bitrate_report(enc.data, small)
    if rep.total_bits != 8 * len(enc.data):
        mismatches.append("lm")
    verdict(
        "C8 accounting identity",
        not mismatches,
        f"frame + model + framing bits equal file size for 3 files; mismatches: {mismatches or 'none'}",
    )


# ---------------------------------------------------------------------------
# 9


def test_c9_determinism(verdict):
    frames = blob_sequence(6, r=5, seed=5, size=1.3)
    cfg = CodecConfig(preset="lm", seed=11, training=TrainingConfig(batch_size=500, max_epochs=10))
    a = encode_sequence(frames, cfg).data
    b = encode_sequence(frames, cfg).data
    cfg2 = CodecConfig(preset="lm", seed=11, threads=2, training=cfg.training)
    c = encode_sequence(frames, cfg2).data
    d = encode_sequence(frames, cfg2).data
    dec1 = decode_sequence(a, threads=1)
    dec2 = decode_sequence(a, threads=2)
    ok = a == b and c == d and dec1 == dec2 == frames
    verdict(
        "C9 determinism",
        ok,
        f"repeat encode identical: {a == b} (1 worker), {c == d} (2 workers); "
        f"decode equal across worker counts: {dec1 == dec2}",
    )


# ---------------------------------------------------------------------------
# 10 (optional)

DATASET_ENV = "SNOC_DATASET"


@pytest.mark.skipif(not os.environ.get(DATASET_ENV), reason=f"set {DATASET_ENV} to a directory of voxelized .ply frames")
def test_c10_real_sequence_smoke(verdict):
    paths = sorted(Path(os.environ[DATASET_ENV]).glob("*.ply"))[:10]
    frames = [load_voxelized_cloud(p) for p in paths]
    enc = encode_sequence(frames, CodecConfig(training=TrainingConfig(max_epochs=200)))
    avg = bitrate_report(enc.data, frames).average_bpp
    assert read_header(enc.data).frame_count == len(frames)
    verdict("C10 real sequence smoke run", 0.5 <= avg <= 2.0, f"{len(frames)} frames, {avg:.3f} bpp (bracket 0.5-2.0)")
