"""Sequence codec: collect contexts, train, then code every frame independently.

Bitstream layout (all integers little-endian)::

    "SNOC" | u8 version | u8 flags | u8 sweep axis | u32 frame count F
    architecture block: u8 n_stages, then n x (u8 kernel, u8 stride, u16 channels)
    weights: 4 bytes (float32) per parameter
    offset table: F x u64 absolute offset of each frame record
    frame record: u32 payload length | u8 resolution bits | u8 frame flags | payload

    header flags bit 0: single-phase coding
    frame flags bit 0: empty frame (payload length 0)

A frame payload is the 64-bit base level (bit ``x*16 + y*4 + z``) followed by
one range-coded stream covering every resolution, section and phase.
"""

from __future__ import annotations

import logging
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field, replace

import numpy as np

from . import cnn
from .cnn import CnnArchitecture, CnnModel, TrainingConfig
from .coder import RangeDecoder, RangeEncoder, TruncatedStreamError, quantize_pmfs, TOTAL
from .context import (
    PlaneIndex,
    build_input_stack,
    candidate_blocks,
    choose_sweep_axis,
    collect_training_set,
    extract_contexts,
    frame_box,
    from_sweep_frame,
    iter_level_blocks,
    mixing_image,
    patterns_to_blocks,
    phase_blocks,
    scan_order,
    to_sweep_frame,
)
from .core import VoxelPointCloud
from .octree import (
    BASE_RESOLUTION,
    base_level_to_bits,
    bits_to_base_level,
    level_stack,
    upsample_candidates,
)

logger = logging.getLogger(__name__)

MAGIC = b"SNOC"
VERSION = 1
FLAG_SINGLE_PHASE = 0x01
FRAME_EMPTY = 0x01

_FIXED_HEADER = struct.Struct("<4sBBBI")
_RECORD = struct.Struct("<IBB")
RECORD_HEADER_BYTES = _RECORD.size


class BitstreamError(ValueError):
    """Malformed sequence file."""


class CorruptStreamError(ValueError):
    """Decoded data contradicts what the decoder already knows."""


def _blas_single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=1, user_api="blas")


def _pmfs(model: CnnModel, contexts: np.ndarray) -> np.ndarray:
    return quantize_pmfs(cnn.forward_contexts(model, contexts))


# ---------------------------------------------------------------------------
# frames


def encode_frame(
    cloud: VoxelPointCloud,
    model: CnnModel,
    n_phases: int = 4,
    trace: list | None = None,
    level_bits: dict | None = None,
) -> bytes:
    """Payload for one (sweep-oriented, non-empty) frame.

    ``trace`` collects ``(r, z0, phase, contexts, freqs)`` per coded batch;
    ``level_bits`` accumulates ideal codelength per resolution.
    """
    if cloud.resolution_bits < BASE_RESOLUTION:
        raise ValueError("frames need at least 2 bits of resolution")
    levels = level_stack(cloud)
    head = struct.pack("<Q", base_level_to_bits(levels[BASE_RESOLUTION]))
    enc = RangeEncoder()
    with _blas_single_thread():
        for r in range(BASE_RESOLUTION + 1, cloud.resolution_bits + 1):
            for batch in iter_level_blocks(levels[r], levels[r - 1], n_phases):
                freqs = _pmfs(model, batch.contexts)
                enc.encode_symbols(batch.patterns, freqs)
                if trace is not None:
                    trace.append((r, batch.z0, batch.phase, batch.contexts, freqs))
                if level_bits is not None:
                    f = freqs[np.arange(len(freqs)), batch.patterns]
                    level_bits[r] = level_bits.get(r, 0.0) - float(np.log2(f / TOTAL).sum())
    return head + enc.finish()


def decode_frame(
    payload: bytes,
    model: CnnModel,
    n_phases: int,
    r_max: int,
    trace: list | None = None,
) -> VoxelPointCloud:
    """Rebuild a frame (in sweep orientation) from its payload."""
    if len(payload) < 8:
        raise TruncatedStreamError(f"frame payload of {len(payload)} bytes lacks the base level")
    (word,) = struct.unpack_from("<Q", payload)
    parent = bits_to_base_level(word)
    dec = RangeDecoder(payload[8:])
    with _blas_single_thread():
        for r in range(BASE_RESOLUTION + 1, r_max + 1):
            parent = _decode_level(dec, parent, model, n_phases, trace)
    return parent


def _decode_level(dec, parent, model, n_phases, trace):
    r = parent.resolution_bits + 1
    cands = upsample_candidates(parent)
    if len(cands) == 0:
        return VoxelPointCloud.empty(r)
    box = frame_box(cands)
    Wb, Hb = box.block_shape
    cand = PlaneIndex(cands.points, box)
    zero = np.zeros(box.shape, dtype=bool)
    decoded: dict[int, np.ndarray] = {}
    found = []
    for z0 in cand.planes.tolist():
        c = cand.image(z0)
        c_next = cand.image(z0 + 1)
        o1 = decoded.get(z0 - 1, zero)
        o2 = decoded.get(z0 - 2, zero)
        cblk = candidate_blocks(c)
        c_view = c.reshape(Wb, 2, Hb, 2)
        rec = np.zeros(box.shape, dtype=bool)
        rec_view = rec.reshape(Wb, 2, Hb, 2)
        for phase in range(1, n_phases + 1):
            sel = cblk & phase_blocks(phase, box.block_shape, n_phases)
            if not sel.any():
                continue
            stack = build_input_stack(o2, o1, mixing_image(c, rec, phase, n_phases), c_next)
            m, n = scan_order(sel)
            ctx = extract_contexts(stack, m, n)
            freqs = _pmfs(model, ctx)
            q = dec.decode_symbols(freqs)
            if trace is not None:
                trace.append((r, z0, phase, ctx, freqs))
            blocks = patterns_to_blocks(q)
            if (blocks & ~c_view[m, :, n, :]).any():
                raise CorruptStreamError(f"r={r} z={z0}: decoded voxel outside the candidates")
            rec_view[m, :, n, :] = blocks
        decoded.pop(z0 - 2, None)
        decoded[z0] = rec
        i, j = np.nonzero(rec)
        if i.size:
            found.append(np.stack([i + box.x0, j + box.y0, np.full_like(i, z0)], axis=1))
    pts = np.concatenate(found) if found else np.zeros((0, 3), dtype=np.int64)
    return VoxelPointCloud(r, pts)


# ---------------------------------------------------------------------------
# sequences


@dataclass
class CodecConfig:
    train_frames: int = 5
    n_phases: int = 4
    preset: str = "baseline"
    training: TrainingConfig = field(default_factory=TrainingConfig)
    seed: int = 0
    collect_all_phases: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.n_phases not in (1, 4):
            raise ValueError("n_phases must be 1 or 4")
        if self.preset not in cnn.PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(cnn.PRESETS)}")
        if self.train_frames < 1:
            raise ValueError("at least one training frame is required")

    @property
    def architecture(self) -> CnnArchitecture:
        return cnn.PRESETS[self.preset]


@dataclass
class SequenceHeader:
    version: int
    n_phases: int
    sweep_axis: int
    frame_count: int
    model: CnnModel
    offsets: list[int]
    header_size: int

    @property
    def architecture(self) -> CnnArchitecture:
        return self.model.architecture


@dataclass
class FrameRecord:
    resolution_bits: int
    empty: bool
    payload: bytes


@dataclass
class EncodedSequence:
    data: bytes
    model: CnnModel
    sweep_axis: int
    training_frames: list[int]
    store_size: int
    collect_seconds: float
    train_seconds: float
    encode_seconds: float
    level_bits: list[dict]

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.data)


def training_frame_indices(frame_count: int, k: int) -> list[int]:
    """Equidistant ``floor(i * F / K)``; duplicates (K > F) collapse."""
    return sorted({i * frame_count // k for i in range(k)})


def write_bitstream(
    model: CnnModel, n_phases: int, sweep_axis: int, records: list[FrameRecord]
) -> bytes:
    flags = FLAG_SINGLE_PHASE if n_phases == 1 else 0
    head = (
        _FIXED_HEADER.pack(MAGIC, VERSION, flags, sweep_axis, len(records))
        + model.architecture.to_bytes()
        + cnn.serialize(model)
    )
    offsets, pos = [], len(head) + 8 * len(records)
    for rec in records:
        offsets.append(pos)
        pos += _RECORD.size + len(rec.payload)
    parts = [head, struct.pack(f"<{len(records)}Q", *offsets)]
    for rec in records:
        parts.append(_RECORD.pack(len(rec.payload), rec.resolution_bits, FRAME_EMPTY if rec.empty else 0))
        parts.append(rec.payload)
    return b"".join(parts)


def read_header(data: bytes) -> SequenceHeader:
    if len(data) < _FIXED_HEADER.size:
        raise BitstreamError("file too short for a sequence header")
    magic, version, flags, axis, count = _FIXED_HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BitstreamError(f"unsupported version {version}")
    if axis > 2:
        raise BitstreamError(f"bad sweep axis {axis}")
    try:
        arch, pos = CnnArchitecture.from_bytes(data, _FIXED_HEADER.size)
    except (struct.error, ValueError) as exc:
        raise BitstreamError(f"bad architecture block: {exc}") from None
    nbytes = 4 * arch.parameter_count
    if pos + nbytes + 8 * count > len(data):
        raise BitstreamError("file truncated inside the header")
    model = cnn.deserialize(data[pos : pos + nbytes], arch)
    pos += nbytes
    offsets = list(struct.unpack_from(f"<{count}Q", data, pos))
    pos += 8 * count
    return SequenceHeader(version, 1 if flags & FLAG_SINGLE_PHASE else 4, axis, count, model, offsets, pos)


def read_frame_record(data: bytes, header: SequenceHeader, index: int) -> FrameRecord:
    if not 0 <= index < header.frame_count:
        raise IndexError(f"frame {index} out of range for {header.frame_count} frames")
    off = header.offsets[index]
    if off < header.header_size or off + _RECORD.size > len(data):
        raise BitstreamError(f"frame {index}: offset {off} out of bounds")
    length, r, flags = _RECORD.unpack_from(data, off)
    start = off + _RECORD.size
    if start + length > len(data):
        raise BitstreamError(f"frame {index}: payload runs past end of file")
    return FrameRecord(r, bool(flags & FRAME_EMPTY), data[start : start + length])


def _encode_job(args):
    cloud, model, n_phases = args
    level_bits: dict = {}
    payload = encode_frame(cloud, model, n_phases, level_bits=level_bits)
    return payload, level_bits


def _map(fn, jobs, threads: int):
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def encode_sequence(frames, cfg: CodecConfig | None = None) -> EncodedSequence:
    """Collect contexts from equidistant frames, train, then code every frame."""
    cfg = cfg or CodecConfig()
    frames = list(frames)
    if not frames:
        raise ValueError("cannot encode an empty sequence")
    nonempty = [f for f in frames if len(f)]
    axis = choose_sweep_axis(nonempty[0]) if nonempty else 2
    swept = [to_sweep_frame(f, axis) for f in frames]

    t0 = time.perf_counter()
    idx = training_frame_indices(len(frames), cfg.train_frames)
    store = collect_training_set(
        [swept[i] for i in idx], cfg.n_phases, all_phases=cfg.collect_all_phases
    )
    t1 = time.perf_counter()
    if len(store):
        tcfg = replace(cfg.training, seed=cfg.seed)
        model = cnn.train(store, tcfg, cfg.architecture)
    else:
        # nothing above the base level to learn from
        model = cnn.zero_model(cfg.architecture)
    model = cnn.deserialize(cnn.serialize(model), cfg.architecture)
    t2 = time.perf_counter()

    jobs = [(f, model, cfg.n_phases) for f in swept if len(f)]
    results = iter(_map(_encode_job, jobs, cfg.threads))
    records, level_bits = [], []
    for f in swept:
        if len(f):
            payload, bits = next(results)
            records.append(FrameRecord(f.resolution_bits, False, payload))
            level_bits.append(bits)
        else:
            records.append(FrameRecord(f.resolution_bits, True, b""))
            level_bits.append({})
    data = write_bitstream(model, cfg.n_phases, axis, records)
    t3 = time.perf_counter()
    logger.info(
        "encoded %d frames: collect %.2fs, train %.2fs, code %.2fs", len(frames), t1 - t0, t2 - t1, t3 - t2
    )
    return EncodedSequence(data, model, axis, idx, len(store), t1 - t0, t2 - t1, t3 - t2, level_bits)


def _decode_record(args):
    rec, model, n_phases, axis = args
    if rec.empty:
        return VoxelPointCloud.empty(rec.resolution_bits)
    cloud = decode_frame(rec.payload, model, n_phases, rec.resolution_bits)
    return from_sweep_frame(cloud, axis)


def decode_sequence_frame(data: bytes, index: int) -> VoxelPointCloud:
    """Decode a single frame through the offset table."""
    header = read_header(data)
    rec = read_frame_record(data, header, index)
    return _decode_record((rec, header.model, header.n_phases, header.sweep_axis))


def decode_sequence(data: bytes, threads: int = 1) -> list[VoxelPointCloud]:
    header = read_header(data)
    jobs = [
        (read_frame_record(data, header, i), header.model, header.n_phases, header.sweep_axis)
        for i in range(header.frame_count)
    ]
    return _map(_decode_record, jobs, threads)


# ---------------------------------------------------------------------------
# accounting


@dataclass
class BitrateReport:
    frame_bits: list[int]
    model_bits: int
    framing_bits: int
    points: list[int]

    @property
    def frame_count(self) -> int:
        return len(self.frame_bits)

    @property
    def bpp(self) -> list[float]:
        """Per frame ``(CL_f + CL_m / F) / n_points``."""
        F = self.frame_count
        return [(cl + self.model_bits / F) / n for cl, n in zip(self.frame_bits, self.points)]

    @property
    def average_bpp(self) -> float:
        return float(np.mean(self.bpp))

    @property
    def total_bits(self) -> int:
        return sum(self.frame_bits) + self.model_bits + self.framing_bits


def frame_bpp(frame_bits: float, model_bits: float, frame_count: int, points: int) -> float:
    if points <= 0:
        raise ValueError("bits per point is undefined for an empty frame")
    return (frame_bits + model_bits / frame_count) / points


def bitrate_report(data: bytes, frames=None) -> BitrateReport:
    """Split the file into frame payloads, model weights and framing.

    Point counts come from ``frames`` when given, otherwise from decoding.
    """
    header = read_header(data)
    if frames is None:
        frames = decode_sequence(data)
    if len(frames) != header.frame_count:
        raise ValueError(f"{len(frames)} frames given for a {header.frame_count}-frame file")
    points = [len(f) for f in frames]
    if any(n == 0 for n in points):
        raise ValueError("bits per point is undefined for an empty frame")
    frame_bits = [8 * len(read_frame_record(data, header, i).payload) for i in range(header.frame_count)]
    model_bits = 32 * header.architecture.parameter_count
    F = header.frame_count
    framing = 8 * (
        _FIXED_HEADER.size + len(header.architecture.to_bytes()) + 8 * F + _RECORD.size * F
    )
    return BitrateReport(frame_bits, model_bits, framing, points)
