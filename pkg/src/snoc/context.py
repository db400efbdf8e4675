"""Section images, phase selectors, mixing images, input stacks and contexts.

Images are indexed ``img[i, j]`` with ``i = x - box.x0`` and ``j = y - box.y0``
so the 2x2 block ``(m, n)`` covers ``i in {2m, 2m+1}``, ``j in {2n, 2n+1}``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import VoxelPointCloud
from .octree import downsample, upsample_candidates

AXIS_NAMES = ("X", "Y", "Z")

CONTEXT_SHAPE = (4, 6, 6)
CONTEXT_PAD = 2
N_PATTERNS = 16


# ---------------------------------------------------------------------------
# sweep axis


def choose_sweep_axis(first_frame: VoxelPointCloud) -> int:
    """Index (0=X, 1=Y, 2=Z) of the shortest bounding-box extent; ties go to the lower index."""
    if len(first_frame) == 0:
        raise ValueError("cannot choose a sweep axis from an empty cloud")
    pts = first_frame.points
    extents = pts.max(axis=0) - pts.min(axis=0)
    return int(np.argmin(extents))


def sweep_order(axis: int) -> tuple[int, int, int]:
    """Axis permutation moving ``axis`` to z. It is its own inverse."""
    order = [0, 1, 2]
    order[axis], order[2] = order[2], order[axis]
    return tuple(order)


def to_sweep_frame(cloud: VoxelPointCloud, axis: int) -> VoxelPointCloud:
    if axis == 2:
        return cloud
    return cloud.permute_axes(sweep_order(axis))


from_sweep_frame = to_sweep_frame


# ---------------------------------------------------------------------------
# frame box and section images


@dataclass(frozen=True)
class FrameBox:
    """Even-aligned x/y window shared by every section of one resolution."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.x0 % 2 or self.y0 % 2 or self.width % 2 or self.height % 2:
            raise ValueError(f"frame box must be even-aligned: {self}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def block_shape(self) -> tuple[int, int]:
        return (self.width // 2, self.height // 2)


def frame_box(candidates: VoxelPointCloud) -> FrameBox:
    """Bounding box of the candidate cloud in x/y, widened to even bounds."""
    if len(candidates) == 0:
        raise ValueError("empty candidate cloud has no frame box")
    lo = candidates.points[:, :2].min(axis=0) & ~1
    hi = (candidates.points[:, :2].max(axis=0) | 1) + 1
    return FrameBox(int(lo[0]), int(lo[1]), int(hi[0] - lo[0]), int(hi[1] - lo[1]))


class PlaneIndex:
    """Points of one cloud grouped by z, rasterized on demand inside a box."""

    def __init__(self, points: np.ndarray, box: FrameBox):
        self.box = box
        order = np.argsort(points[:, 2], kind="stable")
        pts = points[order]
        zs, starts = np.unique(pts[:, 2], return_index=True)
        ends = np.append(starts[1:], len(pts))
        self._planes = {}
        for z, a, b in zip(zs.tolist(), starts.tolist(), ends.tolist()):
            self._planes[z] = (pts[a:b, 0] - box.x0, pts[a:b, 1] - box.y0)
        self.planes = zs

    def image(self, z: int) -> np.ndarray:
        img = np.zeros(self.box.shape, dtype=bool)
        ij = self._planes.get(z)
        if ij is not None:
            img[ij] = True
        return img


class SectionImages(NamedTuple):
    o: np.ndarray
    o_prev1: np.ndarray
    o_prev2: np.ndarray
    c: np.ndarray
    c_next: np.ndarray


def section_images(
    level: VoxelPointCloud, candidates: VoxelPointCloud, z0: int, box: FrameBox
) -> SectionImages:
    """Occupancy planes z0, z0-1, z0-2 and candidate planes z0, z0+1 clipped to ``box``."""
    occ = PlaneIndex(level.points, box)
    cand = PlaneIndex(candidates.points, box)
    return SectionImages(
        occ.image(z0), occ.image(z0 - 1), occ.image(z0 - 2), cand.image(z0), cand.image(z0 + 1)
    )


# ---------------------------------------------------------------------------
# blocks and phases

_PATTERN_WEIGHTS = np.array([[1, 2], [4, 8]], dtype=np.int64)


def block_pattern(img: np.ndarray, m: int, n: int) -> int:
    W, H = img.shape
    if not (0 <= m < W // 2 and 0 <= n < H // 2):
        raise IndexError(f"block ({m}, {n}) outside {W}x{H} image")
    blk = img[2 * m : 2 * m + 2, 2 * n : 2 * n + 2].astype(np.int64)
    return int((blk * _PATTERN_WEIGHTS).sum())


def block_patterns(img: np.ndarray) -> np.ndarray:
    """Pattern of every 2x2 block, shape ``(W/2, H/2)``."""
    W, H = img.shape
    b = img.reshape(W // 2, 2, H // 2, 2).astype(np.int64)
    return b[:, 0, :, 0] + 2 * b[:, 0, :, 1] + 4 * b[:, 1, :, 0] + 8 * b[:, 1, :, 1]


def patterns_to_blocks(q: np.ndarray) -> np.ndarray:
    """Inverse of :func:`block_patterns` for a vector of patterns: ``(N, 2, 2)`` bool."""
    q = np.asarray(q, dtype=np.int64)
    out = np.empty((len(q), 2, 2), dtype=bool)
    out[:, 0, 0] = q & 1
    out[:, 0, 1] = q & 2
    out[:, 1, 0] = q & 4
    out[:, 1, 1] = q & 8
    return out


def candidate_blocks(c: np.ndarray) -> np.ndarray:
    W, H = c.shape
    return c.reshape(W // 2, 2, H // 2, 2).any(axis=(1, 3))


def phase_blocks(phase: int, block_shape: tuple[int, int], n_phases: int = 4) -> np.ndarray:
    """Block-level selector: phase 1 picks (even m, even n), 2 (even, odd), 3 (odd, even), 4 (odd, odd)."""
    if n_phases == 1:
        if phase != 1:
            raise ValueError("single-phase mode has only phase 1")
        return np.ones(block_shape, dtype=bool)
    if n_phases != 4 or not 1 <= phase <= 4:
        raise ValueError(f"phase {phase} invalid for {n_phases}-phase mode")
    Wb, Hb = block_shape
    mpar, npar = divmod(phase - 1, 2)
    m = np.arange(Wb) % 2 == mpar
    n = np.arange(Hb) % 2 == npar
    return m[:, None] & n[None, :]


def _blocks_to_pixels(mask: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(mask, 2, axis=0), 2, axis=1)


def phase_selector(phase: int, shape: tuple[int, int], n_phases: int = 4) -> np.ndarray:
    """Pixel mask of the blocks coded in ``phase``."""
    W, H = shape
    return _blocks_to_pixels(phase_blocks(phase, (W // 2, H // 2), n_phases))


def processed_mask(phase: int, shape: tuple[int, int], n_phases: int = 4) -> np.ndarray:
    """Union of the selectors of phases ``1..phase``; all-false for phase 0."""
    out = np.zeros(shape, dtype=bool)
    for p in range(1, phase + 1):
        out |= phase_selector(p, shape, n_phases)
    return out


def mixing_image(c: np.ndarray, r: np.ndarray, phase: int, n_phases: int = 4) -> np.ndarray:
    """Four-level image: 2*C where not yet coded, 2*R + 1 where already coded.

    ``r`` only needs to be valid on the pixels coded before ``phase``.
    """
    done = processed_mask(phase - 1, c.shape, n_phases)
    return np.where(done, 2 * r.astype(np.uint8) + 1, 2 * c.astype(np.uint8)).astype(np.uint8)


def build_input_stack(o_prev2, o_prev1, mixing, c_next) -> np.ndarray:
    """Stack ``[O(z0-2), O(z0-1), M(z0), C(z0+1)]`` as a ``(4, W, H)`` uint8 array."""
    shapes = {np.shape(a) for a in (o_prev2, o_prev1, mixing, c_next)}
    if len(shapes) != 1:
        raise ValueError(f"input stack channels disagree in shape: {sorted(shapes)}")
    return np.stack([o_prev2, o_prev1, mixing, c_next]).astype(np.uint8)


def extract_contexts(stack: np.ndarray, m, n) -> np.ndarray:
    """Windows ``x in [2m-2, 2m+3]``, ``y in [2n-2, 2n+3]`` of every channel, zero outside.

    Returns ``(N, 4, 6, 6)`` uint8 for index vectors ``m``, ``n``.
    """
    p = CONTEXT_PAD
    padded = np.pad(stack, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(padded, (6, 6), axis=(1, 2))
    m = np.asarray(m, dtype=np.int64)
    n = np.asarray(n, dtype=np.int64)
    return np.ascontiguousarray(win[:, 2 * m, 2 * n].transpose(1, 0, 2, 3))


def extract_context(stack: np.ndarray, m: int, n: int) -> np.ndarray:
    return extract_contexts(stack, [m], [n])[0]


# ---------------------------------------------------------------------------
# encoder-side traversal


class PhaseBatch(NamedTuple):
    z0: int
    phase: int
    m: np.ndarray
    n: np.ndarray
    contexts: np.ndarray
    patterns: np.ndarray


def scan_order(selected: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Block indices of a selection, column-block ``n`` outer and ``m`` inner."""
    n_idx, m_idx = np.nonzero(selected.T)
    return m_idx, n_idx


def iter_level_blocks(
    level: VoxelPointCloud,
    parent: VoxelPointCloud,
    n_phases: int = 4,
    phases=None,
) -> Iterator[PhaseBatch]:
    """Walk one resolution the way the encoder does, using true occupancies.

    Yields one batch per (section, phase) holding at least one candidate
    block, in coding order. ``phases`` restricts which phases are yielded;
    the mixing images still account for every earlier phase.
    """
    cands = upsample_candidates(parent)
    if len(cands) == 0:
        return
    box = frame_box(cands)
    occ = PlaneIndex(level.points, box)
    cand = PlaneIndex(cands.points, box)
    wanted = range(1, n_phases + 1) if phases is None else phases
    for z0 in cand.planes.tolist():
        c = cand.image(z0)
        o = occ.image(z0)
        o1, o2, c_next = occ.image(z0 - 1), occ.image(z0 - 2), cand.image(z0 + 1)
        cblk = candidate_blocks(c)
        q = block_patterns(o)
        for phase in wanted:
            sel = cblk & phase_blocks(phase, box.block_shape, n_phases)
            if not sel.any():
                continue
            stack = build_input_stack(o2, o1, mixing_image(c, o, phase, n_phases), c_next)
            m, n = scan_order(sel)
            yield PhaseBatch(z0, phase, m, n, extract_contexts(stack, m, n), q[m, n])


# ---------------------------------------------------------------------------
# training store


class ContextHistogramStore:
    """Distinct contexts with a 16-bin histogram of the patterns seen in each."""

    _MAGIC = b"SNCX"

    def __init__(self, contexts=None, counts=None):
        if contexts is None:
            contexts = np.zeros((0, *CONTEXT_SHAPE), dtype=np.uint8)
            counts = np.zeros((0, N_PATTERNS), dtype=np.int64)
        self.contexts = np.ascontiguousarray(contexts, dtype=np.uint8).reshape(-1, *CONTEXT_SHAPE)
        self.counts = np.asarray(counts, dtype=np.int64).reshape(-1, N_PATTERNS)
        if len(self.contexts) != len(self.counts):
            raise ValueError("contexts and counts differ in length")
        if (self.counts < 0).any():
            raise ValueError("histogram counts must be non-negative")

    @classmethod
    def from_samples(cls, contexts: np.ndarray, patterns: np.ndarray) -> ContextHistogramStore:
        contexts = np.asarray(contexts, dtype=np.uint8).reshape(-1, *CONTEXT_SHAPE)
        patterns = np.asarray(patterns, dtype=np.int64)
        one_hot = np.zeros((len(patterns), N_PATTERNS), dtype=np.int64)
        one_hot[np.arange(len(patterns)), patterns] = 1
        return cls._reduce(contexts, one_hot)

    @classmethod
    def _reduce(cls, contexts, counts):
        if len(contexts) == 0:
            return cls()
        flat = np.ascontiguousarray(contexts).reshape(len(contexts), -1)
        keys = flat.view(np.dtype((np.void, flat.shape[1]))).ravel()
        _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        merged = np.zeros((len(first), N_PATTERNS), dtype=np.int64)
        np.add.at(merged, inverse.ravel(), counts)
        return cls(contexts[first], merged)

    def merge(self, other: ContextHistogramStore) -> ContextHistogramStore:
        return self._reduce(
            np.concatenate([self.contexts, other.contexts]),
            np.concatenate([self.counts, other.counts]),
        )

    def __len__(self) -> int:
        return len(self.contexts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def histogram(self, context: np.ndarray) -> np.ndarray:
        hit = (self.contexts == np.asarray(context, dtype=np.uint8)).all(axis=(1, 2, 3))
        idx = np.flatnonzero(hit)
        if idx.size == 0:
            return np.zeros(N_PATTERNS, dtype=np.int64)
        return self.counts[idx[0]].copy()

    def dump(self, path) -> None:
        """Write ``SNCX | u32 N | N x (144 context bytes, 16 x u32 counts)``."""
        with open(path, "wb") as fh:
            fh.write(self._MAGIC + struct.pack("<I", len(self)))
            body = np.concatenate(
                [
                    self.contexts.reshape(len(self), -1),
                    self.counts.astype("<u4").view(np.uint8).reshape(len(self), -1),
                ],
                axis=1,
            )
            fh.write(body.tobytes())

    @classmethod
    def load(cls, path) -> ContextHistogramStore:
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != cls._MAGIC:
            raise ValueError("not a context store dump")
        (n,) = struct.unpack_from("<I", data, 4)
        rec = 144 + 4 * N_PATTERNS
        body = np.frombuffer(data, dtype=np.uint8, offset=8)
        if body.size != n * rec:
            raise ValueError(f"context store dump length mismatch for {n} records")
        body = body.reshape(n, rec)
        counts = body[:, 144:].copy().view("<u4").astype(np.int64)
        return cls(body[:, :144].reshape(n, *CONTEXT_SHAPE), counts)


def collect_frame(frame: VoxelPointCloud, n_phases: int = 4, all_phases: bool = True):
    """Store of contexts/patterns from the final resolution of one frame."""
    if frame.resolution_bits < 3 or len(frame) == 0:
        return ContextHistogramStore()
    phases = None if all_phases else [1]
    ctxs, pats = [], []
    for batch in iter_level_blocks(frame, downsample(frame), n_phases, phases):
        ctxs.append(batch.contexts)
        pats.append(batch.patterns)
    if not ctxs:
        return ContextHistogramStore()
    return ContextHistogramStore.from_samples(np.concatenate(ctxs), np.concatenate(pats))


def collect_training_set(frames, n_phases: int = 4, all_phases: bool = True) -> ContextHistogramStore:
    """Merge per-frame stores of the training frames (already in sweep orientation)."""
    store = ContextHistogramStore()
    for frame in frames:
        store = store.merge(collect_frame(frame, n_phases, all_phases))
    return store
