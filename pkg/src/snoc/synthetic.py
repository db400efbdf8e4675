"""Synthetic voxel clouds and sequences for tests and demos."""

from __future__ import annotations

import numpy as np

from .core import VoxelPointCloud


def random_cloud(r: int, density: float, rng) -> VoxelPointCloud:
    """Uniform random occupancy of the full ``2**r`` cube at the given density."""
    side = 1 << r
    n = max(1, int(round(density * side**3)))
    flat = rng.choice(side**3, size=n, replace=False) if n < side**3 // 4 else np.flatnonzero(
        rng.random(side**3) < density
    )
    pts = np.stack(np.unravel_index(flat, (side, side, side)), axis=1)
    return VoxelPointCloud(r, pts)


def _grid(r):
    side = 1 << r
    ax = np.arange(side)
    return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)


def sphere_shell(r: int, radius: float, center=None, thickness: float = 1.0) -> VoxelPointCloud:
    side = 1 << r
    c = np.full(3, (side - 1) / 2) if center is None else np.asarray(center, dtype=float)
    g = _grid(r)
    d = np.linalg.norm(g - c, axis=1)
    return VoxelPointCloud(r, g[np.abs(d - radius) <= thickness / 2 + 0.5])


def tilted_plane(r: int, normal=(1.0, 2.0, 3.0), offset: float | None = None) -> VoxelPointCloud:
    side = 1 << r
    nrm = np.asarray(normal, dtype=float)
    nrm /= np.linalg.norm(nrm)
    off = (side - 1) / 2 * nrm.sum() if offset is None else offset
    g = _grid(r)
    return VoxelPointCloud(r, g[np.abs(g @ nrm - off) <= 0.5])


def random_walk_surface(r: int, rng, roughness: float = 0.6) -> VoxelPointCloud:
    """Height field z = h(x, y) built from cumulative random steps, filled to stay 6-connected."""
    side = 1 << r
    steps = rng.normal(0, roughness, size=(side, side))
    h = np.cumsum(np.cumsum(steps, axis=0), axis=1)
    h -= h.min()
    if h.max() > 0:
        h *= (side - 1) / h.max() * 0.6
    h = np.round(h + side * 0.2).astype(np.int64).clip(0, side - 1)
    pts = []
    x, y = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    lo = np.minimum(h, np.minimum(np.roll(h, 1, 0), np.roll(h, 1, 1)))
    for dz in range(int((h - lo).max()) + 1):
        keep = h - dz >= lo
        pts.append(np.stack([x[keep], y[keep], (h - dz)[keep]], axis=1))
    return VoxelPointCloud(r, np.concatenate(pts))


def blob_sequence(
    frames: int, r: int = 6, seed: int = 0, solid: bool = True, size: float = 1.0
) -> list[VoxelPointCloud]:
    """Slowly deforming, drifting union of ellipsoids (solid or 1-voxel shells).

    ``size`` scales the ellipsoid radii; 1.0 gives radii of 16-24% of the cube side.
    """
    rng = np.random.default_rng(seed)
    side = 1 << r
    g = _grid(r).astype(float)
    k = 3
    centers = side / 2 + rng.uniform(-0.12, 0.12, size=(k, 3)) * side
    radii = rng.uniform(0.16, 0.24, size=(k, 3)) * side * size
    drift = rng.normal(0, 0.004, size=(k, 3)) * side
    wobble = rng.uniform(0.02, 0.05, size=(k, 3))
    phase = rng.uniform(0, 2 * np.pi, size=(k, 3))
    out = []
    for t in range(frames):
        c = centers + drift * t
        rad = radii * (1 + wobble * np.sin(0.3 * t + phase))
        field = np.full(len(g), np.inf)
        for j in range(k):
            field = np.minimum(field, np.sqrt((((g - c[j]) / rad[j]) ** 2).sum(axis=1)))
        if solid:
            mask = field <= 1.0
        else:
            mask = np.abs(field - 1.0) <= 0.5 / radii.mean() * 1.5
        out.append(VoxelPointCloud(r, g[mask].astype(np.int64)))
    return out
