"""Resolution levels: coordinate halving, candidate upsampling, 64-bit base level."""

from __future__ import annotations

import numpy as np

from .core import VoxelPointCloud

BASE_RESOLUTION = 2

# (dx, dy, dz) of the eight children, x-major
_CHILD_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)], dtype=np.int64
)


def downsample(cloud: VoxelPointCloud) -> VoxelPointCloud:
    """Parent level: every coordinate halved (floor), siblings merged."""
    if cloud.resolution_bits < 3:
        raise ValueError(f"cannot downsample below r=2 (got r={cloud.resolution_bits})")
    return VoxelPointCloud(cloud.resolution_bits - 1, cloud.points >> 1)


def upsample_candidates(parent: VoxelPointCloud) -> VoxelPointCloud:
    """All eight children of every occupied parent voxel, one level finer."""
    pts = (parent.points[:, None, :] << 1) + _CHILD_OFFSETS[None, :, :]
    return VoxelPointCloud(parent.resolution_bits + 1, pts.reshape(-1, 3))


def level_stack(cloud: VoxelPointCloud) -> dict[int, VoxelPointCloud]:
    """Map r -> cloud at resolution r, for r = 2 .. cloud.resolution_bits."""
    levels = {cloud.resolution_bits: cloud}
    cur = cloud
    while cur.resolution_bits > BASE_RESOLUTION:
        cur = downsample(cur)
        levels[cur.resolution_bits] = cur
    return levels


def base_level_to_bits(cloud: VoxelPointCloud) -> int:
    """Pack a 4x4x4 cloud into 64 bits, bit index ``x*16 + y*4 + z``."""
    if cloud.resolution_bits != BASE_RESOLUTION:
        raise ValueError(f"base level must have r=2, got r={cloud.resolution_bits}")
    word = 0
    for x, y, z in cloud.points.tolist():
        word |= 1 << (x * 16 + y * 4 + z)
    return word


def bits_to_base_level(word: int) -> VoxelPointCloud:
    if not 0 <= word < (1 << 64):
        raise ValueError("base word must fit in 64 bits")
    idx = [b for b in range(64) if (word >> b) & 1]
    pts = [(b >> 4, (b >> 2) & 3, b & 3) for b in idx]
    return VoxelPointCloud(BASE_RESOLUTION, np.array(pts, dtype=np.int64).reshape(-1, 3))
