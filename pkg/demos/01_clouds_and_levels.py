"""
Voxel clouds, PLY files and resolution levels
=============================================

Build a small cloud, write it to PLY and read it back, then walk the
resolution levels the codec works through: each level halves the
coordinates, and the eight children of every occupied voxel are the
candidates for the next finer level. The coarsest level (4x4x4) is stored
as a single 64-bit word.
"""

import tempfile
from pathlib import Path

import numpy as np

from snoc.core import VoxelPointCloud, load_voxelized_cloud, save_voxelized_cloud
from snoc.octree import base_level_to_bits, bits_to_base_level, level_stack, upsample_candidates
from snoc.synthetic import sphere_shell

cloud = sphere_shell(6, radius=22.0)
print(f"sphere shell at r=6: {len(cloud)} voxels")

# duplicate points collapse, rows come back sorted
dup = VoxelPointCloud(3, np.array([[1, 2, 3], [0, 0, 0], [1, 2, 3]]))
print("deduplicated:", dup.points.tolist())

# %% PLY round trip (binary and ASCII)
with tempfile.TemporaryDirectory() as tmp:
    for binary in (True, False):
        path = Path(tmp) / f"shell_{'bin' if binary else 'ascii'}.ply"
        save_voxelized_cloud(cloud, path, binary=binary)
        back = load_voxelized_cloud(path)
        print(f"{path.name}: {path.stat().st_size} bytes, identical={back == cloud}")

# %% level stack: voxel counts shrink as coordinates are halved
levels = level_stack(cloud)
for r in sorted(levels):
    lvl = levels[r]
    if r > 2:
        cands = upsample_candidates(levels[r - 1])
        share = len(lvl) / len(cands)
        print(f"r={r}: {len(lvl):6d} occupied of {len(cands):6d} candidates ({share:.0%})")
    else:
        print(f"r={r}: {len(lvl):6d} occupied")

# %% the base level travels as one 64-bit word
word = base_level_to_bits(levels[2])
print(f"base word: {word:064b}")
assert bits_to_base_level(word) == levels[2]
