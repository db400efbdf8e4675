"""
Section images, phases and contexts
===================================

One resolution is coded plane by plane along the sweep axis. Within a plane
the 2x2 blocks that hold at least one candidate are coded in four
interleaved phases; blocks coded in earlier phases show up in the mixing
image with their true occupancy (values 1 and 3), the rest show candidacy
(0 and 2). The probability model sees a 4x6x6 window of the stacked images
around each block.
"""

import numpy as np

from snoc.context import (
    block_patterns,
    build_input_stack,
    candidate_blocks,
    extract_context,
    frame_box,
    mixing_image,
    phase_blocks,
    phase_selector,
    section_images,
)
from snoc.octree import downsample, upsample_candidates
from snoc.synthetic import sphere_shell

level = sphere_shell(5, radius=10.0)
cands = upsample_candidates(downsample(level))
box = frame_box(cands)
print("frame box:", box)

z0 = int(np.median(level.points[:, 2]))
s = section_images(level, cands, z0, box)
print(f"plane z={z0}: {s.o.sum()} occupied, {s.c.sum()} candidates, O inside C: {not (s.o & ~s.c).any()}")


def show(img, title):
    print(title)
    for row in img:
        print("  " + "".join(".123456789"[v] if v else "." for v in row))


# %% the four phase selectors on a 8x8 pixel grid
for phase in (1, 2, 3, 4):
    show(phase_selector(phase, (8, 8)).astype(int) * phase, f"phase {phase}")

# %% mixing images as the phases progress
for phase in (1, 2, 3, 4):
    m = mixing_image(s.c, s.o, phase)
    print(f"phase {phase}: value counts {np.bincount(m.ravel(), minlength=4).tolist()}")
show(mixing_image(s.c, s.o, 3), "mixing image entering phase 3 (0..3)")

# %% block patterns and one context
q = block_patterns(s.o)
coded = candidate_blocks(s.c)
print(f"{coded.sum()} candidate blocks; pattern histogram {np.bincount(q[coded], minlength=16).tolist()}")
stack = build_input_stack(s.o_prev2, s.o_prev1, mixing_image(s.c, s.o, 2), s.c_next)
sel = coded & phase_blocks(2, box.block_shape)
m, n = map(int, np.argwhere(sel)[0])
ctx = extract_context(stack, m, n)
print(f"context of block ({m}, {n}) in phase 2, pattern {q[m, n]}:")
for name, ch in zip(["O z-2", "O z-1", "M", "C z+1"], ctx):
    print(f"  {name:6s}", " ".join("".join(str(v) for v in row) for row in ch))
