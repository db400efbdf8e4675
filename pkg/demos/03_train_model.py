"""
Training the per-sequence probability model
===========================================

Contexts from a few frames are gathered into a store of distinct contexts
with a pattern histogram each, and the CNN is fitted to it with Adam. The
loss is the histogram-weighted code length in bits averaged over distinct
contexts. Training halves the learning rate on the first stretch of
`patience` epochs without improvement and stops on the second.
"""

import time

import numpy as np

from snoc.cnn import BASELINE, LIGHT, TrainingConfig, forward_contexts, store_loss, train
from snoc.context import collect_training_set
from snoc.synthetic import blob_sequence

frames = blob_sequence(10, r=6, seed=0, size=1.3)
store = collect_training_set([frames[i] for i in (0, 2, 4, 6, 8)])
print(f"{len(store)} distinct contexts from {store.total} coded blocks")

for arch, name in ((BASELINE, "baseline"), (LIGHT, "light")):
    history = []
    t0 = time.perf_counter()
    cfg = TrainingConfig(batch_size=500, patience=10, max_epochs=60)
    model = train(store, cfg, arch, history)
    print(
        f"{name}: {arch.parameter_count} weights, loss {history[0]:.3f} -> {min(history):.3f} bits "
        f"in {len(history) - 1} epochs ({time.perf_counter() - t0:.1f} s)"
    )

# %% how confident is the model on the most frequent contexts?
top = np.argsort(-store.counts.sum(axis=1))[:5]
p = forward_contexts(model, store.contexts[top])
for i, row in zip(top, p):
    h = store.counts[i]
    print(f"seen {h.sum():5d}x, most common pattern {h.argmax():2d}, model gives it p={row[h.argmax()]:.3f}")
print(f"store loss of the returned weights: {store_loss(model, store):.3f} bits")
