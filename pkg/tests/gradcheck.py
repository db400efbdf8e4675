"""Central finite differences against the analytic gradient, away from ReLU kinks."""

import numpy as np

from snoc.cnn import _contexts_to_input, _logits, _unflatten, loss_and_gradient


def random_batch(rng, n, max_count=4):
    ctx = rng.integers(0, 2, size=(n, 4, 6, 6)).astype(np.uint8)
    ctx[:, 2] = rng.integers(0, 4, size=(n, 6, 6))
    counts = rng.integers(0, max_count + 1, size=(n, 16))
    counts[np.arange(n), rng.integers(0, 16, n)] += 1
    return ctx, counts


def _signs(arch, w, x):
    _, cache = _logits(arch, _unflatten(arch, w), x, keep=True)
    return [np.signbit(pre) for _, _, pre in cache[:-1]]


def check(arch, weights, contexts, counts, n_weights, rng, step=1e-3):
    """Relative errors on ``n_weights`` randomly drawn weights.

    Perturbations that flip the sign of any hidden pre-activation cross a
    LeakyReLU kink, where the loss is not differentiable; those draws are
    skipped and replaced.
    """
    w = np.asarray(weights, dtype=np.float64)
    _, grad = loss_and_gradient(arch, w, contexts, counts)
    x = _contexts_to_input(contexts)
    base = _signs(arch, w, x)
    errors, skipped = [], 0
    for k in rng.permutation(len(w)):
        if len(errors) == n_weights:
            break
        wp, wm = w.copy(), w.copy()
        wp[k] += step
        wm[k] -= step
        if any((a != b).any() for s in (_signs(arch, wp, x), _signs(arch, wm, x)) for a, b in zip(s, base)):
            skipped += 1
            continue
        lp, _ = loss_and_gradient(arch, wp, contexts, counts, need_grad=False)
        lm, _ = loss_and_gradient(arch, wm, contexts, counts, need_grad=False)
        fd = (lp - lm) / (2 * step)
        errors.append(abs(fd - grad[k]) / max(abs(fd), abs(grad[k]), 1e-7))
    return np.array(errors), skipped
