"""Four-stage convolutional probability model, its loss, gradients and training.

Internally activations are channels-last ``(N, X, Y, C)``; kernels are stored
``(C_out, C_in, K, K)`` and flattened kernel-then-bias per stage, in stage
order. Inference and gradient checks run in float64; training may use
float32 arithmetic for speed. Transmitted weights are float32.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .context import CONTEXT_PAD, CONTEXT_SHAPE, N_PATTERNS, ContextHistogramStore

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
IN_CHANNELS = CONTEXT_SHAPE[0]
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class Stage:
    kernel: int
    stride: int
    out_channels: int


@dataclass(frozen=True)
class CnnArchitecture:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        stages = tuple(s if isinstance(s, Stage) else Stage(*s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        if len(stages) != 4:
            raise ValueError(f"architecture needs exactly 4 stages, got {len(stages)}")
        if stages[-1].out_channels != N_PATTERNS:
            raise ValueError("last stage must output 16 channels")
        rf, jump = 1, 1
        for s in stages:
            if s.kernel < 1 or s.stride < 1 or s.out_channels < 1:
                raise ValueError(f"invalid stage {s}")
            rf += (s.kernel - 1) * jump
            jump *= s.stride
        if rf != 6 or jump != 2:
            raise ValueError(f"receptive field must be 6 with stride 2, got {rf} / {jump}")
        for w in (2, 4, 10):
            if self.output_size(w) != w // 2:
                raise ValueError(f"architecture does not map width {w} to {w // 2}")

    def output_size(self, width: int) -> int:
        n = width + 2 * CONTEXT_PAD
        for s in self.stages:
            n = (n - s.kernel) // s.stride + 1
        return n

    def shapes(self) -> list[tuple[tuple[int, int, int, int], int]]:
        out, cin = [], IN_CHANNELS
        for s in self.stages:
            out.append(((s.out_channels, cin, s.kernel, s.kernel), s.out_channels))
            cin = s.out_channels
        return out

    @property
    def parameter_count(self) -> int:
        return sum(math.prod(k) + b for k, b in self.shapes())

    def to_bytes(self) -> bytes:
        """``u8 n_stages`` then per stage ``u8 kernel, u8 stride, u16 out_channels``."""
        body = b"".join(struct.pack("<BBH", s.kernel, s.stride, s.out_channels) for s in self.stages)
        return struct.pack("<B", len(self.stages)) + body

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> tuple[CnnArchitecture, int]:
        (n,) = struct.unpack_from("<B", data, offset)
        offset += 1
        stages = []
        for _ in range(n):
            stages.append(Stage(*struct.unpack_from("<BBH", data, offset)))
            offset += 4
        return cls(tuple(stages)), offset


BASELINE = CnnArchitecture((Stage(4, 2, 40), Stage(2, 1, 40), Stage(1, 1, 80), Stage(1, 1, 16)))
LIGHT = CnnArchitecture((Stage(4, 2, 20), Stage(2, 1, 20), Stage(1, 1, 40), Stage(1, 1, 16)))
PRESETS = {"baseline": BASELINE, "lm": LIGHT}


@dataclass(frozen=True, eq=False)
class CnnModel:
    architecture: CnnArchitecture
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 1 or w.size != self.architecture.parameter_count:
            raise ValueError(
                f"expected {self.architecture.parameter_count} weights, got {w.size}"
            )
        if not np.issubdtype(w.dtype, np.floating):
            w = w.astype(np.float32)
        object.__setattr__(self, "weights", w)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return _unflatten(self.architecture, np.asarray(self.weights, dtype=np.float64))


def _unflatten(arch: CnnArchitecture, w: np.ndarray):
    layers, pos = [], 0
    for kshape, nb in arch.shapes():
        nk = math.prod(kshape)
        layers.append((w[pos : pos + nk].reshape(kshape), w[pos + nk : pos + nk + nb]))
        pos += nk + nb
    return layers


def init_model(arch: CnnArchitecture = BASELINE, seed: int = 0) -> CnnModel:
    """Glorot-uniform kernels, zero biases, rounded to float32."""
    rng = np.random.default_rng(seed)
    parts = []
    for (co, ci, k, _), nb in arch.shapes():
        limit = math.sqrt(6.0 / (ci * k * k + co * k * k))
        parts.append(rng.uniform(-limit, limit, size=co * ci * k * k))
        parts.append(np.zeros(nb))
    return CnnModel(arch, np.concatenate(parts).astype(np.float32))


def zero_model(arch: CnnArchitecture = BASELINE) -> CnnModel:
    """All-zero weights: every pmf is uniform."""
    return CnnModel(arch, np.zeros(arch.parameter_count, dtype=np.float32))


# ---------------------------------------------------------------------------
# layers


def leaky_relu(x):
    # valid because the slope is below 1
    return np.maximum(x, LEAKY_SLOPE * x)


def _conv(x, kernel, bias, stride):
    n, X, Y, c = x.shape
    co, _, k, _ = kernel.shape
    if k == 1 and stride == 1:
        cols = x.reshape(-1, c)
        xo, yo = X, Y
    else:
        win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
        xo, yo = win.shape[1], win.shape[2]
        cols = win.reshape(n * xo * yo, c * k * k)
    out = cols @ kernel.reshape(co, -1).T + bias
    return out.reshape(n, xo, yo, co), cols


def _conv_backward(dout, cols, x_shape, kernel, stride, need_dx=True):
    n, X, Y, c = x_shape
    co, _, k, _ = kernel.shape
    _, xo, yo, _ = dout.shape
    d2 = dout.reshape(-1, co)
    dk = (d2.T @ cols).reshape(kernel.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dk, db
    dcols = d2 @ kernel.reshape(co, -1)
    if k == 1 and stride == 1:
        return dcols.reshape(x_shape), dk, db
    dcols = dcols.reshape(n, xo, yo, c, k, k)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for ki in range(k):
        for kj in range(k):
            dx[:, ki : ki + stride * xo : stride, kj : kj + stride * yo : stride, :] += dcols[..., ki, kj]
    return dx, dk, db


def _logits(arch, layers, x, keep=False):
    """Run the stages on channels-last ``x``; optionally keep what backprop needs."""
    cache = []
    h = x
    last = len(layers) - 1
    for i, ((kernel, bias), stage) in enumerate(zip(layers, arch.stages)):
        pre, cols = _conv(h, kernel, bias, stage.stride)
        if keep:
            cache.append((h.shape, cols, pre))
        h = pre if i == last else leaky_relu(pre)
    return h, cache


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward(model: CnnModel, stack: np.ndarray) -> np.ndarray:
    """Output stack ``(16, W/2, H/2)`` of pmfs for a ``(4, W, H)`` input stack."""
    stack = np.asarray(stack)
    if stack.ndim != 3 or stack.shape[0] != IN_CHANNELS:
        raise ValueError(f"input stack must be (4, W, H), got {stack.shape}")
    W, H = stack.shape[1:]
    if W % 2 or H % 2:
        raise ValueError(f"input stack dims must be even, got {W}x{H}")
    p = CONTEXT_PAD
    x = np.pad(stack.astype(np.float64), ((0, 0), (p, p), (p, p))).transpose(1, 2, 0)[None]
    z, _ = _logits(model.architecture, model.layers(), x)
    return _softmax(z[0]).transpose(2, 0, 1)


def _contexts_to_input(contexts, dtype=np.float64) -> np.ndarray:
    c = np.asarray(contexts).reshape(-1, *CONTEXT_SHAPE)
    return np.ascontiguousarray(c.transpose(0, 2, 3, 1), dtype=dtype)


def forward_contexts(model: CnnModel, contexts) -> np.ndarray:
    """Pmfs ``(N, 16)`` for a batch of ``(4, 6, 6)`` contexts."""
    z, _ = _logits(model.architecture, model.layers(), _contexts_to_input(contexts))
    return _softmax(z.reshape(-1, N_PATTERNS))


def forward_context(model: CnnModel, context) -> np.ndarray:
    return forward_contexts(model, np.asarray(context)[None])[0]


# ---------------------------------------------------------------------------
# loss and gradients


def loss_and_gradient(
    arch: CnnArchitecture, weights, contexts, counts, need_grad=True, dtype=np.float64
):
    """Mean over the batch of ``-sum_q h(q) log2 g_q`` and its gradient.

    ``weights`` is a flat float vector in model order; the gradient has the
    same layout. ``dtype`` sets the arithmetic precision.
    """
    w = np.asarray(weights, dtype=dtype)
    layers = _unflatten(arch, w)
    h = np.asarray(counts, dtype=dtype).reshape(-1, N_PATTERNS)
    nb = len(h)
    z, cache = _logits(arch, layers, _contexts_to_input(contexts, dtype), keep=need_grad)
    z = z.reshape(nb, N_PATTERNS)
    logp = _log_softmax(z)
    loss = -float((h * logp).sum(dtype=np.float64)) / (nb * _LN2)
    if not need_grad:
        return loss, None

    dz = (h.sum(axis=1, keepdims=True) * np.exp(logp) - h) / (nb * _LN2)
    grads = []
    d = dz.reshape(cache[-1][2].shape)
    for i in range(len(layers) - 1, -1, -1):
        x_shape, cols, pre = cache[i]
        if i != len(layers) - 1:
            d = np.where(pre > 0, d, d * LEAKY_SLOPE)
        d, dk, db = _conv_backward(d, cols, x_shape, layers[i][0], arch.stages[i].stride, i > 0)
        grads.append(db)
        grads.append(dk.ravel())
    return loss, np.concatenate(grads[::-1])


def loss(model: CnnModel, contexts, counts) -> float:
    return loss_and_gradient(model.architecture, model.weights, contexts, counts, need_grad=False)[0]


def gradients(model: CnnModel, contexts, counts) -> np.ndarray:
    return loss_and_gradient(model.architecture, model.weights, contexts, counts)[1]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingConfig:
    batch_size: int = 10_000
    learning_rate: float = 1e-3
    patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # safety stop; None trains until the second plateau
    max_epochs: int | None = 1000
    # arithmetic for batch loss/gradient; Adam state is always float64
    precision: str = "float32"

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.batch_size < 1 or self.patience < 1 or self.learning_rate <= 0:
            raise ValueError("batch_size and patience must be >= 1 and learning_rate > 0")


def store_loss(
    model_or_weights, store: ContextHistogramStore, arch=None, chunk: int = 20_000, dtype=np.float64
) -> float:
    """Loss over the whole store (mean per distinct context)."""
    if isinstance(model_or_weights, CnnModel):
        arch, w = model_or_weights.architecture, model_or_weights.weights
    else:
        w = model_or_weights
    total = 0.0
    n = len(store)
    for a in range(0, n, chunk):
        b = min(a + chunk, n)
        part, _ = loss_and_gradient(arch, w, store.contexts[a:b], store.counts[a:b], need_grad=False, dtype=dtype)
        total += part * (b - a)
    return total / n


def train(
    store: ContextHistogramStore,
    cfg: TrainingConfig | None = None,
    arch: CnnArchitecture = BASELINE,
    history: list | None = None,
) -> CnnModel:
    """Fit a model to the store with Adam; returns the best-loss weights.

    The learning rate halves after the first run of ``patience`` epochs
    without a strict improvement and training stops after the second.
    """
    cfg = cfg or TrainingConfig()
    if len(store) == 0:
        raise ValueError("cannot train on an empty context store")
    rng = np.random.default_rng(cfg.seed)
    w = init_model(arch, cfg.seed).weights.astype(np.float64)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    t = 0
    lr = cfg.learning_rate
    dt = np.dtype(cfg.precision)

    best = store_loss(w, store, arch, dtype=dt)
    best_w = w.copy()
    if history is not None:
        history.append(best)
    stale = plateaus = epoch = 0
    n = len(store)
    while cfg.max_epochs is None or epoch < cfg.max_epochs:
        perm = rng.permutation(n)
        for a in range(0, n, cfg.batch_size):
            idx = np.sort(perm[a : a + cfg.batch_size])
            _, g = loss_and_gradient(arch, w, store.contexts[idx], store.counts[idx], dtype=dt)
            g = g.astype(np.float64)
            t += 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            mhat = m / (1 - cfg.beta1**t)
            vhat = v / (1 - cfg.beta2**t)
            w = w - lr * mhat / (np.sqrt(vhat) + cfg.eps)
        epoch += 1
        cur = store_loss(w, store, arch, dtype=dt)
        if history is not None:
            history.append(cur)
        if cur < best:
            best, best_w, stale = cur, w.copy(), 0
        else:
            stale += 1
        if stale >= cfg.patience:
            plateaus += 1
            if plateaus == 2:
                break
            lr /= 2
            stale = 0
            logger.debug("epoch %d: plateau, learning rate -> %g", epoch, lr)
    logger.info("trained %d epochs on %d contexts, loss %.4f bits", epoch, n, best)
    return CnnModel(arch, best_w.astype(np.float32))


# ---------------------------------------------------------------------------
# weight blob


def serialize(model: CnnModel) -> bytes:
    """Weights as little-endian float32, 4 bytes each, in model order."""
    return np.asarray(model.weights, dtype="<f4").tobytes()


def deserialize(data: bytes, arch: CnnArchitecture) -> CnnModel:
    if len(data) != 4 * arch.parameter_count:
        raise ValueError(
            f"weight blob has {len(data)} bytes, architecture needs {4 * arch.parameter_count}"
        )
    return CnnModel(arch, np.frombuffer(data, dtype="<f4").astype(np.float32))
