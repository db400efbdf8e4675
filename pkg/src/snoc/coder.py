"""PMF quantization and a 16-symbol range coder.

The coder keeps a 64-bit ``low``/``range`` pair, renormalizes a byte at a time
and propagates carries through a cached byte run, so the stream needs no
underflow handling. Frequencies always total ``2**16``.
"""

from __future__ import annotations

from bisect import bisect_right

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
N_SYMBOLS = 16

_SHIFT = 56
_TOP = 1 << _SHIFT
_MASK64 = (1 << 64) - 1
_LOW_KEEP = _TOP - 1
# a decoder reading this far past the end of its input is looking at a cut stream
_MAX_OVERREAD = 16


class TruncatedStreamError(ValueError):
    pass


def quantize_pmfs(p) -> np.ndarray:
    """Integer frequencies (total 65536, each >= 1) for each row of ``p``.

    Rows are normalized, then ``max(1, floor(p * 65536))`` is taken. A
    shortfall is handed out one unit at a time by largest remainder (ties to
    the lower symbol); an excess caused by the floor of 1 is taken back from
    the largest non-argmax frequencies. Finally the input argmax (lowest
    index on ties) is kept as the output argmax. Exact inputs ``f / 65536``
    come back unchanged.
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    if p.shape[-1] != N_SYMBOLS:
        raise ValueError(f"pmf must have {N_SYMBOLS} entries, got {p.shape[-1]}")
    if not np.isfinite(p).all() or (p < 0).any():
        raise ValueError("pmf entries must be finite and non-negative")
    sums = p.sum(axis=1, keepdims=True)
    if (sums <= 0).any():
        raise ValueError("cannot quantize an all-zero pmf")
    # argmax of the raw input: normalizing can turn a one-ulp lead into a tie
    top = np.argmax(p, axis=1)
    p = p / sums
    raw = p * TOTAL
    fl = np.floor(raw)
    rem = raw - fl
    freq = np.maximum(fl.astype(np.int64), 1)
    deficit = TOTAL - freq.sum(axis=1)
    rows = np.arange(len(p))

    short = deficit > 0
    if short.any():
        order = np.argsort(-rem[short], axis=1, kind="stable")
        rank = np.empty_like(order)
        np.put_along_axis(rank, order, np.arange(N_SYMBOLS)[None, :], axis=1)
        freq[short] += rank < deficit[short, None]

    over = np.flatnonzero(deficit < 0)
    excess = -deficit[over]
    cols = np.arange(N_SYMBOLS)[None, :]
    while over.size:
        f = freq[over]
        masked = np.where((f > 1) & (cols != top[over, None]), f, -1)
        j = np.argmax(masked, axis=1)
        j = np.where(masked[np.arange(len(over)), j] > 0, j, top[over])
        freq[over, j] -= 1
        excess -= 1
        keep = excess > 0
        over, excess = over[keep], excess[keep]

    # keep the input argmax (lowest index among ties) as the argmax of the output
    f_top = freq[rows, top][:, None]
    t = top[:, None]
    offend = ((freq > f_top) & (cols > t)) | ((freq >= f_top) & (cols < t))
    if offend.any():
        freq -= offend
        freq[rows, top] += offend.sum(axis=1)
    return freq


def quantize_pmf(p) -> np.ndarray:
    return quantize_pmfs(np.asarray(p)[None, :])[0]


def cumulative(freqs) -> np.ndarray:
    """Cumulative tables with a leading zero, shape ``(..., 17)``."""
    freqs = np.asarray(freqs, dtype=np.int64)
    out = np.zeros(freqs.shape[:-1] + (N_SYMBOLS + 1,), dtype=np.int64)
    np.cumsum(freqs, axis=-1, out=out[..., 1:])
    return out


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK64
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self._finished = False

    def _shift_low(self):
        low = self.low
        if low < 0xFF << _SHIFT or low > _MASK64:
            carry = low >> 64
            temp = self._cache
            out = self._out
            while True:
                out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if not self._cache_size:
                    break
            self._cache = (low >> _SHIFT) & 0xFF
        self._cache_size += 1
        self.low = (low & _LOW_KEEP) << 8

    def encode(self, start: int, freq: int):
        r = self.range >> PRECISION
        self.low += r * start
        self.range = r * freq
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_symbols(self, symbols, freqs):
        """Encode a batch; ``freqs`` is ``(N, 16)`` matching ``symbols``."""
        cum = cumulative(freqs)
        symbols = np.asarray(symbols, dtype=np.int64)
        starts = cum[np.arange(len(symbols)), symbols].tolist()
        sizes = (cum[np.arange(len(symbols)), symbols + 1] - cum[np.arange(len(symbols)), symbols]).tolist()
        for start, size in zip(starts, sizes):
            self.encode(start, size)

    def finish(self) -> bytes:
        if self._finished:
            raise RuntimeError("encoder already finished")
        self._finished = True
        mark = len(self._out)
        # any value in [low, low + range) identifies the stream; pick the one
        # whose low 56 bits are zero so the tail can be dropped
        self.low = (self.low + _TOP - 1) & ~_LOW_KEEP
        for _ in range(9):
            self._shift_low()
        out = self._out
        end = len(out)
        while end > max(mark, 1) and out[end - 1] == 0:
            end -= 1
        # the first byte is the initial cache and always zero
        return bytes(out[1:end])


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self.range = _MASK64
        code = 0
        for _ in range(8):
            code = (code << 8) | self._next()
        self.code = code

    def _next(self) -> int:
        pos = self._pos
        self._pos = pos + 1
        if pos < len(self._data):
            return self._data[pos]
        if pos >= len(self._data) + _MAX_OVERREAD:
            raise TruncatedStreamError("range decoder ran past the end of its stream")
        return 0

    def decode(self, cum) -> int:
        """Decode one symbol given its cumulative table (list of 17 ints)."""
        r = self.range >> PRECISION
        v = self.code // r
        if v >= TOTAL:
            raise ValueError("corrupt range-coded stream")
        s = bisect_right(cum, v) - 1
        lo = cum[s]
        self.code -= r * lo
        self.range = r * (cum[s + 1] - lo)
        while self.range < _TOP:
            self.code = (self.code << 8) | self._next()
            self.range <<= 8
        return s

    def decode_symbols(self, freqs) -> np.ndarray:
        cum = cumulative(freqs).tolist()
        return np.array([self.decode(c) for c in cum], dtype=np.int64)


def encode_symbols(symbols, freqs) -> bytes:
    symbols = np.asarray(symbols, dtype=np.int64)
    freqs = np.asarray(freqs, dtype=np.int64).reshape(-1, N_SYMBOLS)
    if len(symbols) != len(freqs):
        raise ValueError("one pmf per symbol is required")
    enc = RangeEncoder()
    enc.encode_symbols(symbols, freqs)
    return enc.finish()


def decode_symbols(data: bytes, freqs) -> np.ndarray:
    freqs = np.asarray(freqs, dtype=np.int64).reshape(-1, N_SYMBOLS)
    return RangeDecoder(data).decode_symbols(freqs)


def ideal_codelength(symbols, freqs) -> float:
    """Sum of ``-log2(f_s / 65536)`` in bits."""
    freqs = np.asarray(freqs, dtype=np.int64).reshape(-1, N_SYMBOLS)
    f = freqs[np.arange(len(freqs)), np.asarray(symbols, dtype=np.int64)]
    return float(-np.log2(f / TOTAL).sum())
