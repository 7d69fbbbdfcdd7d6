"""Deterministic 64-bit PRNG with explicit state and stream splitting.

The generator is a counter-mode SplitMix64 variant: output ``i`` of a stream
seeded with ``s`` is ``mix64(s + (i + 1) * GAMMA)`` where ``GAMMA`` is the
64-bit golden-ratio increment and ``mix64`` is the SplitMix64 finalizer
(xor-shift / multiply avalanche).  Because each output depends only on
``(seed, index)`` the whole stream can be produced vectorized, out of order,
or in parallel, and any draw is reproducible from the two integers alone.

Normal deviates come from the Box-Muller transform applied to consecutive
pairs of uniforms; see :meth:`RngStream.normal` for the exact pairing rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_MASK = 0xFFFFFFFFFFFFFFFF

_TWO_POW_NEG53 = 2.0 ** -53


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a python integer (mod 2**64)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def split(seed: int, key: int) -> int:
    """Derive an independent child seed from ``seed`` and a stream ``key``.

    Rule: ``mix64(seed XOR mix64(key + 1))``.  Mixing the key before the
    xor decorrelates children with adjacent keys; mixing again afterwards
    decorrelates children from the parent's own output stream.
    """
    return mix64((seed ^ mix64(key + 1)) & _MASK)


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    """Vectorized SplitMix64 finalizer on a uint64 array."""
    z = z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= np.uint64(_M1)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_M2)
        z ^= z >> np.uint64(31)
    return z


@dataclass
class RngStream:
    """A counter-based random stream: state is ``(seed, counter)`` only."""

    seed: int
    counter: int = field(default=0)

    def next_u64(self, n: int) -> np.ndarray:
        """Return the next ``n`` raw 64-bit outputs and advance the counter."""
        if n < 0:
            raise ValueError(f"n must be non-negative, got {n}")
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * np.uint64(GAMMA)
        return _mix64_vec(state)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` uniforms in [0, 1): top 53 bits scaled by 2**-53."""
        bits = self.next_u64(n) >> np.uint64(11)
        return bits.astype(np.float64) * _TWO_POW_NEG53

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Gaussian deviates via Box-Muller.

        For ``n`` values, ``m = ceil(n / 2)`` pairs are formed from ``2m``
        consecutive raw outputs: ``u1`` from outputs ``0..m-1`` mapped to
        (0, 1] (so ``log`` is safe) and ``u2`` from outputs ``m..2m-1``
        mapped to [0, 1).  Pair ``j`` yields::

            r  = sqrt(-2 ln u1[j])
            z0 = r cos(2 pi u2[j])   -> output[2 j]
            z1 = r sin(2 pi u2[j])   -> output[2 j + 1]

        and the interleaved sequence is truncated to ``n`` and reshaped.
        """
        if std < 0:
            raise ValueError(f"std must be non-negative, got {std}")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        raw = self.next_u64(2 * m)
        u1 = ((raw[:m] >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _TWO_POW_NEG53
        u2 = (raw[m:] >> np.uint64(11)).astype(np.float64) * _TWO_POW_NEG53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * m, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return (mean + std * out[:n]).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """A permutation of ``range(n)``: argsort of ``n`` raw outputs.

        Stable sort with index tie-break, so the result is a deterministic
        pure function of ``(seed, counter)``.
        """
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def integers(self, n: int, bound: int) -> np.ndarray:
        """``n`` integers in [0, bound) by modulo reduction.

        Modulo bias is < bound / 2**64, negligible for the bounds used here
        (dataset sizes), and keeps the mapping trivially portable.
        """
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        return (self.next_u64(n) % np.uint64(bound)).astype(np.int64)
