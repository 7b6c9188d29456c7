"""Two-universal hashing over GF(2) and min-entropy accounting.

A drawn hash is a random affine map f(x) = Mx + b on w-bit encodings.  For
distinct inputs the collision probability over the draw is exactly 2^{-l},
and the first k output bits of an (l, w) draw are themselves a valid (k, w)
draw, so one long draw can be split into a prefix shared as common randomness
and a suffix that is actually communicated.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import MismatchedSupport, OutOfRange

#: cap on exhaustive family enumeration (number of seeds)
ENUMERATION_CAP = 1 << 24


def encoding_width(universe_size: int) -> int:
    if universe_size < 1:
        raise OutOfRange("universe must be nonempty")
    return max(1, int(math.ceil(math.log2(universe_size)))) if universe_size > 1 else 1


def encode_universe(universe_size: int, width: int | None = None) -> np.ndarray:
    """Bit matrix (size, w) giving the binary encoding of each index."""
    w = width if width is not None else encoding_width(universe_size)
    if universe_size > (1 << w):
        raise OutOfRange("encoding width too small for universe")
    idx = np.arange(universe_size, dtype=np.int64)
    return ((idx[:, None] >> np.arange(w)[None, :]) & 1).astype(np.uint8)


@dataclass(frozen=True)
class HashFamily:
    """One member of the affine family, f(x) = Mx + b over GF(2)."""

    width: int
    out_bits: int
    matrix: np.ndarray  # (out_bits, width) uint8
    offset: np.ndarray  # (out_bits,) uint8

    def __post_init__(self):
        if self.matrix.shape != (self.out_bits, self.width):
            raise MismatchedSupport("matrix shape disagrees with declared sizes")
        if self.offset.shape != (self.out_bits,):
            raise MismatchedSupport("offset length disagrees with output size")

    def apply_bits(self, bits: np.ndarray) -> np.ndarray:
        """Hash bit rows; ``bits`` has shape (..., width)."""
        return (bits @ self.matrix.T + self.offset) % 2

    def apply_packed(self, bits: np.ndarray) -> np.ndarray:
        """Hash bit rows and pack each output into a Python-int scalar array."""
        out = self.apply_bits(bits)
        weights = (1 << np.arange(self.out_bits, dtype=np.int64))
        return out @ weights

    def prefix(self, k: int) -> "HashFamily":
        """First k output bits, itself a uniform draw of size k."""
        if not 0 <= k <= self.out_bits:
            raise OutOfRange("prefix length out of range")
        return HashFamily(self.width, k, self.matrix[:k], self.offset[:k])

    def suffix(self, k: int) -> "HashFamily":
        """Output bits from position k onward."""
        if not 0 <= k <= self.out_bits:
            raise OutOfRange("suffix start out of range")
        return HashFamily(self.width, self.out_bits - k,
                          self.matrix[k:], self.offset[k:])


def draw_hash(width: int, out_bits: int, seed) -> HashFamily:
    """Draw a uniform member of the affine family.

    ``seed`` may be an integer, a sequence (master seed plus stream index),
    or an existing numpy Generator.
    """
    if out_bits < 0 or width < 1:
        raise OutOfRange("need width >= 1 and out_bits >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    block = rng.integers(0, 2, size=(out_bits, width + 1), dtype=np.uint8)
    return HashFamily(width, out_bits, block[:, :width],
                      np.ascontiguousarray(block[:, width]))


def family_size(width: int, out_bits: int) -> int:
    return 1 << (out_bits * (width + 1))


def enumerate_family(width: int, out_bits: int):
    """Yield every member of the affine family, in a fixed canonical order."""
    total = family_size(width, out_bits)
    if total > ENUMERATION_CAP:
        raise OutOfRange("family too large to enumerate")
    n_mat = out_bits * width
    for code in range(total):
        mat_code = code >> out_bits
        off_code = code & ((1 << out_bits) - 1)
        matrix = np.array(
            [(mat_code >> i) & 1 for i in range(n_mat)], dtype=np.uint8
        ).reshape(out_bits, width)
        offset = np.array(
            [(off_code >> i) & 1 for i in range(out_bits)], dtype=np.uint8
        )
        yield HashFamily(width, out_bits, matrix, offset)


# ---------------------------------------------------------------------------
# min-entropy and extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MinEntropyReport:
    value: float          # conditional min-entropy in bits
    q_z: np.ndarray       # the conditioning distribution actually used
    optimized: bool


def min_entropy(p_xz: np.ndarray, q_z="optimize") -> MinEntropyReport:
    """Conditional min-entropy -log2 max_{x,z} P(x,z) / Q(z).

    ``p_xz`` is a joint table with x on rows and z on columns.  Pass an
    explicit distribution for ``q_z`` or the string ``"optimize"`` for the
    maximizing choice Q(z) proportional to max_x P(x, z).
    """
    p = np.asarray(p_xz, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if np.any(p < 0) or p.sum() <= 0:
        raise OutOfRange("joint table must be a nonnegative mass table")
    col_max = p.max(axis=0)
    if isinstance(q_z, str):
        if q_z != "optimize":
            raise OutOfRange(f"unknown conditioning mode {q_z!r}")
        total = float(col_max.sum())
        q = col_max / total
        return MinEntropyReport(-math.log2(total), q, True)
    q = np.asarray(q_z, dtype=float)
    if q.shape != (p.shape[1],):
        raise MismatchedSupport("conditioning distribution has the wrong length")
    ratios = []
    for j in range(p.shape[1]):
        if col_max[j] <= 0:
            continue
        if q[j] <= 0:
            raise OutOfRange("conditioning distribution misses a live column")
        ratios.append(col_max[j] / q[j])
    return MinEntropyReport(-math.log2(max(ratios)), q, False)


def extraction_bound(k: int, h_min: float, log_v: float = 0.0) -> float:
    """Leftover-hash bound on the seed-average key defect.

    Half the square root of |K| |V| 2^{-Hmin} with |K| = 2^k and
    log2 |V| = ``log_v``.
    """
    if k < 0 or log_v < 0:
        raise OutOfRange("key size and side information must be nonnegative")
    return 0.5 * math.sqrt(2.0 ** (k + log_v - h_min))


def extract(samples: Sequence[int], universe_size: int, k: int, seed,
            probs: np.ndarray | None = None,
            log_v: float = 0.0) -> tuple[np.ndarray, float]:
    """Hash source samples down to k-bit keys.

    Returns the packed keys together with the leftover-hash uniformity
    bound.  ``probs`` is the source pmf over universe indices; uniform if
    omitted.
    """
    w = encoding_width(universe_size)
    fam = draw_hash(w, k, seed)
    enc = encode_universe(universe_size, w)
    idx = np.asarray(samples, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= universe_size):
        raise OutOfRange("sample index outside the universe")
    keys = fam.apply_packed(enc[idx])
    if probs is None:
        h_min = math.log2(universe_size)
    else:
        p = np.asarray(probs, dtype=float)
        if p.shape != (universe_size,):
            raise MismatchedSupport("pmf length disagrees with universe size")
        h_min = -math.log2(float(p.max()))
    return keys, extraction_bound(k, h_min, log_v)
