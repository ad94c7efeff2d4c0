"""Seedable, counter-based randomness for reproducible experiments.

Every random draw in this package flows through the Philox bit generator
keyed via ``numpy.random.SeedSequence``.  Gaussian samples are produced by
an explicit Box-Muller transform on the generator's raw uniform output, so
a given seed yields bit-identical streams across platforms and numpy
versions (Philox raw streams and SeedSequence hashing are stable API;
distribution methods such as ``Generator.normal`` are not relied on).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Philox generator keyed by ``seed`` plus an integer derivation path.

    Distinct paths give statistically independent streams; the same
    (seed, path) always gives the same stream.
    """
    entropy = [int(seed) & _MASK64] + [int(p) & _MASK64 for p in path]
    ss = np.random.SeedSequence(entropy)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *path: int) -> int:
    """Collapse (seed, path) into a single 64-bit child seed."""
    entropy = [int(seed) & _MASK64] + [int(p) & _MASK64 for p in path]
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def standard_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    """N(0,1) samples via Box-Muller on the generator's uniforms."""
    if size == 0:
        return np.empty(0)
    m = (size + 1) // 2
    # 1 - U in (0, 1] keeps the log finite.
    u1 = 1.0 - rng.random(m)
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:size]


def complex_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    """CN(0,1) samples: variance 1/2 per real/imaginary part."""
    re = standard_normal(rng, size)
    im = standard_normal(rng, size)
    return (re + 1j * im) / np.sqrt(2.0)
