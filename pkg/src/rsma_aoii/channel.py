"""Downlink channel generation.

Channels are noise-normalized complex gain vectors (noise power = 1), so
the transmit power budget alone sets the operating SNR.  Two generators
are provided: the deterministic two-user geometric pair used for angle
sweeps, and i.i.d. Rayleigh fading.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .rng import complex_normal, make_rng


@dataclass(frozen=True)
class ChannelSet:
    """K complex channel vectors of length N, one row per user."""

    vectors: np.ndarray  # (K, N) complex128, read-only

    def __post_init__(self) -> None:
        v = np.asarray(self.vectors, dtype=np.complex128)
        if v.ndim != 2:
            raise ValueError("channel vectors must form a (K, N) array")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("need K >= 1 users and N >= 1 antennas")
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("all-zero channel vector")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def num_users(self) -> int:
        return self.vectors.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.vectors.shape[1]


def geometric_pair(num_antennas: int, theta: float) -> ChannelSet:
    """Two-user channel pair with angle ``theta`` between the users.

    h_1 has all entries 1; entry n of h_2 is exp(j*n*theta).  Both vectors
    have squared norm equal to ``num_antennas``.
    """
    if num_antennas < 1:
        raise ValueError("num_antennas must be >= 1")
    n = np.arange(num_antennas)
    h1 = np.ones(num_antennas, dtype=np.complex128)
    h2 = np.exp(1j * theta * n)
    return ChannelSet(np.stack([h1, h2]))


def rayleigh(num_antennas: int, num_users: int, seed: int) -> ChannelSet:
    """i.i.d. CN(0,1) channel entries; pure function of (N, K, seed)."""
    if num_antennas < 1 or num_users < 1:
        raise ValueError("num_antennas and num_users must be >= 1")
    rng = make_rng(seed)
    rows = []
    for _ in range(num_users):
        h = complex_normal(rng, num_antennas)
        # Degenerate draws (probability zero, but cheap to guard) are redrawn.
        while not np.any(h):
            h = complex_normal(rng, num_antennas)
        rows.append(h)
    return ChannelSet(np.stack(rows))


def channel_gain(h: np.ndarray) -> float:
    """Squared Euclidean norm of a channel vector."""
    h = np.asarray(h)
    if h.size == 0:
        raise ValueError("empty channel vector")
    return float(np.real(np.vdot(h, h)))


def channels_to_json(channels: ChannelSet) -> str:
    """Serialize as an array of users, each an array of [re, im] pairs."""
    data = [[[float(z.real), float(z.imag)] for z in row] for row in channels.vectors]
    return json.dumps(data)


def channels_from_json(text: str) -> ChannelSet:
    data = json.loads(text)
    rows = [np.array([complex(re, im) for re, im in row]) for row in data]
    return ChannelSet(np.stack(rows))
