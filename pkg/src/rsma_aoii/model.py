"""Rate mathematics and age-of-incorrect-information metrics.

The transmitter superposes one common stream (decoded by every scheduled
user, then cancelled) and K private streams.  With noise-normalized
channels the SINRs are

    gamma_c,k = |h_k^H p_c|^2 / (1 + sum_i |h_k^H p_i|^2)
    gamma_k   = |h_k^H p_k|^2 / (1 + sum_{i != k} |h_k^H p_i|^2)

where i runs over private precoders only.  Rates are log2(1 + gamma); the
common rate is the minimum common-stream rate over the scheduled set and
is shared between scheduled users as nonnegative portions c_k.

The AoII penalty is f * g: f grows with the time since the receiver last
held accurate information, g measures the process/estimate mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .channel import ChannelSet

SUCCESS_MARGIN = 1e-9  # interior-point solutions sit on constraint boundaries


@dataclass
class PrecoderSet:
    """Common precoder plus K private precoders (rows of ``privates``)."""

    common: np.ndarray    # (N,) complex; exactly zero in SDMA mode
    privates: np.ndarray  # (K, N) complex

    def __post_init__(self) -> None:
        self.common = np.asarray(self.common, dtype=np.complex128)
        self.privates = np.asarray(self.privates, dtype=np.complex128)
        if self.privates.ndim != 2 or self.common.ndim != 1:
            raise ValueError("common must be (N,), privates (K, N)")
        if self.common.shape[0] != self.privates.shape[1]:
            raise ValueError("antenna dimensions disagree")

    @property
    def num_users(self) -> int:
        return self.privates.shape[0]

    def total_power(self) -> float:
        return float(np.sum(np.abs(self.common) ** 2) + np.sum(np.abs(self.privates) ** 2))

    def is_sdma(self) -> bool:
        return not np.any(self.common)


@dataclass
class RateReport:
    sinr_common: np.ndarray           # (K,)
    sinr_private: np.ndarray          # (K,)
    rate_common_per_user: np.ndarray  # (K,) log2(1 + sinr_common)
    rate_private: np.ndarray          # (K,) log2(1 + sinr_private)
    common_rate: float                # min over scheduled users, 0 if none


@dataclass
class CommonRateShares:
    shares: np.ndarray  # (K,) nonnegative, sums to <= common_rate over scheduled


@dataclass
class AoiiConfig:
    """Penalty variant selection; thresholds only matter for the
    threshold variants."""

    f_variant: str = "linear"    # "linear" | "threshold"
    g_variant: str = "square"    # "square" | "threshold"
    zeta: float = 0.0            # time threshold for f_variant="threshold"
    c_thresh: float = 0.0        # value threshold for g_variant="threshold"

    def __post_init__(self) -> None:
        if self.f_variant not in ("linear", "threshold"):
            raise ValueError(f"unknown f_variant {self.f_variant!r}")
        if self.g_variant not in ("square", "threshold"):
            raise ValueError(f"unknown g_variant {self.g_variant!r}")
        if self.zeta < 0 or self.c_thresh < 0:
            raise ValueError("zeta and c_thresh must be >= 0")


def _check_user(channels: ChannelSet, precoders: PrecoderSet, k: int) -> None:
    if not 0 <= k < channels.num_users:
        raise IndexError(f"user index {k} out of range")
    if precoders.privates.shape != channels.vectors.shape:
        raise ValueError("precoder/channel dimensions disagree")


def sinr_private(channels: ChannelSet, precoders: PrecoderSet, k: int) -> float:
    """Private-stream SINR of user k (common stream already cancelled)."""
    _check_user(channels, precoders, k)
    h = channels.vectors[k]
    gains = np.abs(precoders.privates @ h.conj()) ** 2
    interference = float(np.sum(gains) - gains[k])
    return float(gains[k] / (1.0 + interference))


def sinr_common(channels: ChannelSet, precoders: PrecoderSet, k: int) -> float:
    """Common-stream SINR at user k; every private stream interferes."""
    _check_user(channels, precoders, k)
    h = channels.vectors[k]
    num = float(np.abs(np.vdot(h, precoders.common)) ** 2)
    interference = float(np.sum(np.abs(precoders.privates @ h.conj()) ** 2))
    return num / (1.0 + interference)


def rate_report(channels: ChannelSet, precoders: PrecoderSet,
                scheduled: Iterable[int]) -> RateReport:
    """All per-user SINRs/rates plus the decodable common rate.

    The common rate is min over the scheduled set; an empty set yields 0.
    """
    k_all = range(channels.num_users)
    g_c = np.array([sinr_common(channels, precoders, k) for k in k_all])
    g_p = np.array([sinr_private(channels, precoders, k) for k in k_all])
    r_c = np.log2(1.0 + g_c)
    r_p = np.log2(1.0 + g_p)
    sched = sorted(set(scheduled))
    common = float(min(r_c[k] for k in sched)) if sched else 0.0
    return RateReport(g_c, g_p, r_c, r_p, common)


def success_check(report: RateReport, shares: CommonRateShares,
                  required: np.ndarray, k: int) -> bool:
    """True when user k's common share plus private rate meets its target."""
    if not 0 <= k < len(report.rate_private):
        raise IndexError(f"user index {k} out of range")
    total = float(shares.shares[k]) + float(report.rate_private[k])
    return total >= float(required[k]) - SUCCESS_MARGIN


def _age_factor(cfg: AoiiConfig, age: float) -> float:
    if cfg.f_variant == "linear":
        return float(age)
    return 1.0 if age >= cfg.zeta else 0.0


def _gap(cfg: AoiiConfig, x: float, xhat: float) -> float:
    if cfg.g_variant == "square":
        return float((x - xhat) ** 2)
    return 1.0 if abs(x - xhat) >= cfg.c_thresh else 0.0


def aoii_penalty(cfg: AoiiConfig, t: float, v: float, x: float, xhat: float) -> float:
    """Instantaneous penalty f(t - v) * g(x, xhat)."""
    if t < v:
        raise ValueError(f"t={t} earlier than last-accurate time v={v}")
    return _age_factor(cfg, t - v) * _gap(cfg, x, xhat)


def next_slot_aoii(cfg: AoiiConfig, t: float, v: float, x_next: float,
                   xhat_next: float, success: bool) -> float:
    """Penalty one slot ahead: zero on success, f(t+1-v)*g otherwise.

    v = t+1 is allowed (freshness renewed by other means gives zero age).
    """
    if t + 1 < v:
        raise ValueError(f"t+1={t + 1} earlier than last-accurate time v={v}")
    if success:
        return 0.0
    return _age_factor(cfg, t + 1 - v) * _gap(cfg, x_next, xhat_next)


def age_gap_weight(cfg: AoiiConfig, age: float, x: float, xhat: float) -> float:
    """Scheduling weight: next-slot penalty if the user were skipped."""
    if age < 0:
        raise ValueError("negative age")
    return _age_factor(cfg, age) * _gap(cfg, x, xhat)
