"""Semantic-process dynamics and experiment harnesses.

Each user tracks a scalar process X (redrawn i.i.d. N(0,1) every slot),
the receiver-side estimate Xhat (the X value delivered by the last
successful update), and the timestamps V (last slot with accurate
information) and U (last successful packet).  A slot decision is scored
by the staleness weights w_k = f(t+1 - V_k) * g(X_k, Xhat_k): the penalty
the system pays at t+1 for every user left out or failed.

Three harnesses mirror the experiment families: the deterministic
two-user angle sweep (scheduled-user counts vs. required rate), paired
Rayleigh Monte Carlo (RSMA vs. SDMA AoII and scheduling percentages), and
closed-loop multi-slot trajectories.  Realizations share derived Philox
streams, so both modes of a pair always see bit-identical channels,
process values, and age draws.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .channel import ChannelSet, geometric_pair, rayleigh
from .config import ExperimentConfig, parse_v_mode
from .model import AoiiConfig, age_gap_weight
from .optimizer import (OptimizerConfig, ScheduleResult, SlotProblem,
                        solve_slot)
from .rng import derive_seed, make_rng, standard_normal

# Stream tags: sub-streams are keyed by (seed, tag, index) so monte-carlo
# realization r and trajectory slot t draw from identical streams when
# r == t (a one-slot trajectory reproduces the first realization).
TAG_CHANNEL = 1
TAG_PROCESS = 2
TAG_VMODE = 3


@dataclass
class SemanticState:
    x: np.ndarray      # (K,) current process values
    xhat: np.ndarray   # (K,) receiver estimates
    v: np.ndarray      # (K,) last-accurate timestamps
    u: np.ndarray      # (K,) last-success timestamps

    @classmethod
    def initial(cls, num_users: int, v0: Optional[np.ndarray] = None) -> "SemanticState":
        v = np.zeros(num_users, dtype=np.int64) if v0 is None else np.asarray(v0, dtype=np.int64)
        return cls(np.zeros(num_users), np.zeros(num_users), v.copy(), v.copy())


def step_process(state: SemanticState, rng: np.random.Generator) -> SemanticState:
    """Redraw every user's process value; estimates change only on ACK."""
    x = standard_normal(rng, len(state.x))
    return SemanticState(x, state.xhat.copy(), state.v.copy(), state.u.copy())


def apply_ack(state: SemanticState, successes, t: int) -> SemanticState:
    """Successful users deliver X_t: estimate refreshed, accurate at t+1."""
    if t < 0:
        raise ValueError("slot index must be >= 0")
    out = SemanticState(state.x.copy(), state.xhat.copy(), state.v.copy(), state.u.copy())
    for k in successes:
        out.u[k] = t
        out.xhat[k] = state.x[k]
        out.v[k] = t + 1
    return out


def slot_weights(aoii: AoiiConfig, t: int, state: SemanticState) -> np.ndarray:
    """Per-user AoII paid at t+1 if the user is skipped (slow-process form)."""
    ages = (t + 1) - state.v
    return np.array([age_gap_weight(aoii, float(ages[k]), float(state.x[k]),
                                    float(state.xhat[k]))
                     for k in range(len(state.x))])


@dataclass
class MetricsRecord:
    kind: str
    rows: List[dict]
    aggregates: List[dict]
    pct_rsma_more: List[dict] = field(default_factory=list)
    error_count: int = 0
    errors: List[dict] = field(default_factory=list)
    cell_seconds: List[dict] = field(default_factory=list)


def _optimizer_config(cfg: ExperimentConfig) -> OptimizerConfig:
    o = cfg.optimizer
    return OptimizerConfig(epsilon=o.epsilon, max_sca_iters=o.max_sca_iters,
                           z_round_delta=o.z_round_delta, big_m=o.big_m,
                           solver_tol=o.solver_tol,
                           solver_max_iter=o.solver_max_iter)


def _solve_cell(problem: SlotProblem, modes: List[str],
                opt_cfg: OptimizerConfig) -> Dict[str, ScheduleResult]:
    """One slot problem under every requested mode, SDMA solved first and
    reused as the RSMA warm-start donor."""
    sdma = solve_slot(problem, "SDMA", opt_cfg)
    out: Dict[str, ScheduleResult] = {}
    if "SDMA" in modes:
        out["SDMA"] = sdma
    if "RSMA" in modes:
        out["RSMA"] = solve_slot(problem, "RSMA", opt_cfg, sdma_result=sdma)
    return out


def _draw_initial_v(cfg: ExperimentConfig, r: int) -> np.ndarray:
    kind, values = parse_v_mode(cfg.v_mode, cfg.K)
    if kind == "zero":
        return np.zeros(cfg.K, dtype=np.int64)
    if kind == "fixed":
        return np.asarray(values, dtype=np.int64)
    rng = make_rng(cfg.seed, TAG_VMODE, r)
    return rng.integers(0, values + 1, size=cfg.K).astype(np.int64)


def sweep_scheduled_users(cfg: ExperimentConfig) -> MetricsRecord:
    """Scheduled-user counts on the deterministic two-user channel pair.

    One process draw (seeded) sets the weights for the whole sweep, so
    every (theta, snr, I, mode) cell compares the same slot.
    """
    if cfg.scenario != "geometric":
        raise ValueError("sweep_scheduled_users requires scenario=geometric")
    opt_cfg = _optimizer_config(cfg)
    x = standard_normal(make_rng(cfg.seed, TAG_PROCESS), cfg.K)
    state = SemanticState.initial(cfg.K)
    state.x = x
    weights = slot_weights(cfg.aoii_config(), 0, state)

    rows: List[dict] = []
    errors: List[dict] = []
    cell_seconds: List[dict] = []
    for theta in cfg.theta:
        channels = geometric_pair(cfg.N, theta)
        for snr in cfg.snr_db:
            p_total = 10.0 ** (snr / 10.0)
            for i_val in cfg.I_values:
                t0 = time.perf_counter()
                try:
                    problem = SlotProblem(channels, np.full(cfg.K, i_val),
                                          weights, p_total)
                    results = _solve_cell(problem, cfg.modes, opt_cfg)
                    for mode in cfg.modes:
                        res = results[mode]
                        rows.append({"scenario": "geometric", "mode": mode,
                                     "theta": theta, "snr_db": snr, "I": i_val,
                                     "num_scheduled": len(res.scheduled),
                                     "sca_iters": res.sca_iterations, "error": ""})
                except Exception as exc:  # record, keep sweeping
                    for mode in cfg.modes:
                        rows.append({"scenario": "geometric", "mode": mode,
                                     "theta": theta, "snr_db": snr, "I": i_val,
                                     "num_scheduled": -1, "sca_iters": 0,
                                     "error": f"{type(exc).__name__}: {exc}"})
                    errors.append({"theta": theta, "snr_db": snr, "I": i_val,
                                   "error": f"{type(exc).__name__}: {exc}"})
                cell_seconds.append({"theta": theta, "snr_db": snr, "I": i_val,
                                     "seconds": time.perf_counter() - t0})

    aggregates = _sweep_aggregates(cfg, rows)
    return MetricsRecord("sweep-users", rows, aggregates, [],
                         len(errors), errors, cell_seconds)


def _sweep_aggregates(cfg: ExperimentConfig, rows: List[dict]) -> List[dict]:
    """Per (mode, theta, snr): largest I still scheduling all users, plus
    empirical monotonicity violations of the count in I."""
    aggregates = []
    for mode in cfg.modes:
        for theta in cfg.theta:
            for snr in cfg.snr_db:
                cell = [r for r in rows
                        if r["mode"] == mode and r["theta"] == theta
                        and r["snr_db"] == snr and not r["error"]]
                cell.sort(key=lambda r: r["I"])
                counts = [r["num_scheduled"] for r in cell]
                full = [r["I"] for r in cell if r["num_scheduled"] == cfg.K]
                violations = sum(1 for a, b in zip(counts, counts[1:]) if b > a)
                aggregates.append({
                    "mode": mode, "theta": theta, "snr_db": snr,
                    "max_I_all_scheduled": max(full) if full else None,
                    "monotonicity_violations": violations,
                })
    return aggregates


def _mc_realization(cfg_data: dict, r: int) -> Tuple[List[dict], List[dict]]:
    """Worker for one Monte-Carlo realization (process-pool friendly)."""
    cfg = ExperimentConfig.model_validate(cfg_data)
    opt_cfg = _optimizer_config(cfg)
    channels = rayleigh(cfg.N, cfg.K, derive_seed(cfg.seed, TAG_CHANNEL, r))
    x = standard_normal(make_rng(cfg.seed, TAG_PROCESS, r), cfg.K)
    v0 = _draw_initial_v(cfg, r)
    t = int(np.max(v0))
    state = SemanticState.initial(cfg.K, v0)
    state.x = x
    weights = slot_weights(cfg.aoii_config(), t, state)
    v_label = cfg.v_mode

    rows: List[dict] = []
    errors: List[dict] = []
    for snr in cfg.snr_db:
        p_total = 10.0 ** (snr / 10.0)
        for i_val in cfg.I_values:
            try:
                problem = SlotProblem(channels, np.full(cfg.K, i_val),
                                      weights, p_total)
                results = _solve_cell(problem, cfg.modes, opt_cfg)
                for mode in cfg.modes:
                    res = results[mode]
                    rows.append({"scenario": "rayleigh", "mode": mode,
                                 "snr_db": snr, "I": i_val, "realization": r,
                                 "v_mode": v_label, "aoii": res.achieved_aoii,
                                 "num_scheduled": len(res.scheduled),
                                 "sca_iters": res.sca_iterations})
            except Exception as exc:
                errors.append({"realization": r, "snr_db": snr, "I": i_val,
                               "error": f"{type(exc).__name__}: {exc}"})
    return rows, errors


def monte_carlo_aoii(cfg: ExperimentConfig) -> MetricsRecord:
    """Paired Rayleigh Monte Carlo: both modes see identical channels,
    process values, and age draws within each realization."""
    if cfg.scenario != "rayleigh":
        raise ValueError("monte_carlo_aoii requires scenario=rayleigh")
    cfg_data = cfg.model_dump()
    t0 = time.perf_counter()
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_mc_realization, [cfg_data] * cfg.num_realizations,
                                     range(cfg.num_realizations)))
    else:
        outcomes = [_mc_realization(cfg_data, r) for r in range(cfg.num_realizations)]

    rows: List[dict] = []
    errors: List[dict] = []
    for rw, er in outcomes:  # realization order, not completion order
        rows.extend(rw)
        errors.extend(er)
    aggregates, pct = _mc_aggregates(cfg, rows)
    elapsed = [{"seconds": time.perf_counter() - t0}]
    return MetricsRecord("monte-carlo", rows, aggregates, pct,
                         len(errors), errors, elapsed)


def _mc_aggregates(cfg: ExperimentConfig, rows: List[dict]) -> Tuple[List[dict], List[dict]]:
    aggregates = []
    for mode in cfg.modes:
        for snr in cfg.snr_db:
            for i_val in cfg.I_values:
                cell = [r for r in rows if r["mode"] == mode
                        and r["snr_db"] == snr and r["I"] == i_val]
                if not cell:
                    continue
                aggregates.append({
                    "mode": mode, "snr_db": snr, "I": i_val,
                    "mean_aoii": float(np.mean([r["aoii"] for r in cell])),
                    "mean_scheduled": float(np.mean([r["num_scheduled"] for r in cell])),
                    "num_rows": len(cell),
                })
    pct = []
    if "RSMA" in cfg.modes and "SDMA" in cfg.modes:
        for snr in cfg.snr_db:
            for i_val in cfg.I_values:
                by_real: Dict[int, Dict[str, int]] = {}
                for r in rows:
                    if r["snr_db"] == snr and r["I"] == i_val:
                        by_real.setdefault(r["realization"], {})[r["mode"]] = r["num_scheduled"]
                paired = [v for v in by_real.values() if len(v) == 2]
                if not paired:
                    continue
                more = sum(1 for v in paired if v["RSMA"] > v["SDMA"])
                pct.append({"snr_db": snr, "I": i_val,
                            "pct_rsma_more": 100.0 * more / len(paired),
                            "num_paired": len(paired)})
    return aggregates, pct


def run_trajectory(cfg: ExperimentConfig) -> MetricsRecord:
    """Closed loop over cfg.num_slots: decide, transmit, ACK, advance.

    The recorded per-slot AoII is the penalty charged at t+1 under the
    slow-process convention: sum of w_k over users that were not served.
    A one-slot trajectory therefore reproduces monte-carlo realization 0.
    """
    opt_cfg = _optimizer_config(cfg)
    aoii_cfg = cfg.aoii_config()
    rows: List[dict] = []
    errors: List[dict] = []
    t0 = time.perf_counter()
    geometric = cfg.scenario == "geometric"
    base_channels = geometric_pair(cfg.N, cfg.theta[0]) if geometric else None

    for snr in cfg.snr_db:
        p_total = 10.0 ** (snr / 10.0)
        for i_val in cfg.I_values:
            for mode in cfg.modes:
                v0 = _draw_initial_v(cfg, 0)
                # Nonzero initial ages push V into the past relative to t=0.
                state = SemanticState.initial(cfg.K, -v0)
                for t in range(cfg.num_slots):
                    state = step_process(state, make_rng(cfg.seed, TAG_PROCESS, t))
                    weights = slot_weights(aoii_cfg, t, state)
                    channels = base_channels if geometric else rayleigh(
                        cfg.N, cfg.K, derive_seed(cfg.seed, TAG_CHANNEL, t))
                    try:
                        problem = SlotProblem(channels, np.full(cfg.K, i_val),
                                              weights, p_total)
                        results = _solve_cell(problem, [mode], opt_cfg)
                        res = results[mode]
                        successes = res.scheduled
                        rows.append({"scenario": cfg.scenario, "mode": mode,
                                     "snr_db": snr, "I": i_val, "slot": t,
                                     "v_mode": cfg.v_mode,
                                     "aoii": res.achieved_aoii,
                                     "num_scheduled": len(res.scheduled),
                                     "sca_iters": res.sca_iterations})
                    except Exception as exc:
                        errors.append({"snr_db": snr, "I": i_val, "slot": t,
                                       "mode": mode,
                                       "error": f"{type(exc).__name__}: {exc}"})
                        successes = []
                    state = apply_ack(state, successes, t)

    aggregates = [{"mode": mode, "snr_db": snr, "I": i_val,
                   "total_aoii": float(sum(r["aoii"] for r in rows
                                           if r["mode"] == mode and r["snr_db"] == snr
                                           and r["I"] == i_val))}
                  for mode in cfg.modes for snr in cfg.snr_db for i_val in cfg.I_values]
    elapsed = [{"seconds": time.perf_counter() - t0}]
    return MetricsRecord("trajectory", rows, aggregates, [],
                         len(errors), errors, elapsed)
