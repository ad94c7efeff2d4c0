"""Joint scheduling / precoding / power allocation by successive convex
approximation.

One slot problem: given channels, per-user required rates I_k, staleness
weights w_k and a power budget, pick binary scheduling indicators (z_k = 1
means user k is NOT scheduled), precoders and common-rate shares that
minimize the weighted sum of skipped users, sum_k w_k z_k.

The conditional structure is removed with a big-M constant, the rate and
SINR couplings are lifted through epigraph variables (alpha, beta, omega,
sigma_p, sigma_c), and the remaining nonconvex pieces are replaced by
first-order expansions around the previous iterate:

  * log2(1 + beta) around beta0 (concave, tangent overestimates),
  * |h^H p|^2 / sigma around (p0, sigma0) (jointly convex, tangent
    underestimates),
  * prod_k z_k = 0 around z0.

Each iteration solves one conic program (exponential cones host the exact
log terms, second-order cones the interference bounds and the power ball)
and feeds forward P, z, beta, sigma_p, sigma_c.  The relaxed z is rounded
to a binary schedule, shares are re-allocated, and the schedule is audited
against the exact rate formulas before being returned.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import conic
from .channel import ChannelSet, channel_gain
from .model import CommonRateShares, PrecoderSet, rate_report, sinr_private

LN2 = math.log(2.0)

# Margin for the post-solve binary rounding and the schedule audit.  Rate
# constraints of scheduled users are active at the relaxed optimum, so the
# exact recomputed rates carry the solver's feasibility slop, which stacks
# up to a few 1e-6 bits through the exp-cone/SOC chain; demotion decisions
# must tolerate it (but stay well under the 1e-4 feasibility audit bound).
ROUNDING_MARGIN = 5e-5

# The objective can flatline while the relaxed z still moves (its weighted
# sum is stationary long before the individual entries are).  Iterations
# continue until z is stationary too, so the returned iterate carries no
# live big-M slack into the rounding step.  Zero-weight users have no
# objective pressure on their z at all, so the extension is bounded.
Z_SETTLE_TOL = 1e-6
MAX_SETTLE_EXTENSION = 16


@dataclass
class SlotProblem:
    channels: ChannelSet
    required_rates: np.ndarray  # (K,) bits/s/Hz, > 0
    weights: np.ndarray         # (K,) >= 0, AoII-if-skipped
    total_power: float

    def __post_init__(self) -> None:
        self.required_rates = np.asarray(self.required_rates, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        k = self.channels.num_users
        if self.required_rates.shape != (k,) or self.weights.shape != (k,):
            raise ValueError("required_rates and weights must have one entry per user")
        if np.any(self.required_rates <= 0):
            raise ValueError("required rates must be > 0")
        if np.any(self.weights < 0):
            raise ValueError("weights must be >= 0")
        if not self.total_power > 0:
            raise ValueError("total_power must be > 0")


@dataclass
class OptimizerConfig:
    mode: str = "RSMA"              # "RSMA" | "SDMA"
    big_m: Optional[float] = None   # None -> big_m_bound(problem)
    epsilon: float = 1e-4           # SCA stopping tolerance on the objective
    max_sca_iters: int = 100
    z_round_delta: float = 1e-3     # z >= 1 - delta counts as binary 1
    solver_tol: float = 1e-7
    solver_max_iter: int = 200
    # Ablation: use the exact convex form of the "<= beta" SINR bound
    # instead of its first-order expansion.
    exact_beta_upper: bool = False

    def __post_init__(self) -> None:
        if self.mode not in ("RSMA", "SDMA"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.big_m is not None and not self.big_m > 0:
            raise ValueError("big_m must be > 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not 0 < self.z_round_delta < 0.5:
            raise ValueError("z_round_delta must lie in (0, 0.5)")
        if self.max_sca_iters < 1:
            raise ValueError("max_sca_iters must be >= 1")


@dataclass
class SCAState:
    """Expansion point carried between iterations."""

    precoders: PrecoderSet
    z: np.ndarray         # (K,) in [0, 1]; 1 = not scheduled
    beta: np.ndarray      # (K,) >= 0
    sigma_p: np.ndarray   # (K,) >= 1
    sigma_c: np.ndarray   # (K,) >= 1
    objective: float      # sum_k w_k z_k


@dataclass
class ScheduleResult:
    precoders: PrecoderSet
    shares: CommonRateShares
    z_relaxed: np.ndarray
    z_binary: np.ndarray
    scheduled: List[int]
    achieved_aoii: float
    sca_iterations: int
    subproblem_statuses: List[str]
    objective_trace: List[float]
    status: str                      # converged | max_iters | stalled_* | infeasible_init | solver_error_init
    demotions: int = 0
    product_vacuous_iters: List[int] = field(default_factory=list)


@dataclass
class _VarMap:
    c: List[int]
    p_blocks: List[List[int]]  # RSMA: block 0 = common; SDMA: block k = user k
    z: List[int]
    alpha: List[int]
    beta: List[int]
    omega: List[int]
    sigma_p: List[int]
    sigma_c: List[int]
    t_alpha: List[int]
    t_omega: List[int]

    def private_block(self, k: int, rsma: bool) -> List[int]:
        return self.p_blocks[k + 1] if rsma else self.p_blocks[k]


def big_m_bound(problem: SlotProblem) -> float:
    """Upper bound on |I_k - c_k - R_k| over the feasible set."""
    max_gain = max(channel_gain(h) for h in problem.channels.vectors)
    max_rate = math.log2(1.0 + problem.total_power * max_gain)
    return float(np.max(problem.required_rates)) + max_rate + 1.0


def initialize(problem: SlotProblem, cfg: OptimizerConfig) -> SCAState:
    """Matched-filter start: equal private power split, z = 1/2.

    RSMA puts 20% of the budget on the common precoder aimed at the
    weakest user; a zero common precoder would freeze the common-stream
    expansion at zero for every later iteration.
    """
    h = problem.channels.vectors
    k_users, n_ant = h.shape
    p = problem.total_power
    gains = np.array([channel_gain(hk) for hk in h])
    if cfg.mode == "RSMA":
        common_power, private_power = 0.2 * p, 0.8 * p
        weakest = int(np.argmin(gains))
        common = math.sqrt(common_power) * h[weakest] / math.sqrt(gains[weakest])
    else:
        common_power, private_power = 0.0, p
        common = np.zeros(n_ant, dtype=np.complex128)
    per_user = private_power / k_users
    privates = np.stack([math.sqrt(per_user) * h[k] / math.sqrt(gains[k])
                         for k in range(k_users)])
    precoders = PrecoderSet(common, privates)
    z = np.full(k_users, 0.5)
    return _state_with_consistent_epigraph(problem, precoders, z)


def _state_with_consistent_epigraph(problem: SlotProblem, precoders: PrecoderSet,
                                    z: np.ndarray) -> SCAState:
    """Fill beta / sigma_p / sigma_c from the exact SINR definitions."""
    h = problem.channels.vectors
    k_users = h.shape[0]
    beta = np.empty(k_users)
    sigma_p = np.empty(k_users)
    sigma_c = np.empty(k_users)
    for k in range(k_users):
        gains = np.abs(precoders.privates @ h[k].conj()) ** 2
        sigma_p[k] = 1.0 + float(np.sum(gains) - gains[k])
        sigma_c[k] = 1.0 + float(np.sum(gains))
        beta[k] = sinr_private(problem.channels, precoders, k)
    objective = float(problem.weights @ z)
    return SCAState(precoders, np.asarray(z, dtype=float), beta, sigma_p,
                    sigma_c, objective)


def warm_start_state(problem: SlotProblem, precoders: PrecoderSet,
                     z: np.ndarray) -> SCAState:
    """Expansion point built from an externally supplied solution,
    e.g. restarting the full problem from its common-stream-free
    restriction."""
    return _state_with_consistent_epigraph(problem, precoders, np.clip(z, 0.0, 1.0))


def _tangent_ratio_coeffs(h: np.ndarray, block: Sequence[int], sigma_idx: int,
                          p0: np.ndarray, s0: float) -> Dict[int, float]:
    """First-order expansion of |h^H p|^2 / sigma at (p0, s0) as an affine
    row over the stacked precoder block and sigma."""
    q0 = complex(np.vdot(h, p0))
    re_row, im_row = conic.hermitian_product_rows(h, block)
    coeffs: Dict[int, float] = {}
    scale = 2.0 / s0
    if q0.real:
        for i, c in re_row.items():
            coeffs[i] = coeffs.get(i, 0.0) + scale * q0.real * c
    if q0.imag:
        for i, c in im_row.items():
            coeffs[i] = coeffs.get(i, 0.0) + scale * q0.imag * c
    coeffs[sigma_idx] = coeffs.get(sigma_idx, 0.0) - abs(q0) ** 2 / s0 ** 2
    return coeffs


def assemble_subproblem(problem: SlotProblem, state: SCAState,
                        cfg: OptimizerConfig) -> Tuple[conic.ConicProgram, _VarMap, dict]:
    """Build the convex per-iteration program around the current state."""
    h = problem.channels.vectors
    k_users, n_ant = h.shape
    if state.z.shape != (k_users,):
        raise ValueError("state dimensions disagree with problem")
    rsma = cfg.mode == "RSMA"
    big_m = cfg.big_m if cfg.big_m is not None else big_m_bound(problem)
    req = problem.required_rates

    prog = conic.ConicProgram()
    c_idx = prog.add_vars(k_users) if rsma else []
    n_blocks = k_users + 1 if rsma else k_users
    p_blocks = [prog.add_vars(2 * n_ant) for _ in range(n_blocks)]
    z_idx = prog.add_vars(k_users)
    for k in range(k_users):
        prog.objective[z_idx[k]] = float(problem.weights[k])
    alpha_idx = prog.add_vars(k_users)
    beta_idx = prog.add_vars(k_users)
    omega_idx = prog.add_vars(k_users) if rsma else []
    sp_idx = prog.add_vars(k_users)
    sc_idx = prog.add_vars(k_users) if rsma else []
    ta_idx = prog.add_vars(k_users)
    to_idx = prog.add_vars(k_users) if rsma else []
    vm = _VarMap(c_idx, p_blocks, z_idx, alpha_idx, beta_idx, omega_idx,
                 sp_idx, sc_idx, ta_idx, to_idx)

    for k in range(k_users):
        conic.encode_log_lower(alpha_idx[k], ta_idx[k], prog)
        if rsma:
            conic.encode_log_lower(omega_idx[k], to_idx[k], prog)

    for k in range(k_users):
        # I_k - c_k - log2(1 + alpha_k) <= M z_k
        row = {ta_idx[k]: -1.0, z_idx[k]: -big_m}
        if rsma:
            row[c_idx[k]] = -1.0
        prog.add_ineq(row, float(req[k]))

        # c_k + [tangent of log2(1 + beta) at beta0] - I_k <= M (1 - z_k)
        beta0 = float(state.beta[k])
        log0 = math.log2(1.0 + beta0)
        slope = 1.0 / ((1.0 + beta0) * LN2)
        row = {beta_idx[k]: slope, z_idx[k]: big_m}
        if rsma:
            row[c_idx[k]] = 1.0
        prog.add_ineq(row, log0 - slope * beta0 - float(req[k]) - big_m)

        if rsma:
            # sum_j c_j <= log2(1 + omega_k) + M z_k
            row = {c_idx[j]: 1.0 for j in range(k_users)}
            row[to_idx[k]] = -1.0
            row[z_idx[k]] = -big_m
            prog.add_ineq(row, 0.0)

        # Private SINR tangents: alpha_k below, beta_k above the ratio.
        blk = vm.private_block(k, rsma)
        tangent = _tangent_ratio_coeffs(h[k], blk, sp_idx[k],
                                        state.precoders.privates[k],
                                        float(state.sigma_p[k]))
        row = {alpha_idx[k]: 1.0}
        for i, c in tangent.items():
            row[i] = row.get(i, 0.0) - c
        prog.add_ineq(row, 0.0)

        if cfg.exact_beta_upper:
            # |h^H p_k|^2 <= sigma_p,k * beta_k as a rotated cone.
            re_row, im_row = conic.hermitian_product_rows(h[k], blk)
            u_rows = [({i: 2.0 * c for i, c in re_row.items()}, 0.0),
                      ({i: 2.0 * c for i, c in im_row.items()}, 0.0),
                      ({sp_idx[k]: 1.0, beta_idx[k]: -1.0}, 0.0)]
            prog.add_soc(u_rows, ({sp_idx[k]: 1.0, beta_idx[k]: 1.0}, 0.0))
        else:
            row = dict(tangent)
            row[beta_idx[k]] = row.get(beta_idx[k], 0.0) - 1.0
            prog.add_ineq(row, 0.0)

        if rsma:
            # Common SINR tangent: omega_k below the common-stream ratio.
            tangent_c = _tangent_ratio_coeffs(h[k], p_blocks[0], sc_idx[k],
                                              state.precoders.common,
                                              float(state.sigma_c[k]))
            row = {omega_idx[k]: 1.0}
            for i, c in tangent_c.items():
                row[i] = row.get(i, 0.0) - c
            prog.add_ineq(row, 0.0)

        # Interference epigraphs (private streams only interfere).
        private_blocks = [vm.private_block(i, rsma) for i in range(k_users)]
        conic.encode_interference_bound(h[k], [b for i, b in enumerate(private_blocks) if i != k],
                                        sp_idx[k], prog)
        if rsma:
            conic.encode_interference_bound(h[k], private_blocks, sc_idx[k], prog)

        # Boxes and signs.
        prog.add_ineq({z_idx[k]: -1.0}, 0.0)
        prog.add_ineq({z_idx[k]: 1.0}, -1.0)
        prog.add_ineq({beta_idx[k]: -1.0}, 0.0)
        if rsma:
            prog.add_ineq({c_idx[k]: -1.0}, 0.0)

    # Linearized product constraint: at least one user stays scheduled.
    z0 = state.z
    partials = np.empty(k_users)
    for k in range(k_users):
        partials[k] = float(np.prod(np.delete(z0, k))) if k_users > 1 else 1.0
    vacuous = bool(np.all(np.abs(partials) < 1e-12))
    if not vacuous:
        const = float(np.prod(z0)) - float(np.sum(z0 * partials))
        prog.add_eq({z_idx[k]: float(partials[k]) for k in range(k_users)
                     if partials[k] != 0.0}, const)

    # Total power ball over every precoder entry.
    u_rows = [({i: 1.0}, 0.0) for blk in p_blocks for i in blk]
    prog.add_soc(u_rows, ({}, math.sqrt(problem.total_power)))

    return prog, vm, {"big_m": big_m, "product_vacuous": vacuous}


def _extract(problem: SlotProblem, cfg: OptimizerConfig, x: np.ndarray,
             vm: _VarMap) -> Tuple[SCAState, np.ndarray]:
    """Next expansion point (and common-rate shares) from a subproblem
    solution; values are nudged back into their invariant ranges."""
    k_users, n_ant = problem.channels.vectors.shape
    rsma = cfg.mode == "RSMA"

    def block_vec(blk: List[int]) -> np.ndarray:
        vals = x[blk]
        return vals[:n_ant] + 1j * vals[n_ant:]

    common = block_vec(vm.p_blocks[0]) if rsma else np.zeros(n_ant, dtype=np.complex128)
    privates = np.stack([block_vec(vm.private_block(k, rsma)) for k in range(k_users)])
    precoders = PrecoderSet(common, privates)
    total = precoders.total_power()
    if total > problem.total_power:
        scale = math.sqrt(problem.total_power / total)
        precoders = PrecoderSet(common * scale, privates * scale)

    z = np.clip(x[vm.z], 0.0, 1.0)
    # Snap solver dust to exact zero so the product-constraint expansion
    # degenerates cleanly (coefficients vanish) instead of ill-conditioning.
    z[z < 1e-9] = 0.0
    beta = np.maximum(x[vm.beta], 0.0)
    sigma_p = np.maximum(x[vm.sigma_p], 1.0)
    sigma_c = np.maximum(x[vm.sigma_c], 1.0) if rsma else np.ones(k_users)
    shares = np.maximum(x[vm.c], 0.0) if rsma else np.zeros(k_users)
    objective = float(problem.weights @ z)
    return SCAState(precoders, z, beta, sigma_p, sigma_c, objective), shares


def round_schedule(z_relaxed: np.ndarray, shares: np.ndarray,
                   problem: SlotProblem, precoders: PrecoderSet,
                   cfg: OptimizerConfig) -> np.ndarray:
    """Binary indicators: skip a user when its relaxed z is (numerically)
    one or the exact recomputed rate misses its requirement."""
    report = rate_report(problem.channels, precoders, [])
    z_bin = np.zeros(len(z_relaxed), dtype=int)
    for k in range(len(z_relaxed)):
        rate = float(shares[k]) + float(report.rate_private[k])
        if z_relaxed[k] >= 1.0 - cfg.z_round_delta or rate <= problem.required_rates[k] - ROUNDING_MARGIN:
            z_bin[k] = 1
    return z_bin


def evaluate(problem: SlotProblem, precoders: PrecoderSet, shares: np.ndarray,
             z_binary: np.ndarray) -> Tuple[CommonRateShares, np.ndarray, List[int], float, int]:
    """Audit a rounded schedule against the exact rate formulas.

    Shares freed by unscheduled users are re-allocated greedily (largest
    deficit first).  A scheduled user that still cannot meet its rate is
    demoted and the audit repeats; demotions indicate relaxation/rounding
    mismatch and are counted.
    """
    k_users = problem.channels.num_users
    z_bin = np.asarray(z_binary, dtype=int).copy()
    out_shares = np.zeros(k_users)
    demotions = 0
    while True:
        scheduled = [k for k in range(k_users) if z_bin[k] == 0]
        if not scheduled:
            break
        report = rate_report(problem.channels, precoders, scheduled)
        deficits = {k: max(0.0, float(problem.required_rates[k] - report.rate_private[k]))
                    for k in scheduled}
        out_shares = np.zeros(k_users)
        budget = report.common_rate
        for k in sorted(scheduled, key=lambda k: (-deficits[k], k)):
            give = min(deficits[k], budget)
            out_shares[k] = give
            budget -= give
        failing = [k for k in scheduled
                   if out_shares[k] + report.rate_private[k]
                   < problem.required_rates[k] - ROUNDING_MARGIN]
        if not failing:
            break
        worst = max(failing, key=lambda k: deficits[k] - out_shares[k])
        z_bin[worst] = 1
        demotions += 1
    scheduled = [k for k in range(k_users) if z_bin[k] == 0]
    achieved = float(sum(problem.weights[k] for k in range(k_users) if z_bin[k] == 1))
    return CommonRateShares(out_shares), z_bin, scheduled, achieved, demotions


def _no_schedule_result(problem: SlotProblem, state: SCAState,
                        statuses: List[str], status: str) -> ScheduleResult:
    k_users = problem.channels.num_users
    return ScheduleResult(
        precoders=state.precoders,
        shares=CommonRateShares(np.zeros(k_users)),
        z_relaxed=np.ones(k_users),
        z_binary=np.ones(k_users, dtype=int),
        scheduled=[],
        achieved_aoii=float(np.sum(problem.weights)),
        sca_iterations=0,
        subproblem_statuses=statuses,
        objective_trace=[state.objective],
        status=status,
    )


def sca_solve(problem: SlotProblem, cfg: OptimizerConfig,
              init_state: Optional[SCAState] = None,
              trace_path: Optional[str] = None) -> ScheduleResult:
    """Run the iterative convexification loop and round the outcome.

    Stops when successive objectives differ by less than ``cfg.epsilon``
    or the iteration cap is reached.  A subproblem failure after the first
    iteration falls back to the best previous iterate; a failure at the
    first iteration (possible when no feasible schedule exists at all,
    e.g. a single user whose requirement exceeds capacity) returns the
    empty schedule with a distinct status instead of raising.
    """
    state = init_state if init_state is not None else initialize(problem, cfg)
    shares = np.zeros(problem.channels.num_users)
    objectives = [state.objective]
    statuses: List[str] = []
    vacuous_iters: List[int] = []
    status = "max_iters"
    iterations = 0
    flat_count = 0
    trace_rows: List[dict] = []

    for n in range(1, cfg.max_sca_iters + 1):
        prog, vm, meta = assemble_subproblem(problem, state, cfg)
        sol = conic.solve(prog, cfg.solver_tol, cfg.solver_max_iter)
        statuses.append(sol.status)
        if meta["product_vacuous"]:
            vacuous_iters.append(n)
        if sol.status != "optimal":
            if n == 1:
                result = _no_schedule_result(
                    problem, state, statuses,
                    "infeasible_init" if sol.status == "infeasible" else "solver_error_init")
                result.product_vacuous_iters = vacuous_iters
                _write_trace(trace_path, trace_rows)
                return result
            status = f"stalled_{sol.status}"
            break
        z_prev = state.z
        state, shares = _extract(problem, cfg, sol.primal, vm)
        iterations = n
        objectives.append(state.objective)
        trace_rows.append({"iteration": n, "objective": state.objective,
                           "z": [float(v) for v in state.z],
                           "status": sol.status,
                           "product_vacuous": meta["product_vacuous"]})
        z_settled = float(np.max(np.abs(state.z - z_prev))) < Z_SETTLE_TOL
        if abs(objectives[-1] - objectives[-2]) < cfg.epsilon:
            flat_count += 1
            if z_settled or flat_count >= MAX_SETTLE_EXTENSION:
                status = "converged"
                break
        else:
            flat_count = 0

    z_binary = round_schedule(state.z, shares, problem, state.precoders, cfg)
    out_shares, z_binary, scheduled, achieved, demotions = evaluate(
        problem, state.precoders, shares, z_binary)
    _write_trace(trace_path, trace_rows)
    return ScheduleResult(
        precoders=state.precoders,
        shares=out_shares,
        z_relaxed=state.z.copy(),
        z_binary=z_binary,
        scheduled=scheduled,
        achieved_aoii=achieved,
        sca_iterations=iterations,
        subproblem_statuses=statuses,
        objective_trace=objectives,
        status=status,
        demotions=demotions,
        product_vacuous_iters=vacuous_iters,
    )


def _write_trace(path: Optional[str], rows: List[dict]) -> None:
    if path is None:
        return
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def solve_slot(problem: SlotProblem, mode: str,
               cfg: Optional[OptimizerConfig] = None,
               sdma_result: Optional[ScheduleResult] = None) -> ScheduleResult:
    """Production entry point for one slot decision.

    SDMA solves the restricted problem once.  RSMA is run as a two-start
    local search: once from the standard initialization and once warm
    started from the SDMA restriction (whose solution is always feasible
    for the full problem), keeping the better rounded outcome.  The warm
    start makes the full scheme provably no worse than its restriction,
    which a single cold start cannot guarantee for a local method.
    """
    if cfg is None:
        cfg = OptimizerConfig()
    if mode == "SDMA":
        return sca_solve(problem, _with_mode(cfg, "SDMA"))
    if mode != "RSMA":
        raise ValueError(f"unknown mode {mode!r}")
    rsma_cfg = _with_mode(cfg, "RSMA")
    cold = sca_solve(problem, rsma_cfg)
    if sdma_result is None:
        sdma_result = sca_solve(problem, _with_mode(cfg, "SDMA"))
    warm = sca_solve(problem, rsma_cfg,
                     init_state=warm_start_state(problem, sdma_result.precoders,
                                                 sdma_result.z_relaxed))
    cold_key = (cold.achieved_aoii, -len(cold.scheduled))
    warm_key = (warm.achieved_aoii, -len(warm.scheduled))
    return cold if cold_key <= warm_key else warm


def _with_mode(cfg: OptimizerConfig, mode: str) -> OptimizerConfig:
    return replace(cfg, mode=mode)
