"""Conic-program intermediate representation and solver front end.

Programs are a linear objective over a flat real variable vector with
four constraint block types:

  * linear equalities        a.x + const == 0
  * linear inequalities      a.x + const <= 0
  * second-order cones       ||u(x)|| <= v(x), u rows and v affine
  * exponential cones        (x1, x2, x3) with x2 * exp(x3/x2) <= x1, x2 > 0

``solve`` lowers the program to Clarabel's interior-point standard form
A x + s = b, s in K.  Clarabel is trusted for the arithmetic only: every
exit is re-audited by an independent checker that re-evaluates the raw
constraint blocks, and an 'optimal' status is downgraded if the audit or
the duality gap disagrees.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import sparse

import clarabel

LN2 = math.log(2.0)

# (coefficients by variable index, constant term)
Affine = Tuple[Dict[int, float], float]


def affine_value(row: Affine, x: np.ndarray) -> float:
    coeffs, const = row
    return const + sum(c * x[i] for i, c in coeffs.items())


@dataclass
class ConicProgram:
    num_vars: int = 0
    objective: List[float] = field(default_factory=list)
    linear_eq: List[Affine] = field(default_factory=list)
    linear_ineq: List[Affine] = field(default_factory=list)
    # (u rows, head): ||u|| <= head
    soc_blocks: List[Tuple[List[Affine], Affine]] = field(default_factory=list)
    # (x1, x2, x3): x2 * exp(x3/x2) <= x1
    exp_blocks: List[Tuple[Affine, Affine, Affine]] = field(default_factory=list)

    def add_var(self, obj: float = 0.0) -> int:
        self.objective.append(float(obj))
        self.num_vars += 1
        return self.num_vars - 1

    def add_vars(self, n: int, obj: float = 0.0) -> List[int]:
        return [self.add_var(obj) for _ in range(n)]

    def add_eq(self, coeffs: Dict[int, float], const: float = 0.0) -> None:
        self.linear_eq.append((dict(coeffs), float(const)))

    def add_ineq(self, coeffs: Dict[int, float], const: float = 0.0) -> None:
        self.linear_ineq.append((dict(coeffs), float(const)))

    def add_soc(self, u_rows: Sequence[Affine], head: Affine) -> None:
        self.soc_blocks.append(([(dict(c), float(k)) for c, k in u_rows],
                                (dict(head[0]), float(head[1]))))

    def add_exp(self, x1: Affine, x2: Affine, x3: Affine) -> None:
        self.exp_blocks.append(tuple((dict(c), float(k)) for c, k in (x1, x2, x3)))

    def _iter_rows(self):
        for row in self.linear_eq:
            yield row
        for row in self.linear_ineq:
            yield row
        for u_rows, head in self.soc_blocks:
            yield head
            yield from u_rows
        for triple in self.exp_blocks:
            yield from triple

    def validate(self) -> None:
        if len(self.objective) != self.num_vars:
            raise ValueError("objective length != num_vars")
        for coeffs, const in self._iter_rows():
            if not math.isfinite(const):
                raise ValueError("non-finite constant in affine row")
            for i, c in coeffs.items():
                if not 0 <= i < self.num_vars:
                    raise ValueError(f"variable index {i} out of range")
                if not math.isfinite(c):
                    raise ValueError("non-finite coefficient in affine row")

    # -- JSON debug dump ---------------------------------------------------

    def to_json_dict(self) -> dict:
        def enc(row: Affine) -> dict:
            return {"coeffs": {str(i): c for i, c in row[0].items()}, "const": row[1]}

        return {
            "num_vars": self.num_vars,
            "objective": list(self.objective),
            "linear_eq": [enc(r) for r in self.linear_eq],
            "linear_ineq": [enc(r) for r in self.linear_ineq],
            "soc_blocks": [{"u": [enc(r) for r in u], "head": enc(h)}
                           for u, h in self.soc_blocks],
            "exp_blocks": [[enc(r) for r in t] for t in self.exp_blocks],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ConicProgram":
        def dec(obj: dict) -> Affine:
            return ({int(i): float(c) for i, c in obj["coeffs"].items()},
                    float(obj["const"]))

        prog = cls()
        prog.num_vars = int(data["num_vars"])
        prog.objective = [float(v) for v in data["objective"]]
        prog.linear_eq = [dec(r) for r in data["linear_eq"]]
        prog.linear_ineq = [dec(r) for r in data["linear_ineq"]]
        prog.soc_blocks = [([dec(r) for r in blk["u"]], dec(blk["head"]))
                           for blk in data["soc_blocks"]]
        prog.exp_blocks = [tuple(dec(r) for r in t) for t in data["exp_blocks"]]
        prog.validate()
        return prog

    def dump_json(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f)

    @classmethod
    def load_json(cls, path: str) -> "ConicProgram":
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


def encode_log_lower(x_index: int, t_index: int, program: ConicProgram) -> int:
    """Constrain t <= log2(1 + x) through an exponential cone.

    Adds an auxiliary u with exp(u) <= 1 + x and ties t = u / ln 2.
    Returns the index of u.
    """
    for idx in (x_index, t_index):
        if not 0 <= idx < program.num_vars:
            raise ValueError(f"variable index {idx} out of range")
    u = program.add_var()
    # (1 + x, 1, u) in Kexp  <=>  exp(u) <= 1 + x
    program.add_exp(({x_index: 1.0}, 1.0), ({}, 1.0), ({u: 1.0}, 0.0))
    program.add_eq({t_index: LN2, u: -1.0}, 0.0)
    return u


def hermitian_product_rows(h: np.ndarray,
                           block: Sequence[int]) -> Tuple[Dict[int, float], Dict[int, float]]:
    """Affine rows for Re and Im of h^H p, with p stacked as [re..., im...]."""
    n = len(h)
    if len(block) != 2 * n:
        raise ValueError("stacked precoder block must have length 2N")
    re_ix, im_ix = block[:n], block[n:]
    re_row: Dict[int, float] = {}
    im_row: Dict[int, float] = {}
    for i in range(n):
        a, b = float(h[i].real), float(h[i].imag)
        # conj(h_i) * p_i = (a - jb)(re + j im)
        if a:
            re_row[re_ix[i]] = re_row.get(re_ix[i], 0.0) + a
            im_row[im_ix[i]] = im_row.get(im_ix[i], 0.0) + a
        if b:
            re_row[im_ix[i]] = re_row.get(im_ix[i], 0.0) + b
            im_row[re_ix[i]] = im_row.get(re_ix[i], 0.0) - b
    return re_row, im_row


def encode_interference_bound(h: np.ndarray, precoder_blocks: Sequence[Sequence[int]],
                              sigma_index: int, program: ConicProgram) -> None:
    """Constrain sigma >= 1 + sum_i |h^H p_i|^2 as one second-order cone.

    Uses ||(2 q_1, ..., 2 q_m, sigma - 2)|| <= sigma with q_i the stacked
    real/imaginary parts of h^H p_i.
    """
    if not 0 <= sigma_index < program.num_vars:
        raise ValueError(f"variable index {sigma_index} out of range")
    u_rows: List[Affine] = []
    for block in precoder_blocks:
        re_row, im_row = hermitian_product_rows(h, block)
        u_rows.append(({i: 2.0 * c for i, c in re_row.items()}, 0.0))
        u_rows.append(({i: 2.0 * c for i, c in im_row.items()}, 0.0))
    u_rows.append(({sigma_index: 1.0}, -2.0))
    program.add_soc(u_rows, ({sigma_index: 1.0}, 0.0))


@dataclass
class ConicSolution:
    status: str                 # optimal | infeasible | unbounded | max_iter | numerical_error
    primal: np.ndarray
    objective_value: float
    max_primal_residual: float
    max_dual_residual: float
    duality_gap: float
    iterations: int


def audit_solution(program: ConicProgram, x: np.ndarray) -> dict:
    """Re-evaluate every raw constraint block at x.

    Violations are normalized per row by (1 + |const terms|) so tolerances
    are meaningful across constraint scales.
    """
    eq_v = 0.0
    for row in program.linear_eq:
        eq_v = max(eq_v, abs(affine_value(row, x)) / (1.0 + abs(row[1])))
    ineq_v = 0.0
    for row in program.linear_ineq:
        ineq_v = max(ineq_v, max(0.0, affine_value(row, x)) / (1.0 + abs(row[1])))
    soc_v = 0.0
    for u_rows, head in program.soc_blocks:
        norm = math.sqrt(sum(affine_value(r, x) ** 2 for r in u_rows))
        head_v = affine_value(head, x)
        soc_v = max(soc_v, (norm - head_v) / (1.0 + abs(head_v)))
    exp_v = 0.0
    for x1r, x2r, x3r in program.exp_blocks:
        v1, v2, v3 = (affine_value(r, x) for r in (x1r, x2r, x3r))
        if v2 <= 0.0:
            # Closure of the cone: x2 = 0 needs x3 <= 0 and x1 >= 0.
            viol = max(-v2, v3, -v1, 0.0)
        else:
            expo = v3 / v2
            lhs = v2 * math.exp(min(expo, 700.0))
            viol = max(0.0, (lhs - v1) / (1.0 + abs(v1)))
        exp_v = max(exp_v, viol)
    worst = max(eq_v, ineq_v, max(0.0, soc_v), exp_v)
    return {"eq": eq_v, "ineq": ineq_v, "soc": max(0.0, soc_v), "exp": exp_v,
            "max": worst}


# Statuses whose iterate is accepted as optimal if (and only if) the
# independent audit and the duality gap agree at the requested tolerance.
_CANDIDATE_STATUSES = {"Solved", "AlmostSolved", "InsufficientProgress"}

_STATUS_MAP = {
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
    "MaxIterations": "max_iter",
}


def _lower(program: ConicProgram):
    """Translate the IR to (P, q, A, b, cones) in Clarabel's convention
    A x + s = b, s in K."""
    n = program.num_vars
    rows_i: List[int] = []
    cols_i: List[int] = []
    vals: List[float] = []
    b: List[float] = []
    cones = []
    r = 0

    def add_row(coeffs: Dict[int, float], a_sign: float, b_val: float) -> None:
        nonlocal r
        for i, c in coeffs.items():
            rows_i.append(r)
            cols_i.append(i)
            vals.append(a_sign * c)
        b.append(b_val)
        r += 1

    # coeffs.x + const == 0  ->  s = b - A x = 0 with A = coeffs, b = -const
    neq = 0
    for coeffs, const in program.linear_eq:
        if not coeffs and const == 0.0:
            continue  # empty 0 == 0 row
        add_row(coeffs, 1.0, -const)
        neq += 1
    if neq:
        cones.append(clarabel.ZeroConeT(neq))

    # coeffs.x + const <= 0  ->  s = -const - coeffs.x >= 0
    if program.linear_ineq:
        for coeffs, const in program.linear_ineq:
            add_row(coeffs, 1.0, -const)
        cones.append(clarabel.NonnegativeConeT(len(program.linear_ineq)))

    # SOC wants s = (head, u) with each s entry equal to coeffs.x + const,
    # so A = -coeffs, b = const.
    for u_rows, head in program.soc_blocks:
        for coeffs, const in [head] + list(u_rows):
            add_row(coeffs, -1.0, const)
        cones.append(clarabel.SecondOrderConeT(len(u_rows) + 1))

    # Our exp triple (x1, x2, x3) with x2 e^{x3/x2} <= x1 is Clarabel's
    # (x, y, z) with y e^{x/y} <= z taken as (x3, x2, x1).
    for x1r, x2r, x3r in program.exp_blocks:
        for coeffs, const in (x3r, x2r, x1r):
            add_row(coeffs, -1.0, const)
        cones.append(clarabel.ExponentialConeT())

    A = sparse.csc_matrix((vals, (rows_i, cols_i)), shape=(r, n))
    P = sparse.csc_matrix((n, n))
    q = np.asarray(program.objective, dtype=float)
    return P, q, A, np.asarray(b, dtype=float), cones


def solve(program: ConicProgram, tol: float = 1e-7, max_iter: int = 200) -> ConicSolution:
    """Interior-point solve; never returns 'optimal' without a clean audit."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    program.validate()
    P, q, A, b, cones = _lower(program)

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = int(max_iter)
    settings.max_threads = 1
    # Ask the solver for one digit more than the acceptance bound.
    settings.tol_feas = tol * 0.1
    settings.tol_gap_abs = tol * 0.1
    settings.tol_gap_rel = tol * 0.1

    try:
        raw = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
    except BaseException:
        return ConicSolution("numerical_error", np.zeros(program.num_vars),
                             math.nan, math.inf, math.inf, math.inf, 0)

    raw_status = str(raw.status)
    x = np.asarray(raw.x, dtype=float)
    if x.shape != (program.num_vars,):
        x = np.zeros(program.num_vars)
        return ConicSolution("numerical_error", x, math.nan,
                             math.inf, math.inf, math.inf, int(raw.iterations))

    obj = float(q @ x)
    audit = audit_solution(program, x)
    pobj, dobj = float(raw.obj_val), float(raw.obj_val_dual)
    gap = abs(pobj - dobj) / max(1.0, abs(pobj), abs(dobj))
    dual_res = float(raw.r_dual)

    if raw_status in _CANDIDATE_STATUSES:
        status = "optimal" if (audit["max"] <= tol and gap <= tol) else "numerical_error"
    else:
        status = _STATUS_MAP.get(raw_status, "numerical_error")
    return ConicSolution(status, x, obj, audit["max"], dual_res, gap,
                         int(raw.iterations))
