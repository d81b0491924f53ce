"""Exact 0-1 solving: LP relaxation, best-first branch and bound, set packing.

The LP core delegates to HiGHS dual simplex (deterministic, basic solutions);
branching, bounding, limits, and the anytime incumbent logic live here.  The
test tree carries an independent dense-tableau simplex and an exhaustive 0-1
enumerator as oracles for both layers.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .bip import BinaryProgram

INT_TOL = 1e-7
_LP_OPTIONS = {
    "presolve": True,
    "primal_feasibility_tolerance": 1e-9,
    "dual_feasibility_tolerance": 1e-9,
}


@dataclass(frozen=True)
class LpSolution:
    status: str  # optimal | infeasible
    values: np.ndarray | None
    objective: float | None


@dataclass(frozen=True)
class SearchLimits:
    time_limit: float | None = None
    node_limit: int | None = None
    absolute_gap: float = 1e-6

    def __post_init__(self):
        if self.time_limit is not None and self.time_limit < 0:
            raise ValueError("time_limit must be >= 0")
        if self.node_limit is not None and self.node_limit < 0:
            raise ValueError("node_limit must be >= 0")
        if self.absolute_gap < 0:
            raise ValueError("absolute_gap must be >= 0")


def solve_lp_relaxation(
    program: BinaryProgram,
    lo: np.ndarray | None = None,
    hi: np.ndarray | None = None,
) -> LpSolution:
    """Continuous relaxation with bounds 0 <= v <= 1 and fixings honored."""
    c, a_ub, b_ub, a_eq, b_eq = program.matrices()
    if lo is None or hi is None:
        lo, hi = program.bounds_arrays()
    if program.n_vars == 0:
        return LpSolution("optimal", np.zeros(0), 0.0)
    res = linprog(
        -c,
        A_ub=a_ub,
        b_ub=b_ub if a_ub is not None else None,
        A_eq=a_eq,
        b_eq=b_eq if a_eq is not None else None,
        bounds=np.column_stack([lo, hi]),
        method="highs-ds",
        options=_LP_OPTIONS,
    )
    if res.status == 0:
        return LpSolution("optimal", np.clip(res.x, lo, hi), float(-res.fun))
    if res.status == 2:
        return LpSolution("infeasible", None, None)
    if res.status == 3:
        raise RuntimeError("unbounded relaxation: program is malformed")
    raise RuntimeError(f"LP solve failed: {res.message}")


def _round_objective(program: BinaryProgram, x: np.ndarray) -> float:
    c = np.asarray(program.objective)
    return float(c @ x)


_BRANCH_PRIORITY = {"z": 0, "w": 0, "zd": 1, "u": 2, "y": 3, "x": 4}


def _branch_order(program: BinaryProgram) -> np.ndarray:
    return np.array(
        [_BRANCH_PRIORITY.get(kind[0], 5) for kind in program.kinds], dtype=int
    )


def solve_bip(
    program: BinaryProgram, limits: SearchLimits | None = None
) -> tuple[np.ndarray | None, str, float]:
    """Best-first branch and bound on LP bounds.

    Branches on the most fractional variable, preferring decision classes
    (served flags, then driver registrations) over flow variables, with ties
    to the lowest index; fixing the high-level variables first collapses the
    search far faster than undirected most-fractional branching on flows.
    Returns (assignment, status, best_bound); status is `optimal`,
    `infeasible`, or `limit` when a search limit stopped the proof, in which
    case the incumbent (possibly None) and the remaining bound are returned.
    """
    limits = limits or SearchLimits()
    t0 = time.perf_counter()
    deadline = None if limits.time_limit is None else t0 + limits.time_limit
    gap = limits.absolute_gap

    if program.n_vars == 0:
        return np.zeros(0, dtype=int), "optimal", 0.0
    lo0, hi0 = program.bounds_arrays()
    root = solve_lp_relaxation(program, lo0, hi0)
    if root.status == "infeasible":
        return None, "infeasible", float("-inf")
    priority = _branch_order(program)

    best_x: np.ndarray | None = None
    best_val = float("-inf")
    counter = itertools.count(start=-1, step=-1)
    # heap of (-bound, tiebreak, lp values, lo, hi); the tiebreak prefers the
    # most recent node among equal bounds, so plateaus of alternative optima
    # are dived through instead of swept breadth-first
    heap = [(-root.objective, next(counter), root.values, lo0, hi0)]
    nodes = 0

    def out_of_budget() -> bool:
        if deadline is not None and time.perf_counter() >= deadline:
            return True
        if limits.node_limit is not None and nodes > limits.node_limit:
            return True
        return False

    while heap:
        neg_bound, _, values, lo, hi = heapq.heappop(heap)
        bound = -neg_bound
        if bound <= best_val + gap:
            # best-first order: nothing left can beat the incumbent
            heapq.heappush(heap, (neg_bound, next(counter), values, lo, hi))
            break
        nodes += 1
        if out_of_budget():
            heapq.heappush(heap, (neg_bound, next(counter), values, lo, hi))
            break

        frac = np.abs(values - np.round(values))
        if frac.max() <= INT_TOL:
            x_int = np.round(values).astype(int)
            val = _round_objective(program, x_int)
            if val > best_val:
                best_val, best_x = val, x_int
            continue
        top = priority[frac > INT_TOL].min()
        masked = np.where(priority == top, frac, -1.0)
        j = int(np.argmax(masked))

        for v in (0, 1):
            clo, chi = lo.copy(), hi.copy()
            clo[j] = chi[j] = float(v)
            child = solve_lp_relaxation(program, clo, chi)
            if child.status == "infeasible":
                continue
            if child.objective <= best_val + gap:
                continue
            heapq.heappush(
                heap, (-child.objective, next(counter), child.values, clo, chi)
            )

    if heap and (best_x is None or -heap[0][0] > best_val + gap):
        remaining = max((-e[0] for e in heap), default=best_val)
        return best_x, "limit", max(remaining, best_val)
    status = "optimal" if best_x is not None else "infeasible"
    return best_x, status, best_val


def solve_set_packing(
    riders: Sequence[str],
    itineraries: dict | None,
    compatible: Callable[[str, str], bool],
    limits: SearchLimits | None = None,
) -> list[str]:
    """Maximum-cardinality pairwise-compatible rider subset, as a 0-1 program
    with one conflict row per incompatible pair."""
    riders = list(riders)
    prog = BinaryProgram()
    idx = {r: prog.add_var(f"w_{r}", ("w", r), obj=1.0) for r in riders}
    for i, a in enumerate(riders):
        for b in riders[i + 1 :]:
            if not compatible(a, b):
                prog.add_row([(idx[a], 1.0), (idx[b], 1.0)], "<=", 1.0, f"conflict_{a}_{b}")
    x, status, _ = solve_bip(prog, limits)
    if x is None:
        return []
    return [r for r in riders if x[idx[r]] == 1]


# --- LP file export -----------------------------------------------------------


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _terms_text(terms: list[tuple[int, float]], names: list[str]) -> str:
    parts = []
    for idx, coef in terms:
        sign = "-" if coef < 0 else "+"
        parts.append(f"{sign} {_fmt(abs(coef))} {names[idx]}")
    return " ".join(parts) if parts else "0 dummy_zero"


def export_lp(program: BinaryProgram) -> str:
    """CPLEX-style LP text with stable naming; byte-identical for identical
    programs."""
    lines = ["Maximize"]
    obj_terms = [(i, c) for i, c in enumerate(program.objective) if c != 0.0]
    lines.append(" obj: " + _terms_text(obj_terms, program.names))
    lines.append("Subject To")
    sense_txt = {"<=": "<=", ">=": ">=", "==": "="}
    for terms, sense, rhs, label in program.rows:
        lines.append(
            f" {label}: " + _terms_text(terms, program.names) + f" {sense_txt[sense]} {_fmt(rhs)}"
        )
    if program.fixings:
        lines.append("Bounds")
        for idx in sorted(program.fixings):
            lines.append(f" {program.names[idx]} = {program.fixings[idx]}")
    lines.append("Binary")
    for name in program.names:
        lines.append(f" {name}")
    lines.append("End")
    return "\n".join(lines) + "\n"
