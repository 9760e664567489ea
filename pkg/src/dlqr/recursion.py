"""Backward design phase: the coupled per-agent matrix recursions.

For each step k (running backward from the horizon M) and each agent i:

    Pbar[k+1, i]  = (Pbreve[k+1, i]^-1 + B[k, i] R[k, i]^-1 B[k, i]^T)^-1
    P[k+1, i]     = (sum_{j in N_i} omega[i, j] Pbar[k+1, j]^-1)^-1
    Pbreve[k, i]  = A[k]^T P[k+1, i] A[k] + N Q[k]

anchored at Pbreve[M, i] = N Q[M].  The middle line is the information
fusion: agent i combines only its in-neighbors' inverse matrices, weighted
by the coupling gains, so the whole pass runs on local communication.  All
three families stay symmetric positive definite; losing that is reported as
a breakdown naming the step and agent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import (GraphValidationError, RecursionBreakdownError,
                     StationaryConvergenceError)
from .graph import DirectedGraph, validate_strongly_connected
from .model import SystemSchedule


@dataclass(eq=False)
class RecursionTables:
    """Design-phase output, indexed [k, agent] with k = 0..horizon.

    ``p`` and ``p_bar_inv`` are only defined for k >= 1 (their k = 0 slots
    are left as NaN); ``p_breve`` covers the full range.  ``p_bar`` is
    recovered on demand from its stored inverse.
    """

    horizon: int
    n_agents: int
    n: int
    p_breve: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    p_bar_inv: np.ndarray = field(repr=False)

    def p_breve_step(self, k: int) -> np.ndarray:
        return self.p_breve[k]

    def p_step(self, k: int) -> np.ndarray:
        return self.p[k]

    def p_bar_inv_step(self, k: int) -> np.ndarray:
        return self.p_bar_inv[k]

    def p_bar(self, k: int, i: int) -> np.ndarray:
        """Fused-input matrix Pbar[k, i], inverted on demand."""
        return linalg.spd_inverse(self.p_bar_inv[k, i])

    def save(self, path) -> None:
        """Binary dump of all three tables keyed by (step, agent)."""
        np.savez(path, horizon=self.horizon, n_agents=self.n_agents, n=self.n,
                 p_breve=self.p_breve, p=self.p, p_bar_inv=self.p_bar_inv)

    @classmethod
    def load(cls, path) -> "RecursionTables":
        data = np.load(path)
        return cls(horizon=int(data["horizon"]), n_agents=int(data["n_agents"]),
                   n=int(data["n"]), p_breve=data["p_breve"], p=data["p"],
                   p_bar_inv=data["p_bar_inv"])


@dataclass(eq=False)
class StationaryTables:
    """Per-agent fixed points of the time-invariant recursion.

    Exposes the same step accessors as ``RecursionTables`` (the step index
    is ignored) so simulation code can consume either interchangeably.
    """

    n_agents: int
    n: int
    p_breve: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    p_bar: np.ndarray = field(repr=False)
    p_bar_inv: np.ndarray = field(repr=False)
    iterations: int = 0
    residual: float = 0.0
    residual_history: tuple = ()

    horizon = None

    def p_breve_step(self, k: int) -> np.ndarray:
        return self.p_breve

    def p_step(self, k: int) -> np.ndarray:
        return self.p

    def p_bar_inv_step(self, k: int) -> np.ndarray:
        return self.p_bar_inv


def _backward_step(s: SystemSchedule, g: DirectedGraph, omega: np.ndarray,
                   p_breve_next: np.ndarray, k: int):
    """One synchronous backward round: all agents read, then all write.

    Returns (p_bar_inv, p, p_breve_prev) at recursion indices
    (k+1, k+1, k).  ``p_breve_next`` holds Pbreve[k+1, :].
    """
    n_agents, n = s.n_agents, s.n
    p_bar_inv = np.empty((n_agents, n, n))
    for i in range(n_agents):
        try:
            breve_inv = linalg.spd_inverse(p_breve_next[i])
        except np.linalg.LinAlgError as exc:
            raise RecursionBreakdownError(k + 1, i, str(exc)) from exc
        b = s.b(k, i)
        r = s.r(k, i)
        p_bar_inv[i] = linalg.symmetrize(breve_inv + b @ linalg.spd_solve(r, b.T))

    p = np.empty((n_agents, n, n))
    for i in range(n_agents):
        fused = np.zeros((n, n))
        for j in g.in_neighbors(i):
            fused += omega[i, j] * p_bar_inv[j]
        try:
            p[i] = linalg.spd_inverse(fused)
        except np.linalg.LinAlgError as exc:
            raise RecursionBreakdownError(k + 1, i, f"fusion not SPD: {exc}") from exc

    a = s.a(k)
    nq = n_agents * s.q(k)
    p_breve_prev = np.empty((n_agents, n, n))
    for i in range(n_agents):
        p_breve_prev[i] = linalg.symmetrize(a.T @ p[i] @ a + nq)
    return p_bar_inv, p, p_breve_prev


def _require_design_inputs(s: SystemSchedule, g: DirectedGraph) -> None:
    if not validate_strongly_connected(g):
        raise GraphValidationError("communication graph must be strongly connected")
    if g.n_nodes != s.n_agents:
        raise GraphValidationError(
            f"graph has {g.n_nodes} nodes but schedule has {s.n_agents} agents")


def design_backward(s: SystemSchedule, g: DirectedGraph, w) -> RecursionTables:
    """Run the backward design phase over the full finite horizon.

    ``w`` provides fusion weights via ``omega_at(k)`` (a constant matrix or
    a per-step schedule).  Requires a strongly connected graph and a finite
    horizon.
    """
    _require_design_inputs(s, g)
    if s.horizon is None:
        raise ValueError("design pass needs a finite horizon")
    m = s.horizon
    tables = RecursionTables(
        horizon=m, n_agents=s.n_agents, n=s.n,
        p_breve=np.full((m + 1, s.n_agents, s.n, s.n), np.nan),
        p=np.full((m + 1, s.n_agents, s.n, s.n), np.nan),
        p_bar_inv=np.full((m + 1, s.n_agents, s.n, s.n), np.nan),
    )
    terminal = s.n_agents * s.q(m)
    for i in range(s.n_agents):
        tables.p_breve[m, i] = terminal
    fill_backward_range(tables, s, g, w, k_lo=0, k_hi=m)
    return tables


def fill_backward_range(tables: RecursionTables, s: SystemSchedule,
                        g: DirectedGraph, w, k_lo: int, k_hi: int) -> None:
    """Backward-fill tables over steps k = k_hi-1 .. k_lo.

    ``tables.p_breve[k_hi]`` must already hold the terminal condition for
    this range.  Used directly by the receding-horizon variant, which
    stitches several ranges with modified terminal weights.
    """
    for k in range(k_hi - 1, k_lo - 1, -1):
        p_bar_inv, p, p_breve_prev = _backward_step(
            s, g, w.omega_at(k + 1), tables.p_breve[k + 1], k)
        tables.p_bar_inv[k + 1] = p_bar_inv
        tables.p[k + 1] = p
        tables.p_breve[k] = p_breve_prev


def solve_stationary(s: SystemSchedule, g: DirectedGraph, w,
                     tol: float = 1e-10, max_iters: int = 10000) -> StationaryTables:
    """Iterate the time-invariant recursion to its per-agent fixed points.

    Starting from Pbreve = N Q, the iterates increase monotonically in the
    positive-semidefinite order and converge; iteration stops when the
    largest per-agent 2-norm change drops below ``tol``.
    """
    _require_design_inputs(s, g)
    if not s.time_invariant:
        raise ValueError("stationary solve requires a time-invariant schedule")
    n_agents = s.n_agents
    p_breve = np.array([n_agents * s.q(0) for _ in range(n_agents)])
    history = []
    for iteration in range(1, max_iters + 1):
        p_bar_inv, p, p_breve_new = _backward_step(s, g, w.omega_at(1), p_breve, 0)
        residual = max(
            linalg.spectral_norm(p_breve_new[i] - p_breve[i]) for i in range(n_agents))
        history.append(residual)
        p_breve = p_breve_new
        if residual < tol:
            p_bar = np.array([linalg.spd_inverse(p_bar_inv[i]) for i in range(n_agents)])
            return StationaryTables(
                n_agents=n_agents, n=s.n, p_breve=p_breve, p=p, p_bar=p_bar,
                p_bar_inv=p_bar_inv, iterations=iteration, residual=residual,
                residual_history=tuple(history))
    raise StationaryConvergenceError(
        f"no fixed point after {max_iters} iterations (residual {history[-1]:.3e})",
        residual_history=history)


@dataclass
class BoundednessReport:
    """Eigenvalue extremes of the fused tables against the analytic floor.

    The floor is (w_max/q_floor + w_max N b_max^2 / r_floor)^-1, built from
    the largest fusion weight and the schedule's eigenvalue/norm constants;
    every fused matrix must dominate it.
    """

    p_eig_min: float
    p_eig_max: float
    analytic_lower_bound: float
    w_max: float
    q_floor: float
    r_floor: float
    b_norm_max: float
    violated: bool

    @property
    def uniformly_bounded(self) -> bool:
        return np.isfinite(self.p_eig_max) and not self.violated


def analytic_lower_bound(w_max: float, q_floor: float, r_floor: float,
                         b_norm_max: float, n_agents: int) -> float:
    """Closed-form eigenvalue floor for the fused tables."""
    return 1.0 / (w_max / q_floor + w_max * n_agents * b_norm_max ** 2 / r_floor)


def boundedness_report(tables: RecursionTables, s: SystemSchedule,
                       w) -> BoundednessReport:
    """Check every fused matrix P[k, i] against the analytic eigenvalue floor."""
    m = tables.horizon
    lo, hi = np.inf, -np.inf
    for k in range(1, m + 1):
        for i in range(tables.n_agents):
            eigs = np.linalg.eigvalsh(tables.p[k, i])
            lo = min(lo, float(eigs[0]))
            hi = max(hi, float(eigs[-1]))

    if hasattr(w, "max_weight"):
        w_max = w.max_weight
    else:
        w_max = float(max(w.omega_at(k).max() for k in range(1, m + 1)))
    q_floor = min(linalg.eig_range(s.q(k))[0] for k in _step_sample(s, m + 1))
    r_floor = min(linalg.eig_range(s.r(k, i))[0]
                  for k in _step_sample(s, m) for i in range(s.n_agents))
    b_max = max(linalg.spectral_norm(s.b(k, i))
                for k in _step_sample(s, m) for i in range(s.n_agents))
    floor = analytic_lower_bound(w_max, q_floor, r_floor, b_max, s.n_agents)
    return BoundednessReport(
        p_eig_min=lo, p_eig_max=hi, analytic_lower_bound=floor, w_max=w_max,
        q_floor=q_floor, r_floor=r_floor, b_norm_max=b_max,
        violated=bool(lo < floor - 1e-10))


def _step_sample(s: SystemSchedule, count: int):
    return [0] if s.time_invariant else range(count)
