"""Performing phase: distributed gains, virtual states, closed-loop runs.

After the design pass every agent holds its own slices of the recursion
tables.  Communication directions are then reversed once, and at each step
every agent fuses its reversed-graph in-neighbors' messages into

    z[k, i] = sum_j omega[j, i] Pbar[k+1, i]^-1 P[k+1, j] A[k] x[k, j]

which simultaneously drives its virtual state

    x[k+1, i] = z[k, i] + B[k, i] u[k, i]

and its input u[k, i] = K[k, i] z[k, i].  Per-agent virtual states always
sum to the plant state; the simulator verifies that identity every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ConsistencyError, LocalityError
from .graph import DirectedGraph, reverse
from .model import SystemSchedule
from .recursion import RecursionTables, fill_backward_range


@dataclass(eq=False)
class Trajectory:
    """Closed-loop record: plant states, per-agent inputs, message counts."""

    states: np.ndarray = field(repr=False)   # (n_steps+1, n)
    inputs: tuple = field(repr=False)        # inputs[k][i] -> (m_i,) array
    messages_per_step: int = 0
    messages_total: int = 0

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    def stacked_input(self, k: int) -> np.ndarray:
        """All agents' inputs at step k, concatenated."""
        return np.concatenate(self.inputs[k])

    def verify_dynamics(self, s: SystemSchedule) -> float:
        """Max deviation between stored states and a re-simulation."""
        worst = 0.0
        x = self.states[0]
        for k in range(self.n_steps):
            bu = np.zeros(s.n)
            for i in range(s.n_agents):
                bu = bu + s.b(k, i) @ self.inputs[k][i]
            x = s.a(k) @ x + bu
            worst = max(worst, float(np.abs(x - self.states[k + 1]).max()))
            x = self.states[k + 1]
        return worst


@dataclass(eq=False)
class VirtualStateHistory:
    """Per-agent virtual states over the run, shape (n_steps+1, N, n)."""

    states: np.ndarray = field(repr=False)


@dataclass(eq=False)
class ClosedLoopRun:
    trajectory: Trajectory
    virtual: VirtualStateHistory | None
    tables: object | None = None


def distributed_gain(p_breve_next: np.ndarray, b: np.ndarray,
                     r: np.ndarray) -> np.ndarray:
    """Per-agent feedback gain -(R + B^T Pbreve B)^-1 B^T Pbreve.

    The inverted matrix inherits positive definiteness from R, so a
    singular solve here indicates corrupted inputs rather than a user
    error.
    """
    core = linalg.symmetrize(r + b.T @ p_breve_next @ b)
    return -linalg.spd_solve(core, b.T @ p_breve_next)


def fusion_term(agent: int, rev_graph: DirectedGraph, omega: np.ndarray,
                p_bar_inv_own: np.ndarray, p_next: np.ndarray, a_k: np.ndarray,
                virtual_states: np.ndarray) -> np.ndarray:
    """Fused neighbor combination shared by the virtual dynamics and input.

    Reads only the reversed-graph in-neighbors' slots of ``p_next`` and
    ``virtual_states``; a non-finite neighbor slot means a message went
    missing and raises ``LocalityError``.
    """
    acc = np.zeros(p_bar_inv_own.shape[0])
    for j in rev_graph.in_neighbors(agent):
        xj = virtual_states[j]
        pj = p_next[j]
        if not (np.isfinite(xj).all() and np.isfinite(pj).all()):
            raise LocalityError(f"agent {agent} is missing data from neighbor {j}")
        acc += omega[j, agent] * (pj @ (a_k @ xj))
    return p_bar_inv_own @ acc


def _simulate(s: SystemSchedule, g: DirectedGraph, w, tables, x0: np.ndarray,
              n_steps: int, virtual_init, keep_virtual: bool,
              consistency_tol: float, reanchor_at=frozenset()) -> ClosedLoopRun:
    n_agents, n = s.n_agents, s.n
    rev = reverse(g)
    per_step_messages = g.n_messages_per_round

    states = np.empty((n_steps + 1, n))
    states[0] = x0
    virt = np.tile(x0 / n_agents, (n_agents, 1)) if virtual_init is None \
        else np.array(virtual_init, dtype=float)
    if virt.shape != (n_agents, n):
        raise ValueError(f"virtual init must have shape {(n_agents, n)}")
    history = np.empty((n_steps + 1, n_agents, n)) if keep_virtual else None
    if keep_virtual:
        history[0] = virt
    inputs = []

    def check_consistency(k):
        residual = float(np.linalg.norm(states[k] - virt.sum(axis=0)))
        allowed = consistency_tol * (1.0 + float(np.linalg.norm(states[k])))
        if residual > allowed:
            raise ConsistencyError(
                f"virtual states sum off the plant state at step {k}: "
                f"residual {residual:.3e} > {allowed:.3e}")

    check_consistency(0)
    for k in range(n_steps):
        if k in reanchor_at:
            virt = np.tile(states[k] / n_agents, (n_agents, 1))
            if keep_virtual:
                history[k] = virt
        a_k = s.a(k)
        omega = w.omega_at(k + 1)
        p_next = tables.p_step(k + 1)
        p_breve_next = tables.p_breve_step(k + 1)
        p_bar_inv_next = tables.p_bar_inv_step(k + 1)

        new_virt = np.empty_like(virt)
        step_inputs = []
        bu_sum = np.zeros(n)
        for i in range(n_agents):
            z = fusion_term(i, rev, omega, p_bar_inv_next[i], p_next, a_k, virt)
            b_ki = s.b(k, i)
            gain = distributed_gain(p_breve_next[i], b_ki, s.r(k, i))
            u = gain @ z
            step_inputs.append(u)
            new_virt[i] = z + b_ki @ u
            bu_sum += b_ki @ u
        states[k + 1] = a_k @ states[k] + bu_sum
        virt = new_virt
        if keep_virtual:
            history[k + 1] = virt
        inputs.append(tuple(step_inputs))
        check_consistency(k + 1)

    traj = Trajectory(states=states, inputs=tuple(inputs),
                      messages_per_step=per_step_messages,
                      messages_total=per_step_messages * n_steps)
    return ClosedLoopRun(
        trajectory=traj,
        virtual=VirtualStateHistory(states=history) if keep_virtual else None,
        tables=tables)


def run_closed_loop(s: SystemSchedule, g: DirectedGraph, w, tables,
                    x0, n_steps: int | None = None, virtual_init=None,
                    keep_virtual: bool = True,
                    consistency_tol: float = 1e-8) -> ClosedLoopRun:
    """Simulate the distributed controller against the true plant.

    ``tables`` is the design-phase output (finite-horizon tables or
    stationary fixed points).  ``virtual_init`` overrides the default even
    split x0/N, e.g. with per-agent consensus estimates.  Exactly one
    message crosses each non-self edge per step.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if not np.isfinite(x0).all():
        raise ValueError("initial state must be finite")
    if x0.shape[0] != s.n:
        raise ValueError(f"initial state has dimension {x0.shape[0]}, expected {s.n}")
    if tables.n_agents != s.n_agents or tables.n != s.n:
        raise ValueError("tables were designed for a different system size")
    if n_steps is None:
        n_steps = tables.horizon if tables.horizon is not None else s.horizon
    if n_steps is None:
        raise ValueError("n_steps is required when both horizon and tables are unbounded")
    if tables.horizon is not None and n_steps > tables.horizon:
        raise ValueError(f"tables cover {tables.horizon} steps, asked for {n_steps}")
    return _simulate(s, g, w, tables, x0, n_steps, virtual_init, keep_virtual,
                     consistency_tol)


def _interval_ends(horizon: int, window: int) -> list:
    full, remainder = divmod(horizon, window)
    ends = [h * window for h in range(1, full + 1)]
    if remainder:
        ends.append(horizon)
    return ends


def design_receding(s: SystemSchedule, g: DirectedGraph, w,
                    window: int) -> RecursionTables:
    """Backward design with interval-wise terminal re-weighting.

    The horizon splits into windows of length ``window``.  Each interval's
    terminal condition N*Qbar folds the following interval's fused tables
    into the state weight, so the intervals chain backward consistently;
    the final interval keeps the plain terminal N*Q[M].
    """
    if s.horizon is None:
        raise ValueError("receding design needs a finite horizon")
    m = s.horizon
    ends = _interval_ends(m, window)
    tables = RecursionTables(
        horizon=m, n_agents=s.n_agents, n=s.n,
        p_breve=np.full((m + 1, s.n_agents, s.n, s.n), np.nan),
        p=np.full((m + 1, s.n_agents, s.n, s.n), np.nan),
        p_bar_inv=np.full((m + 1, s.n_agents, s.n, s.n), np.nan),
    )
    bounds = [0] + ends
    for seg in range(len(ends) - 1, -1, -1):
        lo, hi = bounds[seg], bounds[seg + 1]
        if hi == m:
            terminal = s.n_agents * s.q(m)
        else:
            a_hi = s.a(hi)
            p_mean = tables.p[hi + 1].mean(axis=0)
            q_bar = s.q(hi) + linalg.symmetrize(a_hi.T @ p_mean @ a_hi)
            terminal = s.n_agents * q_bar
        for i in range(s.n_agents):
            tables.p_breve[hi, i] = terminal
        fill_backward_range(tables, s, g, w, k_lo=lo, k_hi=hi)
    return tables


def run_receding_horizon(s: SystemSchedule, g: DirectedGraph, w, x0,
                         window: int, controllability_window: int = 1,
                         keep_virtual: bool = True,
                         consistency_tol: float = 1e-8) -> ClosedLoopRun:
    """Closed loop with virtual states re-anchored to measured plant state.

    At the start of every interval the agents reset their virtual states to
    x[k]/N from the measured plant state, bounding virtual-state drift over
    long horizons.  ``window`` must be at least the agent count plus the
    controllability window.  With ``window >= horizon`` this reduces
    exactly to the plain closed loop.
    """
    if window < s.n_agents + controllability_window:
        raise ValueError(
            f"window {window} is smaller than agents + controllability window "
            f"({s.n_agents} + {controllability_window})")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    tables = design_receding(s, g, w, window)
    reanchor = frozenset(e for e in _interval_ends(s.horizon, window) if e < s.horizon)
    return _simulate(s, g, w, tables, x0, s.horizon, None, keep_virtual,
                     consistency_tol, reanchor_at=reanchor)
