"""Time-varying multi-input system schedules and their verification.

A schedule describes one plant driven by several agents:

    x[k+1] = A[k] x[k] + sum_i B[k, i] u[k, i]

with per-step state weight Q[k] and per-agent input weights R[k, i].
Matrices are exposed through callables so that long horizons with many
agents never need full tabulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import linalg
from .errors import ScheduleValidationError

#: reciprocal condition number below this means the state matrix is
#: treated as singular and the schedule is rejected
SINGULARITY_RCOND = 1e-12

#: relative eigenvalue floor for accepting a weight matrix as positive definite
SPD_REL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SystemSchedule:
    """Immutable description of the plant, inputs and cost weights.

    ``horizon`` is the final step index M, or None for an infinite-horizon
    (necessarily time-invariant) schedule.  ``input_dims[i]`` is the width
    of agent i's input matrix.
    """

    n: int
    n_agents: int
    horizon: int | None
    input_dims: tuple
    time_invariant: bool
    _a: Callable = field(repr=False)
    _b: Callable = field(repr=False)
    _q: Callable = field(repr=False)
    _r: Callable = field(repr=False)

    # -- accessors ---------------------------------------------------------
    def a(self, k: int) -> np.ndarray:
        return np.asarray(self._a(k), dtype=float)

    def b(self, k: int, i: int) -> np.ndarray:
        out = np.asarray(self._b(k, i), dtype=float)
        if out.ndim == 1:
            out = out[:, np.newaxis]
        return out

    def q(self, k: int) -> np.ndarray:
        return np.asarray(self._q(k), dtype=float)

    def r(self, k: int, i: int) -> np.ndarray:
        return np.atleast_2d(np.asarray(self._r(k, i), dtype=float))

    def stacked_b(self, k: int) -> np.ndarray:
        """Horizontal concatenation [B[k,0], ..., B[k,N-1]]."""
        return np.hstack([self.b(k, i) for i in range(self.n_agents)])

    def block_r(self, k: int) -> np.ndarray:
        """Block-diagonal of the per-agent input weights at step k."""
        return linalg.block_diag([self.r(k, i) for i in range(self.n_agents)])

    @property
    def total_input_dim(self) -> int:
        return sum(self.input_dims)

    # -- constructors ------------------------------------------------------
    @classmethod
    def from_callables(cls, n, n_agents, horizon, a, b, q, r,
                       time_invariant=False) -> "SystemSchedule":
        dims = tuple(int(np.asarray(b(0, i)).reshape(n, -1).shape[1]) for i in range(n_agents))
        return cls(n=n, n_agents=n_agents, horizon=horizon, input_dims=dims,
                   time_invariant=time_invariant, _a=a, _b=b, _q=q, _r=r)

    @classmethod
    def constant(cls, a, b_list, q, r_list, horizon=None) -> "SystemSchedule":
        """Time-invariant schedule from one set of matrices."""
        a = np.asarray(a, dtype=float)
        b_list = [np.asarray(bi, dtype=float).reshape(a.shape[0], -1) for bi in b_list]
        q = np.asarray(q, dtype=float)
        r_list = [np.atleast_2d(np.asarray(ri, dtype=float)) for ri in r_list]
        if len(r_list) != len(b_list):
            raise ScheduleValidationError("need one input weight per agent")
        return cls.from_callables(
            n=a.shape[0], n_agents=len(b_list), horizon=horizon,
            a=lambda k: a, b=lambda k, i: b_list[i], q=lambda k: q,
            r=lambda k, i: r_list[i], time_invariant=True)

    @classmethod
    def from_tables(cls, a_steps, b_steps, q_steps, r_steps) -> "SystemSchedule":
        """Explicit per-step tables; the horizon is their common length.

        ``a_steps[k]``, ``q_steps[k]`` are matrices; ``b_steps[k][i]`` and
        ``r_steps[k][i]`` are per-agent.  Q must carry one extra entry for
        the terminal step.
        """
        horizon = len(a_steps)
        if len(q_steps) != horizon + 1:
            raise ScheduleValidationError("state-weight table must cover the terminal step")
        if len(b_steps) != horizon or len(r_steps) != horizon:
            raise ScheduleValidationError("input tables must cover steps 0..M-1")
        n_agents = len(b_steps[0])
        a_t = [np.asarray(x, dtype=float) for x in a_steps]
        q_t = [np.asarray(x, dtype=float) for x in q_steps]
        b_t = [[np.asarray(x, dtype=float).reshape(a_t[0].shape[0], -1) for x in row]
               for row in b_steps]
        r_t = [[np.atleast_2d(np.asarray(x, dtype=float)) for x in row] for row in r_steps]

        def q_fn(k):
            return q_t[min(k, horizon)]

        return cls.from_callables(
            n=a_t[0].shape[0], n_agents=n_agents, horizon=horizon,
            a=lambda k: a_t[k], b=lambda k, i: b_t[k][i], q=q_fn,
            r=lambda k, i: r_t[k][i], time_invariant=False)


def transition_product(s: SystemSchedule, k: int, h: int) -> np.ndarray:
    """State-transition product A[k+h-1] @ ... @ A[k]; identity for h = 0."""
    if h < 0:
        raise ValueError("window length must be nonnegative")
    if s.horizon is not None and k + h - 1 > s.horizon - 1:
        raise IndexError(f"transition window [{k}, {k + h - 1}] exceeds horizon {s.horizon}")
    if k < 0:
        raise IndexError("step index must be nonnegative")
    out = np.eye(s.n)
    for step in range(k, k + h):
        out = s.a(step) @ out
    return out


@dataclass(frozen=True)
class ControllabilityResult:
    gramian: np.ndarray
    satisfied: bool
    min_eigenvalue: float


def joint_controllability_check(s: SystemSchedule, k: int, window: int,
                                eta: float) -> ControllabilityResult:
    """Finite-window controllability Gramian of the jointly driven plant.

    Accumulates ``Phi B R^-1 B^T Phi^T`` over ``window`` steps starting at
    ``k``, with B the concatenation of all agents' input matrices and R the
    block-diagonal of their weights.  Satisfied iff the smallest Gramian
    eigenvalue reaches ``eta``.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if window < 1:
        raise ValueError("window must be at least one step")
    if s.horizon is not None and k + window - 1 > s.horizon - 1:
        raise IndexError(f"controllability window [{k}, {k + window - 1}] exceeds horizon")
    gram = np.zeros((s.n, s.n))
    for h in range(window):
        phi = transition_product(s, k, h)
        b = s.stacked_b(k + h)
        if b.shape[0] != s.n:
            raise ScheduleValidationError(f"input matrix at step {k + h} has wrong row count")
        r = s.block_r(k + h)
        gram += phi @ b @ linalg.spd_solve(r, b.T) @ phi.T
    gram = linalg.symmetrize(gram)
    lam_min = float(np.linalg.eigvalsh(gram)[0])
    return ControllabilityResult(gramian=gram, satisfied=bool(lam_min >= eta),
                                 min_eigenvalue=lam_min)


@dataclass
class ScheduleReport:
    """Empirical norm/eigenvalue ranges over the inspected horizon.

    The lower constants are eigenvalue floors (not norm floors): the
    analytic table bounds consume them through matrix inverses, so only
    eigenvalue floors make those bounds sound.
    """

    a_norm_min: float
    a_norm_max: float
    a_rcond_min: float
    b_norm_max: float
    q_eig_min: float
    q_eig_max: float
    r_eig_min: float
    r_eig_max: float
    steps_checked: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_schedule(s: SystemSchedule, raise_on_violation: bool = True) -> ScheduleReport:
    """Scan the schedule for singular state matrices and non-SPD weights.

    Returns the norm/eigenvalue report; by default raises
    ``ScheduleValidationError`` (with the report attached) if any check
    fails.  Infinite-horizon schedules must be time-invariant and are
    checked at a single step.
    """
    if s.horizon is None:
        if not s.time_invariant:
            raise ScheduleValidationError(
                "infinite-horizon schedules must be time-invariant")
        a_steps = [0]
        q_steps = [0]
        bru_steps = [0]
    else:
        a_steps = range(s.horizon) if not s.time_invariant else [0]
        q_steps = range(s.horizon + 1) if not s.time_invariant else [0]
        bru_steps = a_steps

    violations = []
    a_norms, rconds, b_norms = [], [], []
    q_lo, q_hi = math.inf, -math.inf
    r_lo, r_hi = math.inf, -math.inf
    steps = 0

    for k in a_steps:
        ak = s.a(k)
        steps += 1
        if ak.shape != (s.n, s.n):
            violations.append(f"A[{k}] has shape {ak.shape}, expected {(s.n, s.n)}")
            continue
        a_norms.append(linalg.spectral_norm(ak))
        rc = linalg.reciprocal_condition(ak)
        rconds.append(rc)
        if rc < SINGULARITY_RCOND:
            violations.append(f"A[{k}] is singular to working precision (rcond={rc:.2e})")

    for k in q_steps:
        qk = s.q(k)
        if qk.shape != (s.n, s.n):
            violations.append(f"Q[{k}] has shape {qk.shape}, expected {(s.n, s.n)}")
            continue
        lo, hi = linalg.eig_range(qk)
        q_lo, q_hi = min(q_lo, lo), max(q_hi, hi)
        if not linalg.is_spd(qk, SPD_REL_TOL):
            violations.append(f"Q[{k}] is not symmetric positive definite")

    for k in bru_steps:
        for i in range(s.n_agents):
            bki = s.b(k, i)
            if bki.shape != (s.n, s.input_dims[i]):
                violations.append(
                    f"B[{k},{i}] has shape {bki.shape}, expected {(s.n, s.input_dims[i])}")
                continue
            b_norms.append(linalg.spectral_norm(bki))
            rki = s.r(k, i)
            if rki.shape != (s.input_dims[i], s.input_dims[i]):
                violations.append(f"R[{k},{i}] has shape {rki.shape}")
                continue
            lo, hi = linalg.eig_range(rki)
            r_lo, r_hi = min(r_lo, lo), max(r_hi, hi)
            if not linalg.is_spd(rki, SPD_REL_TOL):
                violations.append(f"R[{k},{i}] is not symmetric positive definite")

    report = ScheduleReport(
        a_norm_min=min(a_norms) if a_norms else math.nan,
        a_norm_max=max(a_norms) if a_norms else math.nan,
        a_rcond_min=min(rconds) if rconds else math.nan,
        b_norm_max=max(b_norms) if b_norms else math.nan,
        q_eig_min=q_lo if q_lo != math.inf else math.nan,
        q_eig_max=q_hi if q_hi != -math.inf else math.nan,
        r_eig_min=r_lo if r_lo != math.inf else math.nan,
        r_eig_max=r_hi if r_hi != -math.inf else math.nan,
        steps_checked=steps,
        violations=violations,
    )
    if violations and raise_on_violation:
        raise ScheduleValidationError("; ".join(violations), report=report)
    return report
