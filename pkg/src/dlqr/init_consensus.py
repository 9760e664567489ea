"""Distributed acquisition of the initial plant state.

Two network situations are covered: a subset of agents knows the full
initial state and floods it out (``broadcast_init``), or every agent sees
only a linear slice H_i x0 and the network reconstructs the whole vector
through per-block consensus plus a normal-equations solve
(``partial_obs_init``).  Both protocols run on the reversed communication
graph, matching the orientation the performing phase uses, with the fixed
mixing gain 1/N.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConsensusConvergenceError, GraphValidationError, ObservationRankError
from .graph import DirectedGraph, reverse, validate_strongly_connected


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """Who knows what about x0: full holders, or per-agent row slices."""

    holders: frozenset | None = None
    h_blocks: tuple | None = None

    @classmethod
    def full_state(cls, holders) -> "ObservationModel":
        return cls(holders=frozenset(int(h) for h in holders), h_blocks=None)

    @classmethod
    def partial(cls, h_blocks) -> "ObservationModel":
        blocks = tuple(np.atleast_2d(np.asarray(h, dtype=float)) for h in h_blocks)
        return cls(holders=None, h_blocks=blocks)


@dataclass(eq=False)
class ConsensusResult:
    estimates: np.ndarray = field(repr=False)  # (N, n)
    iterations: int = 0
    final_error: float = 0.0


def _pinned_consensus(rev: DirectedGraph, pinned: dict, length: int,
                      truth: np.ndarray, tol: float, max_iters: int) -> ConsensusResult:
    """Iterate value mixing with some agents pinned to the true payload.

    Non-pinned agents start from zero and apply
    v_i += (1/N) * sum_(in-neighbors j) (v_j - v_i).  Convergence is judged
    against the ground-truth payload, which the simulation knows even
    though individual agents do not.
    """
    n_agents = rev.n_nodes
    values = np.zeros((n_agents, length))
    for idx in pinned:
        values[idx] = truth
    free = [i for i in range(n_agents) if i not in pinned]
    neighbor_lists = [rev.in_neighbors(i) for i in range(n_agents)]

    def error():
        return float(np.linalg.norm(values - truth[np.newaxis, :], axis=1).max())

    history = []
    iterations = 0
    err = error()
    while err >= tol and iterations < max_iters:
        new_values = values.copy()
        for i in free:
            delta = np.zeros(length)
            for j in neighbor_lists[i]:
                delta += values[j] - values[i]
            new_values[i] = values[i] + delta / n_agents
        values = new_values
        iterations += 1
        err = error()
        history.append(err)
    if err >= tol:
        raise ConsensusConvergenceError(
            f"consensus still at error {err:.3e} after {max_iters} iterations",
            residual_history=history)
    return ConsensusResult(estimates=values, iterations=iterations, final_error=err)


def broadcast_init(g: DirectedGraph, holders, x0, tol: float = 1e-9,
                   max_iters: int | None = None) -> ConsensusResult:
    """Flood the full initial state from the holder set to every agent.

    Holders keep their estimate pinned at x0; the rest mix neighbor values
    until everyone is within ``tol`` of the truth.  Converges geometrically
    on any strongly connected graph.
    """
    holders = frozenset(int(h) for h in holders)
    if not holders:
        raise ValueError("at least one agent must hold the initial state")
    if not validate_strongly_connected(g):
        raise GraphValidationError("consensus requires a strongly connected graph")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if max_iters is None:
        max_iters = 100 * g.n_nodes
    return _pinned_consensus(reverse(g), {h: None for h in holders}, x0.shape[0],
                             x0, tol, max_iters)


def partial_obs_init(g: DirectedGraph, obs: ObservationModel, x0,
                     tol: float = 1e-9, max_iters: int | None = None) -> ConsensusResult:
    """Reconstruct x0 from per-agent row observations H_i x0.

    Each observing agent floods its observation block and its H rows
    (flattened column-major) through pinned consensus; every agent then
    solves the stacked normal equations.  The stacked H must have full
    column rank, otherwise no method, centralized or not, can recover x0.
    """
    if obs.h_blocks is None:
        raise ValueError("observation model carries no per-agent blocks")
    if not validate_strongly_connected(g):
        raise GraphValidationError("consensus requires a strongly connected graph")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = x0.shape[0]
    n_agents = g.n_nodes
    blocks = obs.h_blocks
    if len(blocks) != n_agents:
        raise ValueError(f"need one observation block per agent, got {len(blocks)}")
    stacked = np.vstack([b for b in blocks if b.shape[0] > 0])
    if np.linalg.matrix_rank(stacked) < n:
        raise ObservationRankError(
            f"stacked observation matrix has rank {np.linalg.matrix_rank(stacked)} < {n}")
    if max_iters is None:
        max_iters = 100 * n_agents

    rev = reverse(g)
    # every agent accumulates each source's payload: [H_j x0, vec(H_j)]
    received = [[] for _ in range(n_agents)]
    rounds = 0
    for src, h_src in enumerate(blocks):
        rows = h_src.shape[0]
        if rows == 0:
            continue
        payload = np.concatenate([h_src @ x0, h_src.flatten(order="F")])
        res = _pinned_consensus(rev, {src: None}, payload.shape[0], payload,
                                tol, max_iters)
        rounds = max(rounds, res.iterations)
        for i in range(n_agents):
            got = res.estimates[i]
            received[i].append((got[:rows], got[rows:].reshape((rows, n), order="F")))

    estimates = np.empty((n_agents, n))
    for i in range(n_agents):
        y_i = np.concatenate([y for y, _ in received[i]])
        h_i = np.vstack([h for _, h in received[i]])
        estimates[i], *_ = np.linalg.lstsq(h_i, y_i, rcond=None)
    final = float(np.linalg.norm(estimates - x0[np.newaxis, :], axis=1).max())
    return ConsensusResult(estimates=estimates, iterations=rounds, final_error=final)
