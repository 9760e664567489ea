"""Directed communication graphs with mandatory self-loops.

Edge convention: the ordered pair ``(i, j)`` means node ``i`` receives
information from node ``j``.  The adjacency matrix mirrors the edge set,
``a[i, j] == 1`` iff ``(i, j)`` is an edge, and every node carries a
self-loop that cannot be removed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GraphValidationError


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    """Immutable directed graph over nodes 0..n_nodes-1 with self-loops."""

    n_nodes: int
    edges: frozenset
    adjacency: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, n_nodes: int, edges) -> "DirectedGraph":
        """Build a graph from an iterable of (receiver, sender) pairs.

        Self-loops are inserted automatically for every node.
        """
        if n_nodes < 1:
            raise GraphValidationError("graph needs at least one node")
        full = set()
        for i, j in edges:
            if not (0 <= i < n_nodes and 0 <= j < n_nodes):
                raise GraphValidationError(f"edge ({i}, {j}) out of range for {n_nodes} nodes")
            full.add((int(i), int(j)))
        full.update((i, i) for i in range(n_nodes))
        adj = np.zeros((n_nodes, n_nodes), dtype=np.int64)
        for i, j in full:
            adj[i, j] = 1
        adj.flags.writeable = False
        return cls(n_nodes=n_nodes, edges=frozenset(full), adjacency=adj)

    @classmethod
    def from_adjacency(cls, adjacency) -> "DirectedGraph":
        """Build a graph from a 0/1 adjacency matrix (self-loops forced on)."""
        adj = np.asarray(adjacency)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise GraphValidationError("adjacency must be a square matrix")
        n = adj.shape[0]
        edges = {(i, j) for i in range(n) for j in range(n) if adj[i, j]}
        return cls.from_edges(n, edges)

    @classmethod
    def ring(cls, n_nodes: int) -> "DirectedGraph":
        """Directed ring: node i receives from node (i+1) mod n."""
        return cls.from_edges(n_nodes, [(i, (i + 1) % n_nodes) for i in range(n_nodes)])

    @classmethod
    def complete(cls, n_nodes: int) -> "DirectedGraph":
        """Complete graph: every node receives from every node."""
        return cls.from_edges(
            n_nodes, [(i, j) for i in range(n_nodes) for j in range(n_nodes)]
        )

    def in_neighbors(self, i: int) -> tuple:
        """Nodes i receives from, including i itself."""
        return tuple(int(j) for j in np.nonzero(self.adjacency[i])[0])

    def in_degree(self, i: int) -> int:
        return int(self.adjacency[i].sum())

    def out_degree(self, j: int) -> int:
        """Number of nodes receiving from j, including j itself."""
        return int(self.adjacency[:, j].sum())

    @property
    def out_degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=0)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_messages_per_round(self) -> int:
        """Edges excluding self-loops; one message crosses each per round."""
        return self.n_edges - self.n_nodes

    def __repr__(self):  # adjacency omitted, edges sorted for stable output
        return f"DirectedGraph(n_nodes={self.n_nodes}, edges={sorted(self.edges)})"


def _check_well_formed(g: DirectedGraph) -> None:
    adj = np.asarray(g.adjacency)
    if adj.shape != (g.n_nodes, g.n_nodes):
        raise GraphValidationError("adjacency shape disagrees with node count")
    rebuilt = {(i, j) for i in range(g.n_nodes) for j in range(g.n_nodes) if adj[i, j]}
    if rebuilt != set(g.edges):
        raise GraphValidationError("adjacency matrix disagrees with edge set")
    if any(adj[i, i] != 1 for i in range(g.n_nodes)):
        raise GraphValidationError("every node must keep its self-loop")


def validate_strongly_connected(g: DirectedGraph) -> bool:
    """True iff every node can reach every node along directed edges.

    Runs an iterative Tarjan pass; the graph is strongly connected exactly
    when a single component comes back.  Raises ``GraphValidationError`` if
    the adjacency matrix and edge set disagree.
    """
    _check_well_formed(g)
    n = g.n_nodes
    if n == 1:
        return True

    successors = [list(np.nonzero(g.adjacency[:, j])[0]) for j in range(n)]
    index = [-1] * n
    lowlink = [0] * n
    on_stack = [False] * n
    stack = []
    counter = 0
    n_components = 0

    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, iter(successors[root]))]
        index[root] = lowlink[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if index[w] == -1:
                    index[w] = lowlink[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, iter(successors[w])))
                    advanced = True
                    break
                if on_stack[w]:
                    lowlink[v] = min(lowlink[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[v])
            if lowlink[v] == index[v]:
                n_components += 1
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    if w == v:
                        break
    return n_components == 1


def reverse(g: DirectedGraph) -> DirectedGraph:
    """Flip every edge direction; self-loops are fixed points."""
    return DirectedGraph.from_edges(g.n_nodes, [(j, i) for (i, j) in g.edges])


def adjacency_power_all_positive(g: DirectedGraph, power: int) -> bool:
    """True iff every entry of adjacency**power is positive.

    For a strongly connected graph with self-loops this holds for any
    power >= n_nodes - 1.
    """
    if power < 1:
        raise ValueError("power must be a positive integer")
    acc = np.linalg.matrix_power(g.adjacency.astype(np.int64), power)
    return bool((acc > 0).all())


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Fusion weights, one positive entry per edge.

    Entry ``omega[i, j]`` couples receiver i to sender j and must lie in
    (0, 1/out_degree(j)].
    """

    omega: np.ndarray = field(repr=False)

    @classmethod
    def for_graph(cls, g: DirectedGraph, omega) -> "WeightMatrix":
        om = np.array(omega, dtype=float)
        if om.shape != (g.n_nodes, g.n_nodes):
            raise GraphValidationError("weight matrix shape disagrees with graph")
        douts = g.out_degrees
        for i in range(g.n_nodes):
            for j in range(g.n_nodes):
                if g.adjacency[i, j]:
                    if not (0.0 < om[i, j] <= 1.0 / douts[j] + 1e-15):
                        raise GraphValidationError(
                            f"weight omega[{i},{j}]={om[i, j]} outside (0, 1/{douts[j]}]"
                        )
                elif om[i, j] != 0.0:
                    raise GraphValidationError(f"nonzero weight on missing edge ({i},{j})")
        om.flags.writeable = False
        return cls(omega=om)

    def omega_at(self, k: int) -> np.ndarray:
        """Weights for recursion index k (constant across steps)."""
        return self.omega

    @property
    def max_weight(self) -> float:
        return float(self.omega.max())


def default_weights(g: DirectedGraph) -> WeightMatrix:
    """Weights at the upper endpoint: omega[i, j] = 1/out_degree(j).

    Each sender's column then sums to exactly one over its receivers, making
    the per-step fusion a proper convex-like combination.
    """
    douts = g.out_degrees.astype(float)
    omega = g.adjacency / douts[np.newaxis, :]
    return WeightMatrix.for_graph(g, omega)


def random_strongly_connected(n_nodes: int, rng: np.random.Generator,
                              extra_edge_prob: float = 0.3) -> DirectedGraph:
    """Random strongly connected digraph: a ring plus random extra edges."""
    perm = rng.permutation(n_nodes)
    edges = {(int(perm[i]), int(perm[(i + 1) % n_nodes])) for i in range(n_nodes)}
    mask = rng.random((n_nodes, n_nodes)) < extra_edge_prob
    for i in range(n_nodes):
        for j in range(n_nodes):
            if i != j and mask[i, j]:
                edges.add((i, j))
    return DirectedGraph.from_edges(n_nodes, edges)
