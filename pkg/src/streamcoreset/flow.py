"""Min-cost flow by successive shortest paths with node potentials.

Arc costs are nonnegative doubles and capacities are integers, so every flow
returned is integral. Arc lower bounds are removed by the usual excess
transformation: the lower bound is pushed up front and the resulting node
imbalances are routed from a super source to a super sink.
"""

from __future__ import annotations

import heapq
from typing import List

REDUCED_COST_TOL = 1e-9


class FlowInfeasible(ValueError):
    """Supplies, demands and lower bounds cannot all be met."""


class MinCostFlow:
    """A small residual-graph min-cost flow solver.

    Args:
        n_nodes: number of nodes, numbered from 0.

    Example:
        >>> g = MinCostFlow(2)
        >>> e = g.add_edge(0, 1, cap=3, cost=2.0)
        >>> g.solve([3, -3])
        6.0
        >>> g.flow(e)
        3
    """

    def __init__(self, n_nodes: int):
        self.n = n_nodes
        self._to: List[int] = []
        self._cap: List[int] = []
        self._cost: List[float] = []
        self._adj: List[List[int]] = [[] for _ in range(n_nodes)]
        self._lower: List[int] = []
        self._orig_cap: List[int] = []

    def add_edge(self, u: int, v: int, cap: int, cost: float, lower: int = 0) -> int:
        """Add arc ``u -> v`` carrying between ``lower`` and ``cap`` units.

        Returns:
            An edge id for :meth:`flow`.
        """
        if cost < 0:
            raise ValueError("arc costs must be nonnegative")
        if lower < 0 or cap < lower:
            raise ValueError("need 0 <= lower <= cap")
        eid = len(self._to)
        self._to += [v, u]
        self._cap += [int(cap - lower), 0]
        self._cost += [float(cost), -float(cost)]
        self._adj[u].append(eid)
        self._adj[v].append(eid + 1)
        self._lower += [int(lower), 0]
        self._orig_cap += [int(cap), 0]
        return eid

    def flow(self, eid: int) -> int:
        """Flow on an edge after :meth:`solve`, including its lower bound."""
        return self._lower[eid] + self._cap[eid ^ 1]

    def solve(self, supply) -> float:
        """Route ``supply`` (positive = source, negative = sink) at minimum cost.

        A solver instance is meant to be solved once.

        Returns:
            The total cost including lower-bound flow.

        Raises:
            FlowInfeasible: if the supplies cannot be routed.
        """
        if len(supply) != self.n:
            raise ValueError("need one supply value per node")
        if sum(supply) != 0:
            raise FlowInfeasible("supplies and demands do not balance")
        excess = [int(b) for b in supply]
        base = 0.0
        for eid in range(0, len(self._to), 2):
            low = self._lower[eid]
            if low:
                u, v = self._to[eid + 1], self._to[eid]
                excess[u] -= low
                excess[v] += low
                base += low * self._cost[eid]
        src, snk = self.n, self.n + 1
        self._adj += [[], []]
        need = 0
        for v, b in enumerate(excess):
            if b > 0:
                self._add_residual(src, v, b)
                need += b
            elif b < 0:
                self._add_residual(v, snk, -b)
        try:
            sent, cost = self._augment(src, snk, need)
        finally:
            self._adj[src:] = []
        if sent < need:
            raise FlowInfeasible(f"only {sent} of {need} units could be routed")
        return base + cost

    def _add_residual(self, u, v, cap):
        eid = len(self._to)
        self._to += [v, u]
        self._cap += [cap, 0]
        self._cost += [0.0, 0.0]
        self._adj[u].append(eid)
        self._adj[v].append(eid + 1)
        self._lower += [0, 0]
        self._orig_cap += [cap, 0]

    def _augment(self, src: int, snk: int, need: int):
        n = len(self._adj)
        pot = [0.0] * n
        sent, total = 0, 0.0
        to, cap, cost, adj = self._to, self._cap, self._cost, self._adj
        inf = float("inf")
        while sent < need:
            dist = [inf] * n
            prev = [-1] * n
            dist[src] = 0.0
            heap = [(0.0, src)]
            while heap:
                d, u = heapq.heappop(heap)
                if d > dist[u]:
                    continue
                pu = pot[u]
                for eid in adj[u]:
                    if cap[eid] <= 0:
                        continue
                    v = to[eid]
                    rc = cost[eid] + pu - pot[v]
                    if rc < 0:
                        # potentials keep reduced costs nonnegative up to rounding
                        if rc < -REDUCED_COST_TOL * max(1.0, abs(pot[v])):
                            raise RuntimeError(f"negative reduced cost {rc}")
                        rc = 0.0
                    nd = d + rc
                    if nd < dist[v]:
                        dist[v] = nd
                        prev[v] = eid
                        heapq.heappush(heap, (nd, v))
            if dist[snk] == inf:
                break
            for v in range(n):
                if dist[v] < inf:
                    pot[v] += dist[v]
            push = need - sent
            v = snk
            while v != src:
                eid = prev[v]
                push = min(push, cap[eid])
                v = to[eid ^ 1]
            v = snk
            while v != src:
                eid = prev[v]
                cap[eid] -= push
                cap[eid ^ 1] += push
                total += push * cost[eid]
                v = to[eid ^ 1]
            sent += push
        return sent, total
