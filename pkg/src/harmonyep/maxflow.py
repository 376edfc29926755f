"""Dinic max-flow on small integer networks, with mutable capacities.

The solver in :mod:`harmonyep.scheduler` repeatedly re-solves the same
network with different bounds (expert loads and per-GPU caps change
between probes and micro-batches), so this implementation supports:

- lowering the capacity of an edge below its current flow (the excess is
  drained back along the path source -> tail before the cap is applied),
- counting BFS phases, which the scheduler reports as solver iterations.

Capacities and flows are plain Python ints (arbitrary precision).
"""

from __future__ import annotations

from collections import deque


class Dinic:
    def __init__(self, n: int):
        self.n = n
        self.head: list[list[int]] = [[] for _ in range(n)]
        self.to: list[int] = []
        self.cap: list[int] = []
        self.bfs_phases = 0

    def add_edge(self, u: int, v: int, cap: int) -> int:
        """Add edge u->v with capacity cap; returns its edge id (even)."""
        eid = len(self.to)
        self.head[u].append(eid)
        self.to.append(v)
        self.cap.append(cap)
        self.head[v].append(eid + 1)
        self.to.append(u)
        self.cap.append(0)
        return eid

    def flow_on(self, eid: int) -> int:
        return self.cap[eid ^ 1]

    def residual(self, eid: int) -> int:
        return self.cap[eid]

    def add_capacity(self, eid: int, delta: int) -> None:
        self.cap[eid] += delta

    def set_capacity(self, eid: int, new_cap: int) -> int:
        """Set total capacity of an edge; flow must already be <= new_cap.

        Returns the new residual. Use :meth:`drain_edge` first if the
        current flow exceeds the new capacity.
        """
        f = self.flow_on(eid)
        if f > new_cap:
            raise ValueError("flow exceeds new capacity; drain first")
        self.cap[eid] = new_cap - f
        return self.cap[eid]

    def force_flow(self, eid: int, flow: int, total_cap: int) -> None:
        """Overwrite an edge's flow and capacity (bookkeeping reset)."""
        self.cap[eid] = total_cap - flow
        self.cap[eid ^ 1] = flow

    def _bfs(self, s: int, t: int) -> list[int] | None:
        level = [-1] * self.n
        level[s] = 0
        q = deque([s])
        self.bfs_phases += 1
        while q:
            u = q.popleft()
            for eid in self.head[u]:
                v = self.to[eid]
                if self.cap[eid] > 0 and level[v] < 0:
                    level[v] = level[u] + 1
                    q.append(v)
        return level if level[t] >= 0 else None

    def _dfs(self, u: int, t: int, pushed: int, level: list[int], it: list[int]) -> int:
        if u == t:
            return pushed
        total = 0
        while it[u] < len(self.head[u]):
            eid = self.head[u][it[u]]
            v = self.to[eid]
            if self.cap[eid] > 0 and level[v] == level[u] + 1:
                d = self._dfs(v, t, min(pushed, self.cap[eid]), level, it)
                if d > 0:
                    self.cap[eid] -= d
                    self.cap[eid ^ 1] += d
                    total += d
                    pushed -= d
                    if pushed == 0:
                        return total
                else:
                    level[v] = -1
            it[u] += 1
        return total

    def max_flow(self, s: int, t: int, limit: int | None = None) -> int:
        """Augment from the current flow state; returns the amount pushed."""
        pushed = 0
        bound = limit if limit is not None else (1 << 293)
        while pushed < bound:
            level = self._bfs(s, t)
            if level is None:
                break
            it = [0] * self.n
            d = self._dfs(s, t, bound - pushed, level, it)
            if d == 0:
                break
            pushed += d
        return pushed

    def min_cut_side(self, s: int) -> list[bool]:
        """Vertices reachable from s in the residual graph."""
        seen = [False] * self.n
        seen[s] = True
        q = deque([s])
        while q:
            u = q.popleft()
            for eid in self.head[u]:
                v = self.to[eid]
                if self.cap[eid] > 0 and not seen[v]:
                    seen[v] = True
                    q.append(v)
        return seen
