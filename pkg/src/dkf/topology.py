"""Switching weighted digraphs and connectivity validation.

Adjacency matrices are row stochastic with positive diagonals; entry
a[i, j] > 0 means node i receives messages from node j.  Connectivity is
checked by depth-first search from every node (networks here are small),
and the joint-connectivity validator unions the graphs active on each
interval of the switching signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Digraph:
    adjacency: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=float)
        object.__setattr__(self, "adjacency", a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError(f"adjacency must be square, got shape {a.shape}")
        if np.any(a < 0):
            raise ValidationError("adjacency weights must be nonnegative")
        if np.any(np.abs(a.sum(axis=1) - 1.0) > _ROW_SUM_TOL):
            bad = int(np.argmax(np.abs(a.sum(axis=1) - 1.0)))
            raise ValidationError(
                f"adjacency row {bad} sums to {a[bad].sum()!r}, must be row stochastic"
            )
        if np.any(np.diag(a) <= 0):
            bad = int(np.argmin(np.diag(a)))
            raise ValidationError(f"adjacency diagonal entry {bad} must be positive")

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        """Nodes j with a[i, j] > 0 (includes i itself)."""
        return np.flatnonzero(self.adjacency[i] > 0)


def union_graph(*graphs) -> np.ndarray:
    """0/1 edge matrix with an edge wherever any constituent has positive
    weight; weights are irrelevant to connectivity."""
    mats = [g.adjacency if isinstance(g, Digraph) else np.asarray(g) for g in graphs]
    out = np.zeros_like(mats[0], dtype=float)
    for m in mats:
        out = np.where(m > 0, 1.0, out)
    return out


def is_strongly_connected(g) -> bool:
    """True iff every ordered node pair is joined by a directed path of
    positive-weight edges."""
    a = g.adjacency if isinstance(g, Digraph) else np.asarray(g)
    n = a.shape[0]
    edges = a > 0
    for s in range(n):
        seen = np.zeros(n, dtype=bool)
        stack = [s]
        seen[s] = True
        while stack:
            v = stack.pop()
            for w in np.flatnonzero(edges[v]):
                if not seen[w]:
                    seen[w] = True
                    stack.append(int(w))
        if not seen.all():
            return False
    return True


@dataclass
class TopologySchedule:
    """A finite family of digraphs with a switching signal sigma(k).

    ``sigma`` maps time to a 0-based index into ``graphs``.  ``intervals``
    holds the endpoints k_l of the analysis intervals used by the joint
    connectivity check; when omitted they default to the dwell boundaries
    of the switching signal on the queried horizon.
    """

    graphs: Sequence[Digraph]
    sigma: Callable[[int], int]
    intervals: list[int] | None = None

    def __post_init__(self):
        if not self.graphs:
            raise ValidationError("schedule needs at least one digraph")
        n = self.graphs[0].n_nodes
        if any(g.n_nodes != n for g in self.graphs):
            raise ValidationError("all digraphs must share the node count")

    @property
    def n_nodes(self) -> int:
        return self.graphs[0].n_nodes

    def index_at(self, k: int) -> int:
        s = self.sigma(k)
        if not 0 <= s < len(self.graphs):
            raise ValidationError(f"sigma({k}) = {s} out of range")
        return s

    def adjacency_at(self, k: int) -> Digraph:
        return self.graphs[self.index_at(k)]

    def dwell_boundaries(self, horizon: int) -> list[int]:
        """Times where sigma changes value, plus both horizon endpoints."""
        bounds = [0]
        for k in range(1, horizon + 1):
            if self.index_at(k) != self.index_at(k - 1):
                bounds.append(k)
        if bounds[-1] != horizon:
            bounds.append(horizon)
        return bounds

    def interval_bound(self, horizon: int) -> int:
        """Max interval length k0 computed from the schedule."""
        ks = self.intervals if self.intervals else self.dwell_boundaries(horizon)
        return max(b - a for a, b in zip(ks[:-1], ks[1:]))


@dataclass
class IntervalVerdict:
    start: int
    end: int
    connected: bool


@dataclass
class ConnectivityReport:
    verdicts: list[IntervalVerdict] = field(default_factory=list)
    weight_set: tuple[float, ...] = ()
    interval_bound: int = 0

    @property
    def all_connected(self) -> bool:
        return all(v.connected for v in self.verdicts)

    def failures(self) -> list[IntervalVerdict]:
        return [v for v in self.verdicts if not v.connected]


def check_joint_connectivity(schedule: TopologySchedule, horizon: int) -> ConnectivityReport:
    """Per-interval verdict that the union of graphs active over
    [k_l, k_{l+1}] (endpoints inclusive) is strongly connected, plus the
    finite weight set drawn on."""
    ks = schedule.intervals if schedule.intervals else schedule.dwell_boundaries(horizon)
    report = ConnectivityReport(interval_bound=schedule.interval_bound(horizon))
    for a, b in zip(ks[:-1], ks[1:]):
        members = {schedule.index_at(k) for k in range(a, min(b, horizon) + 1)}
        u = union_graph(*(schedule.graphs[s] for s in sorted(members)))
        report.verdicts.append(IntervalVerdict(a, b, is_strongly_connected(u)))
    weights = set()
    for g in schedule.graphs:
        weights.update(np.unique(g.adjacency).tolist())
    report.weight_set = tuple(sorted(weights))
    return report
