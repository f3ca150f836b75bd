"""s-t max-flow / min-cut on sparse graphs with terminal capacities.

Nodes are integers ``0..n-1``; the source and sink are implicit.  Arcs between
the same pair of nodes are merged by adding capacities.  After :func:`solve`
every node is labelled ``SOURCE`` (reachable from the source in the residual
graph) or ``SINK``, which fixes the canonical minimal-source-set minimum cut.

Capacities can be changed after a solve and the cut recomputed with
:func:`resolve`, which keeps the previous flow.  Flow that no longer fits a
lowered capacity is rerouted through both terminal links of the affected
nodes; every cut then grows by the same constant, which is tracked and
subtracted from the reported flow.
"""

from __future__ import annotations

import math
from typing import Iterable, NamedTuple

import numpy as np
from numba import njit

SOURCE = 0
SINK = 1
INF_CAP = float(2 ** 40)  # hard-constraint sentinel; real energies stay far below it
EPS = 1e-12


class TerminalUpdate(NamedTuple):
    node: int
    cap_source: float
    cap_sink: float


class ArcUpdate(NamedTuple):
    u: int
    v: int
    cap_uv: float
    cap_vu: float = 0.0


def _check_caps(*caps):
    for c in caps:
        c = np.asarray(c, dtype=np.float64)
        if c.size and (not np.isfinite(c).all() or (c < 0).any()):
            raise ValueError("capacities must be finite and non-negative")


@njit(cache=True)
def _bfs_levels(first, adj, head, res, s, level, queue, eps):
    level[:] = -1
    level[s] = 0
    qh = 0
    qt = 0
    queue[qt] = s
    qt += 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        for k in range(first[u], first[u + 1]):
            a = adj[k]
            v = head[a]
            if level[v] < 0 and res[a] > eps:
                level[v] = level[u] + 1
                queue[qt] = v
                qt += 1


@njit(cache=True)
def _dinic(first, adj, head, res, s, t, eps):
    n = first.shape[0] - 1
    level = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    it = np.empty(n, np.int64)
    path = np.empty(n, np.int64)
    total = 0.0
    while True:
        _bfs_levels(first, adj, head, res, s, level, queue, eps)
        if level[t] < 0:
            break
        for u in range(n):
            it[u] = first[u]
        depth = 0
        u = s
        while True:
            if u == t:
                f = np.inf
                for i in range(depth):
                    r = res[path[i]]
                    if r < f:
                        f = r
                for i in range(depth):
                    a = path[i]
                    res[a] -= f
                    res[a ^ 1] += f
                total += f
                cut = 0
                for i in range(depth):
                    if res[path[i]] <= eps:
                        cut = i
                        break
                depth = cut
                u = s if depth == 0 else head[path[depth - 1]]
                continue
            advanced = False
            end = first[u + 1]
            while it[u] < end:
                a = adj[it[u]]
                v = head[a]
                if res[a] > eps and level[v] == level[u] + 1:
                    path[depth] = a
                    depth += 1
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                if u == s:
                    break
                level[u] = -1
                depth -= 1
                u = head[path[depth] ^ 1]
                it[u] += 1
    return total


@njit(cache=True)
def _reachable(first, adj, head, res, s, eps):
    n = first.shape[0] - 1
    level = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    _bfs_levels(first, adj, head, res, s, level, queue, eps)
    return level >= 0


class FlowGraph:
    """Sparse s-t flow network.  Build with ``add_*`` calls, then :func:`solve`."""

    def __init__(self, n_nodes: int = 0):
        if n_nodes < 0:
            raise ValueError("node count must be non-negative")
        self._n = int(n_nodes)
        self._cs = np.zeros(self._n)
        self._ct = np.zeros(self._n)
        self._pending = []
        self._state = None
        self.flow = None
        self.side = None

    # ------------------------------------------------------------ building
    @property
    def n_nodes(self) -> int:
        return self._n

    def add_nodes(self, count: int) -> int:
        """Append ``count`` nodes; returns the index of the first."""
        first = self._n
        self._n += int(count)
        self._cs = np.concatenate([self._cs, np.zeros(count)])
        self._ct = np.concatenate([self._ct, np.zeros(count)])
        self._invalidate()
        return first

    def add_edge(self, u: int, v: int, cap_uv: float, cap_vu: float = 0.0) -> None:
        self.add_edges([u], [v], [cap_uv], [cap_vu])

    def add_edges(self, us, vs, caps_uv, caps_vu=None) -> None:
        us = np.asarray(us, dtype=np.int64).ravel()
        vs = np.asarray(vs, dtype=np.int64).ravel()
        cuv = np.broadcast_to(np.asarray(caps_uv, dtype=np.float64), us.shape).copy()
        cvu = (np.zeros_like(cuv) if caps_vu is None
               else np.broadcast_to(np.asarray(caps_vu, dtype=np.float64), us.shape).copy())
        _check_caps(cuv, cvu)
        self._check_nodes(us)
        self._check_nodes(vs)
        if (us == vs).any():
            raise ValueError("self-loops are not allowed")
        self._pending.append((us, vs, cuv, cvu))
        self._invalidate()

    def add_tedge(self, u: int, cap_source: float, cap_sink: float) -> None:
        self.add_tedges([u], [cap_source], [cap_sink])

    def add_tedges(self, nodes, caps_source, caps_sink) -> None:
        nodes = np.asarray(nodes, dtype=np.int64).ravel()
        cs = np.broadcast_to(np.asarray(caps_source, dtype=np.float64), nodes.shape)
        ct = np.broadcast_to(np.asarray(caps_sink, dtype=np.float64), nodes.shape)
        _check_caps(cs, ct)
        self._check_nodes(nodes)
        np.add.at(self._cs, nodes, cs)
        np.add.at(self._ct, nodes, ct)
        self._invalidate()

    def _check_nodes(self, nodes):
        if nodes.size and (nodes.min() < 0 or nodes.max() >= self._n):
            raise IndexError("node index out of range")

    def _invalidate(self):
        self._state = None
        self.flow = None
        self.side = None

    # ------------------------------------------------------------ queries
    def edges(self):
        """Merged arcs as ``(lo, hi, cap_lo_hi, cap_hi_lo)`` with ``lo < hi``."""
        n = max(self._n, 1)
        if not self._pending:
            z = np.zeros(0, np.int64)
            return z, z, np.zeros(0), np.zeros(0)
        us, vs, cuv, cvu = (np.concatenate(x) for x in zip(*self._pending))
        swap = us > vs
        lo = np.where(swap, vs, us)
        hi = np.where(swap, us, vs)
        c1 = np.where(swap, cvu, cuv)
        c2 = np.where(swap, cuv, cvu)
        keys, inv = np.unique(lo * n + hi, return_inverse=True)
        c1 = np.bincount(inv, weights=c1, minlength=keys.size)
        c2 = np.bincount(inv, weights=c2, minlength=keys.size)
        self._pending = [(keys // n, keys % n, c1, c2)]
        return keys // n, keys % n, c1, c2

    def terminal_caps(self):
        return self._cs.copy(), self._ct.copy()

    def segment(self, u: int) -> int:
        if self.side is None:
            raise RuntimeError("graph has not been solved")
        return int(self.side[u])

    def cut_value(self, side) -> float:
        """Capacity of the cut given by a per-node SOURCE/SINK assignment."""
        side = np.asarray(side)
        lo, hi, c1, c2 = self.edges()
        sl, sh = side[lo], side[hi]
        total = c1[(sl == SOURCE) & (sh == SINK)].sum() + c2[(sh == SOURCE) & (sl == SINK)].sum()
        total += self._cs[side == SINK].sum() + self._ct[side == SOURCE].sum()
        return float(total)

    # ------------------------------------------------------------- solving
    def _build(self):
        n = self._n
        s, t = n, n + 1
        lo, hi, c1, c2 = self.edges()
        m = lo.size
        ids = np.arange(n, dtype=np.int64)
        tail = np.empty(2 * m + 4 * n, np.int64)
        head = np.empty_like(tail)
        cap = np.empty(tail.size)
        tail[0:2 * m:2], head[0:2 * m:2], cap[0:2 * m:2] = lo, hi, c1
        tail[1:2 * m:2], head[1:2 * m:2], cap[1:2 * m:2] = hi, lo, c2
        o = 2 * m
        tail[o:o + 2 * n:2], head[o:o + 2 * n:2], cap[o:o + 2 * n:2] = s, ids, self._cs
        tail[o + 1:o + 2 * n:2], head[o + 1:o + 2 * n:2], cap[o + 1:o + 2 * n:2] = ids, s, 0.0
        o += 2 * n
        tail[o::2], head[o::2], cap[o::2] = ids, t, self._ct
        tail[o + 1::2], head[o + 1::2], cap[o + 1::2] = t, ids, 0.0
        adj = np.argsort(tail, kind="stable").astype(np.int64)
        first = np.searchsorted(tail[adj], np.arange(n + 3)).astype(np.int64)
        self._state = {
            "m": m, "head": head, "cap": cap, "res": cap.copy(), "adj": adj, "first": first,
            "keys": lo * max(n, 1) + hi, "extra": np.zeros(n), "total": 0.0,
        }

    def _run(self):
        st = self._state
        n = self._n
        st["total"] += _dinic(st["first"], st["adj"], st["head"], st["res"], n, n + 1, EPS)
        reach = _reachable(st["first"], st["adj"], st["head"], st["res"], n, EPS)
        self.side = np.where(reach[:n], SOURCE, SINK).astype(np.int8)
        self.flow = float(st["total"] - st["extra"].sum())
        return self.flow, self.side

    def _sarc(self, x):
        return 2 * self._state["m"] + 2 * x

    def _tarc(self, x):
        return 2 * self._state["m"] + 2 * self._n + 2 * x

    def _push_excess(self, x, delta, to_sink):
        """Raise both terminal links of ``x`` by ``delta`` and push ``delta`` through one of them.

        ``to_sink`` drains an excess at ``x``; otherwise a deficit is fed from the source.
        """
        st = self._state
        st["extra"][x] += delta
        sa, ta = self._sarc(x), self._tarc(x)
        st["cap"][sa] += delta
        st["cap"][ta] += delta
        if to_sink:
            st["res"][sa] += delta
            st["res"][ta ^ 1] += delta
            st["total"] += delta
        else:
            st["res"][ta] += delta
            st["res"][sa ^ 1] += delta

    def _apply(self, update):
        st = self._state
        cap, res = st["cap"], st["res"]
        if isinstance(update, TerminalUpdate) or (len(update) == 3 and not isinstance(update, ArcUpdate)):
            x, cs_new, ct_new = TerminalUpdate(*update)
            x = int(x)
            if not 0 <= x < self._n:
                raise IndexError(f"unknown node {x}")
            _check_caps([cs_new, ct_new])
            sa, ta = self._sarc(x), self._tarc(x)
            fs = cap[sa] - res[sa]
            ft = cap[ta] - res[ta]
            extra = max(0.0, fs - cs_new, ft - ct_new)
            st["extra"][x] = extra
            cap[sa], res[sa] = cs_new + extra, cs_new + extra - fs
            cap[ta], res[ta] = ct_new + extra, ct_new + extra - ft
            self._cs[x], self._ct[x] = cs_new, ct_new
            return
        u, v, cuv, cvu = ArcUpdate(*update)
        u, v = int(u), int(v)
        _check_caps([cuv, cvu])
        if u > v:
            u, v, cuv, cvu = v, u, cvu, cuv
        key = u * max(self._n, 1) + v
        k = int(np.searchsorted(st["keys"], key))
        if k >= st["keys"].size or st["keys"][k] != key:
            raise KeyError(f"no arc between nodes {u} and {v}")
        a = 2 * k
        f = cap[a] - res[a]  # net flow u -> v
        if f > cuv:
            delta = f - cuv
            f = cuv
            self._push_excess(u, delta, to_sink=True)
            self._push_excess(v, delta, to_sink=False)
        elif -f > cvu:
            delta = -f - cvu
            f = -cvu
            self._push_excess(v, delta, to_sink=True)
            self._push_excess(u, delta, to_sink=False)
        cap[a], cap[a ^ 1] = cuv, cvu
        res[a], res[a ^ 1] = cuv - f, cvu + f
        lo, hi, c1, c2 = self._pending[0]
        c1[k], c2[k] = cuv, cvu


def solve(g: FlowGraph):
    """Maximum flow and canonical minimum cut; returns ``(flow, side)``."""
    if g._state is None:
        g._build()
    return g._run()


def resolve(g: FlowGraph, updates: Iterable):
    """Apply absolute capacity changes to a solved graph and re-solve, reusing its flow.

    ``updates`` holds :class:`TerminalUpdate` / :class:`ArcUpdate` items (or
    plain 3-/4-tuples of the same shape).  Arc updates must name an existing
    node pair.
    """
    if g._state is None:
        raise RuntimeError("resolve needs a previously solved graph")
    for up in updates:
        g._apply(up)
    return g._run()


# -------------------------------------------------------------- DIMACS

def to_dimacs(g: FlowGraph) -> str:
    n = g.n_nodes
    s, t = n + 1, n + 2
    lines = []
    lo, hi, c1, c2 = g.edges()
    cs, ct = (c.tolist() for c in g.terminal_caps())
    for u in range(n):
        if cs[u] > 0:
            lines.append(f"a {s} {u + 1} {cs[u]!r}")
        if ct[u] > 0:
            lines.append(f"a {u + 1} {t} {ct[u]!r}")
    for u, v, a, b in zip(lo.tolist(), hi.tolist(), c1.tolist(), c2.tolist()):
        if a > 0:
            lines.append(f"a {u + 1} {v + 1} {a!r}")
        if b > 0:
            lines.append(f"a {v + 1} {u + 1} {b!r}")
    head = [f"p max {n + 2} {len(lines)}", f"n {s} s", f"n {t} t"]
    return "\n".join(head + lines) + "\n"


def from_dimacs(text: str) -> FlowGraph:
    n_total = None
    s = t = None
    arcs = []
    for raw in text.splitlines():
        parts = raw.split()
        if not parts or parts[0] == "c":
            continue
        if parts[0] == "p":
            if len(parts) != 4 or parts[1] != "max":
                raise ValueError(f"bad problem line: {raw!r}")
            n_total = int(parts[2])
        elif parts[0] == "n":
            if parts[2] == "s":
                s = int(parts[1])
            elif parts[2] == "t":
                t = int(parts[1])
            else:
                raise ValueError(f"bad node line: {raw!r}")
        elif parts[0] == "a":
            arcs.append((int(parts[1]), int(parts[2]), float(parts[3])))
        else:
            raise ValueError(f"unrecognised DIMACS line: {raw!r}")
    if n_total is None or s is None or t is None:
        raise ValueError("DIMACS text lacks problem or terminal lines")
    others = [i for i in range(1, n_total + 1) if i not in (s, t)]
    remap = {old: new for new, old in enumerate(others)}
    g = FlowGraph(len(others))
    for u, v, c in arcs:
        if u == s and v == t:
            raise ValueError("direct source-sink arcs are not supported")
        if u == s:
            g.add_tedge(remap[v], c, 0.0)
        elif v == t:
            g.add_tedge(remap[u], 0.0, c)
        elif u == t or v == s:
            continue  # cannot carry flow
        else:
            g.add_edge(remap[u], remap[v], c)
    return g


def is_finite_cap(c: float) -> bool:
    return math.isfinite(c) and c < INF_CAP
