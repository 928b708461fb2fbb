"""Exact solvers for the one-axis weighted-L1 placement problem.

``solve_axis`` runs a primal network simplex on the min-cost-flow dual of

    min  sum_t  w_t * | x_{u_t} - x_{v_t} - delta_t |

and reads the optimal placement off the node potentials, so solutions are
vertices with crisp residuals (exact integers whenever deltas and anchors
are integers). ``oracle_solve`` solves the identical LP with a dense
two-phase tableau simplex over the auxiliary-variable formulation; it shares
no machinery with the main path and exists to cross-validate it.

Anchored variables are eliminated before solving: terms touching an anchor
become terms against a fixed ground node. Unanchored connected components
are normalized so their minimum value is 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

ORACLE_MAX_VARS = 200
ORACLE_MAX_TERMS = 1000


class CollapseError(ValueError):
    """Group offsets or anchors conflict during variable collapsing."""


@dataclass(frozen=True)
class PlacementProblem:
    """One-axis placement LP: |terms| difference terms plus fixed anchors."""

    var_count: int
    terms: tuple[tuple[int, int, int, float], ...]  # (u, v, delta, weight)
    anchors: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.var_count < 1:
            raise ValueError("need at least one variable")
        object.__setattr__(self, "terms", tuple(tuple(t) for t in self.terms))
        for u, v, delta, w in self.terms:
            if u == v:
                raise ValueError(f"term with u == v == {u}")
            if not (0 <= u < self.var_count and 0 <= v < self.var_count):
                raise ValueError("term variable out of range")
            if not w > 0:
                raise ValueError("term weights must be positive")
            if int(delta) != delta:
                raise ValueError("term deltas must be integers")
        for a in self.anchors:
            if not 0 <= a < self.var_count:
                raise ValueError("anchor variable out of range")

    def to_json_obj(self) -> dict:
        return {
            "var_count": self.var_count,
            "terms": [list(t) for t in self.terms],
            "anchors": {str(k): v for k, v in self.anchors.items()},
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PlacementProblem":
        return cls(
            var_count=obj["var_count"],
            terms=tuple(tuple(t) for t in obj["terms"]),
            anchors={int(k): float(v) for k, v in obj["anchors"].items()},
        )


@dataclass(frozen=True)
class PlacementSolution:
    values: np.ndarray
    objective: float
    residuals: np.ndarray

    def __post_init__(self) -> None:
        self.values.setflags(write=False)
        self.residuals.setflags(write=False)

    def to_json_obj(self) -> dict:
        return {
            "values": self.values.tolist(),
            "objective": self.objective,
            "residuals": self.residuals.tolist(),
        }


def dump_debug_record(problem: PlacementProblem, solution: PlacementSolution, path: str | Path) -> None:
    """Write a problem/solution pair as a JSON record for failure triage."""
    Path(path).write_text(
        json.dumps({"problem": problem.to_json_obj(), "solution": solution.to_json_obj()})
    )


def _finalize(problem: PlacementProblem, values: np.ndarray) -> PlacementSolution:
    """Normalize unanchored components to min 0, then evaluate the objective."""
    values = values.astype(np.float64).copy()
    adj: list[list[int]] = [[] for _ in range(problem.var_count)]
    for u, v, _, _ in problem.terms:
        adj[u].append(v)
        adj[v].append(u)
    seen = np.zeros(problem.var_count, dtype=bool)
    for start in range(problem.var_count):
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        head = 0
        while head < len(comp):
            for nxt in adj[comp[head]]:
                if not seen[nxt]:
                    seen[nxt] = True
                    comp.append(nxt)
            head += 1
        if not any(c in problem.anchors for c in comp):
            values[comp] -= values[comp].min()
    for a, val in problem.anchors.items():
        values[a] = val

    residuals = np.array(
        [abs(values[u] - values[v] - delta) for u, v, delta, _ in problem.terms],
        dtype=np.float64,
    )
    weights = np.array([w for _, _, _, w in problem.terms], dtype=np.float64)
    objective = float(residuals @ weights) if len(residuals) else 0.0
    return PlacementSolution(values=values, objective=objective, residuals=residuals)


def _eliminate_anchors(
    problem: PlacementProblem,
) -> tuple[list[int], dict[int, int], list[tuple[int, int, float, float]]]:
    """Map the problem onto free-node arcs against a ground node.

    Returns (free variable list, var->node map, arcs) where each arc is
    (tail, head, cost, capacity) for the flow dual; the ground/root node
    index equals len(free). Terms between two anchors contribute a constant
    and produce no arc.
    """
    free = [v for v in range(problem.var_count) if v not in problem.anchors]
    node_of = {v: i for i, v in enumerate(free)}
    root = len(free)
    arcs: list[tuple[int, int, float, float]] = []
    for u, v, delta, w in problem.terms:
        au, av = u in problem.anchors, v in problem.anchors
        if au and av:
            continue
        if au:  # |c_u - x_v - delta| == |x_v - ground - (c_u - delta)|
            tail, head, cost = node_of[v], root, problem.anchors[u] - delta
        elif av:  # |x_u - c_v - delta| == |x_u - ground - (delta + c_v)|
            tail, head, cost = node_of[u], root, delta + problem.anchors[v]
        else:
            tail, head, cost = node_of[u], node_of[v], float(delta)
        arcs.append((tail, head, float(cost), float(w)))
    return free, node_of, arcs


def solve_axis(problem: PlacementProblem) -> PlacementSolution:
    """Globally optimal solution of the weighted-L1 placement problem."""
    free, _, arcs = _eliminate_anchors(problem)
    values = np.zeros(problem.var_count, dtype=np.float64)
    if free and arcs:
        pi = _network_simplex_potentials(n_free=len(free), arcs=arcs)
        for i, v in enumerate(free):
            values[v] = pi[i]
    return _finalize(problem, values)


def _network_simplex_potentials(n_free: int, arcs: list[tuple[int, int, float, float]]) -> np.ndarray:
    """Primal network simplex on the circulation dual; returns potentials.

    Each input arc (tail, head, cost, cap) is expanded into a forward arc
    with bounds [0, cap] and a reversed arc with negated cost, so the zero
    flow is basic-feasible. Zero-capacity artificial arcs node->root form
    the initial (strongly feasible) spanning tree and are never priced.
    """
    root = n_free
    n_nodes = n_free + 1

    S: list[int] = []
    T: list[int] = []
    C: list[float] = []
    U: list[float] = []
    for tail, head, cost, cap in arcs:
        S.append(tail)
        T.append(head)
        C.append(cost)
        U.append(cap)
        S.append(head)
        T.append(tail)
        C.append(-cost)
        U.append(cap)
    n_real = len(S)
    for v in range(n_free):  # artificial scaffolding, capacity 0
        S.append(v)
        T.append(root)
        C.append(0.0)
        U.append(0.0)

    Sa = np.array(S, dtype=np.int64)
    Ta = np.array(T, dtype=np.int64)
    Ca = np.array(C, dtype=np.float64)
    Ua = np.array(U, dtype=np.float64)
    x = np.zeros(len(Sa), dtype=np.float64)
    # 0 = basic, 1 = nonbasic at lower bound, 2 = nonbasic at upper bound
    state = np.ones(n_real, dtype=np.int8)

    # Spanning-tree bookkeeping as parallel arrays over nodes (root last):
    # parent/edge, subtree sizes, and a depth-first thread (next/prev/last).
    pi = np.zeros(n_nodes, dtype=np.float64)
    parent: list[Optional[int]] = [root] * n_free + [None]
    edge: list[Optional[int]] = [n_real + v for v in range(n_free)] + [None]
    size = [1] * n_free + [n_nodes]
    next_ = list(range(1, n_free)) + [root, 0]
    prev = [root] + list(range(n_free - 1)) + [n_free - 1]
    last = list(range(n_free)) + [n_free - 1]

    def residual_capacity(i: int, p: int) -> float:
        return Ua[i] - x[i] if Sa[i] == p else x[i]

    def find_apex(p: int, q: int) -> int:
        size_p, size_q = size[p], size[q]
        while True:
            while size_p < size_q:
                p = parent[p]
                size_p = size[p]
            while size_p > size_q:
                q = parent[q]
                size_q = size[q]
            if size_p == size_q:
                if p != q:
                    p, q = parent[p], parent[q]
                    size_p, size_q = size[p], size[q]
                else:
                    return p

    def trace_path(p: int, w: int) -> tuple[list[int], list[int]]:
        nodes, edges_ = [p], []
        while p != w:
            edges_.append(edge[p])
            p = parent[p]
            nodes.append(p)
        return nodes, edges_

    def find_cycle(i: int, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
        w = find_apex(p, q)
        Wn, We = trace_path(p, w)
        Wn.reverse()
        We.reverse()
        We.append(i)
        WnR, WeR = trace_path(q, w)
        del WnR[-1]
        Wn += WnR
        We += WeR
        return np.array(Wn, dtype=np.int64), np.array(We, dtype=np.int64)

    def find_leaving_edge(wn: np.ndarray, we: np.ndarray) -> tuple[int, int, int]:
        # Among minimum-residual arcs pick the one latest in cycle order;
        # this is the anti-cycling leaving rule for strongly feasible trees.
        along = Sa[we] == wn
        residual = np.where(along, Ua[we] - x[we], x[we])
        k = int(np.where(residual == residual.min())[0][-1])
        j, s = int(we[k]), int(wn[k])
        t = int(Ta[j]) if Sa[j] == s else int(Sa[j])
        return j, s, t

    def augment_flow(wn: np.ndarray, we: np.ndarray, f: float) -> None:
        np.add.at(x, we, np.where(Sa[we] == wn, f, -f))

    def trace_subtree(p: int):
        yield p
        l = last[p]
        while p != l:
            p = next_[p]
            yield p

    def remove_edge(s: int, t: int) -> None:
        size_t = size[t]
        prev_t = prev[t]
        last_t = last[t]
        next_last_t = next_[last_t]
        parent[t] = None
        edge[t] = None
        next_[prev_t] = next_last_t
        prev[next_last_t] = prev_t
        next_[last_t] = t
        prev[t] = last_t
        while s is not None:
            size[s] -= size_t
            if last[s] == last_t:
                last[s] = prev_t
            s = parent[s]

    def make_root(q: int) -> None:
        ancestors = []
        while q is not None:
            ancestors.append(q)
            q = parent[q]
        ancestors.reverse()
        for p, q in zip(ancestors, ancestors[1:]):
            size_p = size[p]
            last_p = last[p]
            prev_q = prev[q]
            last_q = last[q]
            next_last_q = next_[last_q]
            parent[p] = q
            parent[q] = None
            edge[p] = edge[q]
            edge[q] = None
            size[p] = size_p - size[q]
            size[q] = size_p
            next_[prev_q] = next_last_q
            prev[next_last_q] = prev_q
            next_[last_q] = q
            prev[q] = last_q
            if last_p == last_q:
                last[p] = prev_q
                last_p = prev_q
            prev[p] = last_q
            next_[last_q] = p
            next_[last_p] = q
            prev[q] = last_p
            last[q] = last_p

    def add_edge(i: int, p: int, q: int) -> None:
        last_p = last[p]
        next_last_p = next_[last_p]
        size_q = size[q]
        last_q = last[q]
        parent[q] = p
        edge[q] = i
        next_[last_p] = q
        prev[q] = last_p
        prev[next_last_p] = last_q
        next_[last_q] = next_last_p
        while p is not None:
            size[p] += size_q
            if last[p] == last_p:
                last[p] = last_q
            p = parent[p]

    def update_potentials(i: int, p: int, q: int) -> None:
        if q == Ta[i]:
            d = pi[p] - Ca[i] - pi[q]
        else:
            d = pi[p] + Ca[i] - pi[q]
        pi[list(trace_subtree(q))] += d

    tol = 1e-9 * max(1.0, float(np.max(np.abs(Ca))) if len(Ca) else 1.0)
    real_S, real_T, real_C = Sa[:n_real], Ta[:n_real], Ca[:n_real]
    max_pivots = max(10_000, 60 * len(Sa))
    pivots = 0
    while True:
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("network simplex exceeded its pivot budget")
        rc = real_C - pi[real_S] + pi[real_T]
        viol = np.where(state == 1, -rc, np.where(state == 2, rc, -np.inf))
        i = int(np.argmax(viol))
        if viol[i] <= tol:
            break
        if state[i] == 1:
            p, q = int(Sa[i]), int(Ta[i])
        else:
            p, q = int(Ta[i]), int(Sa[i])
        Wn, We = find_cycle(i, p, q)
        j, s, t = find_leaving_edge(Wn, We)
        theta = residual_capacity(j, s)
        if theta != 0.0:
            augment_flow(Wn, We, theta)
        # Snap the leaving arc exactly onto its bound to stop float drift.
        leaves_at_upper = Sa[j] == s
        x[j] = Ua[j] if leaves_at_upper else 0.0
        if i != j:
            if parent[t] != s:
                s, t = t, s
            if int(np.where(We == i)[0][0]) > int(np.where(We == j)[0][0]):
                p, q = q, p
            remove_edge(s, t)
            make_root(q)
            add_edge(i, p, q)
            update_potentials(i, p, q)
            state[i] = 0
            if j < n_real:
                state[j] = 2 if leaves_at_upper else 1
        else:
            state[i] = 2 if state[i] == 1 else 1
    return pi[:n_free]


def oracle_solve(problem: PlacementProblem) -> PlacementSolution:
    """Dense tableau simplex over the auxiliary-variable LP.

    Deliberately naive and structurally unrelated to solve_axis; guarded to
    desk-scale problems. The start basis puts each auxiliary h_t at |K_t|
    (with x = 0), which is always feasible, so no artificials are needed.
    """
    if problem.var_count > ORACLE_MAX_VARS:
        raise ValueError(f"oracle_solve limited to {ORACLE_MAX_VARS} variables")
    if len(problem.terms) > ORACLE_MAX_TERMS:
        raise ValueError(f"oracle_solve limited to {ORACLE_MAX_TERMS} terms")

    free = [v for v in range(problem.var_count) if v not in problem.anchors]
    col_of = {v: i for i, v in enumerate(free)}
    nf, nt = len(free), len(problem.terms)
    # Columns: x+ (nf), x- (nf), h (nt); rows: 2 inequalities per term.
    ncols = 2 * nf + nt
    A = np.zeros((2 * nt, ncols), dtype=np.float64)
    b = np.zeros(2 * nt, dtype=np.float64)
    cost = np.zeros(ncols, dtype=np.float64)
    for t, (u, v, delta, w) in enumerate(problem.terms):
        cost[2 * nf + t] = w
        const = -float(delta)
        row = np.zeros(ncols)
        if u in problem.anchors:
            const += problem.anchors[u]
        else:
            row[col_of[u]] += 1.0
            row[nf + col_of[u]] -= 1.0
        if v in problem.anchors:
            const -= problem.anchors[v]
        else:
            row[col_of[v]] -= 1.0
            row[nf + col_of[v]] += 1.0
        row[2 * nf + t] = -1.0
        A[2 * t] = row
        b[2 * t] = -const
        row2 = -row.copy()
        row2[2 * nf + t] = -1.0
        A[2 * t + 1] = row2
        b[2 * t + 1] = const

    z = _tableau_simplex(A, b, cost, h_cols=[2 * nf + t for t in range(nt)])
    values = np.zeros(problem.var_count, dtype=np.float64)
    for v in free:
        values[v] = z[col_of[v]] - z[nf + col_of[v]]
    for a, val in problem.anchors.items():
        values[a] = val
    return _finalize(problem, values)


def _tableau_simplex(
    A: np.ndarray, b: np.ndarray, cost: np.ndarray, h_cols: list[int]
) -> np.ndarray:
    """Textbook dense tableau simplex for min cost'z s.t. Az <= b, z >= 0.

    Rows come in pairs sharing one h column with coefficient -1; pivoting h
    into the negative-RHS row of each pair yields a basic feasible start.
    """
    m, n = A.shape
    if m == 0:
        return np.zeros(n)
    ncols = n + m
    tab = np.zeros((m, ncols + 1), dtype=np.float64)
    tab[:, :n] = A
    tab[np.arange(m), n + np.arange(m)] = 1.0
    tab[:, -1] = b
    basis = np.asarray([n + r for r in range(m)], dtype=np.int64)
    for t, col in enumerate(h_cols):
        rows = (2 * t, 2 * t + 1)
        r = min(rows, key=lambda rr: tab[rr, -1])
        if tab[r, -1] >= 0:
            continue  # both slacks feasible
        tab[r] /= tab[r, col]
        factor = tab[:, col].copy()
        factor[r] = 0.0
        tab[:, :] -= np.outer(factor, tab[r])
        basis[r] = col
    if tab[:, -1].min() < 0:
        raise RuntimeError("oracle warm start failed (cannot happen for valid input)")

    # Dantzig entering rule with a Bland fallback once pivots stall. The
    # objective row tracks z_j - c_j; its RHS slot carries the objective.
    full_cost = np.zeros(ncols)
    full_cost[:n] = cost
    red = full_cost[basis] @ tab
    red[:-1] -= full_cost
    tol = 1e-9 * max(1.0, float(np.abs(cost).max()))
    stalls = 0
    for _ in range(50000):
        eligible = np.where(red[:-1] > tol)[0]
        if len(eligible) == 0:
            z = np.zeros(ncols)
            z[basis] = tab[:, -1]
            return z[:n]
        if stalls < 200:
            col = int(eligible[np.argmax(red[eligible])])
        else:
            col = int(eligible[0])
        positive = tab[:, col] > 1e-9
        if not positive.any():
            raise RuntimeError("oracle LP unbounded (cannot happen for valid input)")
        ratios = np.full(m, np.inf)
        ratios[positive] = tab[positive, -1] / tab[positive, col]
        best = ratios.min()
        tied = np.where(ratios <= best + 1e-12)[0]
        row = int(tied[np.argmin(basis[tied])]) if stalls >= 200 else int(tied[0])
        stalls = stalls + 1 if best <= 1e-12 else 0
        tab[row] /= tab[row, col]
        factor = tab[:, col].copy()
        factor[row] = 0.0
        tab[:, :] -= np.outer(factor, tab[row])
        red -= red[col] * tab[row]
        basis[row] = col
    raise RuntimeError("oracle simplex exceeded its pivot budget")


@dataclass(frozen=True)
class CollapsedProblem:
    """A collapsed problem plus the bookkeeping to expand solutions back."""

    problem: PlacementProblem
    group_of: tuple[int, ...]  # original var -> collapsed var
    offset_of: tuple[int, ...]  # original var -> integer offset inside group
    original: PlacementProblem

    def expand(self, solution: PlacementSolution) -> PlacementSolution:
        values = np.array(
            [solution.values[self.group_of[v]] + self.offset_of[v] for v in range(self.original.var_count)]
        )
        return _finalize(self.original, values)


def collapse(problem: PlacementProblem, groups: list[dict[int, int]]) -> CollapsedProblem:
    """Fuse variable groups into single super-variables with fixed offsets.

    Each group maps member variable -> integer offset. Variables absent from
    every group become singletons. Terms internal to a group whose adjusted
    residual is zero are dropped; anchors on members are translated onto the
    group variable (conflicts raise CollapseError).
    """
    group_of = [-1] * problem.var_count
    offset_of = [0] * problem.var_count
    n_groups = 0
    for g in groups:
        if not g:
            continue
        for v, off in g.items():
            if not 0 <= v < problem.var_count:
                raise CollapseError(f"group member {v} out of range")
            if group_of[v] != -1:
                raise CollapseError(f"variable {v} appears in more than one group")
            group_of[v] = n_groups
            offset_of[v] = int(off)
        n_groups += 1
    for v in range(problem.var_count):
        if group_of[v] == -1:
            group_of[v] = n_groups
            n_groups += 1

    anchors: dict[int, float] = {}
    for a, val in problem.anchors.items():
        implied = val - offset_of[a]
        g = group_of[a]
        if g in anchors and anchors[g] != implied:
            raise CollapseError(f"conflicting anchors for collapsed variable {g}")
        anchors[g] = implied

    terms = []
    for u, v, delta, w in problem.terms:
        gu, gv = group_of[u], group_of[v]
        new_delta = delta - offset_of[u] + offset_of[v]
        if gu == gv:
            # Internal terms vanish; a nonzero adjusted residual is a constant
            # no variable can change, counted when the expansion is scored.
            continue
        terms.append((gu, gv, new_delta, w))

    collapsed = PlacementProblem(var_count=n_groups, terms=tuple(terms), anchors=anchors)
    return CollapsedProblem(
        problem=collapsed,
        group_of=tuple(group_of),
        offset_of=tuple(offset_of),
        original=problem,
    )
