"""The outer solver loop: successive axis LPs with match rejection.

Each iteration solves both axis LPs over the active match set, rejects the
active matches whose residual exceeds the tolerance in either axis, shrinks
the surviving universe, and reselects the active set. The loop stops when
nothing is rejected. Variants: ``free`` re-solves from scratch each round,
``constrained`` freezes previously found connected components into rigid
super-variables, ``hybrid`` runs both and keeps the run with the smaller
original weighted-L0 cost.

Type 2 puzzles are converted to a mixed Type 1 instance of 4n rotation
replicas (replica id = 4 * piece + ccw_turns); the four replicas of the
highest-confidence piece are pinned at the four corners (+-a, +-a) so they
cannot join the same component.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .compat import DistanceTable, OrientedMatch, WeightTable, active_set, build_distance_table, build_weights, full_universe
from .core import Piece, Placement, offsets
from .ingest import TYPE1, TYPE2, PuzzleBundle
from .lpsolve import PlacementProblem, PlacementSolution, collapse, solve_axis


@dataclass
class VariantConfig:
    mode: str = "hybrid"  # free | constrained | hybrid
    max_iters: int = 10
    reject_tol: float = 1e-5
    type2_anchor_coord: float = 1e4
    # Open-question switches: recompute ratio weights over the surviving
    # universe each round (vs. freezing the initial ones), and how the Type-2
    # pinned piece is chosen.
    refresh_weights: bool = True
    anchor_pick: str = "best-match"  # or "max-aggregate"
    # "universe" discards every surviving candidate inconsistent with the
    # current solution; "active" discards only violated active matches. Only
    # the former can empty R: with per-slot refilling, an active-only purge
    # replaces each rejected candidate with the next one forever (every
    # piece's outward slot demands a neighbor in open space).
    reject_scope: str = "universe"

    def __post_init__(self) -> None:
        if self.mode not in ("free", "constrained", "hybrid"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.reject_tol > 0:
            raise ValueError("reject_tol must be positive")
        if self.anchor_pick not in ("best-match", "max-aggregate"):
            raise ValueError(f"unknown anchor_pick {self.anchor_pick!r}")
        if self.reject_scope not in ("universe", "active"):
            raise ValueError(f"unknown reject_scope {self.reject_scope!r}")


@dataclass(frozen=True)
class Component:
    """Pieces rigidly linked by residual-consistent matches, with integer
    offsets (dx, dy) relative to the component reference piece."""

    pieces: tuple[int, ...]
    offsets: dict[int, tuple[int, int]]

    @property
    def size(self) -> int:
        return len(self.pieces)


@dataclass
class IterationRecord:
    k: int
    u_size: int
    a_size: int
    r_size: int
    objective_x: float
    objective_y: float
    n_components: int
    largest_component: int
    active_subset_of_universe: bool


@dataclass
class SolverState:
    k: int
    universe: np.ndarray
    active: list[OrientedMatch]
    placement: Placement
    components: list[Component]
    history: list[IterationRecord]
    converged: bool
    mode: str
    table: DistanceTable
    initial_weights: WeightTable
    l0_cost: float = 0.0
    variant_used: str = ""
    hybrid_costs: dict = field(default_factory=dict)
    # For Type 2: replica_info[rid] = (physical piece id, ccw render turns).
    replica_info: Optional[np.ndarray] = None
    anchors_x: dict[int, float] = field(default_factory=dict)
    anchors_y: dict[int, float] = field(default_factory=dict)
    slot_warnings: int = 0

    @property
    def n(self) -> int:
        return self.table.n


def reject_matches(
    active: list[OrientedMatch], placement: Placement, tol: float
) -> set[tuple[int, int, int]]:
    """Active matches whose residual exceeds tol in either axis."""
    rejected = set()
    for m in active:
        dx, dy = offsets(m.o)
        rx = abs(placement.x[m.i] - placement.x[m.j] - dx)
        ry = abs(placement.y[m.i] - placement.y[m.j] - dy)
        if rx > tol or ry > tol:
            rejected.add((m.i, m.j, m.o))
    return rejected


def violated_universe_mask(
    universe: np.ndarray, placement: Placement, tol: float
) -> np.ndarray:
    """Boolean mask of surviving universe entries inconsistent with the
    placement in either axis."""
    x, y = placement.x, placement.y
    gap_x = x[:, None] - x[None, :]
    gap_y = y[:, None] - y[None, :]
    viol = np.zeros_like(universe)
    for o in (1, 2, 3, 4):
        dx, dy = offsets(o)
        bad = (np.abs(gap_x - dx) > tol) | (np.abs(gap_y - dy) > tol)
        viol[o - 1] = universe[o - 1] & bad
    return viol


def _consistent_edges(
    active: list[OrientedMatch], placement: Placement, tol: float
) -> list[tuple[int, int]]:
    rejected = reject_matches(active, placement, tol)
    return [(m.i, m.j) for m in active if (m.i, m.j, m.o) not in rejected]


def component_extraction(
    active: list[OrientedMatch], placement: Placement, tol: float
) -> list[Component]:
    """Connected components of residual-consistent matches with integer
    offsets from rounded LP gaps.

    A component containing two pieces at the same rounded offset is a
    collision: every consistent match touching a colliding piece is broken
    and the components are rebuilt from what remains.
    """
    n = placement.n
    edges = _consistent_edges(active, placement, tol)
    while True:
        adj: list[list[int]] = [[] for _ in range(n)]
        for a, b in edges:
            adj[a].append(b)
            adj[b].append(a)
        seen = [False] * n
        comps: list[Component] = []
        colliding: set[int] = set()
        for start in range(n):
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
            comp.sort()
            ref = comp[0]
            offs = {
                p: (
                    int(round(placement.x[p] - placement.x[ref])),
                    int(round(placement.y[p] - placement.y[ref])),
                )
                for p in comp
            }
            cells: dict[tuple[int, int], int] = {}
            for p, cell in offs.items():
                if cell in cells:
                    colliding.add(p)
                    colliding.add(cells[cell])
                else:
                    cells[cell] = p
            comps.append(Component(pieces=tuple(comp), offsets=offs))
        if not colliding:
            return comps
        edges = [(a, b) for a, b in edges if a not in colliding and b not in colliding]


def _axis_problem(
    active: list[OrientedMatch], n: int, axis: str, anchors: dict[int, float]
) -> PlacementProblem:
    idx = 0 if axis == "x" else 1
    terms = tuple((m.i, m.j, offsets(m.o)[idx], m.weight) for m in active)
    return PlacementProblem(var_count=n, terms=terms, anchors=dict(anchors))


def _solve_axis_maybe_collapsed(
    problem: PlacementProblem, groups: list[dict[int, int]]
) -> PlacementSolution:
    if not groups:
        return solve_axis(problem)
    collapsed = collapse(problem, groups)
    return collapsed.expand(solve_axis(collapsed.problem))


def weighted_l0_cost(
    active0: list[OrientedMatch], placement: Placement, tol: float
) -> float:
    """Original weighted-L0 cost over the initial active set: each term
    counts its weight once per axis whose residual exceeds tol."""
    cost = 0.0
    for m in active0:
        dx, dy = offsets(m.o)
        if abs(placement.x[m.i] - placement.x[m.j] - dx) > tol:
            cost += m.weight
        if abs(placement.y[m.i] - placement.y[m.j] - dy) > tol:
            cost += m.weight
    return cost


def _run_loop(
    table: DistanceTable,
    universe0: np.ndarray,
    cfg: VariantConfig,
    mode: str,
    anchors_x: dict[int, float],
    anchors_y: dict[int, float],
) -> SolverState:
    n = table.n
    universe = universe0.copy()
    weights0 = build_weights(table, universe)
    weights = weights0
    active, skipped = active_set(table, universe, weights)
    active0 = list(active)
    components: list[Component] = []
    history: list[IterationRecord] = []
    converged = False
    placement = Placement(x=np.zeros(n), y=np.zeros(n), objective=0.0)

    for k in range(cfg.max_iters):
        if mode == "constrained" and components:
            groups_x = [
                {p: c.offsets[p][0] for p in c.pieces} for c in components if c.size > 1
            ]
            groups_y = [
                {p: c.offsets[p][1] for p in c.pieces} for c in components if c.size > 1
            ]
        else:
            groups_x = groups_y = []
        sol_x = _solve_axis_maybe_collapsed(_axis_problem(active, n, "x", anchors_x), groups_x)
        sol_y = _solve_axis_maybe_collapsed(_axis_problem(active, n, "y", anchors_y), groups_y)
        placement = Placement(
            x=sol_x.values.copy(), y=sol_y.values.copy(), objective=sol_x.objective + sol_y.objective
        )
        if cfg.reject_scope == "universe":
            viol = violated_universe_mask(universe, placement, cfg.reject_tol)
            r_size = int(viol.sum())
        else:
            rejected = reject_matches(active, placement, cfg.reject_tol)
            viol = np.zeros_like(universe)
            for i, j, o in rejected:
                viol[o - 1, i, j] = True
            r_size = len(rejected)
        components = component_extraction(active, placement, cfg.reject_tol)
        a_in_u = all(universe[m.o - 1, m.i, m.j] for m in active)
        history.append(
            IterationRecord(
                k=k,
                u_size=int(universe.sum()),
                a_size=len(active),
                r_size=r_size,
                objective_x=sol_x.objective,
                objective_y=sol_y.objective,
                n_components=len(components),
                largest_component=max(c.size for c in components) if components else 0,
                active_subset_of_universe=a_in_u,
            )
        )
        if r_size == 0:
            converged = True
            break
        universe &= ~viol
        if cfg.refresh_weights:
            weights = build_weights(table, universe)
        active, skipped_k = active_set(table, universe, weights)
        skipped += skipped_k

    state = SolverState(
        k=len(history),
        universe=universe,
        active=active,
        placement=placement,
        components=components,
        history=history,
        converged=converged,
        mode=mode,
        table=table,
        initial_weights=weights0,
        anchors_x=dict(anchors_x),
        anchors_y=dict(anchors_y),
        slot_warnings=skipped,
    )
    state.l0_cost = weighted_l0_cost(active0, placement, cfg.reject_tol)
    return state


def _solve_universe(
    table: DistanceTable,
    universe0: np.ndarray,
    cfg: VariantConfig,
    anchors_x: dict[int, float],
    anchors_y: dict[int, float],
) -> SolverState:
    if cfg.mode in ("free", "constrained"):
        state = _run_loop(table, universe0, cfg, cfg.mode, anchors_x, anchors_y)
        state.variant_used = cfg.mode
        state.hybrid_costs = {cfg.mode: state.l0_cost}
        return state
    state_free = _run_loop(table, universe0, cfg, "free", anchors_x, anchors_y)
    state_con = _run_loop(table, universe0, cfg, "constrained", anchors_x, anchors_y)
    costs = {"free": state_free.l0_cost, "constrained": state_con.l0_cost}
    # Ties go to constrained, matching the mode the tables highlight.
    winner = state_con if state_con.l0_cost <= state_free.l0_cost else state_free
    winner.variant_used = winner.mode
    winner.mode = "hybrid"
    winner.hybrid_costs = costs
    return winner


def solve_type1(
    bundle: PuzzleBundle, cfg: VariantConfig, table: Optional[DistanceTable] = None
) -> SolverState:
    """Algorithm-1 solver for puzzles with known piece orientation."""
    if bundle.type_tag != TYPE1:
        raise ValueError("solve_type1 expects a type1 bundle")
    n = len(bundle.pieces)
    if n < 3:
        raise ValueError("need at least 3 pieces")
    if table is None:
        table = build_distance_table(bundle.pieces)
    universe0 = full_universe(n)
    return _solve_universe(table, universe0, cfg, {}, {})


def make_replicas(pieces: list[Piece]) -> tuple[list[Piece], np.ndarray]:
    """All four CCW rotations of every piece; rid = 4 * piece + turns."""
    replicas: list[Piece] = []
    info = np.empty((4 * len(pieces), 2), dtype=np.int64)
    for p in pieces:
        for a in range(4):
            rid = 4 * p.id + a
            replicas.append(
                Piece(id=rid, pixels=np.ascontiguousarray(np.rot90(p.pixels, a)), rotation=a)
            )
            info[rid] = (p.id, a)
    return replicas, info


def _pick_anchor_piece(
    weights: WeightTable, universe: np.ndarray, info: np.ndarray, how: str
) -> int:
    w = np.where(universe, weights.w, -np.inf)
    if how == "best-match":
        o_i_j = np.unravel_index(int(np.argmax(w)), w.shape)
        return int(info[o_i_j[1], 0])
    per_piece = np.zeros(int(info[:, 0].max()) + 1)
    sums = w.copy()
    sums[~universe] = 0.0
    by_replica = sums.sum(axis=(0, 2))
    for rid, (pid, _) in enumerate(info):
        per_piece[pid] += by_replica[rid]
    return int(np.argmax(per_piece))


def solve_type2(
    bundle: PuzzleBundle, cfg: VariantConfig, table: Optional[DistanceTable] = None
) -> SolverState:
    """Type-2 solver: 4n rotation replicas plus pinned anchor replicas."""
    if bundle.type_tag != TYPE2:
        raise ValueError("solve_type2 expects a type2 bundle")
    replicas, info = make_replicas(bundle.pieces)
    if table is None:
        table = build_distance_table(replicas)
    universe0 = full_universe(len(replicas), same_group=info[:, 0])
    weights0 = build_weights(table, universe0)
    anchor_piece = _pick_anchor_piece(weights0, universe0, info, cfg.anchor_pick)
    a = cfg.type2_anchor_coord
    corners = [(a, a), (a, -a), (-a, a), (-a, -a)]
    anchors_x = {4 * anchor_piece + r: corners[r][0] for r in range(4)}
    anchors_y = {4 * anchor_piece + r: corners[r][1] for r in range(4)}
    state = _solve_universe(table, universe0, cfg, anchors_x, anchors_y)
    state.replica_info = info
    return state


def solve_bundle(
    bundle: PuzzleBundle,
    cfg: VariantConfig,
    table: Optional[DistanceTable] = None,
    trace_path: Optional[str | Path] = None,
):
    """Solve a bundle end to end: loop, snap, trim and fill.

    Returns (state, assembly). Never looks at bundle.truth.
    """
    from .postprocess import complete_assembly

    t0 = time.time()
    if bundle.type_tag == TYPE2:
        state = solve_type2(bundle, cfg, table)
    else:
        state = solve_type1(bundle, cfg, table)
    assembly = complete_assembly(state, bundle.spec)
    if trace_path is not None:
        write_trace(state, trace_path, seconds=time.time() - t0)
    return state, assembly


def write_trace(state: SolverState, path: str | Path, seconds: float = 0.0) -> None:
    """Iteration trace as JSON lines plus a final summary record."""
    with open(path, "w") as fh:
        for rec in state.history:
            row = {
                "k": rec.k,
                "U": rec.u_size,
                "A": rec.a_size,
                "R": rec.r_size,
                "objective_x": rec.objective_x,
                "objective_y": rec.objective_y,
                "components": rec.n_components,
                "largest_component": rec.largest_component,
            }
            fh.write(json.dumps(row) + "\n")
        summary = {
            "summary": True,
            "iterations": state.k,
            "converged": state.converged,
            "mode": state.mode,
            "variant_used": state.variant_used,
            "hybrid_costs": state.hybrid_costs,
            "l0_cost": state.l0_cost,
            "slot_warnings": state.slot_warnings,
            "seconds": seconds,
        }
        fh.write(json.dumps(summary) + "\n")
