"""Trim and fill: turn an LP placement into a complete rectangular assembly.

Components are snapped onto a shared integer grid, the best rows x cols
window is selected, Type-2 duplicates are resolved, and the remaining holes
are filled greedily by MGC distance to already-placed neighbors, most
constrained holes first.
"""

from __future__ import annotations

from collections import Counter
from typing import Optional

import numpy as np

from .compat import DistanceTable
from .core import Assembly, PuzzleSpec, SOURCE_EMPTY, SOURCE_FILL, SOURCE_LP
from .ingest import PuzzleBundle

# Orientation of (candidate, neighbor) for a neighbor in the given direction.
_DIR_ORIENT = {(-1, 0): 1, (0, 1): 2, (1, 0): 3, (0, -1): 4}


class FillError(RuntimeError):
    """The unplaced pool cannot complete the grid."""


def snap_to_grid(
    placement, components
) -> tuple[dict[tuple[int, int], int], list[int], dict[int, int]]:
    """Lay components onto integer cells in a shared frame.

    Each component is rigid: its reference piece's LP coordinates are rounded
    once and member offsets are applied. Components are placed largest first
    (ties: smallest piece id); a piece landing on an occupied cell loses and
    goes to the unplaced pool. Returns (cells, pool, component index per
    placed piece).
    """
    order = sorted(
        range(len(components)), key=lambda ci: (-components[ci].size, components[ci].pieces[0])
    )
    cells: dict[tuple[int, int], int] = {}
    pool: list[int] = []
    component_of: dict[int, int] = {}
    for ci in order:
        comp = components[ci]
        ref = comp.pieces[0]
        base_c = int(round(placement.x[ref]))
        base_r = int(round(placement.y[ref]))
        for p in comp.pieces:
            ox, oy = comp.offsets[p]
            cell = (base_r + oy, base_c + ox)
            if cell in cells:
                pool.append(p)
            else:
                cells[cell] = p
                component_of[p] = ci
    pool.sort()
    return cells, pool, component_of


def best_window(
    cells: dict[tuple[int, int], int], rows: int, cols: int
) -> tuple[int, int, int]:
    """Origin of the rows x cols window holding the most placed pieces.

    Exhaustive over all origins covering at least one piece; ties prefer the
    topmost then leftmost origin. Returns (r0, c0, count).
    """
    if not cells:
        return 0, 0, 0
    counts: Counter = Counter()
    for r, c in cells:
        for r0 in range(r - rows + 1, r + 1):
            for c0 in range(c - cols + 1, c + 1):
                counts[(r0, c0)] += 1
    count = max(counts.values())
    r0, c0 = min(k for k, v in counts.items() if v == count)
    return r0, c0, count


def _rotate_cells_ccw(
    cells: dict[tuple[int, int], int], info: np.ndarray
) -> dict[tuple[int, int], int]:
    """Rotate a sparse replica grid one quarter turn CCW (render advances)."""
    out = {}
    for (r, c), rid in cells.items():
        pid, a = int(info[rid, 0]), int(info[rid, 1])
        out[(-c, r)] = 4 * pid + (a + 1) % 4
    return out


def _dedup_type2(
    cells: dict[tuple[int, int], int],
    component_of: dict[int, int],
    component_sizes: dict[int, int],
    info: np.ndarray,
) -> dict[tuple[int, int], int]:
    """Keep, per physical piece, only the replica in the largest component."""
    best: dict[int, tuple] = {}
    for cell, rid in cells.items():
        pid = int(info[rid, 0])
        ci = component_of.get(rid, -1)
        size = component_sizes.get(ci, 1)
        key = (-size, ci, rid)
        if pid not in best or key < best[pid][0]:
            best[pid] = (key, cell)
    keep_cells = {entry[1] for entry in best.values()}
    return {cell: rid for cell, rid in cells.items() if cell in keep_cells}


def trim_and_fill(
    cells: dict[tuple[int, int], int],
    pool: list[int],
    table: DistanceTable,
    spec: PuzzleSpec,
    replica_info: Optional[np.ndarray] = None,
) -> Assembly:
    """Select the best window and greedily fill its holes from the pool.

    For Type 2, `replica_info` maps replica ids to (piece, ccw render turns);
    cells then hold replica ids, the pool holds physical piece ids, and fill
    candidates range over all four rotations of each pooled piece.
    """
    rows, cols = spec.rows, spec.cols
    type2 = replica_info is not None

    r0, c0, _ = best_window(cells, rows, cols)
    grid = np.full((rows, cols), -1, dtype=np.int64)  # replica/piece per cell
    source = np.full((rows, cols), SOURCE_EMPTY, dtype=np.int8)
    placed_phys: set[int] = set()
    for (r, c), pid in cells.items():
        if r0 <= r < r0 + rows and c0 <= c < c0 + cols:
            grid[r - r0, c - c0] = pid
            source[r - r0, c - c0] = SOURCE_LP
            placed_phys.add(int(replica_info[pid, 0]) if type2 else pid)

    if type2:
        n_phys = int(replica_info[:, 0].max()) + 1
        fill_pool = sorted(set(range(n_phys)) - placed_phys)
    else:
        outside = [p for (r, c), p in cells.items() if not (r0 <= r < r0 + rows and c0 <= c < c0 + cols)]
        fill_pool = sorted(set(pool) | set(outside))

    holes = [(r, c) for r in range(rows) for c in range(cols) if grid[r, c] < 0]
    if len(fill_pool) < len(holes):
        raise FillError(f"{len(holes)} holes but only {len(fill_pool)} pool pieces")

    while holes:
        neighbor_lists = []
        for r, c in holes:
            nbrs = []
            for (dr, dc), o in _DIR_ORIENT.items():
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols and grid[rr, cc] >= 0:
                    nbrs.append((int(grid[rr, cc]), o))
            neighbor_lists.append(nbrs)
        max_nbrs = max(len(nb) for nb in neighbor_lists)

        if type2:
            cand_ids = np.array([4 * p + a for p in fill_pool for a in range(4)], dtype=np.int64)
        else:
            cand_ids = np.array(fill_pool, dtype=np.int64)

        best_choice = None  # (score, r, c, cand_index)
        for (r, c), nbrs in zip(holes, neighbor_lists):
            if len(nbrs) != max_nbrs:
                continue
            score = np.zeros(len(cand_ids))
            for nbr, o in nbrs:
                score += table.d[o - 1, cand_ids, nbr]
            k = int(np.argmin(score))
            choice = (float(score[k]), r, c, int(cand_ids[k]))
            if best_choice is None or choice < best_choice:
                best_choice = choice
        _, r, c, winner = best_choice
        grid[r, c] = winner
        source[r, c] = SOURCE_FILL
        fill_pool.remove(int(replica_info[winner, 0]) if type2 else winner)
        holes.remove((r, c))

    piece_grid = np.empty((rows, cols), dtype=np.int64)
    rot_grid = np.zeros((rows, cols), dtype=np.int64)
    for r in range(rows):
        for c in range(cols):
            v = int(grid[r, c])
            if type2:
                pid, render = int(replica_info[v, 0]), int(replica_info[v, 1])
                piece_grid[r, c] = pid
                rot_grid[r, c] = (4 - render) % 4  # estimated applied rotation
            else:
                piece_grid[r, c] = v
    return Assembly(piece_grid=piece_grid, rot_grid=rot_grid, source_grid=source)


def complete_assembly(state, spec: PuzzleSpec) -> Assembly:
    """Snap a solver state to the grid and produce a complete assembly."""
    cells, pool, component_of = snap_to_grid(state.placement, state.components)
    if state.replica_info is None:
        return trim_and_fill(cells, pool, state.table, spec)

    info = state.replica_info
    sizes = {ci: comp.size for ci, comp in enumerate(state.components)}
    cells = _dedup_type2(cells, component_of, sizes, info)
    # The recovered image may sit in any of the four global rotations; pick
    # the one whose best window captures the most pieces.
    best = None
    rotated = cells
    for g in range(4):
        if g > 0:
            rotated = _rotate_cells_ccw(rotated, info)
        _, _, count = best_window(rotated, spec.rows, spec.cols)
        if best is None or count > best[0]:
            best = (count, g, rotated)
    _, _, cells = best
    return trim_and_fill(cells, [], state.table, spec, replica_info=info)


def stitch(assembly: Assembly, bundle: PuzzleBundle) -> np.ndarray:
    """Render an assembly to a 16-bit RGB image from the bundle's pieces."""
    P = bundle.spec.piece_px
    rows, cols = assembly.shape
    out = np.zeros((rows * P, cols * P, 3), dtype=np.uint16)
    for r in range(rows):
        for c in range(cols):
            pid = int(assembly.piece_grid[r, c])
            if pid < 0:
                continue
            rot = int(assembly.rot_grid[r, c])
            block = np.rot90(bundle.pieces[pid].pixels, (4 - rot) % 4)
            out[r * P : (r + 1) * P, c * P : (c + 1) * P] = block
    return out
