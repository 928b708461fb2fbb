"""The four reconstruction measures: direct, neighbor, largest component,
perfect.

Rotation bookkeeping: every rotation field is an *estimated applied* CCW
rotation, i.e. the number of quarter turns the scrambler is believed to have
applied; rendering undoes it. A Type-2 puzzle has no canonical frame, so
direct/perfect comparisons are taken over the best of the four global
rotations of the truth (a strict single-frame variant is available).
Neighbor and largest-component checks compare canonicalized physical seams
and are frame-invariant by construction.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Assembly, SOURCE_LP, offsets, rotate_orientation
from .ingest import TruthEntry


@dataclass(frozen=True)
class ScoreReport:
    direct: float
    neighbor: float
    largest_component: float
    perfect: bool

    def __post_init__(self) -> None:
        if self.perfect and not (self.direct == 1.0 and self.neighbor == 1.0):
            raise ValueError("perfect reconstruction requires direct == neighbor == 1")

    def to_row(self) -> dict:
        return {
            "direct": self.direct,
            "neighbor": self.neighbor,
            "largest_component": self.largest_component,
            "perfect": int(self.perfect),
        }


def truth_shape(truth: dict[int, TruthEntry]) -> tuple[int, int]:
    rows = max(t.row for t in truth.values()) + 1
    cols = max(t.col for t in truth.values()) + 1
    return rows, cols


def reference_assembly(truth: dict[int, TruthEntry]) -> Assembly:
    """The correct reconstruction as an Assembly (rotation = applied turns)."""
    rows, cols = truth_shape(truth)
    piece = np.full((rows, cols), -1, dtype=np.int64)
    rot = np.zeros((rows, cols), dtype=np.int64)
    src = np.full((rows, cols), SOURCE_LP, dtype=np.int8)
    for pid, t in truth.items():
        piece[t.row, t.col] = pid
        rot[t.row, t.col] = t.rotation
    return Assembly(piece_grid=piece, rot_grid=rot, source_grid=src)


def rotate_assembly_ccw(asm: Assembly) -> Assembly:
    """Rotate a whole assembly one quarter turn CCW.

    Cell contents move with the frame and every piece needs one more CCW
    render turn, so the estimated applied rotation decreases by one.
    """
    piece = np.rot90(asm.piece_grid)
    rot = np.where(piece >= 0, (np.rot90(asm.rot_grid) - 1) % 4, 0)
    src = np.rot90(asm.source_grid)
    return Assembly(
        piece_grid=piece.copy(), rot_grid=rot.copy(), source_grid=src.copy()
    )


def _frames(reference: Assembly, four_frames: bool):
    ref = reference
    for g in range(4 if four_frames else 1):
        if g > 0:
            ref = rotate_assembly_ccw(ref)
        yield ref


def _direct_against(asm: Assembly, ref: Assembly) -> float:
    if asm.shape != ref.shape:
        return 0.0
    ok = (asm.piece_grid == ref.piece_grid) & (asm.rot_grid == ref.rot_grid)
    return float(ok.mean())


def direct_score(
    assembly: Assembly, truth: dict[int, TruthEntry], four_frames: bool = False
) -> float:
    """Fraction of pieces in the correct cell with the correct rotation."""
    reference = reference_assembly(truth)
    return max(_direct_against(assembly, ref) for ref in _frames(reference, four_frames))


def physical_seam(i: int, rot_i: int, j: int, rot_j: int, o: int) -> tuple:
    """Canonical identity of an oriented boundary, invariant to rotating the
    pair as a whole."""
    render_i = (4 - rot_i) % 4
    render_j = (4 - rot_j) % 4
    rel = (render_j - render_i) % 4
    return (i, j, rel, rotate_orientation(o, -render_i))


def _assembly_seams(asm: Assembly) -> set[tuple]:
    """All ordered physical seams between adjacent placed cells."""
    rows, cols = asm.shape
    seams = set()
    for r in range(rows):
        for c in range(cols):
            i = int(asm.piece_grid[r, c])
            if i < 0:
                continue
            for (dr, dc), rel in (((-1, 0), 1), ((0, 1), 2), ((1, 0), 3), ((0, -1), 4)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < rows and 0 <= cc < cols):
                    continue
                j = int(asm.piece_grid[rr, cc])
                if j < 0:
                    continue
                seams.add(
                    physical_seam(
                        i, int(asm.rot_grid[r, c]), j, int(asm.rot_grid[rr, cc]), rel
                    )
                )
    return seams


def neighbor_score(assembly: Assembly, truth: dict[int, TruthEntry]) -> float:
    """Fraction of the truth's ordered adjacencies reproduced with the same
    relative orientation (and consistent rotations)."""
    truth_seams = _assembly_seams(reference_assembly(truth))
    if not truth_seams:
        return 1.0
    got = _assembly_seams(assembly)
    return len(truth_seams & got) / len(truth_seams)


def perfect_score(
    assembly: Assembly, truth: dict[int, TruthEntry], four_frames: bool = False
) -> bool:
    """True iff every piece is correctly placed and oriented (any global
    rotation counts for Type 2)."""
    return direct_score(assembly, truth, four_frames=four_frames) == 1.0


def largest_component_score(state, truth: dict[int, TruthEntry]) -> float:
    """Fraction of pieces in the largest component whose internal adjacencies
    are all truth-correct. Components float freely (translation never hurts)."""
    truth_seams = _assembly_seams(reference_assembly(truth))
    info = state.replica_info
    n_physical = len(truth)
    best = 0
    for comp in state.components:
        by_cell = {comp.offsets[p]: p for p in comp.pieces}
        good = True
        for (ox, oy), p in by_cell.items():
            for rel in (1, 2, 3, 4):
                # A match (p, q, rel) requires x_p - x_q = dx, so q sits at
                # (ox - dx, oy - dy).
                dx, dy = offsets(rel)
                q = by_cell.get((ox - dx, oy - dy))
                if q is None:
                    continue
                if info is None:
                    seam = physical_seam(p, 0, q, 0, rel)
                else:
                    pi, ai = int(info[p, 0]), int(info[p, 1])
                    qi, aq = int(info[q, 0]), int(info[q, 1])
                    seam = physical_seam(pi, (4 - ai) % 4, qi, (4 - aq) % 4, rel)
                if seam not in truth_seams:
                    good = False
                    break
            if not good:
                break
        if good:
            best = max(best, comp.size)
    return best / n_physical


def score_assembly(
    assembly: Assembly,
    truth: dict[int, TruthEntry],
    state=None,
    four_frames: bool = False,
) -> ScoreReport:
    direct = direct_score(assembly, truth, four_frames=four_frames)
    neighbor = neighbor_score(assembly, truth)
    largest = largest_component_score(state, truth) if state is not None else 0.0
    return ScoreReport(
        direct=direct,
        neighbor=neighbor,
        largest_component=largest,
        perfect=direct == 1.0,
    )


def write_report_json(report: ScoreReport, path: str | Path, extra: Optional[dict] = None) -> None:
    obj = report.to_row()
    if extra:
        obj.update(extra)
    Path(path).write_text(json.dumps(obj, indent=2))


def write_report_csv(rows: list[dict], path: str | Path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
