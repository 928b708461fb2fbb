"""Shared domain types: pieces, orientations, offsets, placements, assemblies.

Coordinate conventions used throughout:
  * x grows rightward, y grows downward (grid units).
  * Piece rotations are counter-clockwise quarter turns (0..3).
  * An oriented match (i, j, o) constrains x_i - x_j = DX[o], y_i - y_j = DY[o]:
      o=1  j sits above i        (0,  1)
      o=2  j sits right of i    (-1,  0)
      o=3  j sits below i        (0, -1)
      o=4  j sits left of i      (1,  0)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORIENTATIONS = (1, 2, 3, 4)

# Desired offsets per orientation, indexed o -> (dx, dy).
_OFFSET_TABLE = {1: (0, 1), 2: (-1, 0), 3: (0, -1), 4: (1, 0)}

# (i, j, o) describes the same physical boundary as (j, i, DUAL[o]).
DUAL_ORIENTATION = {1: 3, 2: 4, 3: 1, 4: 2}

INTENSITY_MAX = 65535  # pieces carry 16-bit intensities


def offsets(o: int) -> tuple[int, int]:
    """Desired (dx, dy) offset between pieces i and j for orientation o."""
    return _OFFSET_TABLE[o]


def rotate_orientation(o: int, quarter_turns: int) -> int:
    """Orientation label after rotating the whole scene CCW by quarter turns.

    One CCW scene rotation maps "j above i" to "j left of i", i.e. 1 -> 4.
    """
    return ((o - 1 - quarter_turns) % 4) + 1


@dataclass(frozen=True)
class PuzzleSpec:
    """Grid geometry of a puzzle: rows x cols pieces, each piece_px square."""

    rows: int
    cols: int
    piece_px: int

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be positive")
        if self.piece_px < 2:
            raise ValueError("piece_px must be at least 2")

    @property
    def n_pieces(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class Piece:
    """One square puzzle piece: id, 16-bit RGB pixels, CCW rotation tag."""

    id: int
    pixels: np.ndarray  # (P, P, 3) uint16, read-only
    rotation: int = 0

    def __post_init__(self) -> None:
        px = self.pixels
        if px.ndim != 3 or px.shape[0] != px.shape[1] or px.shape[2] != 3:
            raise ValueError(f"pixels must be (P, P, 3), got {px.shape}")
        if self.rotation not in (0, 1, 2, 3):
            raise ValueError("rotation must be a quarter turn in 0..3")
        px.setflags(write=False)

    @property
    def piece_px(self) -> int:
        return self.pixels.shape[0]


def rotate_piece(p: Piece, quarter_turns: int) -> Piece:
    """Rotate a piece CCW by the given number of quarter turns."""
    if quarter_turns not in (0, 1, 2, 3):
        raise ValueError("quarter_turns must be in 0..3")
    if quarter_turns == 0:
        return p
    return Piece(
        id=p.id,
        pixels=np.ascontiguousarray(np.rot90(p.pixels, quarter_turns)),
        rotation=(p.rotation + quarter_turns) % 4,
    )


@dataclass(frozen=True)
class Placement:
    """Real-valued per-piece coordinates produced by the axis LPs."""

    x: np.ndarray  # (n,) float
    y: np.ndarray  # (n,) float
    objective: float

    def __post_init__(self) -> None:
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("placement coordinates must be finite")
        self.x.setflags(write=False)
        self.y.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.x)


SOURCE_EMPTY = 0
SOURCE_LP = 1
SOURCE_FILL = 2

_SOURCE_NAMES = {SOURCE_EMPTY: "empty", SOURCE_LP: "lp-placed", SOURCE_FILL: "fill-placed"}


@dataclass
class Assembly:
    """Grid-snapped rectangular arrangement.

    ``piece_grid[r, c]`` holds a piece id or -1; ``rot_grid`` holds the
    estimated applied CCW rotation of the piece (render = inverse), always 0
    for Type 1; ``source_grid`` tags each cell lp-placed / fill-placed / empty.
    """

    piece_grid: np.ndarray  # (rows, cols) int
    rot_grid: np.ndarray  # (rows, cols) int
    source_grid: np.ndarray  # (rows, cols) int8

    def __post_init__(self) -> None:
        if not (self.piece_grid.shape == self.rot_grid.shape == self.source_grid.shape):
            raise ValueError("grid shapes must match")
        placed = self.piece_grid[self.piece_grid >= 0]
        if len(placed) != len(set(placed.tolist())):
            raise ValueError("a piece id appears more than once in the grid")

    @property
    def shape(self) -> tuple[int, int]:
        return self.piece_grid.shape  # type: ignore[return-value]

    @property
    def complete(self) -> bool:
        return bool(np.all(self.piece_grid >= 0))

    def to_json_obj(self) -> dict:
        rows, cols = self.shape
        grid = []
        for r in range(rows):
            row = []
            for c in range(cols):
                pid = int(self.piece_grid[r, c])
                if pid < 0:
                    row.append(None)
                else:
                    row.append(
                        {
                            "piece_id": pid,
                            "rotation": int(self.rot_grid[r, c]),
                            "source": _SOURCE_NAMES[int(self.source_grid[r, c])],
                        }
                    )
            grid.append(row)
        return {"rows": rows, "cols": cols, "grid": grid}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Assembly":
        rows, cols = obj["rows"], obj["cols"]
        piece = np.full((rows, cols), -1, dtype=np.int64)
        rot = np.zeros((rows, cols), dtype=np.int64)
        src = np.zeros((rows, cols), dtype=np.int8)
        names = {v: k for k, v in _SOURCE_NAMES.items()}
        for r in range(rows):
            for c in range(cols):
                cell = obj["grid"][r][c]
                if cell is None:
                    continue
                piece[r, c] = cell["piece_id"]
                rot[r, c] = cell["rotation"]
                src[r, c] = names[cell["source"]]
        return cls(piece, rot, src)
