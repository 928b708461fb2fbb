"""Pairwise piece compatibility: MGC distances, confidence weights, active sets.

The distance for a left-right configuration models each piece's own boundary
gradient distribution (3-channel mean + covariance of the outward gradients
along the shared edge) and charges the cross-boundary gradients under the
other piece's model, summed over both directions. Other orientations are
reduced to left-right canonical form by rotating both pieces.

Tables are dense ``(4, n, n)`` float64 arrays indexed ``[o-1, i, j]``;
universes and rejections are boolean masks of the same shape.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import INTENSITY_MAX, Piece

# Tikhonov term keeping flat-patch covariances invertible, on the 16-bit scale.
COV_EPSILON = 1e-6 * float(INTENSITY_MAX) ** 2
# Guards for the weight ratio: distances floored, weights capped.
D_MIN = 1e-12
W_MAX = 1e6


@dataclass(frozen=True)
class OrientedMatch:
    """Hypothesis that pieces i and j are adjacent in configuration o."""

    i: int
    j: int
    o: int
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.i == self.j:
            raise ValueError("a piece cannot match itself")


class DistanceTable:
    """All 4*n*(n-1) MGC distances, stored as a (4, n, n) array (diag = inf)."""

    def __init__(self, d: np.ndarray, piece_px: int):
        if d.ndim != 3 or d.shape[0] != 4 or d.shape[1] != d.shape[2]:
            raise ValueError(f"expected (4, n, n) array, got {d.shape}")
        self.d = d
        self.n = d.shape[1]
        self.piece_px = piece_px

    def get(self, i: int, j: int, o: int) -> float:
        return float(self.d[o - 1, i, j])

    def save(self, path: str | Path) -> None:
        """Binary cache: 8-byte header (n, piece_px as uint32), then the
        float64 distances in (i, j, o) row-major order."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<II", self.n, self.piece_px))
            np.ascontiguousarray(self.d.transpose(1, 2, 0)).tofile(fh)

    @classmethod
    def load(cls, path: str | Path) -> "DistanceTable":
        with open(path, "rb") as fh:
            n, piece_px = struct.unpack("<II", fh.read(8))
            flat = np.fromfile(fh, dtype=np.float64, count=n * n * 4)
        if flat.size != n * n * 4:
            raise IOError(f"truncated distance cache: {path}")
        d = np.ascontiguousarray(flat.reshape(n, n, 4).transpose(2, 0, 1))
        return cls(d, piece_px)


class WeightTable:
    """Confidence weights w[o-1, i, j]; zero outside the universe it was
    built over."""

    def __init__(self, w: np.ndarray):
        self.w = w
        self.n = w.shape[1]

    def get(self, i: int, j: int, o: int) -> float:
        return float(self.w[o - 1, i, j])


def _side_model(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and regularized inverse covariance of per-row gradient samples."""
    mu = grad.mean(axis=0)
    centered = grad - mu
    ddof = max(len(grad) - 1, 1)
    cov = centered.T @ centered / ddof + COV_EPSILON * np.eye(3)
    return mu, np.linalg.inv(cov)


def _lr_distance(left: np.ndarray, right: np.ndarray) -> float:
    """Symmetrized MGC cost of placing `left` immediately left of `right`."""
    lb = left[:, -1, :].astype(np.float64)
    rb = right[:, 0, :].astype(np.float64)
    mu_l, sinv_l = _side_model(lb - left[:, -2, :].astype(np.float64))
    mu_r, sinv_r = _side_model(rb - right[:, 1, :].astype(np.float64))
    u = (rb - lb) - mu_l
    v = (lb - rb) - mu_r
    return float(np.einsum("pa,ab,pb->", u, sinv_l, u) + np.einsum("pa,ab,pb->", v, sinv_r, v))


def mgc_distance(pi: Piece, pj: Piece, o: int) -> float:
    """MGC distance between pieces i and j in configuration o.

    Orientations 1 and 3 are computed by rotating both pieces clockwise so
    the boundary becomes a left-right seam; relabeling symmetry
    D(i,j,4) == D(j,i,2) and D(i,j,1) == D(j,i,3) holds bit-exactly.
    """
    if pi.piece_px != pj.piece_px or pi.piece_px < 2:
        raise ValueError("pieces must share piece_px >= 2")
    a, b = pi.pixels, pj.pixels
    if o == 2:
        return _lr_distance(a, b)
    if o == 4:
        return _lr_distance(b, a)
    if o == 1:
        return _lr_distance(np.rot90(a, -1), np.rot90(b, -1))
    if o == 3:
        return _lr_distance(np.rot90(b, -1), np.rot90(a, -1))
    raise ValueError(f"orientation must be in 1..4, got {o}")


def _batch_side_models(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized _side_model over a (n, P, 3) gradient stack."""
    mu = grad.mean(axis=1)
    centered = grad - mu[:, None, :]
    ddof = max(grad.shape[1] - 1, 1)
    cov = np.einsum("npa,npb->nab", centered, centered) / ddof
    cov += COV_EPSILON * np.eye(3)
    return mu, np.linalg.inv(cov)


def _lr_matrix(stack: np.ndarray) -> np.ndarray:
    """Matrix M[i, j] = _lr_distance(stack[i], stack[j]) with inf diagonal."""
    n = stack.shape[0]
    lb = stack[:, :, -1, :]  # right-edge boundary of the left role
    rb = stack[:, :, 0, :]  # left-edge boundary of the right role
    mu_l, sinv_l = _batch_side_models(lb - stack[:, :, -2, :])
    mu_r, sinv_r = _batch_side_models(rb - stack[:, :, 1, :])
    m = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        u = (rb - lb[i]) - mu_l[i]
        d1 = np.einsum("jpa,ab,jpb->j", u, sinv_l[i], u)
        v = (lb[i] - rb) - mu_r[:, None, :]
        d2 = np.einsum("jpa,jab,jpb->j", v, sinv_r, v)
        m[i] = d1 + d2
    np.fill_diagonal(m, np.inf)
    return m


def build_distance_table(pieces: list[Piece]) -> DistanceTable:
    """Compute MGC distances for all ordered pairs and orientations.

    Only the two canonical matrices are evaluated; orientations 3 and 4 are
    their relabelings, so the symmetry invariants hold exactly.
    """
    n = len(pieces)
    if n < 3:
        raise ValueError("need at least 3 pieces")
    P = pieces[0].piece_px
    stack = np.stack([p.pixels for p in pieces]).astype(np.float64)
    m_horiz = _lr_matrix(stack)  # o=2: i left of j
    m_vert = _lr_matrix(np.rot90(stack, -1, axes=(1, 2)))  # o=1: j above i
    d = np.empty((4, n, n), dtype=np.float64)
    d[1] = m_horiz
    d[3] = m_horiz.T
    d[0] = m_vert
    d[2] = m_vert.T
    return DistanceTable(d, P)


def full_universe(n: int, same_group: Optional[np.ndarray] = None) -> np.ndarray:
    """Boolean (4, n, n) mask of all candidate matches, excluding self-pairs.

    `same_group` optionally maps piece index -> group id; pairs within one
    group (e.g. rotation replicas of one physical piece) are excluded too.
    """
    u = np.ones((4, n, n), dtype=bool)
    idx = np.arange(n)
    u[:, idx, idx] = False
    if same_group is not None:
        block = same_group[:, None] == same_group[None, :]
        u &= ~block[None, :, :]
    return u


def build_weights(table: DistanceTable, universe: np.ndarray) -> WeightTable:
    """Confidence weights: best-alternative distance over the universe,
    divided by the match's own distance (floored at D_MIN, capped at W_MAX)."""
    n = table.n
    w = np.zeros((4, n, n), dtype=np.float64)
    for oi in range(4):
        mask = universe[oi]
        if not mask.any():
            continue
        a = np.where(mask, table.d[oi], np.inf)
        # Best and second-best along each column (alternatives for j) and row
        # (alternatives for i); the second-best stands in when the best is
        # the entry itself.
        part_c = np.partition(a, min(1, n - 1), axis=0)
        col1, col2 = part_c[0], part_c[min(1, n - 1)]
        argc = np.argmin(a, axis=0)
        part_r = np.partition(a, min(1, n - 1), axis=1)
        row1, row2 = part_r[:, 0], part_r[:, min(1, n - 1)]
        argr = np.argmin(a, axis=1)

        rows = np.arange(n)
        col_alt = np.where(rows[:, None] == argc[None, :], col2[None, :], col1[None, :])
        row_alt = np.where(np.arange(n)[None, :] == argr[:, None], row2[:, None], row1[:, None])
        # Both sides of the ratio are floored so weights stay positive and
        # finite even around exactly-zero distances.
        num = np.maximum(np.minimum(col_alt, row_alt), D_MIN)
        den = np.maximum(table.d[oi], D_MIN)
        with np.errstate(invalid="ignore", over="ignore"):
            val = num / den  # entries outside the mask may be inf/inf
        np.minimum(val, W_MAX, out=val)
        w[oi][mask] = val[mask]
    return WeightTable(w)


def active_set(
    table: DistanceTable,
    universe: np.ndarray,
    weights: Optional[WeightTable] = None,
) -> tuple[list[OrientedMatch], int]:
    """Per (piece, orientation) best surviving candidate by distance.

    Ties break toward the smallest j. Returns the matches plus the number of
    (i, o) slots that had no surviving candidate (normally 0, so |A| = 4n).
    """
    n = table.n
    matches: list[OrientedMatch] = []
    skipped = 0
    for oi in range(4):
        a = np.where(universe[oi], table.d[oi], np.inf)
        best_j = np.argmin(a, axis=1)
        best_d = a[np.arange(n), best_j]
        for i in range(n):
            if not np.isfinite(best_d[i]):
                skipped += 1
                continue
            j = int(best_j[i])
            wt = weights.get(i, j, oi + 1) if weights is not None else 1.0
            matches.append(OrientedMatch(i=i, j=j, o=oi + 1, weight=wt))
    return matches, skipped


def check_relabel_symmetry(table: DistanceTable) -> bool:
    """True iff D(i,j,4) == D(j,i,2) and D(i,j,1) == D(j,i,3) exactly."""
    return bool(
        np.array_equal(table.d[3], table.d[1].T) and np.array_equal(table.d[0], table.d[2].T)
    )
