"""Load images, cut them into pieces, scramble, add noise, persist bundles.

Intensities are kept on a 16-bit scale (0..65535); 8-bit inputs are scaled
up by 257 on ingest. Ground truth records, per piece id, the cell it came
from and the CCW rotation that was applied when scrambling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from .core import Piece, PuzzleSpec

TYPE1 = "type1"
TYPE2 = "type2"

MANIFEST_NAME = "manifest.json"
TRUTH_NAME = "truth.json"


class DimensionError(ValueError):
    """Image dimensions are not compatible with the requested piece size."""


class BundleError(ValueError):
    """A bundle directory is missing files or internally inconsistent."""


@dataclass(frozen=True)
class TruthEntry:
    row: int
    col: int
    rotation: int  # applied CCW quarter turns (0 for type 1)


@dataclass
class PuzzleBundle:
    """A scrambled puzzle: spec, pieces in scrambled order, optional truth."""

    spec: PuzzleSpec
    pieces: list[Piece]
    truth: Optional[dict[int, TruthEntry]]
    type_tag: str = TYPE1
    seed: Optional[int] = None
    noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        if len(self.pieces) != self.spec.n_pieces:
            raise ValueError("piece count does not match spec")
        if self.truth is not None:
            cells = {(t.row, t.col) for t in self.truth.values()}
            if len(self.truth) != self.spec.n_pieces or len(cells) != self.spec.n_pieces:
                raise ValueError("truth must be a bijection onto grid cells")


def load_image(path: str | Path) -> np.ndarray:
    """Read a PNG or binary PPM image as an (H, W, 3) uint16 RGB array."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"cannot read image: {path}")
    if raw.ndim == 2:
        raw = cv2.cvtColor(raw, cv2.COLOR_GRAY2BGR)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    if rgb.dtype == np.uint8:
        return rgb.astype(np.uint16) * 257
    if rgb.dtype == np.uint16:
        return rgb
    raise IOError(f"unsupported image dtype {rgb.dtype} in {path}")


def save_image(path: str | Path, rgb16: np.ndarray) -> None:
    """Write an (H, W, 3) uint16 RGB array as a 16-bit PNG."""
    bgr = cv2.cvtColor(np.ascontiguousarray(rgb16, dtype=np.uint16), cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), bgr):
        raise IOError(f"cannot write image: {path}")


def center_crop(image: np.ndarray, piece_px: int) -> np.ndarray:
    """Center-crop so both dimensions become multiples of piece_px."""
    h, w = image.shape[:2]
    nh, nw = (h // piece_px) * piece_px, (w // piece_px) * piece_px
    if nh == 0 or nw == 0:
        raise DimensionError(f"image {h}x{w} smaller than one {piece_px}px piece")
    top, left = (h - nh) // 2, (w - nw) // 2
    return image[top : top + nh, left : left + nw]


def slice_image(image: np.ndarray, piece_px: int, seed: int = 0) -> PuzzleBundle:
    """Cut an image into pieces and shuffle them with a seeded RNG.

    Piece ids are dense integers in scramble order; truth records, per id,
    the original cell. Raises DimensionError unless both image dimensions
    are exact multiples of piece_px.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"expected (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    if h % piece_px or w % piece_px:
        raise DimensionError(f"image {h}x{w} is not a multiple of piece_px={piece_px}")
    rows, cols = h // piece_px, w // piece_px
    spec = PuzzleSpec(rows=rows, cols=cols, piece_px=piece_px)

    cells = [(r, c) for r in range(rows) for c in range(cols)]
    order = np.random.default_rng(seed).permutation(len(cells))

    image16 = np.ascontiguousarray(image, dtype=np.uint16)
    pieces: list[Piece] = []
    truth: dict[int, TruthEntry] = {}
    for new_id, cell_idx in enumerate(order):
        r, c = cells[cell_idx]
        block = image16[r * piece_px : (r + 1) * piece_px, c * piece_px : (c + 1) * piece_px]
        pieces.append(Piece(id=new_id, pixels=block.copy(), rotation=0))
        truth[new_id] = TruthEntry(row=r, col=c, rotation=0)
    return PuzzleBundle(spec=spec, pieces=pieces, truth=truth, type_tag=TYPE1, seed=seed)


def scramble_type2(bundle: PuzzleBundle, seed: int) -> PuzzleBundle:
    """Rotate every piece by an independent uniform quarter turn (Type 2)."""
    if bundle.type_tag != TYPE1:
        raise ValueError("scramble_type2 expects a type1 bundle")
    if bundle.truth is None:
        raise ValueError("scramble_type2 expects a bundle with truth")
    turns = np.random.default_rng(seed).integers(0, 4, size=len(bundle.pieces))
    # The applied turn is recorded only in truth; as far as the solver is
    # concerned the rotated pixels are the piece (rotation tag stays 0).
    pieces = [
        Piece(id=p.id, pixels=np.ascontiguousarray(np.rot90(p.pixels, int(t))), rotation=0)
        for p, t in zip(bundle.pieces, turns)
    ]
    truth = {
        pid: replace(entry, rotation=int(turns[pid])) for pid, entry in bundle.truth.items()
    }
    return PuzzleBundle(
        spec=bundle.spec,
        pieces=pieces,
        truth=truth,
        type_tag=TYPE2,
        seed=bundle.seed,
        noise_sigma=bundle.noise_sigma,
    )


def add_noise(bundle: PuzzleBundle, sigma: float, seed: int) -> PuzzleBundle:
    """Add i.i.d. Gaussian noise (std sigma on the 0..65535 scale) per channel.

    Values are clamped to [0, 65535] and rounded back to uint16.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return bundle
    rng = np.random.default_rng(seed)
    pieces = []
    for p in bundle.pieces:
        noisy = p.pixels.astype(np.float64) + rng.normal(0.0, sigma, size=p.pixels.shape)
        clipped = np.clip(np.rint(noisy), 0, 65535).astype(np.uint16)
        pieces.append(Piece(id=p.id, pixels=clipped, rotation=p.rotation))
    return PuzzleBundle(
        spec=bundle.spec,
        pieces=pieces,
        truth=bundle.truth,
        type_tag=bundle.type_tag,
        seed=bundle.seed,
        noise_sigma=sigma,
    )


def reassemble_by_truth(bundle: PuzzleBundle) -> np.ndarray:
    """Stitch the original image back using ground truth (testing aid)."""
    if bundle.truth is None:
        raise ValueError("bundle has no truth")
    P = bundle.spec.piece_px
    out = np.zeros((bundle.spec.rows * P, bundle.spec.cols * P, 3), dtype=np.uint16)
    for p in bundle.pieces:
        t = bundle.truth[p.id]
        block = np.rot90(p.pixels, (4 - t.rotation) % 4)
        out[t.row * P : (t.row + 1) * P, t.col * P : (t.col + 1) * P] = block
    return out


def save_bundle(bundle: PuzzleBundle, directory: str | Path, write_truth: bool = True) -> Path:
    """Persist a bundle as piece PNGs + manifest.json (+ optional truth.json)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for p in bundle.pieces:
        save_image(d / f"piece_{p.id}.png", p.pixels)
    manifest = {
        "rows": bundle.spec.rows,
        "cols": bundle.spec.cols,
        "piece_px": bundle.spec.piece_px,
        "type_tag": bundle.type_tag,
        "seed": bundle.seed,
        "noise_sigma": bundle.noise_sigma,
        "n_pieces": bundle.spec.n_pieces,
    }
    (d / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    if write_truth and bundle.truth is not None:
        truth_obj = {
            str(pid): {"row": t.row, "col": t.col, "rotation_deg": t.rotation * 90}
            for pid, t in bundle.truth.items()
        }
        (d / TRUTH_NAME).write_text(json.dumps(truth_obj, indent=2))
    return d


def load_bundle(directory: str | Path, with_truth: bool = True) -> PuzzleBundle:
    """Load a bundle directory; truth.json is optional and never required."""
    d = Path(directory)
    manifest_path = d / MANIFEST_NAME
    if not manifest_path.is_file():
        raise BundleError(f"missing {MANIFEST_NAME} in {d}")
    manifest = json.loads(manifest_path.read_text())
    spec = PuzzleSpec(
        rows=manifest["rows"], cols=manifest["cols"], piece_px=manifest["piece_px"]
    )
    pieces = []
    for pid in range(spec.n_pieces):
        path = d / f"piece_{pid}.png"
        if not path.is_file():
            raise BundleError(f"missing piece file {path}")
        px = load_image(path)
        if px.shape[0] != spec.piece_px or px.shape[1] != spec.piece_px:
            raise BundleError(f"piece {pid} has wrong size {px.shape}")
        pieces.append(Piece(id=pid, pixels=px, rotation=0))

    truth = None
    truth_path = d / TRUTH_NAME
    if with_truth and truth_path.is_file():
        obj = json.loads(truth_path.read_text())
        truth = {
            int(pid): TruthEntry(
                row=entry["row"], col=entry["col"], rotation=(entry["rotation_deg"] // 90) % 4
            )
            for pid, entry in obj.items()
        }
    return PuzzleBundle(
        spec=spec,
        pieces=pieces,
        truth=truth,
        type_tag=manifest["type_tag"],
        seed=manifest.get("seed"),
        noise_sigma=manifest.get("noise_sigma", 0.0),
    )
