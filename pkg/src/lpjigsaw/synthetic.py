"""Procedural test images on the 16-bit intensity scale.

``smooth_unique_image`` produces globally smooth fields whose every piece
boundary has a distinct profile (easy, noise-free perfect-reconstruction
material). ``natural_image`` produces multi-octave value noise with
photograph-like statistics for convergence and noise-degradation runs.
"""

from __future__ import annotations

import numpy as np

from .core import INTENSITY_MAX


def _to_uint16(field: np.ndarray, lo: float = 0.06, hi: float = 0.94) -> np.ndarray:
    mn, mx = field.min(), field.max()
    unit = (field - mn) / (mx - mn) if mx > mn else np.full_like(field, 0.5)
    return ((lo + (hi - lo) * unit) * INTENSITY_MAX).astype(np.uint16)


def smooth_unique_image(seed: int, rows: int, cols: int, piece_px: int) -> np.ndarray:
    """Smooth low-frequency sinusoid mix; every seam profile is distinct."""
    rng = np.random.default_rng(seed)
    h, w = rows * piece_px, cols * piece_px
    yy, xx = np.mgrid[0:h, 0:w]
    xu, yu = xx / w, yy / h
    img = np.empty((h, w, 3), dtype=np.uint16)
    for ch in range(3):
        field = 1.5 * (rng.uniform(-1, 1) * xu + rng.uniform(-1, 1) * yu)
        for _ in range(6):
            fx, fy = rng.uniform(-5, 5, size=2)
            amp = rng.uniform(0.4, 1.0)
            phase = rng.uniform(0, 2 * np.pi)
            field = field + amp * np.sin(2 * np.pi * (fx * xu + fy * yu) + phase)
        img[:, :, ch] = _to_uint16(field)
    return img


def natural_image(seed: int, rows: int, cols: int, piece_px: int) -> np.ndarray:
    """Multi-octave value noise under a smooth "sky" band, loosely mimicking
    landscape photo statistics (textured ground, ambiguous flat sky)."""
    import cv2

    rng = np.random.default_rng(seed)
    h, w = rows * piece_px, cols * piece_px
    luma = np.zeros((h, w))
    amp = 1.0
    cells = 3
    while cells < min(h, w):
        coarse = rng.standard_normal((max(cells * h // w, 2), cells))
        luma += amp * cv2.resize(coarse, (w, h), interpolation=cv2.INTER_CUBIC)
        amp *= 0.55
        cells *= 2

    # Blend the top of the frame into a nearly flat vertical gradient; the
    # skyline height and blend sharpness vary per image.
    yy = np.linspace(0.0, 1.0, h)[:, None] * np.ones((1, w))
    horizon = rng.uniform(0.25, 0.45)
    blend = 1.0 / (1.0 + np.exp(-(yy - horizon) / 0.04))
    scale = max(np.abs(luma).max(), 1e-9)
    sky = (0.9 - 0.08 * yy) * scale + 0.002 * luma
    luma = blend * luma + (1.0 - blend) * sky

    img = np.empty((h, w, 3), dtype=np.uint16)
    for ch in range(3):
        tint_coarse = rng.standard_normal((4, 4))
        tint = cv2.resize(tint_coarse, (w, h), interpolation=cv2.INTER_CUBIC)
        img[:, :, ch] = _to_uint16(luma + 0.4 * blend * tint)
    return img


def quadrant_image(piece_px: int = 8) -> np.ndarray:
    """A 2x2-piece image with four distinctly colored, smoothly varying
    quadrants; true seams continue smoothly while any wrong pairing jumps."""
    h = w = 2 * piece_px
    yy, xx = np.mgrid[0:h, 0:w]
    xu, yu = xx / w, yy / h
    base = np.stack(
        [
            0.25 + 0.5 * xu,
            0.25 + 0.5 * yu,
            0.25 + 0.25 * xu + 0.25 * (1 - yu),
        ],
        axis=2,
    )
    return (base * INTENSITY_MAX).astype(np.uint16)
