"""Input validation helpers shared by the estimator API and the tracker."""

from __future__ import annotations

import numpy as np

from .exceptions import ImageSizeMismatchError, LengthMismatchError


def check_points(points, name: str = "points") -> np.ndarray:
    """Coerce to a float (N, 2) array and reject non-finite values."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and pts.shape == (2,):
        pts = pts[np.newaxis, :]
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"{name} must have shape (N, 2), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return pts


def check_point_pairs(src, dst) -> tuple[np.ndarray, np.ndarray]:
    src = check_points(src, "src")
    dst = check_points(dst, "dst")
    if src.shape[0] != dst.shape[0]:
        raise LengthMismatchError(
            f"src has {src.shape[0]} points, dst has {dst.shape[0]}"
        )
    return src, dst


def check_weights(weights, n: int) -> np.ndarray:
    """Coerce to a float (n,) array of weights in [0, 1]."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},), got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights contain non-finite values")
    if np.any(w < 0.0) or np.any(w > 1.0):
        raise ValueError("weights must lie in [0, 1]")
    return w


def check_image(image, name: str = "image") -> np.ndarray:
    """Coerce to float64 pixels in [0, 1], shape (H, W) or (H, W, 3)."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ValueError(f"{name} must be (H, W) or (H, W, 3), got {img.shape}")
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"{name} must be at least 2x2, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite pixels")
    if img.min() < -1e-9 or img.max() > 1.0 + 1e-9:
        raise ValueError(f"{name} intensities must lie in [0, 1]")
    return np.clip(img, 0.0, 1.0)


def check_same_size(a: np.ndarray, b: np.ndarray, what: str = "images") -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ImageSizeMismatchError(
            f"{what} differ in size: {a.shape[:2]} vs {b.shape[:2]}"
        )


def check_mask(mask, shape: tuple[int, int]) -> np.ndarray:
    m = np.asarray(mask)
    if m.shape != shape:
        raise ValueError(f"mask must have shape {shape}, got {m.shape}")
    return m.astype(bool)


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed, a SeedSequence, a Generator, or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derived_seed(*entropy: int) -> int:
    """A stable, well-mixed seed derived from a tuple of named components."""
    ss = np.random.SeedSequence(list(entropy))
    return int(ss.generate_state(1, np.uint64)[0])
