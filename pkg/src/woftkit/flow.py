"""Dense optical flow fields, weight maps, and correspondence extraction.

A flow field maps pixel (x, y) of the source image to (x + u, y + v) in the
target image. Invalid pixels always carry u = v = 0 so downstream code can
treat the arrays as total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .exceptions import ImageSizeMismatchError
from .geometry import Homography, bilinear_sample
from .validation import as_rng, check_image, check_same_size

LK_LEVELS = 4
LK_WINDOW = 21
LK_ITERATIONS = 5
LK_MIN_EIGEN = 1e-4
FB_SIGMA = 2.0
RESIDUAL_SIGMA = 2.0


@dataclass
class FlowField:
    """Dense displacement field with a validity mask.

    `outliers` optionally records which pixels were deliberately corrupted
    by the synthetic generator (None for real flow)."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    outliers: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (self.u.shape == self.v.shape == self.valid.shape):
            raise ValueError("u, v, valid must share one shape")
        if not np.all(self.valid):
            self.u = np.where(self.valid, self.u, 0.0)
            self.v = np.where(self.valid, self.v, 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape


@dataclass(frozen=True)
class ContaminationSpec:
    """How to corrupt a synthetic flow field.

    `outlier_fraction` of pixels are replaced by uniformly random
    displacements of magnitude up to `outlier_magnitude`; everything else
    gets isotropic Gaussian noise of `noise_sigma` pixels."""

    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_magnitude: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1]")
        if self.noise_sigma < 0.0 or self.outlier_magnitude < 0.0:
            raise ValueError("noise_sigma and outlier_magnitude must be >= 0")


@dataclass
class Correspondences:
    """Point pairs extracted from a flow field, with optional weights."""

    src: np.ndarray  # (N, 2)
    dst: np.ndarray  # (N, 2)
    weights: np.ndarray | None = None

    def __len__(self) -> int:
        return self.src.shape[0]


def synthetic_flow(
    h: Homography, size: tuple[int, int], spec: ContaminationSpec | None = None
) -> FlowField:
    """The exact flow induced by `h` on a (width, height) grid, contaminated
    per `spec`. The number of outliers is exactly
    floor(outlier_fraction * W * H) and their locations are recorded."""
    spec = spec or ContaminationSpec()
    w, hgt = size
    rng = as_rng(spec.rng_seed)
    xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(hgt, dtype=float))
    m = h.matrix
    denom = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    px = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / denom
    py = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / denom
    u = px - xs
    v = py - ys
    if spec.noise_sigma > 0.0:
        u = u + rng.normal(scale=spec.noise_sigma, size=u.shape)
        v = v + rng.normal(scale=spec.noise_sigma, size=v.shape)
    outliers = np.zeros(u.shape, dtype=bool)
    n_out = int(np.floor(spec.outlier_fraction * w * hgt))
    if n_out > 0:
        flat = rng.choice(w * hgt, size=n_out, replace=False)
        angle = rng.uniform(0.0, 2.0 * np.pi, size=n_out)
        mag = rng.uniform(0.0, spec.outlier_magnitude, size=n_out)
        u.ravel()[flat] = mag * np.cos(angle)
        v.ravel()[flat] = mag * np.sin(angle)
        outliers.ravel()[flat] = True
    return FlowField(u, v, np.ones(u.shape, dtype=bool), outliers)


def _to_gray(image: np.ndarray) -> np.ndarray:
    img = check_image(image)
    if img.ndim == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    return img


def _pyramid(image: np.ndarray, levels: int) -> list[np.ndarray]:
    from scipy.ndimage import convolve1d

    kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    out = [image]
    while len(out) < levels and min(out[-1].shape) >= 16:
        blurred = convolve1d(out[-1], kernel, axis=0, mode="nearest")
        blurred = convolve1d(blurred, kernel, axis=1, mode="nearest")
        out.append(blurred[::2, ::2])
    return out


def lucas_kanade_flow(
    i0,
    i1,
    levels: int = LK_LEVELS,
    window: int = LK_WINDOW,
    iterations: int = LK_ITERATIONS,
    min_eigenvalue: float = LK_MIN_EIGEN,
) -> FlowField:
    """Coarse-to-fine pyramidal Lucas-Kanade flow from i0 to i1.

    Pixels whose averaging window leaves the image, or whose structure
    tensor's smaller eigenvalue falls below the guard after intensity
    normalization, are marked invalid.
    """
    g0 = _to_gray(i0)
    g1 = _to_gray(i1)
    check_same_size(g0, g1)
    pyr0 = _pyramid(g0, levels)
    pyr1 = _pyramid(g1, levels)

    u = np.zeros(pyr0[-1].shape)
    v = np.zeros(pyr0[-1].shape)
    lam_min = np.zeros(pyr0[-1].shape)
    from .geometry import resize_bilinear

    for level in range(len(pyr0) - 1, -1, -1):
        im0, im1 = pyr0[level], pyr1[level]
        if u.shape != im0.shape:
            u = resize_bilinear(u, im0.shape) * 2.0
            v = resize_bilinear(v, im0.shape) * 2.0
        gy, gx = np.gradient(im0)
        axx = uniform_filter(gx * gx, window, mode="nearest")
        axy = uniform_filter(gx * gy, window, mode="nearest")
        ayy = uniform_filter(gy * gy, window, mode="nearest")
        det = axx * ayy - axy * axy
        trace = axx + ayy
        lam_min = 0.5 * (trace - np.sqrt(np.maximum(trace * trace - 4.0 * det, 0.0)))
        solvable = (lam_min > min_eigenvalue) & (np.abs(det) > 1e-300)
        safe_det = np.where(solvable, det, 1.0)
        xs, ys = np.meshgrid(
            np.arange(im0.shape[1], dtype=float), np.arange(im0.shape[0], dtype=float)
        )
        for _ in range(iterations):
            warped, inside = bilinear_sample(im1, xs + u, ys + v)
            et = np.where(inside, warped - im0, 0.0)
            bx = uniform_filter(gx * et, window, mode="nearest")
            by = uniform_filter(gy * et, window, mode="nearest")
            du = (-ayy * bx + axy * by) / safe_det
            dv = (axy * bx - axx * by) / safe_det
            u = np.where(solvable, u + du, u)
            v = np.where(solvable, v + dv, v)

    margin = window // 2
    valid = solvable.copy()
    valid[:margin, :] = False
    valid[-margin:, :] = False
    valid[:, :margin] = False
    valid[:, -margin:] = False
    return FlowField(u, v, valid)


def weights_uniform(shape: tuple[int, int]) -> np.ndarray:
    return np.ones(shape)


def weights_fb_consistency(
    forward: FlowField, backward: FlowField, sigma: float = FB_SIGMA
) -> np.ndarray:
    """Per-pixel weight exp(-e^2 / (2 sigma^2)) from the forward-backward
    consistency error e(x) = |f(x) + b(x + f(x))|.

    Pixels that are invalid, or whose forward endpoint leaves the backward
    field or lands on invalid backward pixels, get weight 0.
    """
    if forward.shape != backward.shape:
        raise ImageSizeMismatchError(
            f"forward {forward.shape} vs backward {backward.shape}"
        )
    h, w = forward.shape
    xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    ex = xs + forward.u
    ey = ys + forward.v
    bu, inside = bilinear_sample(backward.u, ex, ey)
    bv, _ = bilinear_sample(backward.v, ex, ey)
    bvalid, _ = bilinear_sample(backward.valid.astype(float), ex, ey)
    err2 = (forward.u + bu) ** 2 + (forward.v + bv) ** 2
    weights = np.exp(-err2 / (2.0 * sigma * sigma))
    ok = forward.valid & inside & (bvalid >= 1.0 - 1e-9)
    return np.where(ok, weights, 0.0)


def weights_residual(
    src, dst, h_init: Homography, sigma: float = RESIDUAL_SIGMA
) -> np.ndarray:
    """Per-pair weight exp(-r^2 / (2 sigma^2)) from transfer residuals
    against a provisional homography. Underflow clamps to exactly 0."""
    from .estimators import transfer_errors

    r = transfer_errors(h_init, src, dst)
    with np.errstate(under="ignore"):
        out = np.exp(-(r * r) / (2.0 * sigma * sigma))
    out[~np.isfinite(r)] = 0.0
    return out


def flow_to_correspondences(
    flow: FlowField,
    mask: np.ndarray,
    target_size: tuple[int, int],
    max_samples: int = 500,
    rng_seed: int = 0,
    weights: np.ndarray | None = None,
    target_valid: np.ndarray | None = None,
) -> Correspondences:
    """Turn a flow field into point pairs.

    Keeps pixels that are flow-valid, start inside `mask`, and end inside
    the (width, height) target bounds (and, if `target_valid` is given, on
    a valid target pixel — used to exclude warp fill regions). If more than
    `max_samples` survive, a seeded uniform subsample without replacement
    is taken. Weights, when provided, are read at the source pixels.
    """
    h, w = flow.shape
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != flow.shape:
        raise ImageSizeMismatchError(f"mask {mask.shape} vs flow {flow.shape}")
    tw, th = target_size
    ys, xs = np.nonzero(mask & flow.valid)
    ex = xs + flow.u[ys, xs]
    ey = ys + flow.v[ys, xs]
    keep = (ex >= 0.0) & (ex <= tw - 1.0) & (ey >= 0.0) & (ey <= th - 1.0)
    if target_valid is not None:
        tv = np.asarray(target_valid, dtype=bool)
        ix = np.clip(np.rint(ex).astype(np.intp), 0, tv.shape[1] - 1)
        iy = np.clip(np.rint(ey).astype(np.intp), 0, tv.shape[0] - 1)
        keep &= tv[iy, ix]
    xs, ys, ex, ey = xs[keep], ys[keep], ex[keep], ey[keep]
    if xs.size > max_samples:
        rng = as_rng(rng_seed)
        pick = np.sort(rng.choice(xs.size, size=max_samples, replace=False))
        xs, ys, ex, ey = xs[pick], ys[pick], ex[pick], ey[pick]
    src = np.column_stack([xs, ys]).astype(float)
    dst = np.column_stack([ex, ey])
    w_out = None
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != flow.shape:
            raise ImageSizeMismatchError(
                f"weights {weights.shape} vs flow {flow.shape}"
            )
        w_out = weights[ys.astype(np.intp), xs.astype(np.intp)]
    return Correspondences(src, dst, w_out)
