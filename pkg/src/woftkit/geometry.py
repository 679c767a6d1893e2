"""Planar projective transforms and image warping.

Conventions used throughout the toolkit:

- points are (x, y) pixel coordinates, arrays of shape (N, 2);
- a `Homography` maps source coordinates to destination coordinates by
  `dehomog(M @ [x, y, 1])`;
- `warp_image(h, img)` moves image content forward by `h`, implemented as an
  inverse-mapping resample: `out(p) = img(h^-1 p)` with bilinear interpolation.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DegenerateResultError, PointAtInfinityError
from .validation import check_image, check_points

_EPS_SCALE = 1e-9  # canonical-form threshold relative to the matrix max-norm
_EPS_DET = 1e-12
_EPS_W = 1e-12  # homogeneous scale below which a projection is at infinity


class Homography:
    """A 3x3 projective transform stored in canonical form (h33 == 1)."""

    __slots__ = ("matrix",)

    def __init__(self, matrix) -> None:
        m = np.array(matrix, dtype=float)
        if m.shape != (3, 3):
            raise DegenerateResultError(f"expected a 3x3 matrix, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise DegenerateResultError("matrix contains non-finite entries")
        scale = np.abs(m).max()
        if scale == 0.0 or abs(m[2, 2]) <= _EPS_SCALE * scale:
            raise DegenerateResultError(
                "bottom-right element too small to fix the projective scale"
            )
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= _EPS_DET:
            raise DegenerateResultError("matrix is singular")
        m.setflags(write=False)
        self.matrix = m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return cls(m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def compose(self, other: "Homography") -> "Homography":
        """The transform applying `other` first, then `self`."""
        return Homography(self.matrix @ other.matrix)

    def __matmul__(self, other: "Homography") -> "Homography":
        return self.compose(other)

    def transform(self, points) -> np.ndarray:
        return warp_points(self, points)

    def __call__(self, points) -> np.ndarray:
        return warp_points(self, points)

    def rescale(self, factor: float) -> "Homography":
        """Conjugate by the coordinate scaling x -> factor * x.

        If `self` acts on coordinates measured at one resolution, the result
        acts identically on coordinates multiplied by `factor`.
        """
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        m = self.matrix.copy()
        m[:2, 2] *= factor
        m[2, :2] /= factor
        return Homography(m)

    def is_close(self, other: "Homography", tol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, atol=tol, rtol=0.0))

    def __repr__(self) -> str:
        row = ", ".join(f"{v:.6g}" for v in self.matrix.ravel())
        return f"Homography([{row}])"


def warp_points(h: Homography, points) -> np.ndarray:
    """Project points through `h`. Raises if any homogeneous scale vanishes."""
    pts = check_points(points)
    m = h.matrix
    x, y = pts[:, 0], pts[:, 1]
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if np.any(np.abs(w) <= _EPS_W):
        raise PointAtInfinityError("a point projected to infinity")
    px = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
    py = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
    return np.stack([px, py], axis=1)


def warp_point(h: Homography, point) -> np.ndarray:
    return warp_points(h, np.asarray(point, dtype=float).reshape(1, 2))[0]


def bilinear_sample(
    image: np.ndarray, xs: np.ndarray, ys: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Sample `image` at float positions; returns (values, inside_mask).

    Positions outside [0, W-1] x [0, H-1] are reported outside and sampled
    from clamped coordinates, so callers must apply the mask themselves.
    """
    h, w = image.shape[:2]
    inside = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
    cx = np.clip(xs, 0.0, w - 1.0)
    cy = np.clip(ys, 0.0, h - 1.0)
    x0 = np.clip(np.floor(cx).astype(np.intp), 0, w - 2)
    y0 = np.clip(np.floor(cy).astype(np.intp), 0, h - 2)
    fx = cx - x0
    fy = cy - y0
    if image.ndim == 3:
        fx = fx[..., np.newaxis]
        fy = fy[..., np.newaxis]
    v00 = image[y0, x0]
    v01 = image[y0, x0 + 1]
    v10 = image[y0 + 1, x0]
    v11 = image[y0 + 1, x0 + 1]
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    return (1.0 - fy) * top + fy * bot, inside


def warp_image(
    h: Homography, image, out_size: tuple[int, int] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Warp an image forward by `h` (inverse-mapping, bilinear).

    Returns `(warped, valid)` where `valid` marks output pixels whose source
    sample fell inside the input image; invalid pixels are filled with zero.
    `out_size` is (width, height) and defaults to the input size.
    """
    img = check_image(image)
    in_h, in_w = img.shape[:2]
    out_w, out_h = out_size if out_size is not None else (in_w, in_h)
    inv = h.inverse().matrix
    xs, ys = np.meshgrid(
        np.arange(out_w, dtype=float), np.arange(out_h, dtype=float)
    )
    denom = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    at_infinity = np.abs(denom) <= _EPS_W
    denom = np.where(at_infinity, 1.0, denom)
    sx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / denom
    sy = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / denom
    values, inside = bilinear_sample(img, sx, sy)
    valid = inside & ~at_infinity
    if img.ndim == 3:
        values = np.where(valid[..., np.newaxis], values, 0.0)
    else:
        values = np.where(valid, values, 0.0)
    return values, valid


def resize_bilinear(array: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Resize a 2-D array to (H, W) with corner-aligned bilinear sampling."""
    out_h, out_w = shape
    in_h, in_w = array.shape
    if (in_h, in_w) == (out_h, out_w):
        return array.copy()
    xs = np.linspace(0.0, in_w - 1.0, out_w)
    ys = np.linspace(0.0, in_h - 1.0, out_h)
    gx, gy = np.meshgrid(xs, ys)
    values, _ = bilinear_sample(array, gx, gy)
    return values


def downscale_image(image: np.ndarray, factor: int) -> np.ndarray:
    """Stride-`factor` decimation after a small anti-alias blur.

    Pixel centers stay aligned at full-resolution coordinates `factor * i`,
    which is the convention `Homography.rescale` assumes.
    """
    if factor == 1:
        return np.asarray(image, dtype=float)
    from scipy.ndimage import gaussian_filter

    img = np.asarray(image, dtype=float)
    sigma = factor / 2.0
    if img.ndim == 3:
        blurred = np.stack(
            [gaussian_filter(img[:, :, c], sigma) for c in range(img.shape[2])],
            axis=2,
        )
        return blurred[::factor, ::factor, :]
    return gaussian_filter(img, sigma)[::factor, ::factor]
