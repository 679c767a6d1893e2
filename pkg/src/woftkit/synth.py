"""Synthetic planar tracking data: warped pairs and full sequences.

Everything here is deterministic given the seed, and every ground-truth
pose comes from an exact four-point solve, so evaluation error measured
downstream is attributable to the tracker rather than the generator.
"""

from __future__ import annotations

import io as _stdio
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .estimators import _solve_core
from .exceptions import GenerationFailedError, LengthMismatchError
from .geometry import Homography, resize_bilinear, warp_image
from .validation import as_rng, check_image

_MAX_RESAMPLES = 100
_VELOCITY_DAMPING = 0.92

# ITU-T T.81 Annex K luminance quantization table, the reference point for
# "quality" scaling in every libjpeg-derived codec.
_BASE_QUANT = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class PairSpec:
    """Degradation recipe for one generated pair (or sequence)."""

    corner_perturbation_frac: float = 0.20
    blur_max_len: float = 20.0
    degrade_quality: int = 25
    rng_seed: int = 0
    codec: str = "block"  # "block" = in-process transform quantization, "jpeg" = real codec

    def __post_init__(self):
        if not 0.0 <= self.corner_perturbation_frac < 0.5:
            raise ValueError(
                "corner_perturbation_frac must be in [0, 0.5), got "
                f"{self.corner_perturbation_frac}"
            )
        if self.blur_max_len < 0:
            raise ValueError("blur_max_len must be non-negative")
        if not 1 <= self.degrade_quality <= 100:
            raise ValueError("degrade_quality must be in [1, 100]")
        if self.codec not in ("block", "jpeg"):
            raise ValueError(f"unknown codec {self.codec!r}")


@dataclass
class SequenceRecord:
    """A generated sequence with exact per-frame ground truth.

    gt_poses[t] maps template (frame 0) pixels to frame t pixels;
    gt_poses[0] is the identity.
    """

    frames: list[np.ndarray]
    gt_poses: list[Homography]
    template_mask: np.ndarray
    labels: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if len(self.frames) != len(self.gt_poses):
            raise LengthMismatchError(
                f"{len(self.frames)} frames but {len(self.gt_poses)} poses"
            )
        if self.labels and len(self.labels) != len(self.frames):
            raise LengthMismatchError(
                f"{len(self.frames)} frames but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def size(self) -> tuple[int, int]:
        h, w = self.frames[0].shape[:2]
        return (w, h)


def _image_corners(size: tuple[int, int]) -> np.ndarray:
    w, h = size
    return np.array(
        [[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, h - 1.0], [0.0, h - 1.0]]
    )


def _is_convex(quad: np.ndarray) -> bool:
    # All consecutive-edge cross products must share a sign (and none vanish).
    signs = []
    for i in range(4):
        a = quad[(i + 1) % 4] - quad[i]
        b = quad[(i + 2) % 4] - quad[(i + 1) % 4]
        signs.append(a[0] * b[1] - a[1] * b[0])
    signs = np.asarray(signs)
    return bool(np.all(signs > 1e-9) or np.all(signs < -1e-9))


def exact_homography(src_quad: np.ndarray, dst_quad: np.ndarray) -> Homography:
    """Exact minimal solve mapping four points onto four points."""
    core = _solve_core(
        np.asarray(src_quad, dtype=np.float64),
        np.asarray(dst_quad, dtype=np.float64),
        weights=None,
    )
    return Homography(core.matrix)


def random_homography(size: tuple[int, int], frac: float, rng) -> Homography:
    """Random perspective warp from independent corner perturbations.

    Each image corner is displaced by a uniform random length up to
    frac * diagonal at a uniform random angle; non-convex or degenerate
    draws are rejected and resampled.
    """
    if frac < 0 or frac >= 0.5:
        raise ValueError(f"corner fraction must be in [0, 0.5), got {frac}")
    if frac == 0:
        return Homography.identity()
    rng = as_rng(rng)
    w, h = size
    corners = _image_corners(size)
    max_len = frac * float(np.hypot(w, h))
    for _ in range(_MAX_RESAMPLES):
        lengths = rng.uniform(0.0, max_len, size=4)
        angles = rng.uniform(0.0, 2.0 * np.pi, size=4)
        moved = corners + lengths[:, None] * np.stack(
            [np.cos(angles), np.sin(angles)], axis=1
        )
        if not _is_convex(moved):
            continue
        try:
            return exact_homography(corners, moved)
        except Exception:  # noqa: BLE001 - degenerate draw, resample
            continue
    raise GenerationFailedError(
        f"no valid corner perturbation in {_MAX_RESAMPLES} draws "
        f"(frac={frac}, size={size})"
    )


def motion_blur_kernel(length: float, angle: float) -> np.ndarray:
    """Linear motion blur kernel: a box profile splatted along a segment.

    length is the total extent in pixels; angle in radians. A length of
    one pixel or less collapses to a single center tap.
    """
    if length <= 1.0:
        return np.ones((1, 1))
    half = length / 2.0
    radius = int(np.ceil(half)) + 1
    n = 2 * radius + 1
    kernel = np.zeros((n, n))
    steps = max(2, int(np.ceil(length * 4)))
    ts = np.linspace(-half, half, steps)
    xs = radius + ts * np.cos(angle)
    ys = radius + ts * np.sin(angle)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    for dx, dy, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        np.add.at(kernel, (y0 + dy, x0 + dx), wgt)
    return kernel / kernel.sum()


def _convolve(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    if kernel.shape == (1, 1):
        return image
    if image.ndim == 2:
        return ndimage.convolve(image, kernel, mode="nearest")
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        out[..., c] = ndimage.convolve(image[..., c], kernel, mode="nearest")
    return out


def _degrade_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    ph = (-h) % 8
    pw = (-w) % 8
    x = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    x = x * 255.0 - 128.0
    hb, wb = x.shape[0] // 8, x.shape[1] // 8
    blocks = x.reshape(hb, 8, wb, 8)
    coef = sfft.dctn(blocks, axes=(1, 3), norm="ortho")
    t = table[None, :, None, :]
    coef = np.round(coef / t) * t
    x = sfft.idctn(coef, axes=(1, 3), norm="ortho").reshape(hb * 8, wb * 8)
    x = (x + 128.0) / 255.0
    return np.clip(x[:h, :w], 0.0, 1.0)


def _jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    from PIL import Image

    eight = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    pil = Image.fromarray(eight, mode="L" if image.ndim == 2 else "RGB")
    buf = _stdio.BytesIO()
    pil.save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    back = np.asarray(Image.open(buf), dtype=np.float64) / 255.0
    return back


def degrade(image: np.ndarray, quality: int, codec: str = "block") -> np.ndarray:
    """Blockwise 8x8 transform-quantization degradation.

    Approximates JPEG quality semantics: the Annex-K luminance table is
    scaled with the usual libjpeg rule, so quality 100 is near-lossless
    and lower settings quantize progressively more coarsely. Deterministic.
    Set codec="jpeg" to route through a real codec instead.
    """
    image = check_image(image)
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    if codec == "jpeg":
        return _jpeg_roundtrip(image, quality)
    if codec != "block":
        raise ValueError(f"unknown codec {codec!r}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.clip(np.floor((_BASE_QUANT * scale + 50.0) / 100.0), 1.0, 255.0)
    if image.ndim == 2:
        return _degrade_plane(image, table)
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        out[..., c] = _degrade_plane(image[..., c], table)
    return out


def make_pair(
    src: np.ndarray, spec: PairSpec | None = None
) -> tuple[np.ndarray, np.ndarray, Homography]:
    """Two random warps of one source image plus their relative pose.

    The returned homography maps pixels of the first image onto the
    second. The second image gets a random linear motion blur before
    both are degraded.
    """
    src = check_image(src)
    spec = spec or PairSpec()
    rng = as_rng(spec.rng_seed)
    h, w = src.shape[:2]
    h_a = random_homography((w, h), spec.corner_perturbation_frac, rng)
    h_b = random_homography((w, h), spec.corner_perturbation_frac, rng)
    image_a, _ = warp_image(h_a, src)
    image_b, _ = warp_image(h_b, src)
    length = rng.uniform(0.0, spec.blur_max_len)
    angle = rng.uniform(0.0, np.pi)
    image_b = _convolve(image_b, motion_blur_kernel(length, angle))
    image_a = degrade(image_a, spec.degrade_quality, spec.codec)
    image_b = degrade(image_b, spec.degrade_quality, spec.codec)
    return image_a, image_b, h_b.compose(h_a.inverse())


def default_template_mask(size: tuple[int, int], inset_frac: float = 0.10) -> np.ndarray:
    """Axis-aligned rectangular mask inset from the borders."""
    w, h = size
    mask = np.zeros((h, w), dtype=bool)
    ix = int(round(w * inset_frac))
    iy = int(round(h * inset_frac))
    mask[iy : h - iy, ix : w - ix] = True
    return mask


def make_sequence(
    src: np.ndarray,
    length: int = 501,
    motion_smoothness: float = 0.3,
    spec: PairSpec | None = None,
) -> SequenceRecord:
    """Render a sequence whose poses follow a smoothed corner random walk.

    Per-corner velocities get Gaussian increments of scale
    motion_smoothness (pixels per frame) and exponential damping, and the
    resulting corner displacements are clamped to the spec's perturbation
    budget. Each frame's motion blur is tied to the actual corner motion
    since the previous frame, so a zero-motion sequence is exactly
    repeated stills. Ground truth is recorded from the exact four-point
    solve used to render.
    """
    src = check_image(src)
    if length < 1:
        raise ValueError("length must be at least 1")
    spec = spec or PairSpec()
    rng = as_rng(spec.rng_seed)
    h, w = src.shape[:2]
    corners = _image_corners((w, h))
    max_disp = spec.corner_perturbation_frac * float(np.hypot(w, h))

    frames = [degrade(src, spec.degrade_quality, spec.codec)]
    gt_poses = [Homography.identity()]
    labels = [{"blur_len": 0.0, "perturbation": 0.0}]

    disp = np.zeros((4, 2))
    vel = np.zeros((4, 2))
    for _ in range(1, length):
        prev_disp = disp.copy()
        for attempt in range(_MAX_RESAMPLES + 1):
            if attempt == _MAX_RESAMPLES:
                raise GenerationFailedError(
                    "corner walk failed to produce a convex quad in "
                    f"{_MAX_RESAMPLES} attempts"
                )
            trial_vel = _VELOCITY_DAMPING * vel + rng.normal(
                0.0, motion_smoothness, size=(4, 2)
            )
            trial = prev_disp + trial_vel
            norms = np.linalg.norm(trial, axis=1)
            over = norms > max_disp
            if np.any(over):
                if max_disp == 0.0:
                    trial[over] = 0.0
                else:
                    trial[over] *= (max_disp / norms[over])[:, None]
                trial_vel = trial - prev_disp
            if _is_convex(corners + trial):
                vel = trial_vel
                disp = trial
                break
        if motion_smoothness == 0.0:
            pose = gt_poses[-1]
        else:
            pose = exact_homography(corners, corners + disp)
        frame, _ = warp_image(pose, src)
        step = float(np.mean(np.linalg.norm(disp - prev_disp, axis=1)))
        blur_len = min(step, spec.blur_max_len)
        if blur_len > 1.0:
            mean_motion = np.mean(disp - prev_disp, axis=0)
            angle = float(np.arctan2(mean_motion[1], mean_motion[0]))
            frame = _convolve(frame, motion_blur_kernel(blur_len, angle))
        frames.append(degrade(frame, spec.degrade_quality, spec.codec))
        gt_poses.append(pose)
        labels.append(
            {
                "blur_len": blur_len,
                "perturbation": float(np.mean(np.linalg.norm(disp, axis=1))),
            }
        )

    return SequenceRecord(
        frames=frames,
        gt_poses=gt_poses,
        template_mask=default_template_mask((w, h)),
        labels=labels,
    )


def _value_noise(size: tuple[int, int], cell: int, rng) -> np.ndarray:
    w, h = size
    gw = max(2, w // cell + 2)
    gh = max(2, h // cell + 2)
    grid = rng.uniform(0.0, 1.0, size=(gh, gw))
    return resize_bilinear(grid, (h, w))


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def procedural_texture(size: tuple[int, int] = (640, 480), seed: int = 0) -> np.ndarray:
    """Multi-octave value noise with soft geometric shapes.

    Produces a grayscale image with structure at several scales so that
    gradient-based matching has something to grip everywhere; shape edges
    are smoothed over a few pixels to keep the image band-limited enough
    for resampling round trips.
    """
    w, h = size
    rng = as_rng(seed)
    img = np.zeros((h, w))
    amplitude = 0.5
    cell = max(8, min(w, h) // 4)
    while cell >= 4:
        img += amplitude * _value_noise(size, cell, rng)
        amplitude *= 0.55
        cell //= 2
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    edge = 6.0
    n_shapes = 6
    for _ in range(n_shapes):
        cx = rng.uniform(0.1 * w, 0.9 * w)
        cy = rng.uniform(0.1 * h, 0.9 * h)
        tone = rng.uniform(-0.28, 0.28)
        if rng.uniform() < 0.5:
            r = rng.uniform(0.06, 0.16) * min(w, h)
            d = np.hypot(xs - cx, ys - cy) - r
        else:
            hw = rng.uniform(0.05, 0.14) * w
            hh = rng.uniform(0.05, 0.14) * h
            d = np.maximum(np.abs(xs - cx) - hw, np.abs(ys - cy) - hh)
        img += tone * _smoothstep((edge - d) / (2.0 * edge))
    img = ndimage.gaussian_filter(img, sigma=1.0, mode="nearest")
    lo, hi = np.percentile(img, [1.0, 99.0])
    if hi - lo < 1e-12:
        return np.full((h, w), 0.5)
    img = 0.08 + 0.84 * np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    return img
