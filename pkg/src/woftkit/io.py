"""On-disk formats: images, homography lists, flow fields, correspondence
files, pose traces, and sequence directories.

All writers go through an atomic temp-file + rename so a crashed run never
leaves a half-written artifact, and all text formats are plain UTF-8 with
'.' decimals regardless of locale.
"""

from __future__ import annotations

import io as _stdio
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import LengthMismatchError
from .flow import Correspondences, FlowField
from .geometry import Homography
from .synth import SequenceRecord, default_template_mask

FLOW_MAGIC = b"WFLO"
_FRAME_PATTERN = "frame_{:05d}.png"


def atomic_write(path, data: bytes) -> None:
    """Write bytes to `path` via a temp file in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


# -- images -------------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """8-bit PNG/PGM/PPM to float64 in [0,1]; grayscale (H,W), color (H,W,3)."""
    with Image.open(path) as pil:
        if pil.mode in ("L", "I;16", "I"):
            pil = pil.convert("L")
            arr = np.asarray(pil, dtype=np.float64) / 255.0
        else:
            pil = pil.convert("RGB")
            arr = np.asarray(pil, dtype=np.float64) / 255.0
    return arr


def write_image(path, image: np.ndarray) -> None:
    """Save a [0,1] float image as 8-bit; format chosen by extension."""
    path = Path(path)
    eight = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255)
    eight = eight.astype(np.uint8)
    mode = "L" if eight.ndim == 2 else "RGB"
    pil = Image.fromarray(eight, mode=mode)
    fmt = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"unsupported image extension {path.suffix!r}")
    buf = _stdio.BytesIO()
    pil.save(buf, format=fmt)
    atomic_write(path, buf.getvalue())


def write_mask(path, mask: np.ndarray) -> None:
    write_image(path, np.asarray(mask, dtype=np.float64))


def read_mask(path) -> np.ndarray:
    return read_image(path) > 0.5


# -- homographies ---------------------------------------------------------------


def format_homography(h: Homography) -> str:
    return " ".join(f"{v:.17g}" for v in h.matrix.ravel())


def save_homographies(path, homographies) -> None:
    """One homography per line: nine whitespace-separated numbers, row-major."""
    lines = [format_homography(h) for h in homographies]
    atomic_write_text(path, "\n".join(lines) + "\n")


def parse_homography(fields) -> Homography:
    values = [float(v) for v in fields]
    if len(values) != 9:
        raise ValueError(f"expected 9 numbers for a homography, got {len(values)}")
    return Homography(np.array(values, dtype=np.float64).reshape(3, 3))


def load_homographies(path) -> list[Homography]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            out.append(parse_homography(line.split()))
    return out


# -- flow fields ----------------------------------------------------------------


def save_flow(path, flow: FlowField) -> None:
    """Binary flow: magic, little-endian int32 width/height, then row-major
    interleaved (u, v) float32 pairs; invalid pixels stored as NaN."""
    h, w = flow.shape
    u = flow.u.astype(np.float32).copy()
    v = flow.v.astype(np.float32).copy()
    u[~flow.valid] = np.nan
    v[~flow.valid] = np.nan
    data = np.empty((h, w, 2), dtype="<f4")
    data[..., 0] = u
    data[..., 1] = v
    payload = FLOW_MAGIC + struct.pack("<ii", w, h) + data.tobytes()
    atomic_write(path, payload)


def load_flow(path) -> FlowField:
    raw = Path(path).read_bytes()
    if raw[:4] != FLOW_MAGIC:
        raise ValueError(f"{path}: not a flow file (bad magic)")
    w, h = struct.unpack("<ii", raw[4:12])
    expected = 12 + 4 * 2 * w * h
    if len(raw) != expected:
        raise ValueError(f"{path}: truncated flow file ({len(raw)} of {expected} bytes)")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    u = data[..., 0].astype(np.float64)
    v = data[..., 1].astype(np.float64)
    valid = ~(np.isnan(u) | np.isnan(v))
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    return FlowField(u=u, v=v, valid=valid)


# -- correspondences -------------------------------------------------------------


def save_correspondences(path, corr: Correspondences) -> None:
    """Text rows `x y x' y'` plus a trailing weight column when present."""
    lines = []
    for i in range(len(corr)):
        row = (
            f"{corr.src[i, 0]:.17g} {corr.src[i, 1]:.17g} "
            f"{corr.dst[i, 0]:.17g} {corr.dst[i, 1]:.17g}"
        )
        if corr.weights is not None:
            row += f" {corr.weights[i]:.17g}"
        lines.append(row)
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_correspondences(path) -> Correspondences:
    src, dst, weights = [], [], []
    saw_weight = False
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) not in (4, 5):
                raise ValueError(
                    f"{path}:{ln}: expected 'x y x_prime y_prime [w]', got "
                    f"{len(fields)} fields"
                )
            vals = [float(v) for v in fields]
            src.append(vals[0:2])
            dst.append(vals[2:4])
            if len(vals) == 5:
                saw_weight = True
                weights.append(vals[4])
            else:
                weights.append(1.0)
    src_a = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst_a = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    w_a = np.asarray(weights, dtype=np.float64) if saw_weight else None
    return Correspondences(src=src_a, dst=dst_a, weights=w_a)


# -- pose traces ------------------------------------------------------------------


def save_pose_trace(path, rows) -> None:
    """Rows of (frame_index, status, inlier_ratio, Homography)."""
    lines = [
        f"{idx} {status} {ratio:.17g} {format_homography(pose)}"
        for idx, status, ratio, pose in rows
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_pose_trace(path) -> list[tuple[int, str, float, Homography]]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 12:
                raise ValueError(
                    f"{path}:{ln}: expected 'frame status ratio h11..h33' "
                    f"(12 fields), got {len(fields)}"
                )
            rows.append(
                (int(fields[0]), fields[1], float(fields[2]), parse_homography(fields[3:]))
            )
    return rows


# -- sequence directories -----------------------------------------------------------


def save_sequence(directory, record: SequenceRecord) -> None:
    """Directory of zero-padded PNG frames + gt.txt + mask.png."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(record.frames):
        write_image(directory / _FRAME_PATTERN.format(i), frame)
    save_homographies(directory / "gt.txt", record.gt_poses)
    write_mask(directory / "mask.png", record.template_mask)


def load_sequence(directory) -> SequenceRecord:
    directory = Path(directory)
    frame_paths = sorted(directory.glob("frame_*.png"))
    if not frame_paths:
        raise FileNotFoundError(f"{directory}: no frame_*.png files")
    frames = [read_image(p) for p in frame_paths]
    gt_path = directory / "gt.txt"
    if gt_path.exists():
        gt_poses = load_homographies(gt_path)
        if len(gt_poses) != len(frames):
            raise LengthMismatchError(
                f"{directory}: {len(frames)} frames but {len(gt_poses)} "
                "ground-truth lines"
            )
    else:
        # Real footage converted by hand may have no annotation; keep the
        # frames loadable and let consumers that need ground truth object.
        gt_poses = [None] * len(frames)
    mask_path = directory / "mask.png"
    if mask_path.exists():
        mask = read_mask(mask_path)
    else:
        h, w = frames[0].shape[:2]
        mask = default_template_mask((w, h))
    return SequenceRecord(frames=frames, gt_poses=gt_poses, template_mask=mask)
