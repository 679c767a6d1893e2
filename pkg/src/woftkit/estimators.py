"""Homography estimation from weighted point correspondences.

The non-homogeneous formulation fixes h33 = 1 and stacks two linear
constraint rows per correspondence (x, y) -> (x', y'):

    [0, 0, 0, -x, -y, -1,  y'x,  y'y] . h = -y'
    [x, y, 1,  0,  0,  0, -x'x, -x'y] . h =  x'

so estimation is an ordinary least-squares problem in the remaining eight
parameters, solved by QR factorization. Per-pair weights multiply both rows
of a pair (and the right-hand side) by sqrt(w), which is exactly the
weighted least-squares objective. All solvers condition the coordinates
with a Hartley-style similarity normalization by default and undo it on
output; it changes nothing mathematically but keeps the system well scaled.

The public estimators follow the fit/predict convention: `fit(X, y)` takes
source points X (N, 2) and destination points y (N, 2), an optional
`sample_weight`, and exposes the result as fitted attributes
(`homography_`, `residuals_`, `inlier_mask_`, `inlier_ratio_`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator

from .exceptions import (
    DegenerateConfigurationError,
    DegenerateResultError,
    InsufficientSupportError,
    NoValidHypothesisError,
    TooFewCorrespondencesError,
)
from .geometry import Homography
from .validation import as_rng, check_point_pairs, check_weights

WEIGHT_FLOOR = 1e-6  # weights at or below this do not count as support
MIN_PAIRS = 4
_RANK_TOL = 1e-10  # relative R-diagonal threshold for rank deficiency


def build_constraint_system(src, dst) -> tuple[np.ndarray, np.ndarray]:
    """Stack the two constraint rows per pair; returns (A, b) with A (2N, 8).

    Row order: for pair i, row 2i is the y'-row and row 2i+1 the x'-row.
    """
    src, dst = check_point_pairs(src, dst)
    n = src.shape[0]
    if n == 0:
        raise TooFewCorrespondencesError("no correspondences given")
    x, y = src[:, 0], src[:, 1]
    xp, yp = dst[:, 0], dst[:, 1]
    a = np.zeros((2 * n, 8))
    a[0::2, 3] = -x
    a[0::2, 4] = -y
    a[0::2, 5] = -1.0
    a[0::2, 6] = yp * x
    a[0::2, 7] = yp * y
    a[1::2, 0] = x
    a[1::2, 1] = y
    a[1::2, 2] = 1.0
    a[1::2, 6] = -xp * x
    a[1::2, 7] = -xp * y
    b = np.empty(2 * n)
    b[0::2] = -yp
    b[1::2] = xp
    return a, b


def hartley_normalization(
    points: np.ndarray, support: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Similarity placing the centroid at the origin with mean distance
    sqrt(2); returns (normalized_points, T) with T a 3x3 matrix.

    `support`, a boolean mask, restricts the statistics to a subset while the
    transform is still applied to every point. The transform depends on which
    pairs carry weight, never on the weight values, so the solution's weight
    gradients see a constant conditioning frame and zeroing a weight
    normalizes exactly like deleting the pair.
    """
    ref = points if support is None else points[support]
    if ref.shape[0] == 0:
        raise DegenerateConfigurationError("no points available for normalization")
    centroid = ref.mean(axis=0)
    dist = np.linalg.norm(ref - centroid, axis=1).mean()
    if dist < 1e-12:
        raise DegenerateConfigurationError("points are (effectively) coincident")
    s = np.sqrt(2.0) / dist
    t = np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )
    return (points - centroid) * s, t


@dataclass
class _CoreSolve:
    """Internal result of one weighted QR solve, kept for gradient reuse."""

    params: np.ndarray  # (8,) pixel-space parameters, h33 fixed at 1
    matrix: np.ndarray  # 3x3 canonical homography matrix
    a_norm: np.ndarray  # (2N, 8) normalized constraint rows, unweighted
    b_norm: np.ndarray  # (2N,)
    params_norm: np.ndarray  # (8,) solution of the normalized system
    r_factor: np.ndarray  # (8, 8) R from QR of sqrt(W) @ a_norm
    t_src: np.ndarray  # 3x3 normalizer applied to src
    t_dst: np.ndarray  # 3x3 normalizer applied to dst
    weights: np.ndarray  # (N,) effective pair weights


def _solve_core(
    src: np.ndarray,
    dst: np.ndarray,
    weights: np.ndarray | None,
    normalization: str = "hartley",
) -> _CoreSolve:
    src, dst = check_point_pairs(src, dst)
    n = src.shape[0]
    if n < MIN_PAIRS:
        raise TooFewCorrespondencesError(f"need at least {MIN_PAIRS} pairs, got {n}")
    if weights is not None:
        weights = check_weights(weights, n)
        if int(np.sum(weights > WEIGHT_FLOOR)) < MIN_PAIRS:
            raise InsufficientSupportError(
                f"fewer than {MIN_PAIRS} pairs carry weight above {WEIGHT_FLOOR}"
            )
        w = weights
    else:
        w = np.ones(n)

    if normalization == "hartley":
        support = w > WEIGHT_FLOOR
        src_n, t_src = hartley_normalization(src, support)
        dst_n, t_dst = hartley_normalization(dst, support)
    elif normalization == "none":
        src_n, dst_n = src, dst
        t_src = t_dst = np.eye(3)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")

    a, b = build_constraint_system(src_n, dst_n)
    sw = np.sqrt(np.repeat(w, 2))
    q, r = np.linalg.qr(sw[:, None] * a)
    diag = np.abs(np.diag(r))
    if diag.min() <= _RANK_TOL * max(diag.max(), 1e-300):
        raise DegenerateConfigurationError(
            "constraint system is rank deficient (degenerate configuration)"
        )
    params_norm = solve_triangular(r, q.T @ (sw * b), lower=False)

    h_norm = np.append(params_norm, 1.0).reshape(3, 3)
    try:
        h = Homography(np.linalg.inv(t_dst) @ h_norm @ t_src)
    except DegenerateResultError as exc:
        raise DegenerateConfigurationError(str(exc)) from exc
    return _CoreSolve(
        params=h.matrix.ravel()[:8].copy(),
        matrix=h.matrix,
        a_norm=a,
        b_norm=b,
        params_norm=params_norm,
        r_factor=r,
        t_src=t_src,
        t_dst=t_dst,
        weights=w,
    )


def transfer_errors(h: Homography, src, dst) -> np.ndarray:
    """Per-pair distances |h(src) - dst| in pixels.

    Pairs whose projection degenerates get an infinite error instead of an
    exception so hypothesis scoring stays total.
    """
    src, dst = check_point_pairs(src, dst)
    m = h.matrix
    denom = m[2, 0] * src[:, 0] + m[2, 1] * src[:, 1] + m[2, 2]
    bad = np.abs(denom) <= 1e-12
    denom = np.where(bad, 1.0, denom)
    px = (m[0, 0] * src[:, 0] + m[0, 1] * src[:, 1] + m[0, 2]) / denom
    py = (m[1, 0] * src[:, 0] + m[1, 1] * src[:, 1] + m[1, 2]) / denom
    err = np.hypot(px - dst[:, 0], py - dst[:, 1])
    err[bad] = np.inf
    return err


def inlier_stats(
    h: Homography, src, dst, threshold: float
) -> tuple[np.ndarray, float]:
    """Inlier mask (transfer error <= threshold, inclusive) and ratio."""
    err = transfer_errors(h, src, dst)
    mask = err <= threshold
    return mask, float(mask.mean())


def huber_multiplier(residuals: np.ndarray, delta: float) -> np.ndarray:
    """IRLS multiplier for the Huber loss: 1 inside delta, delta/|r| outside."""
    r = np.abs(np.asarray(residuals, dtype=float))
    with np.errstate(divide="ignore"):
        return np.where(r <= delta, 1.0, delta / np.maximum(r, 1e-300))


class _HomographyEstimatorBase(BaseEstimator):
    """Shared fitted-attribute bookkeeping and prediction."""

    def _finalize(self, core: _CoreSolve, src: np.ndarray, dst: np.ndarray) -> None:
        self.homography_ = Homography(core.matrix)
        self.residuals_ = transfer_errors(self.homography_, src, dst)
        self.inlier_mask_ = self.residuals_ <= self.inlier_threshold
        self.inlier_ratio_ = float(self.inlier_mask_.mean())
        self.n_correspondences_ = src.shape[0]

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "homography_"):
            raise RuntimeError("estimator is not fitted yet; call fit first")
        return self.homography_.transform(X)


class LeastSquaresHomography(_HomographyEstimatorBase):
    """Direct (optionally weighted) least-squares homography fit.

    With `sample_weight=None` this is the plain QR solve; with weights it is
    the sqrt(w)-scaled system, and pairs at or below the weight floor must
    still leave at least four supported pairs.
    """

    def __init__(self, normalization: str = "hartley", inlier_threshold: float = 5.0):
        self.normalization = normalization
        self.inlier_threshold = inlier_threshold

    def fit(self, X, y, sample_weight=None) -> "LeastSquaresHomography":
        src, dst = check_point_pairs(X, y)
        core = _solve_core(src, dst, sample_weight, self.normalization)
        self._finalize(core, src, dst)
        return self


class IrlsHuberHomography(_HomographyEstimatorBase):
    """Iteratively reweighted least squares with Huber multipliers.

    Each round refits with weights `sample_weight * huber(residual)`; the
    loop stops when the parameter vector moves less than `tol` or after
    `max_iter` rounds. Non-convergence is not an error: the last iterate is
    returned and `n_iter_` records the rounds taken.
    """

    def __init__(
        self,
        delta: float = 5.0,
        max_iter: int = 20,
        tol: float = 1e-9,
        normalization: str = "hartley",
        inlier_threshold: float = 5.0,
    ):
        self.delta = delta
        self.max_iter = max_iter
        self.tol = tol
        self.normalization = normalization
        self.inlier_threshold = inlier_threshold

    def fit(self, X, y, sample_weight=None) -> "IrlsHuberHomography":
        src, dst = check_point_pairs(X, y)
        base = (
            np.ones(src.shape[0])
            if sample_weight is None
            else check_weights(sample_weight, src.shape[0])
        )
        multiplier = np.ones(src.shape[0])
        core = None
        prev = None
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            core = _solve_core(src, dst, base * multiplier, self.normalization)
            if prev is not None and np.linalg.norm(core.params - prev) < self.tol:
                break
            prev = core.params
            residuals = transfer_errors(Homography(core.matrix), src, dst)
            multiplier = huber_multiplier(residuals, self.delta)
        self.n_iter_ = n_iter
        self._finalize(core, src, dst)
        return self


class RansacHomography(_HomographyEstimatorBase):
    """Random-sample consensus over exact four-point solves.

    Hypotheses come from minimal four-pair samples solved exactly; inliers
    are counted at `residual_threshold` (inclusive). Degenerate samples are
    skipped without consuming the hypothesis budget, up to a hard cap of
    ten times `max_hypotheses` draws. The standard confidence rule stops
    early once enough hypotheses were seen for the best inlier ratio. Ties
    on inlier count break toward the lower inlier-residual sum. The final
    model is an unweighted least-squares refit on the best consensus set.
    `sample_weight` is accepted for interface parity and ignored.
    """

    def __init__(
        self,
        residual_threshold: float = 5.0,
        max_hypotheses: int = 1000,
        confidence: float = 0.999,
        normalization: str = "hartley",
        inlier_threshold: float = 5.0,
        random_state: int = 0,
    ):
        self.residual_threshold = residual_threshold
        self.max_hypotheses = max_hypotheses
        self.confidence = confidence
        self.normalization = normalization
        self.inlier_threshold = inlier_threshold
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None) -> "RansacHomography":
        src, dst = check_point_pairs(X, y)
        n = src.shape[0]
        if n < MIN_PAIRS:
            raise TooFewCorrespondencesError(f"need at least {MIN_PAIRS} pairs, got {n}")
        rng = as_rng(self.random_state)

        best_mask: np.ndarray | None = None
        best_count = -1
        best_sum = np.inf
        draws = 0
        hypotheses = 0
        needed = self.max_hypotheses
        max_draws = 10 * self.max_hypotheses
        while hypotheses < min(self.max_hypotheses, needed) and draws < max_draws:
            draws += 1
            idx = rng.choice(n, size=MIN_PAIRS, replace=False)
            try:
                core = _solve_core(src[idx], dst[idx], None, self.normalization)
            except (DegenerateConfigurationError, DegenerateResultError):
                continue
            hypotheses += 1
            err = transfer_errors(Homography(core.matrix), src, dst)
            mask = err <= self.residual_threshold
            count = int(mask.sum())
            resid_sum = float(err[mask].sum())
            if count > best_count or (count == best_count and resid_sum < best_sum):
                best_count = count
                best_sum = resid_sum
                best_mask = mask
                ratio = count / n
                if ratio >= 1.0:
                    needed = hypotheses
                elif ratio > 0.0:
                    fail = 1.0 - ratio**MIN_PAIRS
                    if fail < 1.0:
                        needed = int(
                            np.ceil(np.log(1.0 - self.confidence) / np.log(fail))
                        )
        if best_mask is None:
            raise NoValidHypothesisError(
                "every sampled minimal set was degenerate"
            )
        self.n_hypotheses_ = hypotheses
        core = _solve_core(src[best_mask], dst[best_mask], None, self.normalization)
        self._finalize(core, src, dst)
        return self
