"""Sensitivities of the weighted homography fit to its per-pair weights.

The fitted parameters satisfy the weighted normal equations
(A^T W A) h = A^T W b at the solution, so implicit differentiation gives

    d h / d w_i = (A^T W A)^-1 sum_{j in rows(i)} a_j (b_j - a_j . h)

with one factorization shared by all N right-hand sides. The derivation
runs in the normalized coordinate frame the solver actually used, reusing
its QR factor, and is then chained through denormalization and the
h33 = 1 rescale. Holding the normalizer fixed is exact because it is
computed from the support set alone, never from the weight values, so its
derivative with respect to any weight above the support floor is zero.

The finite-difference counterparts double as the reference oracle for the
`gradcheck` harness; they re-run the solve pipeline and know nothing about
the implicit formula. They evaluate it in extended precision: differencing
a double-precision solve leaves rounding of order 1e-16 of the parameter
scale in the numerator, which a 1e-5 step inflates far past the 1e-4
tolerance on small jacobian entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .estimators import WEIGHT_FLOOR, _CoreSolve, _solve_core
from .exceptions import DegenerateConfigurationError
from .geometry import Homography
from .validation import as_rng, check_point_pairs, check_weights

FD_STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-6  # below this magnitude, compare absolutely
ABS_TOL = 1e-8


def _pair_gradient_rhs(core: _CoreSolve) -> np.ndarray:
    """(N, 8) right-hand sides: per-pair normalized-row residual moments."""
    r = core.b_norm - core.a_norm @ core.params_norm
    v = core.a_norm * r[:, None]
    return v[0::2] + v[1::2]


def _normal_solve(core: _CoreSolve, rhs: np.ndarray) -> np.ndarray:
    """Solve (A^T W A) x = rhs columns through the stored QR factor."""
    y = solve_triangular(core.r_factor, rhs, trans="T", lower=False)
    return solve_triangular(core.r_factor, y, lower=False)


def _denorm_jacobian(core: _CoreSolve) -> np.ndarray:
    """(8, 8) Jacobian of the pixel-space parameters w.r.t. the normalized
    ones, through H = (T_dst^-1 H_n T_src) / (.)_33."""
    t_dst_inv = np.linalg.inv(core.t_dst)
    h_n = np.append(core.params_norm, 1.0).reshape(3, 3)
    g = t_dst_inv @ h_n @ core.t_src
    g33 = g[2, 2]
    jac = np.empty((8, 8))
    for k in range(8):
        basis = np.zeros((3, 3))
        basis.flat[k] = 1.0
        gk = t_dst_inv @ basis @ core.t_src
        dh = (gk * g33 - g * gk[2, 2]) / (g33 * g33)
        jac[:, k] = dh.ravel()[:8]
    return jac


def homography_weight_jacobian(
    src, dst, weights, normalization: str = "hartley"
) -> np.ndarray:
    """d(parameters)/d(weights), shape (8, N), at the weighted solution."""
    src, dst = check_point_pairs(src, dst)
    weights = check_weights(weights, src.shape[0])
    core = _solve_core(src, dst, weights, normalization)
    grads_norm = _normal_solve(core, _pair_gradient_rhs(core).T)
    return _denorm_jacobian(core) @ grads_norm


def _loss_params_gradient(
    matrix: np.ndarray, gt_matrix: np.ndarray, eval_points: np.ndarray
) -> np.ndarray:
    """d(mean |p - H^-1 H_gt p|)/d(h), h the 8 free parameters of H."""
    h_inv = np.linalg.inv(matrix)
    b = h_inv @ gt_matrix
    pts_h = np.hstack([eval_points, np.ones((eval_points.shape[0], 1))])
    v = pts_h @ b.T
    q = v[:, :2] / v[:, 2:]
    e = q - eval_points
    norms = np.linalg.norm(e, axis=1)
    # zero subgradient exactly at a zero-residual point
    safe = np.maximum(norms, 1e-300)
    dirs = np.where(norms[:, None] > 1e-12, e / safe[:, None], 0.0)
    grad = np.empty(8)
    for k in range(8):
        basis = np.zeros((3, 3))
        basis.flat[k] = 1.0
        db = -h_inv @ basis @ b
        dv = pts_h @ db.T
        dq = (dv[:, :2] - q * dv[:, 2:]) / v[:, 2:]
        grad[k] = float(np.mean(np.sum(dirs * dq, axis=1)))
    return grad


def loss_weight_gradient(
    src,
    dst,
    weights,
    gt: Homography,
    eval_points,
    normalization: str = "hartley",
) -> np.ndarray:
    """d(reprojection loss)/d(weights), shape (N,).

    The loss is the mean distance between each evaluation point and its
    image under H^-1 H_gt, chained through the weighted solve.
    """
    src, dst = check_point_pairs(src, dst)
    weights = check_weights(weights, src.shape[0])
    pts = np.asarray(eval_points, dtype=float)
    core = _solve_core(src, dst, weights, normalization)
    d_loss_d_pix = _loss_params_gradient(core.matrix, gt.matrix, pts)
    d_loss_d_norm = _denorm_jacobian(core).T @ d_loss_d_pix
    adjoint = _normal_solve(core, d_loss_d_norm)
    return _pair_gradient_rhs(core) @ adjoint


_LD = np.longdouble


def _ld_hartley(points: np.ndarray, support: np.ndarray | None):
    """Extended-precision twin of the solver's normalization step."""
    ref = points if support is None else points[support]
    centroid = ref.mean(axis=0)
    dist = np.sqrt(((ref - centroid) ** 2).sum(axis=1)).mean()
    if dist < 1e-12:
        raise DegenerateConfigurationError("points are (effectively) coincident")
    s = np.sqrt(_LD(2.0)) / dist
    t = np.zeros((3, 3), dtype=_LD)
    t[0, 0] = s
    t[1, 1] = s
    t[0, 2] = -s * centroid[0]
    t[1, 2] = -s * centroid[1]
    t[2, 2] = 1.0
    return (points - centroid) * s, t


def _ld_rows(src: np.ndarray, dst: np.ndarray):
    n = src.shape[0]
    x, y = src[:, 0], src[:, 1]
    xp, yp = dst[:, 0], dst[:, 1]
    a = np.zeros((2 * n, 8), dtype=_LD)
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
    b = np.empty(2 * n, dtype=_LD)
    b[0::2] = -yp
    b[1::2] = xp
    return a, b


def _ld_cholesky_solve(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # LAPACK has no long-double kernels, so factor the 8x8 by hand.
    n = m.shape[0]
    low = np.zeros_like(m)
    for i in range(n):
        d = m[i, i] - low[i, :i] @ low[i, :i]
        if d <= 0.0:
            raise DegenerateConfigurationError("normal matrix is not positive definite")
        low[i, i] = np.sqrt(d)
        low[i + 1 :, i] = (m[i + 1 :, i] - low[i + 1 :, :i] @ low[i, :i]) / low[i, i]
    y = np.zeros_like(rhs)
    for i in range(n):
        y[i] = (rhs[i] - low[i, :i] @ y[:i]) / low[i, i]
    x = np.zeros_like(rhs)
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - low[i + 1 :, i] @ x[i + 1 :]) / low[i, i]
    return x


def _ld_inv3(m: np.ndarray) -> np.ndarray:
    adj = np.empty((3, 3), dtype=_LD)
    adj[0, 0] = m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1]
    adj[0, 1] = m[0, 2] * m[2, 1] - m[0, 1] * m[2, 2]
    adj[0, 2] = m[0, 1] * m[1, 2] - m[0, 2] * m[1, 1]
    adj[1, 0] = m[1, 2] * m[2, 0] - m[1, 0] * m[2, 2]
    adj[1, 1] = m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
    adj[1, 2] = m[0, 2] * m[1, 0] - m[0, 0] * m[1, 2]
    adj[2, 0] = m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]
    adj[2, 1] = m[0, 1] * m[2, 0] - m[0, 0] * m[2, 1]
    adj[2, 2] = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    det = m[0, 0] * adj[0, 0] + m[0, 1] * adj[1, 0] + m[0, 2] * adj[2, 0]
    if det == 0.0:
        raise DegenerateConfigurationError("matrix is singular")
    return adj / det


def _ld_solve_params(
    src: np.ndarray,
    dst: np.ndarray,
    weights: np.ndarray,
    normalization: str = "hartley",
) -> np.ndarray:
    """Weighted solve via the normal equations, entirely in long double."""
    src = np.asarray(src, dtype=_LD)
    dst = np.asarray(dst, dtype=_LD)
    w = np.asarray(weights, dtype=_LD)
    if normalization == "hartley":
        support = w > WEIGHT_FLOOR
        src_n, t_src = _ld_hartley(src, support)
        dst_n, t_dst = _ld_hartley(dst, support)
    else:
        src_n, dst_n = src, dst
        t_src = t_dst = np.eye(3, dtype=_LD)
    a, b = _ld_rows(src_n, dst_n)
    w2 = np.repeat(w, 2)
    m = a.T @ (a * w2[:, None])
    params_n = _ld_cholesky_solve(m, a.T @ (w2 * b))
    h_n = np.concatenate([params_n, np.ones(1, dtype=_LD)]).reshape(3, 3)
    g = _ld_inv3(t_dst) @ h_n @ t_src
    return (g / g[2, 2]).ravel()[:8]


def _ld_loss(
    src: np.ndarray,
    dst: np.ndarray,
    weights: np.ndarray,
    gt_matrix: np.ndarray,
    eval_points: np.ndarray,
    normalization: str = "hartley",
):
    params = _ld_solve_params(src, dst, weights, normalization)
    h = np.concatenate([params, np.ones(1, dtype=_LD)]).reshape(3, 3)
    comp = _ld_inv3(h) @ np.asarray(gt_matrix, dtype=_LD)
    pts = np.asarray(eval_points, dtype=_LD)
    ph = np.hstack([pts, np.ones((pts.shape[0], 1), dtype=_LD)])
    v = ph @ comp.T
    q = v[:, :2] / v[:, 2:]
    return np.sqrt(((q - pts) ** 2).sum(axis=1)).mean()


def _fd_direction(w: np.ndarray, i: int, func, step: float):
    """Second-order difference of func along weight i, staying inside [0, 1].

    Central when both steps fit; otherwise the three-point one-sided formula
    of the same order, so boundary weights (0 or 1) are handled exactly."""
    saved = w[i]

    def at(value: float):
        w[i] = value
        out = func(w)
        w[i] = saved
        return out

    if saved + step <= 1.0 and saved - step >= 0.0:
        return (at(saved + step) - at(saved - step)) / (2.0 * step)
    if saved + 2 * step <= 1.0:
        return (
            -3.0 * at(saved) + 4.0 * at(saved + step) - at(saved + 2 * step)
        ) / (2.0 * step)
    return (
        3.0 * at(saved) - 4.0 * at(saved - step) + at(saved - 2 * step)
    ) / (2.0 * step)


def finite_difference_weight_jacobian(
    src, dst, weights, step: float = FD_STEP, normalization: str = "hartley"
) -> np.ndarray:
    """Finite differences of the solve pipeline, column i = dh/dw_i.

    Runs an extended-precision replica of the solve so the difference
    quotient is not drowned by double rounding; see the module docstring.
    """
    src, dst = check_point_pairs(src, dst)
    w = check_weights(weights, src.shape[0]).copy()
    # validate support and degeneracy exactly as the production path would
    _solve_core(src, dst, w, normalization)

    def solve_at(wv: np.ndarray) -> np.ndarray:
        return _ld_solve_params(src, dst, wv, normalization)

    jac = np.empty((8, w.size))
    for i in range(w.size):
        jac[:, i] = _fd_direction(w, i, solve_at, step)
    return jac


def finite_difference_loss_gradient(
    src,
    dst,
    weights,
    gt: Homography,
    eval_points,
    step: float = FD_STEP,
    normalization: str = "hartley",
) -> np.ndarray:
    src, dst = check_point_pairs(src, dst)
    w = check_weights(weights, src.shape[0]).copy()
    pts = np.asarray(eval_points, dtype=float)
    _solve_core(src, dst, w, normalization)

    def loss_at(wv: np.ndarray):
        return _ld_loss(src, dst, wv, gt.matrix, pts, normalization)

    grad = np.empty(w.size)
    for i in range(w.size):
        grad[i] = _fd_direction(w, i, loss_at, step)
    return grad


def max_relative_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    """Elementwise relative disagreement, with an absolute-tolerance floor
    for entries whose magnitude is below ABS_FLOOR on both sides."""
    a = np.asarray(analytic, dtype=float)
    b = np.asarray(reference, dtype=float)
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    err = np.zeros_like(diff)
    big = scale >= ABS_FLOOR
    err[big] = diff[big] / scale[big]
    small_bad = ~big & (diff > ABS_TOL)
    err[small_bad] = 1.0
    return float(err.max()) if err.size else 0.0


@dataclass
class GradientCheckItem:
    """Outcome for one instance of the gradient check suite."""

    index: int
    n_pairs: int
    jacobian_error: float | None = None
    loss_error: float | None = None
    skipped: str | None = None

    @property
    def worst(self) -> float:
        vals = [v for v in (self.jacobian_error, self.loss_error) if v is not None]
        return max(vals) if vals else 0.0


@dataclass
class GradientCheckReport:
    items: list[GradientCheckItem] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        checked = [i.worst for i in self.items if i.skipped is None]
        return max(checked) if checked else 0.0

    @property
    def n_skipped(self) -> int:
        return sum(i.skipped is not None for i in self.items)

    def passed(self, tol: float = REL_TOL) -> bool:
        return self.max_error <= tol


def random_check_instance(seed: int, size: tuple[int, int] = (640, 480)):
    """A random weighted-fit instance: (src, dst, weights, gt, eval_points).

    Weights stay inside (step, 1 - step) so central differences never leave
    the valid range; noise keeps evaluation points off the loss kink.
    """
    from .synth import random_homography  # local import to avoid a cycle

    rng = as_rng(seed)
    w, h = size
    gt = random_homography((w, h), 0.15, rng)
    n = int(rng.integers(8, 201))
    src = np.column_stack(
        [rng.uniform(0, w - 1, size=n), rng.uniform(0, h - 1, size=n)]
    )
    dst = gt.transform(src)
    dst += rng.normal(scale=rng.uniform(0.2, 2.0), size=dst.shape)
    n_out = int(np.floor(rng.uniform(0.0, 0.4) * n))
    if n_out:
        idx = rng.choice(n, size=n_out, replace=False)
        dst[idx] += rng.uniform(-80.0, 80.0, size=(n_out, 2))
    weights = rng.uniform(0.05, 0.95, size=n)
    eval_points = np.column_stack(
        [rng.uniform(0, w - 1, size=4), rng.uniform(0, h - 1, size=4)]
    )
    return src, dst, weights, gt, eval_points


def run_gradient_check(
    n_instances: int = 100,
    seed: int = 0,
    step: float = FD_STEP,
    instances=None,
) -> GradientCheckReport:
    """Compare analytic and finite-difference gradients instance by instance.

    `instances` may supply explicit (src, dst, weights, gt, eval_points)
    tuples (gt/eval_points optional as None to skip the loss check);
    degenerate instances are reported as skipped, not raised.
    """
    from .validation import derived_seed

    report = GradientCheckReport()
    if instances is None:
        instances = (
            random_check_instance(derived_seed(seed, k)) for k in range(n_instances)
        )
    for k, inst in enumerate(instances):
        src, dst, weights, gt, eval_points = inst
        item = GradientCheckItem(index=k, n_pairs=np.asarray(src).shape[0])
        try:
            analytic = homography_weight_jacobian(src, dst, weights)
            fd = finite_difference_weight_jacobian(src, dst, weights, step=step)
            item.jacobian_error = max_relative_error(analytic, fd)
            if gt is not None and eval_points is not None:
                g_a = loss_weight_gradient(src, dst, weights, gt, eval_points)
                g_f = finite_difference_loss_gradient(
                    src, dst, weights, gt, eval_points, step=step
                )
                item.loss_error = max_relative_error(g_a, g_f)
        except DegenerateConfigurationError as exc:
            item.skipped = f"degenerate configuration: {exc}"
        except Exception as exc:  # noqa: BLE001 - harness must stay total
            item.skipped = f"{type(exc).__name__}: {exc}"
        report.items.append(item)
    return report
