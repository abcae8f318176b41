"""Linear quantile regression over a grid of quantile levels.

The workhorse is a primal-dual interior point method on the dual of the
pinball-loss linear program, run for every quantile level of a grid at once
(the Newton systems are only ``p x p``, so the whole grid is handled with
batched numpy linear algebra).  Each interior solution is then snapped to an
exact basic solution: the ``p`` observations with the smallest residuals are
interpolated and the vertex is kept if its objective is no worse.

Quantile crossing is repaired by monotone rearrangement (sorting predicted
curves in tau), and processes are inverted into conditional CDFs with a
generalized-inverse convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .exceptions import NonConvergence, NonConvergenceWarning, RankDeficient

RANK_TOL = 1e-10
TIE_TOL = 1e-10
DEFAULT_TAU_GRID = np.round(np.linspace(0.01, 0.99, 99), 10)


def default_grid(step: float = 0.01) -> np.ndarray:
    """Equally spaced grid ``step, 2*step, ..., 1 - step``."""
    m = int(round(1.0 / step))
    return np.round(np.arange(1, m) * step, 12)


@dataclass(frozen=True)
class DesignMatrix:
    """Regression design with a leading column of ones."""

    rows: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError("design must be two-dimensional")
        n, p = rows.shape
        if n < p:
            raise ValueError(f"need n >= p, got n={n}, p={p}")
        if not np.all(rows[:, 0] == 1.0):
            raise ValueError("first design column must be all ones")
        if np.any(np.all(rows == 0.0, axis=0)):
            raise ValueError("design has an all-zero column")
        names = tuple(self.column_names) or ("const",) + tuple(f"x{j}" for j in range(1, p))
        if len(names) != p:
            raise ValueError("column_names length does not match design width")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "column_names", names)

    @classmethod
    def from_covariates(cls, covariates, names: Sequence[str] = ()):
        """Prepend an intercept to an ``n x k`` covariate matrix."""
        cov = np.asarray(covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        rows = np.column_stack([np.ones(cov.shape[0]), cov])
        if names:
            names = ("const",) + tuple(names)
        return cls(rows, names)

    @property
    def shape(self):
        return self.rows.shape

    def __array__(self, dtype=None, copy=None):
        return self.rows if dtype is None else self.rows.astype(dtype)


@dataclass(frozen=True)
class PinballFit:
    coefficients: np.ndarray
    tau: float
    objective: float
    converged: bool = True
    iterations: int = 0


@dataclass(frozen=True)
class QuantileProcess:
    """Coefficient curves ``beta(tau)`` on a grid of quantile levels.

    ``coefficients`` has one row per grid level.  When ``rearranged`` is set,
    predicted curves are sorted in tau before any evaluation.
    """

    tau_grid: np.ndarray
    coefficients: np.ndarray
    rearranged: bool = False
    column_names: tuple = ()
    objectives: Optional[np.ndarray] = field(default=None, repr=False)
    converged: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        grid = np.asarray(self.tau_grid, dtype=float)
        coef = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
            raise ValueError("tau_grid must be strictly increasing")
        if grid[0] <= 0 or grid[-1] >= 1:
            raise ValueError("tau_grid must lie inside (0, 1)")
        if coef.shape[0] != grid.size:
            raise ValueError("one coefficient row per grid level required")
        object.__setattr__(self, "tau_grid", grid)
        object.__setattr__(self, "coefficients", coef)

    @property
    def n_params(self) -> int:
        return self.coefficients.shape[1]

    def raw_curves(self, X) -> np.ndarray:
        """Unsorted predictions ``x'beta(tau)``, shape ``(m, K)``."""
        return _rows(X) @ self.coefficients.T

    def curves(self, X) -> np.ndarray:
        """Predicted quantile curves, sorted in tau when rearranged."""
        q = self.raw_curves(X)
        if self.rearranged:
            q = np.sort(q, axis=1)
        return q


# ---------------------------------------------------------------------------
# helpers


def _rows(X) -> np.ndarray:
    if isinstance(X, DesignMatrix):
        return X.rows
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


def pinball_loss(u, tau) -> np.ndarray:
    """Check loss ``u * (tau - 1{u < 0})`` elementwise."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def mean_pinball(X, y, beta, tau) -> float:
    return float(np.mean(pinball_loss(np.asarray(y) - _rows(X) @ beta, tau)))


def check_rank(X) -> None:
    """Raise RankDeficient when ``s_min < 1e-10 * s_max``."""
    s = np.linalg.svd(_rows(X), compute_uv=False)
    if s.size == 0 or s[-1] < RANK_TOL * s[0]:
        raise RankDeficient(
            f"design is rank deficient (singular values {s[0]:.3g} .. {s[-1]:.3g})"
        )


def _validate(X, y):
    X = _rows(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise ValueError("X and y have different numbers of rows")
    if X.shape[0] < X.shape[1]:
        raise ValueError("need at least as many rows as columns")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise ValueError("non-finite values in regression data")
    check_rank(X)
    return X, y


# ---------------------------------------------------------------------------
# interior point solver


def _step_length(v, dv):
    """Largest alpha in (0, 1] keeping ``v + alpha * dv`` nonnegative, per row."""
    # v > 0, so max(-dv / v) is the binding ratio; rows with none give 1
    worst = np.max(-dv / v, axis=1)
    return 1.0 / np.maximum(worst, 1.0)


def _interior_point(X, y, taus, tol=1e-9, max_iter=100):
    """Solve all pinball problems in ``taus`` on pre-scaled data.

    Dual LP: max y'a  s.t. X'a = (1 - tau) X'1, 0 <= a <= 1, written as
    min c'x with c = -y.  The equality multiplier is ``-beta``.
    """
    n, p = X.shape
    K = taus.size
    c = -y
    x = np.repeat((1.0 - taus)[:, None], n, axis=1)
    s = 1.0 - x
    b = (1.0 - taus)[:, None] * X.sum(axis=0)[None, :]

    lam0 = np.linalg.lstsq(X, c, rcond=None)[0]
    r = c - X @ lam0
    delta = max(0.1 * np.mean(np.abs(r)), 1e-2)
    lam = np.repeat(lam0[None, :], K, axis=0)
    z = np.repeat((np.maximum(r, 0.0) + delta)[None, :], K, axis=0)
    w = np.repeat((np.maximum(-r, 0.0) + delta)[None, :], K, axis=0)

    # pairwise column products so X' diag(d) X is one matrix product
    XX = (X[:, :, None] * X[:, None, :]).reshape(n, p * p)
    active = np.arange(K)
    converged = np.zeros(K, dtype=bool)
    iterations = np.full(K, max_iter)
    lam_out = lam.copy()
    # state arrays only hold the levels still being iterated
    xa, sa, za, wa, la, ba = x, s, z, w, lam, b
    for it in range(max_iter):
        gap = (xa * za).sum(1) + (sa * wa).sum(1)
        pobj = xa @ c
        rp = ba - xa @ X
        rd = c[None, :] - la @ X.T - za + wa
        done = (gap <= tol * (1.0 + np.abs(pobj))) & (
            np.abs(rp).max(1) <= 1e-8 * (1.0 + np.abs(ba).max(1))
        ) & (np.abs(rd).max(1) <= 1e-8 * (1.0 + np.abs(c).max()))
        if np.any(done):
            converged[active[done]] = True
            iterations[active[done]] = it
            lam_out[active[done]] = la[done]
            keep = ~done
            active = active[keep]
            if active.size == 0:
                break
            xa, sa, za, wa, la, ba = xa[keep], sa[keep], za[keep], wa[keep], la[keep], ba[keep]
            gap, rp, rd = gap[keep], rp[keep], rd[keep]

        mu = gap / (2.0 * n)
        d = 1.0 / (za / xa + wa / sa)
        M = (d @ XX).reshape(-1, p, p)
        try:
            L = np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            M = M + 1e-12 * np.trace(M, axis1=1, axis2=2)[:, None, None] * np.eye(p)
            L = np.linalg.cholesky(M)

        def direction(rxz, rsw):
            rhat = rd - rxz / xa + rsw / sa
            rhs = rp + (d * rhat) @ X
            tmp = np.linalg.solve(L, rhs[..., None])
            dlam = np.linalg.solve(np.swapaxes(L, 1, 2), tmp)[..., 0]
            dx = d * (dlam @ X.T - rhat)
            dz = (rxz - za * dx) / xa
            dw = (rsw + wa * dx) / sa
            return dx, dlam, dz, dw

        # predictor
        dx, dlam, dz, dw = direction(-xa * za, -sa * wa)
        ap = np.minimum(_step_length(xa, dx), _step_length(sa, -dx))
        ad = np.minimum(_step_length(za, dz), _step_length(wa, dw))
        mu_aff = (
            ((xa + ap[:, None] * dx) * (za + ad[:, None] * dz)).sum(1)
            + ((sa - ap[:, None] * dx) * (wa + ad[:, None] * dw)).sum(1)
        ) / (2.0 * n)
        sigma = np.clip((mu_aff / mu) ** 3, 0.0, 1.0)[:, None]
        # corrector
        smu = sigma * mu[:, None]
        dx, dlam, dz, dw = direction(smu - xa * za - dx * dz, smu - sa * wa + dx * dw)
        ap = 0.99995 * np.minimum(_step_length(xa, dx), _step_length(sa, -dx))
        ad = 0.99995 * np.minimum(_step_length(za, dz), _step_length(wa, dw))
        ap, ad = np.minimum(ap, 1.0)[:, None], np.minimum(ad, 1.0)[:, None]

        xa = xa + ap * dx
        sa = sa - ap * dx
        la = la + ad * dlam
        za = za + ad * dz
        wa = wa + ad * dw
    else:
        lam_out[active] = la
    return -lam_out, converged, iterations


def _independent_rows(X, order, p):
    basis = np.zeros((0, X.shape[1]))
    chosen = []
    for i in order:
        v = X[i] - basis.T @ (basis @ X[i])
        nv = np.linalg.norm(v)
        if nv > 1e-9 * max(np.linalg.norm(X[i]), 1e-300):
            basis = np.vstack([basis, v / nv])
            chosen.append(i)
            if len(chosen) == p:
                return chosen
    return None


def _polish(X, y, taus, beta):
    """Replace interior solutions by the interpolating vertex when no worse."""
    n, p = X.shape
    K = taus.size
    resid = y[None, :] - beta @ X.T
    obj_ip = pinball_loss(resid, taus[:, None]).mean(1)
    if p == n:
        idx = np.repeat(np.arange(n)[None, :], K, axis=0)
    else:
        idx = np.argpartition(np.abs(resid), p - 1, axis=1)[:, :p]
    Xh = X[idx]  # (K, p, p)
    yh = y[idx]
    out = beta.copy()
    ok = np.abs(np.linalg.det(Xh)) > 1e-12 * np.prod(np.linalg.norm(Xh, axis=2), axis=1)
    if np.any(ok):
        bv = np.linalg.solve(Xh[ok], yh[ok][..., None])[..., 0]
        obj_v = pinball_loss(y[None, :] - bv @ X.T, taus[ok][:, None]).mean(1)
        better = obj_v <= obj_ip[ok] + 1e-13 * (1.0 + np.abs(obj_ip[ok]))
        rows = np.flatnonzero(ok)[better]
        out[rows] = bv[better]
    for k in np.flatnonzero(~ok):
        # smallest residuals give a singular basis (e.g. repeated rows in a
        # bootstrap draw): take rows greedily, keeping linearly independent ones
        chosen = _independent_rows(X, np.argsort(np.abs(resid[k])), p)
        if chosen is None:
            continue
        bv = np.linalg.solve(X[chosen], y[chosen])
        if mean_pinball(X, y, bv, taus[k]) <= obj_ip[k] + 1e-13 * (1.0 + abs(obj_ip[k])):
            out[k] = bv
    return out


def _solve_grid(X, y, taus, tol=1e-9, max_iter=100, polish=True):
    """Fit every level in ``taus``; returns (beta, objectives, converged, iters)."""
    col_scale = np.abs(X).max(axis=0)
    col_scale[col_scale == 0] = 1.0
    Xs = X / col_scale
    y_scale = np.std(y)
    if not np.isfinite(y_scale) or y_scale <= 0:
        y_scale = max(np.abs(y).max(), 1.0)
    ys = y / y_scale
    beta_s, converged, iters = _interior_point(Xs, ys, taus, tol=tol, max_iter=max_iter)
    if polish:
        beta_s = _polish(Xs, ys, taus, beta_s)
    beta = beta_s * y_scale / col_scale[None, :]
    if polish:
        beta = _polish(X, y, taus, beta)
    obj = pinball_loss(y[None, :] - beta @ X.T, taus[:, None]).mean(1)
    return beta, obj, converged, iters


def _solve_highs(X, y, tau):
    from scipy.optimize import linprog

    n, p = X.shape
    cost = np.concatenate([np.zeros(p), np.full(n, tau), np.full(n, 1.0 - tau)])
    A_eq = np.hstack([X, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(cost, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs")
    return res.x[:p], res.status == 0, res.nit


# ---------------------------------------------------------------------------
# public API


def fit_quantile(X, y, tau: float, method: str = "interior-point", strict: bool = False,
                 max_iter: int = 100) -> PinballFit:
    """Minimize the mean pinball loss of ``y - X beta`` at level ``tau``.

    ``method`` is ``"interior-point"`` (default) or ``"highs"`` (scipy's
    simplex/IPM LP solver on the primal).  On hitting the iteration cap the
    best iterate is returned with ``converged=False`` and a warning, or
    ``NonConvergence`` is raised when ``strict``.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    X, y = _validate(X, y)
    if method == "highs":
        beta, ok, nit = _solve_highs(X, y, tau)
        beta = _polish(X, y, np.array([tau]), beta[None, :])[0]
        ok_arr, iters = np.array([ok]), np.array([nit])
        obj = mean_pinball(X, y, beta, tau)
    elif method == "interior-point":
        B, objs, ok_arr, iters = _solve_grid(X, y, np.array([float(tau)]), max_iter=max_iter)
        beta, obj = B[0], float(objs[0])
    else:
        raise ValueError(f"unknown method {method!r}")
    fit = PinballFit(beta, float(tau), float(obj), bool(ok_arr[0]), int(iters[0]))
    if not fit.converged:
        msg = f"quantile regression did not converge at tau={tau}"
        if strict:
            raise NonConvergence(msg, fit)
        warnings.warn(msg, NonConvergenceWarning, stacklevel=2)
    return fit


def fit_process(X, y, tau_grid=None, strict: bool = False, max_iter: int = 100,
                weights=None) -> QuantileProcess:
    """Fit the quantile regression at every level of ``tau_grid``.

    ``weights`` are optional positive frequency weights; since the check
    loss is positively homogeneous the weighted fit is the plain fit on
    rows scaled by their weight.  Objectives are weighted means.
    """
    grid = DEFAULT_TAU_GRID if tau_grid is None else np.asarray(tau_grid, dtype=float)
    names = X.column_names if isinstance(X, DesignMatrix) else ()
    X, y = _validate(X, y)
    if weights is None:
        beta, obj, ok, _ = _solve_grid(X, y, grid, max_iter=max_iter)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.size != y.size or not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive, finite and one per row")
        beta, obj, ok, _ = _solve_grid(X * w[:, None], y * w, grid, max_iter=max_iter)
        obj = obj * y.size / w.sum()
    if not np.all(ok):
        bad = ", ".join(f"{t:g}" for t in grid[~ok])
        msg = f"quantile regression did not converge at tau = {bad}"
        if strict:
            raise NonConvergence(msg)
        warnings.warn(msg, NonConvergenceWarning, stacklevel=2)
    return QuantileProcess(grid, beta, False, names, obj, ok)


def rearrange(proc: QuantileProcess, anchors=None) -> QuantileProcess:
    """Mark a process for monotone rearrangement.

    Predictions from the returned process are sorted in tau for every
    covariate vector, so the curves at ``anchors`` (and anywhere else) are
    nondecreasing.  Sorting never increases the summed pinball loss of any
    observation against the curve.  ``anchors`` is accepted for the call
    signature; sorting happens per covariate vector at evaluation time.
    """
    return replace(proc, rearranged=True)


def _require_rearranged(proc):
    if not proc.rearranged:
        raise ValueError("process must be rearranged before evaluation")


def interpolate_curves(curves: np.ndarray, grid: np.ndarray, tau) -> np.ndarray:
    """Linear interpolation in tau of row curves; ``tau`` scalar or per row."""
    tau = np.clip(np.asarray(tau, dtype=float), grid[0], grid[-1])
    m = curves.shape[0]
    tau_b = np.broadcast_to(tau, (m,)) if tau.ndim == 0 else tau
    if grid.size == 1:
        return curves[:, 0].copy()
    k = np.clip(np.searchsorted(grid, tau_b, side="right") - 1, 0, grid.size - 2)
    wgt = (tau_b - grid[k]) / (grid[k + 1] - grid[k])
    rows = np.arange(m)
    return (1.0 - wgt) * curves[rows, k] + wgt * curves[rows, k + 1]


def predict_quantile(proc: QuantileProcess, x, tau):
    """Conditional quantile at ``tau`` (clamped to the grid range).

    ``x`` may be one covariate vector or a matrix of rows; ``tau`` a scalar
    or one level per row.
    """
    _require_rearranged(proc)
    single = np.ndim(x) == 1 and not isinstance(x, DesignMatrix)
    q = interpolate_curves(proc.curves(x), proc.tau_grid, tau)
    return float(q[0]) if single and np.ndim(tau) == 0 else q


def invert_curves(curves: np.ndarray, grid: np.ndarray, y, tails: str = "clamp") -> np.ndarray:
    """Generalized inverse of sorted row curves evaluated at ``y``.

    ``y`` is either one value per row (shape ``(m,)``) or a matrix
    ``(m, L)``.  Returns, for each row, the largest grid level whose quantile
    is ``<= y``, linearly interpolated up to the next level.  Below the first
    quantile the result is ``grid[0]`` (``tails="clamp"``) or 0
    (``tails="cdf"``); at or above the last it is ``grid[-1]`` or 1.

    Values within ``TIE_TOL`` (relative to the curves' magnitude) of a
    quantile count as equal to it, so rounding noise cannot move a value
    off a flat stretch of the curve and change its level by a grid step.
    """
    if tails not in ("clamp", "cdf"):
        raise ValueError("tails must be 'clamp' or 'cdf'")
    m, K = curves.shape
    scale = max(1.0, float(np.abs(curves).max())) if curves.size else 1.0
    y = np.asarray(y, dtype=float) + TIE_TOL * scale
    vector = y.ndim == 1
    Y = y[:, None] if vector else y
    if vector:
        cnt = (curves <= Y).sum(axis=1)[:, None]
    elif K == 1:
        cnt = (curves <= Y).astype(int)
    else:
        lo_val, hi_val = (grid[0], grid[-1]) if tails == "clamp" else (0.0, 1.0)
        # np.interp brackets y by the last index j with q[j] <= y, so an
        # exact hit on a run of tied quantiles lands on the largest level
        out = np.empty(Y.shape)
        for i in range(m):
            q, yi = curves[i], Y[i]
            oi = np.interp(yi, q, grid, left=lo_val, right=hi_val)
            oi[yi >= q[-1]] = hi_val
            out[i] = oi
        return out
    k = cnt - 1
    kk = np.clip(k, 0, K - 2) if K > 1 else np.zeros_like(k)
    rows = np.arange(m)[:, None]
    lo = curves[rows, kk]
    hi = curves[rows, np.minimum(kk + 1, K - 1)]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(hi > lo, (Y - lo) / (hi - lo), 0.0)
    gk = grid[kk]
    gk1 = grid[np.minimum(kk + 1, K - 1)]
    out = gk + np.clip(frac, 0.0, 1.0) * (gk1 - gk)
    below, above = k < 0, k >= K - 1
    if tails == "clamp":
        out = np.where(below, grid[0], np.where(above, grid[-1], out))
    elif tails == "cdf":
        out = np.where(below, 0.0, np.where(above, 1.0, out))
    else:
        raise ValueError("tails must be 'clamp' or 'cdf'")
    return out[:, 0] if vector else out


def conditional_cdf(proc: QuantileProcess, x, y):
    """Conditional rank of ``y`` given ``x``, clamped to the grid range."""
    _require_rearranged(proc)
    single = np.ndim(x) == 1 and not isinstance(x, DesignMatrix)
    curves = proc.curves(x)
    yv = np.broadcast_to(np.asarray(y, dtype=float), (curves.shape[0],))
    r = invert_curves(curves, proc.tau_grid, yv, tails="clamp")
    return float(r[0]) if single and np.ndim(y) == 0 else r


def conditional_distribution(proc: QuantileProcess, X, support) -> np.ndarray:
    """CDF values ``F(support_j | x_i)``, shape ``(m, L)``, with 0/1 tails."""
    _require_rearranged(proc)
    curves = proc.curves(X)
    support = np.asarray(support, dtype=float)
    Y = np.broadcast_to(support, (curves.shape[0], support.size))
    return invert_curves(curves, proc.tau_grid, Y, tails="cdf")


def fit_ols(X, y) -> np.ndarray:
    """Least-squares coefficients."""
    X, y = _validate(X, y)
    return np.linalg.lstsq(X, y, rcond=None)[0]


def subgradient_gap(X, y, beta, tau, zero_tol=1e-9) -> float:
    """Distance of zero from the pinball subdifferential at ``beta``, over n.

    Residuals within ``zero_tol`` (relative to the scale of ``y``) are
    treated as interpolated; their multipliers range over ``[tau-1, tau]``.
    """
    from scipy.optimize import lsq_linear

    X, y = _rows(X), np.asarray(y, dtype=float)
    r = y - X @ beta
    zero = np.abs(r) <= zero_tol * max(1.0, np.abs(y).max())
    g = X[~zero].T @ (tau - (r[~zero] < 0))
    if not np.any(zero):
        return float(np.linalg.norm(g) / y.size)
    res = lsq_linear(X[zero].T, -g, bounds=(tau - 1.0, tau))
    return float(np.linalg.norm(X[zero].T @ res.x + g) / y.size)
