"""Backward parabolic solver for the coupled nonlocal value system.

The backward field and the anchored cost field are stepped on a truncated 1-D
domain with implicit diffusion and explicit drift/source (IMEX); an outer
Picard loop alternates field solves with pointwise minimization of the
adjusted Hamiltonian, feeding the diagonal values of the cost field back into
the strategy until the diagonal bundle and the strategy stop moving.

Cost fields come in two storage modes.  When the cost terminal splits
additively into a state part and an anchored-y part (and the cost generator
never sees the anchor y), the y-dependence is carried analytically and only
state-part fields are stepped.  Otherwise a full anchor tensor is solved,
which is only practical on small grids.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .errors import (DegeneracyError, DomainError, EvaluationError,
                     FBControlError, YRangeError)
from .model import StrategyTable

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_trapz = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class GridSpec:
    x_lo: float
    x_hi: float
    nx: int
    nt: int
    T: float
    y_lo: Optional[float] = None
    y_hi: Optional[float] = None
    ny: int = 17

    def __post_init__(self):
        if self.nx < 8 or self.nt < 8:
            raise DomainError("need at least 8 nodes in each direction")
        if not self.x_lo < self.x_hi:
            raise DomainError("x_lo must be below x_hi")
        if not self.T > 0:
            raise DomainError("horizon must be positive")

    @property
    def xs(self):
        return np.linspace(self.x_lo, self.x_hi, self.nx)

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.nt)

    @property
    def dx(self):
        return (self.x_hi - self.x_lo) / (self.nx - 1)

    @property
    def dt(self):
        return self.T / (self.nt - 1)

    @property
    def ys(self):
        if self.y_lo is None or self.y_hi is None:
            return None
        return np.linspace(self.y_lo, self.y_hi, self.ny)


def default_grid(spec, nx=129, nt=1001, span_sigmas=5.0, sigma_bar=None,
                 y_lo=None, y_hi=None, ny=17):
    """Truncated domain centered at x0 with width span_sigmas * sigma_bar * sqrt(T)."""
    if sigma_bar is None:
        p = spec.params
        if spec.name == "mean_variance":
            u_ref = (p["mu"] - p["r"]) / (p["gamma"] * p["sigma"] ** 2)
        else:
            u_ref = float(np.clip(1.0, spec.u_lo, spec.u_hi))
        sigma_bar = max(abs(float(np.asarray(spec.diffusion(s, spec.x0, u_ref))))
                        for s in (0.0, 0.5 * spec.horizon, spec.horizon))
        sigma_bar = max(sigma_bar, 1e-2)
    half = span_sigmas * sigma_bar * math.sqrt(spec.horizon)
    return GridSpec(spec.x0 - half, spec.x0 + half, nx, nt, spec.horizon,
                    y_lo=y_lo, y_hi=y_hi, ny=ny)


def _dx_rows(vals, dx):
    """Central first derivative, second-order one-sided at the edges."""
    out = np.empty_like(vals)
    out[..., 1:-1] = (vals[..., 2:] - vals[..., :-2]) / (2.0 * dx)
    out[..., 0] = (-3.0 * vals[..., 0] + 4.0 * vals[..., 1] - vals[..., 2]) / (2.0 * dx)
    out[..., -1] = (3.0 * vals[..., -1] - 4.0 * vals[..., -2] + vals[..., -3]) / (2.0 * dx)
    return out


def _dxx_rows(vals, dx):
    out = np.empty_like(vals)
    out[..., 1:-1] = (vals[..., 2:] - 2.0 * vals[..., 1:-1] + vals[..., :-2]) / (dx * dx)
    out[..., 0] = (2.0 * vals[..., 0] - 5.0 * vals[..., 1] + 4.0 * vals[..., 2] - vals[..., 3]) / (dx * dx)
    out[..., -1] = (2.0 * vals[..., -1] - 5.0 * vals[..., -2] + 4.0 * vals[..., -3] - vals[..., -4]) / (dx * dx)
    return out


def step_parabolic(field_slice, a_row, drift_row, source_row, dt, dx, lam0=0.0):
    """One backward IMEX step of  d_s v + a v_xx + drift v_x + source = 0.

    Diffusion is taken implicitly through a banded solve; drift and source are
    evaluated on the supplied (later-time) slice.  The ends close by carrying
    the adjacent curvature through a one-sided second difference, which is
    exact for quadratic data and degrades to linear extrapolation for linear
    data.
    """
    w = np.asarray(field_slice, dtype=float)
    a = np.asarray(a_row, dtype=float) + np.zeros_like(w)
    if not np.all(np.isfinite(a)):
        raise EvaluationError("diffusion")
    if np.min(a) < lam0:
        raise DegeneracyError(
            f"diffusion coefficient {np.min(a):.3g} below required bound {lam0:.3g}")
    drift = np.asarray(drift_row, dtype=float) + np.zeros_like(w)
    src = np.asarray(source_row, dtype=float) + np.zeros_like(w)
    if not np.all(np.isfinite(src)):
        raise EvaluationError("source")
    n = w.size
    mu = dt * a / (dx * dx)
    rhs = np.empty(n)
    rhs[1:-1] = w[1:-1] + dt * (drift[1:-1] * (w[2:] - w[:-2]) / (2.0 * dx) + src[1:-1])
    rhs[0] = w[0] + dt * (drift[0] * (-3.0 * w[0] + 4.0 * w[1] - w[2]) / (2.0 * dx) + src[0])
    rhs[-1] = w[-1] + dt * (drift[-1] * (3.0 * w[-1] - 4.0 * w[-2] + w[-3]) / (2.0 * dx) + src[-1])
    ab = np.zeros((5, n))
    ab[2, 1:-1] = 1.0 + 2.0 * mu[1:-1]
    ab[1, 2:] = -mu[1:-1]          # superdiagonal entries A[i, i+1]
    ab[3, :-2] = -mu[1:-1]         # subdiagonal entries A[i, i-1]
    # boundary rows: v_xx taken from the one-sided stencil (v0 - 2 v1 + v2)/dx^2
    ab[2, 0] = 1.0 - mu[0]
    ab[1, 1] = 2.0 * mu[0]
    ab[0, 2] = -mu[0]
    ab[2, -1] = 1.0 - mu[-1]
    ab[3, -2] = 2.0 * mu[-1]
    ab[4, -3] = -mu[-1]
    try:
        v = solve_banded((2, 2), ab, rhs)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise FBControlError(f"banded solve failed: {exc}") from exc
    if not np.all(np.isfinite(v)):
        raise FBControlError("banded solve produced non-finite values")
    return v


class FieldTheta:
    """Grid-sampled backward field with difference accessors.

    values has shape (m, nt, nx); the terminal row is assigned from the
    terminal map exactly.
    """

    def __init__(self, times, xs, values):
        self.times = np.asarray(times, dtype=float)
        self.xs = np.asarray(xs, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[None, :, :]
        self.m = self.values.shape[0]
        self.diffusion_number = None

    @property
    def dx(self):
        return float(self.xs[1] - self.xs[0])

    def slice(self, j):
        return self.values[:, j, :]

    def dx_slice(self, j):
        return _dx_rows(self.values[:, j, :], self.dx)

    def dxx_slice(self, j):
        return _dxx_rows(self.values[:, j, :], self.dx)

    def at(self, s, x, component=0):
        ts = self.times
        j = int(np.clip(np.searchsorted(ts, s) - 1, 0, ts.size - 2))
        w = (s - ts[j]) / (ts[j + 1] - ts[j])
        w = min(max(w, 0.0), 1.0)
        row = (1.0 - w) * self.values[component, j] + w * self.values[component, j + 1]
        return np.interp(x, self.xs, row)


def solve_theta(spec, strategy, grid: GridSpec, lam0=0.0) -> FieldTheta:
    """Backward-integrate the value field under a frozen feedback strategy.

    The semilinear source g(s, x, psi, theta, theta_x sigma) is taken from the
    explicit slice; sigma is evaluated at the frozen strategy, so control-
    scaled diffusions become state fields here.
    """
    xs, times = grid.xs, grid.times
    dt, dx = grid.dt, grid.dx
    term = np.atleast_2d(np.asarray(spec.terminal(xs), dtype=float))
    m = term.shape[0]
    values = np.empty((m, times.size, xs.size))
    values[:, -1, :] = term
    a_max = 0.0
    for j in range(times.size - 2, -1, -1):
        s = times[j + 1]
        w = values[:, j + 1, :]
        u_row = np.asarray(strategy(s, xs), dtype=float) + np.zeros_like(xs)
        sig = np.asarray(spec.diffusion(s, xs, u_row), dtype=float) + np.zeros_like(xs)
        a_row = 0.5 * sig * sig
        a_max = max(a_max, float(np.max(a_row)))
        b_row = np.asarray(spec.drift(s, xs, u_row), dtype=float) + np.zeros_like(xs)
        z = _dx_rows(w, dx) * sig
        src = np.atleast_2d(np.asarray(
            spec.generator(s, xs, u_row, w if m > 1 else w[0], z if m > 1 else z[0]),
            dtype=float))
        for c in range(m):
            values[c, j, :] = step_parabolic(w[c], a_row, b_row, src[c], dt, dx, lam0)
    out = FieldTheta(times, xs, values)
    # informational only: the implicit diffusion step is unconditionally stable
    out.diffusion_number = dt * a_max / (dx * dx)
    return out


@dataclass
class DiagonalBundle:
    """Diagonal values of the cost field: value, x-slope, y-slope, x-curvature."""
    d: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    dxx: np.ndarray

    def sup_diff(self, other):
        return {
            "d": float(np.max(np.abs(self.d - other.d))),
            "dx": float(np.max(np.abs(self.dx - other.dx))),
            "dy": float(np.max(np.abs(self.dy - other.dy))),
        }

    @staticmethod
    def zeros(nt, nx):
        z = np.zeros((nt, nx))
        return DiagonalBundle(z.copy(), z.copy(), z.copy(), z.copy())


class SeparableCostField:
    """Cost field stored as state-part fields plus an analytic anchored-y part.

    ``hat`` is (nt, nx) when the state part ignores both anchors, else
    (nx, nt, nx) with one field per x-anchor (anchor grids share the solver
    grids).  Anchored-y part and its derivative are closures from the split.
    """

    mode = "separable"

    def __init__(self, times, xs, hat, split, anchor_free):
        self.times = np.asarray(times, dtype=float)
        self.xs = np.asarray(xs, dtype=float)
        self.hat = np.asarray(hat, dtype=float)
        self.split = split
        self.anchor_free = anchor_free

    @property
    def dx(self):
        return float(self.xs[1] - self.xs[0])

    def _hat_field(self, l):
        return self.hat if self.anchor_free else self.hat[l]

    def value(self, t_idx, s_idx, xt_idx, x_idx, y):
        if s_idx < t_idx:
            raise DomainError("cost field queried below the anchor time (t > s)")
        t = self.times[t_idx]
        xt = self.xs[xt_idx]
        return float(self._hat_field(xt_idx)[s_idx, x_idx]) + float(self.split.ghat(t, xt, y))

    def diagonal(self, theta: FieldTheta):
        nt, nx = self.times.size, self.xs.size
        th = theta.values[0]
        if self.anchor_free:
            hat_diag = self.hat
            hat_dx = _dx_rows(self.hat, self.dx)
            hat_dxx = _dxx_rows(self.hat, self.dx)
        else:
            hat_diag = np.empty((nt, nx))
            hat_dx = np.empty((nt, nx))
            hat_dxx = np.empty((nt, nx))
            for l in range(nx):
                fld = self.hat[l]
                hat_diag[:, l] = fld[:, l]
                hat_dx[:, l] = _dx_rows(fld, self.dx)[:, l]
                hat_dxx[:, l] = _dxx_rows(fld, self.dx)[:, l]
        tt = self.times[:, None]
        xx = self.xs[None, :]
        d = hat_diag + np.asarray(self.split.ghat(tt, xx, th), dtype=float)
        dy = np.asarray(self.split.ghat_y(tt, xx, th), dtype=float) + np.zeros_like(d)
        return DiagonalBundle(d=d, dx=hat_dx, dy=dy, dxx=hat_dxx)


class GeneralCostField:
    """Full anchor tensor: one (s, x) field per (t-anchor, x-anchor, y-node).

    Only anchors with t <= s are populated; queries below the anchor time
    raise.  y-interpolation is cubic; leaving the y grid raises YRangeError.
    """

    mode = "general"

    def __init__(self, times, xs, ys, data):
        self.times = np.asarray(times, dtype=float)
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.data = data  # data[(k, l)] has shape (ny, nt - k, nx)

    @property
    def dx(self):
        return float(self.xs[1] - self.xs[0])

    def _column(self, t_idx, s_idx, xt_idx, x_idx):
        if s_idx < t_idx:
            raise DomainError("cost field queried below the anchor time (t > s)")
        return self.data[(t_idx, xt_idx)][:, s_idx - t_idx, x_idx]

    def _spline(self, col):
        from scipy.interpolate import CubicSpline
        return CubicSpline(self.ys, col)

    def _y_check(self, s, x, y):
        if y < self.ys[0] or y > self.ys[-1]:
            raise YRangeError(s, x, y, self.ys[0], self.ys[-1])

    def value(self, t_idx, s_idx, xt_idx, x_idx, y):
        self._y_check(self.times[s_idx], self.xs[x_idx], y)
        return float(self._spline(self._column(t_idx, s_idx, xt_idx, x_idx))(y))

    def value_dy(self, t_idx, s_idx, xt_idx, x_idx, y):
        self._y_check(self.times[s_idx], self.xs[x_idx], y)
        return float(self._spline(self._column(t_idx, s_idx, xt_idx, x_idx))(y, 1))

    def diagonal(self, theta: FieldTheta):
        nt, nx = self.times.size, self.xs.size
        th = theta.values[0]
        d = np.empty((nt, nx))
        dyv = np.empty((nt, nx))
        dxv = np.empty((nt, nx))
        dxxv = np.empty((nt, nx))
        dx = self.dx
        for j in range(nt):
            for i in range(nx):
                y = th[j, i]
                d[j, i] = self.value(j, j, i, i, y)
                dyv[j, i] = self.value_dy(j, j, i, i, y)
                row = np.array([self.value(j, j, i, ii, y) for ii in range(nx)])
                dxv[j, i] = _dx_rows(row, dx)[i]
                dxxv[j, i] = _dxx_rows(row, dx)[i]
        return DiagonalBundle(d=d, dx=dxv, dy=dyv, dxx=dxxv)


def _theta0_step_inputs(spec, strategy, theta, s, j_next, dx):
    u_row = np.asarray(strategy(s, theta.xs), dtype=float) + np.zeros_like(theta.xs)
    sig = np.asarray(spec.diffusion(s, theta.xs, u_row), dtype=float) + np.zeros_like(theta.xs)
    b_row = np.asarray(spec.drift(s, theta.xs, u_row), dtype=float) + np.zeros_like(theta.xs)
    th = theta.slice(j_next)
    z = theta.dx_slice(j_next) * sig
    return u_row, sig, 0.5 * sig * sig, b_row, (th if spec.m > 1 else th[0]), (z if spec.m > 1 else z[0])


def solve_theta0_family(spec, strategy, theta: FieldTheta, diag_guess, grid: GridSpec,
                        lam0=0.0, force_general=False):
    """Backward-integrate the anchored cost field with the nonlocal diagonal
    replaced by the supplied guess.

    The z0 slot always uses the stepped field's own explicit-slice gradient.
    """
    xs, times = grid.xs, grid.times
    dt, dx = grid.dt, grid.dx
    nt, nx = times.size, xs.size
    if diag_guess is None:
        diag_guess = DiagonalBundle.zeros(nt, nx)
    split = spec.terminal_split
    if split is not None and split.t_free and not force_general:
        anchor_free = split.xtilde_free
        if anchor_free:
            hat = np.empty((nt, nx))
            hat[-1] = np.asarray(split.fhat(grid.T, xs, xs), dtype=float) + np.zeros_like(xs)
            for j in range(nt - 2, -1, -1):
                s = times[j + 1]
                u_row, sig, a_row, b_row, th, z = _theta0_step_inputs(spec, strategy, theta, s, j + 1, dx)
                z0 = _dx_rows(hat[j + 1], dx) * sig
                src = np.asarray(spec.cost_generator(s, s, xs, xs, u_row, th, z,
                                                     diag_guess.d[j + 1], z0), dtype=float)
                hat[j] = step_parabolic(hat[j + 1], a_row, b_row, src, dt, dx, lam0)
        else:
            hat = np.empty((nx, nt, nx))
            for l in range(nx):
                xt = xs[l]
                hat[l, -1] = np.asarray(split.fhat(grid.T, xt, xs), dtype=float) + np.zeros_like(xs)
                for j in range(nt - 2, -1, -1):
                    s = times[j + 1]
                    u_row, sig, a_row, b_row, th, z = _theta0_step_inputs(spec, strategy, theta, s, j + 1, dx)
                    z0 = _dx_rows(hat[l, j + 1], dx) * sig
                    src = np.asarray(spec.cost_generator(s, s, xt, xs, u_row, th, z,
                                                         diag_guess.d[j + 1], z0), dtype=float)
                    hat[l, j] = step_parabolic(hat[l, j + 1], a_row, b_row, src, dt, dx, lam0)
        return SeparableCostField(times, xs, hat, split, anchor_free)

    if spec.m != 1:
        raise DomainError("the general cost-field tensor supports m = 1 only")
    ys = grid.ys
    if ys is None:
        raise DomainError("general cost field needs a y grid (set y_lo/y_hi on the grid)")
    data = {}
    for k in range(nt):
        for l in range(nx):
            t_anchor = times[k]
            xt = xs[l]
            fld = np.empty((ys.size, nt - k, nx))
            for r, y in enumerate(ys):
                fld[r, -1] = np.asarray(spec.cost_terminal(t_anchor, xt, xs, y),
                                        dtype=float) + np.zeros_like(xs)
            for j in range(nt - 2, k - 1, -1):
                s = times[j + 1]
                u_row, sig, a_row, b_row, th, z = _theta0_step_inputs(spec, strategy, theta, s, j + 1, dx)
                for r in range(ys.size):
                    w = fld[r, j + 1 - k]
                    z0 = _dx_rows(w, dx) * sig
                    src = np.asarray(spec.cost_generator(t_anchor, s, xt, xs, u_row, th, z,
                                                         diag_guess.d[j + 1], z0), dtype=float)
                    fld[r, j - k] = step_parabolic(w, a_row, b_row, src, dt, dx, lam0)
            data[(k, l)] = fld
    return GeneralCostField(times, xs, ys, data)


def extract_diagonal(theta0, theta: FieldTheta) -> DiagonalBundle:
    """Evaluate the cost field and its x-, y-derivatives at (s, s, x, x, theta)."""
    return theta0.diagonal(theta)


def _parabolic_vertex(pa, pm, pb, fa, fm, fb):
    num = (pm - pa) ** 2 * (fm - fb) - (pm - pb) ** 2 * (fm - fa)
    den = (pm - pa) * (fm - fb) - (pm - pb) * (fm - fa)
    safe = np.abs(den) > 1e-300
    vertex = pm - 0.5 * np.where(safe, num / np.where(safe, den, 1.0), 0.0)
    return np.where(safe, vertex, pm)


def _golden_rows(f, lo, hi, tol=1e-10, coarse=33):
    """Vectorized golden-section search with parabolic polish.

    The bracket is shrunk only to the width at which value differences remain
    resolvable in float64; the polish is exact for quadratic objectives, which
    pins the vertex well below the requested absolute tolerance.  Ties break
    toward the smaller control.
    """
    us = np.linspace(lo, hi, coarse)
    F = np.stack([np.asarray(f(u), dtype=float) for u in us])
    idx = np.argmin(F, axis=0)  # first occurrence = smallest u on ties
    u_best = us[idx]
    f_best = np.take_along_axis(F, idx[None, :], axis=0)[0]
    a = us[np.maximum(idx - 1, 0)]
    b = us[np.minimum(idx + 1, coarse - 1)]
    scale = max(1.0, (hi - lo) / 20.0)
    target = max(1e-4 * scale, tol)
    width0 = float(np.max(b - a))
    n_iter = (max(1, int(math.ceil(math.log(width0 / target) / math.log(1.0 / GOLDEN))))
              if width0 > target else 1)
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1 = np.asarray(f(x1), dtype=float)
    f2 = np.asarray(f(x2), dtype=float)
    for _ in range(n_iter):
        take_left = f1 <= f2
        b = np.where(take_left, x2, b)
        a = np.where(take_left, a, x1)
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        f1 = np.asarray(f(x1), dtype=float)
        f2 = np.asarray(f(x2), dtype=float)
    cand = np.where(f1 <= f2, x1, x2)
    fc = np.minimum(f1, f2)
    keep = (fc < f_best) | ((fc == f_best) & (cand < u_best))
    u_best = np.where(keep, cand, u_best)
    f_best = np.minimum(fc, f_best)
    for delta in (None, 1e-5 * scale):
        if delta is None:
            pa, pm, pb = a, 0.5 * (a + b), b
        else:
            pa = np.clip(u_best - delta, lo, hi)
            pb = np.clip(u_best + delta, lo, hi)
            pm = 0.5 * (pa + pb)
        fa = np.asarray(f(pa), dtype=float)
        fm = np.asarray(f(pm), dtype=float)
        fb = np.asarray(f(pb), dtype=float)
        vertex = np.clip(_parabolic_vertex(pa, pm, pb, fa, fm, fb), lo, hi)
        for u_try, f_try in ((pm, fm), (vertex, np.asarray(f(vertex), dtype=float))):
            keep = (f_try < f_best) | ((f_try == f_best) & (u_try < u_best))
            u_best = np.where(keep, u_try, u_best)
            f_best = np.minimum(f_try, f_best)
    return np.clip(u_best, lo, hi)


def _hamiltonian_objective(spec, s, xs, th, thx, thxx, d, dxr, dy, dxx):
    """Row objective u -> dxx a + dx b + g0 + dy . (thxx a + thx b + g)."""
    th = np.atleast_2d(th)
    thx = np.atleast_2d(thx)
    thxx = np.atleast_2d(thxx)
    dy = np.atleast_2d(dy)

    def f(u):
        u = np.asarray(u, dtype=float) + np.zeros_like(np.asarray(xs, dtype=float))
        sig = np.asarray(spec.diffusion(s, xs, u), dtype=float)
        a = 0.5 * sig * sig
        b = np.asarray(spec.drift(s, xs, u), dtype=float)
        z = thx * sig
        g = np.atleast_2d(np.asarray(
            spec.generator(s, xs, u, th if spec.m > 1 else th[0], z if spec.m > 1 else z[0]),
            dtype=float))
        hcomp = thxx * a + thx * b + g
        g0 = np.asarray(spec.cost_generator(s, s, xs, xs, u, th if spec.m > 1 else th[0],
                                            z if spec.m > 1 else z[0], d, dxr * sig), dtype=float)
        return dxx * a + dxr * b + g0 + np.sum(dy * hcomp, axis=0)

    return f


def minimize_hamiltonian(spec, s, x, theta, theta_x, theta_xx, d, d_x, d_y, d_xx=0.0):
    """Pointwise minimizer of the adjusted Hamiltonian over the control interval.

    The second-order terms enter with the diagonal curvature and dy-weighted
    field curvature; for control-free diffusion they are constant in u and the
    minimizer reduces to the first-order form.
    """
    if spec.closed_minimizer is not None:
        return float(spec.closed_minimizer(s, x, theta, theta_x, theta_xx, d, d_x, d_y, d_xx))
    if not spec.u_bounded:
        raise DomainError("numeric minimization needs a bounded control interval")
    xs = np.array([x], dtype=float)
    to_row = lambda v: np.asarray(v, dtype=float).reshape(spec.m, 1)
    f = _hamiltonian_objective(spec, s, xs, to_row(theta), to_row(theta_x), to_row(theta_xx),
                               np.array([d]), np.array([d_x]), to_row(d_y), np.array([d_xx]))
    def fs(u):
        val = f(np.asarray(u, dtype=float) + np.zeros(1))
        if not np.all(np.isfinite(val)):
            raise EvaluationError("hamiltonian objective", (s, x))
        return val
    return float(_golden_rows(fs, spec.u_lo, spec.u_hi)[0])


@dataclass
class IterationLog:
    rows: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    strategy_max_jump: float = 0.0
    note: str = ""

    def add(self, it, res):
        self.rows.append({"iter": it, "residual_D": res["d"], "residual_Dx": res["dx"],
                          "residual_Dy": res["dy"], "residual_psi": res["psi"]})

    def residuals(self):
        return [max(r["residual_D"], r["residual_Dx"], r["residual_Dy"], r["residual_psi"])
                for r in self.rows]


def equilibrium_fixed_point(spec, grid: GridSpec, max_iters=50, tol=1e-6,
                            damping=1.0, initial_strategy=None, lam0=0.0,
                            force_general=False):
    """Outer Picard loop on (fields, diagonal bundle, strategy).

    Returns (theta, theta0, strategy_table, log); non-convergence is reported
    through log.converged, never raised.
    """
    xs, times = grid.xs, grid.times
    nt, nx = times.size, xs.size
    if initial_strategy is None:
        u_init = float(np.clip(0.0, spec.u_lo, spec.u_hi))
        strategy = StrategyTable(spec.u_lo, spec.u_hi,
                                 fn=lambda s, x, _u=u_init: _u + 0.0 * np.asarray(x, dtype=float))
    else:
        strategy = initial_strategy
    bundle = DiagonalBundle.zeros(nt, nx)
    psi_tab = np.full((nt, nx), np.nan)
    log = IterationLog()
    theta = theta0 = None
    for it in range(1, max_iters + 1):
        theta = solve_theta(spec, strategy, grid, lam0)
        theta0 = solve_theta0_family(spec, strategy, theta, bundle, grid, lam0,
                                     force_general=force_general)
        new_bundle = extract_diagonal(theta0, theta)
        if damping < 1.0 and it > 1:
            new_bundle = DiagonalBundle(
                d=(1.0 - damping) * bundle.d + damping * new_bundle.d,
                dx=(1.0 - damping) * bundle.dx + damping * new_bundle.dx,
                dy=(1.0 - damping) * bundle.dy + damping * new_bundle.dy,
                dxx=(1.0 - damping) * bundle.dxx + damping * new_bundle.dxx)
        psi_new = np.empty((nt, nx))
        for j in range(nt):
            f = _hamiltonian_objective(
                spec, times[j], xs, theta.slice(j), theta.dx_slice(j), theta.dxx_slice(j),
                new_bundle.d[j], new_bundle.dx[j], new_bundle.dy[j][None, :]
                if spec.m == 1 else np.tile(new_bundle.dy[j], (spec.m, 1)),
                new_bundle.dxx[j])
            psi_new[j] = _golden_rows(f, spec.u_lo, spec.u_hi)
        res = new_bundle.sup_diff(bundle)
        res["psi"] = (float(np.max(np.abs(psi_new - psi_tab)))
                      if np.all(np.isfinite(psi_tab)) else math.inf)
        log.add(it, res)
        bundle = new_bundle
        psi_tab = psi_new
        strategy = StrategyTable(spec.u_lo, spec.u_hi, s_grid=times, x_grid=xs, values=psi_tab)
        log.iterations = it
        if max(res.values()) < tol:
            log.converged = True
            break
    log.strategy_max_jump = strategy.max_x_jump()
    if not log.converged:
        log.note = "fixed point did not reach tolerance; residual history retained"
    return theta, theta0, strategy, log


@dataclass
class PerturbationResult:
    times: np.ndarray
    theta_e: FieldTheta
    hat_e: np.ndarray
    j_perturbed: np.ndarray     # per x node, at the window start
    j_base: np.ndarray
    sup_theta_diff: float


def solve_perturbation(spec, theta: FieldTheta, theta0, t, eps, u, grid: GridSpec,
                       lam0=0.0):
    """Re-solve both fields on [t, t + eps] under the constant control u.

    Terminal data are the unperturbed fields at t + eps; the evaluated cost at
    the window start is the diagonal of the windowed cost field at the
    windowed backward value.  Requires the separable cost-field mode.
    """
    if getattr(theta0, "mode", None) != "separable" or not theta0.anchor_free:
        raise DomainError("perturbation solver requires an anchor-free separable cost field")
    times = grid.times
    j0 = int(round(t / grid.dt))
    j1 = int(round((t + eps) / grid.dt))
    if abs(times[j0] - t) > 1e-9 or abs(times[j1] - (t + eps)) > 1e-9:
        raise DomainError("t and t + eps must lie on the time grid")
    if j1 <= j0 or j1 >= times.size:
        raise DomainError("perturbation window must be a nonempty subinterval of [0, T)")
    if not (spec.u_lo <= u <= spec.u_hi):
        raise DomainError("perturbation control outside the control interval")
    xs, dt, dx = grid.xs, grid.dt, grid.dx
    nw = j1 - j0 + 1
    m = theta.m
    vals = np.empty((m, nw, xs.size))
    vals[:, -1, :] = theta.slice(j1)
    hat = np.empty((nw, xs.size))
    hat[-1] = theta0.hat[j1]
    u_row = np.full(xs.size, float(u))
    split = spec.terminal_split
    for j in range(nw - 2, -1, -1):
        s = times[j0 + j + 1]
        sig = np.asarray(spec.diffusion(s, xs, u_row), dtype=float) + np.zeros_like(xs)
        a_row = 0.5 * sig * sig
        b_row = np.asarray(spec.drift(s, xs, u_row), dtype=float) + np.zeros_like(xs)
        w = vals[:, j + 1, :]
        z = _dx_rows(w, dx) * sig
        src = np.atleast_2d(np.asarray(
            spec.generator(s, xs, u_row, w if m > 1 else w[0], z if m > 1 else z[0]), dtype=float))
        for c in range(m):
            vals[c, j, :] = step_parabolic(w[c], a_row, b_row, src[c], dt, dx, lam0)
        diag_later = hat[j + 1] + np.asarray(split.ghat(s, xs, w[0]), dtype=float)
        z0 = _dx_rows(hat[j + 1], dx) * sig
        src0 = np.asarray(spec.cost_generator(s, s, xs, xs, u_row,
                                              w if m > 1 else w[0], z if m > 1 else z[0],
                                              diag_later, z0), dtype=float)
        hat[j] = step_parabolic(hat[j + 1], a_row, b_row, src0, dt, dx, lam0)
    theta_e = FieldTheta(times[j0:j1 + 1], xs, vals)
    j_pert = hat[0] + np.asarray(split.ghat(times[j0], xs, vals[0, 0]), dtype=float)
    j_base = theta0.hat[j0] + np.asarray(split.ghat(times[j0], xs, theta.values[0, j0]), dtype=float)
    sup = float(np.max(np.abs(vals[:, :, :] - theta.values[:, j0:j1 + 1, :])))
    return PerturbationResult(times=times[j0:j1 + 1], theta_e=theta_e, hat_e=hat,
                              j_perturbed=j_pert, j_base=j_base, sup_theta_diff=sup)


def kernel_solve_linear(spec, grid: GridSpec, panels=2048, sweeps=20, tol=1e-12, u0=0.0,
                        pad=None):
    """Volterra-form solve of the fully linear problem via the Gaussian kernel.

    Valid for constant diffusion and coefficients independent of the field;
    used to validate the finite-difference stepping.  Quadrature is composite
    Simpson on a mu grid padded beyond the target domain; a truncation warning
    fires when the kernel mass outside the padded window exceeds 1e-6 for some
    target node.
    """
    xs, times = grid.xs, grid.times
    sig0 = float(np.asarray(spec.diffusion(0.0, xs[xs.size // 2], u0)))
    a = 0.5 * sig0 * sig0
    if a <= 0:
        raise DegeneracyError("kernel route needs strictly positive diffusion")
    if panels % 2 != 0:
        raise DomainError("composite Simpson needs an even panel count")
    std = math.sqrt(2.0 * a * grid.T)
    if pad is None:
        pad = 8.0 * std
    mu = np.linspace(grid.x_lo - pad, grid.x_hi + pad, panels + 1)
    dmu = mu[1] - mu[0]
    wts = np.ones(panels + 1)
    wts[1:-1:2] = 4.0
    wts[2:-1:2] = 2.0
    wts *= dmu / 3.0
    h_mu = np.asarray(spec.terminal(mu), dtype=float)
    if h_mu.ndim > 1:
        h_mu = h_mu[0]
    worst_tail = math.erfc(pad / max(math.sqrt(2.0) * std, 1e-300))
    if worst_tail > 1e-6:
        warnings.warn("kernel quadrature window too small: tail mass %.2e" % worst_tail,
                      RuntimeWarning)

    def kernel_matrix(s, r):
        # rows: target x, cols: quadrature mu
        dt_ = r - s
        return np.exp(-(xs[:, None] - mu[None, :]) ** 2 / (4.0 * a * dt_)) / math.sqrt(4.0 * math.pi * a * dt_)

    def b_at(r, pts):
        return np.asarray(spec.drift(r, pts, u0), dtype=float) + np.zeros_like(pts)

    def g_at(r, pts):
        out = np.atleast_2d(np.asarray(spec.generator(r, pts, u0, 0.0, 0.0), dtype=float))
        return out[0] + np.zeros_like(pts)

    term_row = np.atleast_2d(np.asarray(spec.terminal(xs), dtype=float))[0]
    theta = np.zeros((times.size, xs.size))
    theta[-1] = term_row
    theta_x_grid = np.zeros((times.size, xs.size))
    term_mats = {j: kernel_matrix(times[j], grid.T) for j in range(times.size - 1)}
    for sweep in range(sweeps):
        prev = theta.copy()
        for j in range(times.size - 2, -1, -1):
            s = times[j]
            acc = term_mats[j] @ (wts * h_mu)
            # time integral by trapezoid over r in [s, T]; the r -> s limit of the
            # mollified integrand is its value at the target point itself.
            rs = times[j:]
            fr = np.empty((rs.size, xs.size))
            fr[0] = theta_x_grid[j] * b_at(s, xs) + g_at(s, xs)
            for jr in range(1, rs.size):
                r = rs[jr]
                thx_mu = np.interp(mu, xs, theta_x_grid[j + jr])
                integrand = thx_mu * b_at(r, mu) + g_at(r, mu)
                fr[jr] = kernel_matrix(s, r) @ (wts * integrand)
            theta[j] = acc + _trapz(fr, rs, axis=0)
        theta_x_grid = _dx_rows(theta, grid.dx)
        if float(np.max(np.abs(theta - prev))) < tol:
            break
    return FieldTheta(times, xs, theta[None, :, :])


def mv_reference_fields(spec, grid: GridSpec):
    """Closed-form wealth/variance fields sampled on the grid.

    Under the x-free equilibrium control the terminal state from (s, x) is
    Gaussian with mean x e^{r(T-s)} + (mu-r)^2/(gamma sigma^2) (T-s) and
    variance sigma^2 c^2 (T-s), c = (mu-r)/(gamma sigma^2); the state-part
    cost field is -m1 + gamma/2 (m1^2 + V).
    """
    p = spec.params
    r, mu, sigma, gamma = p["r"], p["mu"], p["sigma"], p["gamma"]
    T = spec.horizon
    c = (mu - r) / (gamma * sigma * sigma)
    times, xs = grid.times, grid.xs
    tt = times[:, None]
    xx = xs[None, :]
    m1 = xx * np.exp(r * (T - tt)) + (mu - r) * c * (T - tt)
    var = sigma * sigma * c * c * (T - tt)
    hat = -m1 + 0.5 * gamma * (m1 * m1 + var)
    theta = FieldTheta(times, xs, m1[None, :, :])
    theta0 = SeparableCostField(times, xs, hat, spec.terminal_split, anchor_free=True)
    return theta, theta0


def emit_strategy_csv(strategy: StrategyTable, path, fmt="%.17g"):
    if not strategy.is_grid:
        raise DomainError("only grid strategies can be emitted")
    with open(path, "w") as f:
        f.write("s,x,psi\n")
        for j, s in enumerate(strategy.s_grid):
            for i, x in enumerate(strategy.x_grid):
                f.write(",".join(fmt % v for v in (s, x, strategy.values[j, i])) + "\n")


def emit_theta_csv(theta: FieldTheta, path, fmt="%.17g", stride=1):
    with open(path, "w") as f:
        f.write("s,x," + ",".join(f"theta_{c + 1}" for c in range(theta.m)) + "\n")
        for j in range(0, theta.times.size, stride):
            for i in range(0, theta.xs.size, stride):
                row = [theta.times[j], theta.xs[i]] + [theta.values[c, j, i] for c in range(theta.m)]
                f.write(",".join(fmt % v for v in row) + "\n")


def emit_theta0_csv(theta0, theta: FieldTheta, path, fmt="%.17g", stride=4):
    """Anchored cost field sampled along the diagonal anchor set."""
    bundle = theta0.diagonal(theta)
    with open(path, "w") as f:
        f.write("t,s,xtilde,x,y,theta0\n")
        for j in range(0, theta0.times.size, stride):
            for i in range(0, theta0.xs.size, stride):
                y = theta.values[0, j, i]
                row = [theta0.times[j], theta0.times[j], theta0.xs[i], theta0.xs[i], y,
                       bundle.d[j, i]]
                f.write(",".join(fmt % v for v in row) + "\n")


def emit_iteration_csv(log: IterationLog, path, fmt="%.17g"):
    with open(path, "w") as f:
        f.write("iter,residual_D,residual_Dx,residual_Dy,residual_psi\n")
        for r in log.rows:
            f.write(",".join([str(r["iter"])] +
                             [fmt % r[k] for k in ("residual_D", "residual_Dx",
                                                   "residual_Dy", "residual_psi")]) + "\n")
