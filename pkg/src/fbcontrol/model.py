"""Problem definitions, Hamiltonians, the Gaussian kernel, and validation.

A control problem bundles the forward drift/diffusion, the backward
generator and terminal map, the recursive cost generator and terminal,
a scalar control interval, and the horizon.  Built-in families are
registered by name so problems can be round-tripped through JSON.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegeneracyError, DomainError, EvaluationError

# Sentinel used for unbounded control endpoints (scans are never run against it;
# families with infinite U must supply a closed-form minimizer).
U_INF = 1.0e12


@dataclass(frozen=True)
class TerminalSplit:
    """Additive split h0(t, xt, x, y) = fhat(t, xt, x) + ghat(t, xt, y).

    Valid whenever the cost generator does not see the anchor y, which lets the
    y-dependence of the cost field be carried analytically.  ``t_free`` /
    ``xtilde_free`` mark that fhat and the cost generator ignore those anchors,
    collapsing the anchor family to fewer (or one) backward solves.
    """

    fhat: Callable
    ghat: Callable
    ghat_y: Callable
    t_free: bool = False
    xtilde_free: bool = False


@dataclass(frozen=True)
class McCost:
    """Cost decomposition used by the Monte Carlo evaluator.

    J(t,x) = E[ integral of running(s, X, u) ds + terminal(X_T) ] + outer(E[X_T]).
    """

    running: Optional[Callable] = None
    terminal: Optional[Callable] = None
    outer: Optional[Callable] = None
    outer_prime: Optional[Callable] = None


@dataclass(frozen=True)
class ControlProblemSpec:
    name: str
    drift: Callable                 # b(s, x, u)
    diffusion: Callable             # sigma(s, x, u)
    generator: Callable             # g(s, x, u, y, z), shape (m, ...)
    terminal: Callable              # h(x), shape (m, ...)
    cost_generator: Callable        # g0(t, s, xt, x, u, y, z, y0, z0)
    cost_terminal: Callable         # h0(t, xt, x, y)
    u_lo: float
    u_hi: float
    horizon: float
    m: int = 1
    x0: float = 0.0
    diffusion_control_free: bool = False
    cost_class: str = "general"     # deterministic | bolza_condexp | general
    params: dict = field(default_factory=dict)
    terminal_split: Optional[TerminalSplit] = None
    reduced_running: Optional[Callable] = None   # (t, s, u) -> cost rate
    mc_cost: Optional[McCost] = None
    closed_minimizer: Optional[Callable] = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if not self.u_lo < self.u_hi:
            raise DomainError("control interval requires u_lo < u_hi")
        if self.m not in (1, 2):
            raise DomainError("backward dimension m must be 1 or 2")

    @property
    def u_bounded(self):
        return abs(self.u_lo) < U_INF and abs(self.u_hi) < U_INF

    def clamp_u(self, u):
        return np.clip(u, self.u_lo, self.u_hi)


class StrategyTable:
    """A feedback strategy: closed-form callable or interpolated grid table.

    Values are clamped to the control interval, so every query (including
    out-of-grid extrapolation, which holds the edge value) lands in U.
    """

    def __init__(self, u_lo, u_hi, fn=None, s_grid=None, x_grid=None,
                 values=None, clamp=True):
        if (fn is None) == (values is None):
            raise DomainError("supply exactly one of fn or grid values")
        self.u_lo = float(u_lo)
        self.u_hi = float(u_hi)
        self.fn = fn
        self.clamp = clamp
        if values is not None:
            self.s_grid = np.asarray(s_grid, dtype=float)
            self.x_grid = np.asarray(x_grid, dtype=float)
            self.values = np.asarray(values, dtype=float)
            if self.values.shape != (self.s_grid.size, self.x_grid.size):
                raise DomainError("strategy table shape mismatch")
        else:
            self.s_grid = self.x_grid = self.values = None

    @property
    def is_grid(self):
        return self.values is not None

    def __call__(self, s, x):
        if self.fn is not None:
            out = self.fn(s, x)
        else:
            sg = self.s_grid
            j = int(np.clip(np.searchsorted(sg, s) - 1, 0, sg.size - 2))
            w = 0.0 if sg[j + 1] == sg[j] else (s - sg[j]) / (sg[j + 1] - sg[j])
            w = min(max(w, 0.0), 1.0)
            row = (1.0 - w) * self.values[j] + w * self.values[j + 1]
            out = np.interp(x, self.x_grid, row)
        out = np.asarray(out, dtype=float) + np.zeros_like(np.asarray(x, dtype=float))
        if self.clamp:
            out = np.clip(out, self.u_lo, self.u_hi)
        return out if out.ndim else float(out)

    def max_x_jump(self):
        """Largest jump between adjacent space nodes (minimizer continuity probe)."""
        if not self.is_grid or self.x_grid.size < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.values, axis=1))))


def _check_finite(value, coefficient, where=None):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(coefficient, where)
    return arr


def _scalar(value):
    arr = np.asarray(value, dtype=float)
    return float(arr.reshape(-1)[0]) if arr.size else float(arr)


def hamiltonian_H(spec, s, x, u, theta, p, P):
    """First Hamiltonian: tr[P a] + p b + g(s, x, u, theta, p sigma), a = sigma^2/2."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    P = np.atleast_1d(np.asarray(P, dtype=float))
    b = _check_finite(spec.drift(s, x, u), "drift", (s, x, u))
    sig = _check_finite(spec.diffusion(s, x, u), "diffusion", (s, x, u))
    a = 0.5 * sig * sig
    gval = _check_finite(spec.generator(s, x, u, theta, p * sig), "generator", (s, x, u))
    out = P * a + p * b + np.atleast_1d(gval)
    return float(out[0]) if spec.m == 1 else out


def hamiltonian_H0_hat(spec, t, s, xt, x, u, theta, p, P, theta0, p0, q0, P0):
    """Adjusted cost Hamiltonian: H0 + q0 . H, with H0 = tr[P0 a] + p0 b + g0."""
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    b = _check_finite(spec.drift(s, x, u), "drift", (s, x, u))
    sig = _check_finite(spec.diffusion(s, x, u), "diffusion", (s, x, u))
    a = 0.5 * sig * sig
    g0 = _check_finite(
        spec.cost_generator(t, s, xt, x, u, np.atleast_1d(theta), p * sig, theta0, p0 * sig),
        "cost_generator", (t, s, xt, x, u))
    h0part = float(P0) * _scalar(a) + float(p0) * _scalar(b) + _scalar(g0)
    hpart = np.atleast_1d(hamiltonian_H(spec, s, x, u, theta, p, P))
    return float(h0part + np.dot(q0, hpart))


def heat_kernel(a_fn, s, x, r, mu, lam0=1e-12):
    """Gaussian kernel with diffusion matrix a evaluated at the target point.

    One space dimension: (4 pi (r-s))^{-1/2} a^{-1/2} exp(-(x-mu)^2 / (4 a (r-s))).
    """
    if not r > s:
        raise DomainError(f"heat kernel needs r > s, got r={r}, s={s}")
    a = np.asarray(a_fn(r, mu), dtype=float)
    if np.any(a < lam0):
        raise DegeneracyError(f"diffusion coefficient {np.min(a):.3g} below {lam0:.3g}")
    dt = r - s
    d = np.asarray(x, dtype=float) - np.asarray(mu, dtype=float)
    out = np.exp(-d * d / (4.0 * a * dt)) / np.sqrt(4.0 * math.pi * dt * a)
    return out if out.ndim else float(out)


def make_probe_grid(spec, ns=5, nx=7, nu=5, x_span=2.0):
    """Default probe mesh for validate_spec."""
    s = np.linspace(0.0, spec.horizon, ns)
    x = spec.x0 + np.linspace(-x_span, x_span, nx)
    lo = max(spec.u_lo, -10.0)
    hi = min(spec.u_hi, 10.0)
    u = np.linspace(lo, hi, nu)
    return {"s": s, "x": x, "u": u}


def validate_spec(spec, probe_grid=None):
    """Probe-grid diagnostics: finiteness, Lipschitz estimates, ellipticity.

    Never raises; returns a report dict.  The non-degeneracy flag refers to
    a = sigma^2/2 over the probed controls, so control-scaled diffusions are
    reported degenerate whenever u = 0 is probed.
    """
    probe = probe_grid or make_probe_grid(spec)
    s_arr, x_arr, u_arr = (np.asarray(probe[k], dtype=float) for k in ("s", "x", "u"))
    if s_arr.size == 0 or x_arr.size == 0 or u_arr.size == 0:
        raise DomainError("probe grid must be nonempty")
    y0 = np.zeros(spec.m)
    bad = []
    amin = math.inf
    lip_b = lip_sig = 0.0
    dx = 1e-5 * max(1.0, float(np.max(np.abs(x_arr))))
    ctrl_free = True
    for s in s_arr:
        for x in x_arr:
            for u in u_arr:
                vals = {}
                try:
                    vals["drift"] = _scalar(spec.drift(s, x, u))
                    vals["diffusion"] = _scalar(spec.diffusion(s, x, u))
                    gv = np.asarray(spec.generator(s, x, u, y0, y0), dtype=float)
                    vals["generator"] = float(np.sum(gv))
                    hv = np.asarray(spec.terminal(x), dtype=float)
                    vals["terminal"] = float(np.sum(hv))
                    vals["cost_terminal"] = _scalar(
                        spec.cost_terminal(s, x, x, y0 if spec.m > 1 else 0.0))
                    vals["cost_generator"] = _scalar(
                        spec.cost_generator(s, s, x, x, u, y0, y0, 0.0, 0.0))
                except Exception:
                    bad.append((float(s), float(x), float(u)))
                    continue
                for name, v in vals.items():
                    if not math.isfinite(v):
                        bad.append((float(s), float(x), float(u), name))
                sig = vals["diffusion"]
                amin = min(amin, 0.5 * sig * sig)
                lip_b = max(lip_b, abs(_scalar(spec.drift(s, x + dx, u)) - vals["drift"]) / dx)
                lip_sig = max(lip_sig, abs(_scalar(spec.diffusion(s, x + dx, u)) - sig) / dx)
            if spec.diffusion_control_free and u_arr.size >= 2:
                s0 = _scalar(spec.diffusion(s, x, u_arr[0]))
                s1 = _scalar(spec.diffusion(s, x, u_arr[-1]))
                if abs(s0 - s1) > 1e-12 * (1.0 + abs(s0)):
                    ctrl_free = False
    nondegenerate = math.isfinite(amin) and amin > 0.0
    if spec.reduced_running is not None:
        detected = "deterministic"
    elif spec.mc_cost is not None:
        detected = "bolza_condexp"
    else:
        detected = "general"
    return {
        "finite": not bad,
        "bad_points": bad,
        "lipschitz": {"drift": lip_b, "diffusion": lip_sig},
        "lambda0": amin if math.isfinite(amin) else 0.0,
        "nondegenerate": nondegenerate,
        "diffusion_control_free_ok": ctrl_free,
        "suggested_route": "pde" if nondegenerate else "ode",
        "cost_class_detected": detected,
    }


# ---------------------------------------------------------------------------
# Built-in problem families
# ---------------------------------------------------------------------------

def _zero_generator(m):
    if m == 1:
        return lambda s, x, u, y, z: np.zeros_like(np.asarray(x, dtype=float))
    return lambda s, x, u, y, z: np.zeros((m,) + np.shape(np.asarray(x, dtype=float)))


def mean_variance(r=0.03, mu=0.08, sigma=0.2, gamma=2.0, T=1.0, x0=1.0,
                  u_bound=20.0, U=None):
    """Wealth control with conditional-variance penalty.

    State drift r x + (mu - r) u, diffusion sigma u; backward component is the
    conditional mean of terminal wealth; cost -E_t[X_T] + gamma/2 Var_t[X_T].
    """
    r, mu, sigma, gamma = map(float, (r, mu, sigma, gamma))
    u_lo, u_hi = U if U is not None else (-u_bound, u_bound)

    def h0(t, xt, x, y):
        return -x + 0.5 * gamma * x * x - 0.5 * gamma * y * y

    split = TerminalSplit(
        fhat=lambda t, xt, x: -x + 0.5 * gamma * x * x,
        ghat=lambda t, xt, y: -0.5 * gamma * y * y,
        ghat_y=lambda t, xt, y: -gamma * y,
        t_free=True, xtilde_free=True)
    return ControlProblemSpec(
        name="mean_variance",
        drift=lambda s, x, u: r * x + (mu - r) * u,
        diffusion=lambda s, x, u: sigma * u + 0.0 * x,
        generator=_zero_generator(1),
        terminal=lambda x: np.asarray(x, dtype=float),
        cost_generator=lambda t, s, xt, x, u, y, z, y0, z0: 0.0 * np.asarray(x, dtype=float),
        cost_terminal=h0,
        u_lo=u_lo, u_hi=u_hi, horizon=float(T), m=1, x0=float(x0),
        diffusion_control_free=False, cost_class="bolza_condexp",
        params={"r": r, "mu": mu, "sigma": sigma, "gamma": gamma, "x0": float(x0)},
        terminal_split=split,
        mc_cost=McCost(
            terminal=lambda x: -x + 0.5 * gamma * x * x,
            outer=lambda m1: -0.5 * gamma * m1 * m1,
            outer_prime=lambda m1: -gamma * m1),
    )


def recursive_lq(T=1.0, x0=0.0, U=(-10.0, 10.0)):
    """Recursive control benchmark whose cost is the backward value itself.

    b = u, sigma = 1, g = (u^2 + x^2)/2, cost terminal h0 = y: the equilibrium
    collapses to the classical recursive HJB with pointwise minimization.
    """
    def g(s, x, u, y, z):
        return 0.5 * (np.asarray(u, dtype=float) ** 2 + np.asarray(x, dtype=float) ** 2)

    split = TerminalSplit(
        fhat=lambda t, xt, x: 0.0 * np.asarray(x, dtype=float),
        ghat=lambda t, xt, y: np.asarray(y, dtype=float),
        ghat_y=lambda t, xt, y: np.ones_like(np.asarray(y, dtype=float)),
        t_free=True, xtilde_free=True)
    return ControlProblemSpec(
        name="recursive_lq",
        drift=lambda s, x, u: np.asarray(u, dtype=float) + 0.0 * np.asarray(x, dtype=float),
        diffusion=lambda s, x, u: np.ones_like(np.asarray(x, dtype=float)),
        generator=g,
        terminal=lambda x: 0.0 * np.asarray(x, dtype=float),
        cost_generator=lambda t, s, xt, x, u, y, z, y0, z0: 0.0 * np.asarray(x, dtype=float),
        cost_terminal=lambda t, xt, x, y: y,
        u_lo=float(U[0]), u_hi=float(U[1]), horizon=float(T), m=1, x0=float(x0),
        diffusion_control_free=True, cost_class="bolza_condexp",
        params={"x0": float(x0)},
        terminal_split=split,
        mc_cost=McCost(running=lambda s, x, u: 0.5 * (u * u + x * x)),
    )


def linear_heat(a=1.0, T=1.0, terminal="x", x0=0.0):
    """Uncontrolled diffusion used for solver validation (b = 0, sigma = sqrt(2a))."""
    a = float(a)
    sig = math.sqrt(2.0 * a)
    terminals = {
        "x": lambda x: np.asarray(x, dtype=float),
        "x2": lambda x: np.asarray(x, dtype=float) ** 2,
        "gaussians": lambda x: (np.exp(-(np.asarray(x) - 0.7) ** 2)
                                + 0.5 * np.exp(-2.0 * (np.asarray(x) + 1.1) ** 2)),
    }
    h = terminals[terminal] if isinstance(terminal, str) else terminal
    split = TerminalSplit(
        fhat=lambda t, xt, x: 0.0 * np.asarray(x, dtype=float),
        ghat=lambda t, xt, y: np.asarray(y, dtype=float),
        ghat_y=lambda t, xt, y: np.ones_like(np.asarray(y, dtype=float)),
        t_free=True, xtilde_free=True)
    return ControlProblemSpec(
        name="linear_heat",
        drift=lambda s, x, u: 0.0 * np.asarray(x, dtype=float),
        diffusion=lambda s, x, u: sig * np.ones_like(np.asarray(x, dtype=float)),
        generator=_zero_generator(1),
        terminal=h,
        cost_generator=lambda t, s, xt, x, u, y, z, y0, z0: 0.0 * np.asarray(x, dtype=float),
        cost_terminal=lambda t, xt, x, y: y,
        u_lo=-1.0, u_hi=1.0, horizon=float(T), m=1, x0=float(x0),
        diffusion_control_free=True, cost_class="general",
        params={"a": a, "terminal": terminal if isinstance(terminal, str) else "custom"},
        terminal_split=split,
    )


def bkm_separable(T=1.0, x0=0.0):
    """Separable-cost benchmark: h0 = fhat(xt, x) + ghat(xt, y), zero cost generator."""
    def fhat(t, xt, x):
        return np.asarray(x, dtype=float) ** 2 + np.asarray(xt, dtype=float) * np.asarray(x, dtype=float)

    def ghat(t, xt, y):
        return np.asarray(xt, dtype=float) * np.asarray(y, dtype=float) - 0.5 * np.asarray(y, dtype=float) ** 2

    def ghat_y(t, xt, y):
        return np.asarray(xt, dtype=float) - np.asarray(y, dtype=float)

    split = TerminalSplit(fhat=fhat, ghat=ghat, ghat_y=ghat_y, t_free=True, xtilde_free=False)
    return ControlProblemSpec(
        name="bkm_separable",
        drift=lambda s, x, u: 0.0 * np.asarray(x, dtype=float),
        diffusion=lambda s, x, u: np.ones_like(np.asarray(x, dtype=float)),
        generator=_zero_generator(1),
        terminal=lambda x: np.asarray(x, dtype=float),
        cost_generator=lambda t, s, xt, x, u, y, z, y0, z0: 0.0 * np.asarray(x, dtype=float),
        cost_terminal=lambda t, xt, x, y: fhat(t, xt, x) + ghat(t, xt, y),
        u_lo=-1.0, u_hi=1.0, horizon=float(T), m=1, x0=float(x0),
        diffusion_control_free=True, cost_class="general",
        params={}, terminal_split=split,
    )


def stackelberg(T=1.0, x0=0.0, U=(-5.0, 5.0)):
    """Leader's problem of the two-player game: deterministic FBSDE, T = 1 instance.

    Backward flow dY/ds = (Y + u)/(2 - s), Y(1) = 0; running cost y + u + u^2.
    The reduced running integrand anchored at t is [ln(2-s) - ln(2-t) + 1] u + u^2.
    """
    def g(s, x, u, y, z):
        return -(np.asarray(y, dtype=float) + np.asarray(u, dtype=float)) / (2.0 - s)

    def reduced(t, s, u):
        u = np.asarray(u, dtype=float)
        return (np.log(2.0 - s) - np.log(2.0 - t) + 1.0) * u + u * u

    return ControlProblemSpec(
        name="stackelberg",
        drift=lambda s, x, u: np.asarray(u, dtype=float) + 0.0 * np.asarray(x, dtype=float),
        diffusion=lambda s, x, u: 0.0 * np.asarray(x, dtype=float),
        generator=g,
        terminal=lambda x: 0.0 * np.asarray(x, dtype=float),
        cost_generator=lambda t, s, xt, x, u, y, z, y0, z0: (
            np.asarray(y, dtype=float) + np.asarray(u, dtype=float) + np.asarray(u, dtype=float) ** 2),
        cost_terminal=lambda t, xt, x, y: 0.0,
        u_lo=float(U[0]), u_hi=float(U[1]), horizon=float(T), m=1, x0=float(x0),
        diffusion_control_free=True, cost_class="deterministic",
        params={"x0": float(x0)},
        reduced_running=reduced,
    )


def ex31(T=1.0, x0=0.0, U=(-5.0, 5.0)):
    """Two-component backward benchmark with cost Y2(t).

    dY1/ds = u and dY2/ds = -Y1 - u - u^2; the cost reduces to the running
    integrand (1 + t - s) u + u^2 anchored at t.
    """
    def g(s, x, u, y, z):
        u = np.asarray(u, dtype=float)
        base = np.zeros_like(u + np.asarray(x, dtype=float))
        return np.stack([-u + base, np.asarray(y)[0] + u + u * u + base])

    def reduced(t, s, u):
        u = np.asarray(u, dtype=float)
        return (1.0 + t - s) * u + u * u

    return ControlProblemSpec(
        name="ex31",
        drift=lambda s, x, u: 0.0 * np.asarray(x, dtype=float),
        diffusion=lambda s, x, u: 0.0 * np.asarray(x, dtype=float),
        generator=g,
        terminal=lambda x: np.zeros((2,) + np.shape(np.asarray(x, dtype=float))),
        cost_generator=lambda t, s, xt, x, u, y, z, y0, z0: 0.0 * np.asarray(x, dtype=float),
        cost_terminal=lambda t, xt, x, y: np.asarray(y)[1],
        u_lo=float(U[0]), u_hi=float(U[1]), horizon=float(T), m=2, x0=float(x0),
        diffusion_control_free=True, cost_class="deterministic",
        params={"x0": float(x0)},
        reduced_running=reduced,
    )


def ex41(T=1.0, x0=1.0, U=(-10.0, 10.0)):
    """Mean-field LQ benchmark: dX = u ds + X dW, cost E_t[int u^2] + (E_t[X_T])^2."""
    return ControlProblemSpec(
        name="ex41",
        drift=lambda s, x, u: np.asarray(u, dtype=float) + 0.0 * np.asarray(x, dtype=float),
        diffusion=lambda s, x, u: np.asarray(x, dtype=float),
        generator=_zero_generator(1),
        terminal=lambda x: np.asarray(x, dtype=float),
        cost_generator=lambda t, s, xt, x, u, y, z, y0, z0: np.asarray(u, dtype=float) ** 2,
        cost_terminal=lambda t, xt, x, y: np.asarray(y, dtype=float) ** 2,
        u_lo=float(U[0]), u_hi=float(U[1]), horizon=float(T), m=1, x0=float(x0),
        diffusion_control_free=False, cost_class="bolza_condexp",
        params={"x0": float(x0)},
        mc_cost=McCost(
            running=lambda s, x, u: u * u,
            outer=lambda m1: m1 * m1,
            outer_prime=lambda m1: 2.0 * m1),
    )


def gbm(mu=0.5, sigma=0.2, T=1.0, x0=1.0):
    """Uncontrolled geometric Brownian motion probe."""
    mu, sigma = float(mu), float(sigma)
    return ControlProblemSpec(
        name="gbm",
        drift=lambda s, x, u: mu * np.asarray(x, dtype=float),
        diffusion=lambda s, x, u: sigma * np.asarray(x, dtype=float),
        generator=_zero_generator(1),
        terminal=lambda x: np.asarray(x, dtype=float),
        cost_generator=lambda t, s, xt, x, u, y, z, y0, z0: 0.0 * np.asarray(x, dtype=float),
        cost_terminal=lambda t, xt, x, y: y,
        u_lo=-1.0, u_hi=1.0, horizon=float(T), m=1, x0=float(x0),
        diffusion_control_free=True, cost_class="general",
        params={"mu": mu, "sigma": sigma, "x0": float(x0)},
    )


FAMILIES = {
    "mean_variance": mean_variance,
    "recursive_lq": recursive_lq,
    "linear_heat": linear_heat,
    "bkm_separable": bkm_separable,
    "stackelberg": stackelberg,
    "ex31": ex31,
    "ex41": ex41,
    "gbm": gbm,
}


def register_family(name, builder):
    FAMILIES[name] = builder


def make_spec(family, params=None, T=None, U=None):
    import inspect

    if family not in FAMILIES:
        raise DomainError(f"unknown problem family '{family}'")
    builder = FAMILIES[family]
    accepted = set(inspect.signature(builder).parameters)
    kwargs = dict(params or {})
    if T is not None:
        kwargs["T"] = T
    if U is not None:
        kwargs["U"] = tuple(U)
    bad = sorted(set(kwargs) - accepted)
    if bad:
        raise DomainError(f"family '{family}' does not accept parameters {bad}")
    return builder(**kwargs)


def spec_to_json(spec):
    return {
        "family": spec.name,
        "params": {k: v for k, v in spec.params.items()},
        "T": spec.horizon,
        "U": [spec.u_lo, spec.u_hi],
    }


def spec_from_json(doc):
    return make_spec(doc["family"], doc.get("params"), doc.get("T"), doc.get("U"))
