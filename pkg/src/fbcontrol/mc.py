"""Path simulation, cost evaluation, spike-perturbation verification, and
cross-checks of the field representation against sampled expectations.

Randomness is counter-based: path i draws from a Philox stream keyed by
seed XOR i (antithetic pairs share a key and flip signs), so ensembles are
bit-reproducible for a given (seed, config) and common-random-number coupling
across strategies is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BlowUpError, DomainError, UnsupportedCostClassError
from .model import StrategyTable
from .riccati import _simpson


@dataclass(frozen=True)
class MCConfig:
    n_paths: int = 10000
    steps_per_unit: int = 100
    seed: int = 0
    antithetic: bool = False
    eps_list: tuple = (0.1, 0.05, 0.025)
    u_list: tuple = (-1.0, -0.5, 0.0, 0.5, 1.0)

    def __post_init__(self):
        if self.n_paths < 2:
            raise DomainError("need at least 2 paths")
        if self.steps_per_unit < 1:
            raise DomainError("need at least 1 step per unit time")
        if any(e <= 0 for e in self.eps_list):
            raise DomainError("perturbation windows must be positive")


def path_normals(seed, n_paths, n_steps, antithetic=False):
    """Per-path increments, time-major: column i belongs to path i, which draws
    from a counter-based stream keyed by seed XOR i.

    With antithetic pairing, paths 2k and 2k+1 share key seed XOR k with
    opposite signs.
    """
    z = np.empty((n_steps, n_paths))
    if antithetic:
        n_base = (n_paths + 1) // 2
        for k in range(n_base):
            gen = np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(k)))
            draw = gen.standard_normal(n_steps)
            z[:, 2 * k] = draw
            if 2 * k + 1 < n_paths:
                z[:, 2 * k + 1] = -draw
    else:
        for i in range(n_paths):
            gen = np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(i)))
            z[:, i] = gen.standard_normal(n_steps)
    return z


@dataclass
class PathEnsemble:
    t0: float
    times: np.ndarray
    paths_tn: np.ndarray         # time-major, shape (n_steps + 1, n_paths)
    seed: int
    controls_tn: Optional[np.ndarray] = None

    @property
    def n_paths(self):
        return self.paths_tn.shape[1]

    @property
    def paths(self):
        """Path-major view, shape (n_paths, n_steps + 1)."""
        return self.paths_tn.T

    @property
    def controls(self):
        return None if self.controls_tn is None else self.controls_tn.T

    def state_at(self, t):
        j = int(np.argmin(np.abs(self.times - t)))
        return self.paths_tn[j]


def simulate_forward(spec, strategy, t0, x0, cfg: MCConfig, t_end=None,
                     normals=None, record_controls=False) -> PathEnsemble:
    """Euler-Maruyama under a feedback strategy on [t0, t_end]."""
    T = spec.horizon if t_end is None else t_end
    if not 0.0 <= t0 < T + 1e-12:
        raise DomainError("simulation window outside the horizon")
    n_steps = max(1, int(round((T - t0) * cfg.steps_per_unit)))
    dt = (T - t0) / n_steps
    times = t0 + dt * np.arange(n_steps + 1)
    if normals is None:
        normals = path_normals(cfg.seed, cfg.n_paths, n_steps, cfg.antithetic)
    if normals.shape[0] < n_steps:
        raise DomainError("supplied increment block is too short")
    n = normals.shape[1]
    X = np.empty((n_steps + 1, n))
    X[0] = x0
    U = np.empty((n_steps, n)) if record_controls else None
    sqdt = math.sqrt(dt)
    for k in range(n_steps):
        s = times[k]
        xk = X[k]
        u = np.asarray(strategy(s, xk), dtype=float) + np.zeros_like(xk)
        b = np.asarray(spec.drift(s, xk, u), dtype=float)
        sig = np.asarray(spec.diffusion(s, xk, u), dtype=float)
        X[k + 1] = xk + b * dt + sig * sqdt * normals[k]
        if record_controls:
            U[k] = u
        if not np.all(np.isfinite(X[k + 1])):
            bad = int(np.argmax(~np.isfinite(X[k + 1])))
            raise BlowUpError(times[k + 1], f"path {bad}")
    return PathEnsemble(t0=t0, times=times, paths_tn=X, seed=cfg.seed, controls_tn=U)


class PerturbedStrategy(StrategyTable):
    """Base strategy overridden by a constant control on [t, t + eps)."""

    def __init__(self, base, t, eps, u):
        self.base = base
        self.window = (float(t), float(t) + float(eps))
        self.u = float(u)

        def fn(s, x):
            if self.window[0] <= s < self.window[1]:
                return self.u + 0.0 * np.asarray(x, dtype=float)
            return base(s, x)

        super().__init__(base.u_lo, base.u_hi, fn=fn, clamp=True)


def perturbed_strategy(psi_bar, t, eps, u, spec=None):
    if eps <= 0:
        raise DomainError("window width must be positive")
    if spec is not None:
        if t < 0 or t + eps > spec.horizon + 1e-12:
            raise DomainError("perturbation window outside the horizon")
        if not (spec.u_lo <= u <= spec.u_hi):
            raise DomainError("perturbation control outside the control interval")
    return PerturbedStrategy(psi_bar, t, eps, u)


# ---------------------------------------------------------------------------
# Cost evaluation
# ---------------------------------------------------------------------------

def _flow_ode(spec, strategy, t, x, s_nodes):
    """RK4 flow of dx/ds = b(s, x, psi(s, x)) along the given nodes."""
    xs = np.empty(s_nodes.size)
    xs[0] = x
    for k in range(s_nodes.size - 1):
        h = s_nodes[k + 1] - s_nodes[k]
        s = s_nodes[k]
        xc = xs[k]

        def f(ss, xx):
            return float(np.asarray(spec.drift(ss, xx, float(np.asarray(strategy(ss, xx))))))

        k1 = f(s, xc)
        k2 = f(s + 0.5 * h, xc + 0.5 * h * k1)
        k3 = f(s + 0.5 * h, xc + 0.5 * h * k2)
        k4 = f(s + h, xc + h * k3)
        xs[k + 1] = xc + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return xs


def _deterministic_cost(spec, strategy, t, x, panels=2048):
    """Composite Simpson on the reduced running integrand along the ODE flow.

    Integration is split at perturbation-window edges so each Simpson piece
    sees a smooth integrand.
    """
    if spec.reduced_running is None:
        raise UnsupportedCostClassError(
            "deterministic evaluation needs a reduced running integrand")
    T = spec.horizon
    breaks = [t, T]
    w = getattr(strategy, "window", None)
    if w is not None:
        for edge in w:
            if t < edge < T:
                breaks.append(edge)
    breaks = sorted(set(breaks))
    total = 0.0
    x_cur = float(x)
    for s0, s1 in zip(breaks[:-1], breaks[1:]):
        if s1 - s0 < 1e-15:
            continue
        # pieces are treated closed-from-the-left: clamp queries below s1 so a
        # half-open window keeps its own control on the whole piece
        s_in = np.nextafter(s1, s0)
        piece = lambda s, xx, _si=s_in: strategy(min(s, _si), xx)
        nodes = np.linspace(s0, s1, panels + 1)
        flow = _flow_ode(spec, piece, t, x_cur, nodes)
        u_vals = np.array([float(np.asarray(piece(s, xx))) for s, xx in zip(nodes, flow)])
        vals = np.asarray(spec.reduced_running(t, nodes, u_vals), dtype=float)
        total += _simpson(vals, nodes[1] - nodes[0])
        x_cur = flow[-1]
    return total


def _mc_cost_samples(spec, strategy, t, x, cfg, normals):
    """Conditional-expectation cost with per-path influence values."""
    mc = spec.mc_cost
    if mc is None:
        raise UnsupportedCostClassError(
            "spec declares bolza_condexp but carries no Monte Carlo cost decomposition")
    need_controls = mc.running is not None
    ens = simulate_forward(spec, strategy, t, x, cfg, normals=normals,
                           record_controls=need_controls)
    xt = ens.paths_tn[-1]
    path_part = np.zeros(ens.n_paths)
    if mc.running is not None:
        dt = ens.times[1] - ens.times[0]
        run = mc.running(ens.times[:-1, None], ens.paths_tn[:-1], ens.controls_tn)
        path_part = path_part + np.sum(np.asarray(run, dtype=float), axis=0) * dt
    if mc.terminal is not None:
        path_part = path_part + np.asarray(mc.terminal(xt), dtype=float)
    m1 = float(np.mean(xt))
    est = float(np.mean(path_part))
    phi = path_part.copy()
    if mc.outer is not None:
        est += float(mc.outer(m1))
        gp = float(mc.outer_prime(m1)) if mc.outer_prime is not None else 0.0
        phi = phi + gp * xt
    se = float(np.std(phi, ddof=1) / math.sqrt(ens.n_paths))
    return est, se, phi


def evaluate_cost(spec, strategy_or_control, t, x, cfg: MCConfig, normals=None):
    """Recursive cost at (t, x) under a strategy; returns (estimate, stderr).

    Deterministic problems integrate the reduced running integrand by
    quadrature (stderr 0); conditional-expectation problems evaluate the outer
    function on simulated moments.  Anything else is directed to the
    perturbation-field route.
    """
    strategy = strategy_or_control
    if not isinstance(strategy, StrategyTable) and callable(strategy):
        strategy = StrategyTable(spec.u_lo, spec.u_hi, fn=lambda s, xx: strategy_or_control(s, xx))
    if spec.cost_class == "deterministic":
        return _deterministic_cost(spec, strategy, t, x), 0.0
    if spec.cost_class == "bolza_condexp":
        if normals is None:
            n_steps = max(1, int(round((spec.horizon - t) * cfg.steps_per_unit)))
            normals = path_normals(cfg.seed, cfg.n_paths, n_steps, cfg.antithetic)
        est, se, _ = _mc_cost_samples(spec, strategy, t, x, cfg, normals)
        return est, se
    raise UnsupportedCostClassError(
        "general recursive costs are not simulated; use the perturbation-field route "
        "(pde.solve_perturbation)")


# ---------------------------------------------------------------------------
# Spike-perturbation verification
# ---------------------------------------------------------------------------

@dataclass
class VerifyReport:
    rows: list                    # dicts: t, eps, u, quotient, stderr
    details: list                 # per evaluation state
    tol_eq: float
    verdict: bool
    min_quotient_smallest_eps: float

    def passed(self):
        return self.verdict


def _quotient_mc(spec, psi_bar, t, x, cfg, normals, eps, u, base=None):
    if base is None:
        base = _mc_cost_samples(spec, psi_bar, t, x, cfg, normals)
    base_est, _, base_phi = base
    pert = perturbed_strategy(psi_bar, t, eps, u, spec)
    pert_est, _, pert_phi = _mc_cost_samples(spec, pert, t, x, cfg, normals)
    diff = pert_phi - base_phi
    q = (pert_est - base_est) / eps
    se = float(np.std(diff, ddof=1) / math.sqrt(diff.size)) / eps
    return q, se


def _quotient_quadrature(spec, psi_bar, t, x, eps, u):
    base, _ = evaluate_cost(spec, psi_bar, t, x, MCConfig(n_paths=2))
    pert = perturbed_strategy(psi_bar, t, eps, u, spec)
    pval, _ = evaluate_cost(spec, pert, t, x, MCConfig(n_paths=2))
    return (pval - base) / eps, 0.0


def verify_equilibrium(spec, psi_bar, t_list, cfg: MCConfig, tol_eq=0.05,
                       x0=None) -> VerifyReport:
    """Difference-quotient test of local optimality under spike perturbations.

    The closed-loop state is simulated from (0, x0); at each probe time the
    realized mean state and the 25/50/75% path states serve as evaluation
    points.  Perturbed and unperturbed costs share increments, the reported
    quotient per (t, eps, u) is the minimum over evaluation states, and the
    verdict passes iff the smallest-window minimum quotient clears -tol_eq.
    """
    x0 = spec.x0 if x0 is None else x0
    T = spec.horizon
    for t in t_list:
        if t + max(cfg.eps_list) > T + 1e-12:
            raise DomainError(f"probe time {t} leaves no room for the window")
    deterministic = spec.cost_class == "deterministic"
    rows = []
    details = []
    if deterministic:
        nodes = np.linspace(0.0, T, 2049)
        flow = _flow_ode(spec, psi_bar, 0.0, x0, nodes)
        for t in t_list:
            x_t = float(np.interp(t, nodes, flow))
            for eps in cfg.eps_list:
                for u in cfg.u_list:
                    q, se = _quotient_quadrature(spec, psi_bar, t, x_t, eps, u)
                    rows.append({"t": t, "eps": eps, "u": u, "quotient": q, "stderr": se})
                    details.append({"t": t, "state": "flow", "x": x_t, "eps": eps,
                                    "u": u, "quotient": q, "stderr": se})
    else:
        base = simulate_forward(spec, psi_bar, 0.0, x0, cfg)
        for t_idx, t in enumerate(t_list):
            xt = base.state_at(t)
            states = [("mean", float(np.mean(xt)))]
            for qq in (0.25, 0.5, 0.75):
                states.append((f"q{int(qq * 100)}", float(np.quantile(xt, qq))))
            seen = set()
            states = [(lbl, v) for lbl, v in states
                      if not (v in seen or seen.add(v))]
            n_steps = max(1, int(round((T - t) * cfg.steps_per_unit)))
            z = path_normals(cfg.seed + 7919 * (t_idx + 1), cfg.n_paths, n_steps,
                             cfg.antithetic)
            per_state = {}
            for label, x_e in states:
                base_cost = _mc_cost_samples(spec, psi_bar, t, x_e, cfg, z)
                for eps in cfg.eps_list:
                    for u in cfg.u_list:
                        q, se = _quotient_mc(spec, psi_bar, t, x_e, cfg, z, eps, u,
                                             base=base_cost)
                        per_state.setdefault((eps, u), []).append((q, se))
                        details.append({"t": t, "state": label, "x": x_e, "eps": eps,
                                        "u": u, "quotient": q, "stderr": se})
            for (eps, u), qs in per_state.items():
                qmin, se = min(qs, key=lambda p: p[0])
                rows.append({"t": t, "eps": eps, "u": u, "quotient": qmin, "stderr": se})
    eps_min = min(cfg.eps_list)
    small = [r["quotient"] for r in rows if abs(r["eps"] - eps_min) < 1e-15]
    min_q = min(small) if small else math.nan
    verdict = bool(min_q >= -tol_eq)
    return VerifyReport(rows=rows, details=details, tol_eq=tol_eq, verdict=verdict,
                        min_quotient_smallest_eps=min_q)


# ---------------------------------------------------------------------------
# Pre-committed controls and inconsistency gaps
# ---------------------------------------------------------------------------

def demonstrate_inconsistency(example_id, cfg: MCConfig = None, params=None):
    """Gap between the control committed at time 0 and the one re-derived at tau.

    Returns a dict with per-tau rows; stochastic benchmarks also report the
    fraction of paths whose re-derived control departs from the committed one.
    """
    cfg = cfg or MCConfig(n_paths=20000, seed=123)
    params = params or {}
    taus = np.asarray(params.get("taus", np.linspace(0.1, 0.9, 9)), dtype=float)
    rows = []
    if example_id == "ex31":
        # committed at (t, x): u(s) = (s - t - 1)/2, so the shift is tau/2
        for tau in taus:
            rows.append({"tau": float(tau), "gap": float(tau) / 2.0})
        return {"example": example_id, "rows": rows,
                "gap_formula": "tau/2", "exact": True}
    if example_id == "stackelberg":
        from .riccati import stackelberg_leader
        res = stackelberg_leader()
        for tau in taus:
            rows.append({"tau": float(tau), "gap": float(res.gap(tau))})
        return {"example": example_id, "rows": rows,
                "gap_formula": "(ln 2 - ln(2 - tau))/2", "exact": True}
    if example_id == "ex41":
        from .model import ex41 as _ex41
        T = float(params.get("T", 1.0))
        x0 = float(params.get("x0", 1.0))
        spec = _ex41(T=T, x0=x0)
        u0 = -x0 / (T + 1.0)
        committed = StrategyTable(spec.u_lo, spec.u_hi,
                                  fn=lambda s, x: u0 + 0.0 * np.asarray(x, dtype=float))
        ens = simulate_forward(spec, committed, 0.0, x0, cfg)
        for tau in taus:
            xt = ens.state_at(tau)
            reopt = -xt / (T - tau + 1.0)
            rel = np.abs(reopt - u0) / max(abs(u0), 1e-30)
            rows.append({"tau": float(tau), "gap": float(np.mean(np.abs(reopt - u0))),
                         "fraction_gt_1e-3": float(np.mean(rel > 1e-3))})
        return {"example": example_id, "rows": rows, "exact": False,
                "committed_control": u0}
    if example_id == "meanvar_precommit":
        from .model import mean_variance as _mv
        p = {"r": 0.03, "mu": 0.08, "sigma": 0.2, "gamma": 2.0, "T": 1.0, "x0": 1.0}
        p.update(params)
        spec = _mv(r=p["r"], mu=p["mu"], sigma=p["sigma"], gamma=p["gamma"],
                   T=p["T"], x0=p["x0"])
        r, mu, sg, gam, T, x0 = (p[k] for k in ("r", "mu", "sigma", "gamma", "T", "x0"))
        theta2 = ((mu - r) / sg) ** 2

        def d_anchor(t, x):
            return math.exp(theta2 * (T - t)) / gam + np.exp(r * (T - t)) * x

        d0 = d_anchor(0.0, x0)
        slope = (mu - r) / (sg * sg)
        committed = StrategyTable(
            spec.u_lo, spec.u_hi,
            fn=lambda s, x: -slope * (np.asarray(x, dtype=float) - d0 * math.exp(-r * (T - s))))
        ens = simulate_forward(spec, committed, 0.0, x0, cfg)
        for tau in taus:
            xt = ens.state_at(tau)
            gap_paths = slope * np.abs(d0 - d_anchor(float(tau), xt))
            rel = gap_paths / max(abs(slope * d0), 1e-30)
            rows.append({"tau": float(tau), "gap": float(np.mean(gap_paths)),
                         "fraction_gt_1e-3": float(np.mean(rel > 1e-3))})
        return {"example": example_id, "rows": rows, "exact": False}
    raise DomainError(f"unknown inconsistency example '{example_id}'")


# ---------------------------------------------------------------------------
# Representation cross-check
# ---------------------------------------------------------------------------

def _probe_generator_independence(spec):
    y1 = np.full(spec.m, 0.3)
    y2 = np.full(spec.m, -1.1)
    g1 = np.asarray(spec.generator(0.1, 0.2, float(np.clip(0.5, spec.u_lo, spec.u_hi)), y1, y1))
    g2 = np.asarray(spec.generator(0.1, 0.2, float(np.clip(0.5, spec.u_lo, spec.u_hi)), y2, y2))
    if not np.allclose(g1, g2, atol=1e-12):
        raise UnsupportedCostClassError(
            "representation check needs a generator independent of (y, z)")
    c1 = float(spec.cost_generator(0.05, 0.2, 0.1, 0.1, 0.0, y1, y1, 0.4, 0.4))
    c2 = float(spec.cost_generator(0.05, 0.2, 0.1, 0.1, 0.0, y1, y1, -2.0, 3.0))
    if abs(c1 - c2) > 1e-12:
        raise UnsupportedCostClassError(
            "representation check needs a cost generator independent of (y0, z0)")


def check_feynman_kac(spec, theta, theta0, strategy, sample_points, cfg: MCConfig):
    """Compare field values against sampled conditional expectations.

    At each (r, x): Y(r) = E[h(X_T) + int g ds] against theta(r, x), and the
    anchored cost against the diagonal of the cost field, with z-scores.
    """
    _probe_generator_independence(spec)
    rows = []
    for pt_idx, (r, x) in enumerate(sample_points):
        n_steps = max(1, int(round((spec.horizon - r) * cfg.steps_per_unit)))
        z = path_normals(cfg.seed + 104729 * (pt_idx + 1), cfg.n_paths, n_steps,
                         cfg.antithetic)
        ens = simulate_forward(spec, strategy, r, x, cfg, normals=z, record_controls=True)
        dt = ens.times[1] - ens.times[0]
        xt = ens.paths_tn[-1]
        hvals = np.atleast_2d(np.asarray(spec.terminal(xt), dtype=float))[0]
        acc = np.zeros(ens.n_paths)
        acc0 = np.zeros(ens.n_paths)
        j = int(np.argmin(np.abs(theta.times - r)))
        i = int(np.argmin(np.abs(theta.xs - x)))
        y_anchor = float(theta.values[0, j, i])
        for k in range(n_steps):
            sk = ens.times[k]
            gk = np.atleast_2d(np.asarray(
                spec.generator(sk, ens.paths_tn[k], ens.controls_tn[k], 0.0, 0.0),
                dtype=float))[0]
            acc = acc + gk * dt
            yk = theta.at(sk, ens.paths_tn[k])
            g0k = np.asarray(spec.cost_generator(r, sk, x, ens.paths_tn[k],
                                                 ens.controls_tn[k], yk, 0.0 * yk,
                                                 0.0, 0.0), dtype=float)
            acc0 = acc0 + g0k * dt
        y_samples = hvals + acc
        y_mc = float(np.mean(y_samples))
        y_se = float(np.std(y_samples, ddof=1) / math.sqrt(ens.n_paths))
        y_field = y_anchor
        h0_vals = np.asarray(spec.cost_terminal(r, x, xt, y_anchor), dtype=float)
        y0_samples = h0_vals + acc0
        y0_mc = float(np.mean(y0_samples))
        y0_se = float(np.std(y0_samples, ddof=1) / math.sqrt(ens.n_paths))
        y0_field = theta0.value(j, j, i, i, y_anchor)
        rows.append({
            "r": float(r), "x": float(x),
            "y_mc": y_mc, "y_field": y_field, "y_se": y_se,
            "z_y": (y_mc - y_field) / max(y_se, 1e-300),
            "y0_mc": y0_mc, "y0_field": y0_field, "y0_se": y0_se,
            "z_y0": (y0_mc - y0_field) / max(y0_se, 1e-300),
        })
    return rows


FLOAT_FMT = "%.17g"


def emit_verify_csv(report: VerifyReport, path):
    with open(path, "w") as f:
        f.write("t,eps,u,quotient,stderr\n")
        for r in report.rows:
            f.write(",".join(FLOAT_FMT % r[k] for k in ("t", "eps", "u", "quotient", "stderr")) + "\n")


def emit_gap_csv(gap_report, path):
    with open(path, "w") as f:
        f.write("tau,gap\n")
        for r in gap_report["rows"]:
            f.write(",".join(FLOAT_FMT % r[k] for k in ("tau", "gap")) + "\n")
