"""Batch front-end: parse a run config, dispatch a solver, write CSV artifacts,
a human-readable summary, and a manifest with output hashes.

Exit codes: 0 success, 1 solver error, 2 config error, 3 failed verification.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DomainError, FBControlError, UnsupportedCostClassError
from . import model, riccati, pde, mc


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(outdir: Path, command, config):
    outputs = {}
    for p in sorted(outdir.iterdir()):
        if p.name == "manifest.json" or not p.is_file():
            continue
        outputs[p.name] = _sha256(p)
    doc = {"command": command, "config": config, "version": __version__,
           "outputs": outputs}
    (outdir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _summary(outdir: Path, lines):
    (outdir / "summary.txt").write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_dict(args):
    skip = {"func"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _load_config(args):
    if args.config:
        return json.loads(Path(args.config).read_text())
    return {}


def _parse_eps(text):
    return tuple(float(v) for v in text.split(","))


def _parse_times(text):
    return tuple(float(v) for v in text.split(","))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_lq_riccati(args):
    out = _outdir(args)
    doc = _load_config(args)
    keys = ("A", "B", "C", "D", "Ahat", "Bhat", "Chat", "Dhat", "H",
            "Q", "M", "N", "R", "G1", "G2", "G3", "g", "T")
    defaults = {"A": 0.0, "B": 1.0, "C": 1.0, "D": 0.0, "H": 1.0,
                "R": 2.0, "G2": 2.0, "T": 1.0}
    vals = {k: doc.get(k, defaults.get(k, 0.0)) for k in keys}
    lq = riccati.LQSpec(**vals)
    traj = riccati.solve_riccati_lq(lq, steps=args.steps)
    riccati.emit_riccati_csv(traj, out / "lq_riccati.csv")
    _summary(out, [
        f"lq-riccati: steps={args.steps} T={lq.T}",
        f"phi1(0)={traj.phi[0, 0]:.12g} psi(0)={traj.psi[0]:.12g} v(0)={traj.v[0]:.12g}",
        f"terminal residual={traj.terminal_residual:.3g}",
    ])
    _write_manifest(out, "lq-riccati", _config_dict(args))
    return 0


def cmd_meanfield_lq(args):
    out = _outdir(args)
    doc = _load_config(args)
    vals = {k: doc.get(k, d) for k, d in
            (("A", 0.0), ("B", 1.0), ("C", 1.0), ("D", 0.0), ("Q", 0.0),
             ("R", 2.0), ("G1", 0.0), ("G2", 2.0), ("T", 1.0))}
    grid, phi, phihat, psi = riccati.solve_meanfield_riccati(steps=args.steps, **vals)
    with open(out / "meanfield.csv", "w") as f:
        f.write("t,phi,phihat,psi\n")
        for k in range(grid.size):
            f.write(",".join("%.17g" % v for v in (grid[k], phi[k], phihat[k], psi[k])) + "\n")
    _summary(out, [
        f"meanfield-lq: steps={args.steps}",
        f"phi(0)={phi[0]:.12g} phihat(0)={phihat[0]:.12g} psi(0)={psi[0]:.12g}",
    ])
    _write_manifest(out, "meanfield-lq", _config_dict(args))
    return 0


def _mv_lq_spec(r, mu, sigma, gamma, T):
    return riccati.LQSpec(A=r, B=mu - r, C=0.0, D=sigma, H=1.0,
                          G1=gamma, G2=-gamma, G3=0.0, g=-1.0, T=T)


def cmd_meanvar(args):
    out = _outdir(args)
    r, mu, sigma, gamma, T = args.r, args.mu, args.sigma, args.gamma, args.T
    res = riccati.meanvar_equilibrium(r, mu, sigma, gamma, T, steps=args.steps)
    traj = riccati.solve_riccati_lq(_mv_lq_spec(r, mu, sigma, gamma, T), steps=args.steps)
    riccati.emit_riccati_csv(traj, out / "mv_riccati.csv")
    lines = [
        f"meanvar: r={r} mu={mu} sigma={sigma} gamma={gamma} T={T}",
        f"v(0) = {res.v[0]:.7f} (closed form {float(res.closed['vbar'](0.0)):.7f})",
        f"phi1(0) = {res.phi1[0]:.7f} (closed form {float(res.closed['phi1'](0.0)):.7f})",
        f"max rel err phi1 = {res.max_rel_err_phi1:.3g}, v = {res.max_rel_err_v:.3g}",
        "variant closed forms failing the defining ODEs (comparison only): "
        f"phi1_alt(0)={float(res.variants['phi1_alt'](0.0)):.7g} "
        f"vbar_alt(0)={float(res.variants['vbar_alt'](0.0)):.7g}",
    ]
    spec = model.mean_variance(r=r, mu=mu, sigma=sigma, gamma=gamma, T=T, x0=args.x0)
    grid = pde.default_grid(spec, nx=args.grid_nx, nt=args.grid_nt)
    theta, theta0, strat, log = pde.equilibrium_fixed_point(spec, grid, tol=args.tol)
    pde.emit_strategy_csv(strat, out / "mv_strategy_pde.csv")
    pde.emit_iteration_csv(log, out / "mv_iterations.csv")
    ref = res.closed["vbar"](grid.times)[:, None] + 0.0 * grid.xs[None, :]
    err = float(np.max(np.abs(strat.values - ref) / np.abs(ref)))
    lines.append(f"pde cross-check: converged={log.converged} iters={log.iterations} "
                 f"max rel strategy err={err:.3g}")
    cfg = mc.MCConfig(n_paths=args.paths, seed=args.seed, eps_list=_parse_eps(args.eps))
    report = mc.verify_equilibrium(spec, res.strategy, _parse_times(args.times), cfg,
                                   tol_eq=args.tol_eq)
    mc.emit_verify_csv(report, out / "mv_verify.csv")
    lines.append(f"spike verification: verdict={'PASS' if report.verdict else 'FAIL'} "
                 f"min quotient (smallest window)={report.min_quotient_smallest_eps:.4g}")
    _summary(out, lines)
    _write_manifest(out, "meanvar", _config_dict(args))
    return 0 if report.verdict else 3


def cmd_planner(args):
    out = _outdir(args)
    sol = riccati.solve_planner(args.r, args.mu, args.sigma, args.gamma, args.alpha,
                                args.rho1, args.rho2, args.lam, args.T, steps=args.steps)
    riccati.emit_planner_csv(sol, out / "planner.csv")
    _summary(out, [
        f"planner: theta1(0)={sol.theta1[0]:.10g} theta2(0)={sol.theta2[0]:.10g}",
        f"investment coefficient = {sol.investment_coeff:.10g}",
        f"consumption coefficient at 0 = {sol.consumption_coeff[0]:.10g}",
    ])
    _write_manifest(out, "planner", _config_dict(args))
    return 0


def cmd_stackelberg(args):
    out = _outdir(args)
    res = riccati.stackelberg_leader()
    gaps = mc.demonstrate_inconsistency("stackelberg")
    mc.emit_gap_csv(gaps, out / "stackelberg_gap.csv")
    qc = res.leader_cost_quadrature(0.0)
    _summary(out, [
        "stackelberg: time-consistent equilibrium value = -0.5",
        f"committed control at (0, x): u(s) = (ln 2 - ln(2 - s) - 1)/2; u(0) = {float(res.precommitted(0.0, 0.0)):.6f}",
        f"leader cost at 0: quadrature {qc:.12f} vs closed {res.leader_cost(0.0):.12f}",
        "gap table written to stackelberg_gap.csv "
        f"(gap(0.5) = {float(res.gap(0.5)):.7f})",
    ])
    _write_manifest(out, "stackelberg", _config_dict(args))
    return 0


def cmd_pde_solve(args):
    out = _outdir(args)
    doc = _load_config(args)
    family = doc.get("family", "recursive_lq")
    spec = model.make_spec(family, doc.get("params"), doc.get("T"), doc.get("U"))
    if args.grid_x_lo is not None and args.grid_x_hi is not None:
        grid = pde.GridSpec(args.grid_x_lo, args.grid_x_hi, args.grid_nx, args.grid_nt,
                            spec.horizon, ny=args.grid_ny)
    else:
        grid = pde.default_grid(spec, nx=args.grid_nx, nt=args.grid_nt, ny=args.grid_ny)
    theta, theta0, strat, log = pde.equilibrium_fixed_point(spec, grid, tol=args.tol)
    pde.emit_theta_csv(theta, out / "theta.csv", stride=max(1, args.grid_nx // 33))
    pde.emit_theta0_csv(theta0, theta, out / "theta0.csv", stride=max(1, args.grid_nx // 17))
    pde.emit_strategy_csv(strat, out / "strategy.csv")
    pde.emit_iteration_csv(log, out / "iterations.csv")
    _summary(out, [
        f"pde-solve[{family}]: converged={log.converged} iterations={log.iterations}",
        f"final residuals: {log.rows[-1] if log.rows else 'n/a'}",
        f"strategy max x-jump (minimizer continuity probe): {log.strategy_max_jump:.3g}",
    ])
    _write_manifest(out, "pde-solve", _config_dict(args))
    return 0


def _equilibrium_strategy_for(spec):
    if spec.name == "mean_variance":
        p = spec.params
        closed = riccati.meanvar_closed_form(p["r"], p["mu"], p["sigma"], p["gamma"],
                                             spec.horizon)
        return model.StrategyTable(spec.u_lo, spec.u_hi,
                                   fn=lambda s, x: closed["vbar"](s) + 0.0 * np.asarray(x, dtype=float))
    if spec.name in ("stackelberg", "ex31"):
        return model.StrategyTable(spec.u_lo, spec.u_hi,
                                   fn=lambda s, x: -0.5 + 0.0 * np.asarray(x, dtype=float))
    raise DomainError(f"no built-in equilibrium strategy for family '{spec.name}'")


def cmd_mc_verify(args):
    out = _outdir(args)
    doc = _load_config(args)
    family = doc.get("family", "mean_variance")
    spec = model.make_spec(family, doc.get("params"), doc.get("T"), doc.get("U"))
    if args.strategy_const is not None:
        strat = model.StrategyTable(
            spec.u_lo, spec.u_hi,
            fn=lambda s, x: args.strategy_const + 0.0 * np.asarray(x, dtype=float))
    else:
        strat = _equilibrium_strategy_for(spec)
    cfg = mc.MCConfig(n_paths=args.paths, seed=args.seed, eps_list=_parse_eps(args.eps))
    report = mc.verify_equilibrium(spec, strat, _parse_times(args.times), cfg,
                                   tol_eq=args.tol_eq)
    mc.emit_verify_csv(report, out / "verify.csv")
    _summary(out, [
        f"mc-verify[{family}]: verdict={'PASS' if report.verdict else 'FAIL'}",
        f"min quotient at smallest window = {report.min_quotient_smallest_eps:.6g} "
        f"(tolerance -{report.tol_eq})",
    ])
    _write_manifest(out, "mc-verify", _config_dict(args))
    return 0 if report.verdict else 3


def cmd_inconsistency(args):
    out = _outdir(args)
    cfg = mc.MCConfig(n_paths=args.paths, seed=args.seed)
    gaps = mc.demonstrate_inconsistency(args.example, cfg)
    mc.emit_gap_csv(gaps, out / "gap.csv")
    lines = [f"inconsistency[{args.example}]:"]
    for row in gaps["rows"]:
        extra = "".join(f" {k}={v:.6g}" for k, v in row.items() if k not in ("tau", "gap"))
        lines.append(f"  tau={row['tau']:.3f} gap={row['gap']:.8g}{extra}")
    _summary(out, lines)
    _write_manifest(out, "inconsistency", _config_dict(args))
    return 0


def cmd_fk_check(args):
    out = _outdir(args)
    spec = model.mean_variance(r=args.r, mu=args.mu, sigma=args.sigma, gamma=args.gamma,
                               T=args.T, x0=args.x0)
    grid = pde.default_grid(spec, nx=args.grid_nx, nt=args.grid_nt)
    theta, theta0 = pde.mv_reference_fields(spec, grid)
    strat = _equilibrium_strategy_for(spec)
    pts = [(grid.times[j], grid.xs[grid.nx // 2 + k])
           for j, k in ((0, 0), (grid.nt // 4, -5), (grid.nt // 2, 5),
                        (grid.nt // 2, 0), (3 * grid.nt // 4, 2))]
    cfg = mc.MCConfig(n_paths=args.paths, seed=args.seed)
    rows = mc.check_feynman_kac(spec, theta, theta0, strat, pts, cfg)
    with open(out / "fk.csv", "w") as f:
        f.write("r,x,y_mc,y_field,z_y,y0_mc,y0_field,z_y0\n")
        for row in rows:
            f.write(",".join("%.17g" % row[k] for k in
                             ("r", "x", "y_mc", "y_field", "z_y", "y0_mc", "y0_field", "z_y0")) + "\n")
    worst = max(max(abs(r_["z_y"]), abs(r_["z_y0"])) for r_ in rows)
    ok = worst <= 3.0
    _summary(out, [f"fk-check: worst |z| = {worst:.3f} -> {'PASS' if ok else 'FAIL'}"])
    _write_manifest(out, "fk-check", _config_dict(args))
    return 0 if ok else 3


# ---------------------------------------------------------------------------
# Selftest
# ---------------------------------------------------------------------------

def _selftest_checks(seed):
    checks = []

    def add(name, fn):
        checks.append((name, fn))

    def mv_closed():
        res = riccati.meanvar_equilibrium(0.03, 0.08, 0.2, 2.0, 1.0, steps=4000)
        assert res.max_rel_err_phi1 < 1e-8 and res.max_rel_err_v < 1e-8
        return f"rel errs {res.max_rel_err_phi1:.2e}/{res.max_rel_err_v:.2e}"
    add("mv_riccati_closed_form", mv_closed)

    def mv_ident():
        traj = riccati.solve_riccati_lq(_mv_lq_spec(0.03, 0.08, 0.2, 2.0, 1.0), steps=4000)
        gam = 2.0
        assert np.max(np.abs(traj.phi[1] + gam)) < 1e-12
        assert np.max(np.abs(traj.phi[2])) < 1e-12
        assert np.max(np.abs(traj.phi[0] - gam * traj.phi[5] ** 2)) < 1e-8
        assert np.max(np.abs(traj.psi)) < 1e-8
        return "phi2=-gamma, phi3=0, phi1=gamma phi6^2, psi=0"
    add("mv_structural_identities", mv_ident)

    def crossroute():
        grid, phi, phihat, psi = riccati.solve_meanfield_riccati(
            0.0, 1.0, 1.0, 0.0, 0.0, 2.0, 0.0, 2.0, T=1.0, steps=4000)
        lq = riccati.LQSpec(A=0.0, B=1.0, C=1.0, D=0.0, H=1.0, R=2.0, G1=0.0, G2=2.0, T=1.0)
        traj = riccati.solve_riccati_lq(lq, steps=4000)
        phi_b = traj.phi[0]
        phihat_b = traj.phi[0] + traj.phi[5] * traj.phi[1] * traj.phi[5]
        err = max(float(np.max(np.abs(phi - phi_b))), float(np.max(np.abs(phihat - phihat_b))))
        assert err < 1e-8
        return f"route diff {err:.2e}"
    add("meanfield_cross_route", crossroute)

    def stack():
        res = riccati.stackelberg_leader()
        assert res.equilibrium_value == -0.5
        assert abs(float(res.gap(0.5)) - 0.5 * math.log(4.0 / 3.0)) < 1e-15
        assert abs(res.leader_cost_quadrature(0.0) - res.leader_cost(0.0)) < 1e-10
        return "equilibrium -1/2, gap and cost closed forms match"
    add("stackelberg_closed_forms", stack)

    def ex31_cost():
        spec = model.ex31()
        u_opt = model.StrategyTable(spec.u_lo, spec.u_hi,
                                    fn=lambda s, x: (s - 0.0 - 1.0) / 2.0 + 0.0 * np.asarray(x, dtype=float))
        cost, _ = mc.evaluate_cost(spec, u_opt, 0.0, 0.0, mc.MCConfig(n_paths=2))
        assert abs(cost - (-1.0 / 12.0)) < 1e-10
        eq = model.StrategyTable(spec.u_lo, spec.u_hi,
                                 fn=lambda s, x: -0.5 + 0.0 * np.asarray(x, dtype=float))
        cfg = mc.MCConfig(n_paths=2, eps_list=(0.1, 0.05, 0.025))
        report = mc.verify_equilibrium(spec, eq, (0.0, 0.5), cfg, tol_eq=1e-8)
        assert report.verdict
        return f"cost {cost:.12f}, equilibrium quotients nonnegative"
    add("ex31_cost_and_quotients", ex31_cost)

    def kernel():
        val = model.heat_kernel(lambda r, m: 0.5, 0.0, 0.0, 1.0, 0.0)
        assert abs(val - 1.0 / math.sqrt(2 * math.pi)) < 1e-12
        mu = np.linspace(-8.0, 8.0, 2049)
        vals = np.array([model.heat_kernel(lambda r, m: 0.5, 0.0, 0.0, 1.0, m) for m in mu])
        mass = riccati._simpson(vals, mu[1] - mu[0])
        assert abs(mass - 1.0) < 1e-9
        return f"normalization {mass:.12f}"
    add("heat_kernel", kernel)

    def pde_linear():
        spec = model.linear_heat(a=1.0, terminal="x")
        grid = pde.GridSpec(-4.0, 4.0, 41, 41, 1.0)
        strat = model.StrategyTable(-1, 1, fn=lambda s, x: 0.0 * np.asarray(x, dtype=float))
        theta = pde.solve_theta(spec, strat, grid)
        err = float(np.max(np.abs(theta.values[0] - grid.xs[None, :])))
        assert err < 1e-12
        v = pde.step_parabolic(np.zeros(41), np.ones(41), np.zeros(41), np.ones(41), 0.01, 0.2)
        assert float(np.max(np.abs(v - 0.01))) < 1e-12
        return f"linear terminal exact ({err:.2e})"
    add("pde_linear_exactness", pde_linear)

    def planner():
        sym = riccati.solve_planner(0.03, 0.08, 0.2, 0.5, 0.3, 0.05, 0.05, 0.4, steps=2000)
        assert float(np.max(np.abs(sym.theta1 - sym.theta2))) < 1e-12
        ordered = riccati.solve_planner(0.03, 0.08, 0.2, 0.5, 0.3, 0.08, 0.02, 0.4, steps=2000)
        assert np.all(ordered.theta1 <= ordered.theta2 + 1e-12)
        return "symmetry and ordering hold"
    add("planner_symmetry_order", planner)

    def determinism():
        spec = model.gbm(mu=0.2, sigma=0.3)
        strat = model.StrategyTable(-1, 1, fn=lambda s, x: 0.0 * np.asarray(x, dtype=float))
        cfg = mc.MCConfig(n_paths=500, seed=seed)
        e1 = mc.simulate_forward(spec, strat, 0.0, 1.0, cfg)
        e2 = mc.simulate_forward(spec, strat, 0.0, 1.0, cfg)
        assert np.array_equal(e1.paths, e2.paths)
        mv = model.mean_variance(r=0.0, mu=0.1, sigma=0.2, gamma=1.0, x0=1.0)
        vbar = 0.1 / (1.0 * 0.04)
        eq = model.StrategyTable(mv.u_lo, mv.u_hi,
                                 fn=lambda s, x: vbar + 0.0 * np.asarray(x, dtype=float))
        cfg2 = mc.MCConfig(n_paths=200, seed=seed, eps_list=(0.1,), u_list=(vbar,))
        rep = mc.verify_equilibrium(mv, eq, (0.2,), cfg2, tol_eq=0.05)
        assert all(r["quotient"] == 0.0 for r in rep.rows)
        return "bit-identical ensembles; CRN quotient exactly 0"
    add("mc_determinism_crn", determinism)

    def fk_small():
        spec = model.mean_variance(r=0.0, mu=0.1, sigma=0.2, gamma=1.0, x0=1.0)
        grid = pde.default_grid(spec, nx=65, nt=65)
        theta, theta0 = pde.mv_reference_fields(spec, grid)
        strat = _equilibrium_strategy_for(spec)
        cfg = mc.MCConfig(n_paths=4000, seed=seed)
        rows = mc.check_feynman_kac(spec, theta, theta0, strat,
                                    [(0.0, spec.x0), (grid.times[32], grid.xs[40])], cfg)
        worst = max(max(abs(r["z_y"]), abs(r["z_y0"])) for r in rows)
        assert worst <= 4.0
        return f"worst |z| = {worst:.2f}"
    add("fk_representation_small", fk_small)

    return checks


def cmd_selftest(args):
    out = _outdir(args)
    results = []
    for name, fn in _selftest_checks(args.seed):
        try:
            detail = fn()
            results.append((name, True, detail))
            print(f"{name}: PASS ({detail})")
        except AssertionError as exc:
            results.append((name, False, str(exc) or "assertion failed"))
            print(f"{name}: FAIL ({exc})")
        except FBControlError as exc:
            results.append((name, False, f"{type(exc).__name__}: {exc}"))
            print(f"{name}: FAIL ({exc})")
    with open(out / "selftest.csv", "w") as f:
        f.write("check,passed,detail\n")
        for name, ok, detail in results:
            f.write(f"{name},{int(ok)},\"{detail}\"\n")
    # representative artifacts, all deterministically formatted
    res = riccati.meanvar_equilibrium(0.03, 0.08, 0.2, 2.0, 1.0, steps=2000)
    traj = riccati.solve_riccati_lq(_mv_lq_spec(0.03, 0.08, 0.2, 2.0, 1.0), steps=2000)
    riccati.emit_riccati_csv(traj, out / "mv_riccati.csv")
    sol = riccati.solve_planner(0.03, 0.08, 0.2, 0.5, 0.3, 0.08, 0.02, 0.4, steps=2000)
    riccati.emit_planner_csv(sol, out / "planner.csv")
    mc.emit_gap_csv(mc.demonstrate_inconsistency("stackelberg"), out / "stackelberg_gap.csv")
    ok_all = all(ok for _, ok, _ in results)
    _summary(out, [f"selftest: {sum(ok for _, ok, _ in results)}/{len(results)} checks passed",
                   f"verdict: {'PASS' if ok_all else 'FAIL'}"])
    _write_manifest(out, "selftest", _config_dict(args))
    return 0 if ok_all else 3


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="fbcontrol",
                                description="time-consistent control of forward-backward SDEs")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, grid=False, monte=False):
        sp.add_argument("--config", default=None, help="JSON problem config")
        sp.add_argument("--out", default="fbcontrol_out", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--steps", type=int, default=10000, help="ODE steps")
        if grid:
            sp.add_argument("--grid-nx", dest="grid_nx", type=int, default=65)
            sp.add_argument("--grid-nt", dest="grid_nt", type=int, default=201)
            sp.add_argument("--grid-ny", dest="grid_ny", type=int, default=17)
            sp.add_argument("--grid-x-lo", dest="grid_x_lo", type=float, default=None)
            sp.add_argument("--grid-x-hi", dest="grid_x_hi", type=float, default=None)
            sp.add_argument("--tol", type=float, default=1e-6, help="fixed-point tolerance")
        if monte:
            sp.add_argument("--paths", type=int, default=20000)
            sp.add_argument("--eps", default="0.1,0.05,0.025")
            sp.add_argument("--times", default="0.0,0.45,0.9")
            sp.add_argument("--tol-eq", dest="tol_eq", type=float, default=0.05)

    sp = sub.add_parser("lq-riccati", help="seven-function backward system")
    common(sp)
    sp.set_defaults(func=cmd_lq_riccati)

    sp = sub.add_parser("meanfield-lq", help="two-function reduction")
    common(sp)
    sp.set_defaults(func=cmd_meanfield_lq)

    sp = sub.add_parser("meanvar", help="wealth/variance equilibrium + cross-checks")
    common(sp, grid=True, monte=True)
    sp.add_argument("--r", type=float, default=0.03)
    sp.add_argument("--mu", type=float, default=0.08)
    sp.add_argument("--sigma", type=float, default=0.2)
    sp.add_argument("--gamma", type=float, default=2.0)
    sp.add_argument("--T", type=float, default=1.0)
    sp.add_argument("--x0", type=float, default=1.0)
    sp.set_defaults(func=cmd_meanvar)

    sp = sub.add_parser("planner", help="two-agent consumption/investment coefficients")
    common(sp)
    for name, d in (("r", 0.03), ("mu", 0.08), ("sigma", 0.2), ("gamma", 0.5),
                    ("alpha", 0.3), ("rho1", 0.08), ("rho2", 0.02), ("lam", 0.4),
                    ("T", 1.0)):
        sp.add_argument(f"--{name}", type=float, default=d)
    sp.set_defaults(func=cmd_planner)

    sp = sub.add_parser("stackelberg", help="leader benchmark closed forms")
    common(sp)
    sp.set_defaults(func=cmd_stackelberg)

    sp = sub.add_parser("pde-solve", help="equilibrium fixed point on a grid")
    common(sp, grid=True)
    sp.set_defaults(func=cmd_pde_solve)

    sp = sub.add_parser("mc-verify", help="spike-perturbation verification")
    common(sp, monte=True)
    sp.add_argument("--strategy-const", dest="strategy_const", type=float, default=None,
                    help="override: constant strategy value")
    sp.set_defaults(func=cmd_mc_verify)

    sp = sub.add_parser("inconsistency", help="committed vs re-derived control gap")
    common(sp)
    sp.add_argument("--example", choices=("ex31", "ex41", "stackelberg", "meanvar_precommit"),
                    default="stackelberg")
    sp.add_argument("--paths", type=int, default=20000)
    sp.set_defaults(func=cmd_inconsistency)

    sp = sub.add_parser("fk-check", help="field representation vs sampled expectations")
    common(sp, grid=True)
    sp.add_argument("--paths", type=int, default=20000)
    sp.add_argument("--r", type=float, default=0.0)
    sp.add_argument("--mu", type=float, default=0.1)
    sp.add_argument("--sigma", type=float, default=0.2)
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--T", type=float, default=1.0)
    sp.add_argument("--x0", type=float, default=1.0)
    sp.set_defaults(func=cmd_fk_check)

    sp = sub.add_parser("selftest", help="fast deterministic acceptance subset")
    common(sp)
    sp.set_defaults(func=cmd_selftest)

    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except (DomainError, UnsupportedCostClassError, json.JSONDecodeError,
            FileNotFoundError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FBControlError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
