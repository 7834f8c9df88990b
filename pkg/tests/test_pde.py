from dataclasses import replace

import numpy as np
import pytest

from fbcontrol import model, pde
from fbcontrol.errors import DegeneracyError, DomainError, YRangeError
from fbcontrol.model import ControlProblemSpec, StrategyTable
from fbcontrol.riccati import meanvar_closed_form


def const_strategy(value, U=(-1.0, 1.0)):
    return StrategyTable(U[0], U[1],
                         fn=lambda s, x, _v=value: _v + 0.0 * np.asarray(x, dtype=float))


ZERO = const_strategy(0.0)


# ---------------------------------------------------------------------------
# step_parabolic
# ---------------------------------------------------------------------------

def test_step_preserves_linear_terminal():
    xs = np.linspace(-5.0, 5.0, 101)
    v = xs.copy()
    for _ in range(50):
        v = pde.step_parabolic(v, np.ones_like(xs), np.zeros_like(xs),
                               np.zeros_like(xs), 1e-3, xs[1] - xs[0])
    assert np.max(np.abs(v - xs)) < 1e-12


def test_step_quadratic_growth():
    # a = 1, h = x^2: theta(s, x) = x^2 + 2 (T - s)
    xs = np.arange(-5.0, 5.0 + 1e-12, 0.05)
    v = xs ** 2
    n = 1000
    for _ in range(n):
        v = pde.step_parabolic(v, np.ones_like(xs), np.zeros_like(xs),
                               np.zeros_like(xs), 1e-3, 0.05)
    ref = xs ** 2 + 2.0 * (n * 1e-3)
    interior = np.abs(xs) <= 4.0
    assert np.max(np.abs(v - ref)[interior]) < 5e-3


def test_step_pure_source():
    xs = np.linspace(-1.0, 1.0, 21)
    v = np.zeros_like(xs)
    for _ in range(100):
        v = pde.step_parabolic(v, np.ones_like(xs), np.zeros_like(xs),
                               np.ones_like(xs), 1e-3, xs[1] - xs[0])
    assert np.max(np.abs(v - 0.1)) < 1e-12


def test_step_degeneracy_error():
    xs = np.linspace(-1.0, 1.0, 21)
    with pytest.raises(DegeneracyError):
        pde.step_parabolic(np.zeros_like(xs), np.zeros_like(xs), np.zeros_like(xs),
                           np.zeros_like(xs), 1e-3, 0.1, lam0=0.5)


# ---------------------------------------------------------------------------
# solve_theta
# ---------------------------------------------------------------------------

def test_solve_theta_linear_identity():
    spec = model.linear_heat(a=1.0, terminal="x")
    grid = pde.GridSpec(-4.0, 4.0, 81, 101, 1.0)
    theta = pde.solve_theta(spec, ZERO, grid)
    assert np.max(np.abs(theta.values[0] - grid.xs[None, :])) < 1e-12


def test_solve_theta_mean_variance_drift_oracle():
    # under the x-free equilibrium control the field is the conditional mean:
    # m(s, x) = x e^{r(T-s)} + (mu-r) c (T-s), c = (mu-r)/(gamma sigma^2)
    r, mu, sg, gam = 0.03, 0.08, 0.2, 2.0
    spec = model.mean_variance(r=r, mu=mu, sigma=sg, gamma=gam, x0=1.0)
    closed = meanvar_closed_form(r, mu, sg, gam, 1.0)
    strat = StrategyTable(spec.u_lo, spec.u_hi,
                          fn=lambda s, x: closed["vbar"](s) + 0.0 * np.asarray(x, dtype=float))
    grid = pde.default_grid(spec, nx=129, nt=501)
    theta = pde.solve_theta(spec, strat, grid)
    c = (mu - r) / (gam * sg * sg)
    ref = grid.xs[None, :] * np.exp(r * (1.0 - grid.times))[:, None] \
        + (mu - r) * c * (1.0 - grid.times)[:, None]
    interior = slice(5, -5)
    assert np.max(np.abs(theta.values[0][:, interior] - ref[:, interior])) < 1e-2


def test_solve_theta_maximum_principle():
    spec = model.linear_heat(a=1.0, terminal="gaussians")
    grid = pde.GridSpec(-6.0, 6.0, 121, 201, 1.0)
    theta = pde.solve_theta(spec, ZERO, grid)
    h = spec.terminal(grid.xs)
    assert theta.values[0].min() >= h.min() - 1e-8
    assert theta.values[0].max() <= h.max() + 1e-8


def test_grid_spec_guards():
    with pytest.raises(DomainError):
        pde.GridSpec(-1.0, 1.0, 4, 33, 1.0)
    with pytest.raises(DomainError):
        pde.GridSpec(1.0, -1.0, 33, 33, 1.0)


# ---------------------------------------------------------------------------
# cost field and diagonal extraction
# ---------------------------------------------------------------------------

def test_theta0_trivial_identity_in_y():
    # h0 = y, zero cost generator: the cost field equals y at every anchor
    spec = replace(model.linear_heat(a=0.5, terminal="x"), terminal_split=None)
    grid = pde.GridSpec(-3.0, 3.0, 9, 9, 1.0, y_lo=-4.0, y_hi=4.0, ny=5)
    theta = pde.solve_theta(spec, ZERO, grid)
    t0 = pde.solve_theta0_family(spec, ZERO, theta, None, grid)
    assert t0.mode == "general"
    for k in (0, 3):
        for l in (0, 4):
            for y in (-2.0, 0.5, 3.0):
                assert abs(t0.value(k, 6, l, 3, y) - y) == 0.0


def test_theta0_upper_triangle_guard_and_y_range():
    spec = replace(model.linear_heat(a=0.5, terminal="x"), terminal_split=None)
    grid = pde.GridSpec(-3.0, 3.0, 9, 9, 1.0, y_lo=-4.0, y_hi=4.0, ny=5)
    theta = pde.solve_theta(spec, ZERO, grid)
    t0 = pde.solve_theta0_family(spec, ZERO, theta, None, grid)
    with pytest.raises(DomainError):
        t0.value(5, 3, 0, 0, 0.0)
    with pytest.raises(YRangeError):
        t0.value(0, 5, 0, 0, 9.0)


def test_theta0_separable_class_y_variation_and_dy():
    spec = model.bkm_separable()
    grid = pde.GridSpec(-2.0, 2.0, 9, 9, 1.0, y_lo=-3.0, y_hi=3.0, ny=5)
    theta = pde.solve_theta(spec, ZERO, grid)
    general = pde.solve_theta0_family(replace(spec, terminal_split=None), ZERO,
                                      theta, None, grid)
    split = spec.terminal_split
    worst = 0.0
    for k in (0, 3):
        for l in (2, 6):
            for i in (1, 4, 7):
                vals = [general.value(k, 5, l, i, y)
                        - float(split.ghat(grid.times[k], grid.xs[l], y))
                        for y in (-1.0, 0.0, 2.0)]
                worst = max(worst, max(vals) - min(vals))
    assert worst < 1e-10

    separable = pde.solve_theta0_family(spec, ZERO, theta, None, grid)
    bg = pde.extract_diagonal(general, theta)
    bs = pde.extract_diagonal(separable, theta)
    assert np.max(np.abs(bg.d - bs.d)) < 1e-10
    dy_exact = split.ghat_y(grid.times[:, None], grid.xs[None, :], theta.values[0])
    assert np.max(np.abs(bs.dy - dy_exact)) == 0.0
    assert np.max(np.abs(bg.dy - dy_exact)) < 1e-8


def test_theta0_mean_variance_moment_oracle():
    # Gaussian moments under the equilibrium drift give the state-part field
    r, mu, sg, gam = 0.03, 0.08, 0.2, 2.0
    spec = model.mean_variance(r=r, mu=mu, sigma=sg, gamma=gam, x0=1.0)
    closed = meanvar_closed_form(r, mu, sg, gam, 1.0)
    strat = StrategyTable(spec.u_lo, spec.u_hi,
                          fn=lambda s, x: closed["vbar"](s) + 0.0 * np.asarray(x, dtype=float))
    grid = pde.default_grid(spec, nx=129, nt=501)
    theta = pde.solve_theta(spec, strat, grid)
    t0 = pde.solve_theta0_family(spec, strat, theta, None, grid)
    assert t0.mode == "separable" and t0.anchor_free
    c = (mu - r) / (gam * sg * sg)
    m1 = grid.xs[None, :] * np.exp(r * (1.0 - grid.times))[:, None] \
        + (mu - r) * c * (1.0 - grid.times)[:, None]
    var = sg * sg * c * c * (1.0 - grid.times)[:, None]
    ref = -m1 + 0.5 * gam * (m1 * m1 + var)
    interior = slice(5, -5)
    assert np.max(np.abs(t0.hat[:, interior] - ref[:, interior])) < 1e-2


def test_extract_diagonal_identity_costs():
    # h0 = y: D = theta, Dy = 1, Dx = 0
    spec = model.recursive_lq()
    grid = pde.GridSpec(-2.0, 2.0, 33, 33, 1.0)
    strat = const_strategy(0.3, U=(spec.u_lo, spec.u_hi))
    theta = pde.solve_theta(spec, strat, grid)
    t0 = pde.solve_theta0_family(spec, strat, theta, None, grid)
    b = pde.extract_diagonal(t0, theta)
    assert np.max(np.abs(b.d - theta.values[0])) == 0.0
    assert np.max(np.abs(b.dy - 1.0)) == 0.0
    assert np.max(np.abs(b.dx)) == 0.0


# ---------------------------------------------------------------------------
# minimize_hamiltonian
# ---------------------------------------------------------------------------

def _quadratic_cost_spec():
    # cost generator u^2 - u with trivial dynamics: argmin 0.5
    return ControlProblemSpec(
        name="quad", drift=lambda s, x, u: 0.0 * np.asarray(x, dtype=float),
        diffusion=lambda s, x, u: 0.0 * np.asarray(x, dtype=float),
        generator=lambda s, x, u, y, z: 0.0 * np.asarray(x, dtype=float),
        terminal=lambda x: 0.0 * np.asarray(x, dtype=float),
        cost_generator=lambda t, s, xt, x, u, y, z, y0, z0: u * u - u,
        cost_terminal=lambda t, xt, x, y: 0.0,
        u_lo=-10.0, u_hi=10.0, horizon=1.0)


def test_minimize_quadratic_vertex():
    spec = _quadratic_cost_spec()
    u = pde.minimize_hamiltonian(spec, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    assert abs(u - 0.5) < 1e-10


def test_minimize_stackelberg_constant():
    spec = model.stackelberg()
    for s, x, th in ((0.0, 0.0, 0.2), (0.5, 1.0, -0.4), (0.9, -2.0, 1.0)):
        u = pde.minimize_hamiltonian(spec, s, x, th, 0.0, 0.0, 0.0, 0.0, 0.0)
        assert abs(u + 0.5) < 1e-10


def test_minimize_mean_variance_matches_closed_form():
    r, mu, sg, gam = 0.03, 0.08, 0.2, 2.0
    spec = model.mean_variance(r=r, mu=mu, sigma=sg, gamma=gam, x0=1.0)
    grid = pde.default_grid(spec, nx=129, nt=251)
    theta, theta0 = pde.mv_reference_fields(spec, grid)
    bundle = pde.extract_diagonal(theta0, theta)
    closed = meanvar_closed_form(r, mu, sg, gam, 1.0)
    for j in (0, 125):
        i = 64
        u = pde.minimize_hamiltonian(
            spec, grid.times[j], grid.xs[i],
            theta.values[0, j, i], theta.dx_slice(j)[0, i], theta.dxx_slice(j)[0, i],
            bundle.d[j, i], bundle.dx[j, i], bundle.dy[j, i], bundle.dxx[j, i])
        ref = float(closed["vbar"](grid.times[j]))
        assert abs(u - ref) / ref < 1e-2


def test_minimize_needs_bounded_interval():
    spec = replace(_quadratic_cost_spec(), u_lo=-model.U_INF, u_hi=model.U_INF)
    with pytest.raises(DomainError):
        pde.minimize_hamiltonian(spec, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def test_minimize_tie_breaks_toward_smaller_u():
    spec = replace(_quadratic_cost_spec(),
                   cost_generator=lambda t, s, xt, x, u, y, z, y0, z0: 0.0 * u)
    u = pde.minimize_hamiltonian(spec, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    assert u == -10.0


# ---------------------------------------------------------------------------
# equilibrium_fixed_point
# ---------------------------------------------------------------------------

def test_fixed_point_immediate_on_decoupled_problem():
    # no feedback through the strategy or the diagonal: residuals vanish as
    # soon as successive iterates can be compared
    spec = model.linear_heat(a=1.0, terminal="gaussians")
    grid = pde.GridSpec(-4.0, 4.0, 33, 33, 1.0)
    theta, theta0, strat, log = pde.equilibrium_fixed_point(spec, grid)
    assert log.converged and log.iterations <= 2


def test_fixed_point_mean_variance_small_grid():
    spec = model.mean_variance(r=0.03, mu=0.08, sigma=0.2, gamma=2.0, x0=1.0)
    grid = pde.default_grid(spec, nx=65, nt=251)
    theta, theta0, strat, log = pde.equilibrium_fixed_point(spec, grid)
    assert log.converged
    closed = meanvar_closed_form(0.03, 0.08, 0.2, 2.0, 1.0)
    ref = closed["vbar"](grid.times)[:, None] + 0.0 * grid.xs[None, :]
    assert np.max(np.abs(strat.values - ref) / np.abs(ref)) < 1e-2
    # residual history is monotone non-increasing after the second iteration
    res = log.residuals()
    for a, b in zip(res[1:-1], res[2:]):
        assert b <= a * (1.0 + 1e-9)
    # strategy table output clamps to U
    assert np.all(strat.values >= spec.u_lo) and np.all(strat.values <= spec.u_hi)


def test_fixed_point_recursive_reduces_to_classical_hjb():
    spec = model.recursive_lq(T=1.0)
    grid = pde.GridSpec(-2.0, 2.0, 81, 201, 1.0)
    theta, theta0, strat, log = pde.equilibrium_fixed_point(spec, grid)
    assert log.converged
    # equilibrium value = backward field itself
    b = pde.extract_diagonal(theta0, theta)
    assert np.max(np.abs(b.d - theta.values[0])) == 0.0
    # closed form 0.5 tanh(T-s) x^2 + 0.5 ln cosh(T-s)
    ref = 0.5 * np.tanh(1.0 - grid.times)[:, None] * grid.xs[None, :] ** 2 \
        + 0.5 * np.log(np.cosh(1.0 - grid.times))[:, None]
    interior = np.abs(grid.xs) <= 1.5
    assert np.max(np.abs(theta.values[0][:, interior] - ref[:, interior])) < 5e-3
    # residual of the pointwise-minimized dynamic-programming equation
    vals = theta.values[0]
    worst = 0.0
    for j in range(1, grid.nt - 1, 10):
        th_s = (vals[j + 1] - vals[j - 1]) / (2 * grid.dt)
        th_x = pde._dx_rows(vals[j], grid.dx)
        th_xx = pde._dxx_rows(vals[j], grid.dx)
        u_star = np.clip(-th_x, spec.u_lo, spec.u_hi)
        resid = th_s + 0.5 * th_xx + th_x * u_star + 0.5 * (u_star ** 2 + grid.xs ** 2)
        worst = max(worst, float(np.max(np.abs(resid[interior]))))
    assert worst < 5e-3


def test_fixed_point_reports_nonconvergence_without_raising():
    spec = model.mean_variance(r=0.03, mu=0.08, sigma=0.2, gamma=2.0, x0=1.0)
    grid = pde.default_grid(spec, nx=65, nt=65)
    theta, theta0, strat, log = pde.equilibrium_fixed_point(spec, grid, max_iters=1)
    assert not log.converged
    assert log.note != ""


# ---------------------------------------------------------------------------
# solve_perturbation
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def mv_r0_solution():
    spec = model.mean_variance(r=0.0, mu=0.1, sigma=0.2, gamma=1.0, x0=1.0)
    grid = pde.default_grid(spec, nx=65, nt=251)
    theta, theta0, strat, log = pde.equilibrium_fixed_point(spec, grid)
    assert log.converged
    return spec, grid, theta, theta0


def test_perturbation_identity_window(mv_r0_solution):
    spec, grid, theta, theta0 = mv_r0_solution
    vbar = 0.1 / 0.04  # constant equilibrium control at r = 0
    res = pde.solve_perturbation(spec, theta, theta0, 0.2, 0.1, vbar, grid)
    assert res.sup_theta_diff < 1e-10
    assert np.max(np.abs(res.j_perturbed - res.j_base)) < 1e-10


def test_perturbation_quotient_positive_off_equilibrium(mv_r0_solution):
    spec, grid, theta, theta0 = mv_r0_solution
    res = pde.solve_perturbation(spec, theta, theta0, 0.2, 0.1, 0.0, grid)
    i0 = int(np.argmin(np.abs(grid.xs - 1.0)))
    assert (res.j_perturbed[i0] - res.j_base[i0]) / 0.1 > 0.0


def test_perturbation_window_shrinks(mv_r0_solution):
    spec, grid, theta, theta0 = mv_r0_solution
    sups = [pde.solve_perturbation(spec, theta, theta0, 0.2, eps, 1.0, grid).sup_theta_diff
            for eps in (0.2, 0.1, 0.04)]
    assert sups[0] > sups[1] > sups[2]
    # observed rate at least eps^{1/4}
    assert sups[1] / sups[0] <= 0.5 ** 0.25 + 1e-9
    assert sups[2] / sups[1] <= 0.5 ** 0.25 + 1e-9


def test_perturbation_window_validation(mv_r0_solution):
    spec, grid, theta, theta0 = mv_r0_solution
    with pytest.raises(DomainError):
        pde.solve_perturbation(spec, theta, theta0, 0.95, 0.1, 0.0, grid)
    with pytest.raises(DomainError):
        pde.solve_perturbation(spec, theta, theta0, 0.2, 0.1, 99.0, grid)


# ---------------------------------------------------------------------------
# kernel_solve_linear
# ---------------------------------------------------------------------------

def test_kernel_identity_and_second_moment():
    grid = pde.GridSpec(-6.0, 6.0, 49, 17, 1.0)
    th = pde.kernel_solve_linear(model.linear_heat(a=1.0, terminal="x"), grid)
    assert np.max(np.abs(th.values[0] - grid.xs[None, :])) < 1e-6
    th2 = pde.kernel_solve_linear(model.linear_heat(a=1.0, terminal="x2"), grid,
                                  panels=2048)
    i0 = grid.nx // 2
    assert abs(th2.values[0, 0, i0] - 2.0) < 1e-4


def test_kernel_agrees_with_finite_differences():
    rng = np.random.default_rng(41)
    a1, a2 = rng.uniform(0.5, 1.5, size=2)
    c1, c2 = rng.uniform(-1.5, 1.5, size=2)
    b1, b2 = rng.uniform(0.7, 2.0, size=2)
    h = lambda x: (a1 * np.exp(-b1 * (np.asarray(x) - c1) ** 2)
                   + a2 * np.exp(-b2 * (np.asarray(x) - c2) ** 2))
    spec = model.linear_heat(a=1.0, terminal=h)
    gridk = pde.GridSpec(-6.0, 6.0, 97, 33, 1.0)
    thk = pde.kernel_solve_linear(spec, gridk)
    gridf = pde.GridSpec(-6.0, 6.0, 97, 1001, 1.0)
    thf = pde.solve_theta(spec, ZERO, gridf)
    interior = np.abs(gridk.xs) <= 4.0
    assert np.max(np.abs(thk.values[0, 0] - thf.values[0, 0])[interior]) < 5e-3


def test_kernel_truncation_warning():
    grid = pde.GridSpec(-2.0, 2.0, 33, 9, 1.0)
    with pytest.warns(RuntimeWarning):
        pde.kernel_solve_linear(model.linear_heat(a=1.0, terminal="x"), grid, pad=0.5)
