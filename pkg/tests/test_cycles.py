import numpy as np
import pytest
from conftest import perturbed

from swimcycle.body import ActuationSpec, BodyState, fish_template
from swimcycle.coupling import Stepper, SystemState, rest_state
from swimcycle.cycles import CycleProblem, PoincareConfig, find_cycle, floquet_spectrum, poincare_map, with_config
from swimcycle.errors import IllConditioned, NoConvergence, ReconstitutionResidual
from swimcycle.fluid import FluidGrid
from swimcycle.reduction import halo_stencil, holonomy, reduced_distance
from swimcycle.se2 import compose

# a small, fast swimmer: 100 steps per period
GRID = FluidGrid(32, 32, 2.0, 2.0, mu=0.02)
LENGTH = 0.8


def _mesh(**kw):
    return fish_template(n_nodes=20, length=LENGTH, center=(1.0, 1.0), **kw)


def _problem(amplitude=0.3, pattern="traveling", grid=GRID, mesh=None, k_penalty=None, **cfg):
    mesh = _mesh() if mesh is None else mesh
    act = ActuationSpec(amplitude, 0.1, 1.0, pattern)
    stepper = Stepper(grid, mesh, act, dt=1e-3, k_penalty=k_penalty)
    cfg = {"period": 0.1, "n_snapshots": 20, "floquet": False, **cfg}
    return CycleProblem(stepper, PoincareConfig(**cfg), length=LENGTH)


def _vec(z):
    return (z.theta, z.tx, z.ty)


@pytest.fixture(scope="module")
def swim():
    return find_cycle(_problem(floquet=True))


def test_config_validation():
    for bad in ({"tol": 0.0}, {"period": -1.0}, {"accel": "newton"}, {"mode": "full"}, {"max_iters": 0},
                {"probe_step": 0.0}):
        with pytest.raises(ValueError):
            PoincareConfig(**bad)
    with pytest.raises(ValueError, match="divide"):
        _problem(period=0.1005)


def test_rest_is_a_fixed_point():
    P = _problem(amplitude=0.0, floquet=True)
    res = find_cycle(P)
    assert res.iterations == 1
    assert res.residual < 1e-12
    z = res.holonomy
    assert max(abs(z.theta), abs(z.tx), abs(z.ty)) < 1e-12
    assert res.stable and max(res.floquet) < 1.0


def test_map_contracts_near_rest():
    # a full unit period lets the elastic transient settle between samples
    P = _problem(amplitude=0.0, period=1.0)
    rest = P.reduce(rest_state(GRID, P.mesh))[0]
    x = P.canonicalize(perturbed(GRID, P.mesh, seed=3, amplitude=0.005))[0]
    d = [P.distance(P.reduce(x)[0], rest)]
    for _ in range(3):
        x, _ = poincare_map(P, x)
        d.append(P.distance(P.reduce(x)[0], rest))
    assert all(b < a for a, b in zip(d[:-1], d[1:]))


def test_perturbed_rest_converges_geometrically():
    P = _problem(amplitude=0.0)
    res = find_cycle(P, perturbed(GRID, P.mesh, seed=4, amplitude=0.005))
    assert res.iterations > 1
    assert res.contraction_factor < 1.0


def test_flow_semigroup():
    P = _problem()
    x = perturbed(GRID, P.mesh, seed=5, amplitude=0.005)
    once = P.stepper.advance(x, 2 * P.steps)
    twice = P.flow(P.flow(x))
    # each period restarts the clock at phase zero, so only rounding differs
    np.testing.assert_allclose(once.body.positions, twice.body.positions, atol=1e-13, rtol=0)
    np.testing.assert_allclose(once.fluid.u, twice.fluid.u, atol=1e-13, rtol=0)


def test_two_maps_match_one_double_period():
    P = _problem()
    x = P.canonicalize(perturbed(GRID, P.mesh, seed=5, amplitude=0.005))[0]
    y1, z1 = P.period_map(x)
    y2, z2 = P.period_map(y1)
    direct = P.stepper.advance(SystemState(x.body, x.fluid, 0.0), 2 * P.steps)
    g = P.pose(direct)
    # re-posing resamples the fluid off the grid, so the maps agree with the
    # direct run only to the discretisation's rigid-motion equivariance error
    assert P.distance(P.reduce(y2)[0], P.reduce(P.repose(direct, g, P.canonical))[0]) < 1e-3
    z = compose(z1, z2)
    zd = holonomy(P.relative(P.pose(x)), P.relative(g))
    assert abs(z.theta - zd.theta) < 1e-4 and abs(z.tx - zd.tx) < 1e-4 and abs(z.ty - zd.ty) < 1e-4


def test_swim_cycle_properties(swim):
    assert swim.residual <= 2e-6
    assert swim.contraction_factor < 1.0
    assert swim.stable and max(swim.floquet) < 1.0
    # the holonomy of the search's last map agrees with the verification period
    for a, b in zip(_vec(swim.holonomy), _vec(swim.verification_holonomy)):
        assert abs(a - b) < 1e-6
    # last residuals do not increase
    tail = swim.residual_history[-5:]
    assert all(b <= a * 1.05 for a, b in zip(tail[:-1], tail[1:]))


def test_fixed_point_defect(swim):
    P = _problem()
    start = swim.start_state
    end = P.flow(start)
    back = P.repose(end, P.pose(end), P.canonical)
    assert P.distance(P.reduce(back)[0], P.reduce(start)[0]) <= 2.0 * max(swim.residual, 1e-7)


def test_anderson_and_picard_agree(swim):
    res = find_cycle(_problem(accel="none"))
    np.testing.assert_allclose(res.loop_positions, swim.loop_positions, atol=1e-5)
    assert abs(res.holonomy.tx - swim.holonomy.tx) < 0.02 * abs(swim.holonomy.tx)


def test_probe_step_robustness(swim):
    P = _problem()
    a, _ = floquet_spectrum(P, swim.start_state, step=1e-5)
    b, _ = floquet_spectrum(P, swim.start_state, step=2e-5)
    # moduli at the rounding floor carry no relative information
    np.testing.assert_allclose(a, b, rtol=1e-2, atol=1e-6)


def test_conservative_limit_is_neutral():
    grid = FluidGrid(32, 32, 2.0, 2.0, mu=0.0)
    P = _problem(amplitude=0.0, grid=grid, mesh=_mesh(damping=0.0), k_penalty=0.0)
    moduli, _ = floquet_spectrum(P, rest_state(grid, P.mesh))
    assert abs(moduli[0] - 1.0) < 1e-2


def test_stencil_tolerance_below_lift_floor():
    with pytest.raises(NoConvergence, match="lift-error floor"):
        find_cycle(_problem(mode="stencil", tol=1e-12, max_iters=5))


def test_stencil_mode_converges_at_loose_tolerance():
    st = halo_stencil(LENGTH, n_rings=3, per_ring=16, inner=0.15, outer=0.5)
    P = _problem(mode="stencil", tol=1e-3)
    P = CycleProblem(P.stepper, P.cfg, stencil=st, length=LENGTH)
    res = find_cycle(P)
    assert res.iterations < P.cfg.max_iters


def test_lift_reports_its_error():
    P = _problem(lift_tol=1e-15)
    red, _ = P.reduce(rest_state(GRID, P.mesh))
    red.fluid_samples = np.random.default_rng(0).normal(size=red.fluid_samples.shape)
    with pytest.raises(ReconstitutionResidual):
        P.lift(red)
    _, err = P.lift(red, check=False)
    assert err > 1e-14


def test_tiny_probe_is_ill_conditioned():
    P = _problem()
    with pytest.raises(IllConditioned):
        floquet_spectrum(P, rest_state(GRID, P.mesh), step=1e-22)


def test_with_config_keeps_the_stepper():
    P = _problem()
    Q = with_config(P, tol=1e-3)
    assert Q.stepper is P.stepper and Q.cfg.tol == 1e-3


def test_rest_lift_is_exact():
    P = _problem()
    st = rest_state(GRID, P.mesh)
    red, _ = P.reduce(st)
    back, err = P.lift(red)
    assert err == 0.0
    assert reduced_distance(P.reduce(back)[0], red) < 1e-14
    assert isinstance(back.body, BodyState)
