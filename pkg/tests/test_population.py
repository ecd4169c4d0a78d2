import numpy as np
import pytest

from tsne_equilibrium import population as pop
from tsne_equilibrium.core_types import Dataset, MeasureSpec, empirical_measure
from tsne_equilibrium.errors import NoSignChange, ValidationError

# frozen high-precision oracle values (50-digit arithmetic) for the
# empirical measure on {0, 1, 2} in R^1 with rho = 0.5, probe x = 0
F_LINE3_X0_SIGMA1 = -0.47898668377283487
SIGMA_STAR_LINE3_X0 = 0.5221654325594194
# regression fixture: uniform density on [-1, 1], rho = 0.3, probe x = 0,
# Gauss-Legendre 200 nodes (400 nodes agrees to well below 1e-6)
SIGMA_STAR_UNIFORM1D = 0.14518243473217052


def line3_ctx(rho=0.5):
    mu = empirical_measure(Dataset(np.array([[0.0], [1.0], [2.0]])))
    return pop.context_from_measure(mu, rho)


def uniform_measure(d=1, lo=-1.0, hi=1.0):
    dens = 1.0 / (hi - lo) ** d
    return MeasureSpec(
        dimension=d,
        density=lambda x: np.full(np.atleast_2d(x).shape[0], dens),
        density_grad=lambda x: np.zeros_like(np.atleast_2d(x)),
        support_lo=np.full(d, lo), support_hi=np.full(d, hi),
    )


def random_emp_ctx(seed, n=30, d=2, rho=0.3):
    rng = np.random.default_rng(seed)
    mu = empirical_measure(Dataset(rng.uniform(-1, 1, size=(n, d))))
    return pop.context_from_measure(mu, rho)


def test_context_empirical_weights():
    ctx = line3_ctx()
    assert np.allclose(ctx.weights, 1.0 / 3.0, atol=1e-16)
    assert ctx.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_context_gauss_legendre_mass():
    ctx = pop.context_from_measure(uniform_measure(), 0.3)
    assert abs(ctx.weights.sum() - 1.0) <= 1e-12
    assert ctx.meta["kind"] == "gauss-legendre"
    assert abs(ctx.meta["mass"] - 1.0) <= 1e-6


def test_context_rejects_unnormalized_density():
    mu = MeasureSpec(
        dimension=1,
        density=lambda x: np.full(np.atleast_2d(x).shape[0], 2.0),
        density_grad=lambda x: np.zeros_like(np.atleast_2d(x)),
        support_lo=np.array([-1.0]), support_hi=np.array([1.0]),
    )
    with pytest.raises(ValidationError):
        pop.context_from_measure(mu, 0.3)


def test_context_monte_carlo_for_high_dimension():
    ctx = pop.context_from_measure(uniform_measure(d=4, lo=0.0, hi=1.0), 0.3,
                                   plan=pop.QuadraturePlan(mc_samples=2048))
    assert ctx.meta["kind"] == "monte-carlo"
    assert abs(ctx.weights.sum() - 1.0) <= 1e-12
    assert "mass_se" in ctx.meta


def test_F_value_oracle():
    assert pop.F_value(line3_ctx(), [0.0], 1.0) == pytest.approx(
        F_LINE3_X0_SIGMA1, abs=1e-14)


def test_F_limit_large_sigma():
    for ctx in (line3_ctx(), pop.context_from_measure(uniform_measure(), 0.3)):
        assert pop.F_value(ctx, np.zeros(1), 1e6) == pytest.approx(
            np.log(ctx.rho), abs=1e-3)


def test_F_blowup_small_sigma():
    # atoms cap the blow-up at -log(atom mass) + log rho; the positive sign
    # needed for the bracketing still appears
    assert pop.F_value(line3_ctx(), [0.0], 0.01) > 0.0
    # for a continuous density F grows as sigma -> 0 until the quadrature
    # resolution is reached (below node spacing the discretized measure is
    # effectively atomic and the growth plateaus)
    ctx = pop.context_from_measure(uniform_measure(), 0.3)
    vals = [pop.F_value(ctx, [0.0], s) for s in (1e-1, 3e-2, 1e-2)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] > 2.0


def test_F_monotone_in_sigma():
    for seed in range(5):
        ctx = random_emp_ctx(seed)
        x = ctx.nodes_x[0]
        sigmas = np.geomspace(0.05, 100.0, 50)
        vals = [pop.F_value(ctx, x, s) for s in sigmas]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_F_eta_derivative_sign():
    ctx = line3_ctx()
    assert pop.F_eta_derivative_sign(ctx, [0.0], 1.0) == 1
    atom = pop.context_from_measure(
        empirical_measure(Dataset(np.zeros((3, 1)))), 0.5)
    assert pop.F_eta_derivative_sign(atom, [0.0], 1.0) == 0
    for seed in range(3):
        ctx = random_emp_ctx(seed)
        assert pop.F_eta_derivative_sign(ctx, ctx.nodes_x[1], 0.7) in (0, 1)


def test_solve_sigma_star_oracle():
    sig = pop.solve_sigma_star(line3_ctx(), [0.0], tol=1e-12)
    assert sig == pytest.approx(SIGMA_STAR_LINE3_X0, abs=1e-9)
    assert abs(pop.F_value(line3_ctx(), [0.0], sig)) <= 1e-10


def test_solve_sigma_star_uniform_regression():
    for m in (200, 400):
        ctx = pop.context_from_measure(uniform_measure(), 0.3,
                                       plan=pop.QuadraturePlan(nodes_per_axis=m))
        sig = pop.solve_sigma_star(ctx, [0.0], tol=1e-10)
        assert sig == pytest.approx(SIGMA_STAR_UNIFORM1D, abs=1e-6)


def test_solve_sigma_star_tolerance_self_consistency():
    ctx = random_emp_ctx(3)
    for x in ctx.nodes_x[:5]:
        a = pop.solve_sigma_star(ctx, x, tol=1e-8)
        b = pop.solve_sigma_star(ctx, x, tol=1e-12)
        assert abs(a - b) <= 1e-6


def test_solve_sigma_star_no_sign_change():
    # rho*n analogue infeasible: a 2-point empirical measure cannot reach
    # the required entropy level for rho close to 1
    mu = empirical_measure(Dataset(np.array([[0.0], [1.0], [1.0]])))
    ctx = pop.PopulationContext(rho=0.99, nodes_x=np.array([[0.0]]),
                                weights=np.array([1.0]))
    with pytest.raises(NoSignChange):
        pop.solve_sigma_star(ctx, [0.0])


def test_sigma_field_symmetry():
    pts = np.array([[-1.5], [-0.5], [0.5], [1.5]])
    mu = empirical_measure(Dataset(pts))
    ctx = pop.context_from_measure(mu, 0.4)
    field = pop.sigma_field(ctx, pts)
    assert np.all(field.residuals <= field.tol)
    # measure symmetric about 0: reflected probes get equal sigma*
    assert field.values[0] == pytest.approx(field.values[3], abs=1e-9)
    assert field.values[1] == pytest.approx(field.values[2], abs=1e-9)
    # exact-match lookup
    assert field(pts[2]) == field.values[2]
    with pytest.raises(ValidationError):
        field(np.array([99.0]))


def test_p_psi_kernel_properties():
    ctx = random_emp_ctx(4, n=20)
    field = pop.sigma_field(ctx, ctx.nodes_x)
    x, xp = ctx.nodes_x[0], ctx.nodes_x[1]
    v = pop.p_psi_kernel(ctx, field, x, xp)
    assert v > 0.0
    assert v == pytest.approx(pop.p_psi_kernel(ctx, field, xp, x), abs=0.0)
    assert pop.p_psi_kernel(ctx, field, x, x) > 0.0   # diagonal included


def test_p_psi_kernel_integrates_to_one():
    ctx = random_emp_ctx(5, n=25)
    field = pop.sigma_field(ctx, ctx.nodes_x)
    p_mat = pop.p_kernel_matrix(ctx, field.values)
    mass = float(ctx.weights @ p_mat @ ctx.weights)
    assert mass == pytest.approx(1.0, abs=1e-6)
    # matrix agrees with the pairwise kernel evaluations
    v = pop.p_psi_kernel(ctx, field, ctx.nodes_x[2], ctx.nodes_x[7])
    assert p_mat[2, 7] == pytest.approx(v, rel=1e-12)


def test_q_population_point_mass():
    ctx = pop.context_from_joint_points(np.zeros((4, 1)) + np.arange(4)[:, None],
                                        np.ones((4, 2)), 0.3)
    assert pop.q_population(ctx, [1.0, 1.0], [1.0, 1.0]) == pytest.approx(
        1.0, abs=1e-14)


def test_q_population_discrete_correction():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(10, 2))
    y = rng.normal(size=(10, 2))
    ctx = pop.context_from_joint_points(x, y, 0.3)
    d2 = np.sum((y[:, None] - y[None, :]) ** 2, axis=2)
    g = 1.0 / (1.0 + d2)
    n = 10
    z_pop = g.sum() / n ** 2
    z_disc = z_pop - 1.0 / n
    v = pop.q_population(ctx, y[0], y[1])
    vd = pop.q_population(ctx, y[0], y[1], discrete_correction=True)
    assert v == pytest.approx(g[0, 1] / z_pop, rel=1e-12)
    assert vd == pytest.approx(g[0, 1] / z_disc, rel=1e-12)


def test_q_population_maximal_at_zero_distance():
    rng = np.random.default_rng(7)
    y = rng.normal(size=(8, 2))
    ctx = pop.context_from_joint_points(rng.normal(size=(8, 2)), y, 0.3)
    peak = pop.q_population(ctx, y[0], y[0])
    assert all(pop.q_population(ctx, y[i], y[j]) <= peak
               for i in range(8) for j in range(8))


def test_functional_I_nonnegative():
    rng = np.random.default_rng(8)
    for seed in range(3):
        rng = np.random.default_rng(seed)
        ctx = pop.context_from_joint_points(
            rng.uniform(-1, 1, size=(20, 2)), rng.normal(size=(20, 2)), 0.3)
        rep = pop.functional_I(ctx)
        assert rep.value >= -1e-10
        assert rep.p_mass == pytest.approx(1.0, abs=1e-6)
        assert rep.q_mass == pytest.approx(1.0, abs=1e-6)


def test_functional_I_requires_joint():
    with pytest.raises(ValidationError):
        pop.functional_I(line3_ctx())


def test_discrete_vs_population_sigma_convention_gap():
    # the calibrated per-row bandwidth (j != i sums, target log rho*n) and
    # the population root on the same empirical measure (diagonal included,
    # target -log rho) differ by a diagonal term that shrinks with n
    from tsne_equilibrium.affinities import calibrate_all
    rng = np.random.default_rng(9)
    gaps = []
    for n in (50, 400):
        pts = rng.uniform(-1, 1, size=(n, 2))
        cal = calibrate_all(Dataset(pts), 0.3)
        ctx = pop.context_from_measure(empirical_measure(Dataset(pts)), 0.3)
        field = pop.sigma_field(ctx, pts)
        gaps.append(float(np.max(np.abs(field.values - cal.sigma))))
    assert gaps[1] < gaps[0]


def test_quadrature_refinement_F():
    for m in (100, 200):
        ctx = pop.context_from_measure(uniform_measure(), 0.3,
                                       plan=pop.QuadraturePlan(nodes_per_axis=m))
        if m == 100:
            base = pop.F_value(ctx, [0.3], 0.5)
        else:
            assert pop.F_value(ctx, [0.3], 0.5) == pytest.approx(base, abs=1e-6)
