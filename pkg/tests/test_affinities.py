import numpy as np
import pytest

from tsne_equilibrium import affinities as aff
from tsne_equilibrium.core_types import Dataset, validate_dataset
from tsne_equilibrium.errors import DegenerateRow, PerplexityInfeasible, ValidationError

# frozen high-precision oracle values (50-digit arithmetic) for the
# collinear three-point set {0, 1, 2}
P_ROW_I0_SIGMA1 = (0.8175744761936437, 0.18242552380635634)
H_ROW_I0_SIGMA1 = 0.4750515636922869
SIGMA0_PERP_1P5 = 0.9095933807091495


def line3():
    return validate_dataset([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])


def test_row_conditionals_symmetric_middle():
    p = aff.row_conditionals(line3(), 1, sigma=0.7)
    assert p[1] == 0.0
    assert p[0] == pytest.approx(0.5, abs=1e-15)
    assert p[2] == pytest.approx(0.5, abs=1e-15)


def test_row_conditionals_derived_values():
    p = aff.row_conditionals(line3(), 0, sigma=1.0)
    assert p[0] == 0.0
    assert p[1] == pytest.approx(P_ROW_I0_SIGMA1[0], abs=1e-14)
    assert p[2] == pytest.approx(P_ROW_I0_SIGMA1[1], abs=1e-14)


def test_row_conditionals_flat_limit():
    ds = validate_dataset(np.random.default_rng(1).normal(size=(6, 2)))
    p = aff.row_conditionals(ds, 0, sigma=1e9)
    assert p[0] == 0.0
    assert np.allclose(p[1:], 1.0 / 5.0, atol=1e-9)


def test_row_conditionals_degenerate():
    ds = Dataset(np.zeros((4, 2)))
    with pytest.raises(DegenerateRow):
        aff.row_conditionals(ds, 0, sigma=1.0)


def test_row_entropy_two_point_uniform():
    assert aff.row_entropy([0.5, 0.0, 0.5]) == pytest.approx(np.log(2), abs=1e-15)


def test_row_entropy_max():
    n = 8
    p = np.full(n - 1, 1.0 / (n - 1))
    assert aff.row_entropy(p) == pytest.approx(np.log(n - 1), abs=1e-14)


def test_row_entropy_derived():
    assert aff.row_entropy([0.0, *P_ROW_I0_SIGMA1]) == pytest.approx(
        H_ROW_I0_SIGMA1, abs=1e-12)


def test_calibrate_sigma_derived():
    sig = aff.calibrate_sigma(line3(), 0, float(np.log(1.5)), tol=1e-12)
    assert sig == pytest.approx(SIGMA0_PERP_1P5, abs=1e-9)


def test_calibrate_sigma_constant_entropy_row():
    # middle point: both neighbours at distance 1, entropy is log 2 for every
    # sigma; the target log 2 gets the canonical sigma = 1
    sig = aff.calibrate_sigma(line3(), 1, float(np.log(2.0)))
    assert sig == 1.0
    with pytest.raises(PerplexityInfeasible):
        aff.calibrate_sigma(line3(), 1, float(np.log(1.5)))


def test_calibrate_sigma_target_at_sup_rejected():
    with pytest.raises((PerplexityInfeasible, ValidationError)):
        aff.calibrate_sigma(line3(), 0, float(np.log(2.0)))


def test_calibrate_all_assembles_symmetric():
    # the middle point of the evenly spaced set has constant row entropy, so
    # use an uneven set; assembly rule (p_{1|0} + p_{0|1}) / (2n) still holds
    ds = validate_dataset([[0.0, 0.0], [1.0, 0.0], [2.5, 0.0]])
    rho = 0.5   # rho*n = 1.5
    cal = aff.calibrate_all(ds, rho, tol=1e-12)
    p01 = (cal.conditional[0, 1] + cal.conditional[1, 0]) / 6.0
    assert cal.symmetric[0, 1] == pytest.approx(p01, abs=1e-16)
    assert cal.symmetric[1, 0] == pytest.approx(p01, abs=1e-16)
    assert cal.symmetric.sum() == pytest.approx(1.0, abs=1e-12)


def test_calibrate_all_constant_row_off_target_raises():
    # evenly spaced line: middle row entropy is identically log 2 != log 1.5
    with pytest.raises(PerplexityInfeasible):
        aff.calibrate_all(line3(), 0.5, tol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_calibrate_all_invariants(seed):
    rng = np.random.default_rng(seed)
    ds = validate_dataset(rng.normal(size=(40, 4)))
    cal = aff.calibrate_all(ds, 0.3)
    n = ds.n
    assert np.all(np.diag(cal.conditional) == 0.0)
    assert np.all(np.diag(cal.symmetric) == 0.0)
    assert np.allclose(cal.conditional.sum(axis=1), 1.0, atol=1e-12)
    assert abs(cal.symmetric.sum() - 1.0) <= 1e-12
    assert np.allclose(cal.symmetric, cal.symmetric.T)
    assert np.all(cal.symmetric >= 0.0)
    for i in range(n):
        h = aff.row_entropy(cal.conditional[i])
        assert abs(h - cal.target_log_perp) <= 1e-9


def test_calibrate_all_infeasible_perplexity():
    ds = line3()
    with pytest.raises(PerplexityInfeasible):
        aff.calibrate_all(ds, 0.99)   # rho*n = 2.97 > n-1


def test_calibrate_all_duplicate_pair_is_finite():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 1.0], [3.0, 0.5]])
    cal = aff.calibrate_all(Dataset(pts), 0.4)
    assert np.all(np.isfinite(cal.symmetric))
    assert np.all(np.isfinite(cal.sigma))


def test_entropy_monotone_in_sigma():
    rng = np.random.default_rng(7)
    for _ in range(5):
        ds = validate_dataset(rng.normal(size=(15, 3)))
        d2 = aff.squared_distances(ds.points)
        for i in (0, 7, 14):
            sigmas = np.geomspace(1e-2, 1e3, 30)
            hs = aff._entropies_at(d2, np.full(30, i), sigmas)
            assert np.all(np.diff(hs) >= -1e-12)


def test_scale_equivariance():
    rng = np.random.default_rng(11)
    ds = validate_dataset(rng.normal(size=(25, 3)))
    c = 37.5
    scaled = Dataset(ds.points * c)
    a = aff.calibrate_all(ds, 0.3, tol=1e-12)
    b = aff.calibrate_all(scaled, 0.3, tol=1e-12)
    assert np.allclose(b.sigma, c * a.sigma, rtol=1e-10)
    assert np.allclose(b.conditional, a.conditional, atol=1e-10)
    assert np.allclose(b.symmetric, a.symmetric, atol=1e-10)


def test_permutation_equivariance():
    rng = np.random.default_rng(13)
    ds = validate_dataset(rng.normal(size=(12, 3)))
    perm = rng.permutation(12)
    permuted = Dataset(ds.points[perm])
    a = aff.calibrate_all(ds, 0.3)
    b = aff.calibrate_all(permuted, 0.3)
    # reductions run in permuted order, so equality holds to rounding only
    assert np.allclose(b.sigma, a.sigma[perm], rtol=1e-13)
    assert np.allclose(b.symmetric, a.symmetric[np.ix_(perm, perm)], rtol=1e-12)


def test_wide_distance_span_is_stable():
    # pairwise distances spanning [1e-6, 1e6]
    xs = np.array([0.0, 1e-6, 1.0, 1e3, 1e6])
    pts = np.stack([xs, np.zeros_like(xs)], axis=1)
    cal = aff.calibrate_all(Dataset(pts), 0.35)
    assert np.all(np.isfinite(cal.sigma))
    assert np.allclose(cal.conditional.sum(axis=1), 1.0, atol=1e-12)
    for i in range(5):
        h = aff.row_entropy(cal.conditional[i])
        assert abs(h - cal.target_log_perp) <= 1e-8
