import time
from dataclasses import replace

import numpy as np
import pytest

from tsne_equilibrium import affinities as aff
from tsne_equilibrium import optimizer as opt
from tsne_equilibrium.affinities import CalibratedAffinities
from tsne_equilibrium.core_types import validate_dataset
from tsne_equilibrium.errors import InvalidScale, NonFiniteLoss, ValidationError
from tsne_equilibrium.lowdim_kernel import loss, q_matrix


def calibrated(seed=0, n=50, d=5, rho=0.3):
    rng = np.random.default_rng(seed)
    ds = validate_dataset(rng.uniform(-1.0, 1.0, size=(n, d)))
    return aff.calibrate_all(ds, rho)


def p_from_embedding(emb_points):
    """Affinities equal to the output kernel of a given embedding."""
    n = emb_points.shape[0]
    from tsne_equilibrium.core_types import Embedding
    sym = q_matrix(Embedding(points=emb_points))
    cond = sym * n   # rows sum to 1 only approximately; unused by the loss
    return CalibratedAffinities(
        sigma=np.ones(n), conditional=cond, symmetric=sym,
        target_log_perp=float(np.log(n - 1)),
    )


def test_init_embedding_deterministic():
    a = opt.init_embedding(3, 2, 1e-4, seed=7)
    b = opt.init_embedding(3, 2, 1e-4, seed=7)
    assert np.array_equal(a.points, b.points)
    c = opt.init_embedding(3, 2, 1e-4, seed=8)
    assert not np.array_equal(a.points, c.points)


def test_init_embedding_scale():
    e = opt.init_embedding(10_000, 2, 0.05, seed=1)
    assert np.var(e.points) == pytest.approx(0.05 ** 2, rel=0.05)


def test_init_embedding_rejects_bad_scale():
    with pytest.raises(InvalidScale):
        opt.init_embedding(10, 2, 0.0, seed=0)


def test_config_validation():
    with pytest.raises(ValidationError):
        opt.OptimizerConfig(learning_rate=-1.0)
    with pytest.raises(ValidationError):
        opt.OptimizerConfig(momentum_late=1.0)
    with pytest.raises(ValidationError):
        opt.OptimizerConfig(early_exaggeration=0.5)
    with pytest.raises(ValidationError):
        opt.OptimizerConfig(max_iters=0)


def test_minimize_p_equals_q_fixture():
    # p is the output kernel of the exact initialization point, so the global
    # minimum value 0 is attained right at the start
    emb0 = opt.init_embedding(20, 2, 1e-4, seed=7)
    p = p_from_embedding(emb0.points)
    cfg = opt.OptimizerConfig(seed=7, init_scale=1e-4, max_iters=200)
    res = opt.minimize(p, cfg)
    assert res.final_loss < 1e-10


def test_minimize_converges_on_noise_fixture():
    # default step sizes need >10k iterations to push the residual below
    # 1e-7 on this instance; the tuned rate/momentum reach it in ~350
    p = calibrated()
    cfg = opt.OptimizerConfig(seed=3, learning_rate=50 / 1.2, momentum_late=0.95)
    t0 = time.perf_counter()
    res = opt.minimize(p, cfg)
    assert time.perf_counter() - t0 < 10.0
    assert res.converged
    assert res.final_grad_norm <= 1e-7
    assert res.final_loss == pytest.approx(loss(p, res.embedding), abs=1e-12)


def test_minimize_single_iteration():
    p = calibrated(n=20)
    res = opt.minimize(p, opt.OptimizerConfig(max_iters=1, seed=0))
    assert not res.converged
    assert len(res.loss_trace) == 1


def test_minimize_deterministic():
    p = calibrated(n=30)
    cfg = opt.OptimizerConfig(seed=11, max_iters=150)
    a = opt.minimize(p, cfg)
    b = opt.minimize(p, cfg)
    assert np.array_equal(a.embedding.points, b.embedding.points)
    assert a.final_loss == b.final_loss
    assert a.loss_trace == b.loss_trace


def test_minimize_monotone_trace():
    p = calibrated(n=40, seed=2)
    res = opt.minimize(p, opt.OptimizerConfig(seed=5, max_iters=400))
    losses = [l for _, l in res.loss_trace]
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


def test_minimize_monotone_after_exaggeration():
    p = calibrated(n=40, seed=4)
    cfg = opt.OptimizerConfig(seed=5, max_iters=400, use_exaggeration=True,
                              exaggeration_iters=50)
    res = opt.minimize(p, cfg)
    post = [l for t, l in res.loss_trace if t > 50]
    assert all(b <= a + 1e-9 for a, b in zip(post, post[1:]))


def test_minimize_nonfinite_affinities():
    p = calibrated(n=10)
    sym = p.symmetric.copy()
    sym[0, 1] = np.nan
    bad = CalibratedAffinities(sigma=p.sigma, conditional=p.conditional,
                               symmetric=sym, target_log_perp=p.target_log_perp)
    with pytest.raises(NonFiniteLoss):
        opt.minimize(bad, opt.OptimizerConfig(seed=0, max_iters=10))


def test_multistart_single_restart_matches_minimize():
    p = calibrated(n=25)
    cfg = opt.OptimizerConfig(seed=9, max_iters=200)
    a = opt.minimize(p, cfg)
    b = opt.multistart_minimize(p, cfg, restarts=1)
    assert np.array_equal(a.embedding.points, b.embedding.points)


def test_multistart_never_worse():
    p = calibrated(n=25, seed=6)
    cfg = opt.OptimizerConfig(seed=9, max_iters=300)
    single = opt.minimize(p, cfg)
    multi = opt.multistart_minimize(p, cfg, restarts=5)
    assert multi.final_loss <= single.final_loss + 1e-15


def test_multistart_propagates_only_total_failure(monkeypatch):
    p = calibrated(n=10)
    cfg = opt.OptimizerConfig(seed=0)

    def always_fail(p_, cfg_, s=2):
        raise NonFiniteLoss("boom")

    monkeypatch.setattr(opt, "minimize", always_fail)
    with pytest.raises(NonFiniteLoss):
        opt.multistart_minimize(p, cfg, restarts=3)

    calls = []

    def fail_first(p_, cfg_, s=2):
        calls.append(cfg_.seed)
        if cfg_.seed == 0:
            raise NonFiniteLoss("boom")
        return type("R", (), {"final_loss": 1.0, "seed": cfg_.seed})()

    monkeypatch.setattr(opt, "minimize", fail_first)
    res = opt.multistart_minimize(p, cfg, restarts=3)
    assert res.final_loss == 1.0
    assert calls == [0, 1, 2]


def test_multistart_rejects_zero_restarts():
    p = calibrated(n=10)
    with pytest.raises(ValidationError):
        opt.multistart_minimize(p, opt.OptimizerConfig(), restarts=0)
