import math

import numpy as np
import pytest

import stochavg as sa
from stochavg.core import DispersionField, constant_frequency
from stochavg.equations import build_full
from stochavg.sde import (
    PathConfig,
    SdeSystem,
    _draw,
    action_step_truncated,
    euler_maruyama_step,
    integrate_batch,
    integrate_path,
    path_rng,
    sample_wiener_increments,
    splitting_step,
    weak_convergence_study,
)


def ou_system(nu=1.0, b=1.0, n=1, kind="complex"):
    nu = np.full(n, nu)
    B = np.diag(np.full(n, b)).astype(complex)
    return SdeSystem(space="complex", n=n, m=n, drift=lambda x: -nu * x,
                     dispersion=lambda x: np.broadcast_to(B, x.shape[:-1] + B.shape),
                     noise_kind=kind, dispersion_matrix=B)


def test_increment_moments():
    N, dtau = 100_000, 1e-3
    real = sample_wiener_increments(1, N, dtau, seed=3, kind="real")[:, 0]
    assert abs(real.mean()) <= 4 * math.sqrt(dtau / N)
    assert abs(real.var() / dtau - 1) <= 0.02
    c = sample_wiener_increments(1, N, dtau, seed=4)[:, 0]
    assert abs(c.mean()) <= 4 * math.sqrt(2 * dtau / N)
    assert abs(np.var(c.real) / dtau - 1) <= 0.02
    assert abs(np.mean(np.abs(c) ** 2) / dtau - 2) <= 0.04


def test_increments_deterministic_and_chunk_invariant():
    a = sample_wiener_increments(2, 1000, 0.01, seed=9, path_index=5)
    b = sample_wiener_increments(2, 1000, 0.01, seed=9, path_index=5)
    np.testing.assert_array_equal(a, b)
    r = path_rng(9, 5)
    chunks = np.concatenate([_draw(r, 512, 2, 0.01, "complex"), _draw(r, 488, 2, 0.01, "complex")])
    np.testing.assert_array_equal(a, chunks)
    assert not np.array_equal(a, sample_wiener_increments(2, 1000, 0.01, seed=9, path_index=6))


def test_path_config_steps():
    assert PathConfig(0.1, 1.0).steps == 10
    assert PathConfig(0.3, 1.0).steps == 4
    with pytest.raises(ValueError):
        PathConfig(2.0, 1.0)
    with pytest.raises(ValueError):
        PathConfig(0.1, 1.0, scheme="rk4")


def test_euler_examples():
    sys0 = SdeSystem(space="complex", n=1, m=1, drift=lambda x: 0 * x,
                     dispersion=lambda x: np.zeros(x.shape + (1,)))
    x = np.array([1.0 + 2j])
    np.testing.assert_array_equal(euler_maruyama_step(x, sys0, np.zeros(1), 0.1), x)
    out = euler_maruyama_step(np.array([1.0 + 0j]), ou_system(), np.zeros(1), 0.1)
    assert out[0] == pytest.approx(0.9)


def test_euler_rejects_non_finite():
    blow = SdeSystem(space="complex", n=1, m=1, drift=lambda x: x * np.inf,
                     dispersion=lambda x: np.zeros(x.shape + (1,)))
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        euler_maruyama_step(np.array([1.0 + 0j]), blow, np.zeros(1), 0.1)


def test_ou_weak_mean():
    sys = ou_system(kind="real")
    N = 100_000
    res = integrate_batch(sys, np.array([1.0]), PathConfig(0.01, 1.0, seed=11), N, [1.0])
    x = res.snapshots[-1, :, 0].real
    sigma = math.sqrt((1 - math.exp(-2)) / 2 / N)
    assert abs(x.mean() - math.exp(-1)) <= 3 * sigma + 0.002  # Euler bias (1-dt)^n vs e^-1


def test_splitting_conserves_actions_without_perturbation(rng):
    H = sa.build_model("damped_driven").H
    zero = DispersionField(np.zeros((2, 2)))
    sys = build_full(H, lambda v: 0 * v, zero, eps=0.003)
    v0 = np.array([0.7 + 0.2j, -0.4 + 1.1j])
    p = integrate_path(sys, v0, PathConfig(0.01, 50.0, seed=1), stride=100)
    I = 0.5 * np.abs(p.states) ** 2
    np.testing.assert_allclose(I, np.broadcast_to(I[0], I.shape), rtol=1e-12)


def test_splitting_matches_euler_when_rotation_is_slow(rng):
    H = constant_frequency([1.0, 2.0])
    B = DispersionField(np.eye(2))
    v = np.array([0.5 + 0.5j, 1.0])
    dbeta = np.array([0.01 + 0.02j, -0.03j])
    prev = None
    for eps in (1e2, 1e4, 1e6):
        sys = build_full(H, lambda x: -x, B, eps)
        d = np.max(np.abs(splitting_step(v, sys, dbeta, 0.1) - euler_maruyama_step(v, sys, dbeta, 0.1)))
        if prev is not None:
            assert d < prev / 50
        prev = d
    assert prev < 1e-7


def test_splitting_second_moments_match_ou(rng):
    m = sa.build_model("damped_driven", {"h_terms": []})
    sys = build_full(m.H, m.P, m.B, 0.01)
    a0 = np.array([1.0 + 0.5j, 0.3 - 0.2j])
    N = 10_000
    res = integrate_batch(sys, a0, PathConfig(1e-3, 1.0, seed=21), N, [1.0])
    r2 = np.abs(res.snapshots[-1]) ** 2
    expect = sa.ou_exact_action_law(m.ou).second_moment(1.0, a0)
    se = r2.std(axis=0) / math.sqrt(N)
    # Euler on the linear part carries an O(dtau) bias of relative size ~ nu * dtau
    assert np.all(np.abs(r2.mean(axis=0) - expect) <= 3 * se + 2 * m.ou.nu * 1e-3 * expect)


def _action_system(F, G):
    return SdeSystem(space="action", n=1, m=1, drift=F, dispersion=G, noise_kind="real")


def test_truncated_trivial():
    sys = _action_system(lambda I: 0 * I, lambda I: np.zeros(I.shape + (1,)))
    I = np.array([0.3])
    np.testing.assert_array_equal(action_step_truncated(I, sys, np.array([0.5]), 0.1), I)


def test_truncated_cir_positivity_and_mean(rng):
    b, nu = 1.0, 1.0
    sys = _action_system(lambda I: b * b - 2 * nu * I,
                         lambda I: (b * np.sqrt(2 * I))[..., None])
    p = integrate_path(sys, np.array([0.5]), PathConfig(0.01, 1000.0, seed=2), stride=1)
    assert np.all(p.states >= 0)
    tail = p.states[10_000:, 0]
    # correlation time 1/(2 nu) = 50 steps; ~1800 effective samples of Exp(0.5)
    assert abs(tail.mean() - b * b / (2 * nu)) <= 4 * 0.5 / math.sqrt(len(tail) / 50)


def test_truncation_inactive_in_interior():
    b, nu, dtau = 1.0, 1.0, 1e-3
    sys = _action_system(lambda I: b * b - 2 * nu * I, lambda I: (b * np.sqrt(2 * I))[..., None])
    I = np.array([2.0])
    db = np.array([0.03])
    out = action_step_truncated(I, sys, db, dtau)
    np.testing.assert_allclose(out, I + (b * b - 2 * nu * I) * dtau + b * np.sqrt(2 * I) * db,
                               rtol=1e-15)


def test_truncated_stays_in_orthant(rng):
    sys = _action_system(lambda I: -5 * np.ones_like(I), lambda I: (3 * np.sqrt(I))[..., None])
    res = integrate_batch(sys, np.array([0.01]), PathConfig(0.01, 1.0, seed=4), 500, [0.5, 1.0])
    assert np.all(res.snapshots >= 0)


def test_deterministic_linear_path():
    sys = ou_system(b=0.0)
    for dt in (0.01, 0.005):
        p = integrate_path(sys, np.array([1.0 + 0j]), PathConfig(dt, 1.0))
        err = abs(p.states[-1, 0] - math.exp(-1))
        assert err <= dt
    # Euler on dx = -x dtau is exactly (1 - dt)^k
    np.testing.assert_allclose(p.states[:, 0].real, (1 - 0.005) ** np.arange(201), rtol=1e-12)


def test_path_determinism(dd_model):
    sys = build_full(dd_model.H, dd_model.P, dd_model.B, 0.05)
    cfg = PathConfig(1e-3, 0.5, seed=77)
    a = integrate_path(sys, np.array([1.0, 0.5j]), cfg, stride=50)
    b = integrate_path(sys, np.array([1.0, 0.5j]), cfg, stride=50)
    np.testing.assert_array_equal(a.states, b.states)


def test_workers_do_not_change_results(dd_model):
    sys = build_full(dd_model.H, dd_model.P, dd_model.B, 0.05)
    cfg = PathConfig(1e-3, 0.2, seed=5)
    a = integrate_batch(sys, np.array([1.0, 0.5j]), cfg, 60, [0.1, 0.2], workers=1)
    b = integrate_batch(sys, np.array([1.0, 0.5j]), cfg, 60, [0.1, 0.2], workers=4)
    np.testing.assert_array_equal(a.snapshots, b.snapshots)


def test_divergence_is_isolated():
    blow = SdeSystem(space="complex", n=1, m=1, drift=lambda x: x ** 3,
                     dispersion=lambda x: np.ones(x.shape + (1,)), noise_kind="real")
    cfg = PathConfig(0.05, 3.0, seed=8)
    res = integrate_batch(blow, np.array([0.3]), cfg, 200, [1.0, 3.0])
    assert 0 < res.diverged.sum() < 200
    assert np.all(np.isnan(res.snapshots[-1][res.diverged]))
    for i in np.nonzero(~res.diverged)[0][:5]:
        p = integrate_path(blow, np.array([0.3]), cfg, stride=20, path_index=int(i))
        assert not p.diverged
        np.testing.assert_array_equal(p.states[-1], res.snapshots[-1, i])
    i = int(np.nonzero(res.diverged)[0][0])
    p = integrate_path(blow, np.array([0.3]), cfg, path_index=i)
    assert p.diverged and len(p.states) == res.diverged_step[i]


def test_weak_order_one():
    sys = ou_system(nu=1.0, b=1.0)
    study = weak_convergence_study(sys, np.array([1.0 + 0j]), T=1.0, dtaus=[0.2, 0.1, 0.05],
                                   n_paths=20_000, seed=31,
                                   observable=lambda x: 0.5 * np.abs(x[:, 0]) ** 2)
    assert abs(study.slope - 1.0) <= 0.3
