import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import stochavg as sa
from stochavg.core import DispersionField, DomainBox, constant_frequency
from stochavg.ensemble import (
    EnsembleWarning,
    action_distribution,
    ensemble_csv,
    exit_csv,
    exit_time_stats,
    from_samples,
    moment_report,
    noise_floor,
    run_ensemble,
    stationary_estimate,
    to_json,
    wasserstein1,
    wasserstein1_exponential,
)
from stochavg.equations import build_averaged_action, build_full
from stochavg.sde import PathConfig, SdeSystem, integrate_batch


def ou(nu=(1.0,), b=(1.0,)):
    nu, b = np.asarray(nu), np.asarray(b)
    B = np.diag(b).astype(complex)
    return SdeSystem(space="complex", n=len(nu), m=len(nu), drift=lambda x: -nu * x,
                     dispersion=lambda x: np.broadcast_to(B, x.shape[:-1] + B.shape),
                     dispersion_matrix=B, tag="ou")


def rotation(n=2):
    zero = DispersionField(np.zeros((n, n)))
    return build_full(constant_frequency(np.arange(1.0, n + 1)), lambda v: 0 * v, zero, 0.05)


samples = arrays(float, 30, elements=st.floats(-100, 100, allow_nan=False))


# --- ensembles --------------------------------------------------------------

def test_pure_rotation_is_point_mass():
    v0 = np.array([1.0 + 0.5j, -0.3j])
    ens = run_ensemble(rotation(), v0, 20, PathConfig(0.01, 1.0, seed=1), [0.5, 1.0])
    for tau in (0.5, 1.0):
        np.testing.assert_allclose(ens.actions(tau), np.broadcast_to(0.5 * np.abs(v0) ** 2, (20, 2)),
                                   rtol=1e-13)


def test_same_seed_same_ensemble():
    cfg = PathConfig(0.01, 1.0, seed=42)
    a = run_ensemble(ou(), np.array([1.0 + 0j]), 50, cfg, [0.5, 1.0])
    b = run_ensemble(ou(), np.array([1.0 + 0j]), 50, cfg, [0.5, 1.0])
    np.testing.assert_array_equal(a.snapshots, b.snapshots)
    c = run_ensemble(ou(), np.array([1.0 + 0j]), 50, PathConfig(0.01, 1.0, seed=43), [0.5, 1.0])
    assert not np.array_equal(a.snapshots, c.snapshots)


def test_ou_mean_action():
    nu, b, N = 2.0, 1.0, 20_000
    ens = run_ensemble(ou([nu], [b]), np.array([1.0 + 0j]), N, PathConfig(0.005, 4.0, seed=3), [4.0])
    I = ens.actions(4.0)[:, 0]
    mean = b * b / (2 * nu)
    assert abs(I.mean() - mean) <= 3 * mean / math.sqrt(N) + 0.005 * mean


def test_small_ensemble_rejected():
    with pytest.raises(ValueError):
        run_ensemble(ou(), np.array([1.0 + 0j]), 1, PathConfig(0.1, 1.0), [1.0])


# --- distributions ----------------------------------------------------------

def test_point_mass_distribution_has_zero_width():
    ens = run_ensemble(rotation(), np.array([1.0, 2.0j]), 10, PathConfig(0.01, 0.2, seed=1), [0.2])
    d = action_distribution(ens, 0.2)
    np.testing.assert_allclose(d.sorted[-1] - d.sorted[0], 0, atol=1e-13)


def test_complex_and_action_systems_agree_on_ou():
    nu, b, N = 1.0, 0.8, 8000
    rule = sa.make_quadrature(1, 8)
    act = build_averaged_action(lambda v: -nu * v, DispersionField(np.array([[b]])), rule)
    v0 = np.array([0.6 + 0.2j])
    cfg = PathConfig(2e-3, 1.0, seed=5)
    d1 = action_distribution(run_ensemble(ou([nu], [b]), v0, N, cfg, [1.0]), 1.0)
    d2 = action_distribution(run_ensemble(act, 0.5 * np.abs(v0) ** 2, N, cfg, [1.0]), 1.0)
    floor = noise_floor(d1, d2)
    assert wasserstein1(d1, d2).max <= 3 * floor.max()


def test_distribution_is_order_invariant(rng):
    x = rng.exponential(size=(200, 2))
    a = from_samples(x)
    b = from_samples(x[rng.permutation(200)])
    np.testing.assert_array_equal(a.sorted, b.sorted)
    assert wasserstein1(a, b).max == 0


# --- wasserstein ------------------------------------------------------------

@given(samples)
def test_w1_identity(x):
    assert wasserstein1(from_samples(x), from_samples(x)).max == 0


def test_w1_point_masses():
    d = wasserstein1(from_samples(np.full(10, 1.5)), from_samples(np.full(10, -2.0)))
    assert d.max == pytest.approx(3.5)
    # unequal sizes go through the quantile coupling
    d = wasserstein1(from_samples(np.full(10, 1.5)), from_samples(np.full(7, -2.0)))
    assert d.max == pytest.approx(3.5)


@given(samples, samples)
def test_w1_symmetric_nonnegative(x, y):
    a, b = from_samples(x), from_samples(y)
    dab, dba = wasserstein1(a, b).max, wasserstein1(b, a).max
    assert dab >= 0 and dab == pytest.approx(dba, rel=1e-12, abs=1e-12)


@given(samples, samples, samples)
def test_w1_triangle(x, y, z):
    a, b, c = from_samples(x), from_samples(y), from_samples(z)
    assert wasserstein1(a, c).max <= wasserstein1(a, b).max + wasserstein1(b, c).max + 1e-9


def test_w1_exponential_samples(rng):
    N = 10_000
    d = wasserstein1(from_samples(rng.exponential(size=N)), from_samples(rng.exponential(size=N)))
    assert d.max <= 0.05
    e = wasserstein1_exponential(from_samples(rng.exponential(size=N)), 1.0)
    assert e.max <= 0.05


def test_w1_exponential_rejects_negative():
    with pytest.raises(ValueError):
        wasserstein1_exponential(from_samples([-1.0, 1.0]), 1.0)


def test_w1_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        wasserstein1(from_samples(rng.normal(size=(5, 2))), from_samples(rng.normal(size=(5, 3))))


def test_noise_floor_scales_like_inverse_root_n(rng):
    small = noise_floor(from_samples(rng.exponential(size=1000)))[0]
    large = noise_floor(from_samples(rng.exponential(size=100_000)))[0]
    assert 3 < small / large < 30


def test_self_distance_near_floor():
    # two ensembles of the same system under different master seeds
    sys, v0 = ou([1.0, 2.0], [1.0, 0.5]), np.array([1.0 + 0.5j, 0.3 - 0.2j])
    a = action_distribution(run_ensemble(sys, v0, 4000, PathConfig(0.01, 2.0, seed=1), [2.0]), 2.0)
    b = action_distribution(run_ensemble(sys, v0, 4000, PathConfig(0.01, 2.0, seed=2), [2.0]), 2.0)
    assert np.all(wasserstein1(a, b).per_coordinate <= 3 * noise_floor(a, b))


# --- moments ----------------------------------------------------------------

def test_rotation_moments_constant():
    ens = run_ensemble(rotation(), np.array([1.0, 0.5j]), 10, PathConfig(0.01, 2.0, seed=1),
                       [0.5, 1.0, 2.0])
    rep = moment_report(ens)
    np.testing.assert_allclose(rep.moments, rep.moments[:, :1] * np.ones((1, 3)), rtol=1e-13)
    assert not rep.growth


def test_growth_flagged():
    grow = SdeSystem(space="complex", n=1, m=1, drift=lambda x: x,
                     dispersion=lambda x: np.zeros(x.shape + (1,)))
    ens = run_ensemble(grow, np.array([1.0 + 0j]), 4, PathConfig(0.01, 3.0), [1.0, 2.0, 3.0])
    rep = moment_report(ens)
    assert rep.growth and rep.slopes[0] == pytest.approx(math.log(1.01) / 0.01, rel=1e-9)


def test_ou_second_moment_plateau():
    nu, b = np.array([1.0, 2.0]), np.array([1.0, 0.5])
    N = 10_000
    ens = run_ensemble(ou(nu, b), np.array([1.0 + 0.5j, 0.3 - 0.2j]), N,
                       PathConfig(5e-3, 5.0, seed=9), [3.0, 4.0, 5.0])
    rep = moment_report(ens)
    target = np.sum(b ** 2 / nu)
    r2 = np.sum(np.abs(ens.snapshots[-1]) ** 2, axis=-1)
    se = r2.std() / math.sqrt(N)
    # Euler bias on the stationary variance is about nu * dtau / 2
    assert np.all(np.abs(rep.moments[1] - target) <= 3 * se + 0.005 * target)
    assert not rep.growth


@given(st.integers(0, 10_000))
def test_even_moments_nonnegative(seed):
    ens = run_ensemble(ou(), np.array([0.3 + 0j]), 5, PathConfig(0.1, 0.3, seed=seed), [0.1, 0.3])
    assert np.all(moment_report(ens, orders=(2, 4)).moments >= 0)


# --- exit times -------------------------------------------------------------

def test_huge_box_never_exits():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        rep = exit_time_stats(ou(), np.array([0.5 + 0j]), DomainBox(np.array([1e6])), 200,
                              PathConfig(1e-2, 1.0, seed=1))
    assert rep.exits == 0 and np.all(rep.cdf == 0) and rep.exponent is None
    assert any(issubclass(x.category, EnsembleWarning) for x in w)
    assert exit_csv(rep).count("\n") == len(rep.lambdas) + 1


def test_box_at_start_exits_immediately():
    x0 = np.array([0.5 + 0j, 0.2j])
    rep = exit_time_stats(ou([1.0, 1.0], [1.0, 1.0]), x0, DomainBox(np.abs(x0)), 500,
                          PathConfig(1e-3, 0.5, seed=2))
    # exits are seen on the grid, so theta is a few steps rather than exactly 0
    assert rep.exits == 500
    assert np.mean(rep.exit_times == 1e-3) >= 0.5
    assert np.quantile(rep.exit_times, 0.9) <= 10 * 1e-3


def test_start_outside_box_rejected():
    with pytest.raises(ValueError):
        exit_time_stats(ou(), np.array([2.0 + 0j]), DomainBox(np.array([1.0])), 10,
                        PathConfig(1e-2, 1.0))


def test_exit_cdf_nondecreasing_and_exponent(dd_model):
    sys = build_full(dd_model.H, dd_model.P, dd_model.B, 0.01)
    rep = exit_time_stats(sys, np.array([1.0, 0.25]), DomainBox(np.array([2.0, 0.8])), 2000,
                          PathConfig(1e-3, 1.0, seed=7))
    assert np.all(np.diff(rep.cdf) >= 0)
    assert 40 <= rep.exits <= 400
    assert rep.exponent >= 0.45 and math.isfinite(rep.max_ratio_sqrt)


# --- stationary law ---------------------------------------------------------

def test_ou_stationary_law_is_exponential():
    nu, b = np.array([1.0, 2.0]), np.array([1.0, 0.5])
    est = stationary_estimate(ou(nu, b), np.array([0.5, 0.5]), 3.0, 8.0, 2000,
                              PathConfig(5e-3, 8.0, seed=4))
    assert est.stationary
    means = b ** 2 / (2 * nu)
    assert np.all(wasserstein1_exponential(est.distribution, means).per_coordinate
                  <= np.maximum(0.1 * means, 3 * est.floor))


def test_stationary_estimates_forget_initial_condition():
    sys = ou([1.0, 2.0], [1.0, 0.5])
    cfg = PathConfig(5e-3, 8.0, seed=4)
    a = stationary_estimate(sys, np.array([0.5, 0.5]), 4.0, 8.0, 1000, cfg)
    b = stationary_estimate(sys, np.array([2.5, 2.5]), 4.0, 8.0, 1000, cfg)
    assert np.all(wasserstein1(a.distribution, b.distribution).per_coordinate
                  <= 2 * noise_floor(a.distribution, b.distribution))


def test_pure_rotation_flagged_degenerate():
    with pytest.warns(EnsembleWarning):
        est = stationary_estimate(rotation(), np.array([1.0, 0.5j]), 0.5, 1.0, 10,
                                  PathConfig(0.01, 1.0, seed=1))
    assert est.degenerate and not est.stationary


# --- isolation and export ---------------------------------------------------

def test_diverged_paths_do_not_touch_others():
    blow = SdeSystem(space="complex", n=1, m=1, drift=lambda x: x ** 3,
                     dispersion=lambda x: np.ones(x.shape + (1,)), noise_kind="real")
    cfg = PathConfig(0.05, 3.0, seed=8)
    with pytest.warns(EnsembleWarning):
        ens = run_ensemble(blow, np.array([0.3]), 100, cfg, [3.0])
    alone = integrate_batch(blow, np.array([0.3]), cfg, 100, [3.0])
    np.testing.assert_array_equal(ens.actions(3.0), 0.5 * np.abs(alone.snapshots[-1][~alone.diverged]) ** 2)
    assert len(ens.actions(3.0)) == 100 - ens.diverged_count


def test_ensemble_csv_layout():
    ens = run_ensemble(ou(), np.array([1.0 + 0j]), 3, PathConfig(0.1, 1.0, seed=1), [0.5, 1.0])
    lines = ensemble_csv(ens).splitlines()
    assert lines[0] == "path_id,tau,coordinate,value"
    assert len(lines) == 1 + 3 * 2 * 1
    pid, tau, k, val = lines[1].split(",")
    assert (pid, tau, k) == ("0", "0.5", "0")
    assert float(val) == ens.actions(0.5)[0, 0]


def test_to_json_handles_numpy():
    s = to_json({"a": np.arange(2), "b": np.float64(0.5), "c": 1 + 2j})
    assert '"b": 0.5' in s and s.endswith("\n")
