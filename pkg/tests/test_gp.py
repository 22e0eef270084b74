import math
import warnings

import numpy as np
import pytest

from lyapmpc.gp import (
    GPModel,
    GPNumericalError,
    KernelSpec,
    _neg_lml_and_grad,
    _pack,
    fit_gp,
    fit_hyperparameters,
    kernel_eval,
    kernel_matrix,
    log_marginal_likelihood,
    posterior,
)


def matern52(r, sf2):
    return sf2 * (1 + math.sqrt(5) * r + 5 * r * r / 3) * math.exp(-math.sqrt(5) * r)


def matern32(r, sf2):
    return sf2 * (1 + math.sqrt(3) * r) * math.exp(-math.sqrt(3) * r)


def dense_posterior(X, y, spec, noise, Xq):
    mu, sd = y.mean(), y.std()
    g = (y - mu) / sd
    K = kernel_matrix(spec, X, X) + noise * np.eye(len(y))
    Kinv = np.linalg.inv(K)
    Ks = kernel_matrix(spec, Xq, X)
    mean = Ks @ Kinv @ g
    var = spec.signal_var - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)
    return mu + sd * mean, var * sd**2


@pytest.mark.parametrize("nu, ref", [(2.5, matern52), (1.5, matern32)])
def test_kernel_spot_values(nu, ref):
    ls = np.array([0.7, 1.9])
    spec = KernelSpec(ls, 1.7, nu)
    a = np.array([0.2, -0.4])
    for r in (0.5, 1.0, 2.0):
        direction = np.array([0.6, 0.8])
        b = a + r * direction * ls / np.linalg.norm(direction)
        assert kernel_eval(spec, a, b) == pytest.approx(ref(r, 1.7), rel=1e-12)
    assert kernel_eval(spec, a, a) == 1.7
    vals = [kernel_eval(spec, a, a + t) for t in (0.1, 1.0, 5.0, 50.0)]
    assert all(v1 > v2 for v1, v2 in zip(vals, vals[1:])) and vals[-1] < 1e-12


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        KernelSpec(np.ones(2), nu=0.5)


def test_posterior_matches_dense(rng):
    X = rng.uniform(-2, 2, (5, 3))
    y = rng.standard_normal(5) * 4 + 1
    spec = KernelSpec(np.array([0.8, 1.5, 2.0]), 1.3)
    m = GPModel(X, y, spec, 1e-3)
    Xq = rng.uniform(-2, 2, (7, 3))
    mean, var = m.predict(Xq)
    dm, dv = dense_posterior(X, y, spec, 1e-3, Xq)
    np.testing.assert_allclose(mean, dm, atol=1e-8)
    np.testing.assert_allclose(var, dv, atol=1e-8)
    mu1, v1 = posterior(m, Xq[0])
    assert mu1 == pytest.approx(mean[0], abs=1e-12) and v1 == pytest.approx(var[0], abs=1e-12)


def test_lml_matches_dense(rng):
    X = rng.uniform(-2, 2, (6, 2))
    y = rng.standard_normal(6)
    spec = KernelSpec(np.array([0.5, 1.2]), 0.9)
    m = GPModel(X, y, spec, 0.05)
    K = kernel_matrix(spec, X, X) + 0.05 * np.eye(6)
    g = m.gamma
    dense = -0.5 * g @ np.linalg.solve(K, g) - 0.5 * np.linalg.slogdet(K)[1] - 3 * np.log(2 * np.pi)
    assert log_marginal_likelihood(m) == pytest.approx(dense, abs=1e-8)
    perm = rng.permutation(6)
    assert GPModel(X[perm], y[perm], spec, 0.05).log_marginal_likelihood() == pytest.approx(dense, abs=1e-10)


def test_lml_scalar_case():
    m = GPModel([[0.0]], [2.0], KernelSpec(np.ones(1), 1.5), 0.5, standardize=False)
    s = 2.0
    assert m.log_marginal_likelihood() == pytest.approx(-0.5 * 4 / s - 0.5 * np.log(s) - 0.5 * np.log(2 * np.pi))


def test_noiseless_interpolation(rng):
    m = GPModel([[0.3, 0.1]], [4.2], KernelSpec(np.ones(2)), 0.0)
    mean, var = m.predict([[0.3, 0.1]])
    assert mean[0] == pytest.approx(4.2, abs=1e-10) and var[0] <= 1e-10
    X = rng.uniform(-1, 1, (8, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    m = GPModel(X, y, KernelSpec(np.array([0.7, 0.7])), 1e-12)
    mean, var = m.predict(X)
    np.testing.assert_allclose(mean, y, atol=1e-5)


def test_variance_bounds_and_far_field(rng):
    X = rng.uniform(-1, 1, (10, 2))
    y = rng.standard_normal(10)
    m = GPModel(X, y, KernelSpec(np.array([0.4, 0.9]), 2.0), 1e-4)
    g = np.linspace(-3, 3, 41)
    grid = np.array(np.meshgrid(g, g)).reshape(2, -1).T
    _, var = m.predict(grid)
    assert np.all(var >= 0) and np.all(var <= m.prior_var + 1e-9)
    mean, var = m.predict([[1e3, 1e3]])
    assert mean[0] == pytest.approx(m.y_mean, abs=1e-12)
    assert var[0] == pytest.approx(m.prior_var, rel=1e-12)


def test_screening_adding_point_never_increases_variance(rng):
    spec = KernelSpec(np.array([0.3]))
    X = rng.uniform(0, 1, (4, 1))
    y = rng.standard_normal(4)
    grid = np.linspace(-0.5, 1.5, 101)[:, None]
    prev = GPModel(X, y, spec, 1e-6, standardize=False).predict(grid)[1]
    for _ in range(5):
        X = np.vstack([X, rng.uniform(0, 1, (1, 1))])
        y = np.append(y, rng.standard_normal())
        var = GPModel(X, y, spec, 1e-6, standardize=False).predict(grid)[1]
        assert np.all(var <= prev + 1e-9)
        prev = var


def test_jitter_and_constant_targets():
    X = np.zeros((3, 2))  # identical rows: singular without jitter
    m = GPModel(X, [1.0, 1.0, 1.0], KernelSpec(np.ones(2)), 0.0)
    assert m.jitter > 0 and m.y_scale == 1.0
    mean, _ = m.predict([[0.0, 0.0]])
    assert mean[0] == pytest.approx(1.0)


def test_nonfinite_targets_rejected():
    with pytest.raises(ValueError):
        GPModel([[0.0], [1.0]], [0.0, np.nan], KernelSpec(np.ones(1)), 1e-6)


def test_lml_gradient_matches_fd(rng):
    X = rng.uniform(-2, 2, (12, 3))
    gamma = rng.standard_normal(12)
    for nu in (1.5, 2.5):
        p = np.array([-0.2, 0.4, 0.1, 0.3, np.log(0.05)])
        _, g = _neg_lml_and_grad(p, X, gamma, nu)
        h = 1e-6
        fd = np.array([(_neg_lml_and_grad(p + h * e, X, gamma, nu)[0] - _neg_lml_and_grad(p - h * e, X, gamma, nu)[0])
                       / (2 * h) for e in np.eye(5)])
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_fit_recovers_lengthscales():
    rng = np.random.default_rng(7)
    true_ls = np.array([0.3, 2.0])
    spec = KernelSpec(true_ls, 1.0)
    X = rng.uniform(-2, 2, (120, 2))
    K = kernel_matrix(spec, X, X) + 1e-4 * np.eye(120)
    y = np.linalg.cholesky(K) @ rng.standard_normal(120)
    fitted, noise = fit_hyperparameters(X, y, 2.5, 8, np.random.default_rng(0))
    assert np.all(np.abs(np.log(fitted.lengthscales) - np.log(true_ls)) <= 0.5)


def test_fit_beats_every_start(rng):
    X = rng.uniform(-1, 1, (15, 2))
    y = np.cos(2 * X[:, 0]) * X[:, 1]
    spec, noise = fit_hyperparameters(X, y, 2.5, 8, np.random.default_rng(3))
    gamma = GPModel(X, y, spec, noise).gamma
    best = _neg_lml_and_grad(_pack(spec, noise, 2), X, gamma, 2.5)[0]
    starts = np.random.default_rng(3)
    for _ in range(8):
        x0 = np.concatenate([starts.uniform(np.log(0.1), np.log(10), 2),
                             [starts.uniform(np.log(1e-2), np.log(1e2)), starts.uniform(np.log(1e-6), np.log(1e-1))]])
        assert best <= _neg_lml_and_grad(x0, X, gamma, 2.5)[0] + 1e-9


def test_duplicates_noise_paired(rng):
    X = rng.uniform(-1, 1, (10, 1))
    y = np.sin(3 * X[:, 0])
    Xd = np.vstack([X, X])
    _, clean = fit_hyperparameters(Xd, np.concatenate([y, y]), 2.5, 8, np.random.default_rng(1))
    _, noisy = fit_hyperparameters(Xd, np.concatenate([y, y + 0.2 * rng.standard_normal(10)]), 2.5, 8,
                                   np.random.default_rng(1))
    assert clean <= noisy


def test_fit_fallback_keeps_previous(monkeypatch):
    import lyapmpc.gp as gp

    prev = (KernelSpec(np.ones(1)), 1e-3)
    monkeypatch.setattr(gp, "_neg_lml_and_grad", lambda *a: (1e25, np.zeros(3)))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        out = gp.fit_hyperparameters([[0.0], [1.0]], [0.0, 1.0], previous=prev, rng=np.random.default_rng(0))
    assert out is prev and any("previous" in str(x.message) for x in w)
    with pytest.raises(GPNumericalError):
        gp.fit_hyperparameters([[0.0], [1.0]], [0.0, 1.0], rng=np.random.default_rng(0))


def test_fit_gp_deterministic(rng):
    X = rng.uniform(-1, 1, (12, 4))
    y = X.sum(1) ** 2
    a = fit_gp(X, y, rng=np.random.default_rng(5))
    b = fit_gp(X, y, rng=np.random.default_rng(5))
    assert a.hyperparameters() == b.hyperparameters()
