import math

import numpy as np
import pytest

from structmix import (
    ModelSpec,
    ParameterError,
    ParametricSpec,
    StructuredCovariance,
    ValidityError,
    ar1_block,
    build_sigma,
    dense_cholesky_precision,
    ensure_pd,
    fit_parametric,
    kl_divergence,
)
from structmix.errors import DimensionError


def random_pd(rng, p, ridge=None):
    a = rng.standard_normal((p, p))
    return a @ a.T + (ridge if ridge is not None else p) * np.eye(p)


def test_model_spec_index_map():
    spec = ModelSpec(kg=2, kf=3, t=4, pu=2, pw=1, n=10)
    assert spec.p == 2 + 3 * 4
    assert spec.col_kind(0) == ("geom", 0)
    assert spec.col_kind(1) == ("geom", 1)
    assert spec.col_kind(2) == ("func", 0, 0)
    assert spec.col_kind(2 + 4) == ("func", 1, 0)
    assert spec.func_col(2, 3) == spec.p - 1
    assert spec.n_coef == 2 * 2 + 3 * 3


def test_model_spec_rejects_bad_counts():
    with pytest.raises(ParameterError):
        ModelSpec(kg=0, kf=1, t=1, pu=1, pw=0, n=1)
    with pytest.raises(ParameterError):
        ModelSpec(kg=1, kf=1, t=1, pu=1, pw=-1, n=1)


def test_build_sigma_two_by_two():
    spec = ModelSpec(kg=1, kf=1, t=1, pu=1, pw=0, n=1)
    cov = StructuredCovariance(sigma_gg=[4.0], sigma_ff=[[[9.0]]],
                               sigma_gf=[[[3.0]]], sigma_eps2=0.0)
    assert np.array_equal(build_sigma(cov, spec), [[4.0, 3.0], [3.0, 9.0]])


def test_build_sigma_zero_cross_blocks_is_block_diagonal():
    spec = ModelSpec(kg=2, kf=2, t=3, pu=1, pw=0, n=1)
    rng = np.random.default_rng(0)
    cov = StructuredCovariance(
        sigma_gg=[1.0, 2.0],
        sigma_ff=[random_pd(rng, 3, 3.0) for _ in range(2)],
        sigma_gf=np.zeros((2, 2, 3)),
        sigma_eps2=0.0,
    )
    sigma = build_sigma(cov, spec)
    assert np.array_equal(sigma[:2, 2:], np.zeros((2, 6)))
    assert np.array_equal(sigma[2:5, 5:], np.zeros((3, 3)))


def test_build_sigma_benchmark_config_is_pd():
    from structmix import benchmark_truth

    spec = ModelSpec(kg=5, kf=5, t=5, pu=2, pw=2, n=1)
    truth = benchmark_truth(5)
    assert np.array_equal(np.diag(truth.covariance.sigma_gg),
                          build_sigma(truth.covariance, spec)[:5, :5]
                          - 0.25 * np.eye(5))
    sigma = build_sigma(truth.covariance, spec)
    assert sigma.shape == (30, 30)
    assert np.linalg.eigvalsh(sigma)[0] > 0


def test_build_sigma_shape_mismatch():
    spec = ModelSpec(kg=2, kf=1, t=2, pu=1, pw=0, n=1)
    cov = StructuredCovariance(sigma_gg=[1.0], sigma_ff=[[[1.0]]],
                               sigma_gf=[[[0.0]]], sigma_eps2=0.0)
    with pytest.raises(DimensionError):
        build_sigma(cov, spec)


def test_build_sigma_rejects_non_pd():
    spec = ModelSpec(kg=1, kf=1, t=1, pu=1, pw=0, n=1)
    cov = StructuredCovariance(sigma_gg=[1.0], sigma_ff=[[[1.0]]],
                               sigma_gf=[[[2.0]]], sigma_eps2=0.0)  # det < 0
    with pytest.raises(ValidityError):
        build_sigma(cov, spec)


def test_ar1_block_values():
    expected = [[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]]
    assert np.array_equal(ar1_block(1.0, 0.5, 3), expected)
    assert np.array_equal(ar1_block(2.5, 0.0, 4), 2.5 * np.eye(4))


def test_ar1_block_pd_over_rho_grid():
    for rho in np.linspace(-0.95, 0.95, 21):
        assert np.linalg.eigvalsh(ar1_block(30.0, rho, 5))[0] > 0


def test_ar1_block_parameter_errors():
    with pytest.raises(ParameterError):
        ar1_block(1.0, 1.0, 3)
    with pytest.raises(ParameterError):
        ar1_block(-1.0, 0.5, 3)


def test_kl_divergence_identical_is_zero():
    sigma = random_pd(np.random.default_rng(1), 6)
    assert kl_divergence(sigma, sigma) == 0.0


def test_kl_divergence_scalar_formulas():
    assert kl_divergence([[2.0]], [[1.0]]) == pytest.approx(2.0 - math.log(2.0) - 1.0)
    assert kl_divergence(2.0 * np.eye(2), np.eye(2)) == pytest.approx(
        4.0 - math.log(4.0) - 2.0)


def test_kl_divergence_nonnegative_on_random_pairs():
    rng = np.random.default_rng(2)
    for _ in range(200):
        p = int(rng.integers(1, 8))
        assert kl_divergence(random_pd(rng, p), random_pd(rng, p)) >= 0.0


def test_kl_divergence_rejects_bad_input():
    with pytest.raises(ValidityError):
        kl_divergence([[1.0, 0.0], [0.0, -1.0]], np.eye(2))
    with pytest.raises(DimensionError):
        kl_divergence(np.eye(2), np.eye(3))
    with pytest.raises(ValidityError):
        kl_divergence([[1.0, 0.5], [0.0, 1.0]], np.eye(2))


def test_dense_cholesky_identity():
    f = dense_cholesky_precision(np.eye(4))
    assert np.array_equal(f.l, np.eye(4))
    assert np.array_equal(f.d, np.ones(4))


def test_dense_cholesky_two_by_two_by_hand():
    # regression of coordinate 2 on 1: zeta = 3/4, residual var = 9 - 9/4
    f = dense_cholesky_precision([[4.0, 3.0], [3.0, 9.0]])
    np.testing.assert_allclose(f.l, [[1.0, 0.0], [-0.75, 1.0]], atol=1e-12)
    np.testing.assert_allclose(f.d, [4.0, 6.75], atol=1e-12)


def test_dense_cholesky_matches_matrix_inverse():
    rng = np.random.default_rng(3)
    sigma = random_pd(rng, 5)
    f = dense_cholesky_precision(sigma)
    assert np.abs(f.precision() - np.linalg.inv(sigma)).max() < 1e-10


def test_dense_cholesky_round_trip_up_to_p40():
    rng = np.random.default_rng(4)
    for p in (2, 7, 17, 40):
        sigma = random_pd(rng, p)
        f = dense_cholesky_precision(sigma)
        assert np.abs(f.sigma() - sigma).max() < 1e-10


def test_dense_cholesky_rejects_asymmetric():
    m = np.eye(3)
    m[0, 1] = 1e-3
    with pytest.raises(ValidityError):
        dense_cholesky_precision(m)


def test_ensure_pd_passthrough_and_truncation():
    sigma = random_pd(np.random.default_rng(5), 4)
    assert np.abs(ensure_pd(sigma, 1e-5) - sigma).max() < 1e-12
    out = ensure_pd(np.diag([1.0, -0.1]), 1e-5)
    assert out == pytest.approx(np.diag([1.0, 1e-5]))


def test_ensure_pd_floors_random_indefinite():
    rng = np.random.default_rng(6)
    m = rng.standard_normal((6, 6))
    m = 0.5 * (m + m.T)
    out = ensure_pd(m, 1e-5)
    assert np.linalg.eigvalsh(out)[0] == pytest.approx(1e-5, rel=1e-6)


def test_ensure_pd_idempotent():
    rng = np.random.default_rng(7)
    m = rng.standard_normal((5, 5))
    m = 0.5 * (m + m.T)
    once = ensure_pd(m, 1e-3)
    assert np.abs(ensure_pd(once, 1e-3) - once).max() < 1e-12


def test_ensure_pd_rejects_asymmetric():
    with pytest.raises(ValidityError):
        ensure_pd([[1.0, 0.5], [0.0, 1.0]], 1e-5)


def _ar1_sigma(spec, variances, rho, eps2, rng):
    gf = np.zeros((spec.kf, spec.kg, spec.t))
    gf[0, 0, :] = 0.3 * np.sqrt(4.0 * variances[0]) * 0.5 ** np.arange(spec.t)
    cov = StructuredCovariance(
        sigma_gg=4.0 * np.ones(spec.kg),
        sigma_ff=np.stack([ar1_block(v, rho, spec.t) for v in variances]),
        sigma_gf=gf,
        sigma_eps2=eps2,
    )
    return build_sigma(cov, spec)


def test_fit_parametric_round_trip():
    spec = ModelSpec(kg=2, kf=2, t=4, pu=1, pw=0, n=1)
    sigma = _ar1_sigma(spec, [3.0, 1.5], 0.5, 0.25, np.random.default_rng(8))
    template = ParametricSpec(block_variances=[1.0, 1.0], rho=0.0, sigma_eps2=0.1)
    fit = fit_parametric(sigma, template, spec)
    assert fit.params.rho == pytest.approx(0.5, abs=1e-3)
    assert fit.params.sigma_eps2 == pytest.approx(0.25, abs=1e-3)
    assert fit.params.block_variances == pytest.approx([3.0, 1.5], abs=1e-2)
    assert fit.kl < 1e-8


def test_fit_parametric_zero_at_matching_start():
    spec = ModelSpec(kg=1, kf=1, t=3, pu=1, pw=0, n=1)
    sigma = _ar1_sigma(spec, [2.0], 0.4, 0.1, np.random.default_rng(9))
    template = ParametricSpec(block_variances=[2.0], rho=0.4, sigma_eps2=0.1)
    fit = fit_parametric(sigma, template, spec)
    assert fit.kl < 1e-10


def test_fit_parametric_misspecified_returns_nonnegative_kl():
    spec = ModelSpec(kg=1, kf=1, t=3, pu=1, pw=0, n=1)
    rng = np.random.default_rng(10)
    sigma = np.zeros((4, 4))
    sigma[0, 0] = 2.0
    sigma[1:, 1:] = random_pd(rng, 3, 3.0)  # temporal block far from AR(1)
    template = ParametricSpec(block_variances=[1.0], rho=0.2, sigma_eps2=0.1)
    fit = fit_parametric(sigma, template, spec)
    assert fit.kl >= 0.0


def test_parametric_spec_validation():
    with pytest.raises(ParameterError):
        ParametricSpec(block_variances=[1.0], rho=1.0, sigma_eps2=0.0)
    with pytest.raises(ParameterError):
        ParametricSpec(block_variances=[-1.0], rho=0.0, sigma_eps2=0.0)
