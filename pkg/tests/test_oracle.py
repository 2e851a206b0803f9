import numpy as np
import pytest

from fieldkalman.filter import SystemModel, gain_function, update_covariance
from fieldkalman.gain import precompute_gain
from fieldkalman.grid_fourier import GriddedFunction, GridSpec
from fieldkalman.oracle import (
    OracleError,
    build_discrete,
    compare_gains,
    convergence_study,
    discrete_kalman_step,
    information_matrix,
    standard_posterior,
)
from fieldkalman.random_field import SquaredExponentialKernel


@pytest.fixture(scope="module")
def probe_model():
    g = GridSpec.from_extent((-0.5, -0.5), (0.5, 0.5), 0.05)  # 21 x 21
    x, y = g.mesh()
    gamma = GriddedFunction(g, np.stack([np.exp(-20 * (x**2 + y**2)), 0 * x], axis=-1)[..., None, :])
    return SystemModel(np.array([[1.0, 1.0], [0.0, 1.0]]), 0.01 * np.eye(2), gamma,
                       SquaredExponentialKernel(10.0, 0.025))


def test_stride_one_on_probe_grid(probe_model):
    dm = build_discrete(probe_model, 1)
    assert dm.points.shape == (441, 2)
    assert dm.Gamma.shape == (441, 2) and dm.Rmat.shape == (441, 441)
    assert np.array_equal(dm.Rmat, dm.Rmat.T)
    eig = np.linalg.eigvalsh(dm.Rmat)
    assert eig.min() >= -1e-8 * eig.max()
    assert dm.weights.sum() == pytest.approx(1.0)


def test_toeplitz_structure(probe_model):
    dm = build_discrete(probe_model, 1)
    rng = np.random.default_rng(0)
    n = 21
    for _ in range(50):
        a, b = rng.integers(0, n, 2), rng.integers(0, n, 2)
        shift = rng.integers(-min(a.min(), b.min()), n - max(a.max(), b.max()), 2)
        i, j = np.ravel_multi_index(a, (n, n)), np.ravel_multi_index(b, (n, n))
        i2, j2 = np.ravel_multi_index(a + shift, (n, n)), np.ravel_multi_index(b + shift, (n, n))
        assert dm.Rmat[i, j] == pytest.approx(dm.Rmat[i2, j2], rel=1e-12)


def test_single_point_model(probe_model):
    dm = build_discrete(probe_model, 100)
    assert dm.points.shape == (1, 2) and np.array_equal(dm.points[0], [-0.5, -0.5])
    assert dm.weights[0] == pytest.approx(1.0)


def test_cap_enforced(probe_model):
    with pytest.raises(OracleError, match="larger stride"):
        build_discrete(probe_model, 1, cap=100)
    with pytest.raises(ValueError):
        build_discrete(probe_model, 0)


def _scalar_dm(gamma, r, p=None):
    from fieldkalman.oracle import DiscreteModel

    return DiscreteModel(np.eye(1), np.eye(1), np.array([[gamma]]), np.array([[r]]),
                         np.zeros((1, 1)), np.ones(1), (np.array([0]),), 1, (1.0,))


def test_scalar_kalman():
    K, P = discrete_kalman_step(np.array([[1.0]]), _scalar_dm(1.0, 1.0))
    assert K[0, 0] == pytest.approx(0.5) and P[0, 0] == pytest.approx(0.5)
    K, P = discrete_kalman_step(np.array([[1.0]]), _scalar_dm(0.0, 1.0))
    assert K[0, 0] == 0 and P[0, 0] == 1.0


def test_singular_innovation():
    with pytest.raises(OracleError):
        discrete_kalman_step(np.array([[0.0]]), _scalar_dm(1.0, 0.0))


def test_joseph_matches_standard(probe_model):
    dm = build_discrete(probe_model, 2)
    P_prior = np.array([[0.03, 0.01], [0.01, 0.02]])
    K, P = discrete_kalman_step(P_prior, dm)
    assert np.abs(P - standard_posterior(K, P_prior, dm)).max() <= 1e-8


def test_zero_gamma_oracle(probe_model):
    m = SystemModel(probe_model.A, probe_model.Q,
                    GriddedFunction(probe_model.grid, np.zeros(probe_model.gamma.values.shape)),
                    probe_model.kernel)
    P_prior = np.array([[0.03, 0.01], [0.01, 0.02]])
    K, P = discrete_kalman_step(P_prior, build_discrete(m, 2))
    assert np.all(K == 0) and np.allclose(P, P_prior)


def test_identical_single_point_models_agree():
    # a continuum "grid" the oracle samples completely: both routes see one pixel
    g = GridSpec((0.0, 0.0), (1.0, 1.0), (2, 2))
    gamma = GriddedFunction(g, np.ones(g.counts + (1, 1)))
    model = SystemModel(np.eye(1), np.eye(1), gamma, SquaredExponentialKernel(1.0, 0.1))
    dm = build_discrete(model, 2)
    P_prior = np.array([[1.0]])
    K, P = discrete_kalman_step(P_prior, dm)
    S = information_matrix(dm)
    P_cont = update_covariance(P_prior, S)
    kappa = GriddedFunction(g, np.broadcast_to(K[0, 0] / dm.weights[0], g.counts + (1, 1)).copy())
    rep = compare_gains(kappa, P_cont, dm, P_prior)
    assert rep.cov_gap <= 1e-10
    assert rep.gain_rel_err <= 1e-10


def test_information_matrix_converges_to_S(model, precomp):
    dm = build_discrete(model, 4)
    assert information_matrix(dm)[0, 0] == pytest.approx(precomp.S[0, 0], rel=1e-3)


def test_convergence_study_reference(scenario, model, precomp):
    P_prior = scenario.A @ scenario.P0 @ scenario.A.T + scenario.Q
    P_post = update_covariance(P_prior, precomp.S)
    kappa = gain_function(P_post, precomp)
    rows, monotone = convergence_study(model, kappa, P_post, P_prior, (4, 16, 8),
                                       length_scale=scenario.ell)
    assert [r.stride for r in rows] == [16, 8, 4]
    assert monotone
    assert rows[-1].cov_gap <= 0.05
    assert rows[-1].gain_rel_err <= 0.01
    assert not rows[0].resolved and rows[-1].resolved


def test_white_noise_limit_flagged():
    # tiny length scale on a coarse grid: the samples carry nearly independent
    # noise and the two filters stop describing the same measurement
    g = GridSpec.from_extent((-0.5, -0.5), (0.5, 0.5), 0.05)
    x, y = g.mesh()
    gamma = GriddedFunction(g, np.exp(-5 * (x**2 + y**2))[..., None, None])
    k = SquaredExponentialKernel(1.0, 0.005)
    model = SystemModel(np.eye(1), np.eye(1), gamma, k)
    pre = precompute_gain(gamma, k)
    P_prior = np.eye(1)
    P_cont = update_covariance(P_prior, pre.S)
    rep = compare_gains(gain_function(P_cont, pre), P_cont, build_discrete(model, 1), P_prior,
                        length_scale=0.005)
    assert not rep.resolved
    assert rep.cov_gap > 0.05
