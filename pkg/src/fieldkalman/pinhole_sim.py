"""Camera moving towards a patterned wall, observed through a pinhole.

The state is ``[q, q_dot]`` (distance and its rate). Every pixel ``i`` sees
the wall point ``i q / L_f``; the measurement model is linearised once about
``lin_point`` and kept fixed.

Seeding: trial ``t`` draws its initial state and process noise from
``SeedSequence(seed, spawn_key=(t, 0))`` and the measurement noise of steps
``2j + 1`` and ``2j + 2`` from ``SeedSequence(seed, spawn_key=(t, 1, j))``
(one complex transform yields both fields).
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .filter import SystemModel, covariance_trajectory
from .gain import GainPrecomputation, RegularizationPolicy, precompute_gain
from .grid_fourier import GridSpec, GriddedFunction
from .random_field import FieldSample, SquaredExponentialKernel, get_sampler
from .riccati import spectral_radius

FULL_SCALE_TRIALS = 20_000


@dataclass(frozen=True)
class PinholeScenario:
    """Simulation parameters; the defaults are the reference scenario."""

    eta: float = 0.1
    xi: float = 0.8
    focal: float = 0.01
    lin_point: tuple[float, float] = (1.0, 0.0)
    delta_t: float = 1.0
    sigma_q2: float = 0.01
    sigma_qd2: float = 0.01
    nu: float = 10.0
    ell: float = 0.025
    domain_lower: tuple[float, float] = (-0.5, -0.5)
    domain_upper: tuple[float, float] = (0.5, 0.5)
    spacing: float = 0.005
    x0: tuple[float, float] = (1.0, 0.0)
    p0_mode: str = "fixed"  # "fixed": x0 known exactly, P0 = Q; "sampled": x0 ~ N(x_hat0, P0)
    trials: int = 2000
    horizon: int = 50
    seed: int = 0
    truth: str = "linear"  # or "nonlinear": pinhole map for measurements
    gamma_scale: float = 1.0  # 0 switches the measurement off
    reg_mode: str = "band"
    reg_eps: float = 1e-8

    def __post_init__(self):
        for name in ("lin_point", "domain_lower", "domain_upper", "x0"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        if self.eta < 0 or self.xi < 0:
            raise ValueError("eta and xi must be nonnegative")
        if self.p0_mode not in ("fixed", "sampled"):
            raise ValueError(f"unknown p0_mode {self.p0_mode!r}")
        if self.truth not in ("linear", "nonlinear"):
            raise ValueError(f"unknown truth model {self.truth!r}")
        if self.trials < 1 or self.horizon < 1:
            raise ValueError("trials and horizon must be >= 1")
        if self.sigma_q2 < 0 or self.sigma_qd2 < 0:
            raise ValueError("process noise variances must be nonnegative")

    @property
    def A(self) -> np.ndarray:
        return np.array([[1.0, self.delta_t], [0.0, 1.0]])

    @property
    def Q(self) -> np.ndarray:
        return np.diag([self.sigma_q2, self.sigma_qd2])

    @property
    def P0(self) -> np.ndarray:
        return self.Q

    @property
    def x_hat0(self) -> np.ndarray:
        return np.array(self.x0)

    @property
    def grid(self) -> GridSpec:
        return GridSpec.from_extent(self.domain_lower, self.domain_upper, self.spacing)

    @property
    def kernel(self) -> SquaredExponentialKernel:
        return SquaredExponentialKernel(self.nu, self.ell)

    @property
    def regularization(self) -> RegularizationPolicy:
        return RegularizationPolicy(self.reg_mode, self.reg_eps)


def wall_intensity(p, scenario: PinholeScenario):
    """Grey level ``exp(-(eta |p|)^2) cos(xi |p|) + 1`` of the wall at ``p``."""
    r = np.linalg.norm(np.asarray(p, dtype=float), axis=-1)
    return np.exp(-((scenario.eta * r) ** 2)) * np.cos(scenario.xi * r) + 1.0


def pixel_intensity(points, q, scenario: PinholeScenario):
    """Noise-free pixel value ``C(i q / L_f)``; ``q`` broadcasts against the pixels."""
    r = np.linalg.norm(points, axis=-1)
    s = np.asarray(q, dtype=float)[..., None, None] * r / scenario.focal
    return np.exp(-((scenario.eta * s) ** 2)) * np.cos(scenario.xi * s) + 1.0


def gamma_values(points, scenario: PinholeScenario) -> np.ndarray:
    """d C(i q / L_f) / d[q, q_dot] at the linearisation point, shape ``(..., 1, 2)``."""
    q = scenario.lin_point[0]
    r = np.linalg.norm(points, axis=-1)
    a = scenario.eta * r / scenario.focal
    b = scenario.xi * r / scenario.focal
    dq = -np.exp(-((a * q) ** 2)) * (2 * a**2 * q * np.cos(b * q) + b * np.sin(b * q))
    out = np.zeros(r.shape + (1, 2))
    out[..., 0, 0] = scenario.gamma_scale * dq
    return out


def measurement_gamma(scenario: PinholeScenario) -> GriddedFunction:
    grid = scenario.grid
    return GriddedFunction(grid, gamma_values(grid.points(), scenario))


def system_model(scenario: PinholeScenario) -> SystemModel:
    return SystemModel(scenario.A, scenario.Q, measurement_gamma(scenario), scenario.kernel)


@lru_cache(maxsize=8)
def precompute(scenario: PinholeScenario) -> GainPrecomputation:
    model = system_model(scenario)
    return precompute_gain(model.gamma, model.kernel, scenario.regularization)


def stability_certificates(scenario: PinholeScenario, S) -> dict:
    """Explicit feedback matrices showing (A, Q) stabilizable and (A, G) detectable.

    ``M = I / (2 sigma_q^2)`` gives ``A - M Q = A - I/2``; with ``S = diag(G1, 0)``
    the choice ``M = [[1/G1, 1/(4 G1)], [0, 0]]`` gives ``A^T - S M = [[0, -1/4], [1, 1]]``.
    Both closed loops have spectral radius 1/2 when ``delta_t = 1``.
    """
    A, Q = scenario.A, scenario.Q
    S = np.asarray(S, dtype=float)
    g1 = S[0, 0]
    if g1 <= 0 or np.abs(S - np.diag([g1, 0.0])).max() > 1e-12 * g1:
        raise ValueError("certificates assume S = diag(G1, 0) with G1 > 0")
    M_stab = np.eye(2) / (2 * scenario.sigma_q2)
    M_det = np.array([[1 / g1, 1 / (4 * g1)], [0.0, 0.0]])
    stab = A - M_stab @ Q
    det = A.T - S @ M_det
    return {
        "G1": float(g1),
        "stabilizing_matrix": stab,
        "detecting_matrix": det,
        "rho_stabilizing": spectral_radius(stab),
        "rho_detecting": spectral_radius(det),
    }


def _process_rng(seed, trial):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, 0)))


def _measurement_rng(seed, trial, pair):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, 1, pair)))


def simulate_truth(scenario: PinholeScenario, seed=None, trial=0, horizon=None) -> np.ndarray:
    """True states ``x_0..x_H`` as an array of shape ``(H + 1, 2)``."""
    seed = scenario.seed if seed is None else seed
    horizon = scenario.horizon if horizon is None else horizon
    rng = _process_rng(seed, trial)
    x = np.empty((horizon + 1, 2))
    if scenario.p0_mode == "sampled":
        x[0] = rng.multivariate_normal(scenario.x_hat0, scenario.P0)
    else:
        x[0] = scenario.x0
    sd = np.sqrt([scenario.sigma_q2, scenario.sigma_qd2])
    w = rng.standard_normal((horizon, 2)) * sd
    A = scenario.A
    for k in range(horizon):
        x[k + 1] = A @ x[k] + w[k]
    return x


def _noise_free(states, scenario: PinholeScenario, points, gamma) -> np.ndarray:
    """Noise-free fields for a batch of states, shape ``(B,) + counts + (1,)``."""
    states = np.atleast_2d(states)
    if scenario.truth == "linear":
        return np.einsum("...ij,bj->b...i", gamma, states)
    # shift so the linear model z = gamma x stays the first-order expansion
    offset = (gamma @ np.array(scenario.lin_point))[..., 0] - pixel_intensity(
        points, scenario.lin_point[0], scenario
    )
    return (pixel_intensity(points, states[:, 0], scenario) + offset[None])[..., None]


def generate_measurement(x_k, scenario: PinholeScenario, seed=None, k=1, trial=0) -> FieldSample:
    """Measurement field at step ``k >= 1`` for true state ``x_k``."""
    if k < 1:
        raise ValueError("measurements start at k = 1")
    seed = scenario.seed if seed is None else seed
    grid = scenario.grid
    gamma = measurement_gamma(scenario).values
    sampler = get_sampler(scenario.kernel, grid)
    pair = sampler.sample_streams([_measurement_rng(seed, trial, (k - 1) // 2)])
    noise = pair[(k - 1) % 2]
    z = _noise_free(np.asarray(x_k, dtype=float), scenario, grid.points(), gamma)[0] + noise
    return FieldSample(grid, z[..., None])


def measurement_sequence(states, scenario: PinholeScenario, seed=None, trial=0) -> np.ndarray:
    """Fields for ``x_1..x_H`` (``states[1:]``), shape ``(H,) + counts + (1,)``."""
    seed = scenario.seed if seed is None else seed
    grid = scenario.grid
    horizon = len(states) - 1
    gamma = measurement_gamma(scenario).values
    sampler = get_sampler(scenario.kernel, grid)
    rngs = [_measurement_rng(seed, trial, j) for j in range((horizon + 1) // 2)]
    noise = sampler.sample_streams(rngs)[:horizon]
    return _noise_free(states[1:], scenario, grid.points(), gamma) + noise


@dataclass
class MonteCarloResult:
    steps: np.ndarray
    emp_mse: np.ndarray  # (H + 1, 2)
    stderr: np.ndarray  # (H + 1, 2)
    theo_mse: np.ndarray  # (H + 1, 2), diag of posterior covariance
    truth: np.ndarray  # trial 0 trajectory
    estimate: np.ndarray  # trial 0 estimates
    trials: int

    def steady_state(self, start=25):
        """Mean empirical and theoretical MSE over steps ``k >= start``.

        Short runs that end before ``start`` fall back to the last step.
        """
        sl = slice(min(start, len(self.steps) - 1), None)
        return self.emp_mse[sl].mean(axis=0), self.theo_mse[sl].mean(axis=0)


def _run_trial(trial, scenario, weighted_f, S_raw, posts):
    """Truth, fields and filter for one trial; returns (truth, estimates)."""
    states = simulate_truth(scenario, trial=trial)
    z = measurement_sequence(states, scenario, trial=trial)
    horizon = len(states) - 1
    # int f z_k di for every step at once; the filter below is then exact
    # algebra on these projections: int f (z - gamma x) = y - S_raw x
    y = z.reshape(horizon, -1) @ weighted_f
    A = scenario.A
    est = np.empty_like(states)
    est[0] = scenario.x_hat0
    for k in range(1, horizon + 1):
        pred = A @ est[k - 1]
        est[k] = pred + posts[k] @ (y[k - 1] - S_raw @ pred)
    return states, est


def monte_carlo_mse(scenario: PinholeScenario, threads: int = 1, trials=None) -> MonteCarloResult:
    trials = scenario.trials if trials is None else trials
    if trials > FULL_SCALE_TRIALS // 2:
        warnings.warn(f"{trials} trials at full resolution will take a long time", RuntimeWarning)
    model = system_model(scenario)
    pre = precompute(scenario)
    _, posts = covariance_trajectory(model, pre, scenario.P0, scenario.horizon)
    w = model.grid.trapezoid_weights()
    # (N * m, n): trapezoid weight times f^T at every pixel
    weighted_f = (w[..., None, None] * np.swapaxes(pre.f.values, -1, -2)).reshape(-1, model.n)

    def job(t):
        return _run_trial(t, scenario, weighted_f, pre.S_raw, posts)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(job, range(trials)))
    else:
        results = [job(t) for t in range(trials)]
    sq = np.stack([(s - e) ** 2 for s, e in results])  # (trials, H + 1, 2), trial order
    emp = _pairwise_mean(sq)
    stderr = sq.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros_like(emp)
    theo = np.stack([np.diag(P) for P in posts])
    return MonteCarloResult(
        steps=np.arange(scenario.horizon + 1),
        emp_mse=emp,
        stderr=stderr,
        theo_mse=theo,
        truth=results[0][0],
        estimate=results[0][1],
        trials=trials,
    )


def _pairwise_mean(a: np.ndarray) -> np.ndarray:
    """Mean over axis 0 by a fixed pairwise tree, independent of thread count."""
    n = a.shape[0]
    vals = list(a)
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0] / n


@dataclass
class BoundCheck:
    mean: float
    upper99: float  # one-sided 99% upper confidence bound on the mean
    bound: float
    draws: int

    @property
    def holds(self) -> bool:
        return self.upper99 <= self.bound


def innovation_bound_check(scenario: PinholeScenario, P_prior, P_post, draws=1000,
                           seed=None, batch=100) -> BoundCheck:
    """Monte-Carlo ``int E|kappa s| di`` against its analytic upper bound.

    Innovations are ``gamma e + v`` with ``e ~ N(0, P_prior)`` and ``v`` a
    noise field, i.e. exactly the distribution the filter sees.
    """
    from scipy.stats import norm

    from .filter import gain_function, innovation_bound, innovation_integrand_l1

    seed = scenario.seed if seed is None else seed
    model = system_model(scenario)
    pre = precompute(scenario)
    kappa = gain_function(P_post, pre)
    gamma = model.gamma.values
    sampler = get_sampler(scenario.kernel, model.grid)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    vals = []
    for start in range(0, draws, batch):
        b = min(batch, draws - start)
        e = rng.multivariate_normal(np.zeros(model.n), P_prior, size=b)
        s = np.einsum("...ij,bj->b...i", gamma, e) + sampler.sample(rng, b)
        vals.append(innovation_integrand_l1(kappa, s))
    vals = np.concatenate(vals)
    mean = float(vals.mean())
    upper = mean + float(norm.ppf(0.99)) * float(vals.std(ddof=1)) / np.sqrt(draws)
    Sigma0 = scenario.kernel(np.zeros(model.grid.dim))
    bound = innovation_bound(kappa, model.gamma, Sigma0, P_prior)
    return BoundCheck(mean, float(upper), float(bound), draws)
