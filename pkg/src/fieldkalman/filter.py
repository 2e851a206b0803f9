"""Filter recursion for a finite state observed through a whole field.

The covariance recursion never touches measurements, so it can be run ahead
of time (``covariance_trajectory``); ``f`` and ``S`` are loop invariant for a
time-invariant model and are computed once in ``GainPrecomputation``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .gain import GainPrecomputation
from .grid_fourier import GriddedFunction, GridSpec
from .random_field import FieldSample, StationaryKernel
from .riccati import posterior_from_prior

SYM_TOL = 1e-10


@dataclass(frozen=True)
class SystemModel:
    A: np.ndarray
    Q: np.ndarray
    gamma: GriddedFunction  # m x n per grid point
    kernel: StationaryKernel

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n) or Q.shape != (n, n):
            raise ValueError("A and Q must be n x n")
        if self.gamma.cols != n:
            raise ValueError(f"gamma has {self.gamma.cols} columns, state has {n}")
        if not np.all(np.isfinite(self.gamma.values)):
            raise ValueError("gamma must be finite on the grid")
        if np.abs(Q - Q.T).max() > SYM_TOL * max(1.0, np.abs(Q).max()):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() <= 0:
            raise ValueError("Q must be positive definite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)

    @property
    def grid(self) -> GridSpec:
        return self.gamma.grid

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class FilterState:
    k: int
    x_hat: np.ndarray
    P: np.ndarray
    P_prior: np.ndarray

    @classmethod
    def initial(cls, x_hat0, P0) -> "FilterState":
        P0 = np.atleast_2d(np.asarray(P0, dtype=float))
        return cls(0, np.asarray(x_hat0, dtype=float).ravel(), P0, P0)


def symmetrize(P, tol=SYM_TOL):
    P = np.asarray(P, dtype=float)
    scale = max(1.0, float(np.abs(P).max()))
    asym = float(np.abs(P - P.T).max())
    if asym > tol * scale:
        raise FloatingPointError(f"covariance asymmetry {asym:.3e} exceeds {tol:g}")
    return 0.5 * (P + P.T)


def predict(state: FilterState, model: SystemModel) -> FilterState:
    A = model.A
    P_prior = symmetrize(A @ state.P @ A.T + model.Q)
    return FilterState(state.k, A @ state.x_hat, P_prior, P_prior)


def update_covariance(P_prior, S) -> np.ndarray:
    """``P = P_prior (I + S P_prior)^-1``."""
    P_prior = np.asarray(P_prior, dtype=float)
    n = P_prior.shape[0]
    M = np.eye(n) + S @ P_prior
    if np.linalg.cond(M) > 1e12:
        raise np.linalg.LinAlgError("I + S P_prior is numerically singular")
    symmetrize(P_prior)
    return posterior_from_prior(P_prior, S)


def gain_function(P_post, precomp: GainPrecomputation) -> GriddedFunction:
    """``kappa(i) = P f(i)``."""
    f = precomp.f
    return GriddedFunction(f.grid, np.asarray(P_post, dtype=float) @ f.values)


def innovation_integral(z: FieldSample, x_pred, model: SystemModel,
                        precomp: GainPrecomputation) -> np.ndarray:
    """``int f(i) (z(i) - gamma(i) x_pred) di`` by the trapezoidal rule."""
    if z.grid != model.grid:
        raise ValueError("measurement grid does not match the model grid")
    innov = z.values - model.gamma.values @ np.asarray(x_pred, dtype=float)[:, None]
    w = model.grid.trapezoid_weights()
    d = model.grid.dim
    return np.tensordot(w, precomp.f.values @ innov, axes=(tuple(range(d)), tuple(range(d))))[:, 0]


def update_state(state: FilterState, z: FieldSample, model: SystemModel,
                 precomp: GainPrecomputation) -> FilterState:
    """Correct a predicted state; ``state.P`` must already hold the posterior covariance."""
    corr = state.P @ innovation_integral(z, state.x_hat, model, precomp)
    return replace(state, k=state.k + 1, x_hat=state.x_hat + corr)


def step(state: FilterState, z: FieldSample, model: SystemModel,
         precomp: GainPrecomputation) -> FilterState:
    pred = predict(state, model)
    pred = replace(pred, P=update_covariance(pred.P_prior, precomp.S))
    return update_state(pred, z, model, precomp)


def covariance_trajectory(model: SystemModel, precomp: GainPrecomputation, P0, steps: int):
    """Prior and posterior covariances for ``k = 1..steps``; index 0 holds ``P0``."""
    P = np.atleast_2d(np.asarray(P0, dtype=float))
    priors, posts = [P], [P]
    for _ in range(steps):
        P_prior = symmetrize(model.A @ P @ model.A.T + model.Q)
        P = update_covariance(P_prior, precomp.S)
        priors.append(P_prior)
        posts.append(P)
    return np.array(priors), np.array(posts)


def run_filter(model: SystemModel, precomp: GainPrecomputation, measurements,
               init: FilterState) -> list[FilterState]:
    """Filter a measurement sequence; returns the states for ``k = 1..len``."""
    measurements = list(measurements)
    if not measurements:
        raise ValueError("need at least one measurement")
    out, state = [], init
    for z in measurements:
        state = step(state, z, model, precomp)
        out.append(state)
    return out


def innovation_bound(kappa: GriddedFunction, gamma: GriddedFunction, Sigma0, P_prior) -> float:
    """Upper bound on ``int E|kappa(i) s(i)| di`` for innovations with covariance
    ``Sigma(0) + gamma(i) P gamma(i)^T``:
    ``|Sigma0^1/2|_F |kappa|_L1 + |P^1/2|_F |gamma kappa|_L1``.
    """
    from .gain import principal_sqrt
    from .grid_fourier import quadrature

    def l1(values):
        norms = np.linalg.norm(values, axis=(-2, -1))
        return float(quadrature(GriddedFunction(kappa.grid, norms)).real[0, 0])

    root_sigma = principal_sqrt(np.atleast_2d(Sigma0))
    root_p = principal_sqrt(np.atleast_2d(P_prior))
    return (np.linalg.norm(root_sigma) * l1(kappa.values)
            + np.linalg.norm(root_p) * l1(gamma.values @ kappa.values))


def innovation_integrand_l1(kappa: GriddedFunction, innovations) -> np.ndarray:
    """``int |kappa(i) s(i)|_2 di`` for a batch of innovation fields ``(B,) + counts + (m,)``."""
    s = np.asarray(innovations)
    ks = np.einsum("...ij,b...j->b...i", kappa.values, s)
    norms = np.linalg.norm(ks, axis=-1)
    w = kappa.grid.trapezoid_weights()
    d = kappa.grid.dim
    return np.tensordot(norms, w, axes=(tuple(range(1, d + 1)), tuple(range(d))))
