"""Brute-force check: an ordinary Kalman filter on a subsampled pixel grid.

Stacking the field samples into one long measurement vector turns the problem
into a textbook finite-dimensional Kalman update with a dense (block-Toeplitz)
noise covariance. As the sampling gets denser its posterior covariance should
approach the continuum one.

Comparing gains needs a bridge: the continuum filter applies ``int kappa z``
which the trapezoidal rule turns into ``sum_j w_j kappa(i_j) z(i_j)``, so
column ``j`` of the discrete gain is matched against ``w_j kappa(i_j)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .filter import SystemModel


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiscreteModel:
    A: np.ndarray
    Q: np.ndarray
    Gamma: np.ndarray  # (N m, n)
    Rmat: np.ndarray  # (N m, N m)
    points: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,) trapezoidal weights of the subsampled grid
    index: tuple  # per-axis indices into the parent grid
    stride: int
    spacing: tuple

    @property
    def size(self) -> int:
        return self.Gamma.shape[0]


def _axis_weights(count, h):
    if count == 1:
        return np.array([h])
    w = np.full(count, h)
    w[0] = w[-1] = 0.5 * h
    return w


def build_discrete(model: SystemModel, stride: int, cap: int = 4000) -> DiscreteModel:
    """Sample gamma and the kernel Gram matrix on every ``stride``-th grid point."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    grid = model.grid
    index = tuple(np.arange(0, n, stride) for n in grid.counts)
    npts = int(np.prod([len(i) for i in index]))
    m, n = model.gamma.shape
    if npts * m > cap:
        raise OracleError(
            f"stride {stride} gives a {npts * m}-dimensional measurement (cap {cap}); "
            "use a larger stride"
        )
    axes = grid.axes()
    sub = np.meshgrid(*[ax[i] for ax, i in zip(axes, index)], indexing="ij")
    points = np.stack(sub, axis=-1).reshape(-1, grid.dim)
    gamma = model.gamma.values[np.ix_(*index)].reshape(npts, m, n)
    Gamma = gamma.reshape(npts * m, n)
    gram = model.kernel(points[:, None, :] - points[None, :, :])  # (N, N, m, m)
    Rmat = gram.transpose(0, 2, 1, 3).reshape(npts * m, npts * m)
    Rmat = 0.5 * (Rmat + Rmat.T)
    spacing = tuple(h * stride for h in grid.spacing)
    # a single sample per axis stands for the whole axis
    axis_w = [
        _axis_weights(len(i), h * stride if len(i) > 1 else h * (c - 1))
        for i, h, c in zip(index, grid.spacing, grid.counts)
    ]
    weights = axis_w[0]
    for w in axis_w[1:]:
        weights = np.multiply.outer(weights, w)
    return DiscreteModel(model.A, model.Q, Gamma, Rmat, points, weights.ravel(), index,
                         stride, spacing)


def discrete_kalman_step(P_prior, dm: DiscreteModel):
    """Gain ``P G' (R + G P G')^-1`` and the Joseph-form posterior."""
    P_prior = np.asarray(P_prior, dtype=float)
    H = dm.Gamma
    innov = dm.Rmat + H @ P_prior @ H.T
    try:
        cho = sla.cho_factor(innov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise OracleError("innovation covariance is singular") from exc
    K = sla.cho_solve(cho, H @ P_prior).T
    n = P_prior.shape[0]
    IKH = np.eye(n) - K @ H
    P = IKH @ P_prior @ IKH.T + K @ dm.Rmat @ K.T
    return K, 0.5 * (P + P.T)


def standard_posterior(K, P_prior, dm: DiscreteModel) -> np.ndarray:
    n = P_prior.shape[0]
    P = (np.eye(n) - K @ dm.Gamma) @ P_prior
    return 0.5 * (P + P.T)


def information_matrix(dm: DiscreteModel) -> np.ndarray:
    """``Gamma' R^-1 Gamma``, the discrete counterpart of S."""
    cho = sla.cho_factor(dm.Rmat, lower=True)
    info = dm.Gamma.T @ sla.cho_solve(cho, dm.Gamma)
    return 0.5 * (info + info.T)


@dataclass
class GainComparison:
    stride: int
    points: int
    spacing: float
    gain_rel_err: float
    gain_max_abs_err: float
    cov_gap: float  # relative Frobenius gap of the posterior covariances
    resolved: bool  # sample spacing fine enough to resolve the noise kernel
    P_discrete: np.ndarray


def compare_gains(kappa, P_post, dm: DiscreteModel, P_prior, length_scale=None) -> GainComparison:
    """Match one discrete Kalman update against the continuum posterior and gain.

    ``kappa`` is the continuum gain on the parent grid (n x m per point);
    ``P_post`` the continuum posterior for the same prior.
    """
    K, P_disc = discrete_kalman_step(P_prior, dm)
    n = K.shape[0]
    kap = kappa.values[np.ix_(*dm.index)]  # (..., n, m)
    kap = kap.reshape(-1, n, kap.shape[-1])
    bridged = (kap * dm.weights[:, None, None]).transpose(1, 0, 2).reshape(n, -1)
    diff = K - bridged
    denom = np.linalg.norm(bridged)
    rel = float(np.linalg.norm(diff) / denom) if denom > 0 else float(np.linalg.norm(diff))
    P_post = np.asarray(P_post, dtype=float)
    gap = float(np.linalg.norm(P_disc - P_post) / np.linalg.norm(P_post))
    spacing = float(max(dm.spacing))
    resolved = True if length_scale is None else spacing <= 2.0 * length_scale
    return GainComparison(dm.stride, len(dm.points), spacing, rel, float(np.abs(diff).max()),
                          gap, resolved, P_disc)


def convergence_study(model: SystemModel, kappa, P_post, P_prior, strides, cap=4000,
                      length_scale=None):
    """``compare_gains`` over several strides (coarse to fine) plus a monotonicity verdict."""
    strides = sorted(strides, reverse=True)
    rows = [
        compare_gains(kappa, P_post, build_discrete(model, s, cap), P_prior, length_scale)
        for s in strides
    ]
    gaps = [r.cov_gap for r in rows]
    monotone = all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(gaps, gaps[1:]))
    return rows, monotone
