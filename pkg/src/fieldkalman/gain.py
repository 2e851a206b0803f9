"""Time-invariant part of the optimal gain: the kernel f, information matrix S
and its principal square root G, plus a quadrature check of the optimality
condition the gain must satisfy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_fourier import GriddedFunction, forward_ct, inverse_ct, quadrature, riemann_sum
from .random_field import KernelSpectrum, kernel_spectrum


class AssumptionError(ValueError):
    """A structural precondition of the filter does not hold.

    ``condition`` names the violated property, e.g. ``"spectrum-invertible"``,
    ``"gain-integrable"``, ``"stabilizability"`` or ``"detectability"``.
    """

    def __init__(self, condition: str, message: str):
        super().__init__(f"{condition}: {message}")
        self.condition = condition


@dataclass(frozen=True)
class RegularizationPolicy:
    """How the noise spectrum is inverted at finite resolution.

    ``band`` keeps frequencies whose smallest spectral eigenvalue is at least
    ``eps_rel`` times the global maximum and zeroes the rest. ``tikhonov``
    inverts ``R + eps_rel * max * I`` everywhere.

    The default 1e-8 keeps the deconvolution from amplifying the ~1e-13
    spectral floor that a gamma truncated at the domain edge leaves behind;
    at 1e-12 that floor turns into visible ripple in f near the boundary.
    """

    mode: str = "band"
    eps_rel: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("band", "tikhonov"):
            raise ValueError(f"unknown regularization mode {self.mode!r}")
        if self.eps_rel <= 0:
            raise ValueError("eps_rel must be positive")


@dataclass(frozen=True)
class GainPrecomputation:
    f: GriddedFunction
    S: np.ndarray
    G: np.ndarray
    band_mask: np.ndarray
    S_raw: np.ndarray  # unsymmetrized quadrature of f * gamma

    @property
    def retained_fraction(self) -> float:
        return float(np.mean(self.band_mask))


def _inverse_spectrum(spectrum: KernelSpectrum, reg: RegularizationPolicy):
    vals = spectrum.values
    eig = np.linalg.eigvalsh(vals)
    top = float(np.max(eig))
    m = vals.shape[-1]
    if reg.mode == "tikhonov":
        mask = np.ones(eig.shape[:-1], dtype=bool)
        inv = np.linalg.inv(vals + reg.eps_rel * top * np.eye(m))
    else:
        mask = eig[..., 0] >= reg.eps_rel * top
        safe = np.where(mask[..., None, None], vals, np.eye(m))
        inv = np.linalg.inv(safe) * mask[..., None, None]
    return inv, mask


def compute_f(gamma: GriddedFunction, spectrum: KernelSpectrum,
              reg: RegularizationPolicy = RegularizationPolicy(), imag_tol=1e-8):
    """Return ``(f, band_mask)`` with ``f = F^-1{ gamma_bar^T R_bar^-1 }``.

    ``gamma`` is m x n per point, so ``f`` is n x m per point.
    """
    if spectrum.grid != gamma.grid.dual():
        raise ValueError("spectrum grid is not the dual of gamma's grid")
    gbar = forward_ct(gamma).values  # (..., m, n)
    rinv, mask = _inverse_spectrum(spectrum, reg)
    energy = np.sum(np.abs(gbar) ** 2, axis=(-2, -1))
    total = energy.sum()
    if total > 0:
        signal = energy > 1e-12 * energy.max()
        if np.mean(~mask[signal]) > 0.5:
            raise AssumptionError(
                "spectrum-invertible",
                "noise spectrum is numerically singular on most of the band where gamma has energy",
            )
        if energy[mask].sum() < 0.01 * total:
            raise AssumptionError(
                "gain-integrable",
                "spectral regularization removes more than 99% of gamma's energy",
            )
    fbar = np.swapaxes(gbar, -1, -2) @ rinv
    f = inverse_ct(GriddedFunction(gamma.grid.dual(), fbar))
    vals = f.values
    scale = np.max(np.abs(vals.real))
    if scale > 0 and np.max(np.abs(vals.imag)) > imag_tol * scale:
        raise ValueError(
            f"f has imaginary residue {np.max(np.abs(vals.imag)):.3e} (real scale {scale:.3e})"
        )
    return GriddedFunction(gamma.grid, np.ascontiguousarray(vals.real)), mask


def _check_symmetric(M, tol, what):
    norm = np.linalg.norm(M)
    if np.linalg.norm(M - M.T) > tol * max(norm, np.finfo(float).tiny):
        raise ValueError(f"{what} is not symmetric (relative asymmetry above {tol:g})")


def compute_S(f: GriddedFunction, gamma: GriddedFunction, asym_tol=1e-6, clip_tol=1e-10):
    """Information matrix ``S = int f(i) gamma(i) di`` by the trapezoidal rule.

    Returns ``(S, S_raw)`` where ``S`` is symmetrized with tiny negative
    eigenvalues clipped to zero.
    """
    if f.grid != gamma.grid:
        raise ValueError("f and gamma live on different grids")
    prod = GriddedFunction(f.grid, f.values @ gamma.values)
    raw = quadrature(prod)
    _check_symmetric(raw, asym_tol, "S")
    S = 0.5 * (raw + raw.T)
    lam, vec = np.linalg.eigh(S)
    top = np.max(np.abs(lam)) if lam.size else 0.0
    if top > 0:
        if lam.min() < -clip_tol * top:
            raise ValueError(f"S has a negative eigenvalue {lam.min():.3e}")
        if lam.min() < 0:
            S = (vec * np.clip(lam, 0.0, None)) @ vec.T
            S = 0.5 * (S + S.T)
    return S, raw


def S_frequency_route(gamma: GriddedFunction, spectrum: KernelSpectrum,
                      reg: RegularizationPolicy = RegularizationPolicy()) -> np.ndarray:
    """``int gamma_bar^* R_bar^-1 gamma_bar dw`` evaluated purely on the frequency grid."""
    gbar = forward_ct(gamma).values
    rinv, _ = _inverse_spectrum(spectrum, reg)
    integrand = np.conj(np.swapaxes(gbar, -1, -2)) @ rinv @ gbar
    return riemann_sum(GriddedFunction(spectrum.grid, integrand)).real


def principal_sqrt(S, tol=1e-10, rel_floor=1e-12) -> np.ndarray:
    """Symmetric PSD square root of a symmetric PSD matrix."""
    S = np.asarray(S, dtype=float)
    _check_symmetric(S, tol, "S")
    lam, vec = np.linalg.eigh(0.5 * (S + S.T))
    top = np.max(np.abs(lam)) if lam.size else 0.0
    lam = np.where(lam < rel_floor * top, 0.0, lam)
    G = (vec * np.sqrt(lam)) @ vec.T
    return 0.5 * (G + G.T)


def precompute_gain(gamma: GriddedFunction, kernel,
                    reg: RegularizationPolicy = RegularizationPolicy()) -> GainPrecomputation:
    spectrum = kernel_spectrum(kernel, gamma.grid.dual())
    f, mask = compute_f(gamma, spectrum, reg)
    S, raw = compute_S(f, gamma)
    return GainPrecomputation(f=f, S=S, G=principal_sqrt(S), band_mask=mask, S_raw=raw)


def probe_points(grid, per_axis=5) -> np.ndarray:
    """Evenly spread grid points (a ``per_axis``^d sublattice), shape ``(P, d)``."""
    idx = [np.unique(np.rint(np.linspace(0, n - 1, per_axis)).astype(int)) for n in grid.counts]
    axes = grid.axes()
    sub = np.meshgrid(*[ax[i] for ax, i in zip(axes, idx)], indexing="ij")
    return np.stack(sub, axis=-1).reshape(-1, grid.dim), idx


def verify_optimality(kappa: GriddedFunction, P_prior, gamma: GriddedFunction, kernel,
                      per_axis=5, full_grid=False):
    """Largest violation of the optimality condition over probe points.

    For each probe ``i'`` evaluates
    ``int kappa(i) (gamma(i) P gamma(i')^T + R(i - i')) di - P gamma(i')^T``.
    Returns ``(residual, scale)`` where ``scale`` is the largest norm of
    ``P gamma(i')^T`` over the probes.
    """
    grid = gamma.grid
    P = np.asarray(P_prior, dtype=float)
    pts = grid.points()
    if full_grid:
        probes = pts.reshape(-1, grid.dim)
        gprobe = gamma.values.reshape((-1,) + gamma.shape)
    else:
        probes, idx = probe_points(grid, per_axis)
        gprobe = gamma.values[np.ix_(*idx)].reshape((-1,) + gamma.shape)
    w = grid.trapezoid_weights()
    d = grid.dim
    # int kappa(i) gamma(i) di is shared by all probes
    kg = np.tensordot(w, kappa.values @ gamma.values, axes=(tuple(range(d)), tuple(range(d))))
    worst, scale = 0.0, 0.0
    for ip, gp in zip(probes, gprobe):
        target = P @ gp.T
        conv = np.tensordot(w, kappa.values @ kernel(pts - ip),
                            axes=(tuple(range(d)), tuple(range(d))))
        resid = kg @ P @ gp.T + conv - target
        worst = max(worst, float(np.linalg.norm(resid)))
        scale = max(scale, float(np.linalg.norm(target)))
    return worst, scale
