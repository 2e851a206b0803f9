"""Acceptance gate: one PASS/FAIL line per criterion, listed in the terminal summary.

Run with ``pytest tests/test_acceptance.py`` (add ``-s`` to see lines as they happen).
The Monte-Carlo criterion runs 2000 full-resolution trials and takes a few minutes.
"""
import numpy as np
from scipy.signal import fftconvolve

from fieldkalman.cli import main, random_psd, riccati_route_residual
from fieldkalman.filter import gain_function
from fieldkalman.gain import S_frequency_route, verify_optimality
from fieldkalman.grid_fourier import GriddedFunction, GridSpec, forward_ct, inverse_ct, quadrature
from fieldkalman.oracle import convergence_study
from fieldkalman.pinhole_sim import (
    innovation_bound_check,
    monte_carlo_mse,
    stability_certificates,
)
from fieldkalman.random_field import kernel_spectrum
from fieldkalman.riccati import is_detectable, is_stabilizable, posterior_from_prior

from conftest import P_POST_REF, P_PRIOR_REF


def gaussian(points, ell):
    r2 = np.sum(points**2, axis=-1)
    return np.exp(-r2 / (2 * ell**2)) / (2 * np.pi * ell**2)


def test_steady_state_covariances(steady, report):
    err_prior = np.abs(steady.P_prior_inf - P_PRIOR_REF).max()
    err_post = np.abs(steady.P_post_inf - P_POST_REF).max()
    ok = report("steady-state covariance", max(err_prior, err_post) <= 1e-3,
                f"max entry error prior {err_prior:.2e}, posterior {err_post:.2e} (tol 1e-3)")
    assert ok


def test_stability_certificates(scenario, precomp, report):
    cert = stability_certificates(scenario, precomp.S)
    stab = is_stabilizable(scenario.A, scenario.Q)
    det = is_detectable(scenario.A, precomp.G)
    ok = (abs(cert["rho_stabilizing"] - 0.5) <= 1e-12 and abs(cert["rho_detecting"] - 0.5) <= 1e-12
          and stab and det)
    report("stability certificates", ok,
           f"rho {cert['rho_stabilizing']:.15f} / {cert['rho_detecting']:.15f} (expect 0.5), "
           f"stabilizable={stab}, detectable={det}")
    assert ok


def test_monte_carlo_mse(scenario, steady, report):
    res = monte_carlo_mse(scenario)
    emp, _ = res.steady_state()
    target = np.diag(P_POST_REF)
    ratio = emp / target
    ok = res.trials == 2000 and scenario.horizon == 50 and np.all(np.abs(ratio - 1) <= 0.05)
    report("Monte-Carlo MSE", ok,
           f"{res.trials} trials, position {emp[0]:.4f} ({ratio[0]:.3f}x), "
           f"velocity {emp[1]:.4f} ({ratio[1]:.3f}x) of {target[0]}/{target[1]} (band +-5%)")
    assert ok


def test_optimality_residual(model, precomp, steady, report):
    kappa = gain_function(steady.P_post_inf, precomp)
    resid, scale = verify_optimality(kappa, steady.P_prior_inf, model.gamma, model.kernel, 5)
    ok = resid <= 1e-3 * scale
    report("optimality residual", ok,
           f"{resid:.3e} <= 1e-3 * {scale:.3e} over 25 probes")
    assert ok


def test_two_route_consistency(scenario, model, precomp, steady, report):
    spectrum = kernel_spectrum(model.kernel, model.grid.dual())
    S_freq = S_frequency_route(model.gamma, spectrum, scenario.regularization)
    s_err = np.linalg.norm(precomp.S - S_freq) / np.linalg.norm(precomp.S)

    rng = np.random.default_rng(20)
    mats = random_psd(rng, 2, 100)
    r_err = riccati_route_residual(scenario.A, scenario.Q, precomp.S, precomp.G, mats)

    P_prior = steady.P_prior_inf
    kappa = gain_function(posterior_from_prior(P_prior, precomp.S), precomp)
    kg = quadrature(GriddedFunction(kappa.grid, kappa.values @ model.gamma.values)).real
    alt = (np.eye(2) - kg) @ P_prior
    p_err = np.linalg.norm(steady.P_post_inf - alt) / np.linalg.norm(steady.P_post_inf)

    ok = s_err <= 1e-4 and r_err <= 1e-10 and p_err <= 1e-6
    report("two-route consistency", ok,
           f"S {s_err:.2e} (tol 1e-4), Riccati {r_err:.2e} over 100 PSD (tol 1e-10), "
           f"posterior {p_err:.2e} (tol 1e-6)")
    assert ok


def test_fourier_correctness(report):
    grid = GridSpec.from_extent((-0.5, -0.5), (0.5, 0.5), 0.005)
    ell = 0.025
    spec = forward_ct(GriddedFunction(grid, gaussian(grid.points(), ell)))
    w = spec.grid.points()
    exact = np.exp(-2 * np.pi**2 * ell**2 * np.sum(w**2, axis=-1))
    mid = np.linalg.norm(w, axis=-1) <= 0.25 / grid.spacing[0]
    pair_err = np.abs(spec.values[..., 0, 0] - exact)[mid].max()

    rng = np.random.default_rng(5)
    worst_rt = 0.0
    for counts in [(201, 201), (37, 64), (15, 8)]:
        g = GridSpec((-0.3, 0.2), (0.01, 0.02), counts)
        vals = rng.standard_normal(counts + (2, 2)) + 1j * rng.standard_normal(counts + (2, 2))
        back = inverse_ct(forward_ct(GriddedFunction(g, vals))).values
        worst_rt = max(worst_rt, np.linalg.norm(back - vals) / np.linalg.norm(vals))

    g = GridSpec.from_extent((-1.0, -1.0), (1.0, 1.0), 0.01)
    pts = g.points()
    f = gaussian(pts, 0.05)
    h = gaussian(pts - np.array([0.1, -0.05]), 0.03)
    conv = fftconvolve(f, h, mode="same") * g.cell_volume
    lhs = forward_ct(GriddedFunction(g, conv)).values[..., 0, 0]
    rhs = (forward_ct(GriddedFunction(g, f)).values * forward_ct(GriddedFunction(g, h)).values)[..., 0, 0]
    conv_err = np.abs(lhs - rhs).max()

    ok = pair_err <= 1e-6 and worst_rt <= 1e-10 and conv_err <= 1e-6
    report("Fourier correctness", ok,
           f"Gaussian pair {pair_err:.2e} (tol 1e-6), round trip {worst_rt:.2e} (tol 1e-10), "
           f"convolution {conv_err:.2e} (tol 1e-6)")
    assert ok


def test_oracle_convergence(scenario, model, precomp, report):
    P_prior = scenario.A @ scenario.P0 @ scenario.A.T + scenario.Q
    P_post = posterior_from_prior(P_prior, precomp.S)
    kappa = gain_function(P_post, precomp)
    rows, monotone = convergence_study(model, kappa, P_post, P_prior, (16, 8, 4),
                                       length_scale=scenario.ell)
    gaps = [r.cov_gap for r in rows]
    ok = len(rows) == 3 and monotone and gaps[-1] <= 0.05
    report("oracle convergence", ok,
           "gaps " + ", ".join(f"stride {r.stride}: {r.cov_gap:.2e}" for r in rows)
           + f"; nonincreasing={monotone}, finest <= 0.05")
    assert ok


def test_innovation_bound(scenario, steady, report):
    bc = innovation_bound_check(scenario, steady.P_prior_inf, steady.P_post_inf, draws=1000,
                                seed=scenario.seed)
    ok = bc.draws >= 1000 and bc.upper99 < bc.bound
    report("innovation bound", ok,
           f"mean {bc.mean:.4f}, upper 99% {bc.upper99:.4f} < bound {bc.bound:.4f} "
           f"({bc.draws} draws)")
    assert ok


COMMAND_FILES = {
    "steady-state": ["steadystate.csv"],
    "simulate": ["trajectory.csv", "mse.csv"],
    "validate": ["validation.csv"],
    "oracle": ["oracle.csv"],
}


def test_determinism(tmp_path, report):
    details, ok = [], True
    for command, files in COMMAND_FILES.items():
        args = [command, "--seed", "11", "--trials", "3"]
        codes = [main(args + ["--out", str(tmp_path / command / run)]) for run in ("a", "b")]
        same = all((tmp_path / command / "a" / n).read_bytes()
                   == (tmp_path / command / "b" / n).read_bytes() for n in files)
        ok = ok and codes == [0, 0] and same
        details.append(f"{command} {'identical' if same else 'DIFFERENT'} (exit {codes})")
    report("determinism", ok, ", ".join(details))
    assert ok
