"""Discrete-time algebraic Riccati equation in the G-form, with the spectral
tests needed to know its fixed point exists and stabilizes the filter."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gain import AssumptionError


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class DareProblem:
    A: np.ndarray
    G: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        for name in ("A", "G", "Q"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), float)))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.G.shape != (n, n) or self.Q.shape != (n, n):
            raise ValueError("A, G and Q must be square and share one size")
        if not np.allclose(self.Q, self.Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.Q).max())):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() <= 0:
            raise ValueError("Q must be positive definite")

    @property
    def S(self) -> np.ndarray:
        return self.G @ self.G


@dataclass(frozen=True)
class SteadyState:
    P_prior_inf: np.ndarray
    P_post_inf: np.ndarray
    iterations: int
    residual: float
    closed_loop_radius: float


def spectral_radius(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def is_stabilizable(A, B, rank_tol=1e-10) -> bool:
    """PBH test: ``[A - lambda I, B]`` has full row rank for every ``|lambda| >= 1``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - 1e-12:
            continue
        sv = np.linalg.svd(np.hstack([A - lam * np.eye(n), B]), compute_uv=False)
        if sv.size < n or sv[n - 1] <= rank_tol * sv[0]:
            return False
    return True


def is_detectable(A, B, rank_tol=1e-10) -> bool:
    return is_stabilizable(np.atleast_2d(np.asarray(A, dtype=float)).T, B, rank_tol)


def riccati_step(P_prior, problem: DareProblem) -> np.ndarray:
    """One iteration ``A P A' - A P G (I + G' P G)^-1 G' P A' + Q``."""
    A, G, Q = problem.A, problem.G, problem.Q
    P = np.asarray(P_prior, dtype=float)
    n = A.shape[0]
    APA = A @ P @ A.T
    inner = np.eye(n) + G.T @ P @ G
    APG = A @ P @ G
    nxt = APA - APG @ np.linalg.solve(inner, APG.T) + Q
    return 0.5 * (nxt + nxt.T)


def posterior_from_prior(P_prior, S) -> np.ndarray:
    n = P_prior.shape[0]
    P = np.linalg.solve((np.eye(n) + S @ P_prior).T, P_prior.T).T
    return 0.5 * (P + P.T)


def check_preconditions(problem: DareProblem) -> None:
    if not is_stabilizable(problem.A, problem.Q):
        raise AssumptionError("stabilizability", "the pair (A, Q) is not stabilizable")
    if not is_detectable(problem.A, problem.G):
        raise AssumptionError("detectability", "the pair (A, G) is not detectable")


def solve_dare(problem: DareProblem, tol=1e-12, max_iter=100_000, P0=None) -> SteadyState:
    """Stabilizing DARE solution by fixed-point iteration from ``P0`` (default ``Q``).

    Raises ``AssumptionError`` when stabilizability or detectability fails and
    ``ConvergenceError`` when the iteration stalls or the limit does not
    stabilize the error dynamics.
    """
    check_preconditions(problem)
    P = problem.Q.copy() if P0 is None else np.asarray(P0, dtype=float)
    change = np.inf
    for it in range(1, max_iter + 1):
        nxt = riccati_step(P, problem)
        change = float(np.max(np.abs(nxt - P)))
        P = nxt
        if change <= tol:
            break
    else:
        raise ConvergenceError(f"no convergence in {max_iter} iterations (last change {change:.3e})")
    S = problem.S
    P_post = posterior_from_prior(P, S)
    n = P.shape[0]
    rho = spectral_radius((np.eye(n) - P_post @ S) @ problem.A)
    if rho >= 1.0:
        raise ConvergenceError(f"limit is not stabilizing (closed-loop radius {rho:.6f})")
    residual = float(np.max(np.abs(riccati_step(P, problem) - P)))
    return SteadyState(P, P_post, it, residual, rho)


def lyapunov_series(A, Q, terms=10_000, tol=1e-15) -> np.ndarray:
    """``sum_k A^k Q (A')^k`` summed until the terms vanish; needs ``rho(A) < 1``."""
    A = np.asarray(A, dtype=float)
    term = np.asarray(Q, dtype=float).copy()
    total = term.copy()
    for _ in range(terms):
        term = A @ term @ A.T
        total += term
        if np.max(np.abs(term)) < tol * np.max(np.abs(total)):
            break
    return total
