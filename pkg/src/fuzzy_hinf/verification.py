"""Numerical checks of the integral inequality and the Lambda identity.

Both checks are independent of synthesis.  The integral inequality is
evaluated exactly on vector polynomials, so a negative margin can only come
from rounding or from a wrong inequality.  The Lambda check compares the
free-matrix expression against :func:`fuzzy_hinf.lmi.build_lambda`, the
block used by every synthesis problem.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .lmi import LAMBDA_COEFFS, LinExpr, build_lambda

__all__ = [
    "PolyTrajectory",
    "Lemma1Instance",
    "MonteCarloReport",
    "LambdaReport",
    "check_integral_inequality",
    "check_lambda_identity",
    "omega_matrix",
    "xi_vector",
    "derivative_energy",
    "random_trajectory",
    "random_instance",
    "tight_multipliers",
    "run_inequality_trials",
    "run_lambda_trials",
    "LEMMA1_TOL",
    "LAMBDA_TOL",
]

LEMMA1_TOL = 1e-9
LAMBDA_TOL = 1e-10


@dataclass(frozen=True)
class PolyTrajectory:
    """Vector polynomial on ``[alpha, beta]``.

    ``coeffs[k]`` multiplies ``(s - alpha)**k``; shape ``(degree + 1, n)``.
    Shifting to ``alpha`` keeps the moments well conditioned.
    """

    coeffs: np.ndarray
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 2:
            raise ValueError("coeffs must be (degree + 1, n)")
        if not np.all(np.isfinite(c)):
            raise ValueError("coeffs must be finite")
        if not self.beta > self.alpha:
            raise ValueError(f"need alpha < beta, got [{self.alpha}, {self.beta}]")
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.coeffs.shape[1]

    @property
    def tau(self) -> float:
        return self.beta - self.alpha

    def __call__(self, s):
        return npoly.polyval(np.asarray(s, dtype=float) - self.alpha, self.coeffs).T

    def derivative(self, s):
        return npoly.polyval(np.asarray(s, dtype=float) - self.alpha, npoly.polyder(self.coeffs)).T


@dataclass(frozen=True)
class Lemma1Instance:
    R: np.ndarray
    N1: np.ndarray
    N2: np.ndarray
    N3: np.ndarray

    def __post_init__(self) -> None:
        R = np.asarray(self.R, dtype=float)
        n = R.shape[0]
        if R.shape != (n, n) or not np.allclose(R, R.T, atol=1e-12 * max(1.0, np.abs(R).max())):
            raise ValueError("R must be a symmetric square matrix")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        for name in ("N1", "N2", "N3"):
            N = np.asarray(getattr(self, name), dtype=float)
            if N.shape != (4 * n, n):
                raise ValueError(f"{name} must be {4 * n}x{n}, got {N.shape}")
            object.__setattr__(self, name, N)
        object.__setattr__(self, "R", 0.5 * (R + R.T))

    @property
    def n(self) -> int:
        return self.R.shape[0]


def _selectors(n: int, blocks: int) -> list[np.ndarray]:
    eye = np.eye(blocks * n)
    return [eye[i * n:(i + 1) * n] for i in range(blocks)]


def _pis(n: int, blocks: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    e = _selectors(n, blocks)
    return e[0] - e[1], e[0] + e[1] - 2 * e[2], e[0] - e[1] - 6 * e[2] + 6 * e[3]


def omega_matrix(inst: Lemma1Instance, tau: float) -> np.ndarray:
    """``tau (N1 R^-1 N1' + N2 R^-1 N2'/3 + N3 R^-1 N3'/5) + Sym(sum N_k Pi_k)``."""
    Ri = np.linalg.inv(inst.R)
    P1, P2, P3 = _pis(inst.n, 4)
    quad = inst.N1 @ Ri @ inst.N1.T + inst.N2 @ Ri @ inst.N2.T / 3 + inst.N3 @ Ri @ inst.N3.T / 5
    cross = inst.N1 @ P1 + inst.N2 @ P2 + inst.N3 @ P3
    return tau * quad + cross + cross.T


def xi_vector(traj: PolyTrajectory) -> np.ndarray:
    """``[x(beta); x(alpha); avg; 2/tau^2 * double integral]`` from exact moments."""
    c, tau = traj.coeffs, traj.tau
    once = npoly.polyint(c)
    twice = npoly.polyint(once)
    return np.concatenate([
        npoly.polyval(tau, c),
        c[0],
        npoly.polyval(tau, once) / tau,
        2.0 * npoly.polyval(tau, twice) / tau**2,
    ])


def derivative_energy(traj: PolyTrajectory, R: np.ndarray) -> float:
    """Exact ``int_alpha^beta x'(s)' R x'(s) ds``."""
    d = npoly.polyder(traj.coeffs)
    if d.shape[0] == 0:
        return 0.0
    total = 0.0
    n = traj.n
    for a in range(n):
        for b in range(n):
            if R[a, b] != 0:
                prod = npoly.polymul(d[:, a], d[:, b])
                total += R[a, b] * npoly.polyval(traj.tau, npoly.polyint(prod))
    return float(total)


def check_integral_inequality(traj: PolyTrajectory, inst: Lemma1Instance) -> float:
    """Margin ``xi' Omega xi + int x' R x'`` (right side minus left side).

    Nonnegative whenever the inequality holds.
    """
    if traj.n != inst.n:
        raise ValueError(f"trajectory dimension {traj.n} does not match R ({inst.n})")
    xi = xi_vector(traj)
    rhs = float(xi @ omega_matrix(inst, traj.tau) @ xi)
    lhs = -derivative_energy(traj, inst.R)
    return rhs - lhs


def tight_multipliers(R: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Multipliers ``N_k = -(2k - 1)/tau * Pi_k' R`` that minimise the right side."""
    P1, P2, P3 = _pis(R.shape[0], 4)
    return -P1.T @ R / tau, -3 * P2.T @ R / tau, -5 * P3.T @ R / tau


def random_trajectory(rng: np.random.Generator, n: int, degree: int = 3) -> PolyTrajectory:
    alpha = rng.uniform(-2.0, 2.0)
    tau = rng.uniform(0.1, 2.0)
    coeffs = rng.standard_normal((degree + 1, n)) / tau ** np.arange(degree + 1)[:, None]
    return PolyTrajectory(coeffs, alpha, alpha + tau)


def random_instance(rng: np.random.Generator, n: int) -> Lemma1Instance:
    G = rng.standard_normal((n, n))
    R = G @ G.T + 0.1 * np.eye(n)
    N = [rng.standard_normal((4 * n, n)) for _ in range(3)]
    return Lemma1Instance(R, *N)


@dataclass
class MonteCarloReport:
    trials: int
    seed: int
    min_margin: float
    worst_trial: int
    elapsed: float
    failures: list[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "seed": self.seed,
            "min_margin": self.min_margin,
            "worst_trial": self.worst_trial,
            "elapsed": self.elapsed,
            "failures": list(self.failures),
            "passed": self.passed,
        }


def run_inequality_trials(trials: int = 1000, seed: int = 0, tol: float = LEMMA1_TOL) -> MonteCarloReport:
    """Random cubic trajectories against random instances, ``n`` in ``{1, 2, 3}``.

    Trial ``k`` draws from ``default_rng([seed, k])`` so any failure can be
    replayed alone.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    t0 = time.perf_counter()
    worst, worst_k, failures = np.inf, -1, []
    for k in range(trials):
        rng = np.random.default_rng([seed, k])
        n = int(rng.integers(1, 4))
        m = check_integral_inequality(random_trajectory(rng, n), random_instance(rng, n))
        if m < worst:
            worst, worst_k = m, k
        if m < -tol:
            failures.append(k)
    return MonteCarloReport(trials, seed, float(worst), worst_k, time.perf_counter() - t0, failures)


def _lambda_reference(h: float, Z: np.ndarray, coeffs: np.ndarray | None) -> np.ndarray:
    m = Z.shape[0]
    if coeffs is None:
        return build_lambda(h, LinExpr.constant(Z), m // 2, n_w=m).expr.evaluate({})
    out = np.zeros((5 * m, 5 * m))
    out[: 4 * m, : 4 * m] = np.kron((3.0 / h) * np.asarray(coeffs, dtype=float), Z)
    return out


def check_lambda_identity(h: float, Z: np.ndarray, coeffs: np.ndarray | None = None) -> float:
    """Max entrywise gap between the free-matrix expression and ``Lambda``.

    The multipliers ``M1, M2, M3`` are the fixed choices built from ``Z``;
    ``coeffs`` replaces the tabulated Lambda coefficients (negative controls).
    """
    Z = np.asarray(Z, dtype=float)
    m = Z.shape[0]
    if Z.shape != (m, m) or m % 2:
        raise ValueError("Z must be square with even size 2n")
    if not h > 0:
        raise ValueError("h must be positive")
    Zi = np.linalg.inv(Z)
    O = np.zeros_like(Z)
    M1 = np.vstack([-Z, Z, O, O, O]) / h
    M2 = 3.0 / h * np.vstack([-Z, -Z, 2 * Z, O, O])
    M3 = 5.0 / h * np.vstack([-Z, Z, 6 * Z, -6 * Z, O])
    P1, P2, P3 = _pis(m, 5)
    cross = M1 @ P1 + M2 @ P2 + M3 @ P3
    lhs = h * M1 @ Zi @ M1.T + h / 3 * M2 @ Zi @ M2.T + h / 5 * M3 @ Zi @ M3.T + cross + cross.T
    return float(np.max(np.abs(lhs - _lambda_reference(h, Z, coeffs))))


@dataclass
class LambdaReport:
    trials: int
    seed: int
    max_diff: float
    elapsed: float

    @property
    def passed(self) -> bool:
        return self.max_diff < LAMBDA_TOL

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "seed": self.seed,
            "max_diff": self.max_diff,
            "elapsed": self.elapsed,
            "passed": self.passed,
        }


def run_lambda_trials(trials: int = 100, seed: int = 0, coeffs: np.ndarray | None = None) -> LambdaReport:
    """Random ``h`` in ``(0.1, 2)`` and ``Z`` positive definite of size 2, 4 or 6."""
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(trials):
        rng = np.random.default_rng([seed, k])
        m = 2 * int(rng.integers(1, 4))
        G = rng.standard_normal((m, m))
        Z = G @ G.T + 0.1 * np.eye(m)
        worst = max(worst, check_lambda_identity(rng.uniform(0.1, 2.0), Z, coeffs))
    return LambdaReport(trials, seed, worst, time.perf_counter() - t0)


def corrupted_lambda_coeffs() -> np.ndarray:
    """Tabulated coefficients with one symmetric pair perturbed (negative control)."""
    c = np.array(LAMBDA_COEFFS, dtype=float)
    c[0, 2] += 1.0
    c[2, 0] += 1.0
    return c
