"""Filter synthesis, attenuation-level bisection and fixed-filter certification."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .lmi import LmiProblem, build_lemma2_analysis, build_theorem1, build_theorem2
from .model import (
    FuzzyFilter,
    ModelError,
    ProductBounds,
    TsDelayModel,
    membership_product_bounds,
)
from .sdp import EPS_STRICT, SolverReport, canonicalize, solve_feasibility

__all__ = [
    "DEFAULT_BRACKET",
    "DEFAULT_TOL",
    "COND_LIMIT",
    "IllConditionedError",
    "BracketError",
    "SynthesisSettings",
    "SynthesisResult",
    "Infeasible",
    "GammaStep",
    "GammaSearchLog",
    "CertifyResult",
    "build_problem",
    "default_bounds",
    "synthesize",
    "gamma_min",
    "certify_filter",
    "recover_filter",
    "save_filter",
    "load_filter",
]

log = logging.getLogger(__name__)

DEFAULT_BRACKET = (1e-3, 10.0)
DEFAULT_TOL = 5e-3
COND_LIMIT = 1e10
DEFAULT_DOMAIN = (-50.0, 50.0)
DEFAULT_GRID = 10001


class IllConditionedError(RuntimeError):
    """The filter-state weight is too ill-conditioned to invert."""


class BracketError(RuntimeError):
    """The upper end of a bisection bracket is not feasible."""

    def __init__(self, message: str, search_log: "GammaSearchLog"):
        super().__init__(message)
        self.search_log = search_log


@dataclass(frozen=True)
class SynthesisSettings:
    h: float
    rho: float
    omega: float
    theorem: int = 2
    delay_rate_mode: str = "rho"
    slack_structure: str = "full"
    eps: float = EPS_STRICT
    bounds: ProductBounds | None = None

    def __post_init__(self) -> None:
        if self.theorem not in (1, 2):
            raise ValueError(f"theorem must be 1 or 2, got {self.theorem!r}")

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "rho": self.rho,
            "omega": self.omega,
            "theorem": self.theorem,
            "delay_rate_mode": self.delay_rate_mode,
            "slack_structure": self.slack_structure,
            "eps": self.eps,
            "bounds": self.bounds.to_dict() if self.bounds is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SynthesisSettings":
        b = data.get("bounds")
        return cls(
            float(data["h"]),
            float(data["rho"]),
            float(data["omega"]),
            int(data.get("theorem", 2)),
            data.get("delay_rate_mode", "rho"),
            data.get("slack_structure", "full"),
            float(data.get("eps", EPS_STRICT)),
            ProductBounds.from_dict(b) if b else None,
        )


@dataclass(frozen=True)
class SynthesisResult:
    """A synthesized filter with the decision matrices that certify it.

    ``certificate`` holds ``P11``, ``P22``, ``Y``, ``Z`` and, for the
    membership-dependent conditions, the slack matrices.  ``Ptilde``,
    ``Y`` and ``Z`` double as a valid Lyapunov-Krasovskii weight set for
    the recovered filter in its own coordinates.
    """

    filter: FuzzyFilter
    gamma: float
    certificate: Mapping[str, np.ndarray]
    settings: SynthesisSettings
    report: SolverReport | None = None

    feasible = True

    @property
    def Ptilde(self) -> np.ndarray:
        P11, P22 = self.certificate["P11"], self.certificate["P22"]
        return np.block([[P11, P22], [P22, P22]])

    @property
    def status(self) -> str:
        return "feasible"

    def lyapunov_weights(self) -> dict[str, np.ndarray]:
        return {"P": self.Ptilde, "Y": self.certificate["Y"], "Z": self.certificate["Z"]}

    def to_dict(self) -> dict:
        out = {"gamma": self.gamma}
        out.update(self.filter.to_dict())
        out["certificate"] = {k: np.asarray(v).tolist() for k, v in self.certificate.items()}
        out["settings"] = self.settings.to_dict()
        if self.report is not None:
            out["solver"] = {
                "status": self.report.status,
                "worst_margin": self.report.worst_margin,
                "iterations": self.report.iterations,
            }
        return out


@dataclass(frozen=True)
class Infeasible:
    """Clean negative answer from :func:`synthesize` (``infeasible`` or ``indeterminate``)."""

    gamma: float
    settings: SynthesisSettings
    report: SolverReport

    feasible = False

    @property
    def status(self) -> str:
        return self.report.status


@dataclass(frozen=True)
class GammaStep:
    gamma: float
    status: str
    wall_time: float
    iterations: int
    worst_margin: float


@dataclass
class GammaSearchLog:
    bracket: tuple[float, float]
    tol: float
    steps: list[GammaStep] = field(default_factory=list)
    gamma_star: float | None = None
    indeterminate: int = 0

    def monotone(self) -> bool:
        """Feasible steps all lie above infeasible ones (indeterminate counts as infeasible)."""
        feas = [s.gamma for s in self.steps if s.status == "feasible"]
        other = [s.gamma for s in self.steps if s.status != "feasible"]
        return not feas or not other or min(feas) > max(other)

    @property
    def wall_time(self) -> float:
        return sum(s.wall_time for s in self.steps)

    def to_dict(self) -> dict:
        return {
            "bracket": list(self.bracket),
            "tol": self.tol,
            "gamma_star": self.gamma_star,
            "indeterminate": self.indeterminate,
            "steps": [s.__dict__ for s in self.steps],
        }


def default_bounds(
    model: TsDelayModel,
    domain: tuple[float, float] = DEFAULT_DOMAIN,
    grid_points: int = DEFAULT_GRID,
) -> ProductBounds:
    return membership_product_bounds(model, domain[0], domain[1], grid_points)


def build_problem(model: TsDelayModel, gamma: float, settings: SynthesisSettings) -> LmiProblem:
    s = settings
    if s.theorem == 1:
        return build_theorem1(model, s.h, s.rho, s.omega, gamma, s.delay_rate_mode)
    if s.bounds is None:
        raise ModelError("membership-dependent synthesis needs product bounds")
    return build_theorem2(
        model, s.h, s.rho, s.omega, gamma, s.bounds, s.delay_rate_mode, s.slack_structure
    )


def recover_filter(values: Mapping[str, np.ndarray], p: int) -> FuzzyFilter:
    """Undo the change of variables: ``A' = P22^-1 Acal``, ``B' = P22^-1 Bcal``, ``C' = Ccal``."""
    P22 = values["P22"]
    cond = np.linalg.cond(P22)
    if not cond < COND_LIMIT:
        raise IllConditionedError(f"P22 condition number {cond:.3g} exceeds {COND_LIMIT:.0e}")
    A = [np.linalg.solve(P22, values[f"Acal{j + 1}"]) for j in range(p)]
    B = [np.linalg.solve(P22, values[f"Bcal{j + 1}"]) for j in range(p)]
    C = [np.array(values[f"Ccal{j + 1}"]) for j in range(p)]
    return FuzzyFilter(A, B, C)


def _settings(
    model: TsDelayModel,
    h: float | None,
    rho: float | None,
    omega: float,
    theorem: int,
    bounds: ProductBounds | None,
    delay_rate_mode: str,
    slack_structure: str,
    eps: float,
) -> SynthesisSettings:
    h = model.delay.h if h is None else float(h)
    rho = model.delay.rho if rho is None else float(rho)
    if theorem == 2 and bounds is None:
        bounds = default_bounds(model)
    return SynthesisSettings(
        h, rho, float(omega), theorem, delay_rate_mode, slack_structure, eps,
        bounds if theorem == 2 else None,
    )


def _solve(model: TsDelayModel, gamma: float, settings: SynthesisSettings):
    prob = canonicalize(build_problem(model, gamma, settings))
    rep = solve_feasibility(prob, eps=settings.eps)
    if rep.status != "feasible":
        return Infeasible(gamma, settings, rep)
    values = prob.values(rep.x)
    filt = recover_filter(values, model.p)
    cert = {k: v for k, v in values.items() if not k.startswith(("Acal", "Bcal", "Ccal"))}
    return SynthesisResult(filt, float(gamma), cert, settings, rep)


def synthesize(
    model: TsDelayModel,
    h: float | None = None,
    rho: float | None = None,
    omega: float = 2.0,
    gamma: float = 1.0,
    theorem: int = 2,
    bounds: ProductBounds | None = None,
    delay_rate_mode: str = "rho",
    slack_structure: str = "full",
    eps: float = EPS_STRICT,
) -> SynthesisResult | Infeasible:
    """Solve the synthesis LMIs at one attenuation level.

    ``h`` and ``rho`` default to the model's delay bounds; membership
    product bounds default to a dense grid over ``[-50, 50]``.

    Returns
    -------
    SynthesisResult or Infeasible
        Check ``.feasible``.  A negative answer is not an exception.

    Raises
    ------
    IllConditionedError
        If the recovered filter would need to invert a near-singular ``P22``.
    """
    s = _settings(model, h, rho, omega, theorem, bounds, delay_rate_mode, slack_structure, eps)
    return _solve(model, gamma, s)


def gamma_min(
    model: TsDelayModel,
    h: float | None = None,
    rho: float | None = None,
    omega: float = 2.0,
    theorem: int = 2,
    tol: float = DEFAULT_TOL,
    bracket: tuple[float, float] = DEFAULT_BRACKET,
    bounds: ProductBounds | None = None,
    delay_rate_mode: str = "rho",
    slack_structure: str = "full",
    eps: float = EPS_STRICT,
) -> tuple[float, SynthesisResult, GammaSearchLog]:
    """Bisect on ``gamma`` for the smallest feasible level within ``tol``.

    Indeterminate solves are treated as infeasible and counted in the log.

    Raises
    ------
    BracketError
        If the upper bracket end is not feasible.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0 < lo <= hi:
        raise ValueError(f"bracket must satisfy 0 < lo <= hi, got {bracket!r}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    s = _settings(model, h, rho, omega, theorem, bounds, delay_rate_mode, slack_structure, eps)
    search = GammaSearchLog((lo, hi), tol)

    def attempt(g):
        t0 = time.perf_counter()
        out = _solve(model, g, s)
        rep = out.report
        search.steps.append(
            GammaStep(g, out.status, time.perf_counter() - t0, rep.iterations, rep.worst_margin)
        )
        if out.status == "indeterminate":
            search.indeterminate += 1
            log.warning("indeterminate solve at gamma=%.6g (%s); treated as infeasible", g, rep.message)
        log.info("gamma=%.6g %s (%.2fs)", g, out.status, search.steps[-1].wall_time)
        return out

    best = attempt(hi)
    if not best.feasible:
        raise BracketError(f"upper bracket gamma={hi:g} is {best.status}", search)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        out = attempt(mid)
        if out.feasible:
            hi, best = mid, out
        else:
            lo = mid
    search.gamma_star = hi
    return hi, best, search


@dataclass(frozen=True)
class CertifyResult:
    status: str
    gamma: float
    certificate: Mapping[str, np.ndarray]
    report: SolverReport

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def certify_filter(
    model: TsDelayModel,
    filt: FuzzyFilter,
    h: float,
    rho: float,
    omega: float,
    gamma: float,
    delay_rate_mode: str = "rho",
    bounds: ProductBounds | None = None,
    slack_structure: str = "full",
    eps: float = EPS_STRICT,
) -> CertifyResult:
    """Check that ``gamma`` is a certified attenuation level of a fixed filter.

    Without ``bounds`` the check ignores membership shape; passing the
    bounds used for a membership-dependent synthesis gives the matching
    analysis condition.
    """
    prob = canonicalize(
        build_lemma2_analysis(
            model, filt, h, rho, omega, gamma, delay_rate_mode, bounds, slack_structure
        )
    )
    rep = solve_feasibility(prob, eps=eps)
    cert = prob.values(rep.x) if rep.status == "feasible" else {}
    return CertifyResult(rep.status, float(gamma), cert, rep)


# ---------------------------------------------------------------------------
# Filter files
# ---------------------------------------------------------------------------


def save_filter(result: SynthesisResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_filter(path: str | Path) -> SynthesisResult:
    """Read a filter file written by :func:`save_filter`."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        filt = FuzzyFilter.from_dict(data)
        cert = {k: np.asarray(v, dtype=float) for k, v in data.get("certificate", {}).items()}
        settings = SynthesisSettings.from_dict(data["settings"])
        return SynthesisResult(filt, float(data["gamma"]), cert, settings)
    except KeyError as exc:
        raise ModelError(f"filter file missing field {exc}") from None
