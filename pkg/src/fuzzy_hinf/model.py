"""T-S fuzzy delay plants, fuzzy filters and their augmented error system.

The plant is a blend of ``p`` local linear delay models weighted by
normalized memberships of a single premise state component.  Filters share
the plant memberships (parallel distributed compensation).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "ModelError",
    "DegenerateMembershipError",
    "Grade",
    "RuleMatrices",
    "DelaySpec",
    "MembershipSpec",
    "TsDelayModel",
    "FuzzyFilter",
    "AugmentedSystem",
    "ProductBounds",
    "validate_model",
    "check_model",
    "normalized_memberships",
    "memberships_on_grid",
    "augment",
    "membership_product_bounds",
    "model_from_dict",
    "model_to_dict",
    "load_model",
    "save_model",
    "example1_model",
]

RULE_FIELDS = ("A", "A_tau", "B", "C", "C_tau", "D", "E", "E_tau")

# Minimum total grade accepted by the normalization.
DEGENERATE_TOL = 1e-12


class ModelError(ValueError):
    """Raised when a model, filter or their combination is malformed."""


class DegenerateMembershipError(ValueError):
    """Raised when the grades of all rules vanish at a premise value."""


def _frozen(a: Any) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Membership grades
# ---------------------------------------------------------------------------

_GRADE_PARAMS = {
    "logistic_complement": ("a", "b", "c"),
    "logistic": ("a", "b", "c"),
    "gaussian": ("center", "width"),
    "triangular": ("left", "peak", "right"),
    "constant": ("value",),
    "table": ("breakpoints", "values"),
}


@dataclass(frozen=True)
class Grade:
    """One parametric membership grade.

    Families
    --------
    logistic_complement(a, b, c)
        ``1 - a / (1 + exp(-b - c x))``
    logistic(a, b, c)
        ``a / (1 + exp(-b - c x))``, the complement partner of the above
    gaussian(center, width)
        ``exp(-((x - center) / width)**2 / 2)``
    triangular(left, peak, right)
        piecewise-linear hat, zero outside ``[left, right]``
    constant(value)
    table(breakpoints, values)
        piecewise-linear interpolation, held constant outside the table
    """

    family: str
    params: Mapping[str, Any]

    def __post_init__(self) -> None:
        if self.family not in _GRADE_PARAMS:
            raise ModelError(f"unknown grade family {self.family!r}")
        params = self.params
        if not isinstance(params, Mapping):
            names = _GRADE_PARAMS[self.family]
            params = dict(zip(names, params))
        missing = [k for k in _GRADE_PARAMS[self.family] if k not in params]
        if missing:
            raise ModelError(f"grade {self.family!r} missing parameters {missing}")
        if self.family == "table":
            params = {
                "breakpoints": tuple(float(v) for v in params["breakpoints"]),
                "values": tuple(float(v) for v in params["values"]),
            }
        else:
            params = {k: float(params[k]) for k in _GRADE_PARAMS[self.family]}
        object.__setattr__(self, "params", params)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        fam = self.family
        if fam == "logistic_complement":
            return 1.0 - p["a"] * expit(p["b"] + p["c"] * x)
        if fam == "logistic":
            return p["a"] * expit(p["b"] + p["c"] * x)
        if fam == "gaussian":
            return np.exp(-0.5 * ((x - p["center"]) / p["width"]) ** 2)
        if fam == "triangular":
            lo, m, hi = p["left"], p["peak"], p["right"]
            up = np.where(m > lo, (x - lo) / (m - lo if m > lo else 1.0), 1.0)
            down = np.where(hi > m, (hi - x) / (hi - m if hi > m else 1.0), 1.0)
            return np.clip(np.minimum(up, down), 0.0, 1.0)
        if fam == "constant":
            return np.full_like(x, p["value"])
        return np.interp(x, p["breakpoints"], p["values"])

    def problems(self) -> list[str]:
        p = self.params
        out = []
        if self.family == "gaussian" and not p["width"] > 0:
            out.append("width must be positive")
        if self.family == "triangular" and not p["left"] <= p["peak"] <= p["right"]:
            out.append("need left <= peak <= right")
        if self.family == "triangular" and p["left"] == p["right"]:
            out.append("empty support")
        if self.family == "constant" and p["value"] < 0:
            out.append("constant grade must be nonnegative")
        if self.family in ("logistic", "logistic_complement"):
            a = p["a"]
            if self.family == "logistic" and a < 0:
                out.append("logistic scale a must be nonnegative")
            if self.family == "logistic_complement" and not 0 <= a <= 1:
                out.append("logistic_complement needs 0 <= a <= 1")
        if self.family == "table":
            bp, vals = p["breakpoints"], p["values"]
            if len(bp) != len(vals) or len(bp) == 0:
                out.append("breakpoints and values must have equal nonzero length")
            elif np.any(np.diff(bp) <= 0):
                out.append("breakpoints must be strictly increasing")
            if any(v < 0 for v in vals):
                out.append("table values must be nonnegative")
        for v in p.values():
            vals = v if isinstance(v, tuple) else (v,)
            if not all(math.isfinite(u) for u in vals):
                out.append("parameters must be finite")
                break
        return out

    def to_dict(self) -> dict:
        params = {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()}
        return {"family": self.family, "params": params}


# ---------------------------------------------------------------------------
# Model types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RuleMatrices:
    """Local linear delay model of one fuzzy rule."""

    A: np.ndarray
    A_tau: np.ndarray
    B: np.ndarray
    C: np.ndarray
    C_tau: np.ndarray
    D: np.ndarray
    E: np.ndarray
    E_tau: np.ndarray

    def __post_init__(self) -> None:
        for name in RULE_FIELDS:
            object.__setattr__(self, name, _frozen(getattr(self, name)))


@dataclass(frozen=True)
class DelaySpec:
    h: float
    rho: float


@dataclass(frozen=True)
class MembershipSpec:
    premise_index: int
    grades: tuple[Grade, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "grades", tuple(self.grades))


@dataclass(frozen=True)
class TsDelayModel:
    n: int
    n_w: int
    n_y: int
    n_z: int
    rules: tuple[RuleMatrices, ...]
    delay: DelaySpec
    membership: MembershipSpec

    def __post_init__(self) -> None:
        object.__setattr__(self, "rules", tuple(self.rules))

    @property
    def p(self) -> int:
        return len(self.rules)

    def stacked(self, name: str) -> np.ndarray:
        """All rules' matrix ``name`` stacked along a leading rule axis."""
        return np.stack([getattr(r, name) for r in self.rules])


@dataclass(frozen=True)
class FuzzyFilter:
    """Per-rule filter matrices ``(A_hat_j, B_hat_j, C_hat_j)``."""

    A_hat: tuple[np.ndarray, ...]
    B_hat: tuple[np.ndarray, ...]
    C_hat: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        for name in ("A_hat", "B_hat", "C_hat"):
            object.__setattr__(self, name, tuple(_frozen(m) for m in getattr(self, name)))

    @property
    def p(self) -> int:
        return len(self.A_hat)

    @classmethod
    def zeros(cls, model: TsDelayModel) -> "FuzzyFilter":
        n, p = model.n, model.p
        return cls(
            [np.zeros((n, n))] * p,
            [np.zeros((n, model.n_y))] * p,
            [np.zeros((model.n_z, n))] * p,
        )

    def to_dict(self) -> dict:
        return {
            "A_hat": [m.tolist() for m in self.A_hat],
            "B_hat": [m.tolist() for m in self.B_hat],
            "C_hat": [m.tolist() for m in self.C_hat],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FuzzyFilter":
        return cls(data["A_hat"], data["B_hat"], data["C_hat"])


@dataclass(frozen=True)
class AugmentedSystem:
    """Filtering error system, one block per ordered rule pair ``(i, j)``.

    Arrays carry two leading rule axes, e.g. ``Abar[i, j]`` is ``2n x 2n``.
    """

    Abar: np.ndarray
    Abar_tau: np.ndarray
    Bbar: np.ndarray
    Ebar: np.ndarray
    Ebar_tau: np.ndarray


@dataclass(frozen=True)
class ProductBounds:
    """Bounds ``lower[i, j] <= v_i * v_j <= upper[i, j]`` on the premise domain."""

    upper: np.ndarray
    lower: np.ndarray
    domain: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "upper", _frozen(self.upper))
        object.__setattr__(self, "lower", _frozen(self.lower))

    @property
    def p(self) -> int:
        return self.upper.shape[0]

    def to_dict(self) -> dict:
        return {
            "upper": self.upper.tolist(),
            "lower": self.lower.tolist(),
            "domain": list(self.domain) if self.domain is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProductBounds":
        dom = data.get("domain")
        return cls(data["upper"], data["lower"], tuple(dom) if dom is not None else None)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def validate_model(model: TsDelayModel) -> list[str]:
    """Collect every dimension or invariant violation of ``model``.

    Each entry starts with a path such as ``rules[1].A``.  An empty list
    means the model is well formed.
    """
    out: list[str] = []
    dims = {"n": model.n, "n_w": model.n_w, "n_y": model.n_y, "n_z": model.n_z}
    for key, val in dims.items():
        if not isinstance(val, (int, np.integer)) or val < 1:
            out.append(f"{key}: must be a positive integer, got {val!r}")
    n, nw, ny, nz = model.n, model.n_w, model.n_y, model.n_z
    shapes = {
        "A": (n, n),
        "A_tau": (n, n),
        "B": (n, nw),
        "C": (ny, n),
        "C_tau": (ny, n),
        "D": (ny, nw),
        "E": (nz, n),
        "E_tau": (nz, n),
    }
    if not model.rules:
        out.append("rules: at least one rule is required")
    for i, rule in enumerate(model.rules):
        for name, shape in shapes.items():
            mat = getattr(rule, name)
            if mat.shape != shape:
                out.append(f"rules[{i}].{name}: expected shape {shape}, got {mat.shape}")
            elif not np.all(np.isfinite(mat)):
                out.append(f"rules[{i}].{name}: non-finite entries")
    h, rho = model.delay.h, model.delay.rho
    if not (math.isfinite(h) and h > 0):
        out.append(f"delay.h: must be finite and > 0, got {h!r}")
    if not math.isfinite(rho):
        out.append(f"delay.rho: must be finite, got {rho!r}")
    mem = model.membership
    if not 0 <= mem.premise_index < max(n, 1):
        out.append(f"membership.premise_index: {mem.premise_index} outside state of size {n}")
    if len(mem.grades) != len(model.rules):
        out.append(
            f"membership.grades: expected {len(model.rules)} grades, got {len(mem.grades)}"
        )
    for k, g in enumerate(mem.grades):
        for msg in g.problems():
            out.append(f"membership.grades[{k}]: {msg}")
    return out


def check_model(model: TsDelayModel) -> None:
    problems = validate_model(model)
    if problems:
        raise ModelError("invalid model: " + "; ".join(problems))


def memberships_on_grid(model: TsDelayModel, psi) -> np.ndarray:
    """Normalized memberships for an array of premise values.

    Returns an array of shape ``psi.shape + (p,)``.
    """
    psi = np.asarray(psi, dtype=float)
    grades = np.stack([np.broadcast_to(g(psi), psi.shape) for g in model.membership.grades], -1)
    total = grades.sum(axis=-1)
    bad = ~(total > DEGENERATE_TOL)
    if np.any(bad):
        where = psi[bad].ravel()[0] if psi.ndim else float(psi)
        raise DegenerateMembershipError(
            f"grades sum to {total[bad].ravel()[0]:.3g} at premise value {where!r}"
        )
    return grades / total[..., None]


def normalized_memberships(model: TsDelayModel, state) -> np.ndarray:
    """Normalized rule weights at a plant state."""
    state = np.asarray(state, dtype=float)
    psi = state[model.membership.premise_index]
    try:
        return memberships_on_grid(model, psi)
    except DegenerateMembershipError as exc:
        raise DegenerateMembershipError(f"{exc} (state {state.tolist()})") from None


def _check_filter(model: TsDelayModel, filt: FuzzyFilter) -> None:
    n = model.n
    if filt.p != model.p or len(filt.B_hat) != model.p or len(filt.C_hat) != model.p:
        raise ModelError(f"filter has {filt.p} rules, model has {model.p}")
    for j in range(model.p):
        for name, shape in (
            ("A_hat", (n, n)),
            ("B_hat", (n, model.n_y)),
            ("C_hat", (model.n_z, n)),
        ):
            got = getattr(filt, name)[j].shape
            if got != shape:
                raise ModelError(f"filter {name}[{j}]: expected shape {shape}, got {got}")


def augment(model: TsDelayModel, filt: FuzzyFilter) -> AugmentedSystem:
    """Assemble the filtering error system for every rule pair."""
    check_model(model)
    _check_filter(model, filt)
    n, p = model.n, model.p
    Abar = np.zeros((p, p, 2 * n, 2 * n))
    Abar_tau = np.zeros_like(Abar)
    Bbar = np.zeros((p, p, 2 * n, model.n_w))
    Ebar = np.zeros((p, p, model.n_z, 2 * n))
    Ebar_tau = np.zeros_like(Ebar)
    for i, r in enumerate(model.rules):
        for j in range(p):
            Ah, Bh, Ch = filt.A_hat[j], filt.B_hat[j], filt.C_hat[j]
            Abar[i, j, :n, :n] = r.A
            Abar[i, j, n:, :n] = Bh @ r.C
            Abar[i, j, n:, n:] = Ah
            Abar_tau[i, j, :n, :n] = r.A_tau
            Abar_tau[i, j, n:, :n] = Bh @ r.C_tau
            Bbar[i, j, :n] = r.B
            Bbar[i, j, n:] = Bh @ r.D
            Ebar[i, j, :, :n] = r.E
            Ebar[i, j, :, n:] = -Ch
            Ebar_tau[i, j, :, :n] = r.E_tau
    return AugmentedSystem(*(_frozen(a) for a in (Abar, Abar_tau, Bbar, Ebar, Ebar_tau)))


def membership_product_bounds(
    model: TsDelayModel,
    domain_lo: float,
    domain_hi: float,
    grid_points: int,
    margin: float = 1e-6,
) -> ProductBounds:
    """Grid bounds on pairwise membership products over a premise interval.

    The extremes over ``grid_points`` evenly spaced premise values are pushed
    outward by ``margin`` and clipped to ``[0, 1]``.
    """
    if grid_points < 2:
        raise ValueError("grid_points must be at least 2")
    if not domain_lo < domain_hi:
        raise ValueError("domain_lo must be below domain_hi")
    psi = np.linspace(domain_lo, domain_hi, int(grid_points))
    v = memberships_on_grid(model, psi)
    prod = v[:, :, None] * v[:, None, :]
    upper = np.clip(prod.max(axis=0) + margin, 0.0, 1.0)
    lower = np.clip(prod.min(axis=0) - margin, 0.0, 1.0)
    return ProductBounds(upper, lower, (float(domain_lo), float(domain_hi)))


# ---------------------------------------------------------------------------
# JSON model files
# ---------------------------------------------------------------------------


def model_from_dict(data: Mapping[str, Any]) -> TsDelayModel:
    try:
        rules = [RuleMatrices(**{k: r[k] for k in RULE_FIELDS}) for r in data["rules"]]
        delay = DelaySpec(float(data["delay"]["h"]), float(data["delay"]["rho"]))
        mem = data["membership"]
        grades = [Grade(g["family"], g["params"]) for g in mem["grades"]]
        return TsDelayModel(
            int(data["n"]),
            int(data["n_w"]),
            int(data["n_y"]),
            int(data["n_z"]),
            rules,
            delay,
            MembershipSpec(int(mem["premise_index"]), grades),
        )
    except KeyError as exc:
        raise ModelError(f"model file missing field {exc}") from None


def model_to_dict(model: TsDelayModel) -> dict:
    return {
        "n": model.n,
        "n_w": model.n_w,
        "n_y": model.n_y,
        "n_z": model.n_z,
        "rules": [{k: getattr(r, k).tolist() for k in RULE_FIELDS} for r in model.rules],
        "delay": {"h": model.delay.h, "rho": model.delay.rho},
        "membership": {
            "premise_index": model.membership.premise_index,
            "grades": [g.to_dict() for g in model.membership.grades],
        },
    }


def load_model(path: str | Path) -> TsDelayModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def save_model(model: TsDelayModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n", encoding="utf-8")


EXAMPLE1_PATH = Path(__file__).with_name("data") / "example1.json"


def example1_model() -> TsDelayModel:
    """The bundled two-rule benchmark plant."""
    return load_model(EXAMPLE1_PATH)
