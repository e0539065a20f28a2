"""Symbolic LMI problems for fuzzy delay filter synthesis and analysis.

Matrix expressions are affine in named matrix unknowns.  Every term is a
placement ``L @ V @ R`` (or ``L @ V.T @ R``) of one unknown ``V``, which is
enough to express block assembly, congruences and products with constant
matrices without ever expanding to scalar coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import (
    AugmentedSystem,
    FuzzyFilter,
    ModelError,
    ProductBounds,
    TsDelayModel,
    augment,
    check_model,
)

__all__ = [
    "MatrixVariable",
    "Term",
    "LinExpr",
    "AffineBlockExpr",
    "LmiProblem",
    "LAMBDA_COEFFS",
    "DELAY_RATE_MODES",
    "bmat",
    "sym_bmat",
    "build_lambda",
    "build_theorem1",
    "build_theorem2",
    "build_lemma2_analysis",
    "mu_partition",
]

# Block grid of the integral-inequality term, before the 3/h factor.  The
# fifth (disturbance) row and column are zero.
LAMBDA_COEFFS = np.array(
    [
        [-3.0, 1.0, 12.0, -10.0],
        [1.0, -3.0, -8.0, 10.0],
        [12.0, -8.0, -64.0, 60.0],
        [-10.0, 10.0, 60.0, -60.0],
    ]
)

DELAY_RATE_MODES = ("plain", "rho")
SLACK_STRUCTURES = ("full", "block-diagonal")


@dataclass(frozen=True)
class MatrixVariable:
    name: str
    rows: int
    cols: int
    structure: str = "general"

    def __post_init__(self) -> None:
        if self.structure not in ("symmetric", "general"):
            raise ValueError(f"unknown structure {self.structure!r}")
        if self.structure == "symmetric" and self.rows != self.cols:
            raise ValueError(f"symmetric variable {self.name} must be square")

    @property
    def symmetric(self) -> bool:
        return self.structure == "symmetric"

    @property
    def size(self) -> int:
        """Number of scalar unknowns."""
        if self.symmetric:
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols


@dataclass(frozen=True)
class Term:
    """``L @ V @ R`` (``L @ V.T @ R`` when ``transposed``) for unknown ``var``."""

    var: MatrixVariable
    L: np.ndarray
    R: np.ndarray
    transposed: bool = False

    def evaluate(self, value: np.ndarray) -> np.ndarray:
        v = value.T if self.transposed else value
        return self.L @ v @ self.R

    def T(self) -> "Term":
        return Term(self.var, self.R.T, self.L.T, not self.transposed)


class LinExpr:
    """Affine matrix expression ``const + sum(terms)``.

    Supports ``+``, ``-``, scalar ``*``, ``@`` with constant arrays on either
    side and ``.T``.
    """

    __slots__ = ("shape", "const", "terms")
    # make ndarray @ LinExpr dispatch to __rmatmul__
    __array_ufunc__ = None

    def __init__(self, shape, const=None, terms: Iterable[Term] = ()):
        self.shape = (int(shape[0]), int(shape[1]))
        self.const = np.zeros(self.shape) if const is None else np.asarray(const, float)
        self.terms = list(terms)

    @classmethod
    def of(cls, var: MatrixVariable) -> "LinExpr":
        return cls((var.rows, var.cols), None, [Term(var, np.eye(var.rows), np.eye(var.cols))])

    @classmethod
    def constant(cls, value) -> "LinExpr":
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return cls(value.shape, value)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "LinExpr":
        return cls((rows, cols))

    def _coerce(self, other) -> "LinExpr":
        if isinstance(other, LinExpr):
            out = other
        else:
            out = LinExpr.constant(np.broadcast_to(np.asarray(other, float), self.shape))
        if out.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {out.shape}")
        return out

    def __add__(self, other) -> "LinExpr":
        other = self._coerce(other)
        return LinExpr(self.shape, self.const + other.const, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self) -> "LinExpr":
        return self * -1.0

    def __sub__(self, other) -> "LinExpr":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "LinExpr":
        return self._coerce(other) - self

    def __mul__(self, c) -> "LinExpr":
        c = float(c)
        return LinExpr(
            self.shape, self.const * c, [Term(t.var, t.L * c, t.R, t.transposed) for t in self.terms]
        )

    __rmul__ = __mul__

    def __matmul__(self, M) -> "LinExpr":
        M = np.atleast_2d(np.asarray(M, float))
        return LinExpr(
            (self.shape[0], M.shape[1]),
            self.const @ M,
            [Term(t.var, t.L, t.R @ M, t.transposed) for t in self.terms],
        )

    def __rmatmul__(self, M) -> "LinExpr":
        M = np.atleast_2d(np.asarray(M, float))
        return LinExpr(
            (M.shape[0], self.shape[1]),
            M @ self.const,
            [Term(t.var, M @ t.L, t.R, t.transposed) for t in self.terms],
        )

    @property
    def T(self) -> "LinExpr":
        return LinExpr(self.shape[::-1], self.const.T, [t.T() for t in self.terms])

    def sym(self) -> "LinExpr":
        """``X + X.T``."""
        return self + self.T

    def variables(self) -> list[MatrixVariable]:
        seen: dict[str, MatrixVariable] = {}
        for t in self.terms:
            seen.setdefault(t.var.name, t.var)
        return list(seen.values())

    def evaluate(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for t in self.terms:
            try:
                val = np.asarray(values[t.var.name], dtype=float)
            except KeyError:
                raise KeyError(f"no value for variable {t.var.name!r}") from None
            out += t.evaluate(val)
        return out


def _embed(expr: LinExpr, row_off: int, col_off: int, shape: tuple[int, int]) -> LinExpr:
    """Place ``expr`` at ``(row_off, col_off)`` inside a zero matrix of ``shape``."""
    r, c = expr.shape
    Lsel = np.zeros((shape[0], r))
    Lsel[row_off : row_off + r] = np.eye(r)
    Rsel = np.zeros((c, shape[1]))
    Rsel[:, col_off : col_off + c] = np.eye(c)
    return Lsel @ expr @ Rsel


def _as_expr(x, rows: int, cols: int) -> LinExpr | None:
    if x is None:
        return None
    if isinstance(x, LinExpr):
        if x.shape != (rows, cols):
            raise ValueError(f"block shape {x.shape}, expected {(rows, cols)}")
        return x
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr * np.eye(rows) if rows == cols else np.full((rows, cols), float(arr))
    arr = np.broadcast_to(arr, (rows, cols))
    return LinExpr.constant(arr)


def bmat(grid: Sequence[Sequence], row_sizes: Sequence[int], col_sizes: Sequence[int]) -> LinExpr:
    """Block matrix from a grid of LinExpr / arrays / None (zero)."""
    shape = (sum(row_sizes), sum(col_sizes))
    out = LinExpr(shape)
    roffs = np.concatenate([[0], np.cumsum(row_sizes)])
    coffs = np.concatenate([[0], np.cumsum(col_sizes)])
    for a, row in enumerate(grid):
        for b, blk in enumerate(row):
            e = _as_expr(blk, row_sizes[a], col_sizes[b])
            if e is not None:
                out = out + _embed(e, int(roffs[a]), int(coffs[b]), shape)
    return out


def sym_bmat(upper: Mapping[tuple[int, int], object], sizes: Sequence[int]) -> LinExpr:
    """Symmetric block matrix from its upper-triangle blocks.

    ``upper`` maps ``(a, b)`` with ``a <= b`` to a block; diagonal blocks
    must themselves be symmetric and off-diagonal blocks are mirrored.
    """
    dim = sum(sizes)
    offs = np.concatenate([[0], np.cumsum(sizes)])
    out = LinExpr((dim, dim))
    for (a, b), blk in upper.items():
        if a > b:
            raise ValueError("give upper-triangle blocks only")
        e = _as_expr(blk, sizes[a], sizes[b])
        if e is None:
            continue
        placed = _embed(e, int(offs[a]), int(offs[b]), (dim, dim))
        out = out + (placed if a == b else placed.sym())
    return out


@dataclass
class AffineBlockExpr:
    """A square symmetric affine expression with a name."""

    expr: LinExpr
    label: str = ""

    def __post_init__(self) -> None:
        r, c = self.expr.shape
        if r != c:
            raise ValueError(f"block {self.label!r} is not square: {self.expr.shape}")

    @property
    def dimension(self) -> int:
        return self.expr.shape[0]

    @property
    def constant(self) -> np.ndarray:
        return self.expr.const

    @property
    def terms(self) -> list[Term]:
        return self.expr.terms

    def evaluate(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        return self.expr.evaluate(values)


@dataclass
class LmiProblem:
    """Named unknowns plus blocks required negative / positive definite."""

    variables: list[MatrixVariable]
    negdef_blocks: list[AffineBlockExpr]
    possemidef_blocks: list[AffineBlockExpr] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        declared = {v.name: v for v in self.variables}
        for blk in self.negdef_blocks + self.possemidef_blocks:
            for v in blk.expr.variables():
                if declared.get(v.name) != v:
                    raise ValueError(f"block {blk.label!r} uses undeclared variable {v.name!r}")

    def variable(self, name: str) -> MatrixVariable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def num_unknowns(self) -> int:
        return sum(v.size for v in self.variables)

    def random_assignment(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        out = {}
        for v in self.variables:
            m = rng.standard_normal((v.rows, v.cols))
            out[v.name] = (m + m.T) / 2 if v.symmetric else m
        return out


# ---------------------------------------------------------------------------
# Constructions specific to the two condition families
# ---------------------------------------------------------------------------


def mu_partition(n: int, n_w: int, n_z: int) -> list[int]:
    """Block sizes of the synthesis/analysis matrices.

    Four ``2n`` blocks for the state, delayed state and the two integral
    averages, ``n_w`` for the disturbance, ``2n`` for the Schur column of the
    derivative weight and ``n_z`` for the error output.
    """
    m = 2 * n
    return [m, m, m, m, n_w, m, n_z]


def build_lambda(h: float, Zvar, n: int, n_w: int = 1) -> AffineBlockExpr:
    """Integral-inequality block of size ``8n + n_w``.

    ``Zvar`` is a ``2n x 2n`` symmetric MatrixVariable or LinExpr.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    Z = Zvar if isinstance(Zvar, LinExpr) else LinExpr.of(Zvar)
    m = 2 * n
    sizes = [m, m, m, m, n_w]
    scale = 3.0 / h
    upper = {}
    for a in range(4):
        for b in range(a, 4):
            upper[(a, b)] = Z * (scale * LAMBDA_COEFFS[a, b])
    return AffineBlockExpr(sym_bmat(upper, sizes), "Lambda")


def _check_common(model: TsDelayModel, h: float, gamma: float, delay_rate_mode: str) -> None:
    check_model(model)
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma!r}")
    if not h > 0:
        raise ValueError(f"h must be positive, got {h!r}")
    if delay_rate_mode not in DELAY_RATE_MODES:
        raise ValueError(f"delay_rate_mode must be one of {DELAY_RATE_MODES}")


def _delay_weight(rho: float, mode: str) -> float:
    return 1.0 - rho if mode == "rho" else 1.0


@dataclass
class _SynthesisVars:
    P11: MatrixVariable
    P22: MatrixVariable
    Y: MatrixVariable
    Z: MatrixVariable
    Acal: list[MatrixVariable]
    Bcal: list[MatrixVariable]
    Ccal: list[MatrixVariable]

    def all(self) -> list[MatrixVariable]:
        return [self.P11, self.P22, self.Y, self.Z, *self.Acal, *self.Bcal, *self.Ccal]

    def Ptilde(self, n: int) -> LinExpr:
        """``[[P11, P22], [P22, P22]]`` as an expression."""
        E1 = np.vstack([np.eye(n), np.zeros((n, n))])
        E2 = np.vstack([np.zeros((n, n)), np.eye(n)])
        P22 = LinExpr.of(self.P22)
        return E1 @ LinExpr.of(self.P11) @ E1.T + (E1 @ P22 @ E2.T).sym() + E2 @ P22 @ E2.T


def _synthesis_vars(model: TsDelayModel) -> _SynthesisVars:
    n, p = model.n, model.p
    return _SynthesisVars(
        MatrixVariable("P11", n, n, "symmetric"),
        MatrixVariable("P22", n, n, "symmetric"),
        MatrixVariable("Y", 2 * n, 2 * n, "symmetric"),
        MatrixVariable("Z", 2 * n, 2 * n, "symmetric"),
        [MatrixVariable(f"Acal{j + 1}", n, n) for j in range(p)],
        [MatrixVariable(f"Bcal{j + 1}", n, model.n_y) for j in range(p)],
        [MatrixVariable(f"Ccal{j + 1}", model.n_z, n) for j in range(p)],
    )


def _upsilon(
    model: TsDelayModel,
    sv: _SynthesisVars,
    i: int,
    j: int,
    h: float,
    rho: float,
    omega: float,
    gamma: float,
    mode: str,
) -> LinExpr:
    """Transformed synthesis block for plant rule ``i`` and filter rule ``j``."""
    n, nw, nz = model.n, model.n_w, model.n_z
    r = model.rules[i]
    P11, P22 = LinExpr.of(sv.P11), LinExpr.of(sv.P22)
    Acal, Bcal, Ccal = LinExpr.of(sv.Acal[j]), LinExpr.of(sv.Bcal[j]), LinExpr.of(sv.Ccal[j])
    Y, Z = LinExpr.of(sv.Y), LinExpr.of(sv.Z)

    lam1 = bmat(
        [[P11 @ r.A + Bcal @ r.C, Acal], [P22 @ r.A + Bcal @ r.C, Acal]], [n, n], [n, n]
    )
    lam2 = bmat(
        [[P11 @ r.A_tau + Bcal @ r.C_tau, None], [P22 @ r.A_tau + Bcal @ r.C_tau, None]],
        [n, n],
        [n, n],
    )
    lam3 = bmat([[P11 @ r.B + Bcal @ r.D], [P22 @ r.B + Bcal @ r.D]], [n, n], [nw])
    gam2_1 = bmat([[LinExpr.constant(r.E), -Ccal]], [nz], [n, n])
    gam2_2 = np.hstack([r.E_tau, np.zeros((nz, n))])

    sizes = mu_partition(n, nw, nz)
    sh = math.sqrt(h)
    upper = {
        (0, 0): lam1.sym() + Y,
        (0, 1): lam2,
        (0, 4): lam3,
        (1, 1): Y * (-_delay_weight(rho, mode)),
        (4, 4): -(gamma**2) * np.eye(nw),
        (0, 5): lam1.T * sh,
        (1, 5): lam2.T * sh,
        (4, 5): lam3.T * sh,
        (0, 6): gam2_1.T,
        (1, 6): gam2_2.T,
        (5, 5): sv.Ptilde(n) * (-2.0 * omega) + Z * (omega**2),
        (6, 6): -np.eye(nz),
    }
    lam = build_lambda(h, Z, n, nw).expr
    return sym_bmat(upper, sizes) + _embed(lam, 0, 0, (sum(sizes), sum(sizes)))


def _side_blocks(sv: _SynthesisVars, n: int) -> list[AffineBlockExpr]:
    return [
        AffineBlockExpr(sv.Ptilde(n), "Ptilde"),
        AffineBlockExpr(LinExpr.of(sv.Y), "Y"),
        AffineBlockExpr(LinExpr.of(sv.Z), "Z"),
    ]


def build_theorem1(
    model: TsDelayModel,
    h: float,
    rho: float,
    omega: float,
    gamma: float,
    delay_rate_mode: str = "rho",
) -> LmiProblem:
    """Membership-independent synthesis LMIs ``Ups_ij + Ups_ji < 0``, ``i <= j``."""
    _check_common(model, h, gamma, delay_rate_mode)
    sv = _synthesis_vars(model)
    p = model.p
    ups = {
        (i, j): _upsilon(model, sv, i, j, h, rho, omega, gamma, delay_rate_mode)
        for i in range(p)
        for j in range(p)
    }
    blocks = [
        AffineBlockExpr(ups[i, j] + ups[j, i], f"Upsilon[{i + 1},{j + 1}]")
        for i in range(p)
        for j in range(i, p)
    ]
    meta = dict(
        theorem=1, h=h, rho=rho, omega=omega, gamma=gamma, delay_rate_mode=delay_rate_mode
    )
    return LmiProblem(sv.all(), blocks, _side_blocks(sv, model.n), meta)


def _slack_vars(p: int, sizes: Sequence[int], prefix: str, structure: str):
    """Slack unknowns per rule pair, as (expression, variables, psd blocks)."""
    dim = sum(sizes)
    exprs, variables, psd = {}, [], []
    for a in range(p):
        for b in range(p):
            tag = f"{prefix}{a + 1}{b + 1}" if p < 10 else f"{prefix}{a + 1}_{b + 1}"
            if structure == "full":
                v = MatrixVariable(tag, dim, dim, "symmetric")
                variables.append(v)
                e = LinExpr.of(v)
                psd.append(AffineBlockExpr(e, tag))
            else:
                parts = {}
                for k, s in enumerate(sizes):
                    v = MatrixVariable(f"{tag}.{k}", s, s, "symmetric")
                    variables.append(v)
                    parts[(k, k)] = LinExpr.of(v)
                    psd.append(AffineBlockExpr(LinExpr.of(v), v.name))
                e = sym_bmat(parts, sizes)
            exprs[a, b] = e
    return exprs, variables, psd


def _omega_pair_sum(ups, J, K, bounds: ProductBounds, p: int) -> dict:
    """``Omega_ij + Omega_ji`` for ``i <= j``."""
    shared = None
    for a in range(p):
        for b in range(p):
            t = J[a, b] * float(bounds.upper[a, b]) - K[a, b] * float(bounds.lower[a, b])
            shared = t if shared is None else shared + t
    out = {}
    for i in range(p):
        for j in range(i, p):
            om_ij = ups[i, j] - J[i, j] + K[i, j]
            om_ji = ups[j, i] - J[j, i] + K[j, i]
            out[i, j] = om_ij + om_ji + shared * 2.0
    return out


def build_theorem2(
    model: TsDelayModel,
    h: float,
    rho: float,
    omega: float,
    gamma: float,
    bounds: ProductBounds,
    delay_rate_mode: str = "rho",
    slack_structure: str = "full",
) -> LmiProblem:
    """Membership-dependent synthesis LMIs ``Omega_ij + Omega_ji < 0``.

    ``Omega_ij = Ups_ij - J_ij + K_ij + sum(ub_ab J_ab) - sum(lb_kl K_kl)``
    with ``J, K >= 0``.
    """
    _check_common(model, h, gamma, delay_rate_mode)
    p = model.p
    if bounds.upper.shape != (p, p) or bounds.lower.shape != (p, p):
        raise ModelError(f"bounds must be {p}x{p}, got {bounds.upper.shape}")
    if slack_structure not in SLACK_STRUCTURES:
        raise ValueError(f"slack_structure must be one of {SLACK_STRUCTURES}")
    sv = _synthesis_vars(model)
    sizes = mu_partition(model.n, model.n_w, model.n_z)
    ups = {
        (i, j): _upsilon(model, sv, i, j, h, rho, omega, gamma, delay_rate_mode)
        for i in range(p)
        for j in range(p)
    }
    J, jvars, jpsd = _slack_vars(p, sizes, "J", slack_structure)
    K, kvars, kpsd = _slack_vars(p, sizes, "K", slack_structure)
    pairs = _omega_pair_sum(ups, J, K, bounds, p)
    blocks = [AffineBlockExpr(e, f"Omega[{i + 1},{j + 1}]") for (i, j), e in pairs.items()]
    meta = dict(
        theorem=2,
        h=h,
        rho=rho,
        omega=omega,
        gamma=gamma,
        delay_rate_mode=delay_rate_mode,
        slack_structure=slack_structure,
        bounds=bounds.to_dict(),
    )
    return LmiProblem(
        sv.all() + jvars + kvars, blocks, _side_blocks(sv, model.n) + jpsd + kpsd, meta
    )


def build_lemma2_analysis(
    model: TsDelayModel,
    filt: FuzzyFilter,
    h: float,
    rho: float,
    omega: float,
    gamma: float,
    delay_rate_mode: str = "rho",
    bounds: ProductBounds | None = None,
    slack_structure: str = "full",
) -> LmiProblem:
    """Performance certificate LMIs for a fixed filter.

    The ``-P Z^-1 P`` corner is replaced by ``-2 omega P + omega^2 Z``.
    With ``bounds`` the same membership-dependent slack as the
    membership-dependent synthesis is added.
    """
    _check_common(model, h, gamma, delay_rate_mode)
    aug: AugmentedSystem = augment(model, filt)
    n, nw, nz, p = model.n, model.n_w, model.n_z, model.p
    m = 2 * n
    P = MatrixVariable("P", m, m, "symmetric")
    Yv = MatrixVariable("Y", m, m, "symmetric")
    Zv = MatrixVariable("Z", m, m, "symmetric")
    Pe, Y, Z = LinExpr.of(P), LinExpr.of(Yv), LinExpr.of(Zv)
    sizes = mu_partition(n, nw, nz)
    dim = sum(sizes)
    lam = _embed(build_lambda(h, Z, n, nw).expr, 0, 0, (dim, dim))
    sh = math.sqrt(h)
    phi = {}
    for i in range(p):
        for j in range(p):
            Ab, Abt, Bb = aug.Abar[i, j], aug.Abar_tau[i, j], aug.Bbar[i, j]
            upper = {
                (0, 0): (Pe @ Ab).sym() + Y,
                (0, 1): Pe @ Abt,
                (0, 4): Pe @ Bb,
                (1, 1): Y * (-_delay_weight(rho, delay_rate_mode)),
                (4, 4): -(gamma**2) * np.eye(nw),
                (0, 5): (Ab.T @ Pe) * sh,
                (1, 5): (Abt.T @ Pe) * sh,
                (4, 5): (Bb.T @ Pe) * sh,
                (0, 6): aug.Ebar[i, j].T,
                (1, 6): aug.Ebar_tau[i, j].T,
                (5, 5): Pe * (-2.0 * omega) + Z * (omega**2),
                (6, 6): -np.eye(nz),
            }
            phi[i, j] = sym_bmat(upper, sizes) + lam
    variables = [P, Yv, Zv]
    side = [AffineBlockExpr(Pe, "P"), AffineBlockExpr(Y, "Y"), AffineBlockExpr(Z, "Z")]
    meta = dict(
        theorem="analysis",
        h=h,
        rho=rho,
        omega=omega,
        gamma=gamma,
        delay_rate_mode=delay_rate_mode,
    )
    if bounds is None:
        blocks = [
            AffineBlockExpr(phi[i, j] + phi[j, i], f"Phi[{i + 1},{j + 1}]")
            for i in range(p)
            for j in range(i, p)
        ]
    else:
        J, jvars, jpsd = _slack_vars(p, sizes, "J", slack_structure)
        K, kvars, kpsd = _slack_vars(p, sizes, "K", slack_structure)
        pairs = _omega_pair_sum(phi, J, K, bounds, p)
        blocks = [AffineBlockExpr(e, f"Omega[{i + 1},{j + 1}]") for (i, j), e in pairs.items()]
        variables += jvars + kvars
        side += jpsd + kpsd
        meta.update(bounds=bounds.to_dict(), slack_structure=slack_structure)
    return LmiProblem(variables, blocks, side, meta)
