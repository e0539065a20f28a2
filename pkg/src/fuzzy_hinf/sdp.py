"""Block semidefinite feasibility: canonical form, certificates and a solver.

An :class:`~fuzzy_hinf.lmi.LmiProblem` is flattened to scalar unknowns
``x`` with, per block, ``F(x) = F0 + sum_k x_k F_k``.  Feasibility of
``F_b(x) < 0`` (negdef) and ``F_b(x) > 0`` (possemidef) is decided by the
phase-I program

    minimize t  s.t.  F_b(x) <= t I (negdef),  -F_b(x) <= t I (possemidef)

solved with a primal-dual path-following method (HKM search direction,
Mehrotra predictor-corrector).  Dual iterates are always exactly feasible,
so any iterate with ``t < -eps`` is a usable point.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .lmi import LmiProblem, MatrixVariable

__all__ = [
    "EPS_STRICT",
    "SdpBlock",
    "SdpFeasibilityProblem",
    "SolverReport",
    "canonicalize",
    "eigen_margin",
    "solve_feasibility",
]

log = logging.getLogger(__name__)

EPS_STRICT = 1e-7
SENSES = ("negdef", "possemidef")

# Relative asymmetry tolerated in a canonical coefficient matrix.
_SYM_TOL = 1e-10


@dataclass(frozen=True)
class SdpBlock:
    """One block ``F0 + sum_k x_k F_k``.

    ``coeffs`` is a sparse ``(dim*dim, d)`` matrix whose column ``k`` is the
    row-major flattening of ``F_k``.
    """

    dim: int
    F0: np.ndarray
    coeffs: sp.csc_matrix
    sense: str
    label: str = ""

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        F = self.F0 + (self.coeffs @ x).reshape(self.dim, self.dim)
        return (F + F.T) / 2

    def coefficient(self, k: int) -> np.ndarray:
        return self.coeffs[:, k].toarray().reshape(self.dim, self.dim)

    def used_columns(self) -> np.ndarray:
        return np.flatnonzero(np.diff(self.coeffs.indptr))


@dataclass(frozen=True)
class SdpFeasibilityProblem:
    d: int
    blocks: tuple[SdpBlock, ...]
    directory: Mapping[str, tuple[int, MatrixVariable]] = field(default_factory=dict)
    metadata: Mapping = field(default_factory=dict)

    def values(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Unpack a scalar vector into named matrices."""
        return {name: _unpack(var, x[off : off + var.size]) for name, (off, var) in self.directory.items()}

    def vector(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        x = np.zeros(self.d)
        for name, (off, var) in self.directory.items():
            x[off : off + var.size] = _pack(var, np.asarray(values[name], dtype=float))
        return x

    def evaluate(self, x: np.ndarray) -> list[np.ndarray]:
        return [b.evaluate(x) for b in self.blocks]


@dataclass(frozen=True)
class SolverReport:
    status: str
    x: np.ndarray | None
    worst_margin: float
    iterations: int
    wall_time: float
    t: float = float("nan")
    lower_bound: float = float("-inf")
    message: str = ""


# ---------------------------------------------------------------------------
# Canonicalization
# ---------------------------------------------------------------------------


def _index_pairs(var: MatrixVariable) -> tuple[np.ndarray, np.ndarray]:
    if var.symmetric:
        return np.tril_indices(var.rows)
    r, c = np.indices((var.rows, var.cols))
    return r.ravel(), c.ravel()


def _unpack(var: MatrixVariable, vals: np.ndarray) -> np.ndarray:
    a, b = _index_pairs(var)
    M = np.zeros((var.rows, var.cols))
    M[a, b] = vals
    if var.symmetric:
        M[b, a] = vals
    return M


def _pack(var: MatrixVariable, M: np.ndarray) -> np.ndarray:
    if M.shape != (var.rows, var.cols):
        raise ValueError(f"{var.name}: expected shape {(var.rows, var.cols)}, got {M.shape}")
    a, b = _index_pairs(var)
    return M[a, b]


def _variable_columns(terms, var: MatrixVariable, dim: int) -> np.ndarray:
    """Coefficient matrices of every scalar unknown of ``var``: ``(size, dim*dim)``."""
    T = np.zeros((var.rows, var.cols, dim, dim))
    for t in terms:
        if t.transposed:
            # L V^T R = sum_ab V_ab L[:, b] R[a, :]
            T += np.einsum("ib,aj->abij", t.L, t.R)
        else:
            T += np.einsum("ia,bj->abij", t.L, t.R)
    a, b = _index_pairs(var)
    cols = T[a, b]
    if var.symmetric:
        off = a != b
        cols[off] += T[b[off], a[off]]
    return cols.reshape(len(a), dim * dim)


def canonicalize(problem: LmiProblem) -> SdpFeasibilityProblem:
    """Flatten named matrix unknowns into one scalar vector.

    Symmetric unknowns contribute their lower triangle (row-major) with the
    stored value equal to the matrix entry; general unknowns contribute all
    entries row-major.
    """
    directory: dict[str, tuple[int, MatrixVariable]] = {}
    off = 0
    for v in problem.variables:
        directory[v.name] = (off, v)
        off += v.size
    d = off
    blocks = []
    tagged = [(b, "negdef") for b in problem.negdef_blocks]
    tagged += [(b, "possemidef") for b in problem.possemidef_blocks]
    for blk, sense in tagged:
        dim = blk.dimension
        by_var: dict[str, list] = {}
        for t in blk.terms:
            if t.var.name not in directory:
                raise KeyError(f"block {blk.label!r} references undeclared variable {t.var.name!r}")
            by_var.setdefault(t.var.name, []).append(t)
        rows, cols, vals = [], [], []
        for name, terms in by_var.items():
            start, var = directory[name]
            dense = _variable_columns(terms, var, dim)
            sq = dense.reshape(-1, dim, dim)
            asym = np.abs(sq - sq.transpose(0, 2, 1)).max(initial=0.0)
            if asym > _SYM_TOL * max(1.0, np.abs(dense).max(initial=0.0)):
                raise ValueError(f"block {blk.label!r} is not symmetric in {name!r}")
            dense = ((sq + sq.transpose(0, 2, 1)) / 2).reshape(dense.shape)
            k, e = np.nonzero(dense)
            rows.append(e)
            cols.append(k + start)
            vals.append(dense[k, e])
        if rows:
            coo = sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(dim * dim, d),
            )
            coeffs = coo.tocsc()
            coeffs.sum_duplicates()
        else:
            coeffs = sp.csc_matrix((dim * dim, d))
        C = blk.constant
        if np.abs(C - C.T).max(initial=0.0) > _SYM_TOL * max(1.0, np.abs(C).max(initial=0.0)):
            raise ValueError(f"block {blk.label!r} has a non-symmetric constant")
        F0 = (C + C.T) / 2
        F0.setflags(write=False)
        blocks.append(SdpBlock(dim, F0, coeffs, sense, blk.label))
    return SdpFeasibilityProblem(d, tuple(blocks), directory, dict(problem.metadata))


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


def block_margins(problem: SdpFeasibilityProblem, x: np.ndarray) -> np.ndarray:
    """Per-block signed margins: ``lambda_max(F)`` (negdef) or ``-lambda_min(F)``."""
    x = np.asarray(x, dtype=float)
    out = np.empty(len(problem.blocks))
    for i, b in enumerate(problem.blocks):
        ev = np.linalg.eigvalsh(b.evaluate(x))
        out[i] = ev[-1] if b.sense == "negdef" else -ev[0]
    return out


def eigen_margin(problem: SdpFeasibilityProblem, x: np.ndarray) -> float:
    """Worst block margin at ``x``; negative means every block holds strictly."""
    if len(x) != problem.d:
        raise ValueError(f"x has length {len(x)}, problem has {problem.d} unknowns")
    m = block_margins(problem, x)
    return float(m.max()) if m.size else float("-inf")


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


@dataclass
class _Block:
    """Dual-form data ``S = C - mat(G y)`` of one block, restricted to used columns."""

    dim: int
    C: np.ndarray
    G: sp.csr_matrix  # (dim*dim, len(cols))
    GT: sp.csr_matrix
    cols: np.ndarray


def _dual_form(problem: SdpFeasibilityProblem) -> list[_Block]:
    d = problem.d
    out = []
    for b in problem.blocks:
        sigma = 1.0 if b.sense == "negdef" else -1.0
        used = b.used_columns()
        G = sp.hstack(
            [sigma * b.coeffs[:, used], sp.csc_matrix(-np.eye(b.dim).reshape(-1, 1))], format="csr"
        )
        cols = np.concatenate([used, [d]])
        out.append(_Block(b.dim, -sigma * b.F0, G, G.T.tocsr(), cols))
    return out


def _max_step(M: np.ndarray, dM: np.ndarray) -> float:
    """Largest ``a`` with ``M + a dM`` positive semidefinite (``M`` > 0)."""
    try:
        L = np.linalg.cholesky(M)
        W = sla.solve_triangular(L, dM, lower=True)
        W = sla.solve_triangular(L, W.T, lower=True)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(M)
        if w[0] <= 0:
            return 0.0
        R = V / np.sqrt(w)
        W = R.T @ dM @ R
    lam = np.linalg.eigvalsh((W + W.T) / 2)[0]
    return np.inf if lam >= 0 else -1.0 / lam


def solve_feasibility(
    problem: SdpFeasibilityProblem,
    eps: float = EPS_STRICT,
    max_iter: int = 100,
    gap_tol: float = 1e-6,
    feas_tol: float = 1e-6,
) -> SolverReport:
    """Decide whether all blocks hold with margin ``eps``.

    Returns ``feasible`` with a point whose recomputed worst margin is below
    ``-eps``; ``infeasible`` when an approximately feasible dual matrix
    certifies ``min t > -eps`` and the duality gap is below ``gap_tol``;
    otherwise ``indeterminate``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    t0 = time.perf_counter()
    d = problem.d
    m = d + 1
    blocks = _dual_form(problem)
    if not blocks:
        return SolverReport("feasible", np.zeros(d), float("-inf"), 0, 0.0, float("-inf"))
    N = sum(b.dim for b in blocks)
    bvec = np.zeros(m)
    bvec[d] = -1.0

    # Strictly dual-feasible start: x = 0, t above every block eigenvalue.
    lam = max(np.linalg.eigvalsh(-b.C)[-1] for b in blocks)
    y = np.zeros(m)
    y[d] = lam + 1.0 + 0.1 * abs(lam)
    X = [np.eye(b.dim) / N for b in blocks]

    def S_of(y):
        return [b.C - (b.G @ y[b.cols]).reshape(b.dim, b.dim) for b in blocks]

    def A_of(Ms):
        out = np.zeros(m)
        for b, M in zip(blocks, Ms):
            out[b.cols] += b.GT @ M.ravel()
        return out

    S = S_of(y)
    status, msg = "indeterminate", "iteration limit"
    lower = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        S = [(s + s.T) / 2 for s in S]
        try:
            Sinv = [np.linalg.inv(s) for s in S]
        except np.linalg.LinAlgError:
            msg = "dual slack lost definiteness"
            break
        tval = y[d]
        margin = max(tval - np.linalg.eigvalsh(s)[0] for s in S)
        if margin < -eps:
            x = y[:d].copy()
            wm = eigen_margin(problem, x)
            if wm < -eps:
                status, msg = "feasible", "margin reached"
                return SolverReport(
                    status, x, wm, it, time.perf_counter() - t0, tval, lower, msg
                )

        Rp = bvec - A_of(X)
        pobj = sum(float(np.sum(b.C * Xb)) for b, Xb in zip(blocks, X))
        dobj = -tval
        mu = sum(float(np.sum(Xb * Sb)) for Xb, Sb in zip(X, S)) / N
        pinf = np.linalg.norm(Rp) / (1.0 + np.linalg.norm(bvec))
        # min t >= -(pobj + Rp.y) for every dual point; use the current one
        lower = -(pobj + abs(Rp @ y))
        gap = pobj - dobj
        if pinf < feas_tol and lower > -eps and abs(gap) < gap_tol * (1.0 + abs(dobj)):
            status, msg = "infeasible", "dual bound exceeds -eps"
            break
        if pinf < feas_tol and abs(gap) < 1e-3 * gap_tol and lower <= -eps:
            # converged with t* in (-inf, -eps]: numerically at the boundary
            msg = "converged at the margin boundary"
            break

        # Schur complement of the HKM direction.
        H = np.zeros((m, m))
        for b, Xb, Si in zip(blocks, X, Sinv):
            # H_kl = vec(A_k) . (X kron S^-1) vec(A_l) = tr(A_k X A_l S^-1)
            KG = (b.GT @ np.kron(Xb, Si).T).T
            Hb = b.GT @ KG
            H[np.ix_(b.cols, b.cols)] += (Hb + Hb.T) / 2
        try:
            cf = sla.cho_factor(H, lower=True, check_finite=False)

            def solve(r):
                return sla.cho_solve(cf, r, check_finite=False)

        except (np.linalg.LinAlgError, ValueError):
            Hreg = H + np.eye(m) * 1e-14 * max(1.0, np.abs(np.diag(H)).max())
            try:
                cf = sla.cho_factor(Hreg, lower=True, check_finite=False)

                def solve(r):
                    return sla.cho_solve(cf, r, check_finite=False)

            except (np.linalg.LinAlgError, ValueError):
                lu = sla.lu_factor(Hreg, check_finite=False)

                def solve(r):
                    return sla.lu_solve(lu, r, check_finite=False)

        def direction(Rc):
            rhs = Rp - A_of(Rc)
            dy = solve(rhs)
            dS = [-(b.G @ dy[b.cols]).reshape(b.dim, b.dim) for b in blocks]
            dX = []
            for Rcb, Xb, dSb, Si in zip(Rc, X, dS, Sinv):
                D = Rcb - Xb @ dSb @ Si
                dX.append((D + D.T) / 2)
            return dy, dX, dS

        def steps(dX, dS):
            ap = min(_max_step(Xb, dXb) for Xb, dXb in zip(X, dX))
            ad = min(_max_step(Sb, dSb) for Sb, dSb in zip(S, dS))
            return ap, ad

        # predictor
        Rc = [-Xb for Xb in X]
        dy, dX, dS = direction(Rc)
        ap, ad = steps(dX, dS)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = (
            sum(float(np.sum((Xb + ap * dXb) * (Sb + ad * dSb))) for Xb, dXb, Sb, dSb in zip(X, dX, S, dS))
            / N
        )
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        # corrector
        Rc = [
            sigma * mu * Si - Xb - dXb @ dSb @ Si for Si, Xb, dXb, dSb in zip(Sinv, X, dX, dS)
        ]
        dy, dX, dS = direction(Rc)
        ap, ad = steps(dX, dS)
        ap, ad = min(1.0, 0.95 * ap), min(1.0, 0.95 * ad)
        if max(ap, ad) < 1e-10:
            msg = "step length collapsed"
            break
        X = [Xb + ap * dXb for Xb, dXb in zip(X, dX)]
        X = [(Xb + Xb.T) / 2 for Xb in X]
        y = y + ad * dy
        S = S_of(y)
        log.debug(
            "it=%d t=%.3e pobj=%.3e pinf=%.1e mu=%.1e ap=%.2f ad=%.2f",
            it, y[d], pobj, pinf, mu, ap, ad,
        )

    x = y[:d].copy()
    wm = eigen_margin(problem, x)
    return SolverReport(status, x, wm, it, time.perf_counter() - t0, float(y[d]), float(lower), msg)
