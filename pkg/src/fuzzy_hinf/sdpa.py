"""Sparse SDPA (``.dat-s``) export and import.

Blocks are written in SDPA's own convention ``sum_k x_k F_k - F_0 >= 0``,
so an external solver sees the non-strict version of the same problem.  A
``negdef`` block ``G(x) < 0`` is therefore emitted as ``-G(x) >= 0``.
Comment lines before the header record each block's original sense and
label plus the variable directory, which lets :func:`import_sdpa` restore
the problem exactly.  Files without those comments import as plain SDPA
problems whose blocks are all ``possemidef``.
"""

from __future__ import annotations

import re
from collections import defaultdict

import numpy as np
import scipy.sparse as sp

from .lmi import MatrixVariable
from .sdp import SdpBlock, SdpFeasibilityProblem

__all__ = ["SdpaParseError", "export_sdpa", "import_sdpa", "read_sdpa", "write_sdpa"]


class SdpaParseError(ValueError):
    """Malformed SDPA text; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def export_sdpa(problem: SdpFeasibilityProblem) -> str:
    """Render ``problem`` as sparse SDPA text with deterministic ordering."""
    lines = ['" fuzzy_hinf feasibility problem']
    for idx, b in enumerate(problem.blocks, 1):
        lines.append(f"* block {idx} {b.sense} {b.label}")
    for name, (off, var) in sorted(problem.directory.items(), key=lambda kv: kv[1][0]):
        lines.append(f"* var {name} {off} {var.rows} {var.cols} {var.structure}")
    lines.append(str(problem.d))
    lines.append(str(len(problem.blocks)))
    lines.append(" ".join(str(b.dim) for b in problem.blocks))
    lines.append(" ".join(["0"] * problem.d))

    for idx, b in enumerate(problem.blocks, 1):
        # SDPA: X = sum x_k F_k - F_0 >= 0
        sgn = -1.0 if b.sense == "negdef" else 1.0
        F0 = -sgn * b.F0
        rows, cols = np.triu_indices(b.dim)
        entries = []
        for i, j in zip(rows, cols):
            v = F0[i, j]
            if v != 0.0:
                entries.append((0, i, j, v))
        C = b.coeffs.tocoo()
        # coefficient entries are symmetric by construction; keep the upper triangle
        by_k = defaultdict(list)
        for flat, k, v in zip(C.row, C.col, C.data):
            i, j = divmod(int(flat), b.dim)
            if i <= j and v != 0.0:
                by_k[int(k)].append((i, j, sgn * v))
        for k in sorted(by_k):
            for i, j, v in sorted(by_k[k]):
                entries.append((k + 1, i, j, v))
        entries.sort(key=lambda e: (e[0], e[1], e[2]))
        for k, i, j, v in entries:
            lines.append(f"{k} {idx} {i + 1} {j + 1} {_fmt(v)}")
    return "\n".join(lines) + "\n"


_SEP = re.compile(r"[,{}()]")


def _ints(text: str, lineno: int, what: str) -> list[int]:
    try:
        return [int(tok) for tok in _SEP.sub(" ", text).split()]
    except ValueError:
        raise SdpaParseError(lineno, f"expected integers for {what}, got {text.strip()!r}") from None


def import_sdpa(text: str) -> SdpFeasibilityProblem:
    """Parse sparse SDPA text back into a feasibility problem.

    Raises
    ------
    SdpaParseError
        On malformed or truncated input, naming the offending line.
    """
    meta_blocks: dict[int, tuple[str, str]] = {}
    meta_vars: list[tuple[str, int, int, int, str]] = []
    header: list[tuple[int, str]] = []
    body: list[tuple[int, str]] = []
    raw = text.splitlines()
    for lineno, line in enumerate(raw, 1):
        s = line.strip()
        if not s:
            continue
        if s[0] in '"*':
            parts = s[1:].split(None, 3)
            if len(parts) >= 3 and parts[0] == "block":
                try:
                    meta_blocks[int(parts[1])] = (parts[2], parts[3] if len(parts) > 3 else "")
                except ValueError:
                    raise SdpaParseError(lineno, "bad block comment") from None
            elif parts and parts[0] == "var":
                f = s[1:].split()
                if len(f) != 6:
                    raise SdpaParseError(lineno, "bad variable comment")
                try:
                    meta_vars.append((f[1], int(f[2]), int(f[3]), int(f[4]), f[5]))
                except ValueError:
                    raise SdpaParseError(lineno, "bad variable comment") from None
            continue
        if len(header) < 4:
            header.append((lineno, s))
        else:
            body.append((lineno, s))

    last = len(raw)
    if len(header) < 3:
        raise SdpaParseError(last + 1, "truncated header (need mDIM, nBLOCK, block structure)")
    (l1, s1), (l2, s2), (l3, s3) = header[:3]
    d = _ints(s1, l1, "mDIM")
    nb = _ints(s2, l2, "nBLOCK")
    if len(d) < 1 or d[0] < 0:
        raise SdpaParseError(l1, "mDIM must be a nonnegative integer")
    if len(nb) < 1 or nb[0] < 1:
        raise SdpaParseError(l2, "nBLOCK must be a positive integer")
    d, nb = d[0], nb[0]
    struct = _ints(s3, l3, "block structure")
    if len(struct) != nb or any(v == 0 for v in struct):
        raise SdpaParseError(l3, f"expected {nb} nonzero block sizes, got {s3!r}")
    if len(header) < 4:
        raise SdpaParseError(last + 1, "truncated header (missing objective vector)")
    l4, s4 = header[3]
    try:
        cvec = [float(tok) for tok in _SEP.sub(" ", s4).split()]
    except ValueError:
        raise SdpaParseError(l4, "objective vector must be numeric") from None
    if len(cvec) != d:
        raise SdpaParseError(l4, f"objective vector has {len(cvec)} entries, expected {d}")

    dims = [abs(v) for v in struct]
    diag = [v < 0 for v in struct]
    F0 = [np.zeros((m, m)) for m in dims]
    trip = [([], [], []) for _ in dims]
    for lineno, s in body:
        f = s.split()
        if len(f) != 5:
            raise SdpaParseError(lineno, f"expected 5 fields 'k block i j value', got {len(f)}")
        try:
            k, blk, i, j = (int(t) for t in f[:4])
            v = float(f[4])
        except ValueError:
            raise SdpaParseError(lineno, "malformed entry") from None
        if not 0 <= k <= d:
            raise SdpaParseError(lineno, f"matrix index {k} outside 0..{d}")
        if not 1 <= blk <= nb:
            raise SdpaParseError(lineno, f"block index {blk} outside 1..{nb}")
        m = dims[blk - 1]
        if not (1 <= i <= m and 1 <= j <= m):
            raise SdpaParseError(lineno, f"entry ({i},{j}) outside block {blk} of size {m}")
        if diag[blk - 1] and i != j:
            raise SdpaParseError(lineno, f"off-diagonal entry in diagonal block {blk}")
        if not np.isfinite(v):
            raise SdpaParseError(lineno, "non-finite value")
        i, j = i - 1, j - 1
        if k == 0:
            F0[blk - 1][i, j] = v
            F0[blk - 1][j, i] = v
        else:
            r, c, x = trip[blk - 1]
            r.append(i * m + j)
            c.append(k - 1)
            x.append(v)
            if i != j:
                r.append(j * m + i)
                c.append(k - 1)
                x.append(v)

    blocks = []
    for idx, m in enumerate(dims, 1):
        sense, label = meta_blocks.get(idx, ("possemidef", f"block{idx}"))
        if sense not in ("negdef", "possemidef"):
            raise SdpaParseError(1, f"unknown sense {sense!r} for block {idx}")
        sgn = -1.0 if sense == "negdef" else 1.0
        r, c, x = trip[idx - 1]
        coeffs = sp.csc_matrix((np.asarray(x) * sgn, (r, c)), shape=(m * m, d))
        coeffs.sum_duplicates()
        # X = sum x F - F0  ->  native constant is -sgn * F0_sdpa
        blocks.append(SdpBlock(m, -sgn * F0[idx - 1], coeffs, sense, label))

    directory = {}
    for name, off, rows, cols, structure in meta_vars:
        var = MatrixVariable(name, rows, cols, structure)
        directory[name] = (off, var)
    return SdpFeasibilityProblem(d, tuple(blocks), directory, {})


def write_sdpa(problem: SdpFeasibilityProblem, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(export_sdpa(problem))


def read_sdpa(path) -> SdpFeasibilityProblem:
    with open(path, encoding="ascii") as fh:
        return import_sdpa(fh.read())
