import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from fuzzy_hinf.lmi import AffineBlockExpr, LinExpr, LmiProblem, MatrixVariable
from fuzzy_hinf.lmi import build_theorem1, build_theorem2
from fuzzy_hinf.sdp import (
    SdpBlock,
    SdpFeasibilityProblem,
    canonicalize,
    eigen_margin,
    solve_feasibility,
)
from fuzzy_hinf.sdpa import SdpaParseError, export_sdpa, import_sdpa

cvxopt = pytest.importorskip("cvxopt")


def _scalar_problem(F0, Fs, sense="negdef"):
    dim = F0.shape[0]
    cols = np.stack([F.ravel() for F in Fs], axis=1) if Fs else np.zeros((dim * dim, 0))
    blk = SdpBlock(dim, F0, sp.csc_matrix(cols), sense, "b")
    return SdpFeasibilityProblem(len(Fs), (blk,))


def _random_problem(rng, d=3, dims=(3, 4)):
    blocks = []
    for k, m in enumerate(dims):
        G = rng.standard_normal((m, m))
        F0 = (G + G.T) / 2
        Fs = []
        for _ in range(d):
            H = rng.standard_normal((m, m))
            Fs.append((H + H.T) / 2)
        cols = np.stack([F.ravel() for F in Fs], axis=1)
        sense = "negdef" if k % 2 == 0 else "possemidef"
        blocks.append(SdpBlock(m, F0, sp.csc_matrix(cols), sense, f"b{k}"))
    return SdpFeasibilityProblem(d, tuple(blocks))


def _cvxopt_tstar(prob, floor=-1.0):
    """min t with every block shifted by t, solved by cvxopt (independent oracle)."""
    d = prob.d
    c = cvxopt.matrix([0.0] * d + [1.0])
    Gs, hs = [], []
    for b in prob.blocks:
        sgn = 1.0 if b.sense == "negdef" else -1.0
        cols = sgn * b.coeffs.toarray()
        G = np.hstack([cols, -np.eye(b.dim).reshape(-1, 1)])
        Gs.append(cvxopt.matrix(G))
        hs.append(cvxopt.matrix(-sgn * b.F0))
    Gl = np.zeros((1, d + 1))
    Gl[0, d] = -1.0
    cvxopt.solvers.options["show_progress"] = False
    sol = cvxopt.solvers.sdp(
        c, Gl=cvxopt.matrix(Gl), hl=cvxopt.matrix([-floor]), Gs=Gs, hs=hs
    )
    return float(sol["x"][d])


# --- canonicalization -----------------------------------------------------------


def test_symmetric_variable_triangle_count():
    S = MatrixVariable("S", 2, 2, "symmetric")
    prob = LmiProblem([S], [AffineBlockExpr(LinExpr.of(S), "s")])
    assert canonicalize(prob).d == 3


def test_canonical_values_round_trip():
    S = MatrixVariable("S", 3, 3, "symmetric")
    V = MatrixVariable("V", 2, 3)
    prob = LmiProblem([S, V], [AffineBlockExpr(LinExpr.of(S), "s")])
    cp = canonicalize(prob)
    rng = np.random.default_rng(0)
    vals = prob.random_assignment(rng)
    back = cp.values(cp.vector(vals))
    assert all(np.array_equal(back[k], vals[k]) for k in vals)


@pytest.mark.parametrize("which", ["thm1", "thm2"])
def test_evaluation_equivalence(ex1, ex1_bounds, which):
    if which == "thm1":
        prob = build_theorem1(ex1, 0.5, 0.2, 2.0, 0.17)
    else:
        prob = build_theorem2(ex1, 0.5, 0.2, 2.0, 0.17, ex1_bounds)
    cp = canonicalize(prob)
    rng = np.random.default_rng(1)
    blocks = prob.negdef_blocks + prob.possemidef_blocks
    for _ in range(100):
        vals = prob.random_assignment(rng)
        x = cp.vector(vals)
        for src, F in zip(blocks, cp.evaluate(x)):
            ref = src.evaluate(vals)
            assert np.abs(F - ref).max() <= 1e-12 * max(1.0, np.abs(ref).max())


def test_canonical_senses_preserved(ex1):
    cp = canonicalize(build_theorem1(ex1, 0.5, 0.2, 2.0, 0.17))
    assert [b.sense for b in cp.blocks] == ["negdef"] * 3 + ["possemidef"] * 3
    assert cp.d == 42


# --- solver ----------------------------------------------------------------------


def test_scalar_shift_feasible():
    prob = _scalar_problem(-np.eye(2), [np.eye(2)])
    rep = solve_feasibility(prob)
    assert rep.status == "feasible"
    assert rep.worst_margin < 0
    assert eigen_margin(prob, rep.x) < -1e-7 / 2


def test_constant_positive_block_infeasible():
    prob = _scalar_problem(np.eye(2), [np.zeros((2, 2))])
    assert eigen_margin(prob, np.zeros(1)) == pytest.approx(1.0)
    rep = solve_feasibility(prob)
    assert rep.status == "infeasible"
    assert rep.lower_bound > 0.5


def test_eigen_margin_length_check():
    prob = _scalar_problem(np.eye(2), [np.zeros((2, 2))])
    with pytest.raises(ValueError):
        eigen_margin(prob, np.zeros(3))


def test_bad_eps_rejected():
    prob = _scalar_problem(np.eye(2), [np.zeros((2, 2))])
    with pytest.raises(ValueError):
        solve_feasibility(prob, eps=0.0)


def test_agrees_with_cvxopt_on_random_problems():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(40):
        prob = _random_problem(rng)
        t_ref = _cvxopt_tstar(prob)
        if abs(t_ref) < 1e-3:
            continue
        rep = solve_feasibility(prob)
        expect = "feasible" if t_ref < 0 else "infeasible"
        assert rep.status == expect, (t_ref, rep)
        if rep.status == "infeasible":
            assert rep.lower_bound == pytest.approx(t_ref, abs=1e-5)
        checked += 1
    assert checked >= 30


def test_phase_one_value_matches_cvxopt_on_example(ex1):
    prob = canonicalize(build_theorem1(ex1, 0.5, 0.2, 2.0, 0.2))
    rep = solve_feasibility(prob)
    t_ref = _cvxopt_tstar(prob)
    assert rep.status == "infeasible" and t_ref > 0
    assert rep.lower_bound == pytest.approx(t_ref, rel=1e-4)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_certificate_soundness_and_eps_monotonicity(seed):
    prob = _random_problem(np.random.default_rng(seed))
    rep = solve_feasibility(prob, eps=1e-7)
    if rep.status == "feasible":
        assert eigen_margin(prob, rep.x) < -1e-7 / 2
        assert solve_feasibility(prob, eps=1e-9).status == "feasible"


def test_determinism(ex1):
    prob = canonicalize(build_theorem1(ex1, 0.5, 0.2, 2.0, 0.3))
    a, b = solve_feasibility(prob), solve_feasibility(prob)
    assert a.status == b.status == "feasible"
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations


def test_margin_continuity_on_example(ex1):
    prob = canonicalize(build_theorem1(ex1, 0.5, 0.2, 2.0, 0.3))
    rep = solve_feasibility(prob)
    rng = np.random.default_rng(3)
    dx = rng.standard_normal(prob.d)
    dx *= 1e-9 / np.linalg.norm(dx)
    assert abs(eigen_margin(prob, rep.x + dx) - rep.worst_margin) < 1e-6


# --- SDPA -------------------------------------------------------------------------


def test_sdpa_minimal_header():
    prob = _scalar_problem(np.array([[2.0]]), [np.array([[1.0]])], "possemidef")
    text = export_sdpa(prob)
    data = [ln for ln in text.splitlines() if ln[0] not in '"*']
    assert data[:3] == ["1", "1", "1"]
    assert data[3] == "0"
    assert sorted(data[4:]) == ["0 1 1 1 -2", "1 1 1 1 1"]


@pytest.mark.parametrize("which", ["thm1", "thm2"])
def test_sdpa_round_trip(ex1, ex1_bounds, which):
    if which == "thm1":
        prob = build_theorem1(ex1, 0.5, 0.2, 2.0, 0.17)
    else:
        prob = build_theorem2(ex1, 0.5, 0.2, 2.0, 0.17, ex1_bounds)
    cp = canonicalize(prob)
    text = export_sdpa(cp)
    back = import_sdpa(text)
    assert back.d == cp.d
    assert [b.sense for b in back.blocks] == [b.sense for b in cp.blocks]
    assert [b.label for b in back.blocks] == [b.label for b in cp.blocks]
    assert export_sdpa(back) == text
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = rng.standard_normal(cp.d)
        for a, b in zip(cp.evaluate(x), back.evaluate(x)):
            assert np.abs(a - b).max() < 1e-12


def test_sdpa_plain_file_and_diagonal_blocks():
    text = "\n".join(
        [
            "2 =mdim",
            "2",
            "{2, -2}",
            "0 0",
            "0 1 1 1 1.0",
            "1 1 1 2 1.0",
            "2 2 1 1 1.0",
            "2 2 2 2 -1.0",
        ]
    )
    prob = import_sdpa(text.replace(" =mdim", ""))
    assert [b.dim for b in prob.blocks] == [2, 2]
    assert all(b.sense == "possemidef" for b in prob.blocks)
    F1, F2 = prob.evaluate(np.array([3.0, 5.0]))
    assert np.allclose(F1, [[-1.0, 3.0], [3.0, 0.0]])
    assert np.allclose(F2, np.diag([5.0, -5.0]))


@pytest.mark.parametrize(
    "text,line",
    [
        ("1\n1\n", 3),
        ("1\n1\n1\n0\n0 1 1\n", 5),
        ("1\n1\n1\n0\n0 1 2 1 1.0\n", 5),
        ("1\n2\n1\n0\n", 3),
        ("1\n1\nx\n0\n", 3),
        ("1\n1\n-2\n0\n1 1 1 2 1.0\n", 5),
        ("1\n1\n1\n0\n3 1 1 1 1.0\n", 5),
    ],
)
def test_sdpa_parse_errors_name_line(text, line):
    with pytest.raises(SdpaParseError) as err:
        import_sdpa(text)
    assert err.value.lineno == line
    assert f"line {line}" in str(err.value)


def test_sdpa_truncated_export(ex1):
    text = export_sdpa(canonicalize(build_theorem1(ex1, 0.5, 0.2, 2.0, 0.17)))
    lines = text.splitlines()
    cut = [ln for ln in lines if ln[0] not in '"*']
    n_comment = len(lines) - len(cut)
    broken = "\n".join(lines[: n_comment + 2]) + "\n"
    with pytest.raises(SdpaParseError, match="truncated"):
        import_sdpa(broken)
    partial = "\n".join(lines[:-1]) + "\n0 1 3"
    with pytest.raises(SdpaParseError) as err:
        import_sdpa(partial)
    assert err.value.lineno == len(lines)
