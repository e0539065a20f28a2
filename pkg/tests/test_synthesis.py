import json

import numpy as np
import pytest

from fuzzy_hinf.lmi import build_lemma2_analysis
from fuzzy_hinf.model import FuzzyFilter, ModelError
from fuzzy_hinf.sdp import canonicalize, eigen_margin
from fuzzy_hinf.synthesis import (
    BracketError,
    IllConditionedError,
    SynthesisSettings,
    build_problem,
    certify_filter,
    gamma_min,
    load_filter,
    recover_filter,
    save_filter,
    synthesize,
)

from conftest import scalar_model

cvxopt = pytest.importorskip("cvxopt")
from test_sdp import _cvxopt_tstar  # noqa: E402


@pytest.fixture(scope="module")
def thm1_result(ex1):
    res = synthesize(ex1, h=0.5, rho=0.2, omega=2.0, gamma=0.3, theorem=1, delay_rate_mode="plain")
    assert res.feasible
    return res


@pytest.fixture(scope="module")
def thm2_result(ex1, ex1_bounds):
    res = synthesize(ex1, h=0.5, rho=0.2, omega=2.0, gamma=0.3, theorem=2, bounds=ex1_bounds)
    assert res.feasible
    return res


# --- recovery ----------------------------------------------------------------------


def test_recover_filter_inverts_change_of_variables():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((2, 2))
    P22 = G @ G.T + np.eye(2)
    A, B, C = rng.standard_normal((2, 2)), rng.standard_normal((2, 1)), rng.standard_normal((1, 2))
    filt = recover_filter({"P22": P22, "Acal1": P22 @ A, "Bcal1": P22 @ B, "Ccal1": C}, 1)
    assert np.allclose(filt.A_hat[0], A) and np.allclose(filt.B_hat[0], B)
    assert np.array_equal(filt.C_hat[0], C)


def test_recover_filter_rejects_singular_P22():
    P22 = np.diag([1.0, 1e-12])
    z = np.zeros((2, 2))
    with pytest.raises(IllConditionedError):
        recover_filter({"P22": P22, "Acal1": z, "Bcal1": np.zeros((2, 1)), "Ccal1": np.zeros((1, 2))}, 1)


def _analysis_margin(ex1, res, bounds=None):
    s = res.settings
    prob = canonicalize(
        build_lemma2_analysis(ex1, res.filter, s.h, s.rho, s.omega, res.gamma, s.delay_rate_mode, bounds)
    )
    vals = {"P": res.Ptilde, "Y": res.certificate["Y"], "Z": res.certificate["Z"]}
    vals.update({k: v for k, v in res.certificate.items() if k.startswith(("J", "K"))})
    return eigen_margin(prob, prob.vector(vals))


def test_certificate_proves_recovered_filter_thm1(ex1, thm1_result):
    assert _analysis_margin(ex1, thm1_result) < 0


def test_certificate_proves_recovered_filter_thm2(ex1, ex1_bounds, thm2_result):
    assert _analysis_margin(ex1, thm2_result, ex1_bounds) < 0


def test_lyapunov_weights_positive(thm1_result):
    for M in thm1_result.lyapunov_weights().values():
        assert np.linalg.eigvalsh(M).min() > 0


def test_synthesis_answer_agrees_with_cvxopt(ex1):
    s = SynthesisSettings(0.5, 0.2, 2.0, 1, "plain", "full", 1e-6, None)
    for gamma, expect in ((0.5, True), (0.1, False)):
        res = synthesize(ex1, h=0.5, rho=0.2, omega=2.0, gamma=gamma, theorem=1, delay_rate_mode="plain")
        tstar = _cvxopt_tstar(canonicalize(build_problem(ex1, gamma, s)))
        assert res.feasible is expect
        assert (tstar < 0) is expect


# --- bisection -----------------------------------------------------------------------


def test_feasibility_monotone_in_gamma():
    model = scalar_model(a=-2.0, a_tau=-0.3, b=1.0, c=1.0, d=0.2, h=0.5, rho=0.2)
    answers = [synthesize(model, gamma=g, theorem=1).feasible for g in (0.05, 0.1, 0.2, 0.4, 0.8, 1.6)]
    first = answers.index(True)
    assert all(answers[first:])


def test_gamma_min_scalar_bracketing():
    model = scalar_model(a=-2.0, a_tau=-0.3, b=1.0, c=1.0, d=0.2, h=0.5, rho=0.2)
    g, res, log = gamma_min(model, theorem=1, tol=1e-3, bracket=(0.01, 2.0))
    assert log.monotone() and log.gamma_star == g
    assert res.feasible and res.gamma == g
    assert not synthesize(model, gamma=g - 2e-3, theorem=1).feasible
    assert g - log.steps[-1].gamma <= 1e-3 or log.steps[-1].gamma == g


def test_gamma_min_upper_end_infeasible():
    # y carries no state information, so gamma* is at least the open-loop gain 1/2
    model = scalar_model(a=-2.0, b=1.0, c=0.0, d=0.0, h=0.5)
    with pytest.raises(BracketError) as exc:
        gamma_min(model, theorem=1, bracket=(1e-3, 1e-2))
    assert exc.value.search_log.steps[0].status != "feasible"


@pytest.mark.parametrize("bracket", [(0.0, 1.0), (2.0, 1.0), (-1.0, 1.0)])
def test_gamma_min_degenerate_bracket(bracket):
    with pytest.raises(ValueError):
        gamma_min(scalar_model(), theorem=1, bracket=bracket)


def test_gamma_min_zero_width_bracket():
    model = scalar_model(a=-2.0, b=1.0, d=0.2, h=0.5)
    g, res, log = gamma_min(model, theorem=1, bracket=(5.0, 5.0))
    assert g == 5.0 and len(log.steps) == 1


# --- analysis ------------------------------------------------------------------------


def _silent_filter(model):
    """No estimate (zero output) with a stable internal state."""
    zero = FuzzyFilter.zeros(model)
    A = tuple(-np.eye(model.n) for _ in range(model.p))
    return FuzzyFilter(A, zero.B_hat, zero.C_hat)


def test_certify_silent_filter(ex1):
    filt = _silent_filter(ex1)
    assert certify_filter(ex1, filt, 0.5, 0.2, 2.0, 1000.0).feasible
    assert not certify_filter(ex1, filt, 0.5, 0.2, 2.0, 0.01).feasible


def test_all_zero_filter_has_no_strict_certificate(ex1):
    # A_hat = 0 leaves the filter state marginally stable, so no gamma can be certified
    out = certify_filter(ex1, FuzzyFilter.zeros(ex1), 0.5, 0.2, 2.0, 1000.0)
    assert not out.feasible
    assert abs(out.report.t) < 1e-6


def test_certify_synthesized_filter_slightly_above(ex1, thm1_result):
    s = thm1_result.settings
    out = certify_filter(ex1, thm1_result.filter, s.h, s.rho, s.omega, 0.31, s.delay_rate_mode)
    assert out.feasible and out.report.worst_margin < 0


def test_theorem2_requires_bounds(ex1):
    s = SynthesisSettings(0.5, 0.2, 2.0, 2, "rho", "full", 1e-6, None)
    with pytest.raises(ModelError):
        build_problem(ex1, 1.0, s)


# --- files ---------------------------------------------------------------------------


def test_filter_file_round_trip(tmp_path, thm2_result):
    path = tmp_path / "f.json"
    save_filter(thm2_result, path)
    back = load_filter(path)
    assert back.gamma == thm2_result.gamma
    for a, b in zip(back.filter.A_hat + back.filter.B_hat + back.filter.C_hat,
                    thm2_result.filter.A_hat + thm2_result.filter.B_hat + thm2_result.filter.C_hat):
        assert np.array_equal(a, b)
    assert np.array_equal(back.Ptilde, thm2_result.Ptilde)
    assert back.settings.to_dict() == thm2_result.settings.to_dict()
    path2 = tmp_path / "g.json"
    save_filter(back, path2)
    assert json.loads(path2.read_text())["A_hat"] == json.loads(path.read_text())["A_hat"]


def test_load_filter_missing_field(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"A_hat": [[[0.0]]], "B_hat": [[[0.0]]], "C_hat": [[[0.0]]]}))
    with pytest.raises(ModelError):
        load_filter(path)


def test_settings_round_trip(ex1_bounds):
    s = SynthesisSettings(0.6, 0.1, 5.0, 2, "plain", "full", 1e-6, ex1_bounds)
    back = SynthesisSettings.from_dict(json.loads(json.dumps(s.to_dict())))
    assert back.to_dict() == s.to_dict()
