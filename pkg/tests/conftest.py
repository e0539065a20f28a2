import numpy as np
import pytest

from fuzzy_hinf.model import (
    DelaySpec,
    FuzzyFilter,
    Grade,
    MembershipSpec,
    RuleMatrices,
    TsDelayModel,
    example1_model,
    membership_product_bounds,
)


@pytest.fixture(scope="session")
def ex1():
    return example1_model()


@pytest.fixture(scope="session")
def ex1_bounds(ex1):
    return membership_product_bounds(ex1, -50.0, 50.0, 10001)


def scalar_model(a=-1.0, a_tau=0.0, b=0.0, c=1.0, c_tau=0.0, d=0.0, e=1.0, e_tau=0.0, h=0.5, rho=0.2):
    """Single-rule model with n = n_w = n_y = n_z = 1."""
    rule = RuleMatrices(
        [[a]], [[a_tau]], [[b]], [[c]], [[c_tau]], [[d]], [[e]], [[e_tau]]
    )
    return TsDelayModel(
        1, 1, 1, 1, [rule], DelaySpec(h, rho), MembershipSpec(0, [Grade("constant", [1.0])])
    )


def random_model(rng, n=2, p=2, n_w=1, n_y=1, n_z=1, stable=True):
    rules = []
    for _ in range(p):
        A = rng.standard_normal((n, n)) * 0.5
        if stable:
            A -= (np.abs(np.linalg.eigvals(A)).max() + 2.0) * np.eye(n)
        rules.append(
            RuleMatrices(
                A,
                rng.standard_normal((n, n)) * 0.2,
                rng.standard_normal((n, n_w)),
                rng.standard_normal((n_y, n)),
                rng.standard_normal((n_y, n)) * 0.2,
                rng.standard_normal((n_y, n_w)),
                rng.standard_normal((n_z, n)),
                rng.standard_normal((n_z, n)) * 0.2,
            )
        )
    grades = [Grade("gaussian", {"center": float(c), "width": 1.5}) for c in np.linspace(-2, 2, p)]
    return TsDelayModel(n, n_w, n_y, n_z, rules, DelaySpec(0.5, 0.2), MembershipSpec(0, grades))


def random_filter(rng, model, scale=1.0):
    n, p = model.n, model.p
    return FuzzyFilter(
        [rng.standard_normal((n, n)) * scale for _ in range(p)],
        [rng.standard_normal((n, model.n_y)) * scale for _ in range(p)],
        [rng.standard_normal((model.n_z, n)) * scale for _ in range(p)],
    )


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
