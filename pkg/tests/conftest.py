import numpy as np
import pytest

from textimpact.data import Experiment


def make_experiment(N=40, p_feat=3, seed=0, coded_frac=None, tau=0.0, covariates=False):
    """Small fully scored experiment with a linear signal; optionally subsample codes."""
    rng = np.random.default_rng(seed)
    arm = np.zeros(N, dtype=int)
    arm[rng.permutation(N)[: N // 2]] = 1
    X = rng.standard_normal((N, p_feat))
    y = X @ np.linspace(1.0, 0.2, p_feat) + 0.5 * rng.standard_normal(N) + tau * arm
    kw = {}
    if covariates:
        kw = {"covariates": rng.standard_normal((N, 1)), "covariate_names": ("pretest",)}
        y = y + 0.5 * kw["covariates"][:, 0]
    exp = Experiment.build(arm, X, y, **kw)
    if coded_frac is not None:
        from textimpact.data import select_coding_sample

        n1 = int(round(coded_frac * exp.N1))
        n0 = int(round(coded_frac * exp.N0))
        exp = select_coding_sample(exp, n1, n0, seed)
    return exp


@pytest.fixture
def small_exp():
    return make_experiment()


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
