import numpy as np
import pytest

from ctqlearn.basis import example2_basis, quadratic_basis
from ctqlearn.dynamics import QuadraticCost, example2_model, f16_model
from ctqlearn.learner import LearnerConfig, evaluate_policy, run_piql, run_viql
from ctqlearn.sampling import collect_samples

# Interval that reproduces the published parameter vectors (see README).
PAPER_DT = 0.025
F16_BOX = (([-1.0] * 3, [1.0] * 3), ([-1.0], [1.0]))
EX2_BOX = (([-1.0] * 2, [1.0] * 2), ([-1.0], [1.0]))


@pytest.fixture(scope="session")
def f16():
    return f16_model()


@pytest.fixture(scope="session")
def f16_cost():
    return QuadraticCost.identity(3, 1)


@pytest.fixture(scope="session")
def f16_data(f16, f16_cost):
    return collect_samples(f16, f16_cost, *F16_BOX, M=100, delta_t=PAPER_DT, seed=1)


@pytest.fixture(scope="session")
def f16_piql(f16_data):
    return run_piql(f16_data, quadratic_basis(3, 1), LearnerConfig())


@pytest.fixture(scope="session")
def f16_viql(f16_data):
    return run_viql(f16_data, quadratic_basis(3, 1), LearnerConfig())


@pytest.fixture(scope="session")
def ex2():
    return example2_model()


@pytest.fixture(scope="session")
def ex2_cost():
    return QuadraticCost.identity(2, 1)


@pytest.fixture(scope="session")
def ex2_data(ex2, ex2_cost):
    return collect_samples(ex2, ex2_cost, *EX2_BOX, M=100, delta_t=PAPER_DT, seed=1)


@pytest.fixture(scope="session")
def ex2_piql(ex2_data):
    return run_piql(ex2_data, example2_basis(), LearnerConfig())


@pytest.fixture(scope="session")
def ex2_viql(ex2_data):
    return run_viql(ex2_data, example2_basis(), LearnerConfig())


def stable_policy_start(samples, basis):
    """Q-function of the zero policy (a stable policy for both built-in systems)."""
    from ctqlearn.basis import GainMatrix
    return evaluate_policy(samples, basis, GainMatrix.zero(basis.n, basis.m))


def domain_points(n, m, count=1000, seed=12345):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, (count, n)), rng.uniform(-1, 1, (count, m))


def exact_linear_samples(A, B, S, W, M, delta_t, seed=0, box=1.0):
    """Samples of a linear system built from matrix exponentials and exact cost integrals."""
    from ctqlearn.lqr_oracle import optimal_q_matrix, transition_matrices
    from ctqlearn.sampling import SampleSet
    A, B = np.atleast_2d(A).astype(float), np.asarray(B, dtype=float)
    n = A.shape[0]
    B = B.reshape(n, -1)
    m = B.shape[1]
    stage = optimal_q_matrix(A, B, S, W, np.zeros((n, n)), delta_t).G
    E, F = transition_matrices(A, B, delta_t)
    XU = np.random.default_rng(seed).uniform(-box, box, (M, n + m))
    X, U = XU[:, :n], XU[:, n:]
    pi = np.einsum("ki,ij,kj->k", XU, stage, XU)
    return SampleSet(X, U, X @ E.T + U @ F.T, pi, delta_t, ([-box] * n, [box] * n),
                     ([-box] * m, [box] * m), seed=seed, model="linear-exact")


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines[criterion] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
