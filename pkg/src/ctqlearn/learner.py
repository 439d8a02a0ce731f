"""Policy-iteration and value-iteration Q-learning over a fixed offline dataset.

Policy evaluation uses the method of weighted residuals with Galerkin weights
(the weight functions are the basis functions themselves evaluated at the
sample's (x, mu)). The Monte-Carlo volume factor multiplies both sides of the
projected equations and is dropped.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSet, GainMatrix, QApprox, eval_basis, gain_from_theta
from .errors import NumericalError, SingularSystemError, UnsupportedBasisError

log = logging.getLogger(__name__)

ORTHOGONALITY_TOL = 1e-8


@dataclass
class LearnerConfig:
    xi: float = 1e-5
    max_iterations: int = 5000
    svd_tolerance: float = 1e-10
    initial_policy: object = None   # callable on (M, n) batches; None means zero action
    initial_theta: object = None    # array of length L; None means 0.01 (|x|^2 + |mu|^2)

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError(f"xi must be positive, got {self.xi}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not 0 < self.svd_tolerance < 1:
            raise ValueError(f"svd_tolerance must lie in (0, 1), got {self.svd_tolerance}")


@dataclass
class IterationRecord:
    index: int
    theta: np.ndarray
    theta_delta: float
    gain: GainMatrix | None
    bellman_rms: float
    orthogonality: float


@dataclass
class IterationTrace:
    algorithm: str
    basis: BasisSet
    records: list = field(default_factory=list)
    status: str = "running"
    message: str = ""

    @property
    def iterations(self):
        return self.records[-1].index if self.records else 0

    @property
    def theta(self):
        return self.records[-1].theta

    @property
    def gain(self):
        return self.records[-1].gain

    @property
    def converged(self):
        return self.status == "converged"

    def q(self, i=-1):
        return QApprox(self.basis, self.records[i].theta)


def _policy_actions(policy, X, m):
    U = np.asarray(policy(X), dtype=float)
    if U.ndim == 1:
        U = U.reshape(X.shape[0], m)
    if U.shape != (X.shape[0], m):
        raise ValueError(f"policy returned shape {U.shape}, expected {(X.shape[0], m)}")
    return U


def piql_regression_matrices(samples, basis: BasisSet, policy):
    """``(W, Z, eta)`` for evaluating ``policy``: ``Z_k = Psi(x_k, mu_k) - Psi(x'_k, u(x'_k))``."""
    Psi = eval_basis(basis, samples.X, samples.U)
    Psi_next = eval_basis(basis, samples.X_next, _policy_actions(policy, samples.X_next, basis.m))
    return Psi, Psi - Psi_next, np.array(samples.pi)


def viql_regression_matrices(samples, basis: BasisSet, theta_prev):
    """``(W, Z, rhs)`` for one value-iteration backup of ``theta_prev``.

    The target is ``pi_k + Q_prev(x'_k, greedy_prev(x'_k))``.
    """
    theta_prev = np.asarray(theta_prev, dtype=float)
    Psi = eval_basis(basis, samples.X, samples.U)
    if not np.any(theta_prev):
        carry = np.zeros(samples.M)
    else:
        policy = gain_from_theta(QApprox(basis, theta_prev))
        carry = eval_basis(basis, samples.X_next, policy(samples.X_next)) @ theta_prev
    return Psi, Psi, samples.pi + carry


def _weighted_solve(Wmat, Zmat, target, svd_tolerance):
    lhs = Wmat.T @ Zmat
    rhs = Wmat.T @ target
    U, s, Vt = np.linalg.svd(lhs)
    if s[0] == 0 or s[-1] < svd_tolerance * s[0]:
        raise SingularSystemError(
            f"weighted residual system is rank deficient (singular values {s[-1]:.3g} / "
            f"{s[0]:.3g} below {svd_tolerance:g}); collect more samples or excite more directions")
    theta = Vt.T @ ((U.T @ rhs) / s)
    return theta


def orthogonality_residual(Wmat, Zmat, target, theta):
    """``|W^T (Z theta - target)| / |W^T target|``."""
    num = np.linalg.norm(Wmat.T @ (Zmat @ theta - target))
    den = np.linalg.norm(Wmat.T @ target)
    return num / den if den > 0 else num


def piql_update(Wmat, Zmat, eta, svd_tolerance=1e-10):
    """Solve ``(W^T Z) theta = W^T eta`` through an SVD with a relative cutoff."""
    return _weighted_solve(Wmat, Zmat, eta, svd_tolerance)


def viql_update(Wmat, Zmat, rhs, svd_tolerance=1e-10):
    return _weighted_solve(Wmat, Zmat, rhs, svd_tolerance)


def evaluate_policy(samples, basis, policy, svd_tolerance=1e-10):
    """One policy-evaluation solve; the theta of the Q-function of ``policy``."""
    return piql_update(*piql_regression_matrices(samples, basis, policy), svd_tolerance)


def bellman_residual(samples, basis, theta, policy):
    """RMS of ``Psi(x, mu)^T theta - Psi(x', u(x'))^T theta - pi`` over ``samples``."""
    theta = np.asarray(theta, dtype=float)
    _, Z, eta = piql_regression_matrices(samples, basis, policy)
    return float(np.sqrt(np.mean((Z @ theta - eta) ** 2)))


def default_initial_theta(basis: BasisSet, scale=0.01):
    """theta for ``scale * (|x|^2 + |mu|^2)``; needs every pure square in the basis."""
    theta = np.zeros(basis.L)
    p = basis.n + basis.m
    for k in range(p):
        t = tuple(2 if i == k else 0 for i in range(p))
        if t not in basis.terms:
            raise UnsupportedBasisError(
                "default VIQL start needs every squared coordinate in the basis; pass initial_theta")
        theta[basis.terms.index(t)] = scale
    return theta


def _record(trace, i, theta, prev, gain, rms, orth):
    delta = float("nan") if prev is None else float(np.linalg.norm(theta - prev))
    trace.records.append(IterationRecord(i, theta, delta, gain, rms, orth))
    return delta


def run_piql(samples, basis: BasisSet, config: LearnerConfig | None = None, heldout=None):
    """Alternate weighted-residual policy evaluation with closed-form improvement.

    Iteration ``i`` evaluates policy ``u_i`` (``u_0`` from the config) to get
    ``theta_i``; the run stops once ``|theta_i - theta_{i-1}| <= xi``.
    """
    config = config or LearnerConfig()
    trace = IterationTrace("piql", basis)
    policy = config.initial_policy or GainMatrix.zero(basis.n, basis.m)
    diag = heldout if heldout is not None else samples
    prev = None
    for i in range(config.max_iterations + 1):
        try:
            W, Z, eta = piql_regression_matrices(samples, basis, policy)
            theta = piql_update(W, Z, eta, config.svd_tolerance)
            orth = orthogonality_residual(W, Z, eta, theta)
            rms = bellman_residual(diag, basis, theta, policy)
            gain = gain_from_theta(QApprox(basis, theta))
        except NumericalError as exc:
            trace.status, trace.message = "error", f"iteration {i}: {exc}"
            log.warning("PIQL stopped: %s", trace.message)
            return trace
        delta = _record(trace, i, theta, prev, gain, rms, orth)
        log.debug("piql i=%d delta=%.3e rms=%.3e", i, delta, rms)
        if prev is not None and delta <= config.xi:
            trace.status = "converged"
            return trace
        prev, policy = theta, gain
    trace.status = "max_iterations"
    return trace


def run_viql(samples, basis: BasisSet, config: LearnerConfig | None = None, heldout=None):
    """Value iteration: greedy policy from ``theta_{i-1}``, then one projected backup.

    Record 0 holds the initial theta. The run stops once
    ``|theta_i - theta_{i-1}| <= xi`` for some ``i >= 1``.
    """
    config = config or LearnerConfig()
    trace = IterationTrace("viql", basis)
    diag = heldout if heldout is not None else samples
    theta0 = config.initial_theta
    theta = default_initial_theta(basis) if theta0 is None else np.array(theta0, dtype=float)
    if theta.shape != (basis.L,):
        raise ValueError(f"initial_theta must have length {basis.L}")
    try:
        gain = gain_from_theta(QApprox(basis, theta))
    except NumericalError as exc:
        trace.status, trace.message = "error", f"iteration 0: {exc}"
        return trace
    _record(trace, 0, theta, None, gain, bellman_residual(diag, basis, theta, gain), float("nan"))
    rising = 0
    for i in range(1, config.max_iterations + 1):
        prev = theta
        try:
            W, Z, rhs = viql_regression_matrices(samples, basis, prev)
            theta = viql_update(W, Z, rhs, config.svd_tolerance)
            orth = orthogonality_residual(W, Z, rhs, theta)
            gain = gain_from_theta(QApprox(basis, theta))
        except NumericalError as exc:
            trace.status, trace.message = "error", f"iteration {i}: {exc}"
            log.warning("VIQL stopped: %s", trace.message)
            return trace
        rms = bellman_residual(diag, basis, theta, gain)
        delta = _record(trace, i, theta, prev, gain, rms, orth)
        q_prev = W @ prev
        q_new = W @ theta
        if np.any(q_new > q_prev + 1e-6 * np.maximum(1.0, np.abs(q_prev))):
            rising += 1
        if delta <= config.xi:
            trace.status = "converged"
            break
    else:
        trace.status = "max_iterations"
    if rising:
        trace.message = (f"Q increased on training samples in {rising} of {trace.iterations} "
                         "iterations; the initial Q may not be the Q-function of a stable policy")
        log.warning("VIQL monotonicity: %s", trace.message)
    return trace


def monotonicity_gaps(trace: IterationTrace, X, U, start=0):
    """Largest normalized increase ``(Q_{i+1} - Q_i) / max(1, |Q_i|)`` per iteration pair.

    Nonpositive entries mean the sequence is nonincreasing at every point.
    """
    Psi = eval_basis(trace.basis, X, U)
    qs = [Psi @ r.theta for r in trace.records[start:]]
    return np.array([np.max((b - a) / np.maximum(1.0, np.abs(a))) for a, b in zip(qs, qs[1:])])


def _fmt(v):
    return format(float(v), ".17g")


def trace_csv(trace: IterationTrace, header: dict | None = None) -> str:
    """CSV export: iter, theta_delta, bellman_rms, gain entries, then theta entries."""
    basis = trace.basis
    m = basis.m
    feats = basis.feature_labels()
    if m == 1:
        kcols = [f"K_{f}" for f in feats]
    else:
        kcols = [f"K{r + 1}_{f}" for r in range(m) for f in feats]
    cols = ["iter", "theta_delta", "bellman_rms"] + kcols + [f"theta_{lbl}" for lbl in basis.labels()]
    out = io.StringIO()
    meta = {"algorithm": trace.algorithm, "status": trace.status, "iterations": trace.iterations}
    meta.update(header or {})
    for k, v in meta.items():
        out.write(f"# {k}={v}\n")
    out.write(",".join(cols) + "\n")
    for r in trace.records:
        gain = r.gain.K.reshape(-1) if r.gain is not None else np.full(len(kcols), np.nan)
        row = [str(r.index), _fmt(r.theta_delta), _fmt(r.bellman_rms)]
        row += [_fmt(v) for v in gain] + [_fmt(v) for v in r.theta]
        out.write(",".join(row) + "\n")
    return out.getvalue()
