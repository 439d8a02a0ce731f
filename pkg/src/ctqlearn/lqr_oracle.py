"""Analytic ground truth for linear-quadratic problems.

Nothing in this module looks at sampled data: it is the independent side of
every cross-check against the learners.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import RiccatiError


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Stabilizing CARE solution. The optimal feedback is ``u = -K x``."""

    P: np.ndarray
    K: np.ndarray
    iterations: int
    history: list = field(default_factory=list, repr=False)
    convention: str = "u = -K x"


@dataclass(frozen=True, eq=False)
class OptimalQMatrix:
    """``Q(x, mu) = [x; mu]^T G [x; mu]`` for a constant action held over ``delta_t``."""

    G: np.ndarray
    delta_t: float
    n: int

    @property
    def G11(self):
        return self.G[:self.n, :self.n]

    @property
    def G12(self):
        return self.G[:self.n, self.n:]

    @property
    def G22(self):
        return self.G[self.n:, self.n:]

    def greedy_gain(self):
        """K with ``argmin_mu Q = K x``, i.e. ``-G22^{-1} G12^T``."""
        return -np.linalg.solve(self.G22, self.G12.T)


def is_hurwitz(A, margin=0.0):
    return bool(np.all(np.linalg.eigvals(np.asarray(A, dtype=float)).real < -margin))


def _as_mats(A, B, S, W):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    B = B.reshape(A.shape[0], -1)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    return A, B, S, W


def solve_lyapunov(F, Qm):
    """Solve ``F^T P + P F = -Qm`` by Kronecker vectorisation (fine for n <= ~10)."""
    n = F.shape[0]
    eye = np.eye(n)
    lhs = np.kron(eye, F.T) + np.kron(F.T, eye)
    P = np.linalg.solve(lhs, -Qm.reshape(-1, order="F")).reshape(n, n, order="F")
    return 0.5 * (P + P.T)


def care_residual(A, B, S, W, P):
    A, B, S, W = _as_mats(A, B, S, W)
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(W, B.T @ P) + S


def solve_care(A, B, S, W, K0=None, tol=1e-13, max_iter=50) -> RiccatiSolution:
    """Newton-Kleinman iteration for the continuous-time algebraic Riccati equation.

    Each step solves ``(A - B K_j)^T P_j + P_j (A - B K_j) = -(S + K_j^T W K_j)``
    and sets ``K_{j+1} = W^{-1} B^T P_j``. ``K0`` must be stabilizing; the zero
    gain is used when ``A`` is already Hurwitz.
    """
    A, B, S, W = _as_mats(A, B, S, W)
    n, m = B.shape
    if K0 is None:
        if not is_hurwitz(A):
            raise RiccatiError("A is not Hurwitz; pass a stabilizing initial gain K0")
        K = np.zeros((m, n))
    else:
        K = np.atleast_2d(np.asarray(K0, dtype=float))
        if not is_hurwitz(A - B @ K):
            raise RiccatiError("initial gain K0 does not stabilize (A, B)")
    history = []
    P_prev = None
    for j in range(1, max_iter + 1):
        Acl = A - B @ K
        P = solve_lyapunov(Acl, S + K.T @ W @ K)
        if not np.all(np.isfinite(P)):
            raise RiccatiError(f"non-finite Lyapunov solution at Newton step {j}")
        history.append(P)
        K = np.linalg.solve(W, B.T @ P)
        if not is_hurwitz(A - B @ K):
            raise RiccatiError(f"Newton step {j} produced a destabilizing gain")
        if P_prev is not None and np.linalg.norm(P - P_prev) <= tol * max(1.0, np.linalg.norm(P)):
            break
        P_prev = P
    else:
        raise RiccatiError(f"Newton-Kleinman did not converge in {max_iter} steps")
    return RiccatiSolution(P, K, j, history)


def _simpson_weights(N, h):
    if N < 2 or N % 2:
        raise ValueError(f"Simpson's rule needs an even number of intervals >= 2, got {N}")
    w = np.ones(N + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def transition_matrices(A, B, delta_t):
    """``(E, F)`` with ``x(delta_t) = E x0 + F mu`` for constant ``mu``."""
    A, B, _, _ = _as_mats(A, B, np.eye(1), np.eye(1))
    n, m = B.shape
    Maug = np.zeros((n + m, n + m))
    Maug[:n, :n] = A
    Maug[:n, n:] = B
    Phi = expm(Maug * delta_t)
    return Phi[:n, :n], Phi[:n, n:]


def optimal_q_matrix(A, B, S, W, P, delta_t, quadrature_points=200) -> OptimalQMatrix:
    """Quadratic Q-function of a constant action over ``delta_t`` followed by value ``x^T P x``.

    ``G = int_0^dt Phi(t)^T diag(S, W) Phi(t) dt + [E F]^T P [E F]`` where
    ``Phi(t) = [[E(t), F(t)], [0, I]]``, evaluated with composite Simpson on
    ``quadrature_points`` intervals.
    """
    if not delta_t > 0:
        raise ValueError(f"delta_t must be positive, got {delta_t}")
    A, B, S, W = _as_mats(A, B, S, W)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n, m = B.shape
    N = int(quadrature_points)
    h = delta_t / N
    weights = _simpson_weights(N, h)
    Maug = np.zeros((n + m, n + m))
    Maug[:n, :n] = A
    Maug[:n, n:] = B
    C = np.zeros((n + m, n + m))
    C[:n, :n] = S
    C[n:, n:] = W
    step = expm(Maug * h)
    Phi = np.eye(n + m)
    G = np.zeros((n + m, n + m))
    for k in range(N + 1):
        if k:
            Phi = Phi @ step
        G += weights[k] * (Phi.T @ C @ Phi)
    EF = expm(Maug * delta_t)[:n, :]
    G += EF.T @ P @ EF
    return OptimalQMatrix(0.5 * (G + G.T), float(delta_t), n)


def sampled_data_value_matrix(A, B, S, W, delta_t, quadrature_points=200, K0=None,
                              tol=1e-14, max_iter=100):
    """Value matrix of the best feedback that holds its action constant over each interval.

    This is the exact fixed point of Q-function policy iteration on constant-action
    transitions: ``G_d = optimal_q_matrix(..., P_d)`` satisfies
    ``x^T P_d x = min_mu [x; mu]^T G_d [x; mu]``. Solved by Hewer's policy
    iteration on the interval-to-interval map, starting from ``K0`` (gain with
    ``mu = -K x``; defaults to the CARE gain, which stabilizes for small steps).

    Returns ``(P_d, K_d)`` with ``mu = -K_d x``.
    """
    A, B, S, W = _as_mats(A, B, S, W)
    n, m = B.shape
    stage = optimal_q_matrix(A, B, S, W, np.zeros((n, n)), delta_t, quadrature_points).G
    E, F = transition_matrices(A, B, delta_t)
    K = solve_care(A, B, S, W).K if K0 is None else np.atleast_2d(np.asarray(K0, dtype=float))
    eye = np.eye(n * n)
    P_prev = None
    for _ in range(max_iter):
        Phi = E - F @ K
        if np.max(np.abs(np.linalg.eigvals(Phi))) >= 1.0:
            raise RiccatiError("sampled-data gain is not stabilizing")
        T = np.vstack([np.eye(n), -K])
        cost = T.T @ stage @ T
        vecP = np.linalg.solve(eye - np.kron(Phi.T, Phi.T), cost.reshape(-1, order="F"))
        P = vecP.reshape(n, n, order="F")
        P = 0.5 * (P + P.T)
        G = stage + np.hstack([E, F]).T @ P @ np.hstack([E, F])
        K = np.linalg.solve(G[n:, n:], G[n:, :n])
        if P_prev is not None and np.max(np.abs(P - P_prev)) <= tol * max(1.0, np.max(np.abs(P))):
            return P, K
        P_prev = P
    raise RiccatiError(f"sampled-data policy iteration did not converge in {max_iter} steps")
