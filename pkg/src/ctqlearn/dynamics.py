"""Continuous-time system models, stage costs and a fixed-step RK4 integrator.

Everything here is deterministic: the same inputs always produce bitwise
identical outputs, which the dataset determinism contract relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError

DEFAULT_SUBSTEPS = 10
DEFAULT_STATE_BOUND = 1e6


@dataclass(frozen=True)
class DynamicsModel:
    """Time-invariant control-affine or general model ``xdot = drift(x, u)``."""

    n: int
    m: int
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)
    name: str = "custom"

    def __call__(self, x, u):
        return self.drift(x, u)

    def check_dims(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"state must have shape ({self.n},), got {x.shape}")
        if u.shape != (self.m,):
            raise ValueError(f"control must have shape ({self.m},), got {u.shape}")
        return x, u


class LinearModel(DynamicsModel):
    """``xdot = A x + B u``."""

    def __init__(self, A, B, name="linear"):
        A = np.array(A, dtype=float)
        B = np.array(B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B must have {A.shape[0]} rows, got {B.shape[0]}")
        A.setflags(write=False)
        B.setflags(write=False)
        super().__init__(A.shape[0], B.shape[1], lambda x, u: A @ x + B @ u, name)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)


def f16_model() -> LinearModel:
    """Short-period F-16 longitudinal model; state (alpha, q, delta_e), input actuator voltage."""
    A = [[-1.01887, 0.90506, -0.00215],
         [0.82225, -1.07741, -0.17555],
         [0.0, 0.0, -1.0]]
    B = [[0.0], [0.0], [1.0]]
    return LinearModel(A, B, name="f16")


def _example2_drift(x, u):
    x1, x2 = x[0], x[1]
    return np.array([
        -x1 + x2,
        -0.5 * (x1 + x2) + 0.5 * x1 * x1 * x2 + x1 * u[0],
    ])


def example2_model() -> DynamicsModel:
    """Two-state nonlinear benchmark whose optimal feedback is ``u = -x1*x2``.

    Built by the converse-HJB construction, so with ``S(x) = |x|^2`` and
    ``W(u) = u^2`` the optimal value is ``V(x) = x1^2/2 + x2^2``.
    """
    return DynamicsModel(2, 1, _example2_drift, name="example2")


MODELS = {
    "f16": f16_model,
    "example2": example2_model,
}


@dataclass(frozen=True)
class StageCost:
    """Running cost ``S(x) + W(u)`` given as two callables."""

    state_cost: Callable[[np.ndarray], float]
    control_cost: Callable[[np.ndarray], float]
    name: str = "custom"


class QuadraticCost(StageCost):
    """``S(x) = x^T S x`` and ``W(u) = u^T W u``."""

    def __init__(self, S, W, name="quadratic"):
        S = np.atleast_2d(np.array(S, dtype=float))
        W = np.atleast_2d(np.array(W, dtype=float))
        S.setflags(write=False)
        W.setflags(write=False)
        super().__init__(lambda x: float(x @ S @ x), lambda u: float(u @ W @ u), name)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "W", W)

    @classmethod
    def identity(cls, n, m):
        return cls(np.eye(n), np.eye(m), name="identity")


def stage_cost(cost: StageCost, x, u) -> float:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    S = getattr(cost, "S", None)
    W = getattr(cost, "W", None)
    if S is not None and x.shape != (S.shape[0],):
        raise ValueError(f"state dimension {x.shape} does not match cost ({S.shape[0]},)")
    if W is not None and u.shape != (W.shape[0],):
        raise ValueError(f"control dimension {u.shape} does not match cost ({W.shape[0]},)")
    return cost.state_cost(x) + cost.control_cost(u)


def _rk4(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _guard(y, n, bound, where):
    if not np.all(np.isfinite(y)):
        raise DivergenceError(f"non-finite state {where}")
    norm = float(np.linalg.norm(y[:n]))
    if norm > bound:
        raise DivergenceError(f"state norm {norm:.3g} exceeded bound {bound:.3g} {where}")


def rk4_step(model: DynamicsModel, x, u, h: float, bound: float = DEFAULT_STATE_BOUND):
    """Advance ``xdot = f(x, u)`` by one classical RK4 step with ``u`` frozen."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    x, u = model.check_dims(x, u)
    x_next = _rk4(lambda y: model.drift(y, u), x, h)
    _guard(x_next, model.n, bound, "after rk4 step")
    return x_next


def integrate_transition(model: DynamicsModel, cost: StageCost, x0, mu, delta_t: float,
                         substeps: int = DEFAULT_SUBSTEPS, bound: float = DEFAULT_STATE_BOUND):
    """Integrate state and running cost over ``[0, delta_t]`` under a constant action.

    Returns ``(x_next, pi)`` where ``pi`` is the integral of ``S(x) + W(mu)``.
    """
    if not delta_t > 0:
        raise ValueError(f"delta_t must be positive, got {delta_t}")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    x0, mu = model.check_dims(x0, mu)
    n = model.n
    control_cost = cost.control_cost(mu)

    def augmented(y):
        x = y[:n]
        out = np.empty(n + 1)
        out[:n] = model.drift(x, mu)
        out[n] = cost.state_cost(x) + control_cost
        return out

    y = np.append(x0, 0.0)
    h = delta_t / substeps
    for k in range(substeps):
        y = _rk4(augmented, y, h)
        _guard(y, n, bound, f"at substep {k + 1}/{substeps}")
    return y[:n], float(y[n])


def simulate_closed_loop(model: DynamicsModel, cost: StageCost, policy, x0, horizon: float,
                         step: float = 0.01, bound: float = DEFAULT_STATE_BOUND):
    """RK4 closed-loop simulation with the policy re-evaluated at every stage.

    Returns ``(t, X, U, J)``: sample times, states, actions at those states and
    the accumulated cost at each time (``J[-1]`` is the total).
    """
    if not horizon > 0 or not step > 0:
        raise ValueError("horizon and step must be positive")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise ValueError(f"x0 must have shape ({model.n},), got {x0.shape}")
    n = model.n
    steps = int(np.ceil(horizon / step - 1e-9))
    h = horizon / steps

    def augmented(y):
        x = y[:n]
        u = np.atleast_1d(np.asarray(policy(x), dtype=float))
        out = np.empty(n + 1)
        out[:n] = model.drift(x, u)
        out[n] = cost.state_cost(x) + cost.control_cost(u)
        return out

    ys = np.empty((steps + 1, n + 1))
    ys[0] = np.append(x0, 0.0)
    for k in range(steps):
        ys[k + 1] = _rk4(augmented, ys[k], h)
        _guard(ys[k + 1], n, bound, f"at t={(k + 1) * h:.6g} (closed loop unstable?)")
    X = ys[:, :n]
    U = np.array([np.atleast_1d(policy(x)) for x in X], dtype=float)
    return np.arange(steps + 1) * h, X, U, ys[:, n]


def closed_loop_cost(model, cost, policy, x0, horizon: float, step: float = 0.01,
                     bound: float = DEFAULT_STATE_BOUND) -> float:
    """Cost functional truncated at ``horizon`` along the closed loop."""
    return float(simulate_closed_loop(model, cost, policy, x0, horizon, step, bound)[3][-1])
