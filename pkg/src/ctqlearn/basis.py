"""Monomial bases over (x, mu), linear Q approximations and closed-form greedy policies.

A monomial is an exponent tuple over the stacked vector ``z = (x_1..x_n, u_1..u_m)``.
Term order is whatever the basis was constructed with and is preserved in every
output, so theta vectors stay comparable across runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NonCoerciveError, UnsupportedBasisError

_TOKEN = re.compile(r"^(x|u)(\d+)(?:\^(\d+))?$")


def format_monomial(exponents, n):
    parts = []
    for k, e in enumerate(exponents):
        if e == 0:
            continue
        var = f"x{k + 1}" if k < n else f"u{k - n + 1}"
        parts.append(var if e == 1 else f"{var}^{e}")
    return "*".join(parts)


def parse_monomial(text, n, m):
    exps = [0] * (n + m)
    text = text.strip()
    if not text:
        raise ValueError("empty monomial")
    for tok in text.split("*"):
        match = _TOKEN.match(tok.strip())
        if not match:
            raise ValueError(f"bad monomial token {tok!r} in {text!r}")
        kind, idx, power = match.group(1), int(match.group(2)), int(match.group(3) or 1)
        limit = n if kind == "x" else m
        if not 1 <= idx <= limit:
            raise ValueError(f"variable {kind}{idx} out of range in {text!r}")
        exps[idx - 1 if kind == "x" else n + idx - 1] += power
    return tuple(exps)


@dataclass(frozen=True)
class BasisSet:
    """Ordered list of distinct monomials, each of total degree >= 1."""

    n: int
    m: int
    terms: tuple

    def __post_init__(self):
        terms = tuple(tuple(int(e) for e in t) for t in self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms:
            raise ValueError("basis must contain at least one term")
        for t in terms:
            if len(t) != self.n + self.m:
                raise ValueError(f"term {t} does not have {self.n + self.m} exponents")
            if min(t) < 0:
                raise ValueError(f"negative exponent in {t}")
            if sum(t) < 1:
                raise ValueError("every term needs total degree >= 1 so that psi(0, 0) = 0")
        if len(set(terms)) != len(terms):
            raise ValueError("basis terms must be distinct")

    @classmethod
    def from_strings(cls, n, m, texts):
        return cls(n, m, tuple(parse_monomial(t, n, m) for t in texts))

    @property
    def L(self):
        return len(self.terms)

    def __len__(self):
        return len(self.terms)

    @cached_property
    def exponents(self):
        return np.array(self.terms, dtype=int)

    def labels(self):
        return [format_monomial(t, self.n) for t in self.terms]

    def to_text(self):
        return "\n".join(self.labels()) + "\n"

    @classmethod
    def from_text(cls, n, m, text):
        return cls.from_strings(n, m, [ln for ln in text.splitlines() if ln.strip()])

    def mu_degree(self, j):
        return sum(self.terms[j][self.n:])

    @cached_property
    def _structure(self):
        """Split the terms into mu-free, mu-linear and mu-quadratic groups.

        Raises UnsupportedBasisError when closed-form minimisation over mu is
        impossible (mu-degree > 2, or a mu-quadratic term with an x factor).
        """
        n, m = self.n, self.m
        features = []
        linear = []      # (term index, mu index, feature index)
        quadratic = []   # (term index, mu index a, mu index b)
        for j, t in enumerate(self.terms):
            xe, ue = t[:n], t[n:]
            d = sum(ue)
            if d == 0:
                continue
            if d == 1:
                xf = tuple(xe)
                if sum(xf) == 0:
                    raise UnsupportedBasisError(
                        f"term {format_monomial(t, n)} is linear in mu with no x factor")
                if xf not in features:
                    features.append(xf)
                linear.append((j, ue.index(1), features.index(xf)))
            elif d == 2:
                if sum(xe) != 0:
                    raise UnsupportedBasisError(
                        f"mu-quadratic term {format_monomial(t, n)} carries an x factor")
                idx = [k for k in range(m) for _ in range(ue[k])]
                quadratic.append((j, idx[0], idx[1]))
            else:
                raise UnsupportedBasisError(
                    f"term {format_monomial(t, n)} has mu-degree {d} > 2")
        return features, linear, quadratic

    @property
    def gain_features(self):
        """x-monomials (exponent tuples over x) that the greedy gain multiplies."""
        return list(self._structure[0])

    def feature_labels(self):
        return [format_monomial(f, self.n) or "1" for f in self.gain_features]


def quadratic_basis(n, m):
    """All degree-2 monomials of ``z = (x, mu)`` in upper-triangular row order.

    For n=3, m=1 this is x1^2, x1x2, x1x3, x1u1, x2^2, x2x3, x2u1, x3^2, x3u1, u1^2.
    """
    p = n + m
    terms = []
    for a in range(p):
        for b in range(a, p):
            e = [0] * p
            e[a] += 1
            e[b] += 1
            terms.append(tuple(e))
    return BasisSet(n, m, tuple(terms))


def example2_basis():
    """Eighteen-term basis for the two-state nonlinear example.

    x-only monomials of degree 2, 3, 4, then x1*u, x2*u, x1^2*u, x1*x2*u, x2^2*u, u^2.
    """
    texts = ["x1^2", "x1*x2", "x2^2",
             "x1^3", "x1^2*x2", "x1*x2^2", "x2^3",
             "x1^4", "x1^3*x2", "x1^2*x2^2", "x1*x2^3", "x2^4",
             "x1*u1", "x2*u1", "x1^2*u1", "x1*x2*u1", "x2^2*u1", "u1^2"]
    return BasisSet.from_strings(2, 1, texts)


BASIS_PRESETS = {"example2": example2_basis}


def eval_basis(basis: BasisSet, x, mu):
    """Evaluate every term at (x, mu).

    Accepts single vectors (returns shape ``(L,)``) or row batches of shape
    ``(M, n)`` and ``(M, m)`` (returns ``(M, L)``).
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    U = np.atleast_2d(mu)
    if X.shape[1] != basis.n or U.shape[1] != basis.m or X.shape[0] != U.shape[0]:
        raise ValueError(
            f"dimension mismatch: basis expects n={basis.n}, m={basis.m}; "
            f"got x {x.shape}, mu {mu.shape}")
    Z = np.hstack([X, U])
    out = np.prod(Z[:, None, :] ** basis.exponents[None, :, :], axis=2)
    return out[0] if single else out


def _eval_features(features, n, x):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != n:
        raise ValueError(f"expected states with {n} entries, got {X.shape[1]}")
    if not features:
        return np.zeros((X.shape[0], 0))
    E = np.array(features, dtype=int)
    return np.prod(X[:, None, :] ** E[None, :, :], axis=2)


@dataclass(frozen=True, eq=False)
class QApprox:
    """``Q(x, mu) = Psi(x, mu)^T theta``."""

    basis: BasisSet
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if theta.shape != (self.basis.L,):
            raise ValueError(f"theta must have length {self.basis.L}, got {theta.shape[0]}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def __call__(self, x, mu):
        return q_value(self, x, mu)


def q_value(q: QApprox, x, mu):
    return eval_basis(q.basis, x, mu) @ q.theta


@dataclass(frozen=True, eq=False)
class GainMatrix:
    """Feedback ``mu = K phi(x)`` over a list of x-monomial features."""

    K: np.ndarray
    features: tuple
    n: int

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        if K.ndim == 1:
            K = K[None, :]
        if K.shape[1] != len(self.features):
            raise ValueError(f"gain has {K.shape[1]} columns but {len(self.features)} features")
        if not np.all(np.isfinite(K)):
            raise ValueError("gain has non-finite entries")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "features", tuple(tuple(f) for f in self.features))

    @property
    def m(self):
        return self.K.shape[0]

    @classmethod
    def linear(cls, K):
        """Plain state feedback ``mu = K x``."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        n = K.shape[1]
        return cls(K, tuple(tuple(int(i == k) for i in range(n)) for k in range(n)), n)

    @classmethod
    def zero(cls, n, m):
        return cls(np.zeros((m, 0)), (), n)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = _eval_features(self.features, self.n, x) @ self.K.T
        return out[0] if x.ndim == 1 else out

    def feature_labels(self):
        return [format_monomial(f, self.n) or "1" for f in self.features]


def _action_blocks(q: QApprox):
    features, linear, quadratic = q.basis._structure
    m = q.basis.m
    C = np.zeros((m, m))
    for j, a, b in quadratic:
        if a == b:
            C[a, a] += q.theta[j]
        else:
            C[a, b] += 0.5 * q.theta[j]
            C[b, a] += 0.5 * q.theta[j]
    C = 0.5 * (C + C.T)
    Bc = np.zeros((m, len(features)))
    for j, a, f in linear:
        Bc[a, f] += q.theta[j]
    return features, C, Bc


def gain_from_theta(q: QApprox) -> GainMatrix:
    """Coefficients of the exact minimiser ``mu* = -C^{-1} b(x) / 2`` over the x-features.

    ``b(x) = Bc phi(x)`` collects the mu-linear terms and ``C`` the mu-quadratic
    ones; the minimiser exists only when ``C`` is positive definite.
    """
    features, C, Bc = _action_blocks(q)
    if C.size == 0 or not np.all(np.isfinite(C)):
        raise NonCoerciveError("non-coercive Q in mu: no mu-quadratic terms")
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise NonCoerciveError(
            f"non-coercive Q in mu: action block has eigenvalues {np.linalg.eigvalsh(C)}"
        ) from None
    K = -0.5 * np.linalg.solve(C, Bc)
    return GainMatrix(K, tuple(features), q.basis.n)


def greedy_policy(q: QApprox, x):
    """``argmin_mu Q(x, mu)`` in closed form; batches of states are accepted."""
    return gain_from_theta(q)(x)


def _check_quadratic(basis, n, m):
    if basis.n != n or basis.m != m or set(basis.terms) != set(quadratic_basis(n, m).terms):
        raise UnsupportedBasisError("theta/G mapping needs the full quadratic basis in (x, mu)")


def theta_to_G(q: QApprox, n=None, m=None):
    """Symmetric G with ``Q(x, mu) = [x; mu]^T G [x; mu]``."""
    n = q.basis.n if n is None else n
    m = q.basis.m if m is None else m
    _check_quadratic(q.basis, n, m)
    G = np.zeros((n + m, n + m))
    for j, t in enumerate(q.basis.terms):
        idx = [k for k in range(n + m) for _ in range(t[k])]
        a, b = idx
        if a == b:
            G[a, a] = q.theta[j]
        else:
            G[a, b] = G[b, a] = 0.5 * q.theta[j]
    return G


def G_to_theta(G, m, basis: BasisSet | None = None):
    """Inverse of theta_to_G for an (n+m)-square G; ``basis`` fixes the term order."""
    G = np.asarray(G, dtype=float)
    p = G.shape[0]
    if G.shape != (p, p) or not 1 <= m < p:
        raise ValueError(f"G must be square with more than m={m} rows, got {G.shape}")
    basis = quadratic_basis(p - m, m) if basis is None else basis
    _check_quadratic(basis, p - m, m)
    theta = np.empty(basis.L)
    for j, t in enumerate(basis.terms):
        a, b = [k for k in range(p) for _ in range(t[k])]
        theta[j] = G[a, a] if a == b else G[a, b] + G[b, a]
    return theta
