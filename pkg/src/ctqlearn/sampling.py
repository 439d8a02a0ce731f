"""Off-policy transition datasets: collection over a box, persistence, splitting."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dynamics import DEFAULT_SUBSTEPS, integrate_transition
from .errors import DatasetFormatError, DivergenceError

FORMAT_TAG = "ctqlearn-dataset v1"


class Sample(NamedTuple):
    x: np.ndarray
    mu: np.ndarray
    x_next: np.ndarray
    pi: float


def _frozen(a, ndim):
    a = np.array(a, dtype=float)
    if a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Immutable batch of transitions ``(x_k, mu_k, x'_k, pi_k)`` sharing one interval.

    Arrays are stored row-wise: ``X`` is (M, n), ``U`` is (M, m).
    """

    X: np.ndarray
    U: np.ndarray
    X_next: np.ndarray
    pi: np.ndarray
    delta_t: float
    x_bounds: tuple
    mu_bounds: tuple
    seed: int | None = None
    substeps: int = DEFAULT_SUBSTEPS
    model: str = "custom"
    cost: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("X", _frozen(self.X, 2))
        set_("U", _frozen(self.U, 2))
        set_("X_next", _frozen(self.X_next, 2))
        set_("pi", _frozen(self.pi, 1))
        set_("x_bounds", tuple(_frozen(b, 1) for b in self.x_bounds))
        set_("mu_bounds", tuple(_frozen(b, 1) for b in self.mu_bounds))
        M, n = self.X.shape
        m = self.U.shape[1]
        if self.U.shape[0] != M or self.X_next.shape != (M, n) or self.pi.shape != (M,):
            raise ValueError("inconsistent sample array shapes")
        if any(b.shape != (n,) for b in self.x_bounds) or any(b.shape != (m,) for b in self.mu_bounds):
            raise ValueError("domain bounds do not match the state/control dimensions")
        if not self.delta_t > 0:
            raise ValueError(f"delta_t must be positive, got {self.delta_t}")
        if np.any(self.pi < 0):
            raise ValueError("integrated stage costs must be nonnegative")

    @property
    def M(self):
        return self.X.shape[0]

    @property
    def n(self):
        return self.X.shape[1]

    @property
    def m(self):
        return self.U.shape[1]

    @property
    def domain_volume(self):
        lo = np.concatenate([self.x_bounds[0], self.mu_bounds[0]])
        hi = np.concatenate([self.x_bounds[1], self.mu_bounds[1]])
        return float(np.prod(hi - lo))

    def __len__(self):
        return self.M

    def __getitem__(self, k):
        return Sample(self.X[k], self.U[k], self.X_next[k], float(self.pi[k]))

    def __iter__(self):
        return (self[k] for k in range(self.M))

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        arrays = ("X", "U", "X_next", "pi")
        return (all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
                and all(np.array_equal(a, b) for a, b in zip(self.x_bounds + self.mu_bounds,
                                                             other.x_bounds + other.mu_bounds))
                and (self.delta_t, self.seed, self.substeps, self.model, self.cost, self.meta)
                == (other.delta_t, other.seed, other.substeps, other.model, other.cost, other.meta))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return replace(self, X=self.X[idx], U=self.U[idx], X_next=self.X_next[idx], pi=self.pi[idx])


def _check_bounds(lo, hi, name):
    lo = np.asarray(lo, dtype=float).reshape(-1)
    hi = np.asarray(hi, dtype=float).reshape(-1)
    if lo.shape != hi.shape or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError(f"{name} bounds must be finite and of equal length")
    if np.any(hi <= lo):
        raise ValueError(f"{name} bounds are empty: lower {lo} upper {hi}")
    return lo, hi


def collect_samples(model, cost, x_bounds, mu_bounds, M, delta_t=0.1,
                    substeps=DEFAULT_SUBSTEPS, seed=0, cost_name=None):
    """Draw ``(x_k, mu_k)`` uniformly over the box and integrate each transition.

    All ``M * (n + m)`` uniforms come from a single draw of a seeded PCG64
    generator, so the set is a pure function of its arguments.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    xlo, xhi = _check_bounds(*x_bounds, "state")
    ulo, uhi = _check_bounds(*mu_bounds, "action")
    n, m = model.n, model.m
    if xlo.shape != (n,) or ulo.shape != (m,):
        raise ValueError(f"bounds must have lengths n={n}, m={m}")
    rng = np.random.default_rng(seed)
    draw = rng.uniform(size=(M, n + m))
    lo = np.concatenate([xlo, ulo])
    hi = np.concatenate([xhi, uhi])
    XU = lo + (hi - lo) * draw
    X, U = XU[:, :n], XU[:, n:]
    X_next = np.empty_like(X)
    pi = np.empty(M)
    for k in range(M):
        try:
            X_next[k], pi[k] = integrate_transition(model, cost, X[k], U[k], delta_t, substeps)
        except DivergenceError as exc:
            raise DivergenceError(f"sample {k}: {exc}") from exc
    return SampleSet(X, U, X_next, pi, delta_t, (xlo, xhi), (ulo, uhi), seed=seed,
                     substeps=substeps, model=model.name,
                     cost=cost_name or getattr(cost, "name", "custom"))


def split_holdout(samples: SampleSet, fraction: float, seed: int = 0):
    """Seeded split into ``(train, heldout)``; both keep the original sample order."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"holdout fraction must lie in [0, 1), got {fraction}")
    k = int(round(fraction * samples.M))
    if k == 0:
        return samples, None
    perm = np.random.default_rng(seed).permutation(samples.M)
    return samples.subset(np.sort(perm[k:])), samples.subset(np.sort(perm[:k]))


def _fmt(v):
    return format(float(v), ".17g")


def _fmt_vec(a):
    return ",".join(_fmt(v) for v in a)


def dataset_text(samples: SampleSet) -> str:
    n, m = samples.n, samples.m
    cols = ([f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
            + [f"x{i + 1}_next" for i in range(n)] + ["pi"])
    header = {
        "model": samples.model,
        "cost": samples.cost,
        "n": n,
        "m": m,
        "M": samples.M,
        "delta_t": _fmt(samples.delta_t),
        "substeps": samples.substeps,
        "seed": "none" if samples.seed is None else samples.seed,
        "x_lower": _fmt_vec(samples.x_bounds[0]),
        "x_upper": _fmt_vec(samples.x_bounds[1]),
        "mu_lower": _fmt_vec(samples.mu_bounds[0]),
        "mu_upper": _fmt_vec(samples.mu_bounds[1]),
        "domain_volume": _fmt(samples.domain_volume),
    }
    header.update(samples.meta)
    lines = [f"# {FORMAT_TAG}"] + [f"# {k}={v}" for k, v in header.items()]
    lines.append("# columns=" + ",".join(cols))
    for k in range(samples.M):
        row = np.concatenate([samples.X[k], samples.U[k], samples.X_next[k], [samples.pi[k]]])
        lines.append(_fmt_vec(row))
    return "\n".join(lines) + "\n"


def save_dataset(samples: SampleSet, path):
    Path(path).write_text(dataset_text(samples), encoding="utf-8")


_STANDARD_KEYS = {"model", "cost", "n", "m", "M", "delta_t", "substeps", "seed", "x_lower",
                  "x_upper", "mu_lower", "mu_upper", "domain_volume", "columns"}


def _parse_floats(text, line):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise DatasetFormatError(f"cannot parse numbers from {text!r}", line) from None
    if not all(np.isfinite(vals)):
        raise DatasetFormatError("non-finite value", line)
    return vals


def load_dataset(path) -> SampleSet:
    text = Path(path).read_text(encoding="utf-8")
    header, header_lines, rows = {}, {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body == FORMAT_TAG or rows:
                if rows:
                    raise DatasetFormatError("header line after data records", lineno)
                continue
            key, sep, value = body.partition("=")
            if not sep:
                raise DatasetFormatError(f"header line without key=value: {line!r}", lineno)
            header[key.strip()] = value.strip()
            header_lines[key.strip()] = lineno
            continue
        rows.append((lineno, _parse_floats(line, lineno)))

    def need(key, conv):
        if key not in header:
            raise DatasetFormatError(f"missing header field {key!r}")
        try:
            return conv(header[key])
        except ValueError:
            raise DatasetFormatError(f"bad value for {key!r}: {header[key]!r}",
                                     header_lines[key]) from None

    n, m, M = need("n", int), need("m", int), need("M", int)
    vec = lambda s: np.array([float(v) for v in s.split(",")])  # noqa: E731
    x_lo, x_hi = need("x_lower", vec), need("x_upper", vec)
    u_lo, u_hi = need("mu_lower", vec), need("mu_upper", vec)
    if x_lo.shape != (n,) or x_hi.shape != (n,):
        raise DatasetFormatError(f"state bounds do not have n={n} entries", header_lines["x_lower"])
    if u_lo.shape != (m,) or u_hi.shape != (m,):
        raise DatasetFormatError(f"action bounds do not have m={m} entries", header_lines["mu_lower"])
    width = 2 * n + m + 1
    for lineno, vals in rows:
        if len(vals) != width:
            raise DatasetFormatError(
                f"record has {len(vals)} fields, expected {width} for n={n}, m={m}", lineno)
        if vals[-1] < 0:
            raise DatasetFormatError("negative integrated cost", lineno)
    if len(rows) != M:
        raise DatasetFormatError(f"header declares M={M} but file has {len(rows)} records")
    data = np.array([v for _, v in rows], dtype=float).reshape(len(rows), width)
    seed = header.get("seed", "none")
    meta = {k: v for k, v in header.items() if k not in _STANDARD_KEYS}
    return SampleSet(data[:, :n], data[:, n:n + m], data[:, n + m:2 * n + m], data[:, -1],
                     need("delta_t", float), (x_lo, x_hi), (u_lo, u_hi),
                     seed=None if seed == "none" else int(seed),
                     substeps=need("substeps", int), model=header.get("model", "custom"),
                     cost=header.get("cost", "custom"), meta=meta)
