"""Forward model: eigen-expansion solution, synthetic data, decay bound.

A solution of ``u' + L u = 0`` with initial value ``g0 = sum_k alpha_k psi_k``
is ``u(x, t) = sum_k alpha_k exp(-lambda_k t) psi_k(x)``. Coefficient vectors
are plain 1D float arrays aligned with an :class:`EigenSystem`'s mode order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .eigen import EigenSystem
from .operators import DomainSpec

UNIFORM = "uniform"


def substream(seed, replication=0) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``seed XOR replication``."""
    key = (int(seed) ^ int(replication)) & ((1 << 64) - 1)
    return np.random.Generator(np.random.Philox(key=key))


def as_coefficients(coeffs, eig: Optional[EigenSystem] = None) -> np.ndarray:
    alpha = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if alpha.ndim != 1:
        raise ValueError("coefficients must form a 1D vector")
    if not np.all(np.isfinite(alpha)):
        raise ValueError("coefficients must be finite")
    if eig is not None and alpha.size > eig.count:
        raise ValueError(
            f"{alpha.size} coefficients but only {eig.count} modes available")
    return alpha


@dataclass(frozen=True)
class GridFixed:
    """Regular spacetime lattice; ``dims`` = (n_x, n_t) or (n_x1, n_x2, n_t)."""

    dims: tuple

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def to_dict(self):
        return {"grid": list(self.dims)}


def sampling_to_meta(sampling):
    return sampling if sampling == UNIFORM else sampling.to_dict()


def sampling_from_meta(meta):
    if meta in (None, UNIFORM):
        return UNIFORM
    if isinstance(meta, dict) and "grid" in meta:
        return GridFixed(tuple(int(v) for v in meta["grid"]))
    if isinstance(meta, dict) and meta.get("kind") == UNIFORM:
        return UNIFORM
    raise ValueError(f"unknown sampling law {meta!r}")


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Rows ``(x, t, u)``; ``x`` has shape ``(n,)`` in 1D and ``(n, 2)`` in 2D."""

    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    noise_sd: float = 0.0
    seed: Optional[int] = None
    sampling: object = UNIFORM
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        t = np.asarray(self.t, dtype=float).ravel()
        u = np.asarray(self.u, dtype=float).ravel()
        if x.ndim == 2 and x.shape[1] == 1:
            x = x[:, 0]
        if not (x.shape[0] == t.size == u.size):
            raise ValueError("x, t and u must have the same number of rows")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "u", u)

    @property
    def n(self) -> int:
        return self.u.size

    @property
    def dimension(self) -> int:
        return 1 if self.x.ndim == 1 else self.x.shape[1]

    @property
    def meta(self) -> dict:
        return {"n": self.n, "noise_sd": self.noise_sd, "seed": self.seed,
                "sampling": sampling_to_meta(self.sampling), **self.extra}

    def validate(self, domain: DomainSpec):
        if not domain.contains(self.x).all():
            raise ValueError("observation locations outside the domain")
        if np.any(self.t < 0) or np.any(self.t > domain.time_horizon * (1 + 1e-12)):
            raise ValueError("observation times outside [0, time_horizon]")
        return self

    def permuted(self, order) -> "ObservationSet":
        order = np.asarray(order)
        return ObservationSet(self.x[order], self.t[order], self.u[order],
                              self.noise_sd, self.seed, self.sampling, dict(self.extra))

    def __eq__(self, other):
        if not isinstance(other, ObservationSet):
            return NotImplemented
        return (self.meta == other.meta and np.array_equal(self.x, other.x)
                and np.array_equal(self.t, other.t) and np.array_equal(self.u, other.u))


def propagate(coeffs, eig: EigenSystem, x, t) -> np.ndarray:
    """``sum_k alpha_k exp(-lambda_k t) psi_k(x)`` over the coefficient length.

    ``x`` and ``t`` broadcast against each other (one value per point).
    """
    alpha = as_coefficients(coeffs, eig)
    m = alpha.size
    pts = eig.points(x)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("propagate needs t >= 0")
    t = np.broadcast_to(t.ravel() if t.ndim else t, (pts.shape[0],))
    damp = np.exp(-np.outer(t, eig.eigenvalues[:m]))
    return (damp * eig.psi(pts, m)) @ alpha


def _lattice(domain: DomainSpec, dims):
    if len(dims) != domain.dimension + 1:
        raise ValueError(f"grid for a {domain.dimension}D domain needs "
                         f"{domain.dimension + 1} sizes")
    axes = [np.linspace(a, b, k) for (a, b), k in zip(domain.bounds, dims[:-1])]
    axes.append(np.linspace(0.0, domain.time_horizon, dims[-1]))
    mesh = np.meshgrid(*axes, indexing="ij")
    cols = [m.ravel() for m in mesh]
    x = cols[0] if domain.dimension == 1 else np.column_stack(cols[:-1])
    return x, cols[-1]


def generate_observations(truth, eig: EigenSystem, n, sigma, sampling=UNIFORM,
                          seed=0, replication=0) -> ObservationSet:
    """Draw ``U_i = u(X_i, T_i) + sigma Z_i`` with ``Z_i`` standard normal.

    With uniform sampling the locations, then the times, then the noise are
    drawn from :func:`substream` ``(seed, replication)``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    domain = eig.domain
    rng = substream(seed, replication)
    if sampling == UNIFORM:
        lo = np.array([a for a, _ in domain.bounds])
        hi = np.array([b for _, b in domain.bounds])
        x = lo + (hi - lo) * rng.random((n, domain.dimension))
        if domain.dimension == 1:
            x = x[:, 0]
        t = domain.time_horizon * rng.random(n)
    elif isinstance(sampling, GridFixed):
        if sampling.size != n:
            raise ValueError(f"lattice {sampling.dims} has {sampling.size} points, not {n}")
        x, t = _lattice(domain, sampling.dims)
    else:
        raise ValueError(f"unknown sampling law {sampling!r}")
    clean = propagate(truth, eig, x, t)
    noise = rng.standard_normal(n)
    u = clean + sigma * noise if sigma > 0 else clean
    return ObservationSet(x, t, u, float(sigma), int(seed), sampling,
                          {"replication": int(replication)} if replication else {})


class DecayCheck(NamedTuple):
    t: float
    lhs: float
    rhs: float
    holds: bool


def decay_bound_check(err_coeffs, eig: EigenSystem, t_grid):
    """Check ``||e(t)|| <= exp(-inf_k lambda_k t) ||e(0)||`` in coefficient space."""
    c = as_coefficients(err_coeffs, eig)
    lam = eig.eigenvalues[:c.size]
    lam_inf = eig.lambda_min
    norm0 = np.sqrt(np.sum(c ** 2))
    out = []
    for t in np.atleast_1d(np.asarray(t_grid, dtype=float)):
        lhs = float(np.sqrt(np.sum(c ** 2 * np.exp(-2.0 * lam * t))))
        rhs = float(np.exp(-lam_inf * t) * norm0)
        out.append(DecayCheck(float(t), lhs, rhs, lhs <= rhs + 1e-12))
    return out
