"""Spatial operators, domains and the Sturm-Liouville symmetrizer.

Three operator families are supported:

* :class:`Lap1D` -- ``-D d^2/dx^2`` on an interval,
* :class:`SL1D` -- ``-d^2/dx^2 + 2 p(x) d/dx + q(x)`` on an interval,
* :class:`Lap2D` -- ``-D (d^2/dx1^2 + d^2/dx2^2)`` on a periodic square.

An SL1D operator with a drift term is not self-adjoint; multiplying by
``w(x) = exp(int_a^x p)`` conjugates it into ``-d^2/dx^2 + q~`` with
``q~ = q + p^2 - p'``. :func:`symmetrize` builds that transformation.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import integrate


class BoundaryKind(str, enum.Enum):
    NEUMANN = "neumann"
    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class DomainSpec:
    """Spatial box (an interval or a square) plus the observation horizon."""

    bounds: tuple
    time_horizon: float = 1.0

    def __post_init__(self):
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        object.__setattr__(self, "bounds", bounds)
        if len(bounds) not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {len(bounds)}")
        for a, b in bounds:
            if not a < b:
                raise ValueError(f"empty axis interval [{a}, {b}]")
        if not self.time_horizon > 0:
            raise ValueError("time_horizon must be positive")

    @property
    def dimension(self) -> int:
        return len(self.bounds)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([b - a for a, b in self.bounds])

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def contains(self, x, atol=1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dimension)
        ok = np.ones(x.shape[0], dtype=bool)
        for j, (a, b) in enumerate(self.bounds):
            tol = atol * (b - a)
            ok &= (x[:, j] >= a - tol) & (x[:, j] <= b + tol)
        return ok

    @classmethod
    def interval(cls, a=0.0, b=1.0, time_horizon=1.0):
        return cls(((a, b),), time_horizon)

    @classmethod
    def square(cls, side, time_horizon=1.0):
        return cls(((0.0, side), (0.0, side)), time_horizon)

    def to_dict(self):
        return {"bounds": [list(ab) for ab in self.bounds],
                "time_horizon": self.time_horizon}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(ab) for ab in d["bounds"]),
                   float(d.get("time_horizon", 1.0)))


@dataclass(frozen=True)
class Lap1D:
    diffusion: float
    domain: DomainSpec = field(default_factory=DomainSpec.interval)
    boundary: BoundaryKind = BoundaryKind.NEUMANN

    def __post_init__(self):
        object.__setattr__(self, "boundary", BoundaryKind(self.boundary))
        if not self.diffusion > 0:
            raise ValueError("diffusion must be positive")
        if self.domain.dimension != 1:
            raise ValueError("Lap1D needs a one-dimensional domain")


@dataclass(frozen=True)
class SL1D:
    """``-d^2/dx^2 + 2 p d/dx + q``.

    ``p``, ``q`` and ``p_prime`` must accept numpy arrays. When the operator
    comes from a JSON file, the polynomial coefficients (ascending powers)
    are kept in ``p_coeffs`` / ``q_coeffs`` so it can be written back.
    """

    p: Callable
    q: Callable
    p_prime: Callable
    domain: DomainSpec = field(default_factory=DomainSpec.interval)
    boundary: BoundaryKind = BoundaryKind.NEUMANN
    p_coeffs: Optional[tuple] = None
    q_coeffs: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "boundary", BoundaryKind(self.boundary))
        if self.domain.dimension != 1:
            raise ValueError("SL1D needs a one-dimensional domain")

    @classmethod
    def from_polynomials(cls, p_coeffs, q_coeffs, domain=None,
                         boundary=BoundaryKind.NEUMANN):
        pc = np.atleast_1d(np.asarray(p_coeffs, dtype=float))
        qc = np.atleast_1d(np.asarray(q_coeffs, dtype=float))
        dpc = P.polyder(pc) if pc.size > 1 else np.zeros(1)
        return cls(
            p=lambda x: P.polyval(np.asarray(x, dtype=float), pc),
            q=lambda x: P.polyval(np.asarray(x, dtype=float), qc),
            p_prime=lambda x: P.polyval(np.asarray(x, dtype=float), dpc),
            domain=domain or DomainSpec.interval(),
            boundary=boundary,
            p_coeffs=tuple(pc.tolist()),
            q_coeffs=tuple(qc.tolist()),
        )


@dataclass(frozen=True)
class Lap2D:
    diffusion: float
    domain: DomainSpec
    boundary: BoundaryKind = BoundaryKind.PERIODIC

    def __post_init__(self):
        object.__setattr__(self, "boundary", BoundaryKind(self.boundary))
        if not self.diffusion > 0:
            raise ValueError("diffusion must be positive")
        if self.domain.dimension != 2:
            raise ValueError("Lap2D needs a two-dimensional domain")
        la, lb = self.domain.lengths
        if not np.isclose(la, lb, rtol=1e-12, atol=0.0):
            raise ValueError("Lap2D requires a square domain")
        if self.boundary is not BoundaryKind.PERIODIC:
            raise ValueError("Lap2D supports periodic boundaries only")


OperatorSpec = Union[Lap1D, SL1D, Lap2D]


@dataclass(frozen=True)
class Symmetrizer:
    """Multiplication by ``w(x) = exp(int_{x0}^x p)``, its inverse, and ``q~``.

    The lower integration limit ``x0`` is the left end of the domain.
    """

    p: Callable
    q: Callable
    p_prime: Callable
    x0: float = 0.0

    def log_weight(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        order = np.argsort(flat, kind="stable")
        # integrate between consecutive sorted points and accumulate
        out = np.empty(flat.shape)
        prev, acc = self.x0, 0.0
        with warnings.catch_warnings():
            # roundoff notices at the 1e-15 absolute target are harmless here
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            for i in order:
                xi = float(flat[i])
                if xi != prev:
                    val, _ = integrate.quad(lambda s: float(self.p(s)), prev, xi,
                                            epsabs=1e-15, epsrel=1e-14, limit=200)
                    acc += val
                    prev = xi
                out[i] = acc
        return out.reshape(x.shape)

    def weight(self, x):
        return np.exp(self.log_weight(x))

    def inverse_weight(self, x):
        return np.exp(-self.log_weight(x))

    def transformed_potential(self, x):
        x = np.asarray(x, dtype=float)
        return self.q(x) + self.p(x) ** 2 - self.p_prime(x)

    def norm_constant(self, domain: DomainSpec, n_points=257) -> float:
        """``max(w) / min(w)`` over the domain; a diagnostic only."""
        a, b = domain.bounds[0]
        w = self.weight(np.linspace(a, b, n_points))
        return float(w.max() / w.min())


def _check_finite(fn, name, domain, n_probe=1025):
    a, b = domain.bounds[0]
    x = np.linspace(a, b, n_probe)
    with np.errstate(all="ignore"):
        v = np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape)
    bad = ~np.isfinite(v)
    if bad.any():
        raise ValueError(
            f"coefficient {name} is not finite at x={x[bad][0]!r}")


def symmetrize(spec: SL1D) -> Symmetrizer:
    if not isinstance(spec, SL1D):
        raise TypeError("symmetrize expects an SL1D operator")
    for fn, name in ((spec.p, "p"), (spec.q, "q"), (spec.p_prime, "p'")):
        _check_finite(fn, name, spec.domain)
    return Symmetrizer(spec.p, spec.q, spec.p_prime, x0=spec.domain.bounds[0][0])


# -- JSON ---------------------------------------------------------------------

def operator_to_dict(spec: OperatorSpec) -> dict:
    d = {"domain": spec.domain.to_dict(), "boundary": spec.boundary.value}
    if isinstance(spec, Lap1D):
        d.update(kind="lap1d", diffusion=spec.diffusion)
    elif isinstance(spec, Lap2D):
        d.update(kind="lap2d", diffusion=spec.diffusion)
    elif isinstance(spec, SL1D):
        if spec.p_coeffs is None or spec.q_coeffs is None:
            raise ValueError("only polynomial SL1D coefficients can be serialized")
        d.update(kind="sl1d", p=list(spec.p_coeffs), q=list(spec.q_coeffs))
    else:
        raise TypeError(f"unknown operator {type(spec).__name__}")
    return d


def operator_from_dict(d: dict) -> OperatorSpec:
    kind = d["kind"].lower()
    if "domain" in d:
        domain = DomainSpec.from_dict(d["domain"])
    elif kind == "lap2d":
        domain = DomainSpec.square(float(d["side_length"]))
    else:
        domain = DomainSpec.interval()
    if kind == "lap1d":
        return Lap1D(float(d.get("diffusion", 1.0)), domain,
                     d.get("boundary", "neumann"))
    if kind == "lap2d":
        return Lap2D(float(d["diffusion"]), domain, d.get("boundary", "periodic"))
    if kind == "sl1d":
        return SL1D.from_polynomials(d.get("p", [0.0]), d.get("q", [0.0]),
                                     domain, d.get("boundary", "neumann"))
    raise ValueError(f"unknown operator kind {d['kind']!r}")


def load_operator(path) -> OperatorSpec:
    with open(path) as fh:
        return operator_from_dict(json.load(fh))


def dump_operator(spec: OperatorSpec) -> str:
    return json.dumps(operator_to_dict(spec), indent=2)
