"""Comparison estimator: tensor B-spline regression with a PDE-misfit penalty.

The fitted surface is ``v(x, t) = sum_{i,j} c_ij S_i(x) T_j(t)`` with cubic
B-splines on uniform knots. The penalty is the quadrature-discretised Gram
form of ``int int (v_t + L v)^2 dx dt`` plus a boundary-condition mismatch
term; penalty weights are tuned by generalized cross-validation.

Both quadratic forms are assembled from 1D factors through Kronecker
products, so the 2D case (``m_x**2 * m_t`` coefficients) stays cheap.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.interpolate import BSpline

from .evolution import ObservationSet
from .operators import BoundaryKind, Lap1D, Lap2D, SL1D
from .quadrature import simpson_grid

DEGREE = 3


class SingularSystem(np.linalg.LinAlgError):
    pass


class DegenerateGCV(RuntimeError):
    pass


def bspline_basis(a, b, m):
    """Cubic B-spline basis with ``m`` functions on uniform knots over [a, b]."""
    if m < DEGREE + 1:
        raise ValueError(f"need at least {DEGREE + 1} basis functions")
    interior = np.linspace(a, b, m - DEGREE + 1)[1:-1]
    knots = np.concatenate([[a] * (DEGREE + 1), interior, [b] * (DEGREE + 1)])
    return BSpline(knots, np.eye(m), DEGREE, extrapolate=False)


def _eval(spl, x, nu=0):
    x = np.asarray(x, dtype=float)
    a, b = spl.t[DEGREE], spl.t[-DEGREE - 1]
    out = spl(np.clip(x, a, b), nu)
    return np.nan_to_num(out)


def _rowwise_kron(A, B):
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)


@dataclass(frozen=True)
class PenalizedSpec:
    pde: object
    m_x: int = 9
    m_t: int = 9
    penalty_weight: float = 1.0
    boundary_penalty_weight: Optional[float] = None   # None: tie to penalty_weight
    quadrature_grid: Optional[tuple] = None           # (n_x, n_t)

    def __post_init__(self):
        if self.m_x < 4 or self.m_t < 4:
            raise ValueError("basis counts must be at least 4")
        if not self.penalty_weight > 0:
            raise ValueError("penalty_weight must be positive")
        if self.boundary_penalty_weight is not None and self.boundary_penalty_weight < 0:
            raise ValueError("boundary_penalty_weight must be nonnegative")
        if self.quadrature_grid is not None:
            nx, nt = self.quadrature_grid
            if nx < 4 * self.m_x or nt < 4 * self.m_t:
                raise ValueError("quadrature grid must be at least 4x the basis counts")

    @property
    def grid(self):
        return self.quadrature_grid or (4 * self.m_x + 1, 4 * self.m_t + 1)

    @property
    def domain(self):
        return self.pde.domain

    @property
    def dimension(self):
        return self.pde.domain.dimension

    @property
    def n_coef(self):
        return self.m_x ** self.dimension * self.m_t

    def mu(self, lam=None):
        if self.boundary_penalty_weight is not None:
            return self.boundary_penalty_weight
        return self.penalty_weight if lam is None else lam


class TensorBasis:
    """Space and time spline factors for a :class:`PenalizedSpec`."""

    def __init__(self, spec: PenalizedSpec):
        self.spec = spec
        dom = spec.domain
        self.space = [bspline_basis(a, b, spec.m_x) for a, b in dom.bounds]
        self.time = bspline_basis(0.0, dom.time_horizon, spec.m_t)

    def space_values(self, x, nu=0):
        """Space basis (n, m_x**d); ``nu`` is a per-axis derivative order tuple."""
        x = np.asarray(x, dtype=float)
        if self.spec.dimension == 1:
            nu = nu if isinstance(nu, int) else nu[0]
            return _eval(self.space[0], x.ravel(), nu)
        nu = (nu, nu) if isinstance(nu, int) else nu
        x = x.reshape(-1, 2)
        return _rowwise_kron(_eval(self.space[0], x[:, 0], nu[0]),
                             _eval(self.space[1], x[:, 1], nu[1]))

    def time_values(self, t, nu=0):
        return _eval(self.time, np.asarray(t, dtype=float).ravel(), nu)

    def design(self, x, t):
        return _rowwise_kron(self.space_values(x), self.time_values(t))

    def operator_values(self, x):
        """``L`` applied to each space basis function at ``x``."""
        pde = self.spec.pde
        if isinstance(pde, Lap1D):
            return -pde.diffusion * self.space_values(x, 2)
        if isinstance(pde, SL1D):
            xs = np.asarray(x, dtype=float).ravel()
            p = np.broadcast_to(pde.p(xs), xs.shape)[:, None]
            q = np.broadcast_to(pde.q(xs), xs.shape)[:, None]
            return (-self.space_values(xs, 2) + 2 * p * self.space_values(xs, 1)
                    + q * self.space_values(xs, 0))
        if isinstance(pde, Lap2D):
            return -pde.diffusion * (self.space_values(x, (2, 0))
                                     + self.space_values(x, (0, 2)))
        raise TypeError(f"unsupported operator {type(pde).__name__}")


def _space_quadrature(spec):
    nx, _ = spec.grid
    if spec.dimension == 1:
        (a, b), = spec.domain.bounds
        return simpson_grid(a, b, nx)
    (a1, b1), (a2, b2) = spec.domain.bounds
    x1, w1 = simpson_grid(a1, b1, nx)
    x2, w2 = simpson_grid(a2, b2, nx)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    return np.column_stack([X1.ravel(), X2.ravel()]), np.outer(w1, w2).ravel()


def _gram(A, w, B=None):
    B = A if B is None else B
    return A.T @ (w[:, None] * B)


@functools.lru_cache(maxsize=16)
def _cached_penalty(spec):
    return assemble_penalty(spec)


def assemble_penalty(spec: PenalizedSpec, basis: Optional[TensorBasis] = None):
    """Return ``(P_pde, P_boundary)``, both symmetric positive semidefinite.

    ``P_pde`` discretises ``int int (v_t + L v)^2``; ``P_boundary`` the
    squared boundary mismatch (Neumann: ``v_x`` at the ends; Dirichlet: ``v``;
    periodic: differences of ``v`` and ``v_x`` across opposite edges)
    integrated over time (and the transverse axis in 2D).
    """
    basis = basis or TensorBasis(spec)
    xq, wx = _space_quadrature(spec)
    tq, wt = simpson_grid(0.0, spec.domain.time_horizon, spec.grid[1])
    S = basis.space_values(xq)
    LS = basis.operator_values(xq)
    T = basis.time_values(tq)
    dT = basis.time_values(tq, 1)
    SS, SL, LL = _gram(S, wx), _gram(S, wx, LS), _gram(LS, wx)
    TT, TdT, dTdT = _gram(T, wt), _gram(T, wt, dT), _gram(dT, wt)
    P = (np.kron(SS, dTdT) + np.kron(SL, TdT.T) + np.kron(SL.T, TdT)
         + np.kron(LL, TT))
    P = 0.5 * (P + P.T)
    Pb = np.kron(_boundary_space_form(spec, basis), TT)
    Pb = 0.5 * (Pb + Pb.T)
    return P, Pb


def _boundary_rows(spl, a, b, kind):
    """Rows whose squares make up the 1D boundary mismatch along one axis."""
    ends = np.array([a, b])
    V, dV = _eval(spl, ends, 0), _eval(spl, ends, 1)
    if kind is BoundaryKind.NEUMANN:
        return dV
    if kind is BoundaryKind.DIRICHLET:
        return V
    return np.vstack([V[0] - V[1], dV[0] - dV[1]])


def _boundary_space_form(spec, basis):
    kind = spec.pde.boundary
    if spec.dimension == 1:
        (a, b), = spec.domain.bounds
        R = _boundary_rows(basis.space[0], a, b, kind)
        return R.T @ R
    (a1, b1), (a2, b2) = spec.domain.bounds
    nx = spec.grid[0]
    y1, w1 = simpson_grid(a1, b1, nx)
    y2, w2 = simpson_grid(a2, b2, nx)
    S1, S2 = _eval(basis.space[0], y1), _eval(basis.space[1], y2)
    R1 = _boundary_rows(basis.space[0], a1, b1, kind)
    R2 = _boundary_rows(basis.space[1], a2, b2, kind)
    return np.kron(R1.T @ R1, _gram(S2, w2)) + np.kron(_gram(S1, w1), R2.T @ R2)


@dataclass
class PenalizedFit:
    coefficients: np.ndarray
    lambda_pen_selected: float
    gcv_score: float
    rss: float
    edf: float = float("nan")
    spec: Optional[PenalizedSpec] = None

    def _coef_matrix(self):
        return self.coefficients.reshape(-1, self.spec.m_t)

    def evaluate(self, x, t):
        basis = TensorBasis(self.spec)
        S = basis.space_values(x)
        T = basis.time_values(np.broadcast_to(np.asarray(t, dtype=float).ravel(),
                                              (S.shape[0],)))
        return np.einsum("ni,ij,nj->n", S, self._coef_matrix(), T)

    def initial_condition(self, x):
        basis = TensorBasis(self.spec)
        return basis.space_values(x) @ (self._coef_matrix() @ basis.time_values([0.0])[0])

    def to_dict(self, operator=None, seed_meta=None):
        return {"coefficients": [float(c) for c in self.coefficients],
                "lambda_pen_selected": float(self.lambda_pen_selected),
                "gcv_score": float(self.gcv_score), "rss": float(self.rss),
                "edf": float(self.edf), "n_coef": int(self.coefficients.size),
                "operator": operator, "seed_meta": seed_meta}


class PenalizedSystem:
    """Cached normal-equation blocks for one data set, solvable for many weights."""

    def __init__(self, obs: ObservationSet, spec: PenalizedSpec):
        if spec.n_coef > obs.n:
            raise ValueError(f"{spec.n_coef} coefficients exceed n = {obs.n}")
        self.spec = spec
        self.obs = obs
        self.basis = TensorBasis(spec)
        self.B = self.basis.design(obs.x, obs.t)
        self.BtB = self.B.T @ self.B
        self.Btu = self.B.T @ obs.u
        self.P, self.Pb = _cached_penalty(spec)

    def solve(self, lam, mu=None) -> PenalizedFit:
        mu = self.spec.mu(lam) if mu is None else mu
        M = self.BtB + lam * self.P + mu * self.Pb
        try:
            cf = scipy.linalg.cho_factor(M, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"penalized system is singular at lambda={lam:g}") from exc
        d = np.diag(cf[0])
        if d.min() <= 1e-7 * d.max():
            raise SingularSystem(f"penalized system is singular at lambda={lam:g}")
        c = scipy.linalg.cho_solve(cf, self.Btu)
        r = self.obs.u - self.B @ c
        rss = float(r @ r)
        edf = float(np.trace(scipy.linalg.cho_solve(cf, self.BtB)))
        n = self.obs.n
        gcv = n * rss / (n - edf) ** 2 if edf < n else float("inf")
        return PenalizedFit(c, float(lam), gcv, rss, edf, self.spec)


def fit_penalized(obs: ObservationSet, spec: PenalizedSpec) -> PenalizedFit:
    """Solve ``(B^T B + lam P + mu P_bd) c = B^T U`` at the spec's weights."""
    return PenalizedSystem(obs, spec).solve(spec.penalty_weight)


def gcv_select(obs: ObservationSet, spec: PenalizedSpec, lambda_grid,
               system: Optional[PenalizedSystem] = None) -> PenalizedFit:
    """Minimise ``GCV = n rss / (n - tr H)^2`` over ``lambda_grid``.

    Ties go to the larger weight. Grid points whose system is singular are
    skipped.
    """
    grid = [float(v) for v in lambda_grid]
    if not grid or min(grid) <= 0:
        raise ValueError("lambda_grid must be nonempty and positive")
    system = system or PenalizedSystem(obs, spec)
    best = None
    for lam in grid:
        try:
            fit = system.solve(lam)
        except SingularSystem:
            continue
        if not fit.edf < obs.n:
            continue
        if (best is None or fit.gcv_score < best.gcv_score
                or (fit.gcv_score == best.gcv_score and lam > best.lambda_pen_selected)):
            best = fit
    if best is None:
        raise DegenerateGCV("tr H >= n (or singular system) for every lambda")
    return best


@functools.lru_cache(maxsize=16)
def _initial_quadrature(spec, quadrature_points):
    (a, b), = spec.domain.bounds
    x, w = simpson_grid(a, b, quadrature_points)
    basis = TensorBasis(spec)
    return x, w, basis.space_values(x), basis.time_values([0.0])[0]


def penalized_ise(fit: PenalizedFit, truth, eig, quadrature_points=4097) -> float:
    """``int (v_hat(x, 0) - g0(x))^2 dx`` by Simpson quadrature (1D)."""
    x, w, S, T0 = _initial_quadrature(fit.spec, quadrature_points)
    alpha = np.asarray(truth, dtype=float)
    g0 = eig.psi(x, alpha.size) @ alpha
    g_hat = S @ (fit._coef_matrix() @ T0)
    return float(w @ (g_hat - g0) ** 2)
