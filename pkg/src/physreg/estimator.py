"""Truncated eigenbasis least-squares estimator of the initial condition.

The design matrix has entries ``Z[i, k] = exp(-lambda_k T_i) psi_k(X_i)``;
the coefficients of the estimated initial value ``g_hat = sum a_k psi_k``
minimise ``sum_i (U_i - Z_i . a)^2``. The cutoff ``K`` is chosen by BIC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.linalg

from .eigen import EigenSystem
from .evolution import ObservationSet, as_coefficients, propagate
from .quadrature import simpson_grid

RANK_RTOL = 1e-10
# residual sums below this fraction of ||U||^2 count as an exact fit
DEGENERATE_RSS_RTOL = 1e-20
BIC_TIE_ATOL = 1e-9
# Gram eigenvalue ratio below which the normal equations are treated as singular
GRAM_RTOL = 1e-14


class RankDeficient(np.linalg.LinAlgError):
    def __init__(self, rank, K):
        super().__init__(f"design has numerical rank {rank} < K = {K}")
        self.rank = rank
        self.K = K


class NoFeasibleCutoff(RuntimeError):
    pass


@dataclass(frozen=True)
class TheoryParams:
    """Rate exponents: operator smoothness ``r``, coefficient decay ``s``,
    moment exponent ``c``."""

    r: float
    s: float
    c: float = 0.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if self.r < 1 - self.c / 2:
            raise ValueError("need r >= 1 - c/2")
        if not self.s > (self.r + self.c) / 2:
            raise ValueError("need s > (r + c)/2")

    @property
    def rate_exponent(self) -> float:
        """Exponent of ``n`` in the ISE rate (negative)."""
        return -(2 * self.s - 1) / (self.r + 2 * self.s)

    def optimal_cutoff(self, n) -> float:
        return n ** (1.0 / (self.r + 2 * self.s))


@dataclass
class SpectralFit:
    K: int
    alpha_hat: np.ndarray
    rss: float
    bic: float
    gram_condition: float
    nu_hat: float
    n: int = 0
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, operator=None, seed_meta=None) -> dict:
        return {
            "K": int(self.K),
            "alpha_hat": [float(a) for a in self.alpha_hat],
            "rss": float(self.rss),
            "bic": float(self.bic),
            "gram_condition": float(self.gram_condition),
            "nu_hat": float(self.nu_hat),
            "n": int(self.n),
            "operator": operator,
            "seed_meta": seed_meta,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d) -> "SpectralFit":
        return cls(int(d["K"]), np.asarray(d["alpha_hat"], dtype=float),
                   float(d["rss"]), float(d["bic"]), float(d["gram_condition"]),
                   float(d["nu_hat"]), int(d.get("n", 0)),
                   dict(d.get("diagnostics") or {}))


def build_design(obs_or_x, eig: EigenSystem, K, t=None) -> np.ndarray:
    """``n x K`` matrix of damped eigenfunction values at the observations."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if K > eig.count:
        raise ValueError(f"K = {K} exceeds the {eig.count} available modes")
    if isinstance(obs_or_x, ObservationSet):
        x, t = obs_or_x.x, obs_or_x.t
    else:
        x = obs_or_x
    pts = eig.points(x)
    t = np.asarray(t, dtype=float).ravel()
    return np.exp(-np.outer(t, eig.eigenvalues[:K])) * eig.psi(pts, K)


def _qr_solve(Z, u):
    Q, R, piv = scipy.linalg.qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = RANK_RTOL * np.linalg.norm(R, 2)
    rank = int(np.sum(diag > tol))
    if rank < Z.shape[1]:
        raise RankDeficient(rank, Z.shape[1])
    coef = np.empty(Z.shape[1])
    coef[piv] = scipy.linalg.solve_triangular(R, Q.T @ u)
    sv = scipy.linalg.svdvals(R)
    return coef, sv


def solve_ls(design, u) -> np.ndarray:
    """Least-squares coefficients via column-pivoted QR.

    Raises :class:`RankDeficient` when the numerical rank (tolerance
    ``1e-10 * ||Z||``) is below the number of columns.
    """
    Z = np.asarray(design, dtype=float)
    u = np.asarray(u, dtype=float).ravel()
    if Z.shape[0] < Z.shape[1]:
        raise RankDeficient(Z.shape[0], Z.shape[1])
    order = canonical_order(Z, u)
    return _qr_solve(Z[order], u[order])[0]


def canonical_order(Z, u):
    """Row order sorted on ``(Z row, u)`` so that row permutations are exact no-ops."""
    return np.lexsort(np.column_stack([Z, u]).T[::-1])


def bic(rss, n, K) -> float:
    """``n log(rss/n) + log(n) K``; ``-inf`` when ``rss == 0``."""
    if n < 1:
        raise ValueError("n must be positive")
    if rss < 0:
        raise ValueError("rss must be nonnegative")
    if rss == 0:
        return -math.inf
    return n * math.log(rss / n) + math.log(n) * K


def fit_fixed_K(obs: ObservationSet, eig: EigenSystem, K, design=None) -> SpectralFit:
    Z = build_design(obs, eig, K) if design is None else design[:, :K]
    if Z.shape[0] < K:
        raise RankDeficient(Z.shape[0], K)
    order = canonical_order(Z, obs.u)
    Z, u = Z[order], obs.u[order]
    alpha, sv = _qr_solve(Z, u)
    resid = u - Z @ alpha
    rss = float(resid @ resid)
    if rss <= DEGENERATE_RSS_RTOL * float(u @ u):
        rss_for_bic = 0.0
    else:
        rss_for_bic = rss
    n = obs.n
    return SpectralFit(
        K=int(K), alpha_hat=alpha, rss=rss, bic=bic(rss_for_bic, n, K),
        gram_condition=float((sv[0] / sv[-1]) ** 2),
        nu_hat=float(sv[-1] ** 2 / n), n=n,
        diagnostics={"degenerate_rss": rss_for_bic == 0.0},
    )


def default_k_range(n, theory: Optional[TheoryParams] = None, factor=3.0, k_max=None):
    if theory is not None:
        hi = math.ceil(factor * theory.optimal_cutoff(n))
    else:
        hi = min(20, n // 10)
    hi = max(1, hi)
    if k_max is not None:
        hi = min(hi, k_max)
    return range(1, hi + 1)


def select_K(obs: ObservationSet, eig: EigenSystem, k_range=None,
             theory: Optional[TheoryParams] = None) -> SpectralFit:
    """Fit every ``K`` in ``k_range`` and keep the BIC minimiser.

    Ties within ``1e-9`` go to the smaller ``K``; rank-deficient cutoffs are
    skipped and listed in ``diagnostics['rank_deficient']``.
    """
    if k_range is None:
        k_range = default_k_range(obs.n, theory, k_max=eig.count)
    ks = sorted(int(k) for k in k_range)
    if not ks or ks[0] < 1 or ks[-1] > eig.count:
        raise ValueError(f"k_range must lie within [1, {eig.count}]")
    full = build_design(obs, eig, ks[-1])
    best = None
    table = {}
    skipped = []
    for K in ks:
        try:
            fit = fit_fixed_K(obs, eig, K, design=full)
        except RankDeficient:
            skipped.append(K)
            continue
        table[K] = fit.bic
        if best is None or _better(fit.bic, best.bic):
            best = fit
    if best is None:
        raise NoFeasibleCutoff(f"every K in {ks[0]}..{ks[-1]} is rank deficient")
    best.diagnostics.update(bic_table={str(k): v for k, v in table.items()},
                            rank_deficient=skipped)
    return best


def _better(candidate, incumbent):
    if candidate == incumbent:
        return False
    if math.isinf(candidate) or math.isinf(incumbent):
        return candidate < incumbent
    return candidate < incumbent - BIC_TIE_ATOL


def predict(fit: SpectralFit, eig: EigenSystem, x, t):
    return propagate(fit.alpha_hat, eig, x, t)


def _alpha(fit_or_alpha):
    if isinstance(fit_or_alpha, SpectralFit):
        return np.asarray(fit_or_alpha.alpha_hat, dtype=float)
    return as_coefficients(fit_or_alpha)


def ise(fit, truth, eig: Optional[EigenSystem] = None) -> float:
    """Coefficient-space ``||g_hat - g0||^2``: estimation error plus tail."""
    a = _alpha(fit)
    alpha = as_coefficients(truth, eig)
    m = max(a.size, alpha.size)
    d = np.zeros(m)
    d[:a.size] += a
    d[:alpha.size] -= alpha
    return float(d @ d)


def ise_quadrature(fit, truth, eig: EigenSystem, quadrature_points=4097) -> float:
    """``int |M^{-1}(g_hat - g0)|^2`` by composite Simpson quadrature."""
    a = _alpha(fit)
    alpha = as_coefficients(truth, eig)
    m = max(a.size, alpha.size)
    d = np.zeros(m)
    d[:a.size] += a
    d[:alpha.size] -= alpha
    if eig.domain.dimension == 1:
        (lo, hi), = eig.domain.bounds
        x, w = simpson_grid(lo, hi, quadrature_points)
        diff = (eig.psi(x, m) @ d) * eig.inverse_weight(x)
        return float(w @ diff ** 2)
    (a1, b1), (a2, b2) = eig.domain.bounds
    x1, w1 = simpson_grid(a1, b1, quadrature_points)
    x2, w2 = simpson_grid(a2, b2, quadrature_points)
    total = 0.0
    for i, xi in enumerate(x1):
        pts = np.column_stack([np.full(x2.size, xi), x2])
        total += w1[i] * float(w2 @ (eig.psi(pts, m) @ d) ** 2)
    return total


def empirical_gram_min_eig(design) -> float:
    """Smallest eigenvalue of ``Z^T Z / n``."""
    Z = np.asarray(design, dtype=float)
    G = Z.T @ Z / Z.shape[0]
    return float(max(np.linalg.eigvalsh(G)[0], 0.0))


# -- streamed normal equations ------------------------------------------------

@dataclass
class NormalEquations:
    gram: np.ndarray
    rhs: np.ndarray
    uu: float
    n: int


def accumulate_normal_equations(chunks: Iterable, K) -> NormalEquations:
    """Sum ``Z^T Z`` and ``Z^T U`` over ``(Z_chunk, u_chunk)`` pairs in order."""
    G = np.zeros((K, K))
    b = np.zeros(K)
    uu = 0.0
    n = 0
    for Z, u in chunks:
        G += Z.T @ Z
        b += Z.T @ u
        uu += float(u @ u)
        n += u.size
    return NormalEquations(G, b, uu, n)


def design_chunks(obs: ObservationSet, eig: EigenSystem, K, chunk_rows=65536):
    """Yield design blocks for consecutive row ranges of ``obs``."""
    for i0 in range(0, obs.n, chunk_rows):
        sl = slice(i0, i0 + chunk_rows)
        x = obs.x[sl]
        yield build_design(x, eig, K, t=obs.t[sl]), obs.u[sl]


def solve_normal(ne: NormalEquations) -> tuple:
    """Solve ``G a = b`` through a symmetric eigendecomposition with rank check."""
    K = ne.rhs.size
    evals, evecs = np.linalg.eigh(ne.gram)
    if evals[-1] <= 0 or evals[0] <= GRAM_RTOL * evals[-1]:
        rank = int(np.sum(evals > GRAM_RTOL * max(evals[-1], 0.0)))
        raise RankDeficient(rank, K)
    alpha = evecs @ ((evecs.T @ ne.rhs) / evals)
    return alpha, evals


def fit_streamed(chunk_factory: Callable, eig: EigenSystem, K) -> SpectralFit:
    """Fixed-``K`` fit from a re-iterable stream of design blocks.

    ``chunk_factory()`` must return a fresh iterator of ``(Z, u)`` blocks in a
    fixed order. One pass accumulates the normal equations, a second pass
    computes the residual sum of squares.
    """
    ne = accumulate_normal_equations(chunk_factory(), K)
    alpha, evals = solve_normal(ne)
    rss = 0.0
    for Z, u in chunk_factory():
        r = u - Z @ alpha
        rss += float(r @ r)
    rss_for_bic = 0.0 if rss <= DEGENERATE_RSS_RTOL * ne.uu else rss
    return SpectralFit(
        K=int(K), alpha_hat=alpha, rss=rss, bic=bic(rss_for_bic, ne.n, K),
        gram_condition=float(evals[-1] / evals[0]),
        nu_hat=float(evals[0] / ne.n), n=ne.n,
        diagnostics={"solver": "streamed-normal-equations"},
    )
