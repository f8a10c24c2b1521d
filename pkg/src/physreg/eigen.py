"""Orthonormal eigensystems of the supported spatial operators.

An :class:`EigenSystem` stores eigenvalues in ascending order together with a
vectorised evaluator for the orthonormal eigenfunctions ``phi_k`` of the
symmetrized operator. The eigenfunctions of the original operator are
``psi_k = w * phi_k`` when a :class:`~physreg.operators.Symmetrizer` is
attached and ``psi_k = phi_k`` otherwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import collocation
from .operators import (BoundaryKind, DomainSpec, Lap1D, SL1D, Symmetrizer,
                        symmetrize)
from .quadrature import simpson_grid


class MultiplicityWarning(UserWarning):
    """Raised when a computed spectrum has (numerically) repeated eigenvalues."""


@dataclass(frozen=True, eq=False)
class EigenSystem:
    eigenvalues: np.ndarray
    basis: Callable
    domain: DomainSpec
    provenance: str = "analytic"
    grid_size: Optional[int] = None
    weight: Optional[Symmetrizer] = None
    labels: Optional[tuple] = None
    scales: Optional[np.ndarray] = None

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        if lam.ndim != 1 or lam.size < 1:
            raise ValueError("an eigensystem needs at least one eigenvalue")
        if np.any(np.diff(lam) < 0):
            raise ValueError("eigenvalues must be sorted ascending")

    @property
    def count(self) -> int:
        return self.eigenvalues.size

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    def points(self, x) -> np.ndarray:
        """Coerce ``x`` to an ``(n, d)`` array of spatial points."""
        x = np.asarray(x, dtype=float)
        return x.reshape(-1, self.domain.dimension)

    def _count(self, count):
        if count is None:
            return self.count
        if not 1 <= count <= self.count:
            raise ValueError(f"count must lie in [1, {self.count}], got {count}")
        return int(count)

    def phi(self, x, count=None) -> np.ndarray:
        count = self._count(count)
        vals = self.basis(self.points(x), count)
        if self.scales is not None:
            vals = vals * self.scales[:count]
        return vals

    def psi(self, x, count=None) -> np.ndarray:
        vals = self.phi(x, count)
        if self.weight is not None:
            pts = self.points(x)[:, 0]
            vals = vals * self.weight.weight(pts)[:, None]
        return vals

    def inverse_weight(self, x) -> np.ndarray:
        pts = self.points(x)
        if self.weight is None:
            return np.ones(pts.shape[0])
        return self.weight.inverse_weight(pts[:, 0])

    @property
    def pairs(self):
        """List of ``(lambda_k, psi_k, phi_k)`` with scalar-friendly callables."""
        out = []
        for k in range(self.count):
            def psi_k(x, k=k):
                return self.psi(x, k + 1)[:, k]

            def phi_k(x, k=k):
                return self.phi(x, k + 1)[:, k]
            out.append((float(self.eigenvalues[k]), psi_k, phi_k))
        return out

    def truncate(self, count) -> "EigenSystem":
        count = self._count(count)
        labels = None if self.labels is None else self.labels[:count]
        scales = None if self.scales is None else self.scales[:count]
        return replace(self, eigenvalues=self.eigenvalues[:count],
                       labels=labels, scales=scales)

    def rescaled(self, scales) -> "EigenSystem":
        """Copy with ``phi_k`` (hence ``psi_k``) multiplied by ``scales[k]``."""
        scales = np.asarray(scales, dtype=float)
        if scales.shape != (self.count,):
            raise ValueError("need one scale per mode")
        base = np.ones(self.count) if self.scales is None else self.scales
        return replace(self, scales=base * scales)


# -- analytic systems ---------------------------------------------------------

def analytic_eigensystem_neumann_1d(count, diffusion=1.0, domain=None) -> EigenSystem:
    """Cosine eigensystem of ``-D d^2/dx^2`` with Neumann ends.

    On ``[a, b]`` the eigenpairs are ``lambda = D (j pi / L)^2`` and
    ``sqrt(2/L) cos(j pi (x - a) / L)`` for ``j = 0, 1, ...`` (the constant
    ``1/sqrt(L)`` for ``j = 0``), with ``L = b - a``.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if not diffusion > 0:
        raise ValueError("diffusion must be positive")
    domain = domain or DomainSpec.interval()
    if domain.dimension != 1:
        raise ValueError("expected a one-dimensional domain")
    (a, b), = domain.bounds
    L = b - a
    j = np.arange(count)
    lam = diffusion * (j * np.pi / L) ** 2

    def basis(pts, m):
        s = (pts[:, 0] - a) / L
        out = np.sqrt(2.0 / L) * np.cos(np.pi * np.outer(s, j[:m]))
        out[:, 0] = 1.0 / np.sqrt(L)
        return out

    return EigenSystem(lam, basis, domain, "analytic",
                       labels=tuple((int(v),) for v in j))


def _fourier_1d(m_count):
    """(frequency, kind) for the 1D real Fourier basis 1, cos1, sin1, cos2, ..."""
    out = []
    for m in range(m_count):
        j = (m + 1) // 2
        kind = 0 if (m == 0 or m % 2 == 1) else 1   # 0 = cos, 1 = sin
        out.append((j, kind))
    return out


def _fourier_table(s, L, modes):
    """Evaluate normalised 1D Fourier functions at ``s`` (offset from origin)."""
    out = np.empty((s.size, len(modes)))
    for col, (j, kind) in enumerate(modes):
        if j == 0:
            out[:, col] = 1.0 / np.sqrt(L)
        elif kind == 0:
            out[:, col] = np.sqrt(2.0 / L) * np.cos(2 * np.pi * j * s / L)
        else:
            out[:, col] = np.sqrt(2.0 / L) * np.sin(2 * np.pi * j * s / L)
    return out


def analytic_eigensystem_periodic_2d(side_length, diffusion, cutoff,
                                     domain=None) -> EigenSystem:
    """Tensor real-Fourier eigensystem of ``-D Laplacian`` on a periodic square.

    ``cutoff = (K1, K2)`` keeps the first ``K1`` functions of the 1D real
    Fourier basis ``1, cos, sin, cos 2, sin 2, ...`` on axis 1 and the first
    ``K2`` on axis 2, giving ``K1 * K2`` modes. Modes are sorted by eigenvalue,
    ties broken by ``(j1, j2, kind1, kind2)`` with cosine before sine.
    """
    K1, K2 = (int(k) for k in cutoff)
    if K1 < 1 or K2 < 1:
        raise ValueError("per-axis cutoffs must be at least 1")
    L = float(side_length)
    domain = domain or DomainSpec.square(L)
    if domain.dimension != 2:
        raise ValueError("expected a two-dimensional domain")
    la, lb = domain.lengths
    if not (np.isclose(la, lb, rtol=1e-12, atol=0.0) and np.isclose(la, L, rtol=1e-12, atol=0.0)):
        raise ValueError("periodic 2D eigensystem requires a square domain of the given side")
    m1, m2 = _fourier_1d(K1), _fourier_1d(K2)
    modes = [(a, b) for a in range(K1) for b in range(K2)]
    key = lambda ab: (m1[ab[0]][0] ** 2 + m2[ab[1]][0] ** 2,
                      m1[ab[0]][0], m2[ab[1]][0], m1[ab[0]][1], m2[ab[1]][1])
    modes.sort(key=key)
    idx1 = np.array([a for a, _ in modes])
    idx2 = np.array([b for _, b in modes])
    freq2 = np.array([key(ab)[0] for ab in modes], dtype=float)
    lam = diffusion * (2 * np.pi / L) ** 2 * freq2
    (o1, _), (o2, _) = domain.bounds

    def basis(pts, m):
        F1 = _fourier_table(pts[:, 0] - o1, L, m1)
        F2 = _fourier_table(pts[:, 1] - o2, L, m2)
        return F1[:, idx1[:m]] * F2[:, idx2[:m]]

    labels = tuple((m1[a][0], m2[b][0], "cs"[m1[a][1]] + "cs"[m2[b][1]])
                   for a, b in modes)
    return EigenSystem(lam, basis, domain, "analytic", labels=labels)


# -- collocation --------------------------------------------------------------

def _fix_sign(vecs, tol=1e-10):
    for k in range(vecs.shape[1]):
        v = vecs[:, k]
        nz = np.nonzero(np.abs(v) > tol * np.abs(v).max())[0]
        if nz.size and v[nz[0]] < 0:
            vecs[:, k] = -v
    return vecs


def _order_ties(vals, vecs, rel=1e-10):
    """Sort ascending; inside numerically repeated clusters sort by grid values."""
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    scale = max(1.0, float(np.abs(vals).max()))
    repeated = np.diff(vals) <= rel * scale
    if repeated.any():
        warnings.warn("repeated eigenvalues detected; modes kept as distinct "
                      "indices", MultiplicityWarning, stacklevel=3)
        start = 0
        for i in range(1, vals.size + 1):
            if i == vals.size or not repeated[i - 1]:
                if i - start > 1:
                    block = list(range(start, i))
                    block.sort(key=lambda c: tuple(np.round(vecs[:, c], 12)))
                    vecs[:, start:i] = vecs[:, block]
                start = i
    return vals, vecs


def numeric_eigensystem(spec, boundary=None, count=10, resolution=128) -> EigenSystem:
    """Lowest ``count`` eigenpairs of a 1D operator by spectral collocation.

    The symmetrized operator ``-c d^2/dx^2 + q~(x)`` is discretised with
    Chebyshev-extrema collocation (Neumann, Dirichlet) or equispaced Fourier
    collocation (periodic). Boundary conditions are imposed on the
    symmetrized eigenfunctions. Grid vectors are normalised to unit L2 norm,
    signed so that the first nonzero grid value is positive, and interpolated
    (barycentric or trigonometric) to give evaluable eigenfunctions.
    """
    if not isinstance(spec, (Lap1D, SL1D)):
        raise TypeError("numeric_eigensystem handles Lap1D and SL1D operators")
    boundary = BoundaryKind(boundary if boundary is not None else spec.boundary)
    N = int(resolution)
    if count < 1 or 3 * count > N:
        raise ValueError(f"count must be in [1, N/3] = [1, {N // 3}]")
    if isinstance(spec, SL1D):
        sym = symmetrize(spec)
        c = 1.0
        potential = sym.transformed_potential
    else:
        sym = None
        c = spec.diffusion
        potential = None
    (a, b), = spec.domain.bounds
    L = b - a

    if boundary is BoundaryKind.PERIODIC:
        if N % 2:
            N += 1
        y = a + L * np.arange(N) / N
        A = -c * collocation.fourier_d2(N, L)
        if potential is not None:
            A += np.diag(np.broadcast_to(potential(y), y.shape))
        vals, vecs = scipy.linalg.eigh(A)
        vals, vecs = vals[:count], vecs[:, :count].copy()
        vecs /= np.sqrt((vecs ** 2).sum(axis=0) * L / N)

        def interp(pts, values):
            return collocation.trig_interp(values, a, L, pts)
    else:
        xs, D = collocation.cheb(N)
        xs, D = xs[::-1], D[::-1, ::-1]
        y = a + L * (xs + 1.0) / 2.0
        D1 = D * (2.0 / L)
        A = -c * (D1 @ D1)
        if potential is not None:
            A += np.diag(np.broadcast_to(potential(y), y.shape))
        inner = slice(1, N - 1)
        ends = [0, N - 1]
        if boundary is BoundaryKind.DIRICHLET:
            Aeff = A[inner, inner]
            E = np.zeros((2, N - 2))
        else:
            Bnd = D1[np.ix_(ends, ends)]
            C = D1[ends, inner]
            E = -np.linalg.solve(Bnd, C)      # boundary values from interior
            Aeff = A[inner, inner] + A[inner, :][:, ends] @ E
        vals, vint = scipy.linalg.eig(Aeff)
        order = np.argsort(vals.real, kind="stable")[:count]
        if np.abs(vals[order].imag).max() > 1e-8 * max(1.0, np.abs(vals[order].real).max()):
            raise np.linalg.LinAlgError("collocation spectrum is not real")
        vals = vals[order].real
        vint = vint[:, order].real
        vecs = np.zeros((N, count))
        vecs[inner] = vint
        vecs[ends] = E @ vint
        w_cc = collocation.clenshaw_curtis_weights(N) * (L / 2.0)
        vecs /= np.sqrt((w_cc[:, None] * vecs ** 2).sum(axis=0))
        bw = collocation.cheb_barycentric_weights(N)

        def interp(pts, values):
            return collocation.barycentric_eval(y, bw, values, pts)

    vecs = _fix_sign(vecs)
    vals, vecs = _order_ties(vals, vecs)
    grid_values = vecs

    def basis(pts, m):
        return interp(pts[:, 0], grid_values[:, :m])

    return EigenSystem(vals, basis, spec.domain, "collocation", grid_size=N,
                       weight=sym)


def verify_orthonormality(eig: EigenSystem, quadrature_points=4096) -> float:
    """Max deviation of the Gram matrix of ``phi_k`` from the identity.

    Composite Simpson quadrature, tensorised on a square grid in 2D.
    """
    K = eig.count
    if eig.domain.dimension == 1:
        (a, b), = eig.domain.bounds
        x, w = simpson_grid(a, b, quadrature_points)
        Phi = eig.phi(x)
        G = Phi.T @ (w[:, None] * Phi)
    else:
        (a1, b1), (a2, b2) = eig.domain.bounds
        x1, w1 = simpson_grid(a1, b1, quadrature_points)
        x2, w2 = simpson_grid(a2, b2, quadrature_points)
        G = np.zeros((K, K))
        chunk = max(1, 8192 // x2.size)
        for i0 in range(0, x1.size, chunk):
            xi = x1[i0:i0 + chunk]
            pts = np.column_stack([np.repeat(xi, x2.size), np.tile(x2, xi.size)])
            ww = np.outer(w1[i0:i0 + chunk], w2).ravel()
            Phi = eig.phi(pts)
            G += Phi.T @ (ww[:, None] * Phi)
    return float(np.abs(G - np.eye(K)).max())
