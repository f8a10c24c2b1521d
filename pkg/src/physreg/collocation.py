"""Spectral collocation building blocks: Chebyshev and Fourier grids."""

import numpy as np


def cheb(n):
    """Chebyshev extrema ``cos(pi j/(n-1))`` and the first-derivative matrix.

    Nodes are returned in descending order on ``[-1, 1]``, as in Trefethen's
    *Spectral Methods in MATLAB*; the diagonal uses the negative-sum trick.
    """
    if n < 2:
        raise ValueError("need at least two Chebyshev nodes")
    N = n - 1
    x = np.cos(np.pi * np.arange(n) / N)
    c = np.ones(n)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n)
    dx = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dx + np.eye(n))
    D -= np.diag(D.sum(axis=1))
    return x, D


def clenshaw_curtis_weights(n):
    """Quadrature weights on the ``n`` Chebyshev extrema of ``[-1, 1]``."""
    N = n - 1
    theta = np.pi * np.arange(n) / N
    w = np.zeros(n)
    v = np.ones(N - 1)
    inner = slice(1, N)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N ** 2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k ** 2 - 1)
        v -= np.cos(N * theta[inner]) / (N ** 2 - 1)
    else:
        w[0] = w[N] = 1.0 / N ** 2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k ** 2 - 1)
    w[inner] = 2.0 * v / N
    return w


def cheb_barycentric_weights(n):
    w = (-1.0) ** np.arange(n)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def barycentric_eval(nodes, weights, values, x):
    """Evaluate the polynomial interpolant of ``values`` (columns) at ``x``.

    ``values`` has shape ``(n_nodes, m)``; the result has shape ``(len(x), m)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    diff = x[:, None] - nodes[None, :]
    exact = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        C = weights[None, :] / diff
    hit = exact.any(axis=1)
    C[hit] = 0.0
    denom = C.sum(axis=1, keepdims=True)
    denom[hit] = 1.0
    out = (C @ values) / denom
    if hit.any():
        rows = np.nonzero(hit)[0]
        out[rows] = values[np.argmax(exact[rows], axis=1)]
    return out


def fourier_d2(n, length):
    """Second-derivative matrix on ``n`` (even) equispaced periodic points."""
    if n % 2:
        raise ValueError("Fourier collocation uses an even number of points")
    h = 2.0 * np.pi / n
    k = np.arange(n)
    col = np.empty(n)
    col[0] = -np.pi ** 2 / (3.0 * h ** 2) - 1.0 / 6.0
    col[1:] = -0.5 * (-1.0) ** k[1:] / np.sin(h * k[1:] / 2.0) ** 2
    idx = (k[:, None] - k[None, :]) % n
    return col[idx] * (2.0 * np.pi / length) ** 2


def trig_interp(values, a, length, x):
    """Evaluate the trigonometric interpolant of periodic samples (columns).

    Samples sit at ``a + length * j / n``; the Nyquist mode is split evenly so
    real data gives a real interpolant.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    coef = np.fft.fft(values, axis=0) / n
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    theta = 2.0 * np.pi * (np.atleast_1d(x) - a) / length
    E = np.exp(1j * np.outer(theta, freqs))
    if n % 2 == 0:
        nyq = n // 2
        E[:, nyq] = np.cos(nyq * theta)
    return (E @ coef).real
