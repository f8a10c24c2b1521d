"""Frame-stack data and the 2D periodic-diffusion workflow.

A :class:`FrameStack` holds ``F`` frames of an ``R x C`` pixel grid. Pixel
``(i, j)`` is centred at ``((i + 0.5) * px, (j + 0.5) * px)``; the first
spatial coordinate follows rows. Flattening is frame-major, then row, then
column, which is also the on-disk order of the binary format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .eigen import EigenSystem, analytic_eigensystem_periodic_2d
from .estimator import (NoFeasibleCutoff, SpectralFit, _better, build_design,
                        fit_streamed, select_K)
from .evolution import ObservationSet, substream
from .fileio import FLOAT_FMT, atomic_write_bytes, atomic_write_text, read_json, write_json

FRAME_LAG = 0.265            # seconds between consecutive frames
DESK_SIDE = 1.945e-4         # metres
DESK_DIFFUSION = 8.9e-11     # m^2 / s
DEFAULT_MEMORY_BUDGET = 256 * 2 ** 20   # bytes for an in-memory design matrix


def default_frame_times(frames, lag=FRAME_LAG, offset=0.0) -> np.ndarray:
    """``offset + lag * (1, 2, ..., frames)``: the first post-bleach frame is not t=0."""
    return offset + lag * np.arange(1, int(frames) + 1, dtype=float)


@dataclass(frozen=True, eq=False)
class FrameStack:
    values: np.ndarray          # (frames, rows, cols)
    pixel_size: float
    frame_times: np.ndarray
    D: float
    side_length: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        v = self.values
        if not isinstance(v, np.memmap):
            v = np.asarray(v, dtype=float)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3:
            raise ValueError("frame values must have shape (frames, rows, cols)")
        t = np.asarray(self.frame_times, dtype=float).ravel()
        if t.size != v.shape[0]:
            raise ValueError(f"{t.size} frame times for {v.shape[0]} frames")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("frame times must be strictly increasing")
        if np.any(t < 0):
            raise ValueError("frame times must be nonnegative")
        if not (self.pixel_size > 0):
            raise ValueError("pixel size must be positive")
        side = self.side_length
        if side is None:
            side = v.shape[2] * self.pixel_size
        elif abs(side - v.shape[2] * self.pixel_size) > 1e-6 * side:
            raise ValueError(f"side length {side} disagrees with "
                             f"{v.shape[2]} x {self.pixel_size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("frame values must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "frame_times", t)
        object.__setattr__(self, "side_length", float(side))
        object.__setattr__(self, "pixel_size", float(self.pixel_size))
        object.__setattr__(self, "D", float(self.D))

    @property
    def grid(self):
        return self.values.shape[1:]

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return int(np.prod(self.values.shape))

    @property
    def meta(self) -> dict:
        return {"grid": list(self.grid), "frames": self.frames,
                "pixel_size": self.pixel_size, "frame_times": self.frame_times.tolist(),
                "D": self.D, "side_length": self.side_length, **self.extra}

    def pixel_centers(self) -> np.ndarray:
        """``(R*C, 2)`` pixel centres in metres, row-major."""
        R, C = self.grid
        yy, xx = np.meshgrid((np.arange(R) + 0.5) * self.pixel_size,
                             (np.arange(C) + 0.5) * self.pixel_size, indexing="ij")
        return np.column_stack([yy.ravel(), xx.ravel()])

    def frame_rows(self, f0, f1):
        """Locations, times and values for frames ``f0:f1`` in flattened order."""
        pts = self.pixel_centers()
        m = pts.shape[0]
        k = f1 - f0
        x = np.tile(pts, (k, 1))
        t = np.repeat(self.frame_times[f0:f1], m)
        u = np.asarray(self.values[f0:f1], dtype=float).reshape(-1)
        return x, t, u

    def flatten(self) -> ObservationSet:
        x, t, u = self.frame_rows(0, self.frames)
        return ObservationSet(x, t, u, extra={"source": "frames"})

    def __eq__(self, other):
        if not isinstance(other, FrameStack):
            return NotImplemented
        return self.meta == other.meta and np.array_equal(self.values, other.values)


def _stack_from_meta(values, meta) -> FrameStack:
    extra = {k: v for k, v in meta.items()
             if k not in ("grid", "frames", "pixel_size", "frame_times", "D",
                          "side_length", "dtype", "order", "format", "files")}
    return FrameStack(values, meta["pixel_size"], meta["frame_times"], meta["D"],
                      meta.get("side_length"), extra)


def write_frames_binary(stack: FrameStack, path):
    """Little-endian float64, frame-major, plus a ``<stem>.json`` sidecar."""
    path = Path(path)
    data = np.ascontiguousarray(stack.values, dtype="<f8").tobytes()
    atomic_write_bytes(path, data)
    meta = {**stack.meta, "dtype": "<f8", "order": "frame-major", "format": "binary"}
    write_json(path.with_name(path.stem + ".json"), meta)
    return path


def read_frames_binary(path, mmap=False) -> FrameStack:
    path = Path(path)
    meta = read_json(path.with_name(path.stem + ".json"))
    shape = (int(meta["frames"]), *(int(g) for g in meta["grid"]))
    expected = int(np.prod(shape)) * 8
    if path.stat().st_size != expected:
        raise ValueError(f"{path} holds {path.stat().st_size} bytes, expected {expected}")
    if mmap:
        values = np.memmap(path, dtype="<f8", mode="r", shape=shape)
    else:
        values = np.fromfile(path, dtype="<f8").reshape(shape).astype(float)
    return _stack_from_meta(values, meta)


def write_frames_csv(stack: FrameStack, directory):
    """One ``frame_XXXX.csv`` per frame (rows x cols, no header) and ``meta.json``."""
    directory = Path(directory)
    names = []
    for f in range(stack.frames):
        name = f"frame_{f:04d}.csv"
        rows = (",".join(FLOAT_FMT % v for v in row) for row in stack.values[f])
        atomic_write_text(directory / name, "\n".join(rows) + "\n")
        names.append(name)
    write_json(directory / "meta.json", {**stack.meta, "format": "csv", "files": names})
    return directory


def read_frames_csv(directory) -> FrameStack:
    directory = Path(directory)
    meta = read_json(directory / "meta.json")
    frames = [np.loadtxt(directory / name, delimiter=",", ndmin=2) for name in meta["files"]]
    return _stack_from_meta(np.stack(frames), meta)


def read_frames(path, mmap=False) -> FrameStack:
    """Dispatch on a directory (CSV frames) or a file (binary frames)."""
    path = Path(path)
    return read_frames_csv(path) if path.is_dir() else read_frames_binary(path, mmap)


def average_stacks(stacks) -> FrameStack:
    """Pixelwise mean of compatible stacks (same grid, times, pixel size, D)."""
    stacks = list(stacks)
    if not stacks:
        raise ValueError("nothing to average")
    first = stacks[0]
    for s in stacks[1:]:
        if (s.values.shape != first.values.shape or s.pixel_size != first.pixel_size
                or s.D != first.D or not np.array_equal(s.frame_times, first.frame_times)):
            raise ValueError("stacks differ in grid, timing, pixel size or D")
    values = np.mean([np.asarray(s.values, dtype=float) for s in stacks], axis=0)
    return FrameStack(values, first.pixel_size, first.frame_times, first.D,
                      first.side_length, {"averaged": len(stacks)})


# -- synthetic data -----------------------------------------------------------

def bleach_spot(pts, side_length, depth=0.8, radius_fraction=0.15, center=(0.5, 0.5)):
    """Uniform field with a Gaussian bleached spot (periodic distance)."""
    L = side_length
    d = pts - np.asarray(center) * L
    d -= L * np.round(d / L)
    r2 = np.sum(d ** 2, axis=1)
    return 1.0 - depth * np.exp(-r2 / (2 * (radius_fraction * L) ** 2))


def project_onto_modes(values, eig: EigenSystem, pixel_size):
    """Midpoint-rule coefficients of a row-major grid field on ``eig``.

    For trigonometric modes below the grid's Nyquist frequency this is the exact
    discrete projection.
    """
    R, C = values.shape
    pts = _centers(R, C, pixel_size)
    return eig.psi(pts).T @ values.ravel() * pixel_size ** 2


def _centers(R, C, px):
    yy, xx = np.meshgrid((np.arange(R) + 0.5) * px, (np.arange(C) + 0.5) * px, indexing="ij")
    return np.column_stack([yy.ravel(), xx.ravel()])


@dataclass(frozen=True, eq=False)
class SyntheticFrames:
    stack: FrameStack
    truth: np.ndarray
    eig: EigenSystem
    clean: np.ndarray

    @property
    def initial_grid(self) -> np.ndarray:
        """The generating initial condition at pixel centres."""
        R, C = self.stack.grid
        pts = self.stack.pixel_centers()
        return (self.eig.psi(pts) @ self.truth).reshape(R, C)


def synthetic_frames(size=64, frames=20, sigma=0.0, seed=0, cutoff=(7, 7),
                     side_length=DESK_SIDE, D=DESK_DIFFUSION, in_span=True,
                     time_offset=0.0) -> SyntheticFrames:
    """Periodic-diffusion frames from a bleach-spot initial condition.

    With ``in_span`` the initial condition is the projection of the spot onto
    the ``cutoff`` modes, so a fit at that cutoff recovers it exactly. Otherwise
    the full spot is propagated through a ``(size-1, size-1)`` eigensystem,
    which is exact on the pixel grid up to the Nyquist frequency.
    """
    px = side_length / size
    times = default_frame_times(frames, offset=time_offset)
    spot = bleach_spot(_centers(size, size, px), side_length).reshape(size, size)
    fit_eig = analytic_eigensystem_periodic_2d(side_length, D, cutoff)
    if in_span:
        gen_eig = fit_eig
    else:
        gen_eig = analytic_eigensystem_periodic_2d(side_length, D, (size - 1, size - 1))
    truth = project_onto_modes(spot, gen_eig, px)
    pts = _centers(size, size, px)
    Psi = gen_eig.psi(pts)
    clean = np.stack([(Psi * np.exp(-gen_eig.eigenvalues * t)) @ truth
                      for t in times]).reshape(frames, size, size)
    values = clean
    if sigma > 0:
        values = clean + sigma * substream(seed, 0).standard_normal(clean.shape)
    extra = {"synthetic": {"sigma": float(sigma), "seed": int(seed), "cutoff": list(cutoff),
                           "in_span": bool(in_span)}}
    stack = FrameStack(values, px, times, D, side_length, extra)
    return SyntheticFrames(stack, truth, gen_eig, clean)


# -- fitting ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FrapResult:
    fit: SpectralFit
    eig: EigenSystem
    residuals: np.ndarray            # (frames, rows, cols), observed - fitted
    initial_condition: np.ndarray    # (rows, cols) at pixel centres
    streamed: bool
    cutoff: Optional[tuple] = None

    @property
    def residual_rms(self) -> float:
        return float(np.sqrt(np.mean(self.residuals ** 2)))

    @property
    def residual_max(self) -> float:
        return float(np.max(np.abs(self.residuals)))

    def to_dict(self, stack: Optional[FrameStack] = None) -> dict:
        d = self.fit.to_dict()
        d.update(cutoff=list(self.cutoff) if self.cutoff else None,
                 parameters=self.fit.K, streamed=self.streamed,
                 mode_labels=[list(lab) for lab in self.eig.labels[:self.fit.K]],
                 eigenvalues=self.eig.eigenvalues[:self.fit.K].tolist(),
                 residual_rms=self.residual_rms, residual_max=self.residual_max)
        if stack is not None:
            d["frames"] = {k: v for k, v in stack.meta.items() if k != "frame_times"}
            d["signal_rms"] = signal_rms(stack)
        return d


def signal_rms(stack: FrameStack) -> float:
    total = 0.0
    for f in range(stack.frames):
        v = np.asarray(stack.values[f], dtype=float)
        total += float(np.sum(v * v))
    return math.sqrt(total / stack.n)


def frame_chunks(stack: FrameStack, eig: EigenSystem, K, frames_per_chunk=1):
    """Design blocks over consecutive frame ranges, in frame order."""
    def factory():
        for f0 in range(0, stack.frames, frames_per_chunk):
            f1 = min(f0 + frames_per_chunk, stack.frames)
            x, t, u = stack.frame_rows(f0, f1)
            yield build_design(x, eig, K, t=t), u
    return factory


def _tensor_for_count(stack, kmax):
    m = 2 * math.isqrt(max(kmax - 1, 0)) + 3
    return analytic_eigensystem_periodic_2d(stack.side_length, stack.D, (m, m))


def frap_fit(stack: FrameStack, cutoff=None, k_range=None,
             memory_budget=DEFAULT_MEMORY_BUDGET, frames_per_chunk=1,
             force_streamed=False) -> FrapResult:
    """Fit the periodic-diffusion spectral estimator to a frame stack.

    Give either ``cutoff = (K1, K2)`` for a tensor fit with ``K1*K2`` modes or
    ``k_range`` (mode counts) for BIC selection. When ``n*K`` doubles would
    exceed ``memory_budget`` the normal equations are accumulated frame chunk
    by frame chunk in a fixed order instead of forming the full design.
    """
    if (cutoff is None) == (k_range is None):
        raise ValueError("give exactly one of cutoff or k_range")
    if not (stack.D > 0):
        raise ValueError("diffusion constant must be positive")
    R, C = stack.grid
    if R != C:
        raise ValueError("the periodic eigensystem needs a square frame grid")
    n = stack.n
    if cutoff is not None:
        cutoff = tuple(int(k) for k in cutoff)
        eig = analytic_eigensystem_periodic_2d(stack.side_length, stack.D, cutoff)
        ks = [eig.count]
    else:
        ks = sorted(set(int(k) for k in k_range))
        if not ks or ks[0] < 1:
            raise ValueError("k_range must hold positive mode counts")
        eig = _tensor_for_count(stack, ks[-1])
    if ks[0] > n:
        raise ValueError(f"{ks[0]} parameters exceed the {n} observations")
    ks = [k for k in ks if k <= n]
    streamed = force_streamed or n * ks[-1] * 8 > memory_budget

    if not streamed:
        best = select_K(stack.flatten(), eig, ks)
    else:
        best, table, skipped = None, {}, []
        for K in ks:
            try:
                fit = fit_streamed(frame_chunks(stack, eig, K, frames_per_chunk), eig, K)
            except np.linalg.LinAlgError:
                skipped.append(K)
                continue
            table[str(K)] = fit.bic
            if best is None or _better(fit.bic, best.bic):
                best = fit
        if best is None:
            raise NoFeasibleCutoff(f"every cutoff in {ks[0]}..{ks[-1]} is rank deficient")
        best.diagnostics.update(bic_table=table, rank_deficient=skipped)

    K = best.K
    res = np.empty(stack.values.shape)
    for f in range(stack.frames):
        x, t, u = stack.frame_rows(f, f + 1)
        res[f] = (u - build_design(x, eig, K, t=t) @ best.alpha_hat).reshape(R, C)
    g0 = (eig.psi(stack.pixel_centers(), K) @ best.alpha_hat).reshape(R, C)
    return FrapResult(best, eig, res, g0, streamed, cutoff)


def grid_ise(estimate, truth, pixel_size) -> float:
    """Midpoint-rule ``int (estimate - truth)^2`` over the square.

    Exact when both fields are trigonometric polynomials below the grid's
    Nyquist frequency, as for the synthetic frames.
    """
    d = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.sum(d * d) * pixel_size ** 2)


def residual_stack(result: FrapResult, stack: FrameStack) -> FrameStack:
    return FrameStack(result.residuals, stack.pixel_size, stack.frame_times, stack.D,
                      stack.side_length, {"residuals_of_fit_K": result.fit.K})
