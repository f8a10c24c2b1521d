import numpy as np
import pytest

from physreg.estimator import ise
from physreg.frap import (DESK_DIFFUSION, DESK_SIDE, FrameStack, average_stacks,
                          default_frame_times, frap_fit, grid_ise, read_frames,
                          read_frames_binary, residual_stack, signal_rms, synthetic_frames,
                          write_frames_binary, write_frames_csv)


@pytest.fixture(scope="module")
def clean():
    return synthetic_frames(sigma=0.0)


@pytest.fixture(scope="module")
def noisy():
    return synthetic_frames(sigma=0.05, seed=1)


def test_frame_times_start_after_bleach():
    t = default_frame_times(3)
    np.testing.assert_allclose(t, [0.265, 0.53, 0.795])
    np.testing.assert_allclose(default_frame_times(2, offset=1.0), [1.265, 1.53])


def test_stack_invariants():
    v = np.zeros((2, 4, 4))
    with pytest.raises(ValueError):
        FrameStack(v, 1.0, [0.2, 0.1], 1.0)
    with pytest.raises(ValueError):
        FrameStack(v, 1.0, [0.1, 0.2], 1.0, side_length=4.1)
    bad = v.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        FrameStack(bad, 1.0, [0.1, 0.2], 1.0)
    s = FrameStack(v, 0.5, [0.1, 0.2], 1.0)
    assert s.side_length == 2.0 and s.grid == (4, 4)


def test_flatten_preserves_count(clean):
    obs = clean.stack.flatten()
    assert obs.n == 64 * 64 * 20 == clean.stack.n
    np.testing.assert_allclose(obs.x[:2], [[0.5 * clean.stack.pixel_size] * 2,
                                           [0.5 * clean.stack.pixel_size,
                                            1.5 * clean.stack.pixel_size]])
    assert np.all(obs.t[:4096] == 0.265)


def test_clean_in_span_recovery(clean):
    res = frap_fit(clean.stack, cutoff=(7, 7))
    assert res.fit.K == 49
    assert res.residual_max <= 1e-8
    np.testing.assert_allclose(res.fit.alpha_hat, clean.truth, atol=1e-10 * np.abs(clean.truth).max())
    np.testing.assert_allclose(res.initial_condition, clean.initial_grid, atol=1e-10)


def test_noisy_residual_rms(noisy):
    res = frap_fit(noisy.stack, cutoff=(7, 7))
    assert signal_rms(noisy.stack) >= 10 * res.residual_rms
    assert res.residual_rms == pytest.approx(0.05, rel=0.02)


def test_noisy_ise_matches_variance_oracle(noisy):
    res = frap_fit(noisy.stack, cutoff=(7, 7))
    from physreg.estimator import build_design
    obs = noisy.stack.flatten()
    Z = build_design(obs, res.eig, 49)
    expected = 0.05 ** 2 * np.trace(np.linalg.inv(Z.T @ Z))
    got = ise(res.fit, noisy.truth)
    assert 0.5 * expected <= got <= 2.0 * expected
    assert grid_ise(res.initial_condition, noisy.initial_grid,
                    noisy.stack.pixel_size) == pytest.approx(got, rel=1e-8)


def test_cutoff_19x20_parameter_count():
    stack = synthetic_frames(size=32, frames=4, sigma=0.05, seed=3).stack
    res = frap_fit(stack, cutoff=(19, 20))
    assert res.fit.K == 380 and res.to_dict()["parameters"] == 380


def test_cutoff_too_large():
    small = synthetic_frames(size=4, frames=2, cutoff=(2, 2))
    with pytest.raises(ValueError):
        frap_fit(small.stack, cutoff=(7, 7))


def test_bic_selection_path():
    stack = synthetic_frames(size=32, frames=6, sigma=0.05, seed=3, cutoff=(3, 3)).stack
    res = frap_fit(stack, k_range=range(1, 30))
    streamed = frap_fit(stack, k_range=range(1, 30), force_streamed=True)
    assert 1 <= res.fit.K < 30 and streamed.fit.K == res.fit.K
    for k, v in res.fit.diagnostics["bic_table"].items():
        assert streamed.fit.diagnostics["bic_table"][k] == pytest.approx(v, rel=1e-12)
    assert "bic_table" in res.fit.diagnostics


def test_streamed_bit_equality(tmp_path, noisy):
    path = write_frames_binary(noisy.stack, tmp_path / "frames.f64")
    mapped = read_frames_binary(path, mmap=True)
    a = frap_fit(mapped, cutoff=(7, 7), force_streamed=True, frames_per_chunk=3)
    b = frap_fit(noisy.stack, cutoff=(7, 7), force_streamed=True, frames_per_chunk=3)
    assert a.streamed and b.streamed
    np.testing.assert_array_equal(a.fit.alpha_hat, b.fit.alpha_hat)
    np.testing.assert_array_equal(a.residuals, b.residuals)
    c = frap_fit(noisy.stack, cutoff=(7, 7))
    assert not c.streamed
    np.testing.assert_allclose(a.fit.alpha_hat, c.fit.alpha_hat, rtol=1e-9,
                               atol=1e-9 * np.abs(c.fit.alpha_hat).max())


def test_memory_budget_triggers_streaming(noisy):
    res = frap_fit(noisy.stack, cutoff=(3, 3), memory_budget=1024)
    assert res.streamed


def test_binary_and_csv_round_trips(tmp_path):
    s = synthetic_frames(size=8, frames=3, sigma=0.1, seed=2, cutoff=(3, 3)).stack
    p = write_frames_binary(s, tmp_path / "f.bin")
    assert p.stat().st_size == 8 * 8 * 3 * 8
    assert read_frames(p) == s
    assert read_frames(p, mmap=True) == s
    d = write_frames_csv(s, tmp_path / "frames")
    assert read_frames(d) == s
    r = residual_stack(frap_fit(s, cutoff=(3, 3)), s)
    write_frames_binary(r, tmp_path / "r.bin")
    assert read_frames(tmp_path / "r.bin") == r


def test_binary_is_little_endian_frame_major(tmp_path):
    v = np.arange(2 * 2 * 3, dtype=float).reshape(2, 2, 3)
    s = FrameStack(v, 1.0, [0.5, 1.0], 1.0)
    p = write_frames_binary(s, tmp_path / "x.bin")
    np.testing.assert_array_equal(np.frombuffer(p.read_bytes(), "<f8"), np.arange(12.0))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_frames(p)


def test_average_stacks():
    a = synthetic_frames(size=8, frames=2, sigma=0.1, seed=1, cutoff=(3, 3)).stack
    b = synthetic_frames(size=8, frames=2, sigma=0.1, seed=2, cutoff=(3, 3)).stack
    m = average_stacks([a, b])
    np.testing.assert_array_equal(m.values, (a.values + b.values) / 2)
    c = synthetic_frames(size=8, frames=3, cutoff=(3, 3)).stack
    with pytest.raises(ValueError):
        average_stacks([a, c])


def test_desk_constants():
    assert DESK_SIDE == 1.945e-4 and DESK_DIFFUSION == 8.9e-11
