"""Compiled kernels against their numpy twins."""

import numpy as np
import pytest

from promptloc import _backend, _kernels_py
from promptloc.room import reflection_coefficient, sample_room_scene

compiled = pytest.mark.skipif(not _backend.COMPILED, reason="compiled extension not built")


def _rir_args(seed, max_order=-1):
    scene = sample_room_scene(seed)
    src = np.asarray(scene.source_position, dtype=np.float64)
    mics = np.ascontiguousarray(scene.mic_positions, dtype=np.float64)
    room = np.asarray(scene.room_dims, dtype=np.float64)
    beta = reflection_coefficient(scene.room_dims, scene.t60)
    length = int(np.ceil(1.2 * scene.t60 * 16000)) + 41
    return (src, mics, room, beta, 16000.0, 343.0, 1.2 * scene.t60 * 343.0, max_order, 40, length)


def _scan_inputs(rng, S=3, n=17, d=5, N=4, dtype=np.float64):
    u = rng.normal(size=(S, n, d))
    delta = rng.uniform(0.01, 0.6, (S, n, d))
    A = -rng.uniform(0.5, 6.0, (d, N))
    B = rng.normal(size=(S, n, N))
    C = rng.normal(size=(S, n, N))
    return [np.ascontiguousarray(x, dtype=dtype) for x in (u, delta, A, B, C)]


def test_backend_flags():
    assert _backend.BACKEND in ("cython", "numpy")
    assert (_backend.BACKEND == "cython") == _backend.COMPILED


@compiled
@pytest.mark.parametrize("seed,order", [(0, -1), (1, 0), (2, 3)])
def test_rir_parity(seed, order):
    from promptloc import _kernels

    args = _rir_args(seed, order)
    np.testing.assert_allclose(_kernels.image_source_rir(*args), _kernels_py.image_source_rir(*args),
                               rtol=1e-9, atol=1e-12)


@compiled
@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 1e-5)])
def test_scan_parity(dtype, tol):
    from promptloc import _kernels

    rng = np.random.default_rng(0)
    ins = _scan_inputs(rng, dtype=dtype)
    dy = rng.normal(size=ins[0].shape).astype(dtype)
    y_c, y_p = np.asarray(_kernels.scan_forward(*ins)), _kernels_py.scan_forward(*ins)
    assert y_c.dtype == dtype
    np.testing.assert_allclose(y_c, y_p, rtol=tol, atol=tol)
    for gc, gp in zip(_kernels.scan_backward(*ins, dy), _kernels_py.scan_backward(*ins, dy)):
        np.testing.assert_allclose(np.asarray(gc), gp, rtol=tol * 10, atol=tol * 10)


@compiled
def test_scan_empty():
    from promptloc import _kernels

    ins = _scan_inputs(np.random.default_rng(0), S=0, n=5)
    assert np.asarray(_kernels.scan_forward(*ins)).shape == (0, 5, 5)


def test_numpy_scan_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    ins = _scan_inputs(rng, S=2, n=6, d=3, N=2)
    w = rng.normal(size=ins[0].shape)
    grads = _kernels_py.scan_backward(*ins, w)
    eps = 1e-6
    for k, g in enumerate(grads):
        x = ins[k]
        for idx in [tuple(rng.integers(s) for s in x.shape) for _ in range(4)]:
            old = x[idx]
            x[idx] = old + eps
            fp = np.sum(_kernels_py.scan_forward(*ins) * w)
            x[idx] = old - eps
            fm = np.sum(_kernels_py.scan_forward(*ins) * w)
            x[idx] = old
            assert g[idx] == pytest.approx((fp - fm) / (2 * eps), rel=1e-5, abs=1e-8)
