"""Compiled kernels vs their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Times the image-source RIR and the selective scan (forward and backward) at
the sizes used in training, checks that both backends agree, and prints one
table row per kernel.
"""

from __future__ import annotations

import argparse
import math
import timeit

import numpy as np

from promptloc import _backend, _kernels_py
from promptloc.room import SINC_HALF_WIDTH, SPEED_OF_SOUND, reflection_coefficient, sample_room_scene


def rir_case():
    scene = sample_room_scene(0)
    src = np.asarray(scene.source_position, dtype=np.float64)
    mics = np.ascontiguousarray(scene.mic_positions, dtype=np.float64)
    room = np.asarray(scene.room_dims, dtype=np.float64)
    beta = reflection_coefficient(scene.room_dims, scene.t60)
    horizon = 1.2 * scene.t60
    length = int(math.ceil(horizon * 16000)) + SINC_HALF_WIDTH + 1
    args = (src, mics, room, beta, 16000.0, SPEED_OF_SOUND, horizon * SPEED_OF_SOUND, -1,
            SINC_HALF_WIDTH, length)
    return lambda k: k.image_source_rir(*args)


def scan_case(S, n, d, N, backward):
    # frequency ConMamba at the desk preset: batch 8 x 513 bins, 14 frames
    rng = np.random.default_rng(0)
    f32 = np.float32
    u = rng.normal(size=(S, n, d)).astype(f32)
    delta = rng.uniform(0.01, 0.5, (S, n, d)).astype(f32)
    A = (-rng.uniform(0.5, 8.0, (d, N))).astype(f32)
    B = rng.normal(size=(S, n, N)).astype(f32)
    C = rng.normal(size=(S, n, N)).astype(f32)
    dy = rng.normal(size=(S, n, d)).astype(f32)
    if backward:
        return lambda k: k.scan_backward(u, delta, A, B, C, dy)
    return lambda k: k.scan_forward(u, delta, A, B, C)


def _agree(a, b) -> float:
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.max(np.abs(np.asarray(x, np.float64) - y)) / max(np.max(np.abs(y)), 1e-30))
               for x, y in zip(a, b))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if not _backend.COMPILED:
        raise SystemExit("compiled extension not available; build with `pip install -e . --no-build-isolation`")
    from promptloc import _kernels

    cases = {
        "image_source_rir": rir_case(),
        "scan_forward  (4104 x 14, d=8, N=8)": scan_case(8 * 513, 14, 8, 8, False),
        "scan_backward (4104 x 14, d=8, N=8)": scan_case(8 * 513, 14, 8, 8, True),
        "scan_forward  (112 x 513, d=8, N=8)": scan_case(8 * 14, 513, 8, 8, False),
        "scan_backward (112 x 513, d=8, N=8)": scan_case(8 * 14, 513, 8, 8, True),
    }
    print(f"{'kernel':40s} {'compiled ms':>12s} {'numpy ms':>10s} {'speedup':>8s} {'max rel diff':>13s}")
    for name, fn in cases.items():
        t_c = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        t_p = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        diff = _agree(fn(_kernels), fn(_kernels_py))
        print(f"{name:40s} {t_c:12.2f} {t_p:10.2f} {t_p / t_c:7.1f}x {diff:13.1e}")


if __name__ == "__main__":
    main()
