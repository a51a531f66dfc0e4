"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and outputs; used when the extension is not built or when
``PROMPTLOC_PURE_PYTHON=1`` is set.
"""

import itertools

import numpy as np


def _image_offsets(room, max_dist, max_order):
    n_max = (max_dist / (2.0 * room)).astype(int) + 1
    ranges = [np.arange(-n, n + 1) for n in n_max]
    n = np.array(list(itertools.product(*ranges)), dtype=np.int64)
    q = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.int64)
    n = np.repeat(n, len(q), axis=0)
    q = np.tile(q, (len(n) // len(q), 1))
    order = (np.abs(n - q) + np.abs(n)).sum(axis=1)
    if max_order >= 0:
        keep = order <= max_order
        n, q, order = n[keep], q[keep], order[keep]
    return n, q, order


def image_source_rir(src, mics, room, beta, fs, c, max_dist, max_order, half_width, length):
    src = np.asarray(src, dtype=np.float64)
    mics = np.asarray(mics, dtype=np.float64)
    room = np.asarray(room, dtype=np.float64)
    n, q, order = _image_offsets(room, max_dist, max_order)
    images = (1 - 2 * q) * src + 2 * n * room
    out = np.zeros((len(mics), length))
    win_half = half_width + 1.0
    taps = np.arange(-half_width, half_width + 1)
    for m, mic in enumerate(mics):
        dist = np.linalg.norm(images - mic, axis=1)
        keep = dist <= max_dist
        dist, ordk = dist[keep], order[keep]
        tau = dist / c * fs
        amp = beta ** ordk / dist
        # one row of candidate taps per image
        idx = np.floor(tau + 0.5).astype(np.int64)[:, None] + taps
        x = idx - tau[:, None]
        w = np.where(np.abs(x) < win_half, 0.5 * (1.0 + np.cos(np.pi * x / win_half)), 0.0)
        vals = amp[:, None] * w * np.sinc(x)
        valid = (idx >= 0) & (idx < length)
        np.add.at(out[m], idx[valid], vals[valid])
    return out


def scan_forward(u, delta, A, Bm, Cm):
    S, n, d = u.shape
    y = np.zeros((S, n, d))
    h = np.zeros((S, d, A.shape[1]))
    for k in range(n):
        dA = delta[:, k, :, None] * A
        a = np.exp(dA)
        h = a * h + (a - 1.0) / A * Bm[:, k, None, :] * u[:, k, :, None]
        y[:, k] = np.einsum("sdn,sn->sd", h, Cm[:, k])
    return y


def scan_backward(u, delta, A, Bm, Cm, dy):
    S, n, d = u.shape
    N = A.shape[1]
    hs = np.zeros((n + 1, S, d, N))
    for k in range(n):
        a = np.exp(delta[:, k, :, None] * A)
        hs[k + 1] = a * hs[k] + (a - 1.0) / A * Bm[:, k, None, :] * u[:, k, :, None]
    du = np.zeros_like(u)
    ddelta = np.zeros_like(delta)
    dA = np.zeros_like(A)
    dB = np.zeros_like(Bm)
    dC = np.zeros_like(Cm)
    g = np.zeros((S, d, N))
    for k in range(n - 1, -1, -1):
        dC[:, k] = np.einsum("sd,sdn->sn", dy[:, k], hs[k + 1])
        dl = delta[:, k, :, None]
        uk = u[:, k, :, None]
        bk = Bm[:, k, None, :]
        a = np.exp(dl * A)
        bb = (a - 1.0) / A * bk
        gk = g + dy[:, k, :, None] * Cm[:, k, None, :]
        ga = gk * hs[k]
        gb = gk * uk
        du[:, k] = (gk * bb).sum(axis=2)
        ddelta[:, k] = (ga * A * a + gb * a * bk).sum(axis=2)
        dA += (ga * dl * a + gb * bk * (dl * a * A - (a - 1.0)) / (A * A)).sum(axis=0)
        dB[:, k] = (gb * (a - 1.0) / A).sum(axis=1)
        g = gk * a
    return du, ddelta, dA, dB, dC
