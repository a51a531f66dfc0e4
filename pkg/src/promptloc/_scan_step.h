/* Selective-scan forward and adjoint over C-contiguous buffers.
 *
 * Layouts: u, delta, y, dy [S, n, d]; A, iA (= 1/A), dA [d, N]; Bm, Cm, dB, dC [S, n, N].
 * Workspace: hs [(n + 1) * d * N], as [n * d * N], g [d * N].
 * restrict lets the compiler vectorize the inner state loops. */
#ifndef PROMPTLOC_SCAN_STEP_H
#define PROMPTLOC_SCAN_STEP_H

#include <math.h>
#include <stddef.h>
#include <string.h>

#define DEFINE_SCAN(T, SUFFIX, EXP)                                                      \
static void scan_forward_##SUFFIX(ptrdiff_t S, ptrdiff_t n, ptrdiff_t d, ptrdiff_t N,    \
        const T *restrict u, const T *restrict delta, const T *restrict A,               \
        const T *restrict iA, const T *restrict Bm, const T *restrict Cm,                \
        T *restrict y, T *restrict h)                                                    \
{                                                                                        \
    for (ptrdiff_t b = 0; b < S; b++) {                                                  \
        memset(h, 0, sizeof(T) * d * N);                                                 \
        for (ptrdiff_t k = 0; k < n; k++) {                                              \
            const ptrdiff_t r = (b * n + k);                                             \
            const T *restrict bk = Bm + r * N;                                           \
            const T *restrict ck = Cm + r * N;                                           \
            for (ptrdiff_t ch = 0; ch < d; ch++) {                                       \
                const T dl = delta[r * d + ch], uk = u[r * d + ch];                      \
                const T *restrict Ac = A + ch * N;                                       \
                const T *restrict iAc = iA + ch * N;                                     \
                T *restrict hc = h + ch * N;                                             \
                T acc = 0;                                                               \
                for (ptrdiff_t st = 0; st < N; st++) {                                   \
                    T a = EXP(dl * Ac[st]);                                              \
                    hc[st] = a * hc[st] + (a - 1) * iAc[st] * bk[st] * uk;               \
                    acc += ck[st] * hc[st];                                              \
                }                                                                        \
                y[r * d + ch] = acc;                                                     \
            }                                                                            \
        }                                                                                \
    }                                                                                    \
}                                                                                        \
                                                                                         \
static void scan_backward_##SUFFIX(ptrdiff_t S, ptrdiff_t n, ptrdiff_t d, ptrdiff_t N,   \
        const T *restrict u, const T *restrict delta, const T *restrict A,               \
        const T *restrict iA, const T *restrict Bm, const T *restrict Cm,                \
        const T *restrict dy, T *restrict du, T *restrict ddelta, T *restrict dA,        \
        T *restrict dB, T *restrict dC, T *restrict hs, T *restrict as, T *restrict g)   \
{                                                                                        \
    const ptrdiff_t dn = d * N;                                                          \
    memset(dA, 0, sizeof(T) * dn);                                                       \
    for (ptrdiff_t b = 0; b < S; b++) {                                                  \
        /* hs[k + 1] is the state after step k, as[k] its decay factors */               \
        memset(hs, 0, sizeof(T) * dn);                                                   \
        for (ptrdiff_t k = 0; k < n; k++) {                                              \
            const ptrdiff_t r = (b * n + k);                                             \
            const T *restrict bk = Bm + r * N;                                           \
            for (ptrdiff_t ch = 0; ch < d; ch++) {                                       \
                const T dl = delta[r * d + ch], uk = u[r * d + ch];                      \
                const ptrdiff_t o = ch * N;                                              \
                T *restrict ak = as + k * dn + o;                                        \
                const T *restrict hp = hs + k * dn + o;                                  \
                T *restrict hn = hs + (k + 1) * dn + o;                                  \
                for (ptrdiff_t st = 0; st < N; st++) {                                   \
                    T a = EXP(dl * A[o + st]);                                           \
                    ak[st] = a;                                                          \
                    hn[st] = a * hp[st] + (a - 1) * iA[o + st] * bk[st] * uk;            \
                }                                                                        \
            }                                                                            \
        }                                                                                \
        memset(g, 0, sizeof(T) * dn);                                                    \
        for (ptrdiff_t k = n - 1; k >= 0; k--) {                                         \
            const ptrdiff_t r = (b * n + k);                                             \
            const T *restrict bk = Bm + r * N;                                           \
            const T *restrict ck = Cm + r * N;                                           \
            T *restrict dbk = dB + r * N;                                                \
            T *restrict dck = dC + r * N;                                                \
            for (ptrdiff_t ch = 0; ch < d; ch++) {                                       \
                const T dl = delta[r * d + ch], uk = u[r * d + ch], dyk = dy[r * d + ch];\
                const ptrdiff_t o = ch * N;                                              \
                const T *restrict ak = as + k * dn + o;                                  \
                const T *restrict hp = hs + k * dn + o;                                  \
                const T *restrict hn = hs + (k + 1) * dn + o;                            \
                T *restrict gc = g + o;                                                  \
                T *restrict dAc = dA + o;                                                \
                T uacc = 0, dacc = 0;                                                    \
                for (ptrdiff_t st = 0; st < N; st++) {                                   \
                    const T a = ak[st], av = A[o + st], ia = iA[o + st];                 \
                    const T em1 = (a - 1) * ia;                                          \
                    const T gk = gc[st] + dyk * ck[st];                                  \
                    const T ga = gk * hp[st];                                            \
                    const T gb = gk * uk;                                                \
                    uacc += gk * em1 * bk[st];                                           \
                    dacc += (ga * av + gb * bk[st]) * a;                                 \
                    dAc[st] += ga * dl * a + gb * bk[st] * (dl * a - em1) * ia;          \
                    dbk[st] += gb * em1;                                                 \
                    dck[st] += dyk * hn[st];                                             \
                    gc[st] = gk * a;                                                     \
                }                                                                        \
                du[r * d + ch] = uacc;                                                   \
                ddelta[r * d + ch] = dacc;                                               \
            }                                                                            \
        }                                                                                \
    }                                                                                    \
}

DEFINE_SCAN(float, f, expf)
DEFINE_SCAN(double, d, exp)

#endif
