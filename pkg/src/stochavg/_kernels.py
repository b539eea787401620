"""Hot inner kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and the environment
variable ``STOCHAVG_DISABLE_NUMBA`` is unset or ``0``.  Both paths are always
importable as :data:`numpy_kernels` and :data:`numba_kernels` (the latter is
``None`` without numba) so tests and the benchmark can compare them.
"""

from __future__ import annotations

import math
import os
from types import SimpleNamespace

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

DISABLED = os.environ.get("STOCHAVG_DISABLE_NUMBA", "0") not in ("", "0")
USE_NUMBA = HAS_NUMBA and not DISABLED


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def _np_monomial(v, vb, alpha, beta):
    out = np.ones(v.shape[0], dtype=np.complex128)
    for j in range(v.shape[1]):
        if alpha[j]:
            out = out * v[:, j] ** alpha[j]
        if beta[j]:
            out = out * vb[:, j] ** beta[j]
    return out


def _np_poly_value(v, coef, alpha, beta):
    vb = np.conj(v)
    out = np.zeros(v.shape[0])
    for t in range(coef.shape[0]):
        out += np.real(coef[t] * _np_monomial(v, vb, alpha[t], beta[t]))
    return out


def _np_poly_dbar(v, coef, alpha, beta):
    # d/dvbar_k Re(c v^a vbar^b) = (c b_k v^a vbar^(b-e_k) + conj(c) a_k vbar^(a-e_k) v^b) / 2
    vb = np.conj(v)
    n = v.shape[1]
    out = np.zeros(v.shape, dtype=np.complex128)
    for t in range(coef.shape[0]):
        a = alpha[t]
        b = beta[t]
        for k in range(n):
            if b[k]:
                bk = b.copy()
                bk[k] -= 1
                out[:, k] += 0.5 * coef[t] * b[k] * _np_monomial(v, vb, a, bk)
            if a[k]:
                ak = a.copy()
                ak[k] -= 1
                out[:, k] += 0.5 * np.conj(coef[t]) * a[k] * _np_monomial(v, vb, b, ak)
    return out


def _np_rotate(v, freq, scale):
    return v * np.exp(1j * freq * scale)


def _np_truncated_update(state, drift, noise, dtau):
    return np.maximum(state + drift * dtau + noise, 0.0)


def _np_first_exit(absv, radii, exit_step, step):
    hit = (exit_step < 0) & np.any(absv > radii, axis=1)
    exit_step[hit] = step
    return int(np.count_nonzero(hit))


def _np_w1_sorted(a, b):
    return float(np.mean(np.abs(a - b)))


def _np_w1_exponential(x, mean):
    # exact integral of |F_N - F| for the Exp(mean) law, x sorted ascending, x >= 0
    n = x.shape[0]
    left = np.concatenate(([0.0], x))
    right = np.concatenate((x, [np.inf]))
    level = np.arange(n + 1) / n
    cross = np.full(n + 1, np.inf)
    cross[:-1] = -mean * np.log1p(-level[:-1])

    def area_cdf(lo, hi):
        # integral of 1 - exp(-x/m) on [lo, hi] for finite hi
        return (hi - lo) - mean * (np.exp(-lo / mean) - np.exp(-hi / mean))

    total = 0.0
    fin = np.isfinite(right)
    lo, hi, lv, xc = left[fin], right[fin], level[fin], cross[fin]
    mid = np.clip(xc, lo, hi)
    # below the crossing F < level, above it F > level
    total += np.sum(lv * (mid - lo) - area_cdf(lo, mid))
    total += np.sum(area_cdf(mid, hi) - lv * (hi - mid))
    # tail beyond the largest sample: level is 1, integral of exp(-x/m)
    total += mean * math.exp(-x[-1] / mean)
    return float(total)


numpy_kernels = SimpleNamespace(
    name="numpy",
    poly_value=_np_poly_value,
    poly_dbar=_np_poly_dbar,
    rotate=_np_rotate,
    truncated_update=_np_truncated_update,
    first_exit=_np_first_exit,
    w1_sorted=_np_w1_sorted,
    w1_exponential=_np_w1_exponential,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

numba_kernels = None

if HAS_NUMBA:

    @njit(cache=True)
    def _nb_monomial(v, i, a, b, t, skip):
        # prod_j v_ij**a_tj * conj(v_ij)**(b_tj - [j == skip])
        m = 1.0 + 0.0j
        for j in range(v.shape[1]):
            zj = v[i, j]
            zb = zj.conjugate()
            for _ in range(a[t, j]):
                m = m * zj
            for _ in range(b[t, j] - (1 if j == skip else 0)):
                m = m * zb
        return m

    @njit(cache=True)
    def _nb_poly_value(v, coef, alpha, beta):
        npts = v.shape[0]
        out = np.zeros(npts)
        for i in range(npts):
            acc = 0.0
            for t in range(coef.shape[0]):
                acc += (coef[t] * _nb_monomial(v, i, alpha, beta, t, -1)).real
            out[i] = acc
        return out

    @njit(cache=True)
    def _nb_poly_dbar(v, coef, alpha, beta):
        npts, n = v.shape
        out = np.zeros((npts, n), dtype=np.complex128)
        for i in range(npts):
            for t in range(coef.shape[0]):
                c = coef[t]
                for k in range(n):
                    if beta[t, k] > 0:
                        out[i, k] += 0.5 * c * beta[t, k] * _nb_monomial(v, i, alpha, beta, t, k)
                    if alpha[t, k] > 0:
                        # conj(c) a_k vbar^(a - e_k) v^b
                        out[i, k] += 0.5 * c.conjugate() * alpha[t, k] * _nb_monomial(
                            v, i, beta, alpha, t, k)
        return out

    @njit(cache=True)
    def _nb_rotate(v, freq, scale):
        out = np.empty_like(v)
        npts, n = v.shape
        for i in range(npts):
            for k in range(n):
                ang = freq[i, k] * scale
                out[i, k] = v[i, k] * complex(math.cos(ang), math.sin(ang))
        return out

    @njit(cache=True)
    def _nb_truncated_update(state, drift, noise, dtau):
        out = np.empty_like(state)
        npts, n = state.shape
        for i in range(npts):
            for k in range(n):
                x = state[i, k] + drift[i, k] * dtau + noise[i, k]
                out[i, k] = x if x > 0.0 else 0.0
        return out

    @njit(cache=True)
    def _nb_first_exit_impl(absv, radii, exit_step, step):
        count = 0
        npts, n = absv.shape
        for i in range(npts):
            if exit_step[i] >= 0:
                continue
            for k in range(n):
                if absv[i, k] > radii[k]:
                    exit_step[i] = step
                    count += 1
                    break
        return count

    def _nb_first_exit(absv, radii, exit_step, step):
        return int(_nb_first_exit_impl(absv, radii, exit_step, step))

    @njit(cache=True)
    def _nb_w1_sorted_impl(a, b):
        acc = 0.0
        for i in range(a.shape[0]):
            acc += abs(a[i] - b[i])
        return acc / a.shape[0]

    def _nb_w1_sorted(a, b):
        return float(_nb_w1_sorted_impl(a, b))

    @njit(cache=True)
    def _nb_area_cdf(lo, hi, mean):
        return (hi - lo) - mean * (math.exp(-lo / mean) - math.exp(-hi / mean))

    @njit(cache=True)
    def _nb_w1_exponential_impl(x, mean):
        n = x.shape[0]
        total = 0.0
        lo = 0.0
        for i in range(n):
            hi = x[i]
            lv = i / n
            xc = -mean * math.log1p(-lv)
            mid = min(max(xc, lo), hi)
            total += lv * (mid - lo) - _nb_area_cdf(lo, mid, mean)
            total += _nb_area_cdf(mid, hi, mean) - lv * (hi - mid)
            lo = hi
        total += mean * math.exp(-x[n - 1] / mean)
        return total

    def _nb_w1_exponential(x, mean):
        return float(_nb_w1_exponential_impl(x, float(mean)))

    numba_kernels = SimpleNamespace(
        name="numba",
        poly_value=_nb_poly_value,
        poly_dbar=_nb_poly_dbar,
        rotate=_nb_rotate,
        truncated_update=_nb_truncated_update,
        first_exit=_nb_first_exit,
        w1_sorted=_nb_w1_sorted,
        w1_exponential=_nb_w1_exponential,
    )

kernels = numba_kernels if USE_NUMBA else numpy_kernels


def backend() -> str:
    """Name of the active kernel backend (``"numba"`` or ``"numpy"``)."""
    return kernels.name
