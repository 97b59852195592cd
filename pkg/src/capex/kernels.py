"""Hot numeric kernels: Dirichlet risk per CPT row and one-step risk reduction.

Every kernel ships in two flavours: a numba ``@njit`` implementation and a
pure-numpy fallback built on ``scipy.special.psi``. The numba path is used
when numba imports cleanly, unless the environment variable ``CAPEX_NO_NUMBA``
is set (any non-empty value), which forces the numpy path. Both paths agree
to ~1e-13 and are exercised against each other in the test suite and in
``benchmarks/bench_kernels.py``.

The risk of a Dirichlet row with pseudo-counts ``a`` (``a0 = sum(a)``) is

    delta(a) = sum_j (a_j/a0) * (psi(a_j+1) - psi(a0+1) - log(a_j/a0))

which equals ``E_{t~Dir(a)}[KL(t || a/a0)]``, the expected divergence between
the true row and its posterior-mean point estimate. The gain of a row is the
expected drop in delta after one more observation drawn from the posterior
predictive ``a/a0``:

    gain(a) = delta(a) - sum_j (a_j/a0) * delta(a + e_j)

Gains are nonnegative: an observation never increases expected risk.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy.special import psi as _scipy_psi

__all__ = [
    "BACKEND",
    "IMPLEMENTATIONS",
    "digamma",
    "row_risks",
    "row_gains",
]


# ---------------------------------------------------------------------------
# pure-numpy implementations

def _row_risks_np(alpha: np.ndarray) -> np.ndarray:
    """delta per row of a (n_rows, k) pseudo-count table."""
    alpha = np.asarray(alpha, dtype=np.float64)
    a0 = alpha.sum(axis=1, keepdims=True)
    m = alpha / a0
    return np.sum(m * (_scipy_psi(alpha + 1.0) - _scipy_psi(a0 + 1.0) - np.log(m)), axis=1)


def _row_gains_np(alpha: np.ndarray) -> np.ndarray:
    """gain per row of a (n_rows, k) pseudo-count table."""
    alpha = np.asarray(alpha, dtype=np.float64)
    n, k = alpha.shape
    base = _row_risks_np(alpha)
    a0 = alpha.sum(axis=1)
    m = alpha / a0[:, None]
    bumped = alpha[:, None, :] + np.eye(k)[None, :, :]   # (n, j, l) = row + e_j
    b0 = (a0 + 1.0)[:, None, None]
    mb = bumped / b0
    risks_bumped = np.sum(mb * (_scipy_psi(bumped + 1.0) - _scipy_psi(b0 + 1.0) - np.log(mb)), axis=2)
    return base - np.sum(m * risks_bumped, axis=1)


def _digamma_np(x):
    return _scipy_psi(x)


# ---------------------------------------------------------------------------
# numba implementations

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def nb_digamma(x):
        # Recurrence up to x >= 10, then the Bernoulli asymptotic series.
        # Accurate to ~4e-17 at the shift point.
        r = 0.0
        while x < 10.0:
            r -= 1.0 / x
            x += 1.0
        t = 1.0 / (x * x)
        s = t * (1.0 / 12.0 - t * (1.0 / 120.0 - t * (1.0 / 252.0 - t * (
            1.0 / 240.0 - t * (1.0 / 132.0 - t * (691.0 / 32760.0 - t * (1.0 / 12.0)))))))
        return r + math.log(x) - 0.5 / x - s

    @njit(cache=True)
    def nb_row_risks(alpha):
        n, k = alpha.shape
        out = np.empty(n)
        for i in range(n):
            a0 = 0.0
            for j in range(k):
                a0 += alpha[i, j]
            d0 = nb_digamma(a0 + 1.0)
            acc = 0.0
            for j in range(k):
                m = alpha[i, j] / a0
                acc += m * (nb_digamma(alpha[i, j] + 1.0) - d0 - math.log(m))
            out[i] = acc
        return out

    @njit(cache=True)
    def nb_row_gains(alpha):
        n, k = alpha.shape
        out = np.empty(n)
        dg1 = np.empty(k)
        dg2 = np.empty(k)
        for i in range(n):
            a0 = 0.0
            for j in range(k):
                a0 += alpha[i, j]
            d0 = nb_digamma(a0 + 1.0)
            base = 0.0
            for j in range(k):
                dg1[j] = nb_digamma(alpha[i, j] + 1.0)
                dg2[j] = nb_digamma(alpha[i, j] + 2.0)
                m = alpha[i, j] / a0
                base += m * (dg1[j] - d0 - math.log(m))
            b0 = a0 + 1.0
            d0b = nb_digamma(b0 + 1.0)
            exp_post = 0.0
            for j in range(k):
                # delta(alpha + e_j): only entry j changed
                risk = 0.0
                for l in range(k):
                    if l == j:
                        mb = (alpha[i, l] + 1.0) / b0
                        risk += mb * (dg2[l] - d0b - math.log(mb))
                    else:
                        mb = alpha[i, l] / b0
                        risk += mb * (dg1[l] - d0b - math.log(mb))
                exp_post += (alpha[i, j] / a0) * risk
            out[i] = base - exp_post
        return out

    return {"digamma": nb_digamma, "row_risks": nb_row_risks, "row_gains": nb_row_gains}


IMPLEMENTATIONS: dict[str, dict] = {
    "numpy": {"digamma": _digamma_np, "row_risks": _row_risks_np, "row_gains": _row_gains_np},
}

BACKEND = "numpy"
if not os.environ.get("CAPEX_NO_NUMBA"):
    try:
        IMPLEMENTATIONS["numba"] = _build_numba()
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - exercised via CAPEX_NO_NUMBA instead
        pass

digamma = IMPLEMENTATIONS[BACKEND]["digamma"]
row_risks = IMPLEMENTATIONS[BACKEND]["row_risks"]
row_gains = IMPLEMENTATIONS[BACKEND]["row_gains"]
