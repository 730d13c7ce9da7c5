"""The symmetric smooth step and its derivatives.

rho(x) = A/(A+B) with A = sigma((x+1)/2), B = sigma((1-x)/2) and
sigma(s) = exp(-1/s) for s > 0, else 0.  It is 0 on (-inf, -1], 1 on [1, inf),
rho(0) = 1/2, rho'(0) = 1 and rho(-x) = 1 - rho(x).

Derivatives are produced by truncated Taylor arithmetic: a jet is an array whose
last axis holds f, f', f''/2, f'''/6.
"""

from __future__ import annotations

import numpy as np

MAX_ORDER = 3
# below this argument exp(-1/s) is < 1e-200 and its derivative factors overflow
_SIGMA_CUTOFF = 0.002


def _sigma_jet(s: np.ndarray, order: int) -> np.ndarray:
    """Taylor jet of exp(-1/s) in s, shape s.shape + (order+1,)."""
    out = np.zeros(s.shape + (order + 1,))
    live = s > _SIGMA_CUTOFF
    sl = s[live]
    e = np.exp(-1.0 / sl)
    inv = 1.0 / sl
    out[live, 0] = e
    if order >= 1:
        out[live, 1] = e * inv**2
    if order >= 2:
        out[live, 2] = e * (inv**4 - 2 * inv**3) / 2
    if order >= 3:
        out[live, 3] = e * (inv**6 - 6 * inv**5 + 6 * inv**4) / 6
    return out


def _scale_jet(jet: np.ndarray, c: float) -> np.ndarray:
    """Jet of f(c x) from the jet of f evaluated at c x."""
    powers = c ** np.arange(jet.shape[-1])
    return jet * powers


def _divide(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    c = np.zeros_like(a)
    c[..., 0] = a[..., 0] / b[..., 0]
    for k in range(1, a.shape[-1]):
        acc = a[..., k].copy()
        for j in range(1, k + 1):
            acc -= b[..., j] * c[..., k - j]
        c[..., k] = acc / b[..., 0]
    return c


def rho_jet(x, order: int = 1) -> np.ndarray:
    """Return derivatives ``rho^(i)(x)`` for ``i = 0..order`` (not Taylor-scaled)."""
    if order > MAX_ORDER:
        raise ValueError(f"order <= {MAX_ORDER}")
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + (order + 1,))
    out[x >= 1.0, 0] = 1.0
    mid = (x > -1.0) & (x < 1.0)
    if np.any(mid):
        xm = x[mid]
        a = _scale_jet(_sigma_jet((xm + 1) / 2, order), 0.5)
        b = _scale_jet(_sigma_jet((1 - xm) / 2, order), -0.5)
        q = _divide(a, a + b)
        fact = np.array([1.0, 1.0, 2.0, 6.0])[: order + 1]
        out[mid] = q * fact
    return out


def rho(x) -> np.ndarray:
    return rho_jet(x, 0)[..., 0]


def rho_prime(x) -> np.ndarray:
    return rho_jet(x, 1)[..., 1]
