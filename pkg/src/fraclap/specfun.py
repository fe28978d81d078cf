"""Scalar special functions for the regional fractional Laplacian.

Everything here is a pure function of its arguments and works in double
precision.  Gamma and digamma come from :mod:`scipy.special`.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import digamma, gammaln


def validate_order(s: float) -> float:
    """Return ``s`` as a float, rejecting values outside the open interval (0, 1)."""
    s = float(s)
    if not (0.0 < s < 1.0):
        raise ValueError(f"fractional order s must lie in the open interval (0, 1), got {s!r}")
    return s


def validate_dim(N: int) -> int:
    if isinstance(N, bool) or int(N) != N or int(N) < 1:
        raise ValueError(f"dimension N must be a positive integer, got {N!r}")
    return int(N)


def c_ns(N: int, s: float) -> float:
    r"""Normalisation constant :math:`C_{N,s}` of the regional fractional Laplacian.

    .. math::

        C_{N,s} = s(1-s)\,\pi^{-N/2}\,2^{2s}\,
                  \frac{\Gamma(\tfrac{N+2s}{2})}{\Gamma(2-s)}
    """
    N = validate_dim(N)
    s = validate_order(s)
    log_c = (
        math.log(s) + math.log1p(-s)
        - 0.5 * N * math.log(math.pi)
        + 2.0 * s * math.log(2.0)
        + gammaln(0.5 * (N + 2.0 * s)) - gammaln(2.0 - s)
    )
    return math.exp(log_c)


def dc_ns(N: int, s: float) -> float:
    """Derivative of :func:`c_ns` with respect to ``s`` (logarithmic differentiation)."""
    N = validate_dim(N)
    s = validate_order(s)
    return c_ns(N, s) * dlog_c_ns(N, s)


def dlog_c_ns(N: int, s: float) -> float:
    """``dc_ns(N, s) / c_ns(N, s)``, the ratio that enters both derivative formulas."""
    N = validate_dim(N)
    s = validate_order(s)
    return float(
        (1.0 - 2.0 * s) / (s * (1.0 - s))
        + 2.0 * math.log(2.0)
        + digamma(0.5 * (N + 2.0 * s))
        + digamma(2.0 - s)
    )


def c_ns_upper_bound(N: int) -> float:
    """Upper bound ``4 Gamma(N/2 + 1)`` for ``c_ns(N, s)`` over all ``s``."""
    return 4.0 * math.gamma(0.5 * validate_dim(N) + 1.0)


_TAYLOR_SWITCH = 1e-6


def psi_sigma(r, sigma):
    r"""Average :math:`\int_0^1 r^{-2t\sigma}\,dt`.

    Satisfies ``r**(-2*sigma) - 1 == -2*sigma*psi_sigma(r, sigma)*log(r)``.
    Accepts scalars or broadcastable arrays; returns the same shape.
    """
    r = np.asarray(r, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(r <= 0):
        raise ValueError("psi_sigma requires r > 0")
    a = -2.0 * sigma * np.log(r)
    small = np.abs(a) < _TAYLOR_SWITCH
    safe = np.where(small, 1.0, a)
    closed = np.expm1(safe) / safe
    taylor = 1.0 + a / 2.0 + a * a / 6.0
    out = np.where(small, taylor, closed)
    return float(out) if out.ndim == 0 else out


def log_decay_bound(r: float, eps0: float, pivot: float = 1.0):
    """Return ``(|log r|, bound)`` for the logarithmic decay estimate.

    The bound is ``r**-eps0 / (e*eps0)`` when ``r <= pivot`` and
    ``r**eps0 / (e*eps0)`` when ``r >= pivot``.  At ``r == pivot`` the bound
    is the pair of both branches.
    """
    for name, value in (("r", r), ("eps0", eps0), ("pivot", pivot)):
        if not value > 0:
            raise ValueError(f"log_decay_bound requires {name} > 0, got {value!r}")
    lhs = abs(math.log(r))
    scale = 1.0 / (math.e * eps0)
    below = scale * r ** (-eps0)
    above = scale * r ** eps0
    if r == pivot:
        return lhs, (below, above)
    return lhs, below if r < pivot else above
