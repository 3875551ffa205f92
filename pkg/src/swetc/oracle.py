"""Exact sampled-data quantities from matrix exponentials.

These do not use the LMI machinery and serve as independent references:
the one-period transition matrix of periodic sampling and the largest
stabilising sampling period obtained from its spectral radius.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .plant import SimplePlant

__all__ = ["flow", "sampled_matrix", "spectral_radius", "spectral_margin"]


def flow(A, B, t):
    """``(e^{A t}, int_0^t e^{A s} ds B)`` from one augmented exponential."""
    A, B = np.asarray(A, float), np.asarray(B, float)
    n, m = A.shape[0], B.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n], M[:n, n:] = A, B
    E = expm(M * t)
    return E[:n, :n], E[:n, n:]


def sampled_matrix(plant: SimplePlant, gain, h):
    """``x(s_{k+1}) = M(h) x(s_k)`` under ``u = -K C x(s_k)`` held over ``h``."""
    Phi, Gam = flow(plant.A, plant.B, h)
    return Phi - Gam @ gain.K @ plant.C


def spectral_radius(plant, gain, h):
    return float(np.max(np.abs(np.linalg.eigvals(sampled_matrix(plant, gain, h)))))


def spectral_margin(plant, gain, h_max=10.0, step=1e-2, tol=1e-6):
    """``h* = sup{h : rho(M(s)) < 1 for all s in (0, h)}``.

    Scans upward in steps of ``step`` for the first ``h`` with ``rho >= 1``
    and bisects that bracket to ``tol``. Returns ``h_max`` if no crossing is
    found.
    """
    lo = 0.0
    h = step
    while h <= h_max:
        if spectral_radius(plant, gain, h) >= 1:
            hi = h
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if spectral_radius(plant, gain, mid) >= 1:
                    hi = mid
                else:
                    lo = mid
            return lo
        lo = h
        h += step
    return h_max
