"""Exponential finite-size extrapolation y(L) = y_inf + a * r**L."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares


@dataclass(frozen=True)
class ExpFit:
    y_inf: float
    a: float
    r: float
    residual: float

    def __call__(self, L):
        return self.y_inf + self.a * self.r ** np.asarray(L, dtype=float)


def fit_exponential(L_values, y_values) -> ExpFit:
    """Least-squares fit of y_inf + a r^L with |r| < 1.

    Needs at least three sizes. A constant series returns a = 0, r = 0.
    """
    L = np.asarray(L_values, dtype=float)
    y = np.asarray(y_values, dtype=float)
    if len(L) != len(y):
        raise ValueError("size and value lists differ in length")
    if len(L) < 3:
        raise ValueError("need at least three system sizes")
    order = np.argsort(L)
    L, y = L[order], y[order]
    ref = y[-1]
    z = y - ref
    scale = np.max(np.abs(z))
    if scale == 0.0:
        return ExpFit(float(ref), 0.0, 0.0, 0.0)
    z = z / scale
    L0 = L[0]
    x = L - L0

    # seed from ratios of successive differences
    dz = np.diff(z)
    dx = np.diff(x)
    ratios = []
    for i in range(len(dz) - 1):
        if dz[i] != 0 and dz[i + 1] / dz[i] > 0:
            ratios.append((dz[i + 1] / dz[i]) ** (1.0 / dx[i]))
    r0 = float(np.clip(np.median(ratios), 1e-3, 0.999)) if ratios else 0.5

    def resid(p):
        c, b, r = p
        return c + b * r ** x - z

    best = None
    for r_start in (r0, 0.3, 0.6, 0.9):
        b_s = (z[0] - z[-1]) / (1.0 - r_start ** x[-1])
        c_s = z[-1] - b_s * r_start ** x[-1]
        try:
            sol = least_squares(resid, [c_s, b_s, r_start], bounds=([-np.inf, -np.inf, 0.0], [np.inf, np.inf, 0.9999]),
                                xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        except ValueError:
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    c, b, r = best.x
    # back to the original variable: a r^L = b r^(L - L0)
    a = b * scale / r ** L0 if r > 0 else 0.0
    return ExpFit(float(ref + c * scale), float(a), float(r), float(np.sqrt(2 * best.cost) * scale))
