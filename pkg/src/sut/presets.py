"""Parameter presets for the contour panels and the Mardia sweep.

Skewness is placed by the convolution-direction rule: the columns of
omega Delta gamma_bar^{-1} point along the requested directions and their
common magnitude is 0.8 of the largest value keeping the extended
correlation matrix positive definite.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError
from .params import SutParams, equicorrelation

FIG1_DIRECTIONS = {1: [(-1, 2)], 2: [(-1, 2), (1, 2)], 3: [(-1, 2), (1, 2), (1, -6)]}
FIG1_NU = 5.0
FIG2_DIRECTION = (1.0, 1.0)
FIG2_NU = 5.0
FIG2_RHO = 0.0
BOUNDARY_FRACTION = 0.8
CONTOUR_RANGE = (-3.0, 3.0)
CONTOUR_STEPS = 101


def directional(directions, nu: float, gamma_bar=None, omega=None, xi=None,
                fraction: float = BOUNDARY_FRACTION) -> SutParams:
    """SUT with tau = 0 whose skewness columns follow ``directions``."""
    D = np.array(directions, dtype=float).T
    if D.ndim != 2:
        raise InputError("directions must be a list of vectors")
    d, m = D.shape
    D = D / np.linalg.norm(D, axis=0)
    g = np.eye(m) if gamma_bar is None else np.asarray(gamma_bar, dtype=float)
    omega = np.eye(d) if omega is None else np.asarray(omega, dtype=float)
    w = np.sqrt(np.diag(omega))
    obar = omega / np.outer(w, w)
    # Delta = c * omega^{-1} D gamma_bar, so omega Delta gamma_bar^{-1} = c D
    base = (D / w[:, None]) @ g
    vals, vecs = np.linalg.eigh(g)
    g_ihalf = (vecs / np.sqrt(vals)) @ vecs.T
    k = g_ihalf @ base.T @ np.linalg.solve(obar, base) @ g_ihalf
    lam = float(np.max(np.linalg.eigvalsh(0.5 * (k + k.T))))
    c = fraction / math.sqrt(lam)
    xi = np.zeros(d) if xi is None else xi
    return SutParams(xi, omega, c * base, np.zeros(m), g, nu).checked()


def fig1(m: int, sun: bool = False) -> SutParams:
    if m not in FIG1_DIRECTIONS:
        raise InputError("contour presets exist for m = 1, 2, 3")
    return directional(FIG1_DIRECTIONS[m], math.inf if sun else FIG1_NU)


def fig2(m: int, rho: float = FIG2_RHO) -> SutParams:
    """d = 2, nu = 5, tau = 0, all skewness columns along (1, 1); gamma_bar equicorrelated with ``rho``."""
    if m < 1:
        raise InputError("m must be at least 1")
    return directional([FIG2_DIRECTION] * m, FIG2_NU, gamma_bar=equicorrelation(m, rho))


def contour_preset(name: str) -> SutParams:
    """Names: fig1-sut-m1 .. fig1-sut-m3 and fig1-sun-m1 .. fig1-sun-m3."""
    parts = name.split("-")
    if len(parts) != 3 or parts[0] != "fig1" or parts[1] not in ("sut", "sun") or not parts[2].startswith("m"):
        raise InputError(f"unknown contour preset {name!r}")
    try:
        m = int(parts[2][1:])
    except ValueError:
        raise InputError(f"unknown contour preset {name!r}") from None
    return fig1(m, sun=parts[1] == "sun")


CONTOUR_PRESETS = [f"fig1-{k}-m{m}" for k in ("sut", "sun") for m in (1, 2, 3)]


def skew_direction(p: SutParams) -> np.ndarray:
    """Sum of the columns of omega Delta gamma_bar^{-1}."""
    if p.m == 0:
        return np.zeros(p.d)
    a = np.linalg.solve(p.gamma_bar, p.delta.T).T * p.omega_scale[:, None]
    return a.sum(axis=1)
