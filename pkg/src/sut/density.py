"""SUT density, log-density and distribution function."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DenominatorUnderflow, InputError, ValidationError
from .numerics import (
    CdfResult,
    QmcConfig,
    cholesky,
    mvt_cdf,
    mvt_cdf_batch,
    t_logpdf,
)
from .params import SutParams, validate

DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class QuadraticData:
    q: np.ndarray
    alpha: np.ndarray


@dataclass(frozen=True)
class DensityResult:
    value: np.ndarray
    error_estimate: np.ndarray


def _ensure_valid(p: SutParams):
    errs = validate(p)
    if errs:
        raise ValidationError(errs)


def _points(p: SutParams, y):
    y = np.asarray(y, dtype=float)
    single = y.ndim <= 1 and (p.d > 1 or y.ndim == 0 or y.size == 1)
    if y.size % p.d or (y.ndim >= 1 and y.shape[-1] != p.d and not (p.d == 1 and y.ndim == 1)):
        raise InputError(f"evaluation points must have {p.d} coordinates")
    y = y.reshape(-1, p.d)
    return y, single


def quadratic(p: SutParams, y) -> QuadraticData:
    y, _ = _points(p, y)
    L = cholesky(p.omega, "omega")
    r = np.linalg.solve(L, (y - p.xi).T)
    q = np.sum(r * r, axis=0)
    alpha = np.ones_like(q) if p.is_sun else (p.nu + q) / (p.nu + p.d)
    return QuadraticData(q, alpha)


def latent_normalizer(p: SutParams, cfg: QmcConfig | None = None) -> CdfResult:
    """T_m(tau; gamma_bar, nu), the selection probability."""
    res = mvt_cdf(p.tau, p.gamma_bar, p.nu, cfg)
    if res.value < DENOM_FLOOR:
        raise DenominatorUnderflow(
            f"T_m(tau; gamma_bar, nu) = {res.value:.3g} is below {DENOM_FLOOR:g}"
        )
    return res


def _log_ratio(p: SutParams, y: np.ndarray, cfg):
    """log of the T_m ratio factor and its absolute QMC error on the ratio scale."""
    n = y.shape[0]
    if p.m == 0:
        return np.zeros(n), np.ones(n), np.zeros(n)
    obar = p.omega_bar
    lam = np.linalg.solve(obar, p.delta).T  # Delta^T Omega_bar^{-1}
    ups = p.gamma_bar - lam @ p.delta
    cholesky(ups, "gamma_bar - delta^T omega_bar^-1 delta")
    z = (y - p.xi) / p.omega_scale
    arg = p.tau + z @ lam.T
    qd = quadratic(p, y)
    scaled = arg / np.sqrt(qd.alpha)[:, None]
    num, num_err, _ = mvt_cdf_batch(scaled, ups, p.nu + p.d, cfg)
    den = latent_normalizer(p, cfg)
    ratio = num / den.value
    rel = np.hypot(
        np.divide(num_err, num, out=np.zeros_like(num), where=num > 0),
        den.error_estimate / den.value,
    )
    with np.errstate(divide="ignore"):
        lr = np.log(num) - math.log(den.value)
    return lr, ratio, ratio * rel


def pdf_with_error(p: SutParams, y, cfg: QmcConfig | None = None) -> DensityResult:
    """Density values and first-order QMC error bounds at one or many points."""
    _ensure_valid(p)
    pts, single = _points(p, y)
    lt = t_logpdf(pts, p.xi, p.omega, p.nu)
    _, ratio, rerr = _log_ratio(p, pts, cfg)
    f = np.exp(lt)
    val, err = f * ratio, f * rerr
    if single:
        return DensityResult(val[0], err[0])
    return DensityResult(val, err)


def pdf(p: SutParams, y, cfg: QmcConfig | None = None):
    return pdf_with_error(p, y, cfg).value


def logpdf(p: SutParams, y, cfg: QmcConfig | None = None):
    """Log density; points where the T_m factor underflows give -inf."""
    _ensure_valid(p)
    pts, single = _points(p, y)
    lt = t_logpdf(pts, p.xi, p.omega, p.nu)
    lr, _, _ = _log_ratio(p, pts, cfg)
    out = lt + lr
    return out[0] if single else out


def extended_dispersion(p: SutParams) -> np.ndarray:
    """[[gamma_bar, -Delta^T omega], [-omega Delta, Omega]] for the joint (latent, observed) cdf."""
    wd = p.omega_scale[:, None] * p.delta
    return np.block([[p.gamma_bar, -wd.T], [-wd, p.omega]])


def cdf(p: SutParams, y, cfg: QmcConfig | None = None):
    """P(Y <= y).  Returns a CdfResult for one point or a list for several."""
    _ensure_valid(p)
    pts, single = _points(p, y)
    big = extended_dispersion(p)
    den = latent_normalizer(p, cfg) if p.m else CdfResult(1.0, 0.0, 0)
    out = []
    for row in pts:
        upper = np.concatenate([p.tau, row - p.xi])
        num = mvt_cdf(upper, big, p.nu, cfg)
        val = num.value / den.value
        rel = math.hypot(
            num.error_estimate / num.value if num.value > 0 else 0.0,
            den.error_estimate / den.value,
        )
        err = val * rel if num.value > 0 else num.error_estimate / den.value
        out.append(CdfResult(min(max(val, 0.0), 1.0), err, num.points_used + den.points_used))
    return out[0] if single else out
