"""Exact SUT samplers: selection, convolution, and the SUN scale mixture."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AcceptanceTooLow, InputError, TauMustBeZero, ValidationError
from .numerics import QmcConfig, cholesky, mvt_cdf
from .params import SutParams, validate

MIN_ACCEPTANCE = 1e-6
_MAX_BLOCK = 1 << 20


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator from an integer seed (Generators pass through)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def _seed_of(rng):
    return None if isinstance(rng, np.random.Generator) else int(rng)


@dataclass(frozen=True)
class LatentDraws:
    u_star: np.ndarray
    q_ustar: np.ndarray
    acceptance_rate: float


@dataclass(frozen=True)
class MixtureDraws:
    v: np.ndarray
    z0: np.ndarray


@dataclass(frozen=True)
class SampleBatch:
    draws: np.ndarray
    method: str
    seed: int | None
    acceptance_rate: float = 1.0

    @property
    def n(self) -> int:
        return self.draws.shape[0]

    def to_csv(self, fh) -> None:
        fh.write(f"# method={self.method}, seed={self.seed}, n={self.n}\n")
        d = self.draws.shape[1]
        fh.write(",".join(f"y{i + 1}" for i in range(d)) + "\n")
        np.savetxt(fh, self.draws, delimiter=",", fmt="%.17g")


def rmvt(n: int, sigma, nu: float, rng: np.random.Generator, chol=None) -> np.ndarray:
    """Draws from T_k(0, sigma, nu) as sqrt(nu / chi2_nu) * L z."""
    L = cholesky(sigma) if chol is None else chol
    z = rng.standard_normal((n, L.shape[0])) @ L.T
    if math.isinf(nu):
        return z
    return z * np.sqrt(nu / rng.chisquare(nu, n))[:, None]


def _check(p: SutParams):
    errs = validate(p)
    if errs:
        raise ValidationError(errs)


def _accept_prob(tau, gamma_bar, nu):
    if len(tau) == 0:
        return 1.0
    prob = mvt_cdf(tau, gamma_bar, nu, QmcConfig(n_points=2**10)).value
    if prob < MIN_ACCEPTANCE:
        raise AcceptanceTooLow(prob, MIN_ACCEPTANCE)
    return prob


def _rejection(n, sigma, nu, m, tau, rng, prob):
    """Rows of T_k(0, sigma, nu) draws whose first m coordinates satisfy u + tau > 0."""
    L = cholesky(sigma)
    kept, total, seen = [], 0, 0
    while total < n:
        block = int(min(_MAX_BLOCK, max(1024, 1.2 * (n - total) / prob + 100)))
        x = rmvt(block, sigma, nu, rng, chol=L)
        seen += block
        ok = np.all(x[:, :m] + tau > 0, axis=1)
        x = x[ok]
        kept.append(x)
        total += x.shape[0]
    out = np.concatenate(kept)[:n]
    return out, total / seen


def sample_truncated_t(m: int, gamma_bar, tau, nu: float, n: int, rng) -> LatentDraws:
    """Exact draws of U* = (U0 | U0 + tau > 0) with U0 ~ T_m(0, gamma_bar, nu)."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    gamma_bar = np.atleast_2d(np.asarray(gamma_bar, dtype=float))
    if tau.shape != (m,) or gamma_bar.shape != (m, m):
        raise InputError("latent dimensions do not match m")
    gen = make_rng(rng)
    if m == 0:
        return LatentDraws(np.zeros((n, 0)), np.zeros(n), 1.0)
    prob = _accept_prob(tau, gamma_bar, nu)
    u, rate = _rejection(n, gamma_bar, nu, m, tau, gen, prob)
    q = np.sum(u * np.linalg.solve(gamma_bar, u.T).T, axis=1)
    return LatentDraws(u, q, rate)


def sample_selection(p: SutParams, n: int, rng) -> SampleBatch:
    """Draw the (m+d) joint vector and keep rows with U0 + tau > 0."""
    _check(p)
    gen = make_rng(rng)
    prob = _accept_prob(p.tau, p.gamma_bar, p.nu)
    x, rate = _rejection(n, p.extended(), p.nu, p.m, p.tau, gen, prob)
    y = p.xi + x[:, p.m :] * p.omega_scale
    return SampleBatch(y, "selection", _seed_of(rng), rate)


def _convolution_core(p: SutParams, nu: float, n: int, gen) -> tuple[np.ndarray, float]:
    """Standardized Z = Delta G^-1 U* + sqrt((nu + Q)/(nu + m)) W*."""
    lat = sample_truncated_t(p.m, p.gamma_bar, p.tau, nu, n, gen)
    if p.m:
        a = np.linalg.solve(p.gamma_bar, p.delta.T).T  # Delta gamma_bar^{-1}
        resid = p.omega_bar - a @ p.delta.T
    else:
        a = np.zeros((p.d, 0))
        resid = p.omega_bar
    resid = 0.5 * (resid + resid.T)
    w = rmvt(n, resid, nu + p.m, gen)
    if not math.isinf(nu):
        w = w * np.sqrt((nu + lat.q_ustar) / (nu + p.m))[:, None]
    return lat.u_star @ a.T + w, lat.acceptance_rate


def sample_convolution(p: SutParams, n: int, rng) -> SampleBatch:
    _check(p)
    gen = make_rng(rng)
    z, rate = _convolution_core(p, p.nu, n, gen)
    return SampleBatch(p.xi + z * p.omega_scale, "convolution", _seed_of(rng), rate)


def sample_sun_mixture(p: SutParams, n: int, rng, return_mixture: bool = False):
    """Y = xi + V^{-1/2} Z0 with V ~ Gamma(nu/2, rate nu/2) and Z0 a zero-location SUN draw."""
    _check(p)
    if np.any(p.tau != 0):
        raise TauMustBeZero("the scale-mixture representation requires tau = 0")
    gen = make_rng(rng)
    z, rate = _convolution_core(p, math.inf, n, gen)
    z0 = z * p.omega_scale
    if p.is_sun:
        v = np.ones(n)
    else:
        v = gen.gamma(p.nu / 2, 2.0 / p.nu, n)
    batch = SampleBatch(p.xi + z0 / np.sqrt(v)[:, None], "sun-mixture", _seed_of(rng), rate)
    if return_mixture:
        return batch, MixtureDraws(v, z0)
    return batch


SAMPLERS = {
    "selection": sample_selection,
    "convolution": sample_convolution,
    "sun-mixture": sample_sun_mixture,
}


def sample(p: SutParams, n: int, rng, method: str = "convolution") -> SampleBatch:
    if n <= 0:
        raise InputError("n must be positive")
    try:
        fn = SAMPLERS[method]
    except KeyError:
        raise InputError(f"unknown sampling method {method!r}") from None
    return fn(p, n, rng)
