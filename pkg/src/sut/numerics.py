"""Linear-algebra helpers, t densities, and the randomized-QMC engine.

The engine integrates over ``{x : x < b}`` for ``x ~ T_n(0, sigma, nu)`` by
separation of variables (Genz-Bretz).  The t law is written as ``Z / sqrt(G)``
with ``Z ~ N(0, sigma)`` and ``G ~ Gamma(nu/2, rate nu/2)``; the first QMC
coordinate drives ``G`` and the remaining ones the sequential truncated
normals.  Raw moments of order ``k`` are computed after tilting ``G`` to
``Gamma((nu-k)/2, rate nu/2)``, which absorbs the ``G^{-k/2}`` factor and
keeps every integrand bounded.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special, stats
from scipy.stats import qmc

from .errors import InputError, NonFiniteInput, NotPositiveDefinite

log = logging.getLogger(__name__)

PD_RTOL = 1e-12
_TINY = 1e-300
_U_HI = 1.0 - 1e-16


# ---------------------------------------------------------------- linear algebra


def cholesky(a, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor; pivots at or below 1e-12 * max diagonal are rejected."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"{what} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput(f"{what} has non-finite entries")
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    scale = np.abs(a).max()
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(scale, 1.0)):
        raise InputError(f"{what} is not symmetric")
    tol = PD_RTOL * max(np.max(np.diag(a)), 0.0)
    L = np.zeros_like(a)
    for j in range(n):
        piv = a[j, j] - L[j, :j] @ L[j, :j]
        if not piv > tol:
            raise NotPositiveDefinite(j, float(piv), what)
        L[j, j] = math.sqrt(piv)
        L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def is_pd(a) -> bool:
    try:
        cholesky(a)
    except (NotPositiveDefinite, InputError):
        return False
    return True


def cov_to_cor(omega):
    """Split ``omega`` into (correlation matrix, diagonal scale matrix)."""
    omega = np.asarray(omega, dtype=float)
    cholesky(omega, "omega")
    w = np.sqrt(np.diag(omega))
    bar = omega / np.outer(w, w)
    np.fill_diagonal(bar, 1.0)
    return bar, np.diag(w)


def kron(a, b) -> np.ndarray:
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def vec(a) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(a).reshape(-1, order="F")


def commutation(d: int) -> np.ndarray:
    """K_d with K_d vec(A) = vec(A^T) for d x d matrices A."""
    if d < 1:
        raise InputError("commutation dimension must be positive")
    k = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            k[i * d + j, j * d + i] = 1.0
    return k


def sym_sqrt(a) -> np.ndarray:
    vals, vecs = np.linalg.eigh(np.asarray(a, dtype=float))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


# ---------------------------------------------------------------- t densities


def c_const(upsilon: float, r: int) -> float:
    """Normalizing constant Gamma((u+r)/2) / (Gamma(u/2) (pi u)^(r/2))."""
    if not (upsilon > 0 and np.isfinite(upsilon)):
        raise NonFiniteInput(f"upsilon must be finite and positive, got {upsilon}")
    return math.exp(log_c_const(upsilon, r))


def log_c_const(upsilon: float, r: int) -> float:
    return (
        special.gammaln((upsilon + r) / 2)
        - special.gammaln(upsilon / 2)
        - 0.5 * r * math.log(math.pi * upsilon)
    )


def t_logpdf(x, xi, omega, nu: float) -> np.ndarray:
    """Log density of T_d(xi, omega, nu) at rows of ``x``; nu = inf gives the normal."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("evaluation points must be finite")
    L = cholesky(omega, "omega")
    d = L.shape[0]
    r = np.linalg.solve(L, (x - xi).T)
    q = np.sum(r * r, axis=0)
    half_logdet = np.sum(np.log(np.diag(L)))
    if math.isinf(nu):
        out = -0.5 * d * math.log(2 * math.pi) - half_logdet - 0.5 * q
    else:
        out = log_c_const(nu, d) - half_logdet - 0.5 * (nu + d) * np.log1p(q / nu)
    return out[0] if single else out


def t_pdf(x, xi, omega, nu: float):
    return np.exp(t_logpdf(x, xi, omega, nu))


def t1_cdf(x, nu: float):
    return special.ndtr(x) if math.isinf(nu) else stats.t.cdf(x, nu)


def gamma_inverse_moment(nu: float, k: int) -> float:
    """E(V^{-k/2}) for V ~ Gamma(nu/2, rate nu/2); 1 at nu = inf."""
    if math.isinf(nu):
        return 1.0
    if not nu > k:
        return math.inf
    return math.exp(
        0.5 * k * math.log(nu / 2) + special.gammaln((nu - k) / 2) - special.gammaln(nu / 2)
    )


# ---------------------------------------------------------------- QMC engine


@dataclass(frozen=True)
class QmcConfig:
    n_points: int = 2**13
    n_randomizations: int = 8
    seed: int = 0

    def __post_init__(self):
        n = self.n_points
        if n < 2 or n & (n - 1):
            raise InputError(f"qmc points must be a power of two, got {n}")
        if self.n_randomizations < 2:
            raise InputError("need at least two QMC randomizations")


@dataclass(frozen=True)
class CdfResult:
    value: float
    error_estimate: float
    points_used: int


def _sobol(dim: int, cfg: QmcConfig) -> np.ndarray:
    if dim <= 24:
        return _sobol_cached(dim, cfg.n_points, cfg.n_randomizations, cfg.seed)
    return _sobol_make(dim, cfg.n_points, cfg.n_randomizations, cfg.seed)


def _sobol_make(dim, n, reps, seed):
    children = np.random.SeedSequence(seed).spawn(reps)
    m = int(round(math.log2(n)))
    out = np.empty((reps, n, dim))
    for r, ss in enumerate(children):
        eng = qmc.Sobol(dim, scramble=True, seed=np.random.Generator(np.random.Philox(ss)))
        out[r] = eng.random_base2(m)
    np.clip(out, 1e-15, _U_HI, out=out)
    return out


@lru_cache(maxsize=32)
def _sobol_cached(dim, n, reps, seed):
    out = _sobol_make(dim, n, reps, seed)
    out.setflags(write=False)
    return out


def _radial(x0: np.ndarray, nu: float, tilt: int) -> np.ndarray:
    """sqrt(G) with G ~ Gamma((nu - tilt)/2, rate nu/2) from uniforms x0."""
    if math.isinf(nu):
        return np.ones_like(x0)
    g = special.gammaincinv((nu - tilt) / 2, x0) / (nu / 2)
    return np.sqrt(np.maximum(g, _TINY))


def _sov(upper: np.ndarray, L: np.ndarray, r: np.ndarray, x: np.ndarray, keep: bool):
    """Separation-of-variables weights for K limit vectors on shared points.

    upper (K, n), L (n, n) lower, r (P,), x (P, n+1).  Returns weights (K, P)
    and, when ``keep``, the normal draws z (K, P, n) in the ordering of L.
    """
    K, n = upper.shape
    P = x.shape[0]
    w = np.ones((K, P))
    z = np.zeros((K, P, n))
    for i in range(n):
        s = z[:, :, :i] @ L[i, :i] if i else 0.0
        t = (upper[:, i : i + 1] * r - s) / L[i, i]
        e = special.ndtr(t)
        w *= e
        if i < n - 1 or keep:
            u = np.clip(x[:, i + 1] * e, _TINY, _U_HI)
            z[:, :, i] = special.ndtri(u)
    return w, (z if keep else None)


def _order(b: np.ndarray, sigma: np.ndarray):
    """Genz-Bretz variable ordering with simultaneous Cholesky factorization."""
    n = len(b)
    S = sigma.copy()
    b = b.copy()
    perm = np.arange(n)
    L = np.zeros((n, n))
    y = np.zeros(n)
    tol = PD_RTOL * np.max(np.diag(S))
    for k in range(n):
        if k < n - 1:
            cv = np.diag(S)[k:] - np.sum(L[k:, :k] ** 2, axis=1)
            t = (b[k:] - L[k:, :k] @ y[:k]) / np.sqrt(np.maximum(cv, _TINY))
            j = k + int(np.argmin(special.ndtr(t)))
            if j != k:
                for arr in (perm, b, y):
                    arr[[k, j]] = arr[[j, k]]
                S[[k, j], :] = S[[j, k], :]
                S[:, [k, j]] = S[:, [j, k]]
                L[[k, j], :] = L[[j, k], :]
        piv = S[k, k] - L[k, :k] @ L[k, :k]
        if not piv > tol:
            raise NotPositiveDefinite(k, float(piv), "sigma")
        L[k, k] = math.sqrt(piv)
        L[k + 1 :, k] = (S[k + 1 :, k] - L[k + 1 :, :k] @ L[k, :k]) / L[k, k]
        tk = (b[k] - L[k, :k] @ y[:k]) / L[k, k]
        p = special.ndtr(tk)
        y[k] = -math.exp(-0.5 * tk * tk) / math.sqrt(2 * math.pi) / max(p, _TINY) if np.isfinite(tk) else 0.0
    return perm, L


def _check_nu(nu: float):
    if not (nu > 0):
        raise InputError(f"degrees of freedom must be positive, got {nu}")


def _finish(reps: np.ndarray, cfg: QmcConfig):
    est = float(np.mean(reps))
    err = 3.0 * float(np.std(reps, ddof=1)) / math.sqrt(len(reps))
    return est, err


def _clamp(value: float, err: float) -> float:
    c = min(max(value, 0.0), 1.0)
    if abs(c - value) > err:
        log.warning("QMC probability %.3g clamped to [0,1] by %.3g", value, abs(c - value))
    return c


def mvt_cdf(upper, sigma, nu: float, cfg: QmcConfig | None = None) -> CdfResult:
    """P(X <= upper) for X ~ T_n(0, sigma, nu); nu = inf gives the normal cdf."""
    cfg = cfg or QmcConfig()
    _check_nu(nu)
    b = np.atleast_1d(np.asarray(upper, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sigma.shape != (len(b), len(b)):
        raise InputError("upper and sigma dimensions differ")
    if np.any(np.isnan(b)):
        raise NonFiniteInput("upper limit contains NaN")
    cholesky(sigma, "sigma")
    if np.any(b == -np.inf):
        return CdfResult(0.0, 0.0, 0)
    keep = np.isfinite(b)
    b, sigma = b[keep], sigma[np.ix_(keep, keep)]
    n = len(b)
    if n == 0:
        return CdfResult(1.0, 0.0, 0)
    if n == 1:
        return CdfResult(float(t1_cdf(b[0] / math.sqrt(sigma[0, 0]), nu)), 0.0, 0)
    perm, L = _order(b, sigma)
    bp = b[perm][None, :]
    x = _sobol(n + 1, cfg)
    R, N, _ = x.shape
    flat = x.reshape(R * N, n + 1)
    r = _radial(flat[:, 0], nu, 0)
    w, _ = _sov(bp, L, r, flat, keep=False)
    est, err = _finish(w.reshape(R, N).mean(axis=1), cfg)
    return CdfResult(_clamp(est, err), err, R * N)


def mvt_cdf_batch(uppers, sigma, nu: float, cfg: QmcConfig | None = None, chunk: int = 64):
    """Vectorized mvt_cdf over rows of ``uppers`` sharing one sigma (no reordering).

    Returns (values, errors, replicates) with replicates of shape (R, K).
    """
    cfg = cfg or QmcConfig()
    _check_nu(nu)
    B = np.atleast_2d(np.asarray(uppers, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    K, n = B.shape
    if sigma.shape != (n, n):
        raise InputError("upper and sigma dimensions differ")
    if np.any(np.isnan(B)):
        raise NonFiniteInput("upper limit contains NaN")
    L = cholesky(sigma, "sigma")
    R = cfg.n_randomizations
    if n == 0:
        reps = np.ones((R, K))
    elif n == 1:
        v = t1_cdf(B[:, 0] / L[0, 0], nu)
        reps = np.broadcast_to(v, (R, K)).copy()
    else:
        x = _sobol(n + 1, cfg)
        N = x.shape[1]
        flat = x.reshape(R * N, n + 1)
        r = _radial(flat[:, 0], nu, 0)
        reps = np.empty((R, K))
        chunk = max(1, min(chunk, 2**22 // (R * N * n)))
        for s in range(0, K, chunk):
            w, _ = _sov(B[s : s + chunk], L, r, flat, keep=False)
            reps[:, s : s + chunk] = w.reshape(-1, R, N).mean(axis=2).T
    vals = np.clip(reps.mean(axis=0), 0.0, 1.0)
    errs = 3.0 * reps.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(K)
    return vals, errs, reps


@dataclass(frozen=True)
class TruncatedRaw:
    """Per-replicate raw moments of (X | X < b), X ~ T_m(0, sigma, nu).

    ``prob`` has shape (R,).  ``raw[k]`` has shape (R,) + (m,)*k, or is None
    when the moment does not exist (nu <= k).
    """

    prob: np.ndarray
    raw: tuple
    points_used: int


def truncated_raw(upper, sigma, nu: float, order: int, cfg: QmcConfig | None = None) -> TruncatedRaw:
    """Raw moments up to ``order`` of a t vector truncated to ``{x < upper}``."""
    cfg = cfg or QmcConfig()
    _check_nu(nu)
    b = np.atleast_1d(np.asarray(upper, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    m = len(b)
    if not np.all(np.isfinite(b)):
        raise NonFiniteInput("truncation limits must be finite")
    R = cfg.n_randomizations
    if m == 0:
        raw = tuple([np.ones(R)] + [None] * order)
        return TruncatedRaw(np.ones(R), raw, 0)
    perm, L = _order(b, sigma)
    inv = np.argsort(perm)
    bp = b[perm][None, :]
    x = _sobol(m + 1, cfg)
    N = x.shape[1]
    flat = x.reshape(R * N, m + 1)

    def run(tilt):
        r = _radial(flat[:, 0], nu, tilt)
        w, z = _sov(bp, L, r, flat, keep=True)
        return w[0].reshape(R, N), (z[0] @ L.T)[:, inv].reshape(R, N, m)

    finite = not math.isinf(nu)
    w0, z0 = run(0)
    prob = w0.mean(axis=1)
    raw = [prob]
    for k in range(1, order + 1):
        if finite and not nu > k:
            raw.append(None)
            continue
        w, z = run(k) if finite else (w0, z0)
        raw.append(gamma_inverse_moment(nu, k) * _weighted_power(w, z, k) / _bcast(prob, k))
    return TruncatedRaw(prob, tuple(raw), R * N)


def _bcast(p, k):
    return p.reshape((-1,) + (1,) * k)


def _weighted_power(w, z, k):
    """mean over points of w * z^{(x)k}, per replicate, as a (R,)+(m,)*k tensor."""
    N = w.shape[1]
    if k == 1:
        return np.einsum("rn,rni->ri", w, z) / N
    if k == 2:
        return np.einsum("rn,rni,rnj->rij", w, z, z) / N
    zz = z[:, :, :, None] * z[:, :, None, :]
    if k == 3:
        return np.einsum("rn,rnij,rnk->rijk", w, zz, z) / N
    if k == 4:
        wzz = w[:, :, None, None] * zz
        return np.einsum("rnij,rnkl->rijkl", wzz, zz, optimize=True) / N
    raise InputError("moment order above 4 is not supported")
