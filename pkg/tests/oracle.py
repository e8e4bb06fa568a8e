"""Independent references for tests: closed-form skew-t / t formulas and Monte-Carlo estimators.

Nothing here imports the library's density or moment code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats


class DofTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class OracleReport:
    statistic: str
    oracle: float
    value: float
    se: float
    threshold: float

    @property
    def z(self) -> float:
        if self.se == 0:
            return 0.0 if self.oracle == self.value else math.inf
        return (self.value - self.oracle) / self.se

    @property
    def passed(self) -> bool:
        return abs(self.z) <= self.threshold


def compare(statistic, oracle, value, se, threshold=3.0) -> list[OracleReport]:
    o, v, s = (np.ravel(np.asarray(a, dtype=float)) for a in (oracle, value, se))
    s = np.broadcast_to(s, o.shape)
    return [OracleReport(f"{statistic}[{i}]", o[i], v[i], s[i], threshold) for i in range(o.size)]


# ------------------------------------------------------------------ univariate skew-t


@dataclass(frozen=True)
class SkewT:
    """Univariate skew-t with location 0, scale 1, skewness delta in (-1, 1), dof nu."""

    delta: float
    nu: float

    @property
    def alpha(self) -> float:
        return self.delta / math.sqrt(1 - self.delta**2)

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        nu = self.nu
        if math.isinf(nu):
            return 2 * stats.norm.pdf(y) * stats.norm.cdf(self.alpha * y)
        arg = self.alpha * y * np.sqrt((nu + 1) / (nu + y * y))
        return 2 * stats.t.pdf(y, nu) * stats.t.cdf(arg, nu + 1)

    def _b(self):
        nu = self.nu
        if math.isinf(nu):
            return math.sqrt(2 / math.pi)
        return math.sqrt(nu / math.pi) * math.exp(special.gammaln((nu - 1) / 2) - special.gammaln(nu / 2))

    def mean(self):
        return self.delta * self._b()

    def var(self):
        nu = self.nu
        m2 = 1.0 if math.isinf(nu) else nu / (nu - 2)
        return m2 - self.mean() ** 2

    def skewness(self):
        nu, d, mu = self.nu, self.delta, self.mean()
        if math.isinf(nu):
            e3 = 3 - d * d
            m2 = 1.0
        else:
            e3 = nu * (3 - d * d) / (nu - 3)
            m2 = nu / (nu - 2)
        third = mu * (e3 - 3 * m2 + 2 * mu * mu)
        return third / self.var() ** 1.5

    def excess_kurtosis(self):
        nu, d, mu = self.nu, self.delta, self.mean()
        if math.isinf(nu):
            m4, e3, m2 = 3.0, 3 - d * d, 1.0
        else:
            m4 = 3 * nu * nu / ((nu - 2) * (nu - 4))
            e3 = nu * (3 - d * d) / (nu - 3)
            m2 = nu / (nu - 2)
        fourth = m4 - 4 * mu * mu * e3 + 6 * mu * mu * m2 - 3 * mu**4
        return fourth / self.var() ** 2 - 3


def st_reference(delta: float, nu: float, order: int = 4, alpha: float | None = None) -> dict:
    """pdf and moments up to ``order`` of the standard univariate ST.

    Pass ``alpha`` instead of ``delta`` for the slant form.
    """
    if alpha is not None:
        delta = alpha / math.sqrt(1 + alpha * alpha)
    if nu <= order:
        raise DofTooSmall(f"nu = {nu} must exceed {order}")
    s = SkewT(delta, nu)
    out = {"pdf": s.pdf}
    getters = [("mean", s.mean), ("var", s.var), ("skewness", s.skewness), ("kurtosis", s.excess_kurtosis)]
    for name, fn in getters[:order]:
        out[name] = fn()
    return out


# frozen regression constant: mean of ST(delta=0.7, nu=5)
ST_MEAN_D07_NU5 = 0.6643117071893653


def half_t_moment(nu: float, k: int) -> float:
    """E|T|^k for T ~ t_nu by quadrature."""
    f = lambda x: 2 * x**k * stats.t.pdf(x, nu)  # noqa: E731
    return integrate.quad(f, 0, np.inf, limit=200)[0]


# ------------------------------------------------------------------ multivariate t


def mvt_logpdf(x, mu, sigma, nu):
    return stats.multivariate_t(mu, sigma, df=nu).logpdf(x)


def mvt_kurtosis_gamma2(d: int, nu: float) -> float:
    return 2 * d * (d + 2) / (nu - 4)


def t_conditional(mu, sigma, nu, d1, y1):
    """Classical conditional of a multivariate t: (location, scale, dof)."""
    mu, sigma, y1 = (np.asarray(a, dtype=float) for a in (mu, sigma, y1))
    s11, s12 = sigma[:d1, :d1], sigma[:d1, d1:]
    s21, s22 = sigma[d1:, :d1], sigma[d1:, d1:]
    r = y1 - mu[:d1]
    loc = mu[d1:] + s21 @ np.linalg.solve(s11, r)
    q = r @ np.linalg.solve(s11, r)
    scale = (nu + q) / (nu + d1) * (s22 - s21 @ np.linalg.solve(s11, s12))
    return loc, scale, nu + d1


def draw_mvt(n, mu, sigma, nu, rng):
    z = rng.multivariate_normal(np.zeros(len(mu)), sigma, n)
    if math.isinf(nu):
        return mu + z
    return mu + z * np.sqrt(nu / rng.chisquare(nu, n))[:, None]


# ------------------------------------------------------------------ Monte-Carlo estimators


def _batches(n, k=50):
    edges = np.linspace(0, n, k + 1).astype(int)
    return list(zip(edges[:-1], edges[1:]))


def _central_tensors(x, mu, order):
    z = x - mu
    if order == 2:
        return np.einsum("ni,nj->ij", z, z) / len(z)
    if order == 3:
        return np.einsum("ni,nj,nk->ijk", z, z, z) / len(z)
    zz = np.einsum("ni,nj->nij", z, z)
    return np.einsum("nij,nkl->ijkl", zz, zz) / len(z)


def mc_estimate(draws: np.ndarray, which: str, points=None, n_batches: int = 50):
    """(estimate, standard error) of a statistic from iid draws.

    which: 'mean' | 'cov' | 'mu3' | 'mu4' (central tensors) | 'raw3' | 'raw4'
    | 'mardia' (returns arrays [gamma1, gamma2]) | 'ecdf' (needs points).
    Standard errors come from batch means (jackknife over batches for mardia).
    """
    x = np.asarray(getattr(draws, "draws", draws), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if which == "mean":
        return x.mean(axis=0), x.std(axis=0, ddof=1) / math.sqrt(n)
    if which == "ecdf":
        pts = np.atleast_2d(points)
        p = np.array([np.mean(np.all(x <= q, axis=1)) for q in pts])
        return p, np.sqrt(np.maximum(p * (1 - p), 1e-300) / n)
    if which == "mardia":
        ests = []
        for a, b in _batches(n, n_batches):
            keep = np.ones(n, dtype=bool)
            keep[a:b] = False
            ests.append(_mardia(x[keep]))
        ests = np.array(ests)
        full = _mardia(x)
        k = len(ests)
        se = np.sqrt((k - 1) / k * np.sum((ests - ests.mean(axis=0)) ** 2, axis=0))
        return full, se
    order = {"cov": 2, "mu3": 3, "mu4": 4, "raw3": 3, "raw4": 4}[which]
    center = which in ("cov", "mu3", "mu4")
    vals = []
    for a, b in _batches(n, n_batches):
        xb = x[a:b]
        mu = xb.mean(axis=0) if center else np.zeros(d)
        vals.append(_central_tensors(xb, mu, order))
    vals = np.array(vals)
    mu = x.mean(axis=0) if center else np.zeros(d)
    est = _chunked_tensor(x, mu, order)
    se = vals.std(axis=0, ddof=1) / math.sqrt(len(vals))
    return est, se


def _chunked_tensor(x, mu, order, chunk=200_000):
    acc = 0.0
    for s in range(0, len(x), chunk):
        acc = acc + _central_tensors(x[s : s + chunk], mu, order) * len(x[s : s + chunk])
    return acc / len(x)


def _mardia(x):
    n, d = x.shape
    mu = x.mean(axis=0)
    s = _chunked_tensor(x, mu, 2)
    li = np.linalg.inv(np.linalg.cholesky(s))
    z = (x - mu) @ li.T
    m3 = _chunked_tensor(z, np.zeros(d), 3)
    b1 = float(np.sum(m3 * m3))
    b2 = float(np.mean(np.sum(z * z, axis=1) ** 2))
    return np.array([b1, b2 - d * (d + 2)])


def ks_critical(n1: int, n2: int, alpha: float) -> float:
    """Asymptotic two-sample KS critical distance."""
    c = math.sqrt(-0.5 * math.log(alpha / 2))
    return c * math.sqrt((n1 + n2) / (n1 * n2))


def random_valid_params(rng, d, m, nu, tau_scale=0.0, shrink=0.7):
    """Random (xi, omega, delta, tau, gamma_bar) with a PD extended correlation."""
    a = rng.standard_normal((d + m, d + m + 2))
    c = a @ a.T
    s = np.sqrt(np.diag(c))
    r = c / np.outer(s, s)
    r[:m, m:] *= shrink
    r[m:, :m] *= shrink
    gam, delta, obar = r[:m, :m], r[m:, :m], r[m:, m:]
    w = np.exp(rng.uniform(-0.5, 0.5, d))
    omega = obar * np.outer(w, w)
    xi = rng.uniform(-1, 1, d)
    tau = tau_scale * rng.uniform(-1, 1, m)
    return dict(xi=xi, omega=omega, delta=delta, tau=tau, gamma_bar=gam, nu=nu)
