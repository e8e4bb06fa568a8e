"""Truncated latent moments, SUT moments up to order four, and Mardia measures.

Every QMC-based quantity is carried as a stack of per-randomization
replicates (leading axis R).  Point estimates are replicate means and standard
errors are replicate standard deviations over sqrt(R), so errors flow through
nonlinear assembly steps such as standardization.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DofTooSmall, InputError, TauMustBeZero, ValidationError
from .numerics import (
    QmcConfig,
    c_const,
    gamma_inverse_moment,
    truncated_raw,
)
from .params import HPsiParams, SutParams, from_hpsi, validate

_LETTERS = "ijkl"
H_ORDER = {"one": 0, "u": 1, "uuT": 2, "u⊗uuT": 3, "uuT⊗uuT": 4}
_H_ALIASES = {"ukronuuT": "u⊗uuT", "uuTkronuuT": "uuT⊗uuT", "u(x)uuT": "u⊗uuT", "uuT(x)uuT": "uuT⊗uuT"}


# ---------------------------------------------------------------- helpers


def _mean_se(reps):
    reps = np.asarray(reps)
    R = reps.shape[0]
    return reps.mean(axis=0), reps.std(axis=0, ddof=1) / math.sqrt(R)


def kron_layout(t: np.ndarray, order: int) -> np.ndarray:
    """Tensor of order 3 or 4 (leading axes allowed) to the Kronecker layout.

    Order 3: row i*d + j, column k holds E X_i X_j X_k (layout of E(X kron XX^T)).
    Order 4: row i*d + k, column j*d + l holds E X_i X_j X_k X_l (layout of E(XX^T kron XX^T)).
    """
    d = t.shape[-1]
    if order == 3:
        return t.reshape(t.shape[:-3] + (d * d, d))
    return np.moveaxis(t, -2, -3).reshape(t.shape[:-4] + (d * d, d * d))


def tensor_from_kron(a: np.ndarray, order: int) -> np.ndarray:
    if order == 3:
        d = a.shape[-1]
        return a.reshape(a.shape[:-2] + (d, d, d))
    d = int(round(math.sqrt(a.shape[-1])))
    return np.moveaxis(a.reshape(a.shape[:-2] + (d, d, d, d)), -3, -2)


def shift_moments(raw: list, c: np.ndarray) -> list:
    """Raw moments of X + c from raw moments of X.

    ``raw[k]`` holds E X^{(x)k} with optional leading replicate axes and
    ``raw[0]`` is ignored; ``c`` broadcasts against the leading axes.
    """
    c = np.asarray(c, dtype=float)
    out = [None]
    for k in range(1, len(raw)):
        if raw[k] is None:
            out.append(None)
            continue
        idx = _LETTERS[:k]
        acc = 0.0
        for s in range(k + 1):
            for sub in itertools.combinations(range(k), s):
                if s and raw[s] is None:
                    raise InputError("lower moment missing")
                ops, specs = [], []
                if s:
                    ops.append(raw[s])
                    specs.append("..." + "".join(idx[i] for i in sub))
                for i in range(k):
                    if i not in sub:
                        ops.append(c)
                        specs.append("..." + idx[i])
                acc = acc + np.einsum(",".join(specs) + "->..." + idx, *ops)
        out.append(acc)
    return out


# ---------------------------------------------------------------- latent moments


@dataclass(frozen=True)
class GammaInverseMoments:
    m1: float
    m2: float
    m3: float
    m4: float

    def __getitem__(self, k):
        return (None, self.m1, self.m2, self.m3, self.m4)[k]


def gamma_inverse_moments(nu: float) -> GammaInverseMoments:
    """E(V^{-k/2}), k = 1..4, for V ~ Gamma(nu/2, rate nu/2); inf where nu <= k."""
    return GammaInverseMoments(*(gamma_inverse_moment(nu, k) for k in range(1, 5)))


def _latent_arrays(tau, gamma_bar):
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    g = np.asarray(gamma_bar, dtype=float)
    g = np.zeros((0, 0)) if g.size == 0 else np.atleast_2d(g)
    if g.shape != (len(tau), len(tau)):
        raise InputError("tau and gamma_bar dimensions differ")
    return tau, g


def _u_raw(tau, g, nu, order, cfg):
    """Per-replicate raw moments of U* = (U0 | U0 + tau > 0), orders 0..order."""
    tr = truncated_raw(tau, g, nu, order, cfg)
    out = []
    for k, a in enumerate(tr.raw):
        out.append(None if a is None else (-1) ** k * a)
    return out


def _lemma_reps(k: int, order: int, tau, g, nu, cfg):
    """Per-replicate E{V*^{k/2} h(U*)} for h the raw-moment tensors of orders 0..order."""
    m = len(tau)
    if m == 0:
        return [np.ones(cfg.n_randomizations)] + [None] * order
    if math.isinf(nu):
        out = _u_raw(tau, g, nu, order, cfg)
        out[0] = np.ones_like(out[0])
        return out
    if not nu > k:
        raise DofTooSmall(nu, k, f"E(V*^{k // 2})")
    s = math.sqrt((nu - k) / nu)
    const = (nu / (nu + m)) ** (k / 2) * c_const(nu, m) / c_const(nu - k, m) * (nu / (nu - k)) ** (m / 2)
    base = truncated_raw(tau, g, nu, 0, cfg).prob
    tilt = truncated_raw(s * tau, g, nu - k, order, cfg)
    ratio = tilt.prob / base
    out = []
    for j, a in enumerate(tilt.raw):
        if a is None:
            out.append(None)
            continue
        scale = const * ((-1) ** j) * s ** (-j)
        out.append(scale * ratio.reshape((-1,) + (1,) * j) * (a if j else 1.0))
    return out


def lemma1_expectation(k: int, h: str, tau, gamma_bar, nu: float, cfg: QmcConfig | None = None):
    """E{V*^{k/2} h(U*)} with V* = (nu + Q_{U*})/(nu + m).

    ``h`` is one of 'one', 'u', 'uuT', 'u⊗uuT', 'uuT⊗uuT'; matrix-valued
    selectors are returned in the Kronecker layout.  Returns (value, se).
    """
    cfg = cfg or QmcConfig()
    if k not in (2, 4):
        raise InputError("k must be 2 or 4")
    h = _H_ALIASES.get(h, h)
    if h not in H_ORDER:
        raise InputError(f"unknown moment selector {h!r}")
    j = H_ORDER[h]
    tau, g = _latent_arrays(tau, gamma_bar)
    if not math.isinf(nu) and not nu - k > j:
        raise DofTooSmall(nu, k + j, f"E(V*^{k // 2} {h})")
    reps = _lemma_reps(k, j, tau, g, nu, cfg)[j]
    if j >= 3:
        reps = kron_layout(reps, j)
    return _mean_se(reps)


@dataclass(frozen=True)
class TruncatedMoments:
    """Moments of U* and the V*-weighted quantities used by the SUT formulas.

    Fields are None when nu is too small for the moment to exist.  ``mu3`` and
    ``mu4`` are raw moments in the Kronecker layout.  ``replicates`` holds the
    per-randomization values (tensors, leading axis R) and ``se`` the standard
    errors of the point estimates.
    """

    prob: float
    mean: np.ndarray | None
    cov: np.ndarray | None
    mu3: np.ndarray | None
    mu4: np.ndarray | None
    eta_q: float | None
    e_q: float | None
    weighted_mean: np.ndarray | None
    weighted_second: np.ndarray | None
    mu2_vstar: float | None
    se: dict = field(default_factory=dict, repr=False)
    replicates: dict = field(default_factory=dict, repr=False)

    def require(self, name: str, nu: float, needed: float):
        val = getattr(self, name)
        if val is None:
            raise DofTooSmall(nu, needed, name)
        return val


def _truncated_replicates(tau, g, nu, cfg, order=4, weighted=True) -> dict:
    m = len(tau)
    R = cfg.n_randomizations
    finite = not math.isinf(nu)
    avail = lambda need: (not finite) or nu > need  # noqa: E731
    reps: dict = {}
    if m == 0:
        reps["prob"] = np.ones(R)
        for k, name in enumerate(("u1", "u2", "u3", "u4"), start=1):
            reps[name] = np.ones((R,) + (0,) * k) if k <= order and avail(k) else None
        reps["eta"] = np.ones(R) if avail(2) else None
        reps["w1"] = np.zeros((R, 0)) if weighted and avail(3) else None
        reps["w2"] = np.zeros((R, 0, 0)) if weighted and avail(4) else None
        reps["v2"] = np.ones(R) if weighted and avail(4) else None
        return reps
    raw = _u_raw(tau, g, nu, order, cfg)
    reps["prob"] = truncated_raw(tau, g, nu, 0, cfg).prob
    for k in range(1, 5):
        reps[f"u{k}"] = raw[k] if k <= order else None
    if avail(2):
        top = 0
        if weighted:
            top = 2 if avail(4) else (1 if avail(3) else 0)
        lem2 = _lemma_reps(2, top, tau, g, nu, cfg)
        reps["eta"] = lem2[0]
        reps["w1"] = lem2[1] if top >= 1 else None
        reps["w2"] = lem2[2] if top >= 2 else None
    else:
        reps["eta"] = reps["w1"] = reps["w2"] = None
    reps["v2"] = _lemma_reps(4, 0, tau, g, nu, cfg)[0] if weighted and avail(4) else None
    return reps


def truncated_t_moments(tau, gamma_bar, nu: float, cfg: QmcConfig | None = None, order: int = 4) -> TruncatedMoments:
    """Moments of U* = (U0 | U0 + tau > 0), U0 ~ T_m(0, gamma_bar, nu)."""
    cfg = cfg or QmcConfig()
    tau, g = _latent_arrays(tau, gamma_bar)
    reps = _truncated_replicates(tau, g, nu, cfg, order)
    return _summarize(reps, g)


def _summarize(reps: dict, g) -> TruncatedMoments:
    est, se = {}, {}
    for key, val in reps.items():
        if val is None:
            est[key] = None
            continue
        est[key], se[key] = _mean_se(val)
    out_reps = dict(reps)
    cov = None
    if reps.get("u2") is not None:
        cov_reps = reps["u2"] - reps["u1"][:, :, None] * reps["u1"][:, None, :]
        out_reps["cov"] = cov_reps
        cov, se["cov"] = _mean_se(cov_reps)
    e_q = None
    if reps.get("u2") is not None:
        gi = np.linalg.inv(g) if g.size else g
        eq_reps = np.einsum("ij,rij->r", gi, reps["u2"])
        out_reps["e_q"] = eq_reps
        e_q, se["e_q"] = _mean_se(eq_reps)
        e_q = float(e_q)
    return TruncatedMoments(
        prob=float(est["prob"]),
        mean=est.get("u1"),
        cov=cov,
        mu3=None if est.get("u3") is None else kron_layout(est["u3"], 3),
        mu4=None if est.get("u4") is None else kron_layout(est["u4"], 4),
        eta_q=None if est.get("eta") is None else float(est["eta"]),
        e_q=e_q,
        weighted_mean=est.get("w1"),
        weighted_second=est.get("w2"),
        mu2_vstar=None if est.get("v2") is None else float(est["v2"]),
        se=se,
        replicates=out_reps,
    )


# ---------------------------------------------------------------- SUT moments


@dataclass(frozen=True)
class MomentSet:
    """mu1 (d,), mu2 (d,d), mu3 (d^2,d), mu4 (d^2,d^2) in the Kronecker layout.

    ``kind`` is 'raw' (about zero) or 'central'; a central set keeps the mean
    in ``mu1``.  Entries above the available order are None.  ``se`` mirrors the fields; ``replicates`` keeps tensors.
    """

    mu1: np.ndarray | None
    mu2: np.ndarray | None
    mu3: np.ndarray | None
    mu4: np.ndarray | None
    kind: str = "raw"
    se: dict = field(default_factory=dict, repr=False)
    replicates: tuple = field(default=(), repr=False)

    def tensor(self, k: int) -> np.ndarray | None:
        val = (None, self.mu1, self.mu2, self.mu3, self.mu4)[k]
        if val is None or k < 3:
            return val
        return tensor_from_kron(val, k)

    def central(self) -> "MomentSet":
        if self.kind == "central":
            return self
        return _moment_set(_centralize(list(self.replicates)), "central")

    def as_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in ("mu1", "mu2", "mu3", "mu4"):
            v = getattr(self, name)
            out[name] = None if v is None else v.tolist()
            s = self.se.get(name)
            out[f"se_{name}"] = None if s is None else s.tolist()
        return out


def _moment_set(reps: list, kind: str) -> MomentSet:
    vals, se = [], {}
    for k in range(1, 5):
        r = reps[k] if k < len(reps) else None
        if r is None:
            vals.append(None)
            continue
        mean, err = _mean_se(r)
        if k >= 3:
            mean, err = kron_layout(mean, k), kron_layout(err, k)
        vals.append(mean)
        se[f"mu{k}"] = err
    return MomentSet(*vals, kind=kind, se=se, replicates=tuple(reps))


def _centralize(reps: list) -> list:
    mu = reps[1]
    out = shift_moments(reps, -mu)
    out[1] = mu  # the central set keeps the mean in its first slot
    return out


def _require_valid(p: SutParams):
    errs = validate(p)
    if errs:
        raise ValidationError(errs)


def _need(nu, k, what):
    if not math.isinf(nu) and not nu > k:
        raise DofTooSmall(nu, k, what)


def _w_moment_factors(nu_w: float):
    """Second and fourth moment multipliers of a t vector with nu_w dof."""
    if math.isinf(nu_w):
        return 1.0, 1.0
    f2 = nu_w / (nu_w - 2) if nu_w > 2 else math.inf
    f4 = nu_w * nu_w / ((nu_w - 2) * (nu_w - 4)) if nu_w > 4 else math.inf
    return f2, f4


def _structure(p: SutParams):
    """A = omega Delta gamma_bar^{-1} and the residual correlation Psi_bar."""
    w = p.omega_scale
    if p.m:
        a_std = np.linalg.solve(p.gamma_bar, p.delta.T).T
        psi_bar = p.omega_bar - a_std @ p.delta.T
    else:
        a_std = np.zeros((p.d, 0))
        psi_bar = p.omega_bar
    return w[:, None] * a_std, 0.5 * (psi_bar + psi_bar.T), w


def _x_raw(p: SutParams, reps: dict, order: int) -> list:
    """Per-replicate raw moments of X = Y - xi, orders 1..order."""
    A, psi_bar, w = _structure(p)
    S = np.outer(w, w) * psi_bar  # omega Psi_bar omega
    f2, f4 = _w_moment_factors(p.nu + p.m)
    out = [None]
    m1 = np.einsum("im,rm->ri", A, reps["u1"])
    out.append(m1)
    if order < 2:
        return out
    eta_c = reps["eta"] * f2  # E(V*) E(W W^T) factor
    m2 = np.einsum("im,jn,rmn->rij", A, A, reps["u2"]) + eta_c[:, None, None] * S
    out.append(m2)
    if order < 3:
        return out
    au = np.einsum("im,jn,ko,rmno->rijk", A, A, A, reps["u3"], optimize=True)
    aw = np.einsum("im,rm->ri", A, reps["w1"])
    S2 = f2 * S
    cross = (
        aw[:, :, None, None] * S2[None, None, :, :]
        + aw[:, None, :, None] * S2[None, :, None, :]
        + aw[:, None, None, :] * S2[None, :, :, None]
    )
    out.append(au + cross)
    if order < 4:
        return out
    u4 = np.einsum("im,jn,ko,lp,rmnop->rijkl", A, A, A, A, reps["u4"], optimize=True)
    awa = np.einsum("im,jn,rmn->rij", A, A, reps["w2"])
    pairs = 0.0
    for (a, b), (c, e) in (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2)),
                           ((2, 3), (0, 1)), ((1, 3), (0, 2)), ((1, 2), (0, 3))):
        spec = "r" + _LETTERS[a] + _LETTERS[b] + "," + _LETTERS[c] + _LETTERS[e] + "->rijkl"
        pairs = pairs + np.einsum(spec, awa, S2)
    w4 = f4 * (
        np.einsum("ij,kl->ijkl", S, S) + np.einsum("ik,jl->ijkl", S, S) + np.einsum("il,jk->ijkl", S, S)
    )
    out.append(u4 + pairs + reps["v2"][:, None, None, None, None] * w4)
    return out


def _sut_reps(p: SutParams, cfg: QmcConfig, order: int) -> list:
    tau, g = p.tau, p.gamma_bar
    reps = _truncated_replicates(tau, g, p.nu, cfg, order=order, weighted=order >= 3)
    x = _x_raw(p, reps, order)
    return x


def mean_var_full(p: SutParams, cfg: QmcConfig | None = None) -> MomentSet:
    """Mean and covariance with standard errors (MomentSet of kind 'central', orders 1-2)."""
    cfg = cfg or QmcConfig()
    _require_valid(p)
    _need(p.nu, 1, "mean")
    order = 2 if (math.isinf(p.nu) or p.nu > 2) else 1
    x = _sut_reps(p, cfg, order)
    y = shift_moments(x, p.xi)
    if order == 2:
        y[2] = y[2] - y[1][:, :, None] * y[1][:, None, :]
    ms = _moment_set(y, "central")
    return MomentSet(ms.mu1, ms.mu2, None, None, "central", ms.se, tuple(y))


def mean_var(p: SutParams, cfg: QmcConfig | None = None):
    """(E(Y), Var(Y)); raises DofTooSmall for nu <= 2."""
    _need(p.nu, 2, "covariance")
    ms = mean_var_full(p, cfg)
    return ms.mu1, ms.mu2


def mean(p: SutParams, cfg: QmcConfig | None = None) -> np.ndarray:
    return mean_var_full(p, cfg).mu1


def moments_34(p: SutParams, cfg: QmcConfig | None = None, order: int = 4) -> MomentSet:
    """Raw moments E Y^{(x)k}, k <= order, via the convolution representation."""
    cfg = cfg or QmcConfig()
    _require_valid(p)
    _need(p.nu, order, f"moment of order {order}")
    x = _sut_reps(p, cfg, order)
    return _moment_set(shift_moments(x, p.xi), "raw")


def moments_via_mixture(p: SutParams, cfg: QmcConfig | None = None, order: int = 4) -> MomentSet:
    """Raw moments through Y = xi + V^{-1/2} Z0 with Z0 a SUN vector (tau = 0 only)."""
    cfg = cfg or QmcConfig()
    _require_valid(p)
    if np.any(p.tau != 0):
        raise TauMustBeZero("the scale-mixture route requires tau = 0")
    _need(p.nu, order, f"moment of order {order}")
    core = SutParams(np.zeros(p.d), p.omega, p.delta, p.tau, p.gamma_bar, math.inf)
    z = _sut_reps(core, cfg, order)
    mk = gamma_inverse_moments(p.nu)
    x = [None] + [z[k] * mk[k] for k in range(1, order + 1)]
    return _moment_set(shift_moments(x, p.xi), "raw")


def central_from(ms: MomentSet) -> MomentSet:
    return ms.central()


# ---------------------------------------------------------------- Mardia


@dataclass(frozen=True)
class MardiaMeasures:
    beta1: float
    beta2: float
    gamma1: float
    gamma2: float
    se_gamma1: float = 0.0
    se_gamma2: float = 0.0


def mardia_from_central(mu2, mu3_t, mu4_t):
    """beta1, beta2 from central moment tensors (leading replicate axes allowed)."""
    L = np.linalg.cholesky(mu2)
    Li = np.linalg.inv(L)
    z3 = np.einsum("...ai,...bj,...ck,...ijk->...abc", Li, Li, Li, mu3_t)
    z4 = np.einsum("...ai,...bj,...ck,...dl,...ijkl->...abcd", Li, Li, Li, Li, mu4_t)
    beta1 = np.sum(z3 * z3, axis=(-3, -2, -1))
    beta2 = np.einsum("...aabb->...", z4)
    return beta1, beta2


def mardia(p: SutParams, cfg: QmcConfig | None = None) -> MardiaMeasures:
    """Population Mardia skewness and kurtosis; gamma2 = beta2 - d(d+2)."""
    cfg = cfg or QmcConfig()
    ms = moments_34(p, cfg)
    cen = _centralize(list(ms.replicates))
    b1, b2 = mardia_from_central(cen[2], cen[3], cen[4])
    d = p.d
    (b1m, b1s), (b2m, b2s) = _mean_se(b1), _mean_se(b2)
    return MardiaMeasures(float(b1m), float(b2m), float(b1m), float(b2m - d * (d + 2)), float(b1s), float(b2s))


# ---------------------------------------------------------------- correlation vs m


@dataclass(frozen=True)
class CorrelationRow:
    m: int
    corr: np.ndarray
    cov: np.ndarray


def hpsi_covariance(q: HPsiParams, cfg: QmcConfig | None = None) -> np.ndarray:
    """Var(Y) = H Var(U*) H^T + E(V*) (nu+m)/(nu+m-2) Psi."""
    cfg = cfg or QmcConfig()
    tau, g = _latent_arrays(q.tau, q.gamma_bar)
    _need(q.nu, 2, "covariance")
    tm = truncated_t_moments(tau, g, q.nu, cfg, order=2)
    m = len(tau)
    f2, _ = _w_moment_factors(q.nu + m)
    h = np.atleast_2d(q.h) if m else np.zeros((len(q.xi), 0))
    var = (h @ tm.cov @ h.T if m else 0.0) + tm.eta_q * f2 * np.asarray(q.psi)
    return 0.5 * (var + var.T)


def loading_family(loadings, psi, nu: float = 5.0, cfg: QmcConfig | None = None):
    """Generator m -> HPsiParams whose standardized loadings H L equal ``loadings(m)``.

    Uses gamma_bar = I_m and tau = 0, so Var(U*) = L L^T is computed once per m
    and H = (H L) L^{-1}.
    """
    cfg = cfg or QmcConfig()
    psi = np.asarray(psi, dtype=float)

    def gen(m: int) -> HPsiParams:
        hl = np.asarray(loadings(m), dtype=float).reshape(len(psi), m)
        tm = truncated_t_moments(np.zeros(m), np.eye(m), nu, cfg, order=2)
        L = np.linalg.cholesky(tm.cov)
        h = np.linalg.solve(L.T, hl.T).T
        return HPsiParams(h, psi, np.zeros(len(psi)), np.zeros(m), np.eye(m), nu)

    return gen


def correlation_vs_latent_dim(generator, m_values, cfg: QmcConfig | None = None):
    """Correlation matrices of Y for each m; returns (rows, trend) with trend in
    {'to-one', 'to-zero', 'none'} judged from |rho_12| at the last sweep values."""
    rows = []
    for m in m_values:
        q = generator(int(m))
        from_hpsi(q)  # validity
        cov = hpsi_covariance(q, cfg)
        s = np.sqrt(np.diag(cov))
        rows.append(CorrelationRow(int(m), cov / np.outer(s, s), cov))
    r = np.array([abs(row.corr[0, 1]) for row in rows]) if rows and rows[0].corr.shape[0] > 1 else np.array([])
    trend = "none"
    if r.size >= 2:
        if r[-1] > max(r[0], 0.9):
            trend = "to-one"
        elif r[-1] < min(r[0], 0.1):
            trend = "to-zero"
    return rows, trend
