"""Parameter containers, validation, sub-model constructors and reparameterizations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, InvalidPermutation, PsiNotPSD, ValidationError
from .numerics import PD_RTOL, NotPositiveDefinite, cholesky, cov_to_cor, sym_sqrt

EQUICORRELATION_ADVISORY = 0.95
JSON_KEYS = ("xi", "omega", "delta", "tau", "gamma_bar", "nu")


def _vec(x):
    a = np.atleast_1d(np.array(x, dtype=float)).ravel()
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


@dataclass(frozen=True, eq=False)
class SutParams:
    """SUT_{d,m}(xi, omega, delta, tau, gamma_bar, nu); ``nu = inf`` is the SUN.

    Arrays are stored read-only.  Construction only coerces shapes; call
    :func:`validate` (or :meth:`checked`) to test the distributional invariants.
    """

    xi: np.ndarray
    omega: np.ndarray
    delta: np.ndarray
    tau: np.ndarray
    gamma_bar: np.ndarray
    nu: float = math.inf
    advisories: tuple = field(default=(), compare=False)

    def __post_init__(self):
        xi = _vec(self.xi)
        d = xi.shape[0]
        tau = _vec(self.tau) if np.size(self.tau) else _vec(np.zeros(0))
        m = tau.shape[0]
        delta = np.array(self.delta, dtype=float)
        if delta.size == 0:
            delta = np.zeros((d, m))
        elif delta.ndim < 2:
            delta = delta.reshape(d, -1) if d > 1 else delta.reshape(1, -1)
        gamma_bar = np.array(self.gamma_bar, dtype=float)
        gamma_bar = np.zeros((0, 0)) if gamma_bar.size == 0 else np.atleast_2d(gamma_bar)
        omega = np.atleast_2d(np.array(self.omega, dtype=float))
        for a in (delta, gamma_bar, omega):
            a.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "gamma_bar", gamma_bar)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "nu", float(self.nu))
        if omega.shape != (d, d):
            raise InputError(f"omega must be {d}x{d}, got {omega.shape}")
        if delta.shape != (d, m):
            raise InputError(f"delta must be {d}x{m}, got {delta.shape}")
        if gamma_bar.shape != (m, m):
            raise InputError(f"gamma_bar must be {m}x{m}, got {gamma_bar.shape}")

    @property
    def d(self) -> int:
        return self.xi.shape[0]

    @property
    def m(self) -> int:
        return self.tau.shape[0]

    @property
    def is_sun(self) -> bool:
        return math.isinf(self.nu)

    @property
    def omega_scale(self) -> np.ndarray:
        """Vector of standard scales (diagonal of the matrix omega)."""
        return np.sqrt(np.diag(self.omega))

    @property
    def omega_bar(self) -> np.ndarray:
        w = self.omega_scale
        bar = self.omega / np.outer(w, w)
        np.fill_diagonal(bar, 1.0)
        return bar

    def extended(self) -> np.ndarray:
        """The (m+d)x(m+d) correlation matrix [[gamma_bar, delta^T], [delta, omega_bar]]."""
        return np.block([[self.gamma_bar, self.delta.T], [self.delta, self.omega_bar]])

    def checked(self) -> "SutParams":
        errs = validate(self)
        if errs:
            raise ValidationError(errs)
        return self

    def with_(self, **kw) -> "SutParams":
        return replace(self, **kw)

    def same_as(self, other: "SutParams", atol: float = 0.0) -> bool:
        if (self.d, self.m) != (other.d, other.m) or self.nu != other.nu:
            return False
        return all(
            np.allclose(getattr(self, k), getattr(other, k), rtol=0, atol=atol)
            for k in ("xi", "omega", "delta", "tau", "gamma_bar")
        )

    # JSON -----------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "xi": self.xi.tolist(),
            "omega": self.omega.tolist(),
            "delta": self.delta.tolist(),
            "tau": self.tau.tolist(),
            "gamma_bar": self.gamma_bar.tolist(),
            "nu": "inf" if self.is_sun else self.nu,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, obj) -> "SutParams":
        if not isinstance(obj, dict):
            raise InputError("parameters must be a JSON object")
        unknown = set(obj) - set(JSON_KEYS)
        if unknown:
            raise InputError(f"unknown parameter keys: {sorted(unknown)}")
        missing = [k for k in JSON_KEYS if k not in obj]
        if missing:
            raise InputError(f"missing parameter keys: {missing}")
        nu = obj["nu"]
        if isinstance(nu, str):
            if nu.strip().lower() not in ("inf", "+inf", "infinity"):
                raise InputError(f"nu must be a number or 'inf', got {nu!r}")
            nu = math.inf
        elif isinstance(nu, bool) or not isinstance(nu, (int, float)):
            raise InputError(f"nu must be a number or 'inf', got {nu!r}")
        try:
            xi = np.array(obj["xi"], dtype=float)
            tau = np.array(obj["tau"], dtype=float)
            d, m = xi.size, tau.size
            delta = np.array(obj["delta"], dtype=float).reshape(d, m)
            gamma_bar = np.array(obj["gamma_bar"], dtype=float).reshape(m, m)
            omega = np.array(obj["omega"], dtype=float).reshape(d, d)
        except (TypeError, ValueError) as exc:
            raise InputError(f"malformed parameter arrays: {exc}") from None
        return cls(xi, omega, delta, tau, gamma_bar, nu)

    @classmethod
    def from_json(cls, text: str) -> "SutParams":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed JSON: {exc}") from None
        return cls.from_dict(obj)


def validate(p: SutParams) -> list[Violation]:
    """Every violated invariant of ``p`` (empty list when valid)."""
    out: list[Violation] = []
    if not (p.nu > 0):
        out.append(Violation("dof", f"nu must be > 0, got {p.nu}"))
    finite = True
    for name in ("xi", "omega", "delta", "tau", "gamma_bar"):
        if not np.all(np.isfinite(getattr(p, name))):
            out.append(Violation("non-finite", f"{name} has non-finite entries"))
            finite = False
    if p.d < 1:
        out.append(Violation("dimension", "d must be at least 1"))
    if not finite:
        return out
    om_ok = True
    try:
        cholesky(p.omega, "omega")
    except NotPositiveDefinite as exc:
        out.append(Violation("omega-not-pd", str(exc)))
        om_ok = False
    except InputError as exc:
        out.append(Violation("omega-not-symmetric", str(exc)))
        om_ok = False
    g = p.gamma_bar
    g_ok = True
    if p.m:
        if not np.allclose(np.diag(g), 1.0, rtol=0, atol=1e-12):
            out.append(Violation("gamma-bar-diagonal", "gamma_bar must have unit diagonal"))
            g_ok = False
        if not np.allclose(g, g.T, rtol=0, atol=1e-12):
            out.append(Violation("gamma-bar-not-symmetric", "gamma_bar must be symmetric"))
            g_ok = False
        else:
            try:
                cholesky(g, "gamma_bar")
            except NotPositiveDefinite as exc:
                out.append(Violation("gamma-bar-not-pd", str(exc)))
                g_ok = False
    if om_ok and g_ok and p.m:
        ext = p.extended()
        try:
            cholesky(ext, "extended correlation matrix")
        except NotPositiveDefinite:
            schur = g - p.delta.T @ np.linalg.solve(p.omega_bar, p.delta)
            low = float(np.min(np.linalg.eigvalsh(schur)))
            out.append(
                Violation(
                    "extended-not-pd",
                    "extended matrix [[gamma_bar, delta^T],[delta, omega_bar]] is not PD "
                    f"(smallest eigenvalue of gamma_bar - delta^T omega_bar^-1 delta is {low:.4g})",
                )
            )
    return out


# ------------------------------------------------------------- sub-models


def _default(x, d, kind):
    if x is None:
        return np.zeros(d) if kind == "xi" else np.eye(d)
    return x


def sut(xi, omega, delta, tau, gamma_bar, nu) -> SutParams:
    return SutParams(xi, omega, delta, tau, gamma_bar, nu).checked()


def sun(xi, omega, delta, tau, gamma_bar) -> SutParams:
    return sut(xi, omega, delta, tau, gamma_bar, math.inf)


def est(delta, tau: float, nu: float, omega=None, xi=None) -> SutParams:
    """Extended skew-t: a single latent variable with truncation ``tau``."""
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    d = delta.size
    return sut(_default(xi, d, "xi"), _default(omega, d, "omega"), delta.reshape(d, 1), [tau], [[1.0]], nu)


def st(delta, nu: float, omega=None, xi=None) -> SutParams:
    return est(delta, 0.0, nu, omega, xi)


def sn(delta, omega=None, xi=None) -> SutParams:
    return est(delta, 0.0, math.inf, omega, xi)


def t(d: int | None = None, nu: float = math.inf, omega=None, xi=None) -> SutParams:
    """Symmetric multivariate t (m = 0)."""
    if d is None:
        d = len(np.atleast_1d(xi)) if xi is not None else np.atleast_2d(omega).shape[0]
    return sut(_default(xi, d, "xi"), _default(omega, d, "omega"), np.zeros((d, 0)), [], np.zeros((0, 0)), nu)


def normal(d: int | None = None, omega=None, xi=None) -> SutParams:
    return t(d, math.inf, omega, xi)


def equicorrelation(m: int, rho: float) -> np.ndarray:
    return (1 - rho) * np.eye(m) + rho * np.ones((m, m))


def identifiable_family(kind: int, **kw) -> SutParams:
    """Identifiable sub-families.

    kind 1: delta (d-vector), tau (scalar), rho, m; Delta = delta 1^T, equicorrelated gamma_bar.
    kind 2: alpha, beta != 0, delta (d x m), gamma_bar; tau = alpha 1 + beta (1..m).
    kind 3: omega_bar (d x d), scale, delta (scalar); m = d, gamma_bar = omega_bar.
    kind 4: omega, delta (scalar); Delta = delta omega^{1/2}, gamma_bar = I_d.
    All kinds accept ``xi`` and ``nu``; kinds 1 and 2 accept ``omega``.
    """
    nu = kw.pop("nu", math.inf)
    xi = kw.pop("xi", None)
    if kind == 1:
        m = int(kw.pop("m"))
        rho = float(kw.pop("rho", 0.0))
        delta = np.atleast_1d(np.asarray(kw.pop("delta"), dtype=float))
        tau = float(kw.pop("tau", 0.0))
        omega = kw.pop("omega", None)
        _no_extra(kw)
        if m < 1:
            raise InputError("kind 1 needs m >= 1")
        lo = -1.0 / (m - 1) if m > 1 else -1.0
        if not (lo < rho < 1.0) and not (m == 1):
            raise InputError(f"rho must lie in ({lo:.4g}, 1), got {rho}")
        d = delta.size
        p = sut(
            _default(xi, d, "xi"), _default(omega, d, "omega"), np.outer(delta, np.ones(m)),
            np.full(m, tau), equicorrelation(m, rho), nu,
        )
        if rho > EQUICORRELATION_ADVISORY:
            p = replace(p, advisories=("strong equicorrelation: a skew-t (m = 1) is preferable",))
        return p
    if kind == 2:
        alpha = float(kw.pop("alpha", 0.0))
        beta = float(kw.pop("beta"))
        delta = np.atleast_2d(np.asarray(kw.pop("delta"), dtype=float))
        omega = kw.pop("omega", None)
        gamma_bar = kw.pop("gamma_bar", None)
        _no_extra(kw)
        if beta == 0:
            raise InputError("kind 2 requires beta != 0")
        d, m = delta.shape
        tau = alpha + beta * np.arange(1, m + 1)
        return sut(_default(xi, d, "xi"), _default(omega, d, "omega"), delta, tau, _default(gamma_bar, m, "g"), nu)
    if kind == 3:
        obar = np.atleast_2d(np.asarray(kw.pop("omega_bar"), dtype=float))
        scale = float(kw.pop("scale", 1.0))
        delta = float(kw.pop("delta"))
        _no_extra(kw)
        d = obar.shape[0]
        big_delta = scale * delta / math.sqrt(1 + delta * delta) * obar
        return sut(_default(xi, d, "xi"), scale * scale * obar, big_delta, np.zeros(d), obar, nu)
    if kind == 4:
        omega = np.atleast_2d(np.asarray(kw.pop("omega"), dtype=float))
        delta = float(kw.pop("delta"))
        _no_extra(kw)
        d = omega.shape[0]
        return sut(_default(xi, d, "xi"), omega, delta * sym_sqrt(omega), np.zeros(d), np.eye(d), nu)
    raise InputError(f"unknown identifiable family kind {kind}")


def _no_extra(kw):
    if kw:
        raise InputError(f"unexpected arguments: {sorted(kw)}")


# ------------------------------------------------------------- permutations


def _perm(perm, m):
    perm = np.asarray(perm)
    if perm.shape != (m,) or not np.array_equal(np.sort(perm), np.arange(m)):
        raise InvalidPermutation(f"{perm.tolist()} is not a permutation of 0..{m - 1}")
    return perm.astype(int)


def permutation_matrix(perm) -> np.ndarray:
    perm = np.asarray(perm)
    P = np.zeros((perm.size, perm.size))
    P[np.arange(perm.size), perm] = 1.0
    return P


def permute_latent(p: SutParams, perm) -> SutParams:
    """Relabel latent variables: Delta P^T, P tau, P gamma_bar P^T with P[i, perm[i]] = 1."""
    perm = _perm(perm, p.m)
    return replace(
        p,
        delta=p.delta[:, perm],
        tau=p.tau[perm],
        gamma_bar=p.gamma_bar[np.ix_(perm, perm)],
    )


@dataclass(frozen=True)
class PermutedPair:
    base: SutParams
    perm: tuple

    @property
    def permuted(self) -> SutParams:
        return permute_latent(self.base, self.perm)

    def restore(self) -> SutParams:
        return permute_latent(self.permuted, np.argsort(self.perm))


# ------------------------------------------------------------- H / Psi


@dataclass(frozen=True, eq=False)
class HPsiParams:
    """Loading form: Omega = Psi + H gamma_bar H^T and omega Delta = H gamma_bar."""

    h: np.ndarray
    psi: np.ndarray
    xi: np.ndarray
    tau: np.ndarray
    gamma_bar: np.ndarray
    nu: float = math.inf

    def loadings(self) -> np.ndarray:
        """Columns h_{L,k} of H L, where L L^T is a factor of Var(U*) (supplied by caller)."""
        return self.h


def to_hpsi(p: SutParams) -> HPsiParams:
    w = p.omega_scale
    if p.m:
        h = (w[:, None] * p.delta) @ np.linalg.inv(p.gamma_bar)
        psi = p.omega - h @ p.gamma_bar @ h.T
    else:
        h = np.zeros((p.d, 0))
        psi = p.omega.copy()
    psi = 0.5 * (psi + psi.T)
    low = np.min(np.linalg.eigvalsh(psi))
    if low < -PD_RTOL * max(np.max(np.diag(p.omega)), 1.0):
        raise PsiNotPSD(f"psi = omega - H gamma_bar H^T has eigenvalue {low:.3g} < 0")
    return HPsiParams(h, psi, p.xi.copy(), p.tau.copy(), p.gamma_bar.copy(), p.nu)


def from_hpsi(q: HPsiParams) -> SutParams:
    h = np.atleast_2d(np.asarray(q.h, dtype=float))
    psi = np.atleast_2d(np.asarray(q.psi, dtype=float))
    g = np.atleast_2d(np.asarray(q.gamma_bar, dtype=float)) if np.size(q.gamma_bar) else np.zeros((0, 0))
    psi_low = np.min(np.linalg.eigvalsh(0.5 * (psi + psi.T)))
    if psi_low < -PD_RTOL * max(np.max(np.diag(psi)), 1.0):
        raise PsiNotPSD(f"psi has eigenvalue {psi_low:.3g} < 0")
    omega = psi + (h @ g @ h.T if g.size else 0.0)
    omega = 0.5 * (omega + omega.T)
    _, wdiag = cov_to_cor(omega)
    w = np.diag(wdiag)
    delta = (h @ g) / w[:, None] if g.size else np.zeros((len(w), 0))
    return SutParams(q.xi, omega, delta, q.tau, g, q.nu).checked()
