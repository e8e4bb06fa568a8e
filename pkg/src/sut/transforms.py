"""Closure operations: affine maps, marginals, sums, conditionals, latent-dimension changes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import (
    CanonicalNotExists,
    ExtendedGammaNotPD,
    InputError,
    NotPositiveDefinite,
    RankDeficient,
    StructureNotReducible,
    ValidationError,
)
from .numerics import cholesky
from .params import SutParams, validate

STRUCT_TOL = 1e-12
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class PartitionSpec:
    d1: int
    d2: int

    @classmethod
    def of(cls, p: SutParams, d1: int) -> "PartitionSpec":
        if not 0 <= d1 <= p.d:
            raise InputError(f"d1 must lie in [0, {p.d}], got {d1}")
        return cls(d1, p.d - d1)

    def check(self, p: SutParams):
        if self.d1 < 0 or self.d2 < 0 or self.d1 + self.d2 != p.d:
            raise InputError(f"partition ({self.d1}, {self.d2}) does not match d = {p.d}")

    def blocks(self, p: SutParams) -> dict:
        self.check(p)
        a, b = slice(0, self.d1), slice(self.d1, p.d)
        w = p.omega_scale
        return {
            "xi1": p.xi[a], "xi2": p.xi[b],
            "omega11": p.omega[a, a], "omega12": p.omega[a, b],
            "omega21": p.omega[b, a], "omega22": p.omega[b, b],
            "delta1": p.delta[a], "delta2": p.delta[b],
            "w1": w[a], "w2": w[b],
        }


def _check(p: SutParams):
    errs = validate(p)
    if errs:
        raise ValidationError(errs)


def _rank(a) -> int:
    a = np.atleast_2d(a)
    if a.size == 0:
        return 0
    _, r, _ = linalg.qr(a, pivoting=True, mode="economic")
    diag = np.abs(np.diag(r))
    return int(np.sum(diag > RANK_RTOL * max(np.linalg.norm(a), 1e-300)))


def linear(p: SutParams, a, b=None) -> SutParams:
    """Parameters of A Y + b for an n x d matrix A of rank n."""
    _check(p)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[1] != p.d:
        raise InputError(f"matrix must have {p.d} columns, got {a.shape}")
    n = a.shape[0]
    if n > p.d or _rank(a) < n:
        raise RankDeficient(f"linear map of shape {a.shape} does not have full row rank")
    b = np.zeros(n) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    if b.shape != (n,):
        raise InputError(f"shift must have length {n}")
    om = a @ p.omega @ a.T
    om = 0.5 * (om + om.T)
    wa = np.sqrt(np.diag(om))
    delta = (a @ (p.omega_scale[:, None] * p.delta)) / wa[:, None]
    return SutParams(a @ p.xi + b, om, delta, p.tau, p.gamma_bar, p.nu).checked()


def selector(d: int, idx) -> np.ndarray:
    idx = list(idx)
    s = np.zeros((len(idx), d))
    s[np.arange(len(idx)), idx] = 1.0
    return s


def marginal(p: SutParams, spec: PartitionSpec, which: int = 1) -> SutParams:
    spec.check(p)
    if which not in (1, 2):
        raise InputError("which must be 1 or 2")
    idx = range(spec.d1) if which == 1 else range(spec.d1, p.d)
    if len(idx) == p.d:
        return p
    if len(idx) == 0:
        raise InputError("requested block is empty")
    return linear(p, selector(p.d, idx))


def add_marginals(p: SutParams, spec: PartitionSpec | None = None) -> SutParams:
    """Parameters of Y1 + Y2 for a joint vector of two equal halves."""
    if p.d % 2:
        raise InputError("add_marginals needs an even dimension")
    h = p.d // 2
    spec = spec or PartitionSpec(h, h)
    if spec.d1 != spec.d2 or spec.d1 != h:
        raise InputError("halves must have equal size")
    return linear(p, np.hstack([np.eye(h), np.eye(h)]))


@dataclass(frozen=True)
class ConditionalParams:
    params: SutParams
    alpha: float
    q: float
    xi21: np.ndarray
    omega21: np.ndarray
    delta21: np.ndarray
    tau21: np.ndarray
    gamma_bar21: np.ndarray
    gamma21: np.ndarray


def conditional(p: SutParams, spec: PartitionSpec, y1) -> ConditionalParams:
    """Law of Y2 given Y1 = y1 (dof increases by d1)."""
    _check(p)
    bl = spec.blocks(p)
    if spec.d1 == 0 or spec.d2 == 0:
        raise InputError("both blocks must be non-empty")
    y1 = np.atleast_1d(np.asarray(y1, dtype=float))
    if y1.shape != (spec.d1,):
        raise InputError(f"y1 must have length {spec.d1}")
    o11 = bl["omega11"]
    r = y1 - bl["xi1"]
    b = np.linalg.solve(o11, bl["omega12"]).T  # Omega21 Omega11^{-1}
    xi21 = bl["xi2"] + b @ r
    om21 = bl["omega22"] - b @ bl["omega12"]
    om21 = 0.5 * (om21 + om21.T)
    q = float(r @ np.linalg.solve(o11, r))
    alpha = 1.0 if p.is_sun else (p.nu + q) / (p.nu + spec.d1)
    w21 = np.sqrt(np.diag(om21))
    w1, w2 = bl["w1"], bl["w2"]
    obar11 = o11 / np.outer(w1, w1)
    d1 = bl["delta1"]
    if p.m:
        lam1 = np.linalg.solve(obar11, d1).T  # Delta1^T Obar11^{-1}
        g21 = p.gamma_bar - lam1 @ d1
        g21 = 0.5 * (g21 + g21.T)
        gam = np.sqrt(np.diag(g21))
        gbar21 = g21 / np.outer(gam, gam)
        np.fill_diagonal(gbar21, 1.0)
        tau21 = (p.tau + lam1 @ (r / w1)) / gam
        delta21 = ((w2[:, None] * bl["delta2"] - b @ (w1[:, None] * d1)) / w21[:, None]) / gam[None, :]
    else:
        gam = np.zeros(0)
        gbar21, tau21, delta21 = p.gamma_bar, p.tau, np.zeros((spec.d2, 0))
    out = SutParams(xi21, alpha * om21, delta21, tau21 / math.sqrt(alpha), gbar21, p.nu + spec.d1)
    return ConditionalParams(out.checked(), alpha, q, xi21, om21, delta21, tau21, gbar21, gam)


def condition_positive(p: SutParams, spec: PartitionSpec) -> SutParams:
    """Law of Y2 given Y1 > 0; the latent dimension grows to d1 + m."""
    _check(p)
    bl = spec.blocks(p)
    if spec.d1 == 0 or spec.d2 == 0:
        raise InputError("both blocks must be non-empty")
    obar = p.omega_bar
    obar11 = obar[: spec.d1, : spec.d1]
    obar21 = obar[spec.d1 :, : spec.d1]
    d1 = bl["delta1"]
    g = np.block([[p.gamma_bar, d1.T], [d1, obar11]])
    try:
        cholesky(g, "extended latent correlation")
    except NotPositiveDefinite as exc:
        raise ExtendedGammaNotPD(str(exc)) from None
    delta = np.hstack([bl["delta2"], obar21])
    tau = np.concatenate([p.tau, bl["xi1"] / bl["w1"]])
    return SutParams(bl["xi2"], bl["omega22"], delta, tau, g, p.nu).checked()


def redundant_latent(p: SutParams) -> list[int]:
    """Largest set of latent indices with zero skewness, zero tau and no correlation to the rest."""
    cand = {j for j in range(p.m)
            if np.all(np.abs(p.delta[:, j]) <= STRUCT_TOL) and abs(p.tau[j]) <= STRUCT_TOL}
    changed = True
    while changed:
        changed = False
        rest = [k for k in range(p.m) if k not in cand]
        for j in sorted(cand):
            if rest and np.any(np.abs(p.gamma_bar[j, rest]) > STRUCT_TOL):
                cand.discard(j)
                changed = True
                break
    return sorted(cand)


def reduce_latent(p: SutParams, drop=None) -> SutParams:
    """Remove latent variables that do not affect the distribution.

    ``drop`` lists the latent indices to remove; by default the largest
    removable set is found.  Raises StructureNotReducible when the required
    zero/block pattern is absent.
    """
    _check(p)
    removable = set(redundant_latent(p))
    if drop is None:
        drop = sorted(removable)
        if not drop:
            raise StructureNotReducible("no latent variable has zero skewness, zero tau and a separate block")
    else:
        drop = sorted(int(j) for j in drop)
        bad = [j for j in drop if j not in removable or not 0 <= j < p.m]
        rest = [k for k in range(p.m) if k not in drop]
        cross = p.gamma_bar[np.ix_(drop, rest)] if drop and rest else np.zeros((0, 0))
        if bad or np.any(np.abs(cross) > STRUCT_TOL):
            raise StructureNotReducible(f"latent indices {drop} are not separable")
    keep = [k for k in range(p.m) if k not in drop]
    return SutParams(p.xi, p.omega, p.delta[:, keep], p.tau[keep],
                     p.gamma_bar[np.ix_(keep, keep)], p.nu).checked()


def canonical(p: SutParams, spec: PartitionSpec | None = None):
    """Linear map C concentrating all skewness in the first coordinate.

    C = diag(1, C2) with the rows of C2 an orthonormal basis of the left null
    space of omega_2 Delta_2 (SVD ordered); C has d - rank(Delta_2) rows.  Returns
    (C, params of C Y).
    """
    _check(p)
    spec = spec or PartitionSpec(1, p.d - 1)
    if spec.d1 != 1 or p.d < 2:
        raise InputError("canonical form needs d >= 2 and a first block of size 1")
    d2 = p.delta[1:]
    if np.all(np.abs(d2) <= STRUCT_TOL):
        return np.eye(p.d), p
    u, s, _ = np.linalg.svd(p.omega_scale[1:, None] * d2)
    r = int(np.sum(s > RANK_RTOL * max(s[0], 1e-300)))
    if r > p.d - 2:
        raise CanonicalNotExists(
            f"the skewness block of rank {r} cannot be annihilated in dimension {p.d - 1} (needs rank <= d - 2)"
        )
    c2 = u[:, r:].T
    c = linalg.block_diag(np.eye(1), c2)
    out = linear(p, c)
    delta = np.array(out.delta)
    delta[1:][np.abs(delta[1:]) <= 1e-10] = 0.0
    return c, SutParams(out.xi, out.omega, delta, out.tau, out.gamma_bar, out.nu).checked()
