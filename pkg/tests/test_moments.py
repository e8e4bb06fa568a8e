import math

import numpy as np
import pytest
from scipy import integrate, special, stats

import oracle
from sut import moments as mo, params as pm
from sut.errors import DofTooSmall, InputError, TauMustBeZero
from sut.numerics import QmcConfig, commutation, mvt_cdf
from sut.sampling import sample_convolution, sample_truncated_t
from sut.transforms import linear

CFG = QmcConfig(n_points=2**12, n_randomizations=8, seed=21)


def random_params(seed, d, m, nu, tau_scale=0.0):
    return pm.SutParams(**oracle.random_valid_params(np.random.default_rng(seed), d, m, nu, tau_scale))


# ------------------------------------------------------------ latent expectations and moments


def test_eta_m1_closed_form():
    val, se = mo.lemma1_expectation(2, "one", [0.0], [[1.0]], 5.0, CFG)
    assert val == pytest.approx(10 / 9, abs=1e-12 + 3 * se)


def test_eta_large_tau_limit():
    nu, m = 6.0, 2
    val, se = mo.lemma1_expectation(2, "one", [100.0, 100.0], pm.equicorrelation(2, 0.3), nu, CFG)
    assert val == pytest.approx(nu / (nu - 2) * (nu + m - 2) / (nu + m), rel=1e-5)


def test_eta_tau_zero_ratio_form():
    nu, g = 7.0, pm.equicorrelation(3, 0.4)
    val, se = mo.lemma1_expectation(2, "one", np.zeros(3), g, nu, CFG)
    ratio = mvt_cdf(np.zeros(3), g, nu - 2, CFG).value / mvt_cdf(np.zeros(3), g, nu, CFG).value
    target = nu / (nu - 2) * (nu + 1) / (nu + 3) * ratio
    assert abs(val - target) < 3 * se + 1e-4


def test_expected_quadratic_m1():
    tm = mo.truncated_t_moments([0.0], [[1.0]], 5.0, CFG)
    assert abs(tm.e_q - 5 / 3) < 1e-6 + tm.se["e_q"] * 3


@pytest.mark.parametrize("h,k", [("one", 2), ("u", 2), ("uuT", 2), ("one", 4), ("u⊗uuT", 2)])
def test_latent_expectation_matches_direct_weighting(h, k):
    nu, g, tau = 9.0, pm.equicorrelation(2, -0.3), np.array([0.4, -0.2])
    val, se = mo.lemma1_expectation(k, h, tau, g, nu, CFG)
    lat = sample_truncated_t(2, g, tau, nu, 10**6, 5)
    v = ((nu + lat.q_ustar) / (nu + 2)) ** (k / 2)
    u = lat.u_star
    f = {"one": v[:, None],
         "u": v[:, None] * u,
         "uuT": v[:, None] * np.einsum("ni,nj->nij", u, u).reshape(len(u), -1),
         "u⊗uuT": v[:, None] * np.einsum("ni,nj,nk->nijk", u, u, u).reshape(len(u), -1)}[h]
    est = f.mean(axis=0)
    mc_se = f.std(axis=0) / math.sqrt(len(f))
    mine = np.ravel(mo.tensor_from_kron(val, 3)) if h == "u⊗uuT" else np.ravel(val)
    mine_se = np.ravel(mo.tensor_from_kron(se, 3)) if h == "u⊗uuT" else np.ravel(se)
    assert np.all(np.abs(mine - est) < 4 * np.hypot(mc_se, mine_se) + 1e-9)


def test_latent_expectation_rejects():
    with pytest.raises(InputError):
        mo.lemma1_expectation(3, "one", [0.0], [[1.0]], 5.0)
    with pytest.raises(InputError):
        mo.lemma1_expectation(2, "cubic", [0.0], [[1.0]], 5.0)
    with pytest.raises(DofTooSmall):
        mo.lemma1_expectation(4, "one", [0.0], [[1.0]], 4.0)


def test_truncated_mean_half_t():
    nu = 5.0
    tm = mo.truncated_t_moments([0.0], [[1.0]], nu, CFG)
    ref = integrate.quad(lambda x: 2 * x * stats.t.pdf(x, nu), 0, np.inf)[0]
    closed = 2 * math.sqrt(nu) * math.exp(special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)) / (
        math.sqrt(math.pi) * (nu - 1))
    assert ref == pytest.approx(closed, rel=1e-10)
    assert tm.mean[0] == pytest.approx(ref, rel=1e-4)


def test_truncated_untruncated_limit():
    nu, g = 6.0, pm.equicorrelation(2, 0.5)
    tm = mo.truncated_t_moments([100.0, 100.0], g, nu, CFG)
    assert np.allclose(tm.mean, 0, atol=1e-3)
    assert np.allclose(tm.cov, nu / (nu - 2) * g, rtol=2e-3, atol=2e-3)


def test_truncated_exchangeable_symmetry():
    tm = mo.truncated_t_moments([0.3, 0.3], pm.equicorrelation(2, 0.4), 6.0, CFG)
    assert tm.mean[0] == pytest.approx(tm.mean[1], rel=1e-3)


def test_truncated_fields_and_consistency():
    g = pm.equicorrelation(2, 0.2)
    tm = mo.truncated_t_moments([0.1, -0.2], g, 6.0, CFG)
    assert np.all(np.linalg.eigvalsh(tm.cov) > 0)
    assert tm.eta_q > 0 and tm.e_q >= 0
    second = tm.cov + np.outer(tm.mean, tm.mean)
    # replicate-wise products make the two sides differ at QMC noise level only
    assert tm.e_q == pytest.approx(np.trace(np.linalg.solve(g, second)), rel=1e-6)
    low = mo.truncated_t_moments([0.0], [[1.0]], 3.5, CFG)
    assert low.mu4 is None and low.mu2_vstar is None
    with pytest.raises(DofTooSmall):
        low.require("mu4", 3.5, 4)


def test_gamma_inverse_moments():
    g5 = mo.gamma_inverse_moments(5.0)
    assert g5.m2 == pytest.approx(5 / 3)
    assert mo.gamma_inverse_moments(4.0).m1 == pytest.approx(1.253314, abs=1e-6)
    assert math.isinf(mo.gamma_inverse_moments(4.0).m4)


# ------------------------------------------------------------ mean and variance


def test_symmetric_mean_var():
    om = np.array([[2.0, 0.5], [0.5, 1.0]])
    p = pm.SutParams([1.0, -1.0], om, np.zeros((2, 2)), np.zeros(2), pm.equicorrelation(2, 0.3), 6.0)
    mu, var = mo.mean_var(p, CFG)
    assert np.allclose(mu, [1.0, -1.0])
    assert np.allclose(var, 6 / 4 * om, rtol=1e-3)


@pytest.mark.parametrize("delta", [0.3, -0.8])
def test_st_mean_var(delta):
    ref = oracle.st_reference(delta, 5.0, order=2)
    ms = mo.mean_var_full(pm.st([delta], 5.0), CFG)
    assert abs(ms.mu1[0] - ref["mean"]) < 3 * ms.se["mu1"][0] + 1e-9
    assert abs(ms.mu2[0, 0] - ref["var"]) < 3 * ms.se["mu2"][0, 0] + 1e-9


def test_large_nu_matches_sun():
    p = random_params(1, 2, 2, 1e6, 0.5)
    q = p.with_(nu=math.inf)
    a, b = mo.mean_var(p, CFG), mo.mean_var(q, CFG)
    assert np.allclose(a[0], b[0], rtol=1e-4)
    assert np.allclose(a[1], b[1], rtol=1e-4)


def test_mean_var_against_mc():
    p = random_params(2, 2, 2, 7.0, 0.6)
    mu, var = mo.mean_var(p, CFG)
    y = sample_convolution(p, 10**6, 2).draws
    m_est, m_se = oracle.mc_estimate(y, "mean")
    c_est, c_se = oracle.mc_estimate(y, "cov")
    assert np.all(np.abs(mu - m_est) < 3 * m_se + 1e-4)
    assert np.all(np.abs(var - c_est) < 4 * c_se + 1e-4)


def test_dof_requirements():
    p = random_params(3, 2, 1, 2.0)
    with pytest.raises(DofTooSmall):
        mo.mean_var(p)
    mo.mean(p, CFG)
    with pytest.raises(DofTooSmall):
        mo.moments_34(random_params(3, 2, 1, 4.0))


# ------------------------------------------------------------ third and fourth moments


def test_symmetric_third_moment_zero():
    p = pm.SutParams(np.zeros(2), np.eye(2), np.zeros((2, 1)), [0.0], [[1.0]], 6.0)
    ms = mo.moments_34(p, CFG)
    assert np.all(ms.mu3 == 0)


def test_st_third_central_moment():
    delta, nu = 0.6, 7.0
    ref = oracle.st_reference(delta, nu)
    c = mo.moments_34(pm.st([delta], nu), CFG).central()
    skew = c.mu3[0, 0] / c.mu2[0, 0] ** 1.5
    kurt = c.mu4[0, 0] / c.mu2[0, 0] ** 2 - 3
    assert skew == pytest.approx(ref["skewness"], rel=1e-3)
    assert kurt == pytest.approx(ref["kurtosis"], rel=1e-3)


def test_kronecker_symmetries():
    p = random_params(4, 3, 2, 9.0, 0.4)
    ms = mo.moments_34(p, CFG)
    K = commutation(3)
    assert np.allclose(K @ ms.mu4 @ K, ms.mu4)
    t3 = ms.tensor(3)
    assert np.allclose(t3, t3.transpose(1, 0, 2)) and np.allclose(t3, t3.transpose(2, 1, 0))
    assert np.allclose(ms.mu2, ms.mu2.T)


def test_second_moment_consistency():
    p = random_params(5, 2, 2, 8.0, 0.5)
    ms = mo.moments_34(p, CFG)
    mu, var = mo.mean_var(p, CFG)
    assert np.allclose(ms.mu2 - np.outer(ms.mu1, ms.mu1), var, rtol=1e-8)


def test_fourth_moments_against_mc():
    p = random_params(6, 2, 2, 9.0, 0.3)
    ms = mo.moments_34(p, CFG).central()
    y = sample_convolution(p, 2 * 10**6, 6).draws
    est, se = oracle.mc_estimate(y, "mu4")
    mine = ms.tensor(4)
    assert np.all(np.abs(mine - est) < 4 * se + 1e-3)


def test_route_agreement():
    p = random_params(7, 2, 2, 8.0)
    a = mo.moments_34(p, CFG)
    b = mo.moments_via_mixture(p, CFG)
    for k in ("mu1", "mu2", "mu3", "mu4"):
        x, y = getattr(a, k), getattr(b, k)
        tol = 3 * np.hypot(a.se[k], b.se[k]) + 1e-10 * np.abs(x).max()
        assert np.all(np.abs(x - y) <= tol)


def test_mixture_requires_tau_zero():
    with pytest.raises(TauMustBeZero):
        mo.moments_via_mixture(random_params(8, 2, 1, 6.0, 1.0))


def test_moment_set_dict():
    d = mo.moments_34(pm.st([0.3], 6.0), CFG).as_dict()
    assert d["kind"] == "raw" and len(d["mu4"]) == 1 and d["se_mu1"] is not None


# ------------------------------------------------------------ Mardia


def test_mardia_t_case():
    p = pm.t(2, 10.0)
    r = mo.mardia(p, CFG)
    assert r.gamma1 == pytest.approx(0, abs=1e-12)
    assert r.beta2 == pytest.approx(10.6667, abs=1e-4)
    assert r.gamma2 == pytest.approx(8 / 3, abs=max(3 * r.se_gamma2, 1e-10))


def test_mardia_st_case():
    ref = oracle.st_reference(0.8, 7.0)
    r = mo.mardia(pm.st([0.8], 7.0), CFG)
    assert abs(r.gamma1 - ref["skewness"] ** 2) < 3 * r.se_gamma1 + 1e-6
    assert abs(r.gamma2 - ref["kurtosis"]) < 3 * r.se_gamma2 + 1e-6


def test_mardia_affine_invariance():
    p = random_params(9, 2, 2, 7.0, 0.3)
    q = linear(p, np.diag([3.0, 0.5]), [1.0, -2.0])
    a, b = mo.mardia(p, CFG), mo.mardia(q, CFG)
    assert a.gamma1 == pytest.approx(b.gamma1, rel=1e-8)
    assert a.gamma2 == pytest.approx(b.gamma2, rel=1e-8)


def test_mardia_latent_permutation_invariance():
    p = random_params(10, 2, 3, 7.0, 0.4)
    q = pm.permute_latent(p, [2, 0, 1])
    a, b = mo.mardia(p, CFG), mo.mardia(q, CFG)
    assert abs(a.gamma1 - b.gamma1) < 3 * math.hypot(a.se_gamma1, b.se_gamma1) + 1e-6
    assert abs(a.gamma2 - b.gamma2) < 3 * math.hypot(a.se_gamma2, b.se_gamma2) + 1e-6


def _equicorrelated_pair(rho):
    p = pm.identifiable_family(1, m=3, rho=rho, delta=[0.4, 0.2], tau=0.0, nu=7.0,
                               omega=np.array([[1.0, 0.3], [0.3, 1.0]]))
    q = pm.to_hpsi(p)
    h_st = q.h.sum(axis=1, keepdims=True)
    st = pm.from_hpsi(pm.HPsiParams(h_st, q.psi, q.xi, np.zeros(1), np.eye(1), 7.0))
    return mo.mardia(p, CFG), mo.mardia(st, CFG)


def test_equicorrelation_behaves_like_skew_t():
    a, b = _equicorrelated_pair(0.99)
    assert a.gamma2 == pytest.approx(b.gamma2, rel=0.02)
    # gamma1 is small here; its gap to the skew-t closes as rho -> 1
    a2, b2 = _equicorrelated_pair(0.999)
    assert abs(a2.gamma1 / b2.gamma1 - 1) < abs(a.gamma1 / b.gamma1 - 1)
    assert a2.gamma1 == pytest.approx(b2.gamma1, rel=0.05)


# ------------------------------------------------------------ correlation against m


def test_correlation_m1_matches_mean_var():
    p = random_params(11, 2, 1, 6.0)
    q = pm.to_hpsi(p)
    rows, _ = mo.correlation_vs_latent_dim(lambda m: q, [1], CFG)
    _, var = mo.mean_var(p, CFG)
    s = np.sqrt(np.diag(var))
    assert np.allclose(rows[0].corr, var / np.outer(s, s), atol=1e-10)


def test_parallel_loadings_trend_to_one():
    h = np.array([1.0, 1.0])
    cfg = QmcConfig(n_points=2**10, n_randomizations=4)
    gen = mo.loading_family(lambda m: np.tile(h[:, None], (1, m)), np.eye(2), 5.0, cfg)
    rows, trend = mo.correlation_vs_latent_dim(gen, [1, 5, 20], cfg)
    r = [row.corr[0, 1] for row in rows]
    assert r[0] < r[1] < r[2] and trend == "to-one"
    # tau = 0, gamma_bar = I: E(V*) (nu+m)/(nu+m-2) = nu/(nu-2), so rho = m/(m + 5/3)
    assert r[2] == pytest.approx(20 / (20 + 5 / 3), rel=1e-10)
