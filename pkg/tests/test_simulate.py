import numpy as np
import pytest

from dyadzi import (
    CovariateSpec,
    ItemMeasurement,
    MeasurementParams,
    MissingRule,
    ModelError,
    SimSpec,
    StructuralParams,
    simulate,
)
from dyadzi.model import gauss_hermite, measurement_design


def basic_phi(p=3, nz=0):
    def items():
        out = [
            ItemMeasurement(
                tau=0.0, lam=1.0, delta=np.zeros(nz), zeta=np.zeros(nz), fixed_anchor=True
            )
        ]
        for j in range(1, p):
            out.append(
                ItemMeasurement(
                    tau=0.3 * j - 0.5, lam=0.9, delta=np.zeros(nz), zeta=np.zeros(nz)
                )
            )
        return tuple(out)

    return MeasurementParams(items(), items())


def basic_psi(q=2, **kw):
    z = np.zeros(q)
    d = dict(
        beta_G=z, beta_R=z.copy(), sigma2_G=1.0, sigma2_R=1.0, rho_GR=0.4,
        gamma_01=z.copy(), gamma_10=z.copy(), gamma_11=z.copy(),
    )
    d.update(kw)
    return StructuralParams(**d)


def covs(q=2):
    return (CovariateSpec("constant", name="const"),) + tuple(
        CovariateSpec("binary", p=0.5, name=f"x{j}") for j in range(1, q)
    )


def test_degenerate_class_means_all_zero():
    big = 500.0
    psi = basic_psi(gamma_01=[-big, 0], gamma_10=[-big, 0], gamma_11=[-big, 0])
    spec = SimSpec(n=400, covariates=covs(), phi=basic_phi(), psi=psi, seed=1)
    data, truth = simulate(spec)
    assert np.nansum(data.Y_G) == 0
    assert np.nansum(data.Y_R) == 0
    assert np.all(truth.xi_G == 0)


def test_constant_measurement_gives_bernoulli_half_in_class1():
    items = tuple(
        ItemMeasurement(tau=0.0, lam=1.0, fixed_anchor=True) if j == 0
        else ItemMeasurement(tau=0.0, lam=0.0)
        for j in range(4)
    )
    phi = MeasurementParams(items, items)
    big = 500.0
    psi = basic_psi(q=1, gamma_01=[-big], gamma_10=[-big], gamma_11=[big])
    spec = SimSpec(n=20000, covariates=covs(1), phi=phi, psi=psi, seed=3)
    data, truth = simulate(spec)
    assert np.all(truth.xi_G == 1)
    # items with zero loading are marginally Bernoulli(0.5) in class 1
    for j in range(1, 4):
        rate = data.Y_G[:, j].mean()
        se = np.sqrt(0.25 / data.n)
        assert abs(rate - 0.5) < 3 * se


def test_eta_residual_correlation_matches_rho():
    q = 2
    psi = basic_psi(beta_G=[0.3, -0.5], beta_R=[-0.2, 0.4], rho_GR=0.6)
    n = 40000
    spec = SimSpec(n=n, covariates=covs(q), phi=basic_phi(), psi=psi, seed=5)
    data, truth = simulate(spec)
    mu = data.X @ psi.B
    res_g = truth.eta_G - mu[:, 0]
    res_r = truth.eta_R - mu[:, 1]
    r = np.corrcoef(res_g, res_r)[0, 1]
    assert abs(r - 0.6) < 3 / np.sqrt(n)


def test_dataset_invariants_and_flags():
    psi = basic_psi()
    spec = SimSpec(
        n=3000, covariates=covs(), phi=basic_phi(), psi=psi,
        miss_prob_G=np.array([0.2, 0.1, 0.0]), miss_prob_R=np.array([0.0, 0.3, 0.1]),
        seed=7,
    )
    data, truth = simulate(spec)
    # flags recomputed from scratch
    gf = np.nansum(data.Y_G, axis=1) > 0
    assert np.array_equal(gf, data.g_flag)
    # the truth respects the forced-class invariant
    assert np.all(truth.xi_G[data.g_flag] == 1)
    assert np.all(truth.xi_R[data.r_flag] == 1)
    # class-0 dyads are observed all-zero
    assert np.nansum(data.Y_G[truth.xi_G == 0]) == 0


def test_covariate_linked_missingness_rule():
    psi = basic_psi()
    rule = MissingRule(block="G", item=1, column=1, value=1.0)
    spec = SimSpec(
        n=2000, covariates=covs(), phi=basic_phi(), psi=psi, miss_rules=(rule,), seed=9
    )
    data, _ = simulate(spec)
    hit = data.X[:, 1] == 1.0
    assert np.isnan(data.Y_G[hit, 1]).all()
    assert not np.isnan(data.Y_G[~hit, 1]).any()


def test_simulation_deterministic_and_seed_sensitive():
    psi = basic_psi()
    spec = SimSpec(n=200, covariates=covs(), phi=basic_phi(), psi=psi, seed=11)
    d1, t1 = simulate(spec)
    d2, t2 = simulate(spec)
    np.testing.assert_array_equal(d1.X, d2.X)
    np.testing.assert_array_equal(t1.eta_G, t2.eta_G)
    assert np.array_equal(np.nan_to_num(d1.Y_G), np.nan_to_num(d2.Y_G))
    d3, _ = simulate(SimSpec(n=200, covariates=covs(), phi=basic_phi(), psi=psi, seed=12))
    assert not np.array_equal(d1.X, d3.X)


def test_impossible_missingness_rejected():
    psi = basic_psi()
    spec = SimSpec(
        n=50, covariates=covs(), phi=basic_phi(), psi=psi,
        miss_prob_G=np.ones(3), miss_prob_R=np.ones(3), seed=13,
    )
    with pytest.raises(ModelError, match="missing"):
        simulate(spec)


def test_all_zero_frequency_matches_quadrature():
    # Empirical share of all-zero G blocks vs the model-implied probability
    # pi_{0.} + pi_{1.} * E[prod_j (1 - p_j(eta))] computed by quadrature.
    q = 2
    psi = basic_psi(
        beta_G=[0.2, -0.3], beta_R=[0.0, 0.1],
        gamma_01=[0.2, 0.1], gamma_10=[-0.4, 0.3], gamma_11=[0.5, -0.2],
    )
    phi = basic_phi()
    n = 10**5
    spec = SimSpec(n=n, covariates=covs(q), phi=phi, psi=psi, seed=17)
    data, _ = simulate(spec)

    nodes, w = gauss_hermite(41)
    X = data.X
    lin = np.column_stack([np.zeros(n), X @ psi.Gamma.T])
    lin -= lin.max(axis=1, keepdims=True)
    pr = np.exp(lin)
    pr /= pr.sum(axis=1, keepdims=True)
    pi_g1 = pr[:, 2] + pr[:, 3]
    A, B = measurement_design(phi.items_G, X[:, :0])
    mu = X @ psi.B
    eta = mu[:, [0]] + np.sqrt(psi.sigma2_G) * nodes[None, :]
    s = A[:, None, :] + B[:, None, :] * eta[:, :, None]
    log_zero = -np.logaddexp(0.0, s).sum(axis=2)  # log prod (1 - p_j)
    zero_given_1 = np.exp(log_zero) @ w
    p_zero = (1 - pi_g1) + pi_g1 * zero_given_1

    emp = (~data.g_flag).mean()
    model = p_zero.mean()
    se = np.sqrt(np.sum(p_zero * (1 - p_zero))) / n
    assert abs(emp - model) < 2 * se
