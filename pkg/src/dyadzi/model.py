"""Model densities and the quadrature-based marginal log-likelihood oracle.

Everything here is a pure function of its arguments. Probability arithmetic
is done in log space throughout; the marginal likelihood integrates the
traits out with tensor-product Gauss-Hermite quadrature standardized by the
structural covariance.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import log_expit, logsumexp

from .params import Dataset, ItemMeasurement, MeasurementParams, ModelError, StructuralParams

__all__ = [
    "item_prob",
    "block_loglik_class1",
    "block_loglik",
    "xi_probs",
    "xi_log_probs",
    "eta_logpdf",
    "conditional_normal",
    "measurement_design",
    "gauss_hermite",
    "full_loglik_oracle",
]

_LOG_2PI = np.log(2.0 * np.pi)


def gauss_hermite(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[f(Z)], Z standard normal; weights sum to 1."""
    if order < 2:
        raise ValueError("quadrature order must be at least 2")
    nodes, weights = hermegauss(order)
    return nodes, weights / np.sqrt(2.0 * np.pi)


def item_prob(item: ItemMeasurement, eta: float, z: np.ndarray) -> float:
    """Response probability of one item given the trait and z covariates."""
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if z.shape[0] != item.n_z:
        raise ModelError(f"z has length {z.shape[0]}, item expects {item.n_z}")
    s = item.tau + item.delta @ z + (item.lam + item.zeta @ z) * eta
    return float(np.exp(log_expit(s)))


def measurement_design(
    items: tuple[ItemMeasurement, ...], Z: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-dyad effective intercepts and loadings for an item block.

    Returns (A, B), each (n, p): the item linear predictor for dyad i is
    A[i, j] + B[i, j] * eta.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    tau = np.array([it.tau for it in items])
    lam = np.array([it.lam for it in items])
    delta = np.vstack([it.delta for it in items])  # (p, nz)
    zeta = np.vstack([it.zeta for it in items])
    if Z.shape[1] != delta.shape[1]:
        raise ModelError("Z width does not match item z dimension")
    A = tau[None, :] + Z @ delta.T
    B = lam[None, :] + Z @ zeta.T
    return A, B


def _bernoulli_loglik(y, s):
    # y*s - log(1+e^s), stable for large |s|
    return y * s - (np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s))))


def block_loglik_class1(
    row: np.ndarray,
    eta: float,
    z: np.ndarray,
    items: tuple[ItemMeasurement, ...],
) -> float:
    """Log-probability of one response row under the class-1 measurement model.

    Missing entries (NaN) are dropped from the product; at least one item
    must be observed.
    """
    row = np.asarray(row, dtype=np.float64)
    obs = ~np.isnan(row)
    if not obs.any():
        raise ModelError("all items missing in row")
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    total = 0.0
    for j in np.nonzero(obs)[0]:
        it = items[j]
        s = it.tau + it.delta @ z + (it.lam + it.zeta @ z) * eta
        total += _bernoulli_loglik(row[j], s)
    return float(total)


def block_loglik(
    row: np.ndarray,
    xi: int,
    eta: float,
    z: np.ndarray,
    items: tuple[ItemMeasurement, ...],
) -> float:
    """Log-probability of a response row given the class label.

    Class 0 puts probability one on the all-zero pattern: the result is 0.0
    when no observed item equals 1 and -inf otherwise.
    """
    if xi == 0:
        row = np.asarray(row, dtype=np.float64)
        return 0.0 if np.nansum(row) == 0 else -np.inf
    return block_loglik_class1(row, eta, z, items)


def xi_log_probs(x: np.ndarray, psi: StructuralParams) -> np.ndarray:
    """Log of the four class-cell probabilities, cells ordered (00, 01, 10, 11)."""
    x = np.asarray(x, dtype=np.float64)
    lin = np.concatenate([[0.0], psi.Gamma @ x])
    return lin - logsumexp(lin)


def xi_probs(x: np.ndarray, psi: StructuralParams) -> np.ndarray:
    """Class-cell probabilities over (xi_G, xi_R), cells (00, 01, 10, 11)."""
    return np.exp(xi_log_probs(x, psi))


def eta_logpdf(eta_pair, x: np.ndarray, psi: StructuralParams) -> float:
    """Bivariate normal log-density of the trait pair given covariates."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.array([psi.beta_G @ x, psi.beta_R @ x])
    d = np.asarray(eta_pair, dtype=np.float64) - mu
    Sigma = psi.Sigma
    det = Sigma[0, 0] * Sigma[1, 1] - Sigma[0, 1] ** 2
    if det <= 0:
        raise ModelError("structural covariance not positive definite")
    quad = (Sigma[1, 1] * d[0] ** 2 - 2 * Sigma[0, 1] * d[0] * d[1] + Sigma[0, 0] * d[1] ** 2) / det
    return float(-_LOG_2PI - 0.5 * np.log(det) - 0.5 * quad)


def conditional_normal(
    which: str, other_eta: float, x: np.ndarray, psi: StructuralParams
) -> tuple[float, float]:
    """Mean and variance of one trait given the other trait and covariates."""
    x = np.asarray(x, dtype=np.float64)
    mu_G = float(psi.beta_G @ x)
    mu_R = float(psi.beta_R @ x)
    sg = np.sqrt(psi.sigma2_G)
    sr = np.sqrt(psi.sigma2_R)
    rho = psi.rho_GR
    if which == "G":
        mean = mu_G + rho * (sg / sr) * (other_eta - mu_R)
        var = psi.sigma2_G * (1.0 - rho**2)
    elif which == "R":
        mean = mu_R + rho * (sr / sg) * (other_eta - mu_G)
        var = psi.sigma2_R * (1.0 - rho**2)
    else:
        raise ValueError("which must be 'G' or 'R'")
    return mean, var


def _block_loglik_grid(Y, M, A, B, eta_grid):
    """Class-1 log-likelihood of each row at each eta value.

    Y, M, A, B: (n, p) responses, observed mask, effective intercepts and
    loadings; eta_grid: (n, k) per-dyad trait values. Returns (n, k).
    """
    s = A[:, None, :] + B[:, None, :] * eta_grid[:, :, None]  # (n, k, p)
    ll = Y[:, None, :] * s - (np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s))))
    return np.sum(ll * M[:, None, :], axis=2)


def full_loglik_oracle(
    data: Dataset,
    phi: MeasurementParams,
    psi: StructuralParams,
    quad_order: int = 21,
) -> float:
    """Marginal log-likelihood of the full model by Gauss-Hermite quadrature.

    Per dyad, sums the four class-cell terms: a double integral over both
    traits for cell (1,1), single integrals for the mixed cells, and the
    cell-(0,0) point mass, with the mixed and (0,0) cells suppressed whenever
    the corresponding block has an observed nonzero response. Deterministic
    for fixed inputs; intended as a testing oracle.
    """
    if quad_order < 5:
        raise ValueError("quad_order must be at least 5")
    nodes, weights = gauss_hermite(quad_order)
    logw = np.log(weights)

    X = data.X
    Z = data.Z
    n = data.n
    mu = X @ psi.B  # (n, 2)
    Sigma = psi.Sigma
    L = np.linalg.cholesky(Sigma)
    sg = np.sqrt(psi.sigma2_G)
    sr = np.sqrt(psi.sigma2_R)

    A_G, B_G = measurement_design(phi.items_G, Z)
    A_R, B_R = measurement_design(phi.items_R, Z)
    M_G = (~np.isnan(data.Y_G)).astype(np.float64)
    M_R = (~np.isnan(data.Y_R)).astype(np.float64)
    Y_G = np.nan_to_num(data.Y_G)
    Y_R = np.nan_to_num(data.Y_R)

    lin = np.column_stack([np.zeros(n), X @ psi.Gamma.T])  # (n, 4): cells 00,01,10,11
    log_pi = lin - logsumexp(lin, axis=1, keepdims=True)

    # Marginal single-trait grids for the mixed cells.
    etaG_m = mu[:, [0]] + sg * nodes[None, :]  # (n, k)
    etaR_m = mu[:, [1]] + sr * nodes[None, :]
    ll_G_m = _block_loglik_grid(Y_G, M_G, A_G, B_G, etaG_m)
    ll_R_m = _block_loglik_grid(Y_R, M_R, A_R, B_R, etaR_m)
    log_I10 = logsumexp(logw[None, :] + ll_G_m, axis=1)  # xi=(1,0): Y_G integral
    log_I01 = logsumexp(logw[None, :] + ll_R_m, axis=1)

    # Double integral for cell (1,1) via the Cholesky transform
    # (eta_G, eta_R) = mu + L (u_a, u_b).
    etaG_11 = mu[:, [0]] + L[0, 0] * nodes[None, :]  # (n, ka); independent of u_b
    ll_G_11 = _block_loglik_grid(Y_G, M_G, A_G, B_G, etaG_11)  # (n, ka)
    k = quad_order
    pair_eta_R = L[1, 0] * nodes[:, None] + L[1, 1] * nodes[None, :]  # (ka, kb)
    etaR_11 = mu[:, 1][:, None] + pair_eta_R.reshape(-1)[None, :]  # (n, ka*kb)
    ll_R_11 = _block_loglik_grid(Y_R, M_R, A_R, B_R, etaR_11).reshape(n, k, k)
    joint = ll_G_11[:, :, None] + ll_R_11 + logw[None, :, None] + logw[None, None, :]
    log_I11 = logsumexp(joint.reshape(n, -1), axis=1)

    neg_inf = -np.inf
    g1 = data.g_flag
    r1 = data.r_flag
    terms = np.full((n, 4), neg_inf)
    terms[:, 3] = log_pi[:, 3] + log_I11
    ok10 = ~r1
    terms[ok10, 2] = log_pi[ok10, 2] + log_I10[ok10]
    ok01 = ~g1
    terms[ok01, 1] = log_pi[ok01, 1] + log_I01[ok01]
    ok00 = (~g1) & (~r1)
    terms[ok00, 0] = log_pi[ok00, 0]
    return float(np.sum(logsumexp(terms, axis=1)))
