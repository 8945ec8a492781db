"""First-step maximum likelihood for one item block.

Fits the zero-inflated single-block marginal likelihood: a latent-class
indicator with logistic dependence on the z covariates, a normal trait given
z, and logistic items given the trait. The trait integral uses Gauss-Hermite
quadrature recentered per dyad at the trait's conditional mean and scale.
The structural pieces are nuisance here; only the item parameters are kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit, logsumexp

from .model import gauss_hermite
from .params import ItemMeasurement, ModelError

__all__ = [
    "FitError",
    "FitOptions",
    "FirstStepNuisance",
    "FitReport",
    "BlockObjective",
    "fit_block",
]


class FitError(RuntimeError):
    """Measurement fit failed: bad pattern, empty class, or no convergence."""


@dataclass(frozen=True)
class FitOptions:
    quad_order: int = 21
    max_iter: int = 500
    gtol: float = 1e-3
    raise_on_failure: bool = True


@dataclass(frozen=True)
class FirstStepNuisance:
    """Discardable structural estimates from the single-block model.

    ``logistic_coeffs`` parameterize P(class 1 | z) on (intercept + z);
    ``linear_coeffs`` and ``variance`` give the trait's normal model given z.
    """

    logistic_coeffs: np.ndarray
    linear_coeffs: np.ndarray
    variance: float

    def __post_init__(self):
        if self.variance <= 0:
            raise ModelError("nuisance variance must be positive")
        object.__setattr__(self, "logistic_coeffs", np.asarray(self.logistic_coeffs, float))
        object.__setattr__(self, "linear_coeffs", np.asarray(self.linear_coeffs, float))


@dataclass(frozen=True)
class FitReport:
    phi_hat: tuple[ItemMeasurement, ...]
    nuisance: FirstStepNuisance
    loglik: float
    converged: bool
    iterations: int
    gradient_norm: float
    history: tuple[float, ...] = ()


def _normalize_pattern(pattern, p, nz):
    out = []
    for j in range(p):
        cols = tuple(sorted(int(r) for r in pattern[j])) if j < len(pattern) else ()
        if any(r < 0 or r >= nz for r in cols):
            raise FitError(f"pattern for item {j} references a z column out of range")
        if len(set(cols)) != len(cols):
            raise FitError(f"pattern for item {j} repeats a z column")
        out.append(cols)
    if len(pattern) != p:
        raise FitError("pattern must have one entry per item")
    return tuple(out)


class BlockObjective:
    """Packed negative log-likelihood and gradient for one block.

    Parameter order: tau (non-anchor items), lam (non-anchor items), delta
    (item-major over the pattern), zeta (same layout), logistic nuisance
    (1 + nz), linear nuisance (1 + nz), log sigma.
    """

    def __init__(self, Y, Z, pattern, anchor, quad_order=21):
        Y = np.asarray(Y, dtype=np.float64)
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if Z.shape[0] != Y.shape[0]:
            raise FitError("Y and Z row counts differ")
        self.n, self.p = Y.shape
        self.nz = Z.shape[1]
        if not 0 <= anchor < self.p:
            raise FitError("anchor item index out of range")
        self.anchor = int(anchor)
        self.pattern = _normalize_pattern(pattern, self.p, self.nz)
        for r in range(self.nz):
            equivalent = sum(1 for cols in self.pattern if r not in cols)
            if equivalent < 2:
                raise FitError(
                    f"z column {r} must leave at least two fully equivalent items"
                )
        self.M = (~np.isnan(Y)).astype(np.float64)
        self.Y = np.nan_to_num(Y)
        self.Z = Z
        self.ZZ = np.column_stack([np.ones(self.n), Z])
        self.g1 = np.nansum(Y, axis=1) > 0
        if not self.g1.any():
            raise FitError("no dyad has a nonzero response: class 1 is empty")
        self.nodes, w = gauss_hermite(quad_order)
        self.logw = np.log(w)

        self.free_items = [j for j in range(self.p) if j != self.anchor]
        self.pat_pairs = [(j, r) for j in range(self.p) for r in self.pattern[j]]
        nf = len(self.free_items)
        npat = len(self.pat_pairs)
        self.sl_tau = slice(0, nf)
        self.sl_lam = slice(nf, 2 * nf)
        self.sl_delta = slice(2 * nf, 2 * nf + npat)
        self.sl_zeta = slice(2 * nf + npat, 2 * nf + 2 * npat)
        base = 2 * nf + 2 * npat
        self.sl_a = slice(base, base + 1 + self.nz)
        self.sl_b = slice(base + 1 + self.nz, base + 2 * (1 + self.nz))
        self.i_ls = base + 2 * (1 + self.nz)
        self.n_params = self.i_ls + 1
        self.names = (
            [f"tau[{j}]" for j in self.free_items]
            + [f"lam[{j}]" for j in self.free_items]
            + [f"delta[{j},{r}]" for j, r in self.pat_pairs]
            + [f"zeta[{j},{r}]" for j, r in self.pat_pairs]
            + [f"pi[{k}]" for k in range(1 + self.nz)]
            + [f"mu[{k}]" for k in range(1 + self.nz)]
            + ["log_sigma"]
        )

    def start(self) -> np.ndarray:
        x = np.zeros(self.n_params)
        m1 = self.M[self.g1]
        y1 = self.Y[self.g1]
        with np.errstate(invalid="ignore", divide="ignore"):
            rate = y1.sum(axis=0) / np.maximum(m1.sum(axis=0), 1.0)
        rate = np.clip(rate, 0.05, 0.95)
        taus = np.log(rate / (1 - rate))
        x[self.sl_tau] = taus[self.free_items]
        x[self.sl_lam] = 1.0
        share = np.clip(self.g1.mean(), 0.02, 0.98)
        x[self.sl_a][0] = np.log(share / (1 - share))
        return x

    def _unpack_items(self, x):
        tau = np.zeros(self.p)
        lam = np.zeros(self.p)
        tau[self.free_items] = x[self.sl_tau]
        lam[self.free_items] = x[self.sl_lam]
        lam[self.anchor] = 1.0
        delta = np.zeros((self.p, self.nz))
        zeta = np.zeros((self.p, self.nz))
        for k, (j, r) in enumerate(self.pat_pairs):
            delta[j, r] = x[self.sl_delta][k]
            zeta[j, r] = x[self.sl_zeta][k]
        return tau, lam, delta, zeta

    def value_and_grad(self, x):
        tau, lam, delta, zeta = self._unpack_items(x)
        a = x[self.sl_a]
        b = x[self.sl_b]
        sigma = np.exp(x[self.i_ls])

        A = tau[None, :] + self.Z @ delta.T  # (n, p)
        B = lam[None, :] + self.Z @ zeta.T
        mu = self.ZZ @ b
        eta = mu[:, None] + sigma * self.nodes[None, :]  # (n, K)
        s = A[:, None, :] + B[:, None, :] * eta[:, :, None]  # (n, K, p)
        sp = np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s)))
        lp = np.einsum("ij,ikj->ik", self.M, self.Y[:, None, :] * s - sp)
        logI = logsumexp(self.logw[None, :] + lp, axis=1)  # (n,)

        lin_a = self.ZZ @ a
        log_pi = log_expit(lin_a)
        log_1mpi = log_expit(-lin_a)
        logL = np.where(self.g1, log_pi + logI, np.logaddexp(log_pi + logI, log_1mpi))
        ll = float(np.sum(logL))

        # Posterior-style weights for the class-1 quadrature grid.
        W = np.exp(log_pi[:, None] + self.logw[None, :] + lp - logL[:, None])  # (n, K)
        E = self.M[:, None, :] * (self.Y[:, None, :] - expit(s))  # (n, K, p)

        g = np.zeros_like(x)
        WE = np.einsum("ik,ikj->ij", W, E)  # (n, p)
        WEeta = np.einsum("ik,ikj,ik->ij", W, E, eta)  # (n, p)
        g_tau = WE.sum(axis=0)
        g_lam = WEeta.sum(axis=0)
        g[self.sl_tau] = g_tau[self.free_items]
        g[self.sl_lam] = g_lam[self.free_items]
        if self.pat_pairs:
            g_delta = self.Z.T @ WE  # (nz, p)
            g_zeta = self.Z.T @ WEeta
            g[self.sl_delta] = [g_delta[r, j] for j, r in self.pat_pairs]
            g[self.sl_zeta] = [g_zeta[r, j] for j, r in self.pat_pairs]

        C = np.einsum("ikj,ij->ik", E, B)  # (n, K): d lp / d eta
        u = np.einsum("ik,ik->i", W, C)
        g[self.sl_b] = self.ZZ.T @ u
        g[self.i_ls] = float(np.einsum("ik,ik,k->", W, C, self.nodes) * sigma)

        pi = expit(lin_a)
        I = np.exp(logI)
        L = pi * I + (~self.g1) * (1.0 - pi)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(
                self.g1,
                1.0 - pi,
                np.where(L > 0, pi * (1.0 - pi) * (I - 1.0) / L, 0.0),
            )
        g[self.sl_a] = self.ZZ.T @ v
        return -ll, -g

    def loglik(self, x) -> float:
        return -self.value_and_grad(x)[0]

    def per_dyad_scores(self, x) -> np.ndarray:
        """Score contribution of each dyad, shape (n, n_params).

        The outer product of these at the maximizer estimates the observed
        information (used for asymptotic standard errors in recovery studies).
        """
        tau, lam, delta, zeta = self._unpack_items(x)
        a = x[self.sl_a]
        b = x[self.sl_b]
        sigma = np.exp(x[self.i_ls])
        A = tau[None, :] + self.Z @ delta.T
        B = lam[None, :] + self.Z @ zeta.T
        mu = self.ZZ @ b
        eta = mu[:, None] + sigma * self.nodes[None, :]
        s = A[:, None, :] + B[:, None, :] * eta[:, :, None]
        sp = np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s)))
        lp = np.einsum("ij,ikj->ik", self.M, self.Y[:, None, :] * s - sp)
        logI = logsumexp(self.logw[None, :] + lp, axis=1)
        lin_a = self.ZZ @ a
        log_pi = log_expit(lin_a)
        log_1mpi = log_expit(-lin_a)
        logL = np.where(self.g1, log_pi + logI, np.logaddexp(log_pi + logI, log_1mpi))
        W = np.exp(log_pi[:, None] + self.logw[None, :] + lp - logL[:, None])
        E = self.M[:, None, :] * (self.Y[:, None, :] - expit(s))

        scores = np.zeros((self.n, self.n_params))
        WE = np.einsum("ik,ikj->ij", W, E)
        WEeta = np.einsum("ik,ikj,ik->ij", W, E, eta)
        scores[:, self.sl_tau] = WE[:, self.free_items]
        scores[:, self.sl_lam] = WEeta[:, self.free_items]
        for k, (j, r) in enumerate(self.pat_pairs):
            scores[:, self.sl_delta.start + k] = WE[:, j] * self.Z[:, r]
            scores[:, self.sl_zeta.start + k] = WEeta[:, j] * self.Z[:, r]
        C = np.einsum("ikj,ij->ik", E, B)
        u = np.einsum("ik,ik->i", W, C)
        scores[:, self.sl_b] = u[:, None] * self.ZZ
        scores[:, self.i_ls] = np.einsum("ik,ik,k->i", W, C, self.nodes) * sigma
        pi = expit(lin_a)
        I = np.exp(logI)
        L = pi * I + (~self.g1) * (1.0 - pi)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(
                self.g1,
                1.0 - pi,
                np.where(L > 0, pi * (1.0 - pi) * (I - 1.0) / L, 0.0),
            )
        scores[:, self.sl_a] = v[:, None] * self.ZZ
        return scores

    def items(self, x) -> tuple[ItemMeasurement, ...]:
        tau, lam, delta, zeta = self._unpack_items(x)
        return tuple(
            ItemMeasurement(
                tau=tau[j],
                lam=lam[j],
                delta=delta[j],
                zeta=zeta[j],
                fixed_anchor=(j == self.anchor),
            )
            for j in range(self.p)
        )

    def nuisance(self, x) -> FirstStepNuisance:
        return FirstStepNuisance(
            logistic_coeffs=x[self.sl_a].copy(),
            linear_coeffs=x[self.sl_b].copy(),
            variance=float(np.exp(2.0 * x[self.i_ls])),
        )


def fit_block(
    Y: np.ndarray,
    Z: np.ndarray,
    pattern,
    anchor: int,
    opts: FitOptions | None = None,
    x0: np.ndarray | None = None,
) -> FitReport:
    """Maximize the single-block zero-inflated marginal likelihood.

    ``pattern`` lists, per item, the z columns with free (coupled) intercept
    and loading shifts; every z column must leave at least two items fully
    equivalent. The anchor item keeps tau = 0 and lam = 1 exactly.
    """
    opts = opts or FitOptions()
    obj = BlockObjective(Y, Z, pattern, anchor, quad_order=opts.quad_order)
    x = obj.start() if x0 is None else np.asarray(x0, dtype=np.float64)

    history: list[float] = []
    last_f = [np.inf]

    def fun(xk):
        f, gr = obj.value_and_grad(xk)
        last_f[0] = f
        return f, gr

    res = minimize(
        fun,
        x,
        jac=True,
        method="L-BFGS-B",
        callback=lambda xk: history.append(-last_f[0]),
        options={"maxiter": opts.max_iter, "gtol": opts.gtol, "ftol": 1e-14},
    )
    gnorm = float(np.max(np.abs(res.jac)))
    converged = bool(res.success) and gnorm <= opts.gtol
    if not converged and opts.raise_on_failure:
        raise FitError(
            f"no convergence within {opts.max_iter} iterations "
            f"(gradient norm {gnorm:.3g}): {res.message}"
        )
    return FitReport(
        phi_hat=obj.items(res.x),
        nuisance=obj.nuisance(res.x),
        loglik=float(-res.fun),
        converged=converged,
        iterations=int(res.nit),
        gradient_norm=gnorm,
        history=tuple(history),
    )
