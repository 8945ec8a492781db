"""Data-augmentation Gibbs sampler for the structural parameters.

With the measurement parameters fixed, each sweep alternates an imputation
step (class pair, then trait pair, per dyad) with a posterior step (normal
regression coefficients, residual covariance, logit coefficients). All
randomness flows through counter-based streams keyed by
(seed, chain, iteration, ...), so runs are bit-for-bit reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from . import _kernels
from .model import measurement_design
from .params import (
    Dataset,
    LatentState,
    MeasurementParams,
    ModelError,
    PriorSpec,
    StructuralParams,
)
from .rng import SweepKey, substream

__all__ = [
    "ChainConfig",
    "PosteriorDraws",
    "SamplerError",
    "impute_xi",
    "impute_eta",
    "beta_posterior_mean",
    "draw_beta",
    "draw_sigma",
    "draw_gamma",
    "gibbs_sweep",
    "run_chain",
    "param_names",
    "pack_psi",
    "unpack_psi",
]

_TAG_BETA = 1
_TAG_SIGMA = 2
_TAG_INIT = 3

_STATUS_MSG = {
    1: "log-concavity violation in rejection sampler",
    2: "rejection sampler exceeded max_iter",
    3: "could not build an integrable envelope",
}


class SamplerError(RuntimeError):
    """A sampling step failed; the message carries the iteration index."""


@dataclass(frozen=True)
class ChainConfig:
    """Settings for one MCMC run (defaults sized for long production runs)."""

    iterations: int = 110_000
    burn_in: int = 10_000
    thin: int = 1
    n_chains: int = 2
    seed: int = 0
    threads: int = 1
    prior: PriorSpec = field(default_factory=PriorSpec)
    init_psi: StructuralParams | None = None
    init_state: LatentState | None = None
    use_measurement: bool = True
    ars_max_iter: int = 500

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ModelError("burn_in must be smaller than iterations")
        if self.thin < 1:
            raise ModelError("thin must be at least 1")
        if self.n_chains < 1 or self.threads < 1:
            raise ModelError("n_chains and threads must be positive")

    @property
    def n_kept(self) -> int:
        return (self.iterations - self.burn_in + self.thin - 1) // self.thin


@dataclass(frozen=True)
class PosteriorDraws:
    """Stored structural-parameter draws, one array slab per chain."""

    draws: np.ndarray  # (n_chains, n_kept, n_params)
    names: tuple[str, ...]
    q: int
    seed: int
    chains: tuple[int, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.names):
            raise ModelError("draws must be (chains, draws, params)")
        if not np.isfinite(self.draws).all():
            raise ModelError("draws contain non-finite values")

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def stacked(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[2])

    def parameter(self, name: str) -> np.ndarray:
        try:
            j = self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown parameter {name!r}") from None
        return self.draws[:, :, j]

    def psi_at(self, chain: int, index: int) -> StructuralParams:
        return unpack_psi(self.draws[chain, index], self.q)

    def gamma_draws(self) -> np.ndarray:
        """All logit coefficients, stacked (total draws, 3, q)."""
        flat = self.stacked()
        g0 = 2 * self.q + 3
        return flat[:, g0 : g0 + 3 * self.q].reshape(-1, 3, self.q)


def param_names(q: int, x_names=None) -> tuple[str, ...]:
    xs = list(x_names) if x_names else [f"x{j}" for j in range(q)]
    if len(xs) != q:
        raise ModelError("x_names length mismatch")
    names = [f"beta_G[{v}]" for v in xs]
    names += [f"beta_R[{v}]" for v in xs]
    names += ["sigma2_G", "sigma2_R", "rho_GR"]
    for cell in ("01", "10", "11"):
        names += [f"gamma_{cell}[{v}]" for v in xs]
    return tuple(names)


def pack_psi(psi: StructuralParams) -> np.ndarray:
    return np.concatenate(
        [
            psi.beta_G,
            psi.beta_R,
            [psi.sigma2_G, psi.sigma2_R, psi.rho_GR],
            psi.gamma_01,
            psi.gamma_10,
            psi.gamma_11,
        ]
    )


def unpack_psi(vec: np.ndarray, q: int) -> StructuralParams:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (5 * q + 3,):
        raise ModelError(f"parameter vector must have length {5 * q + 3}")
    return StructuralParams(
        beta_G=vec[:q],
        beta_R=vec[q : 2 * q],
        sigma2_G=vec[2 * q],
        sigma2_R=vec[2 * q + 1],
        rho_GR=vec[2 * q + 2],
        gamma_01=vec[2 * q + 3 : 3 * q + 3],
        gamma_10=vec[3 * q + 3 : 4 * q + 3],
        gamma_11=vec[4 * q + 3 : 5 * q + 3],
    )


class _Workspace:
    """Immutable per-run arrays derived from the data and fixed measurement."""

    def __init__(self, data: Dataset, phi: MeasurementParams):
        if phi.n_z != len(data.z_cols):
            raise ModelError("measurement z dimension does not match dataset z_cols")
        Z = data.Z
        self.X = np.ascontiguousarray(data.X)
        self.Y_G = np.ascontiguousarray(np.nan_to_num(data.Y_G))
        self.M_G = np.ascontiguousarray((~np.isnan(data.Y_G)).astype(np.float64))
        self.Y_R = np.ascontiguousarray(np.nan_to_num(data.Y_R))
        self.M_R = np.ascontiguousarray((~np.isnan(data.Y_R)).astype(np.float64))
        A_G, B_G = measurement_design(phi.items_G, Z)
        A_R, B_R = measurement_design(phi.items_R, Z)
        self.A_G = np.ascontiguousarray(A_G)
        self.B_G = np.ascontiguousarray(B_G)
        self.A_R = np.ascontiguousarray(A_R)
        self.B_R = np.ascontiguousarray(B_R)
        self.g_flag = data.g_flag.astype(np.uint8)
        self.r_flag = data.r_flag.astype(np.uint8)
        self.n = data.n
        self.q = data.q


class _ChainState:
    """Mutable sampler state for one chain."""

    def __init__(self, n: int, q: int, psi: StructuralParams, xi: np.ndarray, eta: np.ndarray):
        self.xi = np.ascontiguousarray(xi, dtype=np.int8)
        self.eta = np.ascontiguousarray(eta, dtype=np.float64)
        self.B = psi.B.copy()
        self.Sigma = psi.Sigma.copy()
        self.gamma = np.ascontiguousarray(psi.Gamma.copy())
        self.mode_eta = self.eta.copy()
        self.mode_gamma = np.zeros((q, 3))
        self.lp = np.zeros((n, 4))
        self.ars_evals = 0

    def psi(self) -> StructuralParams:
        return StructuralParams.from_sigma(
            self.B[:, 0], self.B[:, 1], self.Sigma, self.gamma[0], self.gamma[1], self.gamma[2]
        )


def _lp_from_gamma(X, gamma, out):
    out[:, 0] = 0.0
    np.matmul(X, gamma.T, out=out[:, 1:])


def _beta_precision_rhs(eta, X, Sigma_current, prior):
    Sinv = np.linalg.inv(Sigma_current)
    P = np.kron(Sinv, X.T @ X)
    P[np.diag_indices_from(P)] += 1.0 / prior.sigma2_beta
    rhs = (X.T @ eta @ Sinv).reshape(-1, order="F")
    return P, rhs


def beta_posterior_mean(
    eta: np.ndarray, X: np.ndarray, Sigma_current: np.ndarray, prior: PriorSpec
) -> np.ndarray:
    """Mean of the coefficient full conditional (stacked beta_G, beta_R)."""
    P, rhs = _beta_precision_rhs(eta, X, Sigma_current, prior)
    return cho_solve(cho_factor(P, lower=True), rhs)


def draw_beta(
    eta: np.ndarray,
    X: np.ndarray,
    Sigma_current: np.ndarray,
    prior: PriorSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw the stacked coefficient vector (beta_G', beta_R')' from its
    multivariate-normal full conditional under the N(0, sigma2_beta I) prior."""
    P, rhs = _beta_precision_rhs(eta, X, Sigma_current, prior)
    c = cho_factor(P, lower=True)
    mu = cho_solve(c, rhs)
    z = rng.standard_normal(2 * X.shape[1])
    return mu + solve_triangular(c[0].T, z, lower=False)


def draw_sigma(
    eta: np.ndarray,
    X: np.ndarray,
    beta_current: np.ndarray,
    prior: PriorSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw the 2x2 residual covariance from its inverse-Wishart full
    conditional: scale = prior scale + residual cross-product, df = n + prior df."""
    n, q = X.shape
    B = np.asarray(beta_current, dtype=np.float64).reshape(q, 2, order="F")
    E = eta - X @ B
    scale = prior.wishart_scale + E.T @ E
    df = n + prior.wishart_df
    # Bartlett draw of W ~ Wishart(df, scale^{-1}); the inverse is the sample.
    L = np.linalg.cholesky(np.linalg.inv(scale))
    A = np.zeros((2, 2))
    A[0, 0] = np.sqrt(rng.chisquare(df))
    A[1, 1] = np.sqrt(rng.chisquare(df - 1.0))
    A[1, 0] = rng.standard_normal()
    W = L @ A @ A.T @ L.T
    Sigma = np.linalg.inv(W)
    return 0.5 * (Sigma + Sigma.T)


def draw_gamma(
    cells: np.ndarray,
    X: np.ndarray,
    gamma_current: np.ndarray,
    prior: PriorSpec,
    key: SweepKey,
    max_iter: int = 500,
) -> np.ndarray:
    """Coordinate-wise Gibbs update of the logit coefficients.

    ``cells`` holds the imputed class-pair labels 2*xi_G + xi_R per dyad;
    ``gamma_current`` is the (3, q) matrix with rows for cells 01, 10, 11.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    gamma = np.ascontiguousarray(gamma_current, dtype=np.float64).copy()
    n, q = X.shape
    lp = np.zeros((n, 4))
    _lp_from_gamma(X, gamma, lp)
    mode = np.zeros((q, 3))
    st, _ = _kernels.draw_gamma_kernel(
        key.seed,
        key.chain,
        key.iteration,
        X,
        np.ascontiguousarray(cells, dtype=np.int8),
        lp,
        gamma,
        1.0 / prior.sigma2_gamma,
        mode,
        max_iter,
    )
    if st != 0:
        raise SamplerError(_STATUS_MSG[st])
    return gamma


def impute_xi(
    state: LatentState,
    data: Dataset,
    phi: MeasurementParams,
    psi: StructuralParams,
    rng: SweepKey,
) -> LatentState:
    """Redraw the class pair for every dyad given the current traits."""
    ws = _Workspace(data, phi)
    cs = _ChainState(ws.n, ws.q, psi, np.column_stack([state.xi_G, state.xi_R]),
                     np.column_stack([state.eta_G, state.eta_R]))
    _lp_from_gamma(ws.X, cs.gamma, cs.lp)
    _kernels.impute_xi_kernel(
        rng.seed, rng.chain, rng.iteration, True,
        ws.Y_G, ws.M_G, ws.A_G, ws.B_G, ws.Y_R, ws.M_R, ws.A_R, ws.B_R,
        ws.g_flag, ws.r_flag, cs.lp, cs.eta, cs.xi,
    )
    return LatentState(cs.xi[:, 0], cs.xi[:, 1], state.eta_G, state.eta_R)


def impute_eta(
    state: LatentState,
    data: Dataset,
    phi: MeasurementParams,
    psi: StructuralParams,
    rng: SweepKey,
    max_iter: int = 500,
) -> LatentState:
    """Redraw the trait pair for every dyad given the current class pair."""
    ws = _Workspace(data, phi)
    cs = _ChainState(ws.n, ws.q, psi, np.column_stack([state.xi_G, state.xi_R]),
                     np.column_stack([state.eta_G, state.eta_R]))
    mu = ws.X @ psi.B
    status = np.zeros(ws.n, dtype=np.int64)
    nevals = np.zeros(ws.n, dtype=np.int64)
    _kernels.impute_eta_kernel(
        rng.seed, rng.chain, rng.iteration, True,
        ws.Y_G, ws.M_G, ws.A_G, ws.B_G, ws.Y_R, ws.M_R, ws.A_R, ws.B_R,
        cs.xi, cs.eta, mu, psi.sigma2_G, psi.sigma2_R, psi.rho_GR,
        cs.mode_eta, status, nevals, max_iter,
    )
    _raise_on_status(status, 0)
    return LatentState(state.xi_G, state.xi_R, cs.eta[:, 0], cs.eta[:, 1])


def _raise_on_status(status: np.ndarray, iteration: int):
    bad = np.nonzero(status)[0]
    if bad.size:
        st = int(status[bad[0]])
        raise SamplerError(
            f"iteration {iteration}, dyad {int(bad[0])}: "
            f"{_STATUS_MSG.get(st, f'status {st}')}"
        )


def _sweep(ws: _Workspace, cs: _ChainState, prior: PriorSpec, seed: int, chain: int,
           t: int, meas_on: bool, max_iter: int):
    """One full Gibbs sweep: imputation step, then posterior step."""
    _lp_from_gamma(ws.X, cs.gamma, cs.lp)
    _kernels.impute_xi_kernel(
        seed, chain, t, meas_on,
        ws.Y_G, ws.M_G, ws.A_G, ws.B_G, ws.Y_R, ws.M_R, ws.A_R, ws.B_R,
        ws.g_flag, ws.r_flag, cs.lp, cs.eta, cs.xi,
    )
    if meas_on:
        # Class 0 is pinned to the all-zero pattern; no relabeling can occur.
        if (cs.xi[ws.g_flag == 1, 0] == 0).any() or (cs.xi[ws.r_flag == 1, 1] == 0).any():
            raise SamplerError(f"iteration {t}: class-0 drawn for a nonzero block")
    mu = ws.X @ cs.B
    status = np.zeros(ws.n, dtype=np.int64)
    nevals = np.zeros(ws.n, dtype=np.int64)
    _kernels.impute_eta_kernel(
        seed, chain, t, meas_on,
        ws.Y_G, ws.M_G, ws.A_G, ws.B_G, ws.Y_R, ws.M_R, ws.A_R, ws.B_R,
        cs.xi, cs.eta, mu, cs.Sigma[0, 0], cs.Sigma[1, 1],
        cs.Sigma[0, 1] / np.sqrt(cs.Sigma[0, 0] * cs.Sigma[1, 1]),
        cs.mode_eta, status, nevals, max_iter,
    )
    _raise_on_status(status, t)
    cs.ars_evals += int(nevals.sum())

    beta_vec = draw_beta(cs.eta, ws.X, cs.Sigma, prior, substream(seed, chain, t, _TAG_BETA))
    cs.B = beta_vec.reshape(ws.q, 2, order="F")
    cs.Sigma = draw_sigma(cs.eta, ws.X, beta_vec, prior, substream(seed, chain, t, _TAG_SIGMA))
    cells = (2 * cs.xi[:, 0] + cs.xi[:, 1]).astype(np.int8)
    st, nev = _kernels.draw_gamma_kernel(
        seed, chain, t, ws.X, cells, cs.lp, cs.gamma,
        1.0 / prior.sigma2_gamma, cs.mode_gamma, max_iter,
    )
    if st != 0:
        raise SamplerError(f"iteration {t}: {_STATUS_MSG[st]}")
    cs.ars_evals += nev


def gibbs_sweep(
    data: Dataset,
    phi: MeasurementParams,
    state: LatentState,
    psi: StructuralParams,
    prior: PriorSpec,
    key: SweepKey,
    use_measurement: bool = True,
    max_iter: int = 500,
) -> tuple[LatentState, StructuralParams]:
    """Run one imputation + posterior sweep and return the updated pair.

    This is the same transition kernel run_chain iterates; it is exposed for
    joint-distribution (prior invariance) testing.
    """
    ws = _Workspace(data, phi)
    cs = _ChainState(ws.n, ws.q, psi, np.column_stack([state.xi_G, state.xi_R]),
                     np.column_stack([state.eta_G, state.eta_R]))
    _sweep(ws, cs, prior, key.seed, key.chain, key.iteration, use_measurement, max_iter)
    new_state = LatentState(cs.xi[:, 0], cs.xi[:, 1], cs.eta[:, 0], cs.eta[:, 1])
    return new_state, cs.psi()


def _default_init(ws: _Workspace, config: ChainConfig, chain: int):
    if config.init_psi is not None:
        psi = config.init_psi
    else:
        psi = StructuralParams.zeros(ws.q)
    if config.init_state is not None:
        st = config.init_state
        xi = np.column_stack([st.xi_G, st.xi_R])
        eta = np.column_stack([st.eta_G, st.eta_R])
    else:
        xi = np.ones((ws.n, 2), dtype=np.int8)
        gen = substream(config.seed, chain, 0, _TAG_INIT)
        eta = gen.standard_normal((ws.n, 2))
    return psi, xi, eta


def run_chain(data: Dataset, phi_fixed: MeasurementParams, config: ChainConfig) -> PosteriorDraws:
    """Run the configured chains and return thinned post-burn-in draws.

    Chains execute sequentially; dyad-level work inside each sweep is
    parallel. Results depend only on (seed, config, data), not on scheduling.
    """
    import numba

    ws = _Workspace(data, phi_fixed)
    try:
        numba.set_num_threads(min(config.threads, numba.config.NUMBA_NUM_THREADS))
    except ValueError:
        pass
    n_params = 5 * ws.q + 3
    out = np.empty((config.n_chains, config.n_kept, n_params))
    names = param_names(ws.q, data.x_names or None)
    total_evals = 0
    t0 = time.perf_counter()
    for chain in range(config.n_chains):
        psi0, xi, eta = _default_init(ws, config, chain)
        cs = _ChainState(ws.n, ws.q, psi0, xi, eta)
        kept = 0
        for t in range(1, config.iterations + 1):
            _sweep(ws, cs, config.prior, config.seed, chain, t,
                   config.use_measurement, config.ars_max_iter)
            if t > config.burn_in and (t - config.burn_in - 1) % config.thin == 0:
                out[chain, kept] = pack_psi(cs.psi())
                kept += 1
        assert kept == config.n_kept
        total_evals += cs.ars_evals
    wall = time.perf_counter() - t0
    provenance = {
        "rng": "splitmix64 keyed by (seed, chain, iteration, unit, substep)",
        "seed": config.seed,
        "threads": config.threads,
        "wall_time_s": wall,
        "ars_density_evals": total_evals,
        "use_measurement": config.use_measurement,
    }
    return PosteriorDraws(
        draws=out,
        names=names,
        q=ws.q,
        seed=config.seed,
        chains=tuple(range(config.n_chains)),
        provenance=provenance,
    )
