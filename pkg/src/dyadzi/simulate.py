"""Forward simulation from fully specified measurement + structural models.

Used for recovery studies and acceptance tests: draws covariates, the class
pair, the trait pair, then the items, and finally applies the requested
missingness. The true latent state is returned alongside the dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import measurement_design
from .params import Dataset, LatentState, MeasurementParams, ModelError, StructuralParams
from .rng import substream

__all__ = ["CovariateSpec", "MissingRule", "SimSpec", "simulate"]

_PH_X = 1
_PH_XI = 2
_PH_ETA = 3
_PH_ITEMS = 4
_PH_MISS = 5


@dataclass(frozen=True)
class CovariateSpec:
    """One covariate column: constant 1, Bernoulli(p), or standard normal."""

    kind: str
    p: float = 0.5
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("constant", "binary", "normal"):
            raise ModelError(f"unknown covariate kind {self.kind!r}")
        if self.kind == "binary" and not 0.0 <= self.p <= 1.0:
            raise ModelError("binary covariate probability must be in [0, 1]")


@dataclass(frozen=True)
class MissingRule:
    """Mask one item wherever a covariate column equals a value."""

    block: str
    item: int
    column: int
    value: float

    def __post_init__(self):
        if self.block not in ("G", "R"):
            raise ModelError("rule block must be 'G' or 'R'")


@dataclass(frozen=True)
class SimSpec:
    """Everything needed to draw a synthetic dataset."""

    n: int
    covariates: tuple[CovariateSpec, ...]
    phi: MeasurementParams
    psi: StructuralParams
    z_cols: tuple[int, ...] = ()
    miss_prob_G: np.ndarray | None = None
    miss_prob_R: np.ndarray | None = None
    miss_rules: tuple[MissingRule, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "z_cols", tuple(int(c) for c in self.z_cols))
        object.__setattr__(self, "miss_rules", tuple(self.miss_rules))
        if self.n < 1:
            raise ModelError("n must be positive")
        if not self.covariates or self.covariates[0].kind != "constant":
            raise ModelError("first covariate must be the constant intercept")
        if self.psi.q != len(self.covariates):
            raise ModelError("psi covariate dimension does not match generators")
        if self.phi.n_z != len(self.z_cols):
            raise ModelError("phi z dimension does not match z_cols")
        for which, prob, p_items in (
            ("miss_prob_G", self.miss_prob_G, len(self.phi.items_G)),
            ("miss_prob_R", self.miss_prob_R, len(self.phi.items_R)),
        ):
            if prob is not None:
                prob = np.asarray(prob, dtype=np.float64)
                if prob.shape != (p_items,):
                    raise ModelError(f"{which} must have one entry per item")
                if (prob < 0).any() or (prob > 1).any():
                    raise ModelError(f"{which} entries must be in [0, 1]")
                object.__setattr__(self, which, prob)


def _draw_covariates(spec: SimSpec) -> np.ndarray:
    gen = substream(spec.seed, _PH_X)
    cols = []
    for c in spec.covariates:
        if c.kind == "constant":
            cols.append(np.ones(spec.n))
        elif c.kind == "binary":
            cols.append(gen.binomial(1, c.p, size=spec.n).astype(np.float64))
        else:
            cols.append(gen.standard_normal(spec.n))
    return np.column_stack(cols)


def _missing_mask(spec: SimSpec, X, p_items, block, prob) -> np.ndarray:
    gen = substream(spec.seed, _PH_MISS, 0 if block == "G" else 1)
    miss = np.zeros((spec.n, p_items), dtype=bool)
    if prob is not None:
        miss = gen.uniform(size=(spec.n, p_items)) < prob[None, :]
    for rule in spec.miss_rules:
        if rule.block == block:
            if not 0 <= rule.item < p_items or not 0 <= rule.column < X.shape[1]:
                raise ModelError("missingness rule out of range")
            miss[:, rule.item] |= X[:, rule.column] == rule.value
    return miss


def simulate(spec: SimSpec) -> tuple[Dataset, LatentState]:
    """Draw a dataset and its true latent state.

    Rows whose missingness mask would hide every item of both blocks are
    re-masked (the dataset invariant forbids them); if a row still has no
    observed item after 100 attempts the spec is rejected.
    """
    X = _draw_covariates(spec)
    n = spec.n
    psi = spec.psi

    lin = np.column_stack([np.zeros(n), X @ psi.Gamma.T])
    lin -= lin.max(axis=1, keepdims=True)
    pr = np.exp(lin)
    pr /= pr.sum(axis=1, keepdims=True)
    gen = substream(spec.seed, _PH_XI)
    u = gen.uniform(size=n)
    cells = (u[:, None] > np.cumsum(pr, axis=1)).sum(axis=1)
    xi_G = (cells // 2).astype(np.int8)
    xi_R = (cells % 2).astype(np.int8)

    gen = substream(spec.seed, _PH_ETA)
    L = np.linalg.cholesky(psi.Sigma)
    eta = X @ psi.B + gen.standard_normal((n, 2)) @ L.T
    state = LatentState(xi_G, xi_R, eta[:, 0], eta[:, 1])

    Z = X[:, list(spec.z_cols)]
    gen = substream(spec.seed, _PH_ITEMS)
    blocks = {}
    for block, items, xi in (("G", spec.phi.items_G, xi_G), ("R", spec.phi.items_R, xi_R)):
        A, B = measurement_design(items, Z)
        p = expit(A + B * eta[:, 0 if block == "G" else 1][:, None])
        y = (gen.uniform(size=p.shape) < p).astype(np.float64)
        y[xi == 0] = 0.0
        blocks[block] = y

    miss_G = _missing_mask(spec, X, blocks["G"].shape[1], "G", spec.miss_prob_G)
    miss_R = _missing_mask(spec, X, blocks["R"].shape[1], "R", spec.miss_prob_R)
    both_gone = miss_G.all(axis=1) & miss_R.all(axis=1)
    tries = 0
    gen = substream(spec.seed, _PH_MISS, 2)
    while both_gone.any():
        tries += 1
        if tries > 100:
            raise ModelError("missingness spec hides all items of some dyads")
        idx = np.nonzero(both_gone)[0]
        if spec.miss_prob_G is not None:
            miss_G[idx] = gen.uniform(size=(idx.size, miss_G.shape[1])) < spec.miss_prob_G
        for rule in spec.miss_rules:
            if rule.block == "G":
                miss_G[idx, rule.item] |= X[idx, rule.column] == rule.value
        both_gone = miss_G.all(axis=1) & miss_R.all(axis=1)

    Y_G = blocks["G"].copy()
    Y_R = blocks["R"].copy()
    Y_G[miss_G] = np.nan
    Y_R[miss_R] = np.nan

    x_names = tuple(
        c.name or ("const" if c.kind == "constant" else f"x{j}")
        for j, c in enumerate(spec.covariates)
    )
    data = Dataset(
        X=X,
        Y_G=Y_G,
        Y_R=Y_R,
        z_cols=spec.z_cols,
        x_names=x_names,
        g_names=tuple(f"g{j}" for j in range(Y_G.shape[1])),
        r_names=tuple(f"r{j}" for j in range(Y_R.shape[1])),
    )
    return data, state
