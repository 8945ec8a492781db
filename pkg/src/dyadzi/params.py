"""Core data containers: dataset, measurement/structural parameters, latent state.

All containers are frozen dataclasses wrapping numpy arrays. Arrays are not
copied on construction; treat them as immutable once a container is built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

__all__ = [
    "Dataset",
    "ItemMeasurement",
    "MeasurementParams",
    "StructuralParams",
    "LatentState",
    "PriorSpec",
    "DataError",
    "ModelError",
]


class ModelError(ValueError):
    """Invalid model parameters or state."""


class DataError(ValueError):
    """Invalid or inconsistent input data."""


def _as_float_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"{name} must be a 2-d array, got ndim={a.ndim}")
    return a


@dataclass(frozen=True)
class Dataset:
    """Dyadic dataset: covariates plus two blocks of binary items.

    Item entries are coded 0.0 / 1.0 with NaN for missing. ``X`` must carry a
    constant first column (intercept) and no missing values. ``z_cols``
    indexes the covariate columns allowed to shift item measurement.
    ``g_flag`` / ``r_flag`` are derived: True iff any observed item in the
    block equals 1.
    """

    X: np.ndarray
    Y_G: np.ndarray
    Y_R: np.ndarray
    z_cols: tuple[int, ...] = ()
    x_names: tuple[str, ...] = ()
    g_names: tuple[str, ...] = ()
    r_names: tuple[str, ...] = ()
    g_flag: np.ndarray = field(init=False)
    r_flag: np.ndarray = field(init=False)

    def __post_init__(self):
        X = _as_float_matrix(self.X, "X")
        Y_G = _as_float_matrix(self.Y_G, "Y_G")
        Y_R = _as_float_matrix(self.Y_R, "Y_R")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y_G", Y_G)
        object.__setattr__(self, "Y_R", Y_R)
        n = X.shape[0]
        if Y_G.shape[0] != n or Y_R.shape[0] != n:
            raise DataError("X, Y_G, Y_R must have the same number of rows")
        if n == 0:
            raise DataError("empty dataset")
        if np.isnan(X).any():
            rows = np.nonzero(np.isnan(X).any(axis=1))[0]
            raise DataError(f"missing covariate values in rows {rows.tolist()[:10]}")
        if not np.allclose(X[:, 0], 1.0):
            raise DataError("first column of X must be the constant 1")
        for name, Y in (("Y_G", Y_G), ("Y_R", Y_R)):
            obs = ~np.isnan(Y)
            vals = Y[obs]
            if not np.isin(vals, (0.0, 1.0)).all():
                raise DataError(f"non-binary item value in {name}")
        if not all(0 <= c < X.shape[1] for c in self.z_cols):
            raise DataError("z_cols out of range")
        miss_both = np.isnan(Y_G).all(axis=1) & np.isnan(Y_R).all(axis=1)
        if miss_both.any():
            rows = np.nonzero(miss_both)[0]
            raise DataError(
                f"rows with all items missing in both blocks: {rows.tolist()[:10]}"
            )
        object.__setattr__(self, "z_cols", tuple(int(c) for c in self.z_cols))
        object.__setattr__(self, "g_flag", np.nansum(Y_G, axis=1) > 0)
        object.__setattr__(self, "r_flag", np.nansum(Y_R, axis=1) > 0)
        if self.x_names and len(self.x_names) != X.shape[1]:
            raise DataError("x_names length mismatch")
        if self.g_names and len(self.g_names) != Y_G.shape[1]:
            raise DataError("g_names length mismatch")
        if self.r_names and len(self.r_names) != Y_R.shape[1]:
            raise DataError("r_names length mismatch")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def q(self) -> int:
        return self.X.shape[1]

    @property
    def p_G(self) -> int:
        return self.Y_G.shape[1]

    @property
    def p_R(self) -> int:
        return self.Y_R.shape[1]

    @property
    def Z(self) -> np.ndarray:
        """Covariate submatrix used for non-equivalent measurement."""
        return self.X[:, list(self.z_cols)]

    def covariate_names(self) -> tuple[str, ...]:
        if self.x_names:
            return self.x_names
        return tuple(f"x{j}" for j in range(self.q))


@dataclass(frozen=True)
class ItemMeasurement:
    """Logistic measurement model for one binary item.

    Response probability is logistic(tau + delta.z + (lam + zeta.z) * eta),
    with z the non-equivalence covariates. An anchor item has tau fixed at 0
    and lam fixed at 1 to set the latent scale.
    """

    tau: float
    lam: float
    delta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    zeta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fixed_anchor: bool = False

    def __post_init__(self):
        delta = np.atleast_1d(np.asarray(self.delta, dtype=np.float64))
        zeta = np.atleast_1d(np.asarray(self.zeta, dtype=np.float64))
        if delta.shape != zeta.shape:
            raise ModelError("delta and zeta must have the same length")
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "zeta", zeta)
        if self.fixed_anchor and (self.tau != 0.0 or self.lam != 1.0):
            raise ModelError("anchor item must have tau=0 and lam=1 exactly")

    @property
    def n_z(self) -> int:
        return self.delta.shape[0]


@dataclass(frozen=True)
class MeasurementParams:
    """Measurement parameters for both item blocks; one anchor per block."""

    items_G: tuple[ItemMeasurement, ...]
    items_R: tuple[ItemMeasurement, ...]

    def __post_init__(self):
        object.__setattr__(self, "items_G", tuple(self.items_G))
        object.__setattr__(self, "items_R", tuple(self.items_R))
        for label, items in (("G", self.items_G), ("R", self.items_R)):
            if not items:
                raise ModelError(f"block {label} has no items")
            n_anchor = sum(it.fixed_anchor for it in items)
            if n_anchor != 1:
                raise ModelError(
                    f"block {label} must have exactly one anchor item, got {n_anchor}"
                )
            nz = {it.n_z for it in items}
            if len(nz) != 1:
                raise ModelError(f"block {label}: inconsistent z dimensions")

    @property
    def n_z(self) -> int:
        return self.items_G[0].n_z

    def block(self, which: str) -> tuple[ItemMeasurement, ...]:
        if which == "G":
            return self.items_G
        if which == "R":
            return self.items_R
        raise ValueError("block must be 'G' or 'R'")


@dataclass(frozen=True)
class StructuralParams:
    """Structural model: bivariate linear model for the traits and a
    multinomial logistic model for the class pair.

    ``beta_G``/``beta_R`` are q-vector regression coefficients for the trait
    means; (sigma2_G, sigma2_R, rho_GR) define the residual covariance.
    ``gamma_jk`` are multinomial-logit coefficients for class cell (j, k)
    relative to (0, 0).
    """

    beta_G: np.ndarray
    beta_R: np.ndarray
    sigma2_G: float
    sigma2_R: float
    rho_GR: float
    gamma_01: np.ndarray
    gamma_10: np.ndarray
    gamma_11: np.ndarray

    def __post_init__(self):
        for name in ("beta_G", "beta_R", "gamma_01", "gamma_10", "gamma_11"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            object.__setattr__(self, name, v)
        if not (
            self.beta_G.shape
            == self.beta_R.shape
            == self.gamma_01.shape
            == self.gamma_10.shape
            == self.gamma_11.shape
        ):
            raise ModelError("coefficient vectors must share the covariate dimension")
        object.__setattr__(self, "sigma2_G", float(self.sigma2_G))
        object.__setattr__(self, "sigma2_R", float(self.sigma2_R))
        object.__setattr__(self, "rho_GR", float(self.rho_GR))
        if self.sigma2_G <= 0 or self.sigma2_R <= 0:
            raise ModelError("residual variances must be positive")
        if not -1.0 < self.rho_GR < 1.0:
            raise ModelError("rho_GR must lie in (-1, 1)")

    @property
    def q(self) -> int:
        return self.beta_G.shape[0]

    @property
    def Sigma(self) -> np.ndarray:
        """Residual covariance of (eta_G, eta_R), assembled on demand."""
        sg = np.sqrt(self.sigma2_G)
        sr = np.sqrt(self.sigma2_R)
        c = self.rho_GR * sg * sr
        return np.array([[self.sigma2_G, c], [c, self.sigma2_R]])

    @property
    def B(self) -> np.ndarray:
        """Coefficient matrix [beta_G beta_R], shape (q, 2)."""
        return np.column_stack([self.beta_G, self.beta_R])

    @property
    def Gamma(self) -> np.ndarray:
        """Logit coefficients stacked as rows (gamma_01, gamma_10, gamma_11)."""
        return np.vstack([self.gamma_01, self.gamma_10, self.gamma_11])

    @staticmethod
    def from_sigma(beta_G, beta_R, Sigma, gamma_01, gamma_10, gamma_11) -> "StructuralParams":
        Sigma = np.asarray(Sigma, dtype=np.float64)
        s2g, s2r = Sigma[0, 0], Sigma[1, 1]
        rho = Sigma[0, 1] / np.sqrt(s2g * s2r)
        return StructuralParams(beta_G, beta_R, s2g, s2r, rho, gamma_01, gamma_10, gamma_11)

    @staticmethod
    def zeros(q: int) -> "StructuralParams":
        z = np.zeros(q)
        return StructuralParams(z, z.copy(), 1.0, 1.0, 0.0, z.copy(), z.copy(), z.copy())


@dataclass(frozen=True)
class LatentState:
    """Per-dyad latent class pair and trait pair.

    ``xi_G``/``xi_R`` take values in {0, 1}; class 1 is forced wherever the
    corresponding block has an observed nonzero response.
    """

    xi_G: np.ndarray
    xi_R: np.ndarray
    eta_G: np.ndarray
    eta_R: np.ndarray

    def __post_init__(self):
        xi_G = np.asarray(self.xi_G, dtype=np.int8)
        xi_R = np.asarray(self.xi_R, dtype=np.int8)
        eta_G = np.asarray(self.eta_G, dtype=np.float64)
        eta_R = np.asarray(self.eta_R, dtype=np.float64)
        if not (xi_G.shape == xi_R.shape == eta_G.shape == eta_R.shape):
            raise ModelError("latent state vectors must have equal length")
        if not np.isin(xi_G, (0, 1)).all() or not np.isin(xi_R, (0, 1)).all():
            raise ModelError("class labels must be 0 or 1")
        object.__setattr__(self, "xi_G", xi_G)
        object.__setattr__(self, "xi_R", xi_R)
        object.__setattr__(self, "eta_G", eta_G)
        object.__setattr__(self, "eta_R", eta_R)

    def check_flags(self, data: Dataset):
        """Raise unless class 1 holds wherever a block has observed ones."""
        if (self.xi_G[data.g_flag] == 0).any() or (self.xi_R[data.r_flag] == 0).any():
            raise ModelError("class 0 assigned to a dyad with observed nonzero items")


@dataclass(frozen=True)
class PriorSpec:
    """Priors for the structural parameters.

    Defaults: N(0, 100) on each regression and logit coefficient, and an
    inverse-Wishart(identity, 2) on the trait residual covariance.
    """

    sigma2_beta: float = 100.0
    sigma2_gamma: float = 100.0
    wishart_scale: np.ndarray = field(default_factory=lambda: np.eye(2))
    wishart_df: float = 2.0

    def __post_init__(self):
        W = np.asarray(self.wishart_scale, dtype=np.float64)
        if W.shape != (2, 2) or not np.allclose(W, W.T):
            raise ModelError("wishart_scale must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(W).min() <= 0:
            raise ModelError("wishart_scale must be positive definite")
        if self.sigma2_beta <= 0 or self.sigma2_gamma <= 0:
            raise ModelError("prior variances must be positive")
        if self.wishart_df <= 1:
            raise ModelError("wishart_df must exceed 1")
        object.__setattr__(self, "wishart_scale", W)
        object.__setattr__(self, "sigma2_beta", float(self.sigma2_beta))
        object.__setattr__(self, "sigma2_gamma", float(self.sigma2_gamma))
        object.__setattr__(self, "wishart_df", float(self.wishart_df))
