"""Convergence diagnostics and posterior post-processing.

Split-chain potential scale reduction and autocorrelation-based effective
sample size per parameter; posterior summary tables with credible intervals
and interval-excludes-zero stars; fitted class-probability tables averaged
over dyads and draws, with odds ratios, marginal probabilities, and
covariate-setting contrasts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import PosteriorDraws
from .params import DataError, Dataset

__all__ = [
    "split_rhat",
    "ess",
    "rhat_ess",
    "SummaryTable",
    "summarize",
    "Setting",
    "PiTable",
    "pi_table",
    "marginals_from_cells",
    "odds_ratio_from_cells",
    "save_trace_plots",
]

_LEVELS = (0.90, 0.95, 0.99)


def _split_chains(chains: np.ndarray) -> np.ndarray:
    chains = np.asarray(chains, dtype=np.float64)
    m, L = chains.shape
    half = L // 2
    return np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction factor.

    ``chains`` is (n_chains, n_draws). Returns +inf when the within-chain
    variance vanishes (e.g. a constant chain).
    """
    s = _split_chains(chains)
    m, L = s.shape
    if L < 4:
        raise ValueError("need at least 4 draws per chain")
    W = s.var(axis=1, ddof=1).mean()
    B = L * s.mean(axis=1).var(ddof=1)
    var_plus = (L - 1) / L * W + B / L
    if W <= 0:
        return np.inf if var_plus > 0 else 1.0
    return float(np.sqrt(var_plus / W))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Autocovariance (biased normalization) of one chain, via FFT."""
    n = x.shape[0]
    xc = x - x.mean()
    size = 1
    while size < 2 * n:
        size <<= 1
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real / n
    return acov


def ess(chains: np.ndarray) -> float:
    """Effective sample size from combined split-chain autocorrelations.

    Uses the initial monotone positive-pair-sum truncation of the lag sums.
    """
    s = _split_chains(chains)
    m, L = s.shape
    if L < 4:
        raise ValueError("need at least 4 draws per chain")
    W = s.var(axis=1, ddof=1).mean()
    B = L * s.mean(axis=1).var(ddof=1)
    var_plus = (L - 1) / L * W + B / L
    if var_plus <= 0:
        return float(m * L)
    acov = np.mean([_autocov(s[c]) for c in range(m)], axis=0)
    rho = 1.0 - (W - acov) / var_plus
    rho[0] = 1.0

    # Geyer pairing: keep pair sums while positive, force nonincreasing.
    max_pairs = (L - 1) // 2
    tau = 0.0
    prev = np.inf
    for k in range(max_pairs):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += pair
    tau = max(2.0 * tau - 1.0, 1e-12)
    return float(min(m * L / tau, m * L))


def rhat_ess(draws: PosteriorDraws, parameter: str) -> tuple[float, float]:
    """R-hat and effective sample size for one stored parameter."""
    chains = draws.parameter(parameter)
    if chains.shape[0] < 2 or chains.shape[1] < 100:
        raise ValueError("diagnostics need at least 2 chains of 100 draws")
    return split_rhat(chains), ess(chains)


def _stars(lo: dict, hi: dict) -> np.ndarray:
    out = np.zeros(len(lo[_LEVELS[0]]), dtype=np.int64)
    for stars, level in ((1, 0.90), (2, 0.95), (3, 0.99)):
        excl = (lo[level] > 0) | (hi[level] < 0)
        out[excl] = stars
    return out


@dataclass(frozen=True)
class SummaryTable:
    """Per-parameter posterior summaries plus convergence diagnostics."""

    names: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    ci_lo: dict
    ci_hi: dict
    rhat: np.ndarray
    ess: np.ndarray
    stars: np.ndarray

    def row(self, name: str) -> dict:
        j = self.names.index(name)
        return {
            "name": name,
            "mean": self.mean[j],
            "sd": self.sd[j],
            **{f"ci{int(100 * lv)}": (self.ci_lo[lv][j], self.ci_hi[lv][j]) for lv in _LEVELS},
            "rhat": self.rhat[j],
            "ess": self.ess[j],
            "stars": int(self.stars[j]),
        }

    def to_csv(self) -> str:
        header = ["parameter", "mean", "sd"]
        for lv in _LEVELS:
            header += [f"lo{int(100 * lv)}", f"hi{int(100 * lv)}"]
        header += ["rhat", "ess", "stars"]
        lines = [",".join(header)]
        for j, name in enumerate(self.names):
            cells = [name, repr(float(self.mean[j])), repr(float(self.sd[j]))]
            for lv in _LEVELS:
                cells += [repr(float(self.ci_lo[lv][j])), repr(float(self.ci_hi[lv][j]))]
            cells += [repr(float(self.rhat[j])), repr(float(self.ess[j])), str(int(self.stars[j]))]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(n) for n in self.names) + 2
        head = (
            f"{'parameter':<{width}}{'mean':>10}{'sd':>10}"
            f"{'5%':>10}{'95%':>10}{'rhat':>8}{'ess':>10}  "
        )
        lines = [head.rstrip()]
        for j, name in enumerate(self.names):
            mark = "*" * int(self.stars[j])
            lines.append(
                f"{name:<{width}}{self.mean[j]:>10.3f}{self.sd[j]:>10.3f}"
                f"{self.ci_lo[0.90][j]:>10.3f}{self.ci_hi[0.90][j]:>10.3f}"
                f"{self.rhat[j]:>8.3f}{self.ess[j]:>10.1f}  {mark}"
            )
        return "\n".join(lines) + "\n"


def summarize(draws: PosteriorDraws) -> SummaryTable:
    """Posterior means, SDs, central credible intervals, R-hat and ESS.

    Stars mark parameters whose 90/95/99% interval excludes zero.
    """
    if draws.n_draws == 0:
        raise ValueError("no draws to summarize")
    flat = draws.stacked()
    mean = flat.mean(axis=0)
    sd = flat.std(axis=0, ddof=1) if flat.shape[0] > 1 else np.zeros(flat.shape[1])
    ci_lo, ci_hi = {}, {}
    for lv in _LEVELS:
        alpha = (1 - lv) / 2
        ci_lo[lv] = np.quantile(flat, alpha, axis=0)
        ci_hi[lv] = np.quantile(flat, 1 - alpha, axis=0)
    can_diag = draws.n_chains >= 2 and draws.n_draws >= 100
    rhat = np.full(flat.shape[1], np.nan)
    ess_v = np.full(flat.shape[1], np.nan)
    if can_diag:
        for j, name in enumerate(draws.names):
            chains = draws.draws[:, :, j]
            rhat[j] = split_rhat(chains)
            ess_v[j] = ess(chains)
    return SummaryTable(
        names=draws.names,
        mean=mean,
        sd=sd,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        rhat=rhat,
        ess=ess_v,
        stars=_stars(ci_lo, ci_hi),
    )


def marginals_from_cells(cells) -> tuple[float, float]:
    """Marginal class-1 probabilities by cell addition, cells (00,01,10,11)."""
    cells = np.asarray(cells, dtype=np.float64)
    return float(cells[2] + cells[3]), float(cells[1] + cells[3])


def odds_ratio_from_cells(cells) -> float:
    """Odds ratio between the two class indicators from averaged cells."""
    cells = np.asarray(cells, dtype=np.float64)
    return float((cells[0] * cells[3]) / (cells[1] * cells[2]))


@dataclass(frozen=True)
class Setting:
    """One covariate setting: ``column is None`` keeps all sample values."""

    label: str
    column: int | str | None = None
    value: float = 0.0


def _resolve_column(data: Dataset, column) -> int:
    if isinstance(column, str):
        names = data.covariate_names()
        if column not in names:
            raise DataError(f"unknown covariate column {column!r}")
        return names.index(column)
    col = int(column)
    if not 0 <= col < data.q:
        raise DataError(f"covariate column {col} out of range")
    return col


@dataclass(frozen=True)
class PiRow:
    label: str
    cells: np.ndarray  # averaged (p00, p01, p10, p11)
    odds_ratio: float
    p_G: float
    p_R: float
    or_draw_mean: float
    or_draw_sd: float
    contrast_G: tuple[float, float] | None = None  # (mean, sd) vs group baseline
    contrast_R: tuple[float, float] | None = None
    contrast_stars_G: int = 0
    contrast_stars_R: int = 0


@dataclass(frozen=True)
class PiTable:
    """Fitted class-pair probabilities averaged over dyads and draws."""

    rows: tuple[PiRow, ...]

    def to_csv(self) -> str:
        header = (
            "setting,p00,p01,p10,p11,odds_ratio,pG,pR,"
            "diff_pG,diff_pG_sd,diff_pR,diff_pR_sd"
        )
        lines = [header]
        for r in self.rows:
            dg = ("", "") if r.contrast_G is None else (repr(r.contrast_G[0]), repr(r.contrast_G[1]))
            dr = ("", "") if r.contrast_R is None else (repr(r.contrast_R[0]), repr(r.contrast_R[1]))
            lines.append(
                ",".join(
                    [r.label]
                    + [repr(float(c)) for c in r.cells]
                    + [repr(float(r.odds_ratio)), repr(float(r.p_G)), repr(float(r.p_R))]
                    + [dg[0], dg[1], dr[0], dr[1]]
                )
            )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(r.label) for r in self.rows) + 2
        lines = [
            f"{'setting':<{width}}{'(0,0)':>7}{'(0,1)':>7}{'(1,0)':>7}{'(1,1)':>7}"
            f"{'OR':>8}{'p(G=1)':>8}{'p(R=1)':>8}  differences"
        ]
        for r in self.rows:
            diff = ""
            if r.contrast_G is not None:
                sg = "*" * r.contrast_stars_G
                sr = "*" * r.contrast_stars_R
                diff = (
                    f"dG={r.contrast_G[0]:+.3f} ({r.contrast_G[1]:.3f}){sg}  "
                    f"dR={r.contrast_R[0]:+.3f} ({r.contrast_R[1]:.3f}){sr}"
                )
            c = r.cells
            lines.append(
                f"{r.label:<{width}}{c[0]:>7.3f}{c[1]:>7.3f}{c[2]:>7.3f}{c[3]:>7.3f}"
                f"{r.odds_ratio:>8.2f}{r.p_G:>8.3f}{r.p_R:>8.3f}  {diff}"
            )
        return "\n".join(lines) + "\n"


def _setting_cells(gammas: np.ndarray, X: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Per-draw class-cell probabilities averaged over dyads: (n_draws, 4)."""
    n_draws = gammas.shape[0]
    out = np.empty((n_draws, 4))
    for start in range(0, n_draws, chunk):
        g = gammas[start : start + chunk]  # (c, 3, q)
        lin = np.einsum("ncq,iq->nic", g, X)  # (c, n, 3)
        lin = np.concatenate([np.zeros(lin.shape[:2] + (1,)), lin], axis=2)
        lin -= lin.max(axis=2, keepdims=True)
        p = np.exp(lin)
        p /= p.sum(axis=2, keepdims=True)
        out[start : start + chunk] = p.mean(axis=1)
    return out


def _diff_stars(diffs: np.ndarray) -> int:
    stars = 0
    for s, lv in ((1, 0.90), (2, 0.95), (3, 0.99)):
        alpha = (1 - lv) / 2
        lo, hi = np.quantile(diffs, [alpha, 1 - alpha])
        if lo > 0 or hi < 0:
            stars = s
    return stars


def pi_table(
    draws: PosteriorDraws,
    data: Dataset,
    settings: list[Setting],
    max_draws: int | None = None,
) -> PiTable:
    """Class-pair probability table over covariate settings.

    For each setting the named column is fixed at the given value for every
    dyad (other covariates keep their sample values); cells are averaged over
    dyads and draws, the odds ratio is formed from those averages, and
    marginals are cell sums. Within each group of settings that override the
    same column, contrasts are taken per draw against the first setting of
    the group and then summarized.
    """
    gammas = draws.gamma_draws()
    if max_draws is not None and gammas.shape[0] > max_draws:
        idx = np.linspace(0, gammas.shape[0] - 1, max_draws).astype(np.int64)
        gammas = gammas[idx]
    per_draw = {}
    rows = []
    group_first: dict[object, int] = {}
    for k, s in enumerate(settings):
        X = np.array(data.X, copy=True)
        key = None
        if s.column is not None:
            col = _resolve_column(data, s.column)
            X[:, col] = s.value
            key = col
        cells_d = _setting_cells(gammas, X)  # (draws, 4)
        per_draw[k] = cells_d
        cells = cells_d.mean(axis=0)
        odds = odds_ratio_from_cells(cells)
        or_d = (cells_d[:, 0] * cells_d[:, 3]) / (cells_d[:, 1] * cells_d[:, 2])
        pG, pR = marginals_from_cells(cells)
        contrast_G = contrast_R = None
        stars_G = stars_R = 0
        if key is not None:
            if key not in group_first:
                group_first[key] = k
            else:
                base = per_draw[group_first[key]]
                dG = (cells_d[:, 2] + cells_d[:, 3]) - (base[:, 2] + base[:, 3])
                dR = (cells_d[:, 1] + cells_d[:, 3]) - (base[:, 1] + base[:, 3])
                contrast_G = (float(dG.mean()), float(dG.std(ddof=1)))
                contrast_R = (float(dR.mean()), float(dR.std(ddof=1)))
                stars_G = _diff_stars(dG)
                stars_R = _diff_stars(dR)
        rows.append(
            PiRow(
                label=s.label,
                cells=cells,
                odds_ratio=float(odds),
                p_G=float(pG),
                p_R=float(pR),
                or_draw_mean=float(or_d.mean()),
                or_draw_sd=float(or_d.std(ddof=1)) if or_d.size > 1 else 0.0,
                contrast_G=contrast_G,
                contrast_R=contrast_R,
                contrast_stars_G=stars_G,
                contrast_stars_R=stars_R,
            )
        )
    return PiTable(rows=tuple(rows))


def save_trace_plots(draws: PosteriorDraws, path: str, params=None):
    """Write a trace + density grid for the selected parameters (PNG)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(params) if params else list(draws.names)
    fig, axes = plt.subplots(len(names), 2, figsize=(9, 2.2 * len(names)), squeeze=False)
    for row, name in enumerate(names):
        chains = draws.parameter(name)
        for c in range(chains.shape[0]):
            axes[row, 0].plot(chains[c], lw=0.4)
            axes[row, 1].hist(chains[c], bins=60, histtype="step", density=True)
        axes[row, 0].set_ylabel(name, fontsize=8)
    axes[-1, 0].set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
