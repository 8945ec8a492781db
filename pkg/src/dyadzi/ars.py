"""Derivative-based adaptive rejection sampling for log-concave densities.

Implements the tangent (upper hull) / chord (squeeze) construction of
Gilks & Wild. The envelope is a piecewise-exponential upper bound built from
tangents at evaluated abscissae; rejected proposals are inserted so the hull
tightens as sampling proceeds. Draws are exact for any log-concave target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["LogConcaveTarget", "Envelope", "ArsError", "ars_sample", "bracket_mode"]

CONCAVITY_TOL = 1e-8


class ArsError(RuntimeError):
    """Sampling failure: bad hull, concavity violation, or iteration cap."""


@dataclass(frozen=True)
class LogConcaveTarget:
    """Unnormalized log-density with gradient on an open interval support."""

    log_density: Callable[[float], float]
    log_density_gradient: Callable[[float], float]
    support: tuple[float, float] = (-np.inf, np.inf)

    def __post_init__(self):
        lo, hi = self.support
        if not lo < hi:
            raise ValueError("support must be a nonempty open interval")


class Envelope:
    """Piecewise-exponential upper hull plus chord lower hull.

    Tangents at the sorted abscissae form the upper hull; chords between
    adjacent abscissae form the squeeze. Values are kept relative to an
    offset so segment masses stay in floating range.
    """

    def __init__(self, x, h, dh, support=(-np.inf, np.inf)):
        order = np.argsort(x)
        self.x = np.asarray(x, dtype=np.float64)[order]
        self.h = np.asarray(h, dtype=np.float64)[order]
        self.dh = np.asarray(dh, dtype=np.float64)[order]
        if self.x.size < 2:
            raise ArsError("need at least two initial abscissae")
        if np.any(np.diff(self.x) <= 0):
            raise ArsError("initial abscissae must be distinct")
        self.lo, self.hi = support
        if not np.isfinite(self.lo) and self.dh[0] <= 0:
            raise ArsError("non-integrable hull: leftmost slope must be positive")
        if not np.isfinite(self.hi) and self.dh[-1] >= 0:
            raise ArsError("non-integrable hull: rightmost slope must be negative")
        self.offset = float(np.max(self.h))
        self._rebuild()

    # -- construction ------------------------------------------------------

    def _rebuild(self):
        x, h, dh = self.x, self.h, self.dh
        denom = dh[:-1] - dh[1:]
        # Tangent intersections; nearly parallel tangents fall back to midpoint.
        mid = 0.5 * (x[:-1] + x[1:])
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (h[1:] - h[:-1] - x[1:] * dh[1:] + x[:-1] * dh[:-1]) / denom
        bad = ~np.isfinite(z) | (z < x[:-1]) | (z > x[1:])
        z[bad] = mid[bad]
        self.z = np.concatenate([[self.lo], z, [self.hi]])
        self._log_masses = self._segment_log_masses()

    def _segment_log_masses(self):
        x, h, dh = self.x, self.h - self.offset, self.dh
        zl, zu = self.z[:-1], self.z[1:]
        logm = np.empty_like(x)
        for j in range(x.size):
            s = dh[j]
            if s > 0:
                d = s * (zu[j] - zl[j])
                logm[j] = h[j] + s * (zu[j] - x[j]) - np.log(s) + _log1mexp(d)
            elif s < 0:
                d = -s * (zu[j] - zl[j])
                logm[j] = h[j] + s * (zl[j] - x[j]) - np.log(-s) + _log1mexp(d)
            else:
                width = zu[j] - zl[j]
                if not np.isfinite(width):
                    raise ArsError("non-integrable hull: flat unbounded segment")
                logm[j] = h[j] + np.log(width)
        if not np.all(np.isfinite(logm) | (logm == -np.inf)):
            raise ArsError("invalid envelope segment mass")
        return logm

    # -- evaluation --------------------------------------------------------

    def upper(self, x):
        """Upper hull value(s) at x (absolute scale)."""
        x = np.asarray(x, dtype=np.float64)
        j = np.searchsorted(self.z[1:-1], x)
        return self.h[j] + self.dh[j] * (x - self.x[j])

    def lower(self, x):
        """Chord squeeze at x; -inf outside the abscissa range."""
        x = np.asarray(x, dtype=np.float64)
        out = np.full(x.shape, -np.inf)
        inside = (x >= self.x[0]) & (x <= self.x[-1])
        j = np.clip(np.searchsorted(self.x, x) - 1, 0, self.x.size - 2)
        xl, xu = self.x[j], self.x[j + 1]
        w = np.where(xu > xl, (x - xl) / np.where(xu > xl, xu - xl, 1.0), 0.0)
        chord = (1 - w) * self.h[j] + w * self.h[j + 1]
        return np.where(inside, chord, out)

    # -- sampling ----------------------------------------------------------

    def sample(self, rng: np.random.Generator) -> float:
        logm = self._log_masses
        m = np.max(logm)
        p = np.exp(logm - m)
        p /= p.sum()
        j = int(np.searchsorted(np.cumsum(p), rng.uniform()))
        j = min(j, p.size - 1)
        zl, zu = self.z[j], self.z[j + 1]
        s = self.dh[j]
        v = rng.uniform()
        if s > 0:
            return float(zu + np.log(v + (1 - v) * np.exp(s * (zl - zu))) / s)
        if s < 0:
            return float(zl + np.log((1 - v) + v * np.exp(s * (zu - zl))) / s)
        return float(zl + v * (zu - zl))

    def insert(self, x: float, h: float, dh: float):
        j = int(np.searchsorted(self.x, x))
        if j > 0 and x - self.x[j - 1] < 1e-12:
            return
        if j < self.x.size and self.x[j] - x < 1e-12:
            return
        self.x = np.insert(self.x, j, x)
        self.h = np.insert(self.h, j, h)
        self.dh = np.insert(self.dh, j, dh)
        self.offset = max(self.offset, float(h))
        self._rebuild()


def _log1mexp(d):
    """log(1 - exp(-d)) for d > 0, accurate over the whole range."""
    if d <= 0:
        return -np.inf
    if d < 0.693:
        return np.log(-np.expm1(-d))
    return np.log1p(-np.exp(-d))


def ars_sample(
    target: LogConcaveTarget,
    init: np.ndarray,
    rng: np.random.Generator,
    max_iter: int = 500,
) -> float:
    """Draw one exact sample from a log-concave target.

    ``init`` must bracket enough of the density for an integrable hull: on an
    unbounded side, the nearest abscissa needs the correct slope sign. The
    envelope adapts as proposals are rejected; a squeeze test avoids density
    evaluations where the hull is already tight.
    """
    init = np.asarray(init, dtype=np.float64)
    lo, hi = target.support
    if np.any(init <= lo) or np.any(init >= hi):
        raise ArsError("initial abscissae outside support")
    h = np.array([target.log_density(v) for v in init])
    dh = np.array([target.log_density_gradient(v) for v in init])
    env = Envelope(init, h, dh, support=target.support)

    for _ in range(max_iter):
        x = env.sample(rng)
        if not lo < x < hi or not np.isfinite(x):
            raise ArsError("hull sample outside support")
        u = env.upper(x)
        w = rng.uniform()
        logw = np.log(w) if w > 0 else -np.inf
        if logw <= env.lower(x) - u:
            return float(x)
        hx = target.log_density(x)
        if hx > u + CONCAVITY_TOL:
            raise ArsError(
                f"log-concavity violation: target {hx:.6g} above hull {u:.6g} at x={x:.6g}"
            )
        if logw <= hx - u:
            return float(x)
        env.insert(x, hx, target.log_density_gradient(x))
    raise ArsError(f"no acceptance within max_iter={max_iter}")


def bracket_mode(
    target: LogConcaveTarget,
    start: float,
    scale: float,
    max_steps: int = 50,
) -> np.ndarray:
    """Initial abscissae around the target mode.

    Runs damped Newton steps from ``start`` (second derivative by finite
    differences of the gradient), then returns the mode offset by one and two
    multiples of ``scale``, pushed outward as needed until the outermost
    points have the slope signs required for an integrable hull.
    """
    lo, hi = target.support
    grad = target.log_density_gradient
    x = float(start)
    eps = 1e-6 * max(scale, 1.0)
    for _ in range(max_steps):
        g = grad(x)
        if abs(g) < 1e-10:
            break
        curv = (grad(x + eps) - grad(x - eps)) / (2 * eps)
        if curv >= 0:
            step = np.sign(g) * scale
        else:
            step = -g / curv
        step = np.clip(step, -10 * scale, 10 * scale)
        nxt = x + step
        if not lo < nxt < hi:
            nxt = 0.5 * (x + (hi if step > 0 else lo)) if np.isfinite(hi if step > 0 else lo) else x + np.sign(step) * scale
        if abs(nxt - x) < 1e-12 * max(1.0, abs(x)):
            x = nxt
            break
        x = nxt
    pts = np.array([x - 2 * scale, x - scale, x + scale, x + 2 * scale])
    if np.isfinite(lo):
        pts = np.where(pts <= lo, lo + (x - lo) * np.array([0.25, 0.5, 1.0, 1.0]), pts)
    if np.isfinite(hi):
        pts = np.where(pts >= hi, hi - (hi - x) * np.array([1.0, 1.0, 0.5, 0.25]), pts)
    pts = np.unique(pts)
    # Push the end points outward until slopes make the hull integrable.
    if not np.isfinite(lo):
        left = pts[0]
        width = 2 * scale
        while grad(left) <= 0 and width < 1e8 * scale:
            left -= width
            width *= 2
        pts[0] = left
    if not np.isfinite(hi):
        right = pts[-1]
        width = 2 * scale
        while grad(right) >= 0 and width < 1e8 * scale:
            right += width
            width *= 2
        pts[-1] = right
    return np.sort(pts)
