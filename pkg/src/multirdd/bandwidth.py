"""Data-driven first-step bandwidths.

The base rule is the Imbens-Kalyanaraman plug-in bandwidth for a sharp
discontinuity with local-linear fits and the triangular kernel, applied
cutoff by cutoff on the data between the neighbouring cutoffs.  It can be
followed by a rate adjustment ``h * n**(0.2 - lambda1)`` and an optional
shrink factor ``n**(-1/20)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import BandwidthPlan, Sample
from .errors import InsufficientData, RDDValidationError

# constants of the plug-in rule for the triangular kernel
IK_CONSTANTS = {
    "pilot": 1.84,
    "second_derivative_pilot": 3.56,
    "regularization": 720.0,
    "kernel": 3.4375,
    "m3_floor": 0.01,
    "min_side": 10,
}


def _ols(X, y):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef


def ik_bandwidth(y, x, c, kernel=None, j=1, details=False):
    """Plug-in MSE-optimal bandwidth for a single discontinuity at ``c``.

    Parameters
    ----------
    y, x : array_like
        Observations around the cutoff, typically restricted to the
        segment between the neighbouring cutoffs.
    c : float
        Cutoff.
    j : int
        Cutoff index used in error messages.
    details : bool
        Also return a dict with every intermediate quantity.

    Raises
    ------
    InsufficientData
        Fewer than 10 observations on a side, or a degenerate pilot fit.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    C = IK_CONSTANTS
    left = x < c
    right = ~left
    nl, nr = int(left.sum()), int(right.sum())
    if min(nl, nr) < C["min_side"]:
        raise InsufficientData(j, f"({nl} left, {nr} right; need {C['min_side']} per side)")
    N = x.size
    sx = np.std(x, ddof=1)
    h1 = C["pilot"] * sx * N ** -0.2
    wl = left & (x >= c - h1)
    wr = right & (x <= c + h1)
    n_wl, n_wr = int(wl.sum()), int(wr.sum())
    if min(n_wl, n_wr) < 2:
        raise InsufficientData(j, "(pilot window has fewer than 2 points on a side)")
    f = (n_wl + n_wr) / (2.0 * N * h1)
    var_l = np.var(y[wl], ddof=1)
    var_r = np.var(y[wr], ddof=1)

    # third derivative from a global cubic with a jump, between the side medians
    med_l = np.median(x[left])
    med_r = np.median(x[right])
    mid = (x >= med_l) & (x <= med_r)
    z = x[mid] - c
    X3 = np.column_stack([np.ones(z.size), (z >= 0).astype(float), z, z ** 2, z ** 3])
    if np.linalg.matrix_rank(X3) < 5:
        raise InsufficientData(j, "(global cubic pilot is rank deficient)")
    m3 = 6.0 * _ols(X3, y[mid])[4]
    m3sq = max(m3 * m3, C["m3_floor"])

    h2l = C["second_derivative_pilot"] * (var_l / (f * m3sq)) ** (1 / 7) * nl ** (-1 / 7)
    h2r = C["second_derivative_pilot"] * (var_r / (f * m3sq)) ** (1 / 7) * nr ** (-1 / 7)

    def curvature(mask):
        zz = x[mask] - c
        if np.unique(zz).size < 3:
            raise InsufficientData(j, "(second-derivative pilot window too small)")
        Xq = np.column_stack([np.ones(zz.size), zz, zz ** 2])
        return 2.0 * _ols(Xq, y[mask])[2], int(mask.sum())

    m2l, n2l = curvature(left & (x >= c - h2l))
    m2r, n2r = curvature(right & (x <= c + h2r))
    rl = C["regularization"] * var_l / (n2l * h2l ** 4)
    rr = C["regularization"] * var_r / (n2r * h2r ** 4)
    denom = f * ((m2r - m2l) ** 2 + rl + rr)
    h = C["kernel"] * ((var_l + var_r) / denom) ** 0.2 * N ** -0.2
    if not (np.isfinite(h) and h > 0):
        raise InsufficientData(j, "(non-finite plug-in bandwidth)")
    if not details:
        return float(h)
    audit = {
        "h": float(h), "n": N, "n_left": nl, "n_right": nr,
        "pilot_h": float(h1), "density": float(f), "var_left": float(var_l), "var_right": float(var_r),
        "m3": float(m3), "h2_left": float(h2l), "h2_right": float(h2r),
        "m2_left": float(m2l), "m2_right": float(m2r), "r_left": float(rl), "r_right": float(rr),
        "constants": dict(C),
    }
    return float(h), audit


IK_SUBSAMPLES = ("pooled", "full")


def ik_bandwidths(sample, schedule, kernel=None, details=False, subsample="pooled"):
    """Plug-in bandwidth at every cutoff.

    ``subsample="pooled"`` uses the observations between the neighbouring
    cutoffs ``[c_{j-1}, c_{j+1})``; ``"full"`` uses the whole sample for
    every cutoff.
    """
    if subsample not in IK_SUBSAMPLES:
        raise RDDValidationError(f"unknown IK subsample {subsample!r}")
    edges = np.concatenate([[-np.inf], schedule.c, [np.inf]])
    hs, audits = [], []
    for j in range(schedule.K):
        if subsample == "pooled":
            m = (sample.x >= edges[j]) & (sample.x < edges[j + 2])
        else:
            m = np.ones(sample.n, dtype=bool)
        h, a = ik_bandwidth(sample.y[m], sample.x[m], schedule.c[j], kernel, j + 1, details=True)
        hs.append(h)
        audits.append(a)
    hs = np.array(hs)
    return (hs, audits) if details else hs


def rate_adjust(h_ik, n, lambda1=0.5):
    """Multiply bandwidths by ``n**(0.2 - lambda1)``."""
    if lambda1 < 0.2:
        warnings.warn(f"lambda1={lambda1} < 0.2 enlarges the bandwidths", UserWarning, stacklevel=2)
    return np.asarray(h_ik, dtype=float) * float(n) ** (0.2 - lambda1)


def side_floor(x, c, m):
    """Smallest bandwidths whose windows hold ``m`` observations on each side of every cutoff."""
    xs = np.sort(np.asarray(x, dtype=float))
    c = np.asarray(c, dtype=float)
    out = np.zeros(c.size)
    r0 = np.searchsorted(xs, c, side="left")
    for j in range(c.size):
        right = xs[r0[j]:r0[j] + m]
        left = xs[max(0, r0[j] - m):r0[j]]
        d = 0.0
        if right.size:
            d = max(d, right[-1] - c[j])
        if left.size:
            d = max(d, c[j] - left[0])
        # windows are open at the far end
        out[j] = np.nextafter(d, np.inf) * (1 + 1e-12)
    return out


def shrink(h, n):
    """Robustness shrinkage ``h * n**(-1/20)``."""
    return np.asarray(h, dtype=float) * float(n) ** (-1 / 20)


@dataclass(frozen=True)
class BandwidthRule:
    """How first-step bandwidths are produced.

    ``base="ik"`` runs the plug-in rule, then ``rate_adjust`` with
    ``lambda1`` unless that is ``None``; ``base="manual"`` takes ``manual``.
    ``shrink`` applies the ``n**(-1/20)`` factor last.  ``subsample``
    selects the data handed to the plug-in rule (see :func:`ik_bandwidths`).
    ``min_side_obs`` widens data-driven windows that would hold fewer
    observations on a side; ``None`` disables the floor.
    """

    base: str = "ik"
    lambda1: float | None = 0.5
    shrink: bool = False
    manual: tuple | None = None
    subsample: str = "pooled"
    min_side_obs: int | None = 10

    def __post_init__(self):
        if self.base not in ("ik", "manual"):
            raise RDDValidationError(f"unknown bandwidth base {self.base!r}")
        if self.base == "manual" and self.manual is None:
            raise RDDValidationError("manual bandwidth rule needs explicit bandwidths")
        if self.lambda1 is not None and not (0 < self.lambda1 < 1):
            raise RDDValidationError("lambda1 must lie in (0, 1)")
        if self.subsample not in IK_SUBSAMPLES:
            raise RDDValidationError(f"unknown IK subsample {self.subsample!r}")

    def bandwidths(self, sample, schedule, details=False):
        audit = {}
        if self.base == "ik":
            h, au = ik_bandwidths(sample, schedule, details=True, subsample=self.subsample)
            audit["ik"] = au
            audit["h_ik"] = h.tolist()
            if self.lambda1 is not None:
                h = rate_adjust(h, sample.n, self.lambda1)
            if self.shrink:
                h = shrink(h, sample.n)
            if self.min_side_obs:
                floor = side_floor(sample.x, schedule.c, int(self.min_side_obs))
                audit["floored"] = (h < floor).tolist()
                h = np.maximum(h, floor)
        else:
            h = np.asarray(self.manual, dtype=float)
            if h.size == 1:
                h = np.full(schedule.K, float(h.ravel()[0]))
            if self.shrink:
                h = shrink(h, sample.n)
        if np.any(~(h > 0)):
            raise RDDValidationError("bandwidth rule produced a non-positive bandwidth")
        return (h, audit) if details else h

    def plan(self, sample, schedule, rho1=1, rho2=1, h2=None, clip=True):
        h, audit = self.bandwidths(sample, schedule, details=True)
        return BandwidthPlan(tuple(h), h2, rho1, rho2, clip), audit
