"""Data model, kernels, schedule validation and nearest-neighbor residuals."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    EmptyWindow,
    RDDValidationError,
    TooFewNeighbors,
    UnorderedCutoffs,
    WindowCrossesCutoff,
)
from .quadrature import integrate_box

PROFILES = ("full", "cutoff-only", "dose-change")
PROFILE_DIMS = {"full": 3, "cutoff-only": 1, "dose-change": 2}


@dataclass(frozen=True)
class Sample:
    """Observed outcomes ``y``, forcing variable ``x`` and optional doses ``d``."""

    y: np.ndarray
    x: np.ndarray
    d: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float).ravel()
        if y.shape != x.shape:
            raise RDDValidationError(f"y and x lengths differ ({y.size} vs {x.size})")
        if x.size < 1:
            raise RDDValidationError("empty sample")
        if not np.all(np.isfinite(x)):
            raise RDDValidationError("x contains non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        if self.d is not None:
            d = np.asarray(self.d, dtype=float).ravel()
            if d.shape != x.shape:
                raise RDDValidationError(f"d length {d.size} differs from x length {x.size}")
            object.__setattr__(self, "d", d)

    @property
    def n(self):
        return self.x.size

    def order(self):
        """Stable sort permutation by ``x``."""
        return np.argsort(self.x, kind="stable")

    def sorted(self):
        o = self.order()
        return Sample(self.y[o], self.x[o], None if self.d is None else self.d[o])


@dataclass(frozen=True)
class CutoffSchedule:
    """Cutoffs ``c_j`` with the doses just below (``d_lo``) and above (``d_hi``)."""

    cutoffs: tuple
    domain: tuple

    def __post_init__(self):
        cut = tuple(tuple(float(v) for v in t) for t in self.cutoffs)
        if len(cut) < 1:
            raise RDDValidationError("a schedule needs at least one cutoff")
        if any(len(t) != 3 for t in cut):
            raise RDDValidationError("each cutoff must be a (c, d_lo, d_hi) triple")
        dom = tuple(float(v) for v in self.domain)
        object.__setattr__(self, "cutoffs", cut)
        object.__setattr__(self, "domain", dom)
        c = np.array([t[0] for t in cut])
        if np.any(np.diff(c) <= 0):
            raise UnorderedCutoffs("cutoffs must be strictly increasing")
        if not (dom[0] < c[0] and c[-1] < dom[1]):
            raise RDDValidationError(
                f"cutoffs must lie strictly inside the domain {dom}"
            )

    @classmethod
    def from_doses(cls, c, doses, domain):
        """Build from cutoffs and the ``K + 1`` segment doses ``d_0..d_K``."""
        c = [float(v) for v in c]
        doses = [float(v) for v in doses]
        if len(doses) != len(c) + 1:
            raise RDDValidationError("need exactly one more dose than cutoffs")
        return cls(tuple((c[j], doses[j], doses[j + 1]) for j in range(len(c))), domain)

    @property
    def K(self):
        return len(self.cutoffs)

    @property
    def c(self):
        return np.array([t[0] for t in self.cutoffs])

    @property
    def d_lo(self):
        return np.array([t[1] for t in self.cutoffs])

    @property
    def d_hi(self):
        return np.array([t[2] for t in self.cutoffs])

    @property
    def doses(self):
        """Segment doses ``d_0..d_K`` (``d_lo`` of each cutoff, then the last ``d_hi``)."""
        return np.append(self.d_lo, self.d_hi[-1])

    def segment(self, x):
        """Segment index in ``0..K``: number of cutoffs at or below ``x``."""
        return np.searchsorted(self.c, np.asarray(x, dtype=float), side="right")

    def treatment(self, x):
        """Sharp treatment schedule ``D(x)``."""
        return self.doses[self.segment(x)]

    def points(self, profile):
        """Cutoff coordinates in the given dimension profile, shape ``(K, dim)``."""
        if profile == "full":
            return np.column_stack([self.c, self.d_lo, self.d_hi])
        if profile == "cutoff-only":
            return self.c[:, None]
        if profile == "dose-change":
            return np.column_stack([self.c, self.d_hi - self.d_lo])
        raise RDDValidationError(f"unknown profile {profile!r}")


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "triangular"

    def __post_init__(self):
        if self.kind not in ("triangular", "uniform"):
            raise RDDValidationError(f"unknown kernel {self.kind!r}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) <= 1.0
        if self.kind == "triangular":
            return np.where(inside, 1.0 - np.abs(u), 0.0)
        return np.where(inside, 0.5, 0.0)

    @property
    def kinks(self):
        """Points in ``[-1, 1]`` where the kernel is not smooth."""
        return (-1.0, 0.0, 1.0) if self.kind == "triangular" else (-1.0, 1.0)


TRIANGULAR = KernelSpec("triangular")
UNIFORM = KernelSpec("uniform")


def as_kernel(k):
    if isinstance(k, KernelSpec):
        return k
    if k is None:
        return TRIANGULAR
    return KernelSpec(str(k))


def kernel_eval(k, u):
    """Evaluate kernel ``k`` at ``u``; returns a float for scalar input."""
    out = as_kernel(k)(u)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class BandwidthPlan:
    """First-step bandwidths per cutoff, second-step bandwidth and orders."""

    h1: tuple
    h2: float | None = None
    rho1: int = 1
    rho2: int = 1
    clip: bool = True

    def __post_init__(self):
        h1 = tuple(float(h) for h in np.atleast_1d(self.h1))
        if any(not (h > 0) for h in h1):
            raise RDDValidationError("first-step bandwidths must be positive")
        object.__setattr__(self, "h1", h1)
        if self.h2 is not None and not (float(self.h2) > 0):
            raise RDDValidationError("h2 must be positive")
        if self.rho1 < 0 or self.rho2 < 0:
            raise RDDValidationError("polynomial orders must be non-negative")

    @classmethod
    def uniform(cls, h, K, **kw):
        return cls(tuple([float(h)] * K), **kw)

    def replace(self, **kw):
        d = dict(h1=self.h1, h2=self.h2, rho1=self.rho1, rho2=self.rho2, clip=self.clip)
        d.update(kw)
        return BandwidthPlan(**d)

    def h1_for(self, K):
        if len(self.h1) == 1 and K > 1:
            return np.full(K, self.h1[0])
        if len(self.h1) != K:
            raise RDDValidationError(f"expected {K} first-step bandwidths, got {len(self.h1)}")
        return np.array(self.h1)


@dataclass(frozen=True)
class CounterfactualSpec:
    """Counterfactual distribution over cutoff-dose space.

    A discrete spec carries one weight per existing cutoff.  A continuous
    spec carries a density over the coordinates of ``profile``; each entry
    of ``support`` is either an interval ``(lo, hi)`` that is integrated
    over, or a single number that pins the coordinate (a point mass).
    """

    kind: str
    weights: tuple | None = None
    profile: str = "cutoff-only"
    support: tuple = ()
    density: Callable | None = None
    check_tol: float = 1e-6
    label: str = ""

    def __post_init__(self):
        if self.kind == "discrete":
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or w.size < 1:
                raise RDDValidationError("discrete weights must be a non-empty vector")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise RDDValidationError("discrete weights must be non-negative and sum to 1")
            object.__setattr__(self, "weights", tuple(w.tolist()))
            return
        if self.kind != "continuous":
            raise RDDValidationError(f"unknown counterfactual kind {self.kind!r}")
        if self.profile not in PROFILES:
            raise RDDValidationError(f"unknown profile {self.profile!r}")
        sup = []
        for s in self.support:
            if np.ndim(s) == 0:
                sup.append(float(s))
            else:
                lo, hi = (float(v) for v in s)
                if not hi > lo:
                    raise RDDValidationError(f"empty support interval {s}")
                sup.append((lo, hi))
        if len(sup) != PROFILE_DIMS[self.profile]:
            raise RDDValidationError(
                f"profile {self.profile!r} needs {PROFILE_DIMS[self.profile]} support entries"
            )
        object.__setattr__(self, "support", tuple(sup))
        if self.density is None:
            vol = np.prod([hi - lo for lo, hi in self.box])
            object.__setattr__(self, "density", _UniformDensity(1.0 / vol))
        mass = self.total_mass()
        if abs(mass - 1.0) > self.check_tol:
            raise RDDValidationError(f"counterfactual density integrates to {mass:.8g}, not 1")

    @classmethod
    def discrete(cls, weights):
        return cls("discrete", weights=tuple(weights))

    @classmethod
    def uniform(cls, profile, support, **kw):
        return cls("continuous", profile=profile, support=tuple(support), **kw)

    @property
    def integrated(self):
        """Indices of the integrated (non-fixed) coordinates."""
        return [i for i, s in enumerate(self.support) if isinstance(s, tuple)]

    @property
    def box(self):
        return [self.support[i] for i in self.integrated]

    def full_points(self, nodes):
        """Embed integration nodes (over integrated coordinates) into full points."""
        nodes = np.atleast_2d(nodes)
        out = np.empty((nodes.shape[0], len(self.support)))
        it = iter(range(nodes.shape[1]))
        for i, s in enumerate(self.support):
            out[:, i] = s if not isinstance(s, tuple) else nodes[:, next(it)]
        return out

    def pdf(self, nodes):
        return np.asarray(self.density(self.full_points(nodes)), dtype=float)

    def total_mass(self, m=None):
        box = self.box
        if not box:
            return 1.0
        if m is None:
            m = 64 if len(box) == 1 else 24
        return integrate_box(self.pdf, box, m)


@dataclass(frozen=True)
class _UniformDensity:
    value: float

    def __call__(self, pts):
        return np.full(np.atleast_2d(pts).shape[0], self.value)


@dataclass(frozen=True)
class ValidationReport:
    h1: np.ndarray
    clipped: np.ndarray
    n_left: np.ndarray
    n_right: np.ndarray
    distinct_left: np.ndarray
    distinct_right: np.ndarray
    required: int

    @property
    def any_clipped(self):
        return bool(np.any(self.clipped))

    def to_dict(self):
        return {
            "h1": self.h1.tolist(),
            "clipped": self.clipped.tolist(),
            "n_left": self.n_left.tolist(),
            "n_right": self.n_right.tolist(),
            "distinct_left": self.distinct_left.tolist(),
            "distinct_right": self.distinct_right.tolist(),
            "required": self.required,
        }


def effective_bandwidths(schedule, h1, clip=True):
    """Apply the window constraint; returns (bandwidths, clipped mask)."""
    c = schedule.c
    h = np.array(h1, dtype=float)
    limit = np.full(c.size, np.inf)
    gaps = np.diff(c)
    limit[:-1] = np.minimum(limit[:-1], gaps)
    limit[1:] = np.minimum(limit[1:], gaps)
    over = h > limit
    if np.any(over) and not clip:
        j = int(np.argmax(over))
        raise WindowCrossesCutoff(j + 1, h[j], limit[j])
    return np.where(over, limit, h), over


def _distinct_in(xs, lo, hi):
    # xs sorted; counts distinct values in [lo, hi)
    seg = xs[lo:hi]
    if seg.size == 0:
        return 0
    return int(1 + np.count_nonzero(np.diff(seg)))


def window_bounds(xs, c, h):
    """Index ranges of the right ``[c, c+h)`` and left ``(c-h, c)`` windows."""
    r0 = np.searchsorted(xs, c, side="left")
    r1 = np.searchsorted(xs, c + h, side="left")
    l0 = np.searchsorted(xs, c - h, side="right")
    l1 = r0
    return (l0, l1), (r0, r1)


def validate_schedule(sample, schedule, plan, rho=None):
    """Check that every one-sided window has enough distinct data.

    Returns a report with the effective (possibly clipped) bandwidths and
    window counts.  Raises :class:`EmptyWindow` naming the first failing
    cutoff (1-based) and side.
    """
    rho = plan.rho1 if rho is None else rho
    h, clipped = effective_bandwidths(schedule, plan.h1_for(schedule.K), plan.clip)
    xs = np.sort(sample.x)
    (l0, l1), (r0, r1) = window_bounds(xs, schedule.c, h)
    required = rho + 2
    dl = np.array([_distinct_in(xs, a, b) for a, b in zip(l0, l1)])
    dr = np.array([_distinct_in(xs, a, b) for a, b in zip(r0, r1)])
    for j in range(schedule.K):
        if dl[j] < required:
            raise EmptyWindow(j + 1, "left", int(dl[j]), required)
        if dr[j] < required:
            raise EmptyWindow(j + 1, "right", int(dr[j]), required)
    return ValidationReport(h, clipped, l1 - l0, r1 - r0, dl, dr, required)


def _nn_vectors(x, Y, schedule, neighbors):
    """Signed scaled matching residuals, rows in the original sample order."""
    n = x.size
    order = np.argsort(x, kind="stable")
    xs = x[order]
    seg = schedule.segment(xs)
    counts = np.bincount(seg, minlength=schedule.K + 1)
    short = np.flatnonzero((counts > 0) & (counts < neighbors + 1))
    if short.size:
        s = int(short[0])
        raise TooFewNeighbors(s, int(counts[s]), neighbors + 1)
    # longest run of tied x values bounds how far past N positions a tie can sit
    if n > 1:
        brk = np.flatnonzero(np.diff(xs) != 0)
        runs = np.diff(np.concatenate([[-1], brk, [n - 1]]))
        run = int(runs.max())
    else:
        run = 1
    width = neighbors + run
    offs = np.concatenate([np.arange(-width, 0), np.arange(1, width + 1)])
    pos = np.arange(n)[:, None] + offs[None, :]
    valid = (pos >= 0) & (pos < n)
    posc = np.clip(pos, 0, n - 1)
    valid &= seg[posc] == seg[:, None]
    dist = np.where(valid, np.abs(xs[posc] - xs[:, None]), np.inf)
    orig = order[posc]
    # smallest distance first, ties to the smaller original index
    o1 = np.argsort(orig, axis=1, kind="stable")
    dist1 = np.take_along_axis(dist, o1, axis=1)
    o2 = np.argsort(dist1, axis=1, kind="stable")
    pick = np.take_along_axis(o1, o2, axis=1)[:, :neighbors]
    nb = np.take_along_axis(posc, pick, axis=1)
    Ys = Y[order]
    resid = Ys - Ys[nb].mean(axis=1)
    resid *= np.sqrt(neighbors / (neighbors + 1.0))
    out = np.empty_like(resid)
    out[order] = resid
    return out


def nn_residual_vectors(sample, schedule, neighbors=3, response=None):
    """Signed residuals ``sqrt(N/(N+1)) (Y_i - mean of N neighbours)``.

    Neighbours are the ``N`` closest ``x`` values within the same
    between-cutoff segment; ties go to the smaller sample index.
    """
    Y = sample.y if response is None else np.asarray(response, dtype=float)
    if Y.shape[0] != sample.n:
        raise RDDValidationError("response length does not match the sample")
    return _nn_vectors(sample.x, Y, schedule, int(neighbors))


def nn_residuals(sample, schedule, neighbors=3, response=None):
    """Squared matching residuals (scalar response) or outer products (matrix response)."""
    r = nn_residual_vectors(sample, schedule, neighbors, response)
    if r.ndim == 1:
        return r * r
    return r[:, :, None] * r[:, None, :]
