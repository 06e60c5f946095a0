"""Correction weights for continuous counterfactuals and estimated discrete weights.

The second step regresses the jump estimates on a polynomial in cutoff-dose
space, locally around each point ``c`` of the counterfactual support.  The
fitted intercept is linear in the jumps, so integrating it against the
counterfactual density gives one fixed weight per cutoff.  These weights do
not depend on the outcomes and are computed once per design.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import PROFILE_DIMS, CounterfactualSpec, Sample, as_kernel
from .errors import (
    QuadratureDivergence,
    RDDValidationError,
    SingularLocalDesign,
    ZeroDensityEverywhere,
)
from .quadrature import QuadratureConfig, panel_breaks, panel_rule, tensor_rule

RCOND_MIN = 1e-12
_ZERO_COL = 1e-13


@dataclass(frozen=True)
class PolyBasis:
    """Monomials in cutoff-dose coordinates used by the second-step fit.

    For the ``full`` profile ``(c, d, d')`` the exponents are all
    ``(g1, g2, g3)`` with total degree at most ``rho2`` and ``min(g2, g3) = 0``.
    The ``cutoff-only`` profile uses powers of ``c``; the ``dose-change``
    profile ``(c, d' - d)`` uses every monomial of total degree at most ``rho2``.
    """

    rho2: int
    profile: str = "cutoff-only"
    exponents: tuple = field(init=False)

    def __post_init__(self):
        if self.rho2 < 0:
            raise RDDValidationError("rho2 must be non-negative")
        if self.profile not in PROFILE_DIMS:
            raise RDDValidationError(f"unknown profile {self.profile!r}")
        dim = PROFILE_DIMS[self.profile]
        ex = [
            g
            for g in itertools.product(range(self.rho2 + 1), repeat=dim)
            if sum(g) <= self.rho2 and (self.profile != "full" or min(g[1], g[2]) == 0)
        ]
        ex.sort(key=lambda g: (sum(g), tuple(-v for v in g)))
        object.__setattr__(self, "exponents", tuple(ex))

    @property
    def J(self):
        return len(self.exponents)

    @property
    def dim(self):
        return PROFILE_DIMS[self.profile]

    def raised(self, by=1):
        return PolyBasis(self.rho2 + by, self.profile)

    def design(self, diff):
        """Basis rows for scaled differences ``diff`` of shape ``(..., dim)``."""
        diff = np.asarray(diff, dtype=float)
        out = np.ones(diff.shape[:-1] + (self.J,))
        for col, g in enumerate(self.exponents):
            for i, p in enumerate(g):
                if p:
                    out[..., col] *= diff[..., i] ** p
        return out


@dataclass(frozen=True)
class CorrectionWeights:
    """Per-cutoff weights ``delta`` together with quadrature diagnostics."""

    delta: np.ndarray
    h2: float
    rho2: int
    profile: str
    nodes: int
    rule: str
    error: float
    mass: float
    dropped_mass: float = 0.0

    def to_dict(self):
        return {
            "delta": self.delta.tolist(),
            "h2": self.h2,
            "rho2": self.rho2,
            "profile": self.profile,
            "quadrature": {
                "rule": self.rule,
                "nodes": self.nodes,
                "error": self.error,
                "mass": self.mass,
                "dropped_mass": self.dropped_mass,
            },
        }


def _local_weights(points, at, basis, h2, kern):
    """Intercept weights ``L`` of shape ``(M, K)`` at ``M`` points ``at``.

    Returns the weights and a boolean mask of singular points.
    """
    at = np.atleast_2d(at)
    raw = points[None, :, :] - at[:, None, :]
    om = np.prod(kern(raw / h2), axis=2)
    # the intercept does not depend on the basis scale; h2 = inf fits globally
    E = basis.design(raw / h2 if np.isfinite(h2) else raw)
    pos = om > 0
    keep = np.any((np.abs(E) > _ZERO_COL) & pos[:, :, None], axis=1)
    keep[:, 0] = True
    E = E * keep[:, None, :]
    gram = np.einsum("mk,mka,mkb->mab", om, E, E)
    J = basis.J
    eye = np.eye(J)
    gram = gram + (~keep)[:, :, None] * eye[None, :, :]
    n_eff = keep.sum(axis=1)
    singular = pos.sum(axis=1) < n_eff
    ev = np.linalg.eigvalsh(gram)
    top = ev[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        rc = np.where(top > 0, ev[:, 0] / top, 0.0)
    singular |= ~(rc >= RCOND_MIN)
    safe = np.where(singular[:, None, None], eye, gram)
    rhs = np.zeros((at.shape[0], J, 1))
    rhs[:, 0, 0] = 1.0
    g = np.linalg.solve(safe, rhs)[:, :, 0]
    L = om * np.einsum("mka,ma->mk", E, g)
    L[singular] = 0.0
    return L, singular


def local_beta_fit(bhat, schedule, basis, h2, k=None, at=None):
    """Intercept of the kernel-weighted polynomial fit of ``bhat`` around ``at``."""
    kern = as_kernel(k)
    pts = schedule.points(basis.profile)
    at = np.asarray(at, dtype=float).reshape(1, -1)
    if at.shape[1] != pts.shape[1]:
        raise RDDValidationError(f"point must have {pts.shape[1]} coordinates")
    L, bad = _local_weights(pts, at, basis, float(h2), kern)
    if bad[0]:
        raise SingularLocalDesign(at[0], "(too few cutoffs with positive weight)")
    return float(L[0] @ np.asarray(bhat, dtype=float))


def intercept_weights(schedule, basis, h2, at, k=None):
    """Linear weights ``L(at)`` with ``local_beta_fit = L @ bhat``; ``at`` is ``(M, dim)``."""
    L, bad = _local_weights(schedule.points(basis.profile), np.atleast_2d(at), basis, float(h2), as_kernel(k))
    if np.any(bad):
        raise SingularLocalDesign(np.atleast_2d(at)[int(np.argmax(bad))])
    return L


def _rule(schedule, cf, basis, h2, kern, quad, m):
    box = cf.box
    idx = cf.integrated
    pts = schedule.points(basis.profile)
    split = quad.split_at_kinks
    if split is None:
        split = len(box) == 1
    rules = []
    for dim_i, (lo, hi) in zip(idx, box):
        kinks = ()
        if split and np.isfinite(h2):
            kinks = (pts[:, dim_i][:, None] + h2 * np.array(kern.kinks)[None, :]).ravel()
        rules.append(panel_rule(panel_breaks(lo, hi, kinks, quad.panels_per_dim), m))
    return tensor_rule(rules)


def _delta_at(schedule, cf, basis, h2, kern, quad, m):
    nodes, w = _rule(schedule, cf, basis, h2, kern, quad, m)
    if nodes.shape[0] > quad.max_nodes:
        raise RDDValidationError(
            f"quadrature grid of {nodes.shape[0]} nodes exceeds max_nodes={quad.max_nodes}"
        )
    full = cf.full_points(nodes) if nodes.shape[1] else cf.full_points(np.zeros((1, 0)))
    dens = cf.pdf(nodes) if nodes.shape[1] else np.ones(1)
    pts = schedule.points(basis.profile)
    K = pts.shape[0]
    J = basis.J
    chunk = max(1, int(2_000_000 // max(1, K * J)))
    delta = np.zeros(K)
    mass = 0.0
    lost = 0.0
    for s in range(0, full.shape[0], chunk):
        sl = slice(s, s + chunk)
        ww = w[sl] * dens[sl]
        act = ww != 0
        if not np.any(act):
            continue
        L, bad = _local_weights(pts, full[sl][act], basis, h2, kern)
        wa = ww[act]
        if np.any(bad):
            if not quad.drop_boundary or not _near_boundary(full[sl][act][bad], cf, h2):
                first = full[sl][act][int(np.argmax(bad))]
                raise SingularLocalDesign(first, "at a quadrature node")
            lost += float(wa[bad].sum())
        delta += wa @ L
        mass += float(wa.sum())
    return delta, mass, lost, full.shape[0]


def _near_boundary(at, cf, h2):
    ok = np.zeros(at.shape[0], dtype=bool)
    for i, (lo, hi) in zip(cf.integrated, cf.box):
        ok |= (at[:, i] < lo + h2) | (at[:, i] > hi - h2)
    return bool(np.all(ok))


def correction_weights(schedule, cf, basis, h2, k=None, quad=None):
    """Weights ``delta_j`` with ``sum_j delta_j B_j`` the integrated local fit.

    ``h2 = inf`` gives a global fit; with ``rho2 = 0`` that is the plain
    average of the jumps, weighted by the counterfactual mass.

    Raises
    ------
    SingularLocalDesign
        A quadrature node has too few cutoffs within ``h2``.
    QuadratureDivergence
        The refined rule disagrees with the base rule by more than ``quad.tol``.
    """
    if cf.kind != "continuous":
        raise RDDValidationError("correction weights need a continuous counterfactual")
    if basis.profile != cf.profile:
        raise RDDValidationError(
            f"basis profile {basis.profile!r} differs from counterfactual profile {cf.profile!r}"
        )
    quad = quad or QuadratureConfig()
    kern = as_kernel(k)
    h2 = float(h2)
    if not h2 > 0:
        raise RDDValidationError("h2 must be positive")
    m = quad.nodes_per_dim
    delta, mass, lost, count = _delta_at(schedule, cf, basis, h2, kern, quad, m)
    err = 0.0
    if quad.refine:
        d2, mass2, lost2, count2 = _delta_at(schedule, cf, basis, h2, kern, quad, 2 * m)
        err = float(np.max(np.abs(d2 - delta)))
        delta, mass, lost, count = d2, mass2, lost2, count + count2
        if err > quad.tol:
            raise QuadratureDivergence(
                f"refined quadrature changed the weights by {err:.3g} (> tol {quad.tol:g})"
            )
    if not np.all(np.isfinite(delta)):
        raise QuadratureDivergence("non-finite correction weights")
    return CorrectionWeights(delta, h2, basis.rho2, basis.profile, count, quad.rule, err, mass, lost)


def counterfactual_z(cf, wbasis, quad=None):
    """Integral of ``W(c, d') - W(c, d)`` against ``cf`` over the full profile.

    ``wbasis`` maps arrays ``c, d`` to an ``(M, q)`` matrix.  Used by the
    fuzzy ever-complier estimator.
    """
    quad = quad or QuadratureConfig()
    if cf.profile != "full":
        raise RDDValidationError("the extrapolated effect needs a full-profile counterfactual")
    rules = [panel_rule(panel_breaks(lo, hi, (), quad.panels_per_dim), quad.nodes_per_dim) for lo, hi in cf.box]
    nodes, w = tensor_rule(rules)
    full = cf.full_points(nodes)
    dens = cf.pdf(nodes) if nodes.shape[1] else np.ones(1)
    vals = wbasis(full[:, 0], full[:, 2]) - wbasis(full[:, 0], full[:, 1])
    return (w * dens) @ vals


@dataclass(frozen=True)
class EstimatedWeights:
    """Kernel-density based discrete weights and their influence terms.

    ``influence[i, j]`` is the contribution of observation ``i`` to the
    estimation error of weight ``j``.
    """

    weights: np.ndarray
    density: np.ndarray
    bandwidth: float
    influence: np.ndarray
    kind: str


def discrete_weights_normalized(sample, schedule, density_bw, k=None, influence="literal"):
    """Weights proportional to a kernel density estimate of ``x`` at each cutoff.

    Parameters
    ----------
    density_bw : float
        Density bandwidth.
    influence : {"literal", "delta"}
        ``"literal"`` uses the kernel term divided by the summed density
        estimates.  ``"delta"`` uses the centered linearisation of the ratio.
    """
    if not density_bw > 0:
        raise RDDValidationError("density bandwidth must be positive")
    kern = as_kernel(k)
    n = sample.n
    kij = kern((sample.x[:, None] - schedule.c[None, :]) / density_bw) / (n * density_bw)
    f = kij.sum(axis=0)
    tot = f.sum()
    if not tot > 0:
        raise ZeroDensityEverywhere("estimated density is zero at every cutoff")
    w = f / tot
    if influence == "literal":
        eta = kij / tot
    elif influence == "delta":
        eta = (kij - w[None, :] * kij.sum(axis=1, keepdims=True)) / tot
        eta = eta - eta.mean(axis=0, keepdims=True)
    else:
        raise RDDValidationError(f"unknown influence form {influence!r}")
    return EstimatedWeights(w, f, float(density_bw), eta, influence)
