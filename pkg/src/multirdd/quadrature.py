"""Composite Gauss-Legendre rules on boxes."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuadratureConfig:
    """Settings for the numerical integral behind the correction weights.

    Parameters
    ----------
    rule : str
        Only ``"gauss-legendre"`` is implemented.
    nodes_per_dim : int
        Gauss-Legendre points per panel and per integrated dimension.
    refine : bool
        Repeat the integral with twice the points and report the
        discrepancy as the quadrature error estimate.
    split_at_kinks : bool or None
        Split panels where the second-step kernel weights are not smooth.
        ``None`` means "only for one-dimensional supports".
    panels_per_dim : int
        Uniform panels per dimension, used when not splitting at kinks.
    tol : float
        Largest tolerated refinement discrepancy (max over cutoffs).
    drop_boundary : bool
        Discard singular nodes within ``h2`` of the support boundary and
        report the lost mass instead of raising.
    max_nodes : int
        Guard against accidentally huge tensor grids.
    """

    rule: str = "gauss-legendre"
    nodes_per_dim: int = 64
    refine: bool = True
    split_at_kinks: bool | None = None
    panels_per_dim: int = 1
    tol: float = 1e-3
    drop_boundary: bool = False
    max_nodes: int = 4_000_000

    def __post_init__(self):
        if self.rule != "gauss-legendre":
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if self.nodes_per_dim < 1 or self.panels_per_dim < 1:
            raise ValueError("node and panel counts must be positive")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@lru_cache(maxsize=64)
def _gl(m):
    return np.polynomial.legendre.leggauss(m)


def panel_rule(breaks, m):
    """Nodes and weights of a composite rule with ``m`` points per panel."""
    breaks = np.asarray(breaks, dtype=float)
    t, w = _gl(m)
    lo, hi = breaks[:-1, None], breaks[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (lo + hi) / 2 + half * t[None, :]
    weights = half * w[None, :]
    return nodes.ravel(), weights.ravel()


def panel_breaks(lo, hi, kinks=(), panels=1):
    """Panel edges on ``[lo, hi]``: uniform panels plus any interior kinks."""
    base = np.linspace(lo, hi, panels + 1)
    kinks = np.asarray(list(kinks), dtype=float)
    if kinks.size:
        kinks = kinks[(kinks > lo) & (kinks < hi)]
    b = np.unique(np.concatenate([base, kinks]))
    # collapse panels narrower than rounding noise
    keep = np.concatenate([[True], np.diff(b) > 1e-14 * max(1.0, hi - lo)])
    b = b[keep]
    b[-1] = hi
    return b


def tensor_rule(rules):
    """Tensor product of one-dimensional (nodes, weights) pairs."""
    if not rules:
        return np.zeros((1, 0)), np.ones(1)
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return nodes, weights


def integrate_box(f, box, m=64):
    """Integrate a vectorised ``f(points)`` over a product of intervals."""
    rules = [panel_rule(panel_breaks(lo, hi), m) for lo, hi in box]
    nodes, weights = tensor_rule(rules)
    return float(np.sum(weights * f(nodes)))
