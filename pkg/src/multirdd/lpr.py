"""One-sided local polynomial fits and jump estimates at each cutoff.

All cutoffs and both sides are fitted in one batch: each observation is
paired with every window that contains it, kernel-weighted moments are
accumulated with ``np.bincount`` and the small Gram matrices are inverted
together.  Besides the jumps, the batch keeps the linear influence of each
observation on each jump, which is what every variance formula consumes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .core import Sample, as_kernel, effective_bandwidths, validate_schedule, window_bounds
from .errors import EmptyWindow, RDDValidationError, SingularDesign

RCOND_MIN = 1e-12


@dataclass(frozen=True)
class OneSidedFit:
    """Intercept and slopes of a one-sided local polynomial fit.

    Attributes
    ----------
    coef : ndarray
        ``(rho + 1,)`` for a scalar response or ``(rho + 1, q)`` for a
        stacked response; slopes are on the original ``x - c`` scale.
    gram : ndarray
        Inverse of ``(1 / (n h)) sum k(u) H(u) H(u)'`` with ``u = (x - c) / h``.
    n_window : int
        Observations in the window.
    side : str
        ``"left"`` or ``"right"``.
    """

    coef: np.ndarray
    gram: np.ndarray
    n_window: int
    side: str
    c: float
    h: float
    rcond: float

    @property
    def intercept(self):
        return self.coef[0]

    @property
    def intercept_and_slopes(self):
        return self.coef


@dataclass(frozen=True)
class JumpEstimate:
    value: np.ndarray | float
    left: OneSidedFit
    right: OneSidedFit
    cutoff_index: int


@dataclass
class JumpSet:
    """Jumps at all cutoffs plus the quantities their variances need.

    Attributes
    ----------
    values : ndarray
        ``(K,)`` or ``(K, q)`` jump estimates.
    h : ndarray
        Effective (clipped) first-step bandwidths.
    influence : scipy.sparse.csr_matrix
        ``(n, K)``; column ``j`` holds the weights ``a_ij`` with
        ``values[j] = sum_i a_ij * Y_i``.  Rows follow the sample order.
    """

    values: np.ndarray
    h: np.ndarray
    rho: int
    influence: sparse.csr_matrix
    left: list
    right: list
    clipped: np.ndarray
    report: object = None

    @property
    def K(self):
        return self.h.size

    def estimates(self):
        return [
            JumpEstimate(self.values[j], self.left[j], self.right[j], j + 1)
            for j in range(self.K)
        ]

    def combine(self, w):
        """Per-observation influence of ``sum_j w_j B_j``; ``w`` may be ``(K,)`` or ``(K, m)``."""
        return self.influence @ np.asarray(w, dtype=float)


def _pairs(lo, hi):
    """Flattened indices for the union of ranges ``[lo_j, hi_j)`` and their owner ``j``."""
    lens = (hi - lo).astype(np.int64)
    total = int(lens.sum())
    owner = np.repeat(np.arange(lo.size), lens)
    starts = np.cumsum(lens) - lens
    idx = np.arange(total) - np.repeat(starts - lo, lens)
    return idx, owner


def _side_batch(xs, Ys, c, h, lo, hi, rho, kern, n, side):
    """Batched fits on one side; ``Ys`` is ``(n, q)``."""
    K = c.size
    r = rho + 1
    idx, own = _pairs(lo, hi)
    u = (xs[idx] - c[own]) / h[own]
    kw = kern(u)
    scale = 1.0 / (n * h)
    P = u[:, None] ** np.arange(2 * rho + 1)[None, :]
    mom = np.empty((K, 2 * rho + 1))
    for p in range(2 * rho + 1):
        mom[:, p] = np.bincount(own, weights=kw * P[:, p], minlength=K)
    mom *= scale[:, None]
    ar = np.arange(r)
    S = mom[:, ar[:, None] + ar[None, :]]
    q = Ys.shape[1]
    T = np.empty((K, r, q))
    Yw = Ys[idx] * kw[:, None]
    for a in range(r):
        for m in range(q):
            T[:, a, m] = np.bincount(own, weights=Yw[:, m] * P[:, a], minlength=K)
    T *= scale[:, None, None]
    sv = np.linalg.svd(S, compute_uv=False)
    rcond = np.where(sv[:, 0] > 0, sv[:, -1] / np.where(sv[:, 0] > 0, sv[:, 0], 1.0), 0.0)
    bad = np.flatnonzero(~(rcond >= RCOND_MIN))
    if bad.size:
        j = int(bad[0])
        raise SingularDesign(j + 1, side, float(rcond[j]))
    G = np.linalg.inv(S)
    G = 0.5 * (G + np.swapaxes(G, 1, 2))
    coef_u = G @ T
    # e1' G H(u) for every pair, scaled by k(u) / (n h)
    e1G = G[:, 0, :]
    infl = kw * np.einsum("ia,ia->i", P[:, :r], e1G[own]) * scale[own]
    rescale = h[:, None] ** -np.arange(r)[None, :]
    coef = coef_u * rescale[:, :, None]
    return coef, G, rcond, idx, own, infl


def _response_matrix(sample, response):
    if response is None:
        return sample.y[:, None], True
    if isinstance(response, str):
        response = [response]
    if isinstance(response, (list, tuple)) and response and all(isinstance(s, str) for s in response):
        cols = []
        for s in response:
            if s == "y":
                cols.append(sample.y)
            elif s == "d":
                if sample.d is None:
                    raise RDDValidationError("response 'd' requested but the sample has no doses")
                cols.append(sample.d)
            else:
                raise RDDValidationError(f"unknown response column {s!r}")
        return np.column_stack(cols), len(cols) == 1
    Y = np.asarray(response, dtype=float)
    if Y.shape[0] != sample.n:
        raise RDDValidationError("response length does not match the sample")
    if Y.ndim == 1:
        return Y[:, None], True
    return Y, False


def estimate_jumps(sample, schedule, plan, k=None, response=None, rho=None, validate=True):
    """Fit both sides of every cutoff and return a :class:`JumpSet`.

    Parameters
    ----------
    sample, schedule, plan
        Data, cutoffs and bandwidths.  ``rho`` overrides ``plan.rho1``.
    k : KernelSpec or str, optional
        First-step kernel, triangular by default.
    response : None, str, list of str or array
        ``None`` fits ``y``.  Names pick sample columns (``"y"``, ``"d"``);
        a 2-D array stacks columns that share one design.
    """
    kern = as_kernel(k)
    rho = plan.rho1 if rho is None else int(rho)
    Y, scalar = _response_matrix(sample, response)
    report = None
    if validate:
        report = validate_schedule(sample, schedule, plan, rho=rho)
        h = report.h1
        clipped = report.clipped
    else:
        h, clipped = effective_bandwidths(schedule, plan.h1_for(schedule.K), plan.clip)
    order = np.argsort(sample.x, kind="stable")
    xs = sample.x[order]
    Ys = Y[order]
    n = sample.n
    c = schedule.c
    (l0, l1), (r0, r1) = window_bounds(xs, c, h)
    if not validate:
        for j in range(c.size):
            for side, cnt in (("left", l1[j] - l0[j]), ("right", r1[j] - r0[j])):
                if cnt < rho + 1:
                    raise EmptyWindow(j + 1, side, int(cnt), rho + 2)
    cl, Gl, rl, il, ol, al = _side_batch(xs, Ys, c, h, l0, l1, rho, kern, n, "left")
    cr, Gr, rr, ir, orr, ar_ = _side_batch(xs, Ys, c, h, r0, r1, rho, kern, n, "right")
    values = cr[:, 0, :] - cl[:, 0, :]
    rows = np.concatenate([order[ir], order[il]])
    cols = np.concatenate([orr, ol])
    data = np.concatenate([ar_, -al])
    A = sparse.csr_matrix((data, (rows, cols)), shape=(n, c.size))
    lefts, rights = [], []
    for j in range(c.size):
        sl = (lambda M: M[:, 0]) if scalar else (lambda M: M)
        lefts.append(OneSidedFit(sl(cl[j]), Gl[j], int(l1[j] - l0[j]), "left", c[j], h[j], float(rl[j])))
        rights.append(OneSidedFit(sl(cr[j]), Gr[j], int(r1[j] - r0[j]), "right", c[j], h[j], float(rr[j])))
    if scalar:
        values = values[:, 0]
    return JumpSet(values, h, rho, A, lefts, rights, clipped, report)


def jump_estimate(sample, schedule, plan, k=None, response=None, rho=None):
    """Jump estimates ``B_j`` at every cutoff as a list of :class:`JumpEstimate`."""
    return estimate_jumps(sample, schedule, plan, k, response, rho).estimates()


def fit_one_sided(sample, c, h, rho, k=None, side="right", response=None):
    """Local polynomial fit on one side of a single point ``c``.

    The right window is ``[c, c + h)`` and the left window ``(c - h, c)``.
    """
    if side not in ("left", "right"):
        raise RDDValidationError(f"side must be 'left' or 'right', got {side!r}")
    kern = as_kernel(k)
    Y, scalar = _response_matrix(sample, response)
    order = np.argsort(sample.x, kind="stable")
    xs = sample.x[order]
    c_arr = np.array([float(c)])
    h_arr = np.array([float(h)])
    (l0, l1), (r0, r1) = window_bounds(xs, c_arr, h_arr)
    lo, hi = (l0, l1) if side == "left" else (r0, r1)
    seg = xs[lo[0]:hi[0]]
    distinct = 0 if seg.size == 0 else 1 + int(np.count_nonzero(np.diff(seg)))
    if distinct < rho + 2:
        raise EmptyWindow(1, side, distinct, rho + 2)
    coef, G, rc, *_ = _side_batch(xs, Y[order], c_arr, h_arr, lo, hi, int(rho), kern, sample.n, side)
    out = coef[0][:, 0] if scalar else coef[0]
    return OneSidedFit(out, G[0], int(hi[0] - lo[0]), side, float(c), float(h), float(rc[0]))
