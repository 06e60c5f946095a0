"""Fuzzy designs: compliance classes, identification and the ever-complier effect.

With imperfect compliance the jump in mean outcomes at a cutoff mixes the
effects on individuals switching in from every other dose.  When the
ever-complier effect is linear in a known basis, ``beta(c, d, d') =
[W(c, d') - W(c, d)]' theta``, the jumps satisfy ``B = W_tilde @ theta`` and
``theta`` is estimated by weighted least squares of the outcome jumps on
the jumps of ``W(X, D)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bandwidth import BandwidthRule
from .core import BandwidthPlan, CounterfactualSpec, Sample, as_kernel, nn_residual_vectors
from .errors import (
    EnumerationTooLarge,
    MissingColumn,
    NoConvergence,
    RDDValidationError,
    SingularNormalEquations,
    SingularOmega,
)
from .lpr import estimate_jumps
from .sharp import AteResult
from .weights import counterfactual_z

CLASSES = ("ever_defier", "never_changer", "ever_complier")
SIGMA_MIN = 1e-6


@dataclass(frozen=True)
class PotentialAssignment:
    """Dose index received on each segment ``0..K`` as a function of eligibility."""

    u: tuple

    def __post_init__(self):
        object.__setattr__(self, "u", tuple(int(v) for v in self.u))

    @property
    def K(self):
        return len(self.u) - 1


def classify_compliance(a, schedule=None):
    """``"never_changer"``, ``"ever_complier"`` or ``"ever_defier"``.

    An assignment is an ever-complier when it changes at least once and,
    at every cutoff where it changes, the dose received equals the dose
    of eligibility on the new segment.
    """
    u = a.u if isinstance(a, PotentialAssignment) else tuple(int(v) for v in a)
    K = len(u) - 1
    if schedule is not None and schedule.K != K:
        raise RDDValidationError(f"assignment has {K + 1} entries, schedule needs {schedule.K + 1}")
    if any(v < 0 or v > K for v in u):
        raise RDDValidationError(f"dose indices must lie in 0..{K}")
    changes = [j for j in range(1, K + 1) if u[j - 1] != u[j]]
    if not changes:
        return "never_changer"
    if all(u[j] == j for j in changes):
        return "ever_complier"
    return "ever_defier"


@dataclass(frozen=True)
class ComplianceEnumeration:
    counts: dict
    listing: dict

    def as_tuple(self):
        """Counts in the order (ever-defier, never-changer, ever-complier)."""
        return tuple(self.counts[c] for c in CLASSES)


def enumerate_compliance(schedule_or_K, cap=1_000_000):
    """Classify every assignment in ``{0..K}^(K+1)``."""
    K = schedule_or_K if isinstance(schedule_or_K, int) else schedule_or_K.K
    total = (K + 1) ** (K + 1)
    if total > cap:
        raise EnumerationTooLarge(f"{total} assignments exceed the cap of {cap}")
    listing = {c: [] for c in CLASSES}
    for u in itertools.product(range(K + 1), repeat=K + 1):
        listing[classify_compliance(u)].append(u)
    return ComplianceEnumeration({c: len(v) for c, v in listing.items()}, listing)


@dataclass(frozen=True)
class WBasis:
    """Basis ``W(c, d)`` for the ever-complier effect.

    By default the columns are monomials ``c**a * d**b`` for the given
    exponent pairs; ``func`` may instead supply any vectorised map
    ``(c, d) -> (M, q)``.
    """

    exponents: tuple = ((0, 1),)
    func: Callable | None = None

    def __post_init__(self):
        if self.func is None:
            ex = tuple((int(a), int(b)) for a, b in self.exponents)
            if not ex:
                raise RDDValidationError("empty W basis")
            object.__setattr__(self, "exponents", ex)

    @property
    def q(self):
        if self.func is not None:
            return int(np.atleast_2d(self.func(np.zeros(1), np.zeros(1))).shape[1])
        return len(self.exponents)

    def __call__(self, c, d):
        c = np.atleast_1d(np.asarray(c, dtype=float))
        d = np.atleast_1d(np.asarray(d, dtype=float))
        if self.func is not None:
            out = np.asarray(self.func(c, d), dtype=float)
            return out.reshape(np.broadcast(c, d).size, -1)
        c, d = np.broadcast_arrays(c, d)
        return np.column_stack([c ** a * d ** b for a, b in self.exponents])


@dataclass
class ThetaEstimate:
    """Estimated ever-complier parameters; ``vcov`` is ``None`` for point-only fits."""

    theta: np.ndarray
    vcov: np.ndarray | None
    omega_used: np.ndarray
    iterations: int = 0
    converged: bool = True
    trajectory: list = field(default_factory=list)


@dataclass
class ShareJumps:
    omega: np.ndarray
    raw: np.ndarray
    clipped: np.ndarray


def _dose_index(sample, schedule):
    if sample.d is None:
        raise MissingColumn("d")
    doses = schedule.doses
    match = np.abs(sample.d[:, None] - doses[None, :]) <= 1e-12 * np.maximum(1.0, np.abs(doses))[None, :]
    if not np.all(match.any(axis=1)):
        bad = sample.d[~match.any(axis=1)][0]
        raise RDDValidationError(f"dose {bad:g} is not one of the schedule doses")
    # duplicated dose values share one indicator; take the first index
    return np.argmax(match, axis=1)


def eligibility_share_jumps(sample, schedule, plan, kernel=None, rho=None):
    """``omega[j, l]``: drop in the share receiving dose ``l`` when crossing cutoff ``j``.

    Entries with ``l = j`` (the eligibility dose on the right) are zero.
    Values are clipped to ``[0, 1]``; the mask of clipped entries is kept.
    """
    idx = _dose_index(sample, schedule)
    K = schedule.K
    ind = (idx[:, None] == np.arange(K + 1)[None, :]).astype(float)
    js = estimate_jumps(sample, schedule, plan, kernel, response=ind, rho=rho)
    raw = -np.asarray(js.values).reshape(K, K + 1)
    raw[np.arange(K), np.arange(1, K + 1)] = 0.0
    om = np.clip(raw, 0.0, 1.0)
    return ShareJumps(om, raw, om != raw)


@dataclass(frozen=True)
class WTilde:
    matrix: np.ndarray
    sigma_min: float
    rank: int
    identified: bool


def build_wtilde(omega, schedule, basis, threshold=SIGMA_MIN):
    """Stack ``sum_{l != j} omega[j, l] (W(c_j, d_j) - W(c_j, d_l))`` over cutoffs."""
    om = np.asarray(omega.omega if isinstance(omega, ShareJumps) else omega, dtype=float)
    K = schedule.K
    if om.shape != (K, K + 1):
        raise RDDValidationError(f"omega must be {K} x {K + 1}")
    doses = schedule.doses
    rows = []
    for j in range(K):
        c = schedule.c[j]
        Wj = basis(c, doses[j + 1])[0]
        Wl = basis(np.full(K + 1, c), doses)
        w = om[j].copy()
        w[j + 1] = 0.0
        rows.append(w @ (Wj[None, :] - Wl))
    M = np.array(rows)
    sv = np.linalg.svd(M, compute_uv=False)
    q = M.shape[1]
    smin = float(sv[-1]) if q <= K else 0.0
    rank = int(np.sum(sv > threshold))
    return WTilde(M, smin, rank, bool(q <= K and smin > threshold))


def wls_theta(bhat, wtilde, omega_wls=None):
    """``theta = (W' Omega W)^{-1} W' Omega B``; point estimate only."""
    B = np.asarray(bhat, dtype=float)
    W = np.asarray(wtilde.matrix if isinstance(wtilde, WTilde) else wtilde, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    Om = np.eye(B.size) if omega_wls is None else np.asarray(omega_wls, dtype=float)
    N = W.T @ Om @ W
    sv = np.linalg.svd(N, compute_uv=False)
    if sv.size == 0 or not sv[-1] > 1e-12 * max(sv[0], 1e-300):
        raise SingularNormalEquations("weighted normal equations are singular")
    theta = np.linalg.solve(N, W.T @ Om @ B)
    return ThetaEstimate(theta, None, Om)


def _stacked_response(sample, basis):
    return np.column_stack([sample.y, basis(sample.x, sample.d)])


def var_ec(sample, schedule, plan, kernel, theta, basis, rho=None, neighbors=3, jumps=None, resid=None,
           band=True):
    """``K x K`` covariance of ``B - W_tilde theta`` from matching residuals.

    Entries more than one cutoff apart are set to zero when ``band`` is true.
    """
    if sample.d is None:
        raise MissingColumn("d")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if jumps is None:
        jumps = estimate_jumps(sample, schedule, plan, kernel, response=_stacked_response(sample, basis), rho=rho)
    if resid is None:
        resid = nn_residual_vectors(sample, schedule, neighbors, _stacked_response(sample, basis))
    s = (resid @ np.concatenate([[1.0], -theta])) ** 2
    A = jumps.influence
    V = np.asarray((A.T @ A.multiply(s[:, None])).todense())
    V = 0.5 * (V + V.T)
    if band:
        K = V.shape[0]
        jj = np.arange(K)
        V[np.abs(jj[:, None] - jj[None, :]) > 1] = 0.0
    return V


@dataclass
class FuzzyResult:
    theta: ThetaEstimate
    ate: AteResult | None
    h1: np.ndarray
    wtilde: np.ndarray
    bhat: np.ndarray
    outer_iterations: int
    outer_trajectory: list
    identification: WTilde

    def to_dict(self):
        out = {
            "theta": self.theta.theta.tolist(),
            "vcov": None if self.theta.vcov is None else self.theta.vcov.tolist(),
            "converged": self.theta.converged,
            "inner_iterations": self.theta.iterations,
            "outer_iterations": self.outer_iterations,
            "h1": self.h1.tolist(),
            "wtilde": self.wtilde.tolist(),
            "bhat": self.bhat.tolist(),
            "sigma_min": self.identification.sigma_min,
            "identified": self.identification.identified,
        }
        if self.ate is not None:
            out.update(mu=self.ate.mu, se=self.ate.se, mu_bc=self.ate.mu_bc, se_bc=self.ate.se_bc,
                       ci95=list(self.ate.ci95))
        return out


def _jump_wtilde(sample, schedule, basis, h, kern, rho):
    plan = BandwidthPlan(tuple(h), None, rho, 1)
    js = estimate_jumps(sample, schedule, plan, kern, response=_stacked_response(sample, basis), rho=rho)
    vals = np.asarray(js.values)
    return js, vals[:, 0], vals[:, 1:]


def _identification(W):
    sv = np.linalg.svd(W, compute_uv=False)
    K, q = W.shape
    smin = float(sv[-1]) if q <= K else 0.0
    return WTilde(W, smin, int(np.sum(sv > SIGMA_MIN)), bool(q <= K and smin > SIGMA_MIN))


def iterate_mse_optimal(sample, schedule, basis, z=None, kernel=None, init_theta=None, init_omega=None,
                        rule=None, rho=2, inner_tol=1e-8, outer_tol=1e-6, max_iter=100,
                        fix_identity=False, neighbors=3, quad=None, h_tol=0.02):
    """Iterated bandwidth / weighting-matrix estimator of ``theta``.

    Each outer pass picks plug-in bandwidths for the residualised outcome
    ``Y - W(X, D)' theta``, estimates jumps of ``[Y, W(X, D)]`` at order
    ``rho`` and iterates ``theta`` with ``Omega = V^{-1}`` until ``theta``
    moves by less than ``inner_tol`` (max-norm).  Outer passes stop once the
    first and last ``theta`` of a pass agree to ``outer_tol`` (relative).

    Parameters
    ----------
    z : array_like or CounterfactualSpec, optional
        Linear functional for the average effect; a full-profile continuous
        counterfactual is integrated to ``Z(F)``.
    rule : BandwidthRule, optional
        Plug-in rule without rate adjustment by default.
    h_tol : float
        Bandwidth refreshes whose largest relative change against any
        earlier pass is at most ``h_tol`` are not applied; this stops the
        outer loop from cycling between nearly equal bandwidth vectors.
    fix_identity : bool
        Single pass with ``Omega = I``; ``theta`` then equals the plain least
        squares of the jumps and ``vcov`` is the sandwich form.

    Raises
    ------
    NoConvergence
        ``max_iter`` reached in either loop; the trajectory is attached.
    SingularOmega
        The estimated covariance cannot be inverted.
    """
    if sample.d is None:
        raise MissingColumn("d")
    kern = as_kernel(kernel)
    q = basis.q
    rule = rule or BandwidthRule("ik", None)
    theta = np.zeros(q) if init_theta is None else np.atleast_1d(np.asarray(init_theta, dtype=float))
    Om = np.eye(schedule.K) if init_omega is None else np.asarray(init_omega, dtype=float)
    stacked = _stacked_response(sample, basis)
    resid = nn_residual_vectors(sample, schedule, neighbors, stacked)
    outer = []
    inner_total = 0
    seen = []
    for it in range(1, max_iter + 1):
        ytil = sample.y - stacked[:, 1:] @ theta
        h = rule.bandwidths(Sample(ytil, sample.x, sample.d), schedule)
        # plug-in bandwidths move in discrete steps, so the refresh can cycle;
        # a refresh within h_tol of any earlier vector keeps the latest one
        cycled = any(np.max(np.abs(h / g - 1.0)) <= h_tol for g in seen)
        if cycled:
            h = seen[-1]
        seen.append(h)
        js, B, W = _jump_wtilde(sample, schedule, basis, h, kern, rho)
        ident = _identification(W)
        if not ident.identified:
            raise SingularNormalEquations(
                f"jumps of W are rank deficient (sigma_min={ident.sigma_min:.3g})"
            )
        theta3 = wls_theta(B, W, Om).theta
        if fix_identity:
            V = var_ec(sample, schedule, None, kern, theta3, basis, jumps=js, resid=resid)
            Ninv = np.linalg.inv(W.T @ W)
            vcov = Ninv @ W.T @ V @ W @ Ninv
            est = ThetaEstimate(theta3, 0.5 * (vcov + vcov.T), np.eye(schedule.K), 0, True, [theta3.tolist()])
            outer.append(theta3.tolist())
            return _finish(est, z, basis, quad, h, W, B, it, outer, ident, sample, schedule)
        th = theta3
        traj = [th.tolist()]
        for k in range(max_iter):
            V = var_ec(sample, schedule, None, kern, th, basis, jumps=js, resid=resid)
            try:
                Om = np.linalg.inv(V)
            except np.linalg.LinAlgError as exc:
                raise SingularOmega(f"covariance of the jumps is singular: {exc}") from None
            if not np.all(np.isfinite(Om)) or np.linalg.cond(V) > 1e14:
                raise SingularOmega("covariance of the jumps is numerically singular")
            new = wls_theta(B, W, Om).theta
            traj.append(new.tolist())
            inner_total += 1
            if np.max(np.abs(new - th)) < inner_tol:
                th = new
                break
            th = new
        else:
            raise NoConvergence(max_iter, traj)
        outer.append({"theta_start": theta3.tolist(), "theta_end": th.tolist(), "inner": len(traj) - 1,
                      "h1": h.tolist(), "cycle": cycled})
        done = np.max(np.abs(th - theta3)) <= outer_tol * max(1.0, float(np.max(np.abs(th))))
        theta = th
        if done:
            N = W.T @ Om @ W
            vcov = np.linalg.inv(N)
            est = ThetaEstimate(th, 0.5 * (vcov + vcov.T), Om, inner_total, True, traj)
            return _finish(est, z, basis, quad, h, W, B, it, outer, ident, sample, schedule)
    raise NoConvergence(max_iter, outer)


def _finish(est, z, basis, quad, h, W, B, it, outer, ident, sample, schedule):
    ate = None
    if z is not None:
        if isinstance(z, CounterfactualSpec):
            zv = counterfactual_z(z, basis, quad)
        else:
            zv = np.atleast_1d(np.asarray(z, dtype=float))
        if zv.shape != est.theta.shape:
            raise RDDValidationError(f"Z must have length {est.theta.size}")
        mu, var = ever_complier_effect(est, zv)
        plan = BandwidthPlan(tuple(h), None, 2, 1)
        ate = AteResult(mu, var, mu, var, zv, zv, plan, h,
                        {"kind": "fuzzy", "theta": est.theta.tolist(), "Z": zv.tolist()})
    return FuzzyResult(est, ate, np.asarray(h), W, B, it, outer, ident)


def ever_complier_effect(est, z):
    """``mu = Z theta`` and its variance ``Z V Z'``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    mu = float(z @ est.theta)
    var = float(z @ est.vcov @ z) if est.vcov is not None else float("nan")
    return mu, var
