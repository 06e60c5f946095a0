"""Average-effect estimators for sharp designs.

Both estimators aggregate the per-cutoff jumps linearly, ``mu = w @ B``.
For a discrete counterfactual ``w`` is the given pmf; for a continuous one
it is the vector of correction weights.  Their variance estimators share
one code path: ``sum_i eps_i^2 (sum_j w_j a_ij)^2`` where ``a_ij`` is the
influence of observation ``i`` on jump ``j``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    PROFILE_DIMS,
    BandwidthPlan,
    CounterfactualSpec,
    as_kernel,
    nn_residual_vectors,
    nn_residuals,
)
from .errors import AllGridPointsInfeasible, RDDNumericalError, RDDValidationError
from .lpr import estimate_jumps
from .quadrature import QuadratureConfig
from .weights import CorrectionWeights, PolyBasis, correction_weights, discrete_weights_normalized

Z95 = 1.96


class RateWarning(UserWarning):
    """A bandwidth or order choice falls outside the asymptotic rate guidance."""


@dataclass
class AteResult:
    """Point estimates, variances and the bias-corrected interval.

    ``mu``/``variance`` come from the base orders and ``mu_bc``/
    ``variance_bc`` from the orders raised by one with the same bandwidths.
    ``ci95`` is built from the bias-corrected pair.
    """

    mu: float
    variance: float
    mu_bc: float
    variance_bc: float
    weights_used: object
    weights_used_bc: object
    bandwidths: BandwidthPlan
    h1: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self):
        return float(np.sqrt(max(self.variance, 0.0)))

    @property
    def se_bc(self):
        return float(np.sqrt(max(self.variance_bc, 0.0)))

    @property
    def ci95(self):
        return (self.mu_bc - Z95 * self.se_bc, self.mu_bc + Z95 * self.se_bc)

    @property
    def ci95_base(self):
        return (self.mu - Z95 * self.se, self.mu + Z95 * self.se)

    def weight_vector(self, bc=False):
        w = self.weights_used_bc if bc else self.weights_used
        return np.asarray(w.delta if isinstance(w, CorrectionWeights) else w, dtype=float)

    def to_dict(self):
        return {
            "mu": self.mu,
            "se": self.se,
            "mu_bc": self.mu_bc,
            "se_bc": self.se_bc,
            "ci95": list(self.ci95),
            "h1": np.asarray(self.h1).tolist(),
            "h2": self.bandwidths.h2,
            "weights": self.weight_vector().tolist(),
            "weights_bc": self.weight_vector(True).tolist(),
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def aggregate_variance(jumps, eps2, w):
    """``sum_i eps2_i (A w)_i^2`` for one weight vector or a ``(K, m)`` stack."""
    a = jumps.combine(w)
    return eps2 @ (a * a)


def var_sharp(sample, schedule, weights, plan, kernel=None, rho=None, neighbors=3, jumps=None, eps2=None):
    """Variance estimate of ``sum_j w_j B_j`` at first-step order ``rho``."""
    w = np.asarray(weights.delta if isinstance(weights, CorrectionWeights) else weights, dtype=float)
    if w.shape != (schedule.K,):
        raise RDDValidationError(f"expected {schedule.K} weights, got shape {w.shape}")
    if jumps is None:
        jumps = estimate_jumps(sample, schedule, plan, kernel, rho=rho)
    if eps2 is None:
        eps2 = nn_residuals(sample, schedule, neighbors)
    return float(aggregate_variance(jumps, eps2, w))


def _evaluate(sample, schedule, plan, kern, w, w_bc, neighbors, diagnostics):
    eps2 = nn_residuals(sample, schedule, neighbors)
    j0 = estimate_jumps(sample, schedule, plan, kern, rho=plan.rho1)
    j1 = estimate_jumps(sample, schedule, plan, kern, rho=plan.rho1 + 1)
    wv = np.asarray(w.delta if isinstance(w, CorrectionWeights) else w, dtype=float)
    wb = np.asarray(w_bc.delta if isinstance(w_bc, CorrectionWeights) else w_bc, dtype=float)
    mu = float(wv @ j0.values)
    mu_bc = float(wb @ j1.values)
    var = float(aggregate_variance(j0, eps2, wv))
    var_bc = float(aggregate_variance(j1, eps2, wb))
    if not (np.isfinite(mu) and np.isfinite(mu_bc)):
        raise RDDNumericalError("non-finite average effect")
    diag = {
        "n": sample.n,
        "K": schedule.K,
        "rho1": plan.rho1,
        "clipped": j0.clipped.tolist(),
        "jumps": j0.values.tolist(),
        "jumps_bc": j1.values.tolist(),
        "n_left": j1.report.n_left.tolist() if j1.report is not None else None,
        "n_right": j1.report.n_right.tolist() if j1.report is not None else None,
    }
    diag.update(diagnostics)
    return AteResult(mu, var, mu_bc, var_bc, w, w_bc, plan, j0.h, diag)


def ate_discrete(sample, schedule, weights, plan, kernel=None, neighbors=3):
    """Average of the jumps under a discrete counterfactual pmf.

    The bias-corrected twin refits every cutoff at order ``rho1 + 1`` with the
    same bandwidths.
    """
    if isinstance(weights, CounterfactualSpec):
        if weights.kind != "discrete":
            raise RDDValidationError("ate_discrete needs discrete weights")
        weights = weights.weights
    w = np.asarray(weights, dtype=float)
    if w.shape != (schedule.K,):
        raise RDDValidationError(f"expected {schedule.K} weights, got {w.size}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise RDDValidationError("discrete weights must be non-negative and sum to 1")
    return _evaluate(sample, schedule, plan, as_kernel(kernel), w, w, neighbors, {"kind": "discrete"})


def ate_discrete_estimated(sample, schedule, density_bw, plan, kernel=None, neighbors=3, influence="literal"):
    """Discrete aggregate with weights proportional to an estimated density of ``x``.

    The variance adds the weight-estimation influence to the jump influence
    before squaring, observation by observation.
    """
    kern = as_kernel(kernel)
    ew = discrete_weights_normalized(sample, schedule, density_bw, influence=influence)
    r = nn_residual_vectors(sample, schedule, neighbors)
    out = {}
    for tag, rho in (("", plan.rho1), ("_bc", plan.rho1 + 1)):
        js = estimate_jumps(sample, schedule, plan, kern, rho=rho)
        phi = r * js.combine(ew.weights)
        eta = ew.influence @ js.values
        out["mu" + tag] = float(ew.weights @ js.values)
        out["var" + tag] = float(np.sum((phi + eta) ** 2))
        out["h"] = js.h
    diag = {"kind": "discrete-estimated", "density": ew.density.tolist(), "density_bw": density_bw,
            "influence": influence}
    return AteResult(out["mu"], out["var"], out["mu_bc"], out["var_bc"], ew.weights, ew.weights,
                     plan, out["h"], diag)


def rate_guidance(schedule, basis, h2):
    """Messages for order and bandwidth choices outside the rate guidance."""
    msgs = []
    dim = PROFILE_DIMS[basis.profile]
    if basis.rho2 < dim:
        msgs.append(f"rho2={basis.rho2} is below the recommended minimum {dim} for a {dim}-dimensional profile")
    if np.isfinite(h2) and schedule.K * h2 ** dim < 1:
        msgs.append(f"K*h2^{dim} = {schedule.K * h2 ** dim:.3g} < 1: few cutoffs per second-step window")
    return msgs


def _check_basis(cf, basis, plan):
    if basis is None:
        basis = PolyBasis(plan.rho2, cf.profile)
    if basis.profile != cf.profile:
        raise RDDValidationError("basis and counterfactual profiles differ")
    return basis


def continuous_weights(schedule, cf, basis, h2, kernel=None, quad=None):
    """Correction weights at ``rho2`` and at ``rho2 + 1`` for one ``h2``."""
    w = correction_weights(schedule, cf, basis, h2, kernel, quad)
    w_bc = correction_weights(schedule, cf, basis.raised(), h2, kernel, quad)
    return w, w_bc


def ate_continuous(sample, schedule, cf, plan, kernel=None, basis=None, quad=None, neighbors=3,
                   weights=None, kernel2=None, warn=True):
    """Integrated local-fit estimator for a continuous counterfactual.

    Parameters
    ----------
    cf : CounterfactualSpec
        Continuous counterfactual.
    plan : BandwidthPlan
        Must carry ``h2``; ``np.inf`` gives the global (naive) fit.
    basis : PolyBasis, optional
        Defaults to ``PolyBasis(plan.rho2, cf.profile)``.
    weights : (CorrectionWeights, CorrectionWeights), optional
        Precomputed weights for the base and raised orders; they depend only
        on the design, so repeated calls can share them.
    kernel2 : KernelSpec, optional
        Second-step kernel, the first-step kernel by default.
    """
    if cf.kind != "continuous":
        raise RDDValidationError("ate_continuous needs a continuous counterfactual")
    if plan.h2 is None:
        raise RDDValidationError("continuous counterfactuals need h2 in the bandwidth plan")
    kern = as_kernel(kernel)
    basis = _check_basis(cf, basis, plan)
    if warn:
        for msg in rate_guidance(schedule, basis, plan.h2):
            warnings.warn(msg, RateWarning, stacklevel=2)
    if weights is None:
        weights = continuous_weights(schedule, cf, basis, plan.h2, kernel2 or kern, quad)
    w, w_bc = weights
    diag = {"kind": "continuous", "profile": cf.profile, "rho2": basis.rho2, "h2": plan.h2,
            "quadrature": {"nodes": w.nodes, "error": w.error, "error_bc": w_bc.error, "rule": w.rule}}
    return _evaluate(sample, schedule, plan, kern, w, w_bc, neighbors, diag)


@dataclass
class H2Selection:
    h2_star: float
    result: AteResult
    curve: dict
    infeasible: list

    @property
    def estimate(self):
        """The recommended deliverable: bias-corrected estimate and variance at ``h2_star``."""
        return self.result.mu_bc, self.result.variance_bc


def default_h2_grid(K):
    return [m / (K + 1) for m in range(3, 13)]


def select_h2(sample, schedule, cf, plan, kernel=None, basis=None, grid=None, quad=None, neighbors=3,
              weight_cache=None, kernel2=None):
    """Pick ``h2`` on a grid by minimising ``(mu - mu_bc)^2 + variance``.

    ``weight_cache`` may map ``h2`` to precomputed weight pairs.  Grid points
    whose correction weights cannot be computed are skipped and listed in
    ``infeasible``.
    """
    kern = as_kernel(kernel)
    basis = _check_basis(cf, basis, plan)
    grid = default_h2_grid(schedule.K) if grid is None else [float(g) for g in grid]
    if not grid:
        raise RDDValidationError("empty h2 grid")
    eps2 = nn_residuals(sample, schedule, neighbors)
    j0 = estimate_jumps(sample, schedule, plan, kern, rho=plan.rho1)
    j1 = estimate_jumps(sample, schedule, plan, kern, rho=plan.rho1 + 1)
    curve, bad, pairs = {}, [], {}
    for h2 in grid:
        try:
            if weight_cache is not None and h2 in weight_cache:
                pair = weight_cache[h2]
            else:
                pair = continuous_weights(schedule, cf, basis, h2, kernel2 or kern, quad)
                if weight_cache is not None:
                    weight_cache[h2] = pair
        except RDDNumericalError as exc:
            bad.append((h2, str(exc)))
            continue
        w, w_bc = pair
        mu = float(w.delta @ j0.values)
        mu_bc = float(w_bc.delta @ j1.values)
        var = float(aggregate_variance(j0, eps2, w.delta))
        curve[h2] = (mu - mu_bc) ** 2 + var
        pairs[h2] = pair
    if not curve:
        raise AllGridPointsInfeasible(f"no feasible h2 on the grid: {bad}")
    h2_star = min(curve, key=lambda g: (curve[g], g))
    res = ate_continuous(sample, schedule, cf, plan.replace(h2=h2_star), kern, basis, quad, neighbors,
                         weights=pairs[h2_star], warn=False)
    res.diagnostics["mse_curve"] = {str(k): v for k, v in curve.items()}
    return H2Selection(h2_star, res, curve, bad)
