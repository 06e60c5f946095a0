"""Monte Carlo engine for the cubic many-cutoff design.

``Y = phi(X) D(X) + eps`` with ``X ~ U[0, 1]``, ``K = floor(n**0.4)`` cutoffs
at ``j / (K + 1)`` and dose ``j + 1`` on segment ``j``.  Every cutoff raises
the dose by one, so the jump at ``c`` is ``phi(c)`` and the average effect
of a unit dose increase over a uniform cutoff is ``int_0^1 phi = -1``.
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bandwidth import BandwidthRule
from .core import BandwidthPlan, CounterfactualSpec, CutoffSchedule, Sample, as_kernel, nn_residuals
from .errors import RDDError, RDDValidationError
from .lpr import estimate_jumps
from .quadrature import QuadratureConfig
from .sharp import Z95, aggregate_variance, continuous_weights, default_h2_grid
from .weights import PolyBasis

ESTIMATORS = ("mu", "mu_bc", "naive", "naive_bc")
H1_MODES = ("overlap", "no_overlap", "data_driven")
THREADS_ENV = "MULTIRDD_THREADS"


def cutoff_count(n):
    """``floor(n**0.4)`` computed exactly in integers."""
    n = int(n)
    K = max(1, int(round(n ** 0.4)))
    while (K + 1) ** 5 <= n * n:
        K += 1
    while K > 1 and K ** 5 > n * n:
        K -= 1
    return K


@dataclass(frozen=True)
class DgpConfig:
    n: int
    K: int | None = None
    phi: tuple = (15.0, 7.5, -18.75, 2.125)
    noise_sd: float = 1.0
    kernel: str = "triangular"

    def __post_init__(self):
        if self.n < 2:
            raise RDDValidationError("n must be at least 2")
        if self.K is None:
            object.__setattr__(self, "K", cutoff_count(self.n))
        if self.K < 1:
            raise RDDValidationError("K must be positive")
        object.__setattr__(self, "phi", tuple(float(v) for v in self.phi))

    @property
    def schedule(self):
        K = self.K
        c = np.arange(1, K + 1) / (K + 1)
        return CutoffSchedule.from_doses(c, np.arange(1, K + 2), (0.0, 1.0))

    def phi_of(self, x):
        a3, a2, a1, a0 = self.phi
        return ((a3 * x + a2) * x + a1) * x + a0

    @property
    def true_ate(self):
        a3, a2, a1, a0 = self.phi
        return a3 / 4 + a2 / 3 + a1 / 2 + a0

    @property
    def counterfactual(self):
        return CounterfactualSpec.uniform("cutoff-only", [(0.0, 1.0)])


def rep_generator(seed, rep):
    """Independent counter-based stream for replication ``rep``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(rep),))))


def draw_sample(cfg, seed, rep=None):
    """One sample from the design; ``rep`` selects a replication stream."""
    rng = rep_generator(seed, 0 if rep is None else rep)
    x = rng.uniform(0.0, 1.0, cfg.n)
    eps = rng.standard_normal(cfg.n) * cfg.noise_sd
    y = cfg.phi_of(x) * cfg.schedule.treatment(x) + eps
    return Sample(y, x)


@dataclass
class EstimatorSummary:
    bias: float
    variance: float
    mse: float
    coverage: float
    length: float
    mean_vhat: float
    reps: int

    def to_dict(self):
        return asdict(self)


@dataclass
class McReport:
    config: dict
    reps: int
    seed: int
    estimators: dict
    failures: int
    failure_messages: list
    excluded: bool
    h2_chosen: dict = field(default_factory=dict)
    h1_mean: list = field(default_factory=list)

    def to_dict(self):
        return {
            "schema_version": 1,
            "config": self.config,
            "reps": self.reps,
            "seed": self.seed,
            "estimators": {k: v.to_dict() for k, v in self.estimators.items()},
            "failures": self.failures,
            "failure_messages": self.failure_messages[:10],
            "excluded": self.excluded,
            "h2_chosen": {str(k): v for k, v in self.h2_chosen.items()},
            "h1_mean": self.h1_mean,
        }

    def table_rows(self):
        rows = []
        for name, s in self.estimators.items():
            rows.append({
                "n": self.config["n"], "K": self.config["K"], "h1_mode": self.config["h1_mode"],
                "h2_rule": self.config["h2_rule"], "estimator": name,
                "bias": s.bias, "variance": s.variance, "mse": s.mse,
                "coverage": s.coverage, "length": s.length,
            })
        return rows

    def to_csv(self):
        buf = io.StringIO()
        rows = self.table_rows()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()


@dataclass(frozen=True)
class _Study:
    cfg: DgpConfig
    estimators: tuple
    h1_mode: str
    h2_rule: str
    lambda1: float
    ik_subsample: str
    grid: tuple
    quad: QuadratureConfig


def _parse_h2_rule(rule, K):
    if rule == "select":
        return None
    if isinstance(rule, str) and rule.startswith("fixed:"):
        return float(rule.split(":", 1)[1]) / (K + 1)
    if isinstance(rule, (int, float)):
        return float(rule)
    raise RDDValidationError(f"unknown h2 rule {rule!r}; use 'fixed:<m>' or 'select'")


_CACHE = {}


def _weights(study, rho2, h2):
    """Correction weights are fixed by the design; compute each pair once per process."""
    key = (study.cfg.K, study.cfg.kernel, rho2, h2, study.quad)
    if key not in _CACHE:
        basis = PolyBasis(rho2, "cutoff-only")
        w, wb = continuous_weights(study.cfg.schedule, study.cfg.counterfactual, basis, h2,
                                   study.cfg.kernel, study.quad)
        _CACHE[key] = (w.delta, wb.delta)
    return _CACHE[key]


def _one_rep(study, seed, rep):
    cfg = study.cfg
    sch = cfg.schedule
    K = cfg.K
    s = draw_sample(cfg, seed, rep)
    if study.h1_mode == "overlap":
        h1 = np.full(K, 1.0 / (K + 1))
    elif study.h1_mode == "no_overlap":
        h1 = np.full(K, 0.5 / (K + 1))
    else:
        h1 = BandwidthRule("ik", study.lambda1, subsample=study.ik_subsample).bandwidths(s, sch)
    plan = BandwidthPlan(tuple(h1), None, 1, 1)
    kern = as_kernel(cfg.kernel)
    eps2 = nn_residuals(s, sch)
    j1 = estimate_jumps(s, sch, plan, kern, rho=1)
    j2 = estimate_jumps(s, sch, plan, kern, rho=2)
    h2 = _parse_h2_rule(study.h2_rule, K)
    if h2 is None:
        best = None
        for g in study.grid:
            w, wb = _weights(study, 1, g)
            mse = (w @ j1.values - wb @ j2.values) ** 2 + aggregate_variance(j1, eps2, w)
            if best is None or mse < best[0]:
                best = (mse, g)
        h2 = best[1]
    out = {"h2": h2, "h1": float(np.mean(j1.h))}
    want = set(study.estimators)
    if want & {"mu", "mu_bc"}:
        w, wb = _weights(study, 1, h2)
        out["mu"] = (float(w @ j1.values), float(aggregate_variance(j1, eps2, w)))
        out["mu_bc"] = (float(wb @ j2.values), float(aggregate_variance(j2, eps2, wb)))
    if want & {"naive", "naive_bc"}:
        wn = np.full(K, 1.0 / K)
        out["naive"] = (float(wn @ j1.values), float(aggregate_variance(j1, eps2, wn)))
        out["naive_bc"] = (float(wn @ j2.values), float(aggregate_variance(j2, eps2, wn)))
    return out


def _run_chunk(args):
    study, seed, reps = args
    res = []
    for r in reps:
        try:
            res.append((r, _one_rep(study, seed, r), None))
        except RDDError as exc:
            res.append((r, None, f"rep {r}: {type(exc).__name__}: {exc}"))
    return res


def default_workers():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_study(cfg, reps, estimators=ESTIMATORS, h1_mode="overlap", h2_rule="fixed:3", seed=0,
              workers=None, lambda1=0.5, grid=None, quad=None, ik_subsample="full"):
    """Replicate the design ``reps`` times and summarise each estimator.

    Parameters
    ----------
    h1_mode : {"overlap", "no_overlap", "data_driven"}
        ``1/(K+1)``, ``0.5/(K+1)`` or plug-in bandwidths rate-adjusted with ``lambda1``.
    h2_rule : str
        ``"fixed:m"`` for ``h2 = m/(K+1)`` or ``"select"`` for the grid
        search of each replication.
    ik_subsample : {"full", "pooled"}
        Data handed to the plug-in rule in the data-driven mode.
    workers : int, optional
        Worker processes; defaults to the ``MULTIRDD_THREADS`` variable or 1.
        Results do not depend on it.
    """
    if reps < 1:
        raise RDDValidationError("reps must be at least 1")
    if h1_mode not in H1_MODES:
        raise RDDValidationError(f"unknown h1 mode {h1_mode!r}")
    bad = set(estimators) - set(ESTIMATORS)
    if bad:
        raise RDDValidationError(f"unknown estimators {sorted(bad)}")
    _parse_h2_rule(h2_rule, cfg.K)
    grid = tuple(default_h2_grid(cfg.K) if grid is None else grid)
    study = _Study(cfg, tuple(estimators), h1_mode, h2_rule, lambda1, ik_subsample, grid, quad or QuadratureConfig())
    workers = default_workers() if workers is None else max(1, int(workers))
    idx = list(range(reps))
    if workers == 1:
        results = _run_chunk((study, seed, idx))
    else:
        chunks = [idx[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_chunk, [(study, seed, c) for c in chunks]))
        results = sorted((r for p in parts for r in p), key=lambda t: t[0])
    ok = [r[1] for r in results if r[1] is not None]
    msgs = [r[2] for r in results if r[2] is not None]
    nfail = len(msgs)
    excluded = nfail > 0 and nfail < 0.001 * reps
    usable = nfail == 0 or excluded
    summaries = {}
    for name in estimators:
        if not usable or not ok:
            summaries[name] = EstimatorSummary(*(float("nan"),) * 6, len(ok))
            continue
        est = np.array([o[name][0] for o in ok])
        vh = np.array([o[name][1] for o in ok])
        summaries[name] = summarize(est, vh, cfg.true_ate)
    h2s = {}
    for o in ok:
        h2s[o["h2"]] = h2s.get(o["h2"], 0) + 1
    conf = {"n": cfg.n, "K": cfg.K, "phi": list(cfg.phi), "noise_sd": cfg.noise_sd, "kernel": cfg.kernel,
            "h1_mode": h1_mode, "h2_rule": h2_rule, "lambda1": lambda1, "ik_subsample": ik_subsample, "true_ate": cfg.true_ate}
    h1m = [float(np.mean([o["h1"] for o in ok]))] if ok else []
    return McReport(conf, reps, int(seed), summaries, nfail, msgs, excluded, h2s, h1m)


def summarize(est, vhat, truth):
    """Bias, variance (over replications), MSE and 95% interval coverage."""
    est = np.asarray(est, dtype=float)
    vhat = np.asarray(vhat, dtype=float)
    err = est - truth
    bias = float(err.mean())
    var = float(np.mean((est - est.mean()) ** 2))
    mse = float(np.mean(err ** 2))
    se = np.sqrt(np.maximum(vhat, 0.0))
    cover = float(np.mean(np.abs(err) <= Z95 * se))
    return EstimatorSummary(bias, var, mse, cover, float(np.mean(2 * Z95 * se)), float(vhat.mean()), est.size)
