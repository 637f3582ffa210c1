"""Statistical harnesses confronting MC ensembles with the limit theorems.

Every harness is a pure function of (config, seed): reruns produce identical
reports.  The CLT harness is an explicitly declared fixed-eps surrogate (the
true statement is a double limit no finite experiment reaches); the
exponential-integrability probe is a necessary-but-not-sufficient stability
check; the local-nondeterminism probe returns a fitted constant, never an
input.
"""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import ParameterError
from .fbm import RngStream, TimeGrid
from .functionals import (
    MollifierSpec,
    resolution_guard,
    run_ensemble,
    scaling_exponent,
)
from .gaussian_core import ModelConfig, SpdMatrix, conditional_variance, fbm_cov
from .moments import sigma_constant

__all__ = [
    "CltReport", "MomentGrowthReport",
    "clt_experiment", "moment_growth_probe", "exp_integrability_probe",
    "lnd_probe", "existence_boundary_sweep", "bootstrap_ci",
]


@dataclass
class CltReport:
    """Per-eps variance and KS-against-the-limit-law results."""

    H: float
    d: int
    t: float
    n: int
    count: int
    seed: int
    sigma_sq: float
    variance_rtol: float
    p_level: float
    rows: list = field(default_factory=list)

    @property
    def verdict(self):
        """True when the final-eps row meets both surrogate clauses."""
        if not self.rows:
            return False
        last = self.rows[-1]
        return bool(last["variance_ok"] and last["ks_ok"])

    def to_csv(self):
        buf = io.StringIO()
        buf.write("epsilon,variance,sigma_sq,variance_ratio,ks_stat,"
                  "ks_pvalue,variance_ok,ks_ok,count,resolution\n")
        for r in self.rows:
            buf.write(f"{r['epsilon']:.17g},{r['variance']:.17g},"
                      f"{self.sigma_sq:.17g},{r['variance_ratio']:.17g},"
                      f"{r['ks_stat']:.17g},{r['ks_pvalue']:.17g},"
                      f"{int(r['variance_ok'])},{int(r['ks_ok'])},"
                      f"{r['count']},{r['resolution']}\n")
        return buf.getvalue()

    def to_json(self):
        return json.dumps({
            "H": self.H, "d": self.d, "t": self.t, "n": self.n,
            "count": self.count, "seed": self.seed, "sigma_sq": self.sigma_sq,
            "variance_rtol": self.variance_rtol, "p_level": self.p_level,
            "verdict": self.verdict, "rows": self.rows,
        }, indent=2, sort_keys=True)


def clt_experiment(config, eps_ladder, n, count, seed, variance_rtol=0.25,
                   p_level=0.01, sampler="circulant", workers=1):
    """Fixed-eps CLT surrogate for the scaled self-intersection functional.

    For each eps: draw ``count`` scaled samples, compare the sample variance
    against the limiting constant, and run a one-sample KS test against the
    centered normal with that variance.  The mollifier-resolution guard
    escalates to an error when the kernel width falls under one grid step.
    """
    if scaling_exponent(config.d, 1, config.H) is None:
        raise ParameterError("CLT surrogate requires d in {2, 3}")
    sig = sigma_constant(config.d, config.H, config.t)
    k = tuple(1 if j == 0 else 0 for j in range(config.d))
    grid = TimeGrid(config.t, n)
    report = CltReport(H=config.H, d=config.d, t=config.t, n=n, count=count,
                       seed=seed, sigma_sq=sig, variance_rtol=variance_rtol,
                       p_level=p_level)
    for eps in eps_ladder:
        guard = resolution_guard(eps, grid, config.H)
        if guard == "error":
            raise ParameterError(
                f"mollifier width sqrt({eps}) is below the grid spacing "
                f"{grid.dt}; the estimate would be unresolved")
        spec = MollifierSpec(eps=eps, k=k)
        ens = run_ensemble(config, spec, n, count, seed, kind="dslt",
                           sampler=sampler, workers=workers)
        scaled = ens.scaled
        variance = float(scaled.var(ddof=1))
        ks = stats.kstest(scaled, stats.norm(loc=0.0, scale=math.sqrt(sig)).cdf)
        report.rows.append({
            "epsilon": eps,
            "variance": variance,
            "variance_ratio": variance / sig,
            "ks_stat": float(ks.statistic),
            "ks_pvalue": float(ks.pvalue),
            "variance_ok": bool(abs(variance - sig) <= variance_rtol * sig),
            "ks_ok": bool(ks.pvalue > p_level),
            "count": count,
            "resolution": guard,
        })
    return report


def bootstrap_ci(values, stat, n_boot=1000, seed=0, level=0.95):
    """Percentile bootstrap CI of ``stat`` over resamples of ``values``."""
    values = np.asarray(values)
    gen = RngStream(seed, 0).generator()
    idx = gen.integers(0, len(values), size=(n_boot, len(values)))
    boots = np.array([stat(values[row]) for row in idx])
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


@dataclass
class MomentGrowthReport:
    """MC moment estimates normalized by the factorial growth bound."""

    theta: float
    eps: float
    count: int
    seed: int
    rows: list = field(default_factory=list)
    heavy_tail: bool = False

    def to_csv(self):
        buf = io.StringIO()
        buf.write("order,moment,ci_lo,ci_hi,normalized\n")
        for r in self.rows:
            buf.write(f"{r['order']},{r['moment']:.17g},{r['ci_lo']:.17g},"
                      f"{r['ci_hi']:.17g},{r['normalized']:.17g}\n")
        return buf.getvalue()


def moment_growth_probe(config, spec, orders, count, seed, n=128,
                        kind="dilt", sampler="circulant", workers=1,
                        n_boot=1000):
    """MC estimates of E[|functional|^m] with bootstrap CIs.

    The normalized statistic g(m) = E[|X|^m]^{1/m} / (m!)^{theta/m} with
    theta = |k| + |k|H + dH should stay bounded across orders when the
    factorial growth bound holds with a finite constant.
    """
    orders = sorted(set(int(m) for m in orders))
    if any(m < 1 or m > 4 for m in orders):
        raise ParameterError("orders must lie in {1, 2, 3, 4}")
    exists = config.dilt_exists if kind == "dilt" else config.dslt_exists
    if not exists:
        warnings.warn("existence condition violated; moments may diverge as "
                      "eps -> 0", stacklevel=2)
    ens = run_ensemble(config, spec, n, count, seed, kind=kind,
                       sampler=sampler, workers=workers)
    absraw = np.abs(ens.raw)
    theta = config.theta
    report = MomentGrowthReport(theta=theta, eps=spec.eps, count=count,
                                seed=seed)
    for m in orders:
        est = float(np.mean(absraw ** m))
        lo, hi = bootstrap_ci(absraw, lambda v, m=m: float(np.mean(v ** m)),
                              n_boot=n_boot, seed=seed + m)
        norm = est ** (1.0 / m) / math.exp(theta / m * math.lgamma(m + 1.0))
        if (hi - lo) > 0.5 * abs(est):
            report.heavy_tail = True
        report.rows.append({"order": m, "moment": est, "ci_lo": lo,
                            "ci_hi": hi, "normalized": norm})
    return report


def exp_integrability_probe(config, spec, beta, m_const, count, seed, n=128,
                            kind="dilt", sampler="circulant", workers=1):
    """Prefix-stability probe of E[exp(M |X|^beta)].

    Means over the first N/4, N/2 and N samples are accumulated with
    log-sum-exp so overflow shows up as instability, not a crash.  The
    verdict (last two prefix means within 10%) is a NECESSARY condition
    only: no finite sample proves integrability.
    """
    if beta < 0:
        raise ParameterError(f"beta must be >= 0, got {beta}")
    in_regime = beta < config.beta_max
    ens = run_ensemble(config, spec, n, count, seed, kind=kind,
                       sampler=sampler, workers=workers)
    absraw = np.abs(ens.raw)
    log_terms = m_const * absraw ** beta
    prefix_log_means = []
    for frac in (4, 2, 1):
        size = max(2, count // frac)
        prefix_log_means.append(
            float(logsumexp(log_terms[:size]) - math.log(size)))
    last, prev = prefix_log_means[-1], prefix_log_means[-2]
    stable = abs(math.expm1(last - prev)) <= 0.10
    return {
        "beta": beta, "M": m_const, "beta_max": config.beta_max,
        "in_regime": bool(in_regime), "count": count, "seed": seed,
        "log_prefix_means": prefix_log_means,
        "stable": bool(stable),
        "note": "necessary-but-not-sufficient stability check",
    }


def lnd_probe(H, grid_sizes=(8, 16, 32), radii=(0.05, 0.1, 0.2, 0.4), t=1.0):
    """Fitted local-nondeterminism constant.

    For each grid, target time and radius r, conditions the target on every
    grid point at distance > r and forms Var(B_target | ...) / r^{2H}; the
    probe returns the minimum ratio, which must be strictly positive.
    """
    if not (0.0 < H < 1.0):
        raise ParameterError(f"H must be in (0,1), got {H}")
    best = math.inf
    argbest = None
    for n in grid_sizes:
        times = TimeGrid(t, n).times
        gram = SpdMatrix(fbm_cov(times[None, :], times[:, None], H))
        for i, ti in enumerate(times):
            for r in radii:
                if r >= t:
                    continue
                given = [j for j in range(n) if abs(times[j] - ti) > r]
                if not given:
                    continue
                ratio = conditional_variance(gram, i, given) / r ** (2 * H)
                if ratio < best:
                    best = ratio
                    argbest = {"n": n, "t_index": i, "radius": r}
    if argbest is None:
        raise ParameterError("no admissible (target, radius) pair on the grids")
    return {"H": H, "t": t, "kappa": float(best), "at": argbest,
            "positive": bool(best > 0.0)}


def existence_boundary_sweep(k, d, h_ladder, eps_ladder, count, seed, n=128,
                             kind="dilt", sampler="circulant", workers=1):
    """Sample-variance trend of the functional across (H, eps).

    Expected pattern: the variance stabilizes along the eps ladder when the
    existence condition holds and grows without bound when it fails.
    """
    rows = []
    for H in h_ladder:
        config = ModelConfig(H=H, d=d, k=k, t=1.0)
        exists = config.dilt_exists if kind == "dilt" else config.dslt_exists
        variances = []
        for eps in eps_ladder:
            spec = MollifierSpec(eps=eps, k=k)
            ens = run_ensemble(config, spec, n, count, seed, kind=kind,
                               sampler=sampler, workers=workers)
            variances.append(float(ens.raw.var(ddof=1)))
        monotone_growth = all(b > a for a, b in zip(variances, variances[1:]))
        rows.append({"H": H, "exists": bool(exists),
                     "eps_ladder": list(eps_ladder),
                     "variances": variances,
                     "monotone_growth": bool(monotone_growth)})
    return {"k": list(MollifierSpec(eps=1.0, k=k).k.entries), "d": d,
            "kind": kind, "n": n, "count": count, "seed": seed, "rows": rows}
