"""Exact and quadrature evaluation of the second-moment structure.

Covers the three-region decomposition of the self-intersection functional's
second moment, the limiting CLT variance constants in closed form and as a
3-d quadrature, the first-chaos norms, the intersection functional's n=2
moment as a 4-d quadrature, Wick/Isserlis Gaussian moments, and the chaos
kernel coefficients.

Region conventions (gap variables a, b, c >= 0 for two time intervals
[r, s] and [r', s'] inside [0, t]):

  region 1 (interleaved, r < r' < s < s'):  a = r'-r, b = s-r', c = s'-s
  region 2 (nested,      r < r' < s' < s):  a = r'-r, b = s'-r', c = s-s'
  region 3 (disjoint,    r < s < r' < s'):  a = s-r,  b = r'-s,  c = s'-r'

lambda and rho are the 2H-th powers of the two increment lengths, mu is the
increment covariance.  Integrating out the free time translation leaves the
volume factor (t - a - b - c) on {a + b + c <= t}.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import OutOfRegimeError, ParameterError
from .gaussian_core import MultiIndex, SpdMatrix, fbm_cov, log_beta
from .quadrature import (
    QuadratureResult,
    integrate_unit_cube,
    map_halfline,
    map_power,
    map_stretch_to_one,
)

__all__ = [
    "RegionParams", "ChaosCoefficient",
    "region_params", "region_mu", "region_lambda_rho",
    "sigma_constant", "limiting_integral", "v_integral", "first_chaos_norm",
    "gaussian_moment", "dilt_second_moment", "chaos_kernel_coefficient",
    "scaled_power", "moment_report_rows", "moment_report_csv",
]

DEFAULT_BUDGET = 20_000_000


@dataclass(frozen=True)
class RegionParams:
    """Increment variances/covariance for one ordered region."""

    region: int
    lam: float
    rho: float
    mu: float
    a: float
    b: float
    c: float
    H: float


def _second_difference(b, x, y, twoH):
    """0.5*((b+x+y)^2H + b^2H - (b+x)^2H - (b+y)^2H), stable for x+y << b.

    This is the disjoint-region covariance; the direct expression loses all
    precision when x + y is tiny relative to b, so a 6-term Taylor expansion
    around b takes over below a relative threshold.
    """
    b = np.asarray(b, dtype=float)
    x = np.broadcast_to(np.asarray(x, dtype=float), b.shape)
    y = np.broadcast_to(np.asarray(y, dtype=float), b.shape)
    out = 0.5 * ((b + x + y) ** twoH + b ** twoH
                 - (b + x) ** twoH - (b + y) ** twoH)
    small = (x + y) < 1e-2 * b
    if np.any(small):
        bs, xs, ys = b[small], x[small], y[small]
        acc = np.zeros_like(bs)
        deriv = twoH * (twoH - 1.0) * bs ** (twoH - 2.0)
        fact = 2.0
        for m in range(2, 8):
            acc += deriv / fact * ((xs + ys) ** m - xs ** m - ys ** m)
            deriv = deriv * (twoH - m) / bs
            fact *= m + 1
        out[small] = 0.5 * acc
    return out


def region_mu(region, a, b, c, H):
    """Increment covariance mu on the given region (vectorized)."""
    twoH = 2.0 * H
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if region == 1:
        return 0.5 * ((a + b + c) ** twoH + b ** twoH - a ** twoH - c ** twoH)
    if region == 2:
        return 0.5 * ((a + b) ** twoH + (b + c) ** twoH - a ** twoH - c ** twoH)
    if region == 3:
        return _second_difference(b, a, c, twoH)
    raise ParameterError(f"region must be 1, 2 or 3, got {region}")


def region_lambda_rho(region, a, b, c, H):
    """(lambda, rho) = increment-length^2H for the two intervals."""
    twoH = 2.0 * H
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if region == 1:
        return (a + b) ** twoH, (b + c) ** twoH
    if region == 2:
        return (a + b + c) ** twoH, b ** twoH
    if region == 3:
        return a ** twoH, c ** twoH
    raise ParameterError(f"region must be 1, 2 or 3, got {region}")


def region_params(region, a, b, c, H):
    if min(a, b, c) < 0:
        raise ParameterError("gap variables must be >= 0")
    if not (0.0 < H < 1.0):
        raise ParameterError(f"H must be in (0,1), got {H}")
    lam, rho = region_lambda_rho(region, a, b, c, H)
    mu = region_mu(region, a, b, c, H)
    return RegionParams(region=region, lam=float(lam), rho=float(rho),
                        mu=float(mu), a=a, b=b, c=c, H=H)


def _check_regime(d, H, action="raise"):
    ok = (d == 2 and 0.5 < H < 1.0) or (d == 3 and 0.5 < H < 2.0 / 3.0)
    if ok:
        return True
    msg = (f"(d={d}, H={H}) is outside the proven CLT regimes "
           f"(d=2 with 1/2<H<1, d=3 with 1/2<H<2/3)")
    if action == "raise":
        raise OutOfRegimeError(msg)
    warnings.warn(msg, stacklevel=3)
    return False


def sigma_constant(d, H, t):
    """Closed-form limiting CLT variance.

    sigma^2 = (2H-1) t^{2H} / (2H (2 pi)^d) * B(2, 2H-1)
              * B(1/H, (dH + 2H - 2)/(2H))^2,
    which reduces to the d=2 and d=3 constants of the limit theorems.
    Evaluated via log-Gamma; strictly positive in regime.
    """
    _check_regime(d, H, action="raise")
    if t <= 0:
        raise ParameterError(f"t must be > 0, got {t}")
    b1 = log_beta(2.0, 2.0 * H - 1.0)
    b2 = log_beta(1.0 / H, (d * H + 2.0 * H - 2.0) / (2.0 * H))
    log_val = (math.log(2.0 * H - 1.0) + 2.0 * H * math.log(t)
               - math.log(2.0 * H) - d * math.log(2.0 * math.pi)
               + b1 + 2.0 * b2)
    return math.exp(log_val)


def scaled_power(d, H):
    """Power p such that eps^p * E[|functional|^2] has a finite limit."""
    return (d + 2.0) - 2.0 / H


def limiting_integral(d, H, t, rel_tol=1e-6, max_evals=DEFAULT_BUDGET):
    """3-d quadrature of the limiting second-moment integrand

        (2/(2 pi)^d) H(2H-1) a c b^{2H-2} (t-b)
            / [(1+a^{2H})(1+c^{2H})]^{d/2+1}

    over [0,inf)^2 x [0,t], mapped to the unit cube (a,c by u/(1-u), b by the
    power stretch that removes the b^{2H-2} endpoint).  Must reproduce
    sigma_constant; this is the numerical verification of the Beta-function
    factorization.
    """
    _check_regime(d, H, action="raise")
    twoH = 2.0 * H
    expo = 0.5 * d + 1.0
    pref = 2.0 / (2.0 * math.pi) ** d * H * (twoH - 1.0)
    stretch = 1.0 / (twoH - 1.0)

    def f(p):
        a, ja = map_halfline(p[:, 0])
        b, jb = map_power(p[:, 1], t, stretch)
        c, jc = map_halfline(p[:, 2])
        val = a * c * b ** (twoH - 2.0) * (t - b)
        val /= ((1.0 + a ** twoH) * (1.0 + c ** twoH)) ** expo
        return val * ja * jb * jc

    res = integrate_unit_cube(f, 3, rel_tol=rel_tol, max_evals=max_evals)
    return QuadratureResult(pref * res.value, pref * res.abs_error,
                            res.evals, res.converged)


def v_integral(region, eps, H, t, d, rel_tol=1e-6, max_evals=DEFAULT_BUDGET,
               force_zero_mu=False, tilde=False):
    """V_region(eps): one region's contribution to the second moment,

        (2/(2 pi)^d) int 1_{a+b+c<=t} (t-a-b-c)
                     |eps I + Sigma|^{-d/2-1} |mu| da db dc,

    with |eps I + Sigma| = (eps+lambda)(eps+rho) - mu^2.  With tilde=True the
    determinant is replaced by the uncoupled product
    ((eps+lambda)(eps+rho))^{d/2+1}, which is the first-chaos norm integrand.

    The quadrature runs in eps^{1/2H}-scaled gap coordinates (regions 1, 2:
    all three gaps; region 3: the two increment gaps, with the b-axis power
    stretch), so small eps costs no more than large eps.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    if region not in (1, 2, 3):
        raise ParameterError(f"region must be 1, 2 or 3, got {region}")
    _check_regime(d, H, action="warn")
    twoH = 2.0 * H
    expo = 0.5 * d + 1.0
    pref = 2.0 / (2.0 * math.pi) ** d
    delta = eps ** (1.0 / twoH)

    if region in (1, 2):
        # all gaps in units of delta = eps^{1/2H}: the gap volume gives
        # eps^{3/2H}, mu scales by eps, the determinant by eps^{-2 expo}
        mult = pref * eps ** (3.0 / twoH - d - 1.0)

        def f(p):
            a, ja = map_halfline(p[:, 0])
            b, jb = map_halfline(p[:, 1])
            c, jc = map_halfline(p[:, 2])
            total = a + b + c
            mask = delta * total < t
            lam, rho = region_lambda_rho(region, a, b, c, H)
            mu = region_mu(region, a, b, c, H)
            if force_zero_mu:
                mu = np.zeros_like(mu)
            if tilde:
                den = ((1.0 + lam) * (1.0 + rho)) ** expo
            else:
                den = ((1.0 + lam) * (1.0 + rho) - mu * mu) ** expo
            val = np.where(mask, (t - delta * total) * np.abs(mu) / den, 0.0)
            return val * ja * jb * jc
    else:
        # only the increment gaps scale by delta; b stays macroscopic with
        # its b^{2H-2}-shaped feature flattened by the power stretch.  The
        # raw mu (order eps^{1/H}) is integrated as is.
        mult = pref * eps ** (1.0 / H - 2.0 * expo)
        stretch = 1.0 / (twoH - 1.0) if twoH > 1.0 else 1.0

        def f(p):
            a, ja = map_halfline(p[:, 0])
            b, jb = map_power(p[:, 1], t, stretch)
            c, jc = map_halfline(p[:, 2])
            gap = b + delta * (a + c)
            mask = gap < t
            mu = _second_difference(b, delta * a, delta * c, twoH)
            if force_zero_mu:
                mu = np.zeros_like(mu)
            if tilde:
                den = ((1.0 + a ** twoH) * (1.0 + c ** twoH)) ** expo
            else:
                den = ((1.0 + a ** twoH) * (1.0 + c ** twoH)
                       - (mu / eps) ** 2) ** expo
            val = np.where(mask, (t - gap) * np.abs(mu) / den, 0.0)
            return val * ja * jb * jc

    res = integrate_unit_cube(f, 3, rel_tol=rel_tol, max_evals=max_evals)
    return QuadratureResult(mult * res.value, mult * res.abs_error,
                            res.evals, res.converged)


def first_chaos_norm(eps, H, t, d, rel_tol=1e-6, max_evals=DEFAULT_BUDGET):
    """Per-region first-chaos norms (Vt_1, Vt_2, Vt_3).

    Same regions and volume factor as v_integral, with the coupled
    determinant replaced by the product ((lambda+eps)(rho+eps))^{d/2+1}; the
    numerator is the increment covariance itself.  Their sum is the squared
    norm of the first chaos component and is dominated by the full second
    moment (orthogonality of the chaos decomposition).
    """
    return tuple(v_integral(region, eps, H, t, d, rel_tol=rel_tol,
                            max_evals=max_evals, tilde=True)
                 for region in (1, 2, 3))


def _pairings(items):
    """All perfect matchings of a list (3 for 4 items, 1 for 2, else small)."""
    if not items:
        yield ()
        return
    first = items[0]
    for j in range(1, len(items)):
        rest = items[1:j] + items[j + 1:]
        for sub in _pairings(rest):
            yield ((first, items[j]),) + sub


def gaussian_moment(m, powers):
    """Normalized Gaussian polynomial moment

        (2 pi)^{-n/2} int exp(-xi^T M xi / 2) prod xi_i^{p_i} dxi
        = det(M)^{-1/2} E[prod Z_i^{p_i}],  Z ~ N(0, M^{-1}),

    via the Wick/Isserlis pairing sum.  Exactly 0 for odd total power;
    total power above 4 is rejected (pairing count explodes).
    """
    if not isinstance(m, SpdMatrix):
        m = SpdMatrix(m)
    powers = [int(p) for p in powers]
    if len(powers) != m.dim:
        raise ParameterError(
            f"{len(powers)} powers for a {m.dim}-dimensional matrix")
    if any(p < 0 for p in powers):
        raise ParameterError("powers must be >= 0")
    total = sum(powers)
    if total % 2 == 1:
        return 0.0
    if total > 4:
        raise ParameterError(
            f"total power {total} exceeds the implemented Wick budget (4)")
    norm = math.exp(-0.5 * m.logdet())
    if total == 0:
        return norm
    cov = m.inv()
    idx = [i for i, p in enumerate(powers) for _ in range(p)]
    wick = 0.0
    for pairing in _pairings(idx):
        term = 1.0
        for (i, j) in pairing:
            term *= cov[i, j]
        wick += term
    return norm * wick


def dilt_second_moment(eps, H, d, k, rel_tol=1e-7, max_evals=DEFAULT_BUDGET,
                       allow_out_of_regime=False):
    """E[(intersection functional)^2] at bandwidth eps, |k| <= 1, by 4-d
    quadrature over the two time pairs in [0,1]^2 x [0,1]^2.

    The integrand is the two-point mollifier correlation
    (-1)^{|k|} (2 pi)^{-d} prod_j gaussian_moment(M, (k_j, k_j)) with
    M = A + eps I and A the 2x2 increment covariance
    A_{ll'} = cov(s_l, s_{l'}) + cov(r_l, r_{l'}); for |k| <= 1 this reduces
    to det(M)^{-d/2} (k = 0) or A_12 det(M)^{-d/2-1} (|k| = 1).

    Integration runs over ordered time pairs (two triangle fragments, each
    mapped to the unit cube with an endpoint stretch), which turns the
    |s1-s2|^{2H} and |r1-r2|^{2H} kinks into endpoint features.
    """
    k = MultiIndex.of(k)
    if k.dim != d:
        raise ParameterError(f"multi-index length {k.dim} does not match d={d}")
    if k.order > 1:
        raise ParameterError(
            f"dilt_second_moment supports |k| <= 1, got |k| = {k.order}")
    if eps <= 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    exists = 2 * k.order * H + H * d < 2.0
    if not exists:
        if not allow_out_of_regime:
            raise ParameterError(
                f"existence condition 2|k|H + Hd < 2 fails for |k|={k.order}, "
                f"H={H}, d={d}; pass allow_out_of_regime=True to proceed")
        warnings.warn(
            "existence condition violated; the eps -> 0 limit diverges",
            stacklevel=2)
    twoH = 2.0 * H
    gamma = max(2.0, math.ceil(3.0 / twoH))
    first_order = k.order == 1

    def make_fragment(r_desc):
        def f(p):
            ps, us, pr, ur = p[:, 0], p[:, 1], p[:, 2], p[:, 3]
            qs, js = map_stretch_to_one(us, gamma)
            qr, jr = map_stretch_to_one(ur, gamma)
            s1, s2 = ps * qs, ps
            if r_desc:
                r1, r2 = pr, pr * qr
            else:
                r1, r2 = pr * qr, pr
            m11 = s1 ** twoH + r1 ** twoH + eps
            m22 = s2 ** twoH + r2 ** twoH + eps
            m12 = (fbm_cov(s1, s2, H) + fbm_cov(r1, r2, H))
            det = m11 * m22 - m12 * m12
            if first_order:
                val = m12 * det ** (-0.5 * d - 1.0)
            else:
                val = det ** (-0.5 * d)
            return (2.0 * math.pi) ** (-d) * val * ps * pr * js * jr
        return f

    value = 0.0
    abs_error = 0.0
    evals = 0
    converged = True
    for r_desc in (False, True):
        res = integrate_unit_cube(make_fragment(r_desc), 4, rel_tol=rel_tol,
                                  max_evals=max_evals // 2)
        value += 2.0 * res.value
        abs_error += 2.0 * res.abs_error
        evals += res.evals
        converged = converged and res.converged
    return QuadratureResult(value, abs_error, evals, converged)


@dataclass(frozen=True)
class ChaosCoefficient:
    """Scalar coefficient of one index tuple in the chaos-kernel expansion."""

    q: int
    indices: tuple
    counts: tuple
    coefficient: float
    radial_exponent: float


def _double_factorial(n):
    """(n)!! with the empty-product conventions (-1)!! = 0!! = 1."""
    if n <= 0:
        return 1.0
    out = 1.0
    while n > 1:
        out *= n
        n -= 2
    return out


def chaos_kernel_coefficient(k, q, indices):
    """Coefficient of the order-q chaos kernel at one index tuple.

    Requires k = (|k|, 0, ..., 0) with |k| odd (the expansion's assumption)
    and odd q (even-order kernels vanish identically).  The scalar is

        (-1)^{(|k|+q)/2} (2 pi)^{-d/2} (|k|+q_1-1)!! prod_{j>=2} (q_j-1)!!

    when |k|+q_1 and every q_j (j >= 2) are even, else exactly 0; the
    radial denominator power is (|k|+q+d)/2.
    """
    k = MultiIndex.of(k)
    if k.order % 2 == 0 or k.order < 1:
        raise ParameterError(f"|k| must be odd and >= 1, got {k.order}")
    if any(e != 0 for e in k.entries[1:]) or k.entries[0] != k.order:
        raise ParameterError(
            f"chaos expansion assumes k = (|k|, 0, ..., 0), got {k.entries}")
    if q % 2 == 0:
        raise ParameterError(
            f"even chaos order q={q} has an identically zero kernel")
    indices = tuple(int(i) for i in indices)
    if len(indices) != q:
        raise ParameterError(f"index tuple length {len(indices)} != q = {q}")
    d = k.dim
    if any(not (1 <= i <= d) for i in indices):
        raise ParameterError(f"indices must lie in 1..{d}")
    counts = tuple(sum(1 for i in indices if i == j + 1) for j in range(d))
    first = k.order + counts[0]
    vanishes = (first % 2 == 1) or any(c % 2 == 1 for c in counts[1:])
    if vanishes:
        coeff = 0.0
    else:
        coeff = (-1.0) ** ((k.order + q) // 2) * (2.0 * math.pi) ** (-0.5 * d)
        coeff *= _double_factorial(first - 1)
        for c in counts[1:]:
            coeff *= _double_factorial(c - 1)
    return ChaosCoefficient(q=q, indices=indices, counts=counts,
                            coefficient=coeff,
                            radial_exponent=0.5 * (k.order + q + d))


def moment_report_rows(d, H, t, eps_ladder, rel_tol=1e-6,
                       max_evals=DEFAULT_BUDGET):
    """Rows of the per-constant report: V decomposition, scaled sums, the
    scaled first-chaos dominant term, and the closed-form constant."""
    sig = sigma_constant(d, H, t)
    power = scaled_power(d, H)
    rows = []
    for eps in eps_ladder:
        vs = [v_integral(r, eps, H, t, d, rel_tol=rel_tol,
                         max_evals=max_evals) for r in (1, 2, 3)]
        vt3 = v_integral(3, eps, H, t, d, rel_tol=rel_tol,
                         max_evals=max_evals, tilde=True)
        scale = eps ** power
        rows.append({
            "d": d, "H": H, "t": t, "epsilon": eps,
            "V1": vs[0].value, "V2": vs[1].value, "V3": vs[2].value,
            "Vsum_scaled": scale * (vs[0].value + vs[1].value + vs[2].value),
            "Vtilde3_scaled": scale * vt3.value,
            "sigma_sq": sig,
            "abs_err": scale * sum(v.abs_error for v in vs),
        })
    return rows


MOMENT_REPORT_HEADER = ("d,H,t,epsilon,V1,V2,V3,Vsum_scaled,Vtilde3_scaled,"
                        "sigma_sq,abs_err")


def moment_report_csv(rows):
    buf = io.StringIO()
    buf.write(MOMENT_REPORT_HEADER + "\n")
    for r in rows:
        buf.write(f"{r['d']},{r['H']:.17g},{r['t']:.17g},{r['epsilon']:.17g},"
                  f"{r['V1']:.17g},{r['V2']:.17g},{r['V3']:.17g},"
                  f"{r['Vsum_scaled']:.17g},{r['Vtilde3_scaled']:.17g},"
                  f"{r['sigma_sq']:.17g},{r['abs_err']:.17g}\n")
    return buf.getvalue()
