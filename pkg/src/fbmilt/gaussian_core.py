"""Special functions and Gaussian linear algebra used by every other module.

Everything here is a pure function of immutable inputs: probabilists' Hermite
polynomials, the Gaussian mollifier and its partial derivatives, the fBm
covariance kernel, Schur-complement conditional variances, the determinant
factorization into conditional variances, and the Gamma/Beta/Dirichlet
identities that back the verification ledger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .errors import (
    DegenerateConditioningError,
    NotPositiveDefiniteError,
    ParameterError,
)

__all__ = [
    "MultiIndex", "SpdMatrix", "ModelConfig", "MollifierSpec",
    "hermite", "mollifier_deriv", "mollifier_values", "fbm_cov",
    "conditional_variance", "det_as_conditional_product",
    "gamma_lemma_check", "beta_integral_identity", "log_beta",
    "simplex_integral", "simplex_integral_quadrature",
]


@dataclass(frozen=True)
class MultiIndex:
    """Derivative multi-index k = (k_1, ..., k_d) with |k| = sum k_j."""

    entries: tuple

    def __post_init__(self):
        entries = tuple(int(e) for e in self.entries)
        if len(entries) < 1:
            raise ParameterError("multi-index needs at least one entry")
        if any(e < 0 for e in entries):
            raise ParameterError(f"multi-index entries must be >= 0, got {entries}")
        object.__setattr__(self, "entries", entries)

    @property
    def order(self):
        return sum(self.entries)

    @property
    def dim(self):
        return len(self.entries)

    @classmethod
    def of(cls, k):
        if isinstance(k, MultiIndex):
            return k
        if isinstance(k, int):
            return cls((k,))
        return cls(tuple(k))


class SpdMatrix:
    """Symmetric positive definite matrix, validated at construction.

    Symmetry is required to 1e-12 relative; positive definiteness is checked
    by an actual Cholesky factorization (equivalent to all leading principal
    minors being strictly positive).  Degenerate input raises
    NotPositiveDefiniteError instead of being regularized.
    """

    def __init__(self, a):
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ParameterError(f"expected a square matrix, got shape {a.shape}")
        scale = np.max(np.abs(a)) or 1.0
        if np.max(np.abs(a - a.T)) > 1e-12 * scale:
            raise NotPositiveDefiniteError("matrix is not symmetric to 1e-12 relative")
        a = 0.5 * (a + a.T)
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError(
                "matrix is not positive definite (Cholesky failed)") from None
        if not np.all(np.isfinite(chol)):
            raise NotPositiveDefiniteError("non-finite Cholesky factor")
        self.a = a
        self.chol = chol
        self.dim = a.shape[0]

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def det(self):
        return math.exp(self.logdet())

    def inv(self):
        eye = np.eye(self.dim)
        w = np.linalg.solve(self.chol, eye)
        return w.T @ w

    def __repr__(self):
        return f"SpdMatrix(dim={self.dim})"


@dataclass(frozen=True)
class MollifierSpec:
    """Bandwidth and derivative multi-index of the Gaussian mollifier."""

    eps: float
    k: MultiIndex

    def __post_init__(self):
        object.__setattr__(self, "k", MultiIndex.of(self.k))
        if not (self.eps > 0):
            raise ParameterError(f"mollifier bandwidth must be > 0, got {self.eps}")


@dataclass(frozen=True)
class ModelConfig:
    """Model parameters (H, d, k, t) plus the derived existence flags.

    dilt_exists: the intersection functional converges as eps -> 0
        iff 2|k|H + Hd < 2.
    dslt_exists: the self-intersection functional has all L^p moments
        iff H|k| + Hd < 1.
    beta_max: exponential integrability holds for orders
        beta < 1/(|k| + |k|H + dH).
    """

    H: float
    d: int
    k: MultiIndex
    t: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "k", MultiIndex.of(self.k))
        if not (0.0 < self.H < 1.0):
            raise ParameterError(f"H must be in (0,1), got {self.H}")
        if self.d < 1:
            raise ParameterError(f"d must be >= 1, got {self.d}")
        if self.k.dim != self.d:
            raise ParameterError(
                f"multi-index length {self.k.dim} does not match d={self.d}")
        if not (self.t > 0):
            raise ParameterError(f"t must be > 0, got {self.t}")

    @property
    def theta(self):
        """Moment-growth exponent |k| + |k|H + dH."""
        return self.k.order * (1.0 + self.H) + self.d * self.H

    @property
    def dilt_exists(self):
        return 2 * self.k.order * self.H + self.H * self.d < 2.0

    @property
    def dslt_exists(self):
        return self.H * self.k.order + self.H * self.d < 1.0

    @property
    def beta_max(self):
        return 1.0 / self.theta


def hermite(q, x):
    """Probabilists' Hermite polynomial H_q(x).

    Evaluated with the stable three-term recurrence
    H_{q+1}(x) = x H_q(x) - q H_{q-1}(x), H_0 = 1, H_1 = x.
    Accepts scalar or array x.
    """
    if q < 0:
        raise ParameterError(f"Hermite order must be >= 0, got {q}")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if q == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = x.copy()
    for m in range(1, q):
        h, h_prev = x * h - m * h_prev, h
    return h if h.ndim else float(h)


def mollifier_values(k, eps, x):
    """Vectorized mollifier derivative over points.

    k: MultiIndex (length d); x: array of shape (d, m).  Returns shape (m,)
    with the value of the k-th partial derivative of the Gaussian kernel of
    variance eps at each column of x:

        prod_j (2*pi*eps)^{-1/2} (-1)^{k_j} eps^{-k_j/2}
               H_{k_j}(x_j/sqrt(eps)) exp(-x_j^2/(2 eps))
    """
    k = MultiIndex.of(k)
    if eps <= 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != k.dim:
        raise ParameterError(f"x has {x.shape[0]} components, k has {k.dim}")
    sq = math.sqrt(eps)
    out = np.exp(-np.sum(x * x, axis=0) / (2.0 * eps))
    out *= (2.0 * math.pi * eps) ** (-0.5 * k.dim)
    for j, kj in enumerate(k.entries):
        if kj:
            out *= (-1.0) ** kj * eps ** (-0.5 * kj) * hermite(kj, x[j] / sq)
    return out


def mollifier_deriv(spec, x):
    """delta_eps^(k)(x) for one point x in R^d."""
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    return float(mollifier_values(spec.k, spec.eps, x)[0])


def fbm_cov(s, t, H):
    """fBm covariance (t^2H + s^2H - |t-s|^2H)/2; accepts arrays."""
    if not (0.0 < H < 1.0):
        raise ParameterError(f"H must be in (0,1), got {H}")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ParameterError("times must be >= 0")
    out = 0.5 * (np.abs(t) ** (2 * H) + np.abs(s) ** (2 * H)
                 - np.abs(t - s) ** (2 * H))
    return out if out.ndim else float(out)


def _check_indices(cov, target, given):
    given = tuple(int(g) for g in given)
    target = int(target)
    if target in given:
        raise ParameterError(f"target {target} appears in the conditioning set")
    for idx in (target, *given):
        if not (0 <= idx < cov.dim):
            raise ParameterError(f"index {idx} out of range for dim {cov.dim}")
    if len(set(given)) != len(given):
        raise ParameterError("conditioning set contains duplicates")
    return target, given


def conditional_variance(cov, target, given=()):
    """Var(X_target | X_given) for a centered Gaussian vector with
    covariance ``cov``, via the Schur complement
    Sigma_tt - b^T Sigma_gg^{-1} b.
    """
    target, given = _check_indices(cov, target, given)
    a = cov.a
    if not given:
        return float(a[target, target])
    g = list(given)
    sub = a[np.ix_(g, g)]
    b = a[g, target]
    try:
        chol = np.linalg.cholesky(sub)
    except np.linalg.LinAlgError:
        raise DegenerateConditioningError(
            "conditioning block is singular (duplicate or degenerate variables)"
        ) from None
    w = np.linalg.solve(chol, b)
    out = float(a[target, target] - w @ w)
    if out <= 0 or not math.isfinite(out):
        raise DegenerateConditioningError(
            f"conditional variance degenerate ({out})")
    return out


def det_as_conditional_product(cov, order=None):
    """det(cov) as the product of successive conditional variances
    Var(X_{pi(1)}) Var(X_{pi(2)} | X_{pi(1)}) ... along permutation ``order``.

    Equality with det for every permutation is the property-test hook.
    """
    if order is None:
        order = range(cov.dim)
    order = [int(i) for i in order]
    if sorted(order) != list(range(cov.dim)):
        raise ParameterError(f"order {order} is not a permutation of 0..{cov.dim - 1}")
    log_prod = 0.0
    for j, idx in enumerate(order):
        log_prod += math.log(conditional_variance(cov, idx, order[:j]))
    return math.exp(log_prod)


def gamma_lemma_check(n, kappa):
    """Check the pair of Gamma bounds
    Gamma(kn) <= ((n-1)!)^k  and  Gamma(kn+1) >= k^n (n!)^k
    in log space.  Both hold for n >= 2; n = 1 is a documented counterexample
    (Gamma(0.5) > 1) and is rejected here.
    """
    if n < 2:
        raise ParameterError(
            "gamma_lemma_check requires n >= 2 (the n=1 case fails; "
            "see gamma_lemma_n1_counterexample)")
    if not (0.0 < kappa < 1.0):
        raise ParameterError(f"kappa must be in (0,1), got {kappa}")
    upper_ok = gammaln(kappa * n) <= kappa * gammaln(n) + 1e-12
    lower_ok = gammaln(kappa * n + 1.0) >= n * math.log(kappa) + kappa * gammaln(n + 1.0) - 1e-12
    return bool(upper_ok), bool(lower_ok)


def gamma_lemma_n1_counterexample(kappa=0.5):
    """The documented n=1 failure: returns (Gamma(kappa), 1.0, holds)."""
    g = math.exp(gammaln(kappa))
    return g, 1.0, g <= 1.0


def log_beta(a, b):
    return float(gammaln(a) + gammaln(b) - gammaln(a + b))


def beta_integral_identity(c, beta, alpha, gamma):
    """Closed form and quadrature of int_0^inf a^alpha (c + a^beta)^gamma da.

    closed = beta^{-1} c^{(1+alpha+gamma*beta)/beta}
             B((1+alpha)/beta, -(1+alpha+gamma*beta)/beta).
    The quadrature maps [0,inf) to [0,1) by a = u/(1-u).
    Returns (closed_form, quadrature).
    """
    if c <= 0 or beta <= 0:
        raise ParameterError(f"need c > 0 and beta > 0, got c={c}, beta={beta}")
    if alpha <= -1:
        raise ParameterError(f"need alpha > -1, got {alpha}")
    if 1.0 + alpha + gamma * beta >= 0:
        raise ParameterError(
            f"need 1 + alpha + gamma*beta < 0, got {1.0 + alpha + gamma * beta}")
    p = (1.0 + alpha) / beta
    q = -(1.0 + alpha + gamma * beta) / beta
    closed = math.exp(math.log(c) * (1.0 + alpha + gamma * beta) / beta
                      + log_beta(p, q)) / beta

    def integrand(u):
        a = u / (1.0 - u)
        return a ** alpha * (c + a ** beta) ** gamma / (1.0 - u) ** 2

    quad, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-10,
                             limit=200)
    return closed, quad


def _check_alphas(alphas):
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ParameterError("need at least one exponent")
    for a in alphas:
        if not (-1.0 < a < 1.0):
            raise ParameterError(f"exponents must lie in (-1,1), got {a}")
    return alphas


def simplex_integral(t, alphas):
    """Exact Dirichlet value of the ordered-simplex integral

        J_m(t, alpha) = int_{0<r_1<...<r_m<t} prod (r_i - r_{i-1})^{alpha_i} dr
                      = t^{|alpha|+m} prod Gamma(alpha_i+1) / Gamma(|alpha|+m+1).
    """
    if t <= 0:
        raise ParameterError(f"t must be > 0, got {t}")
    alphas = _check_alphas(alphas)
    m = len(alphas)
    tot = sum(alphas)
    log_val = ((tot + m) * math.log(t)
               + sum(gammaln(a + 1.0) for a in alphas)
               - gammaln(tot + m + 1.0))
    return math.exp(log_val)


def simplex_integral_quadrature(t, alphas):
    """Numerical-quadrature route to J_m(t, alpha), independent of Gamma.

    The integrand is homogeneous, so the gap convolution
    F_{i+1}(x) = int_0^x F_i(x-g) g^{alpha_{i+1}} dg collapses to one
    Beta-type 1-d integral per stage, each evaluated with QUADPACK's
    algebraic-endpoint rule (QAWS).
    """
    if t <= 0:
        raise ParameterError(f"t must be > 0, got {t}")
    alphas = _check_alphas(alphas)
    coeff = 1.0
    a_exp = alphas[0]
    for nxt in alphas[1:]:
        val, _ = integrate.quad(lambda u: 1.0, 0.0, 1.0, weight="alg",
                                wvar=(nxt, a_exp))
        coeff *= val
        a_exp = a_exp + nxt + 1.0
    return coeff * t ** (a_exp + 1.0) / (a_exp + 1.0)


def simplex_bound_holds(t, alphas):
    """Paper-style bound check: J_m <= c^m t^{|alpha|+m}/Gamma(|alpha|+m+1)
    with c = max_i Gamma(alpha_i + 1).  Returns (value, bound, holds)."""
    alphas = _check_alphas(alphas)
    m = len(alphas)
    tot = sum(alphas)
    c = max(math.exp(gammaln(a + 1.0)) for a in alphas)
    bound = c ** m * t ** (tot + m) / math.exp(gammaln(tot + m + 1.0))
    value = simplex_integral(t, alphas)
    return value, bound, value <= bound * (1.0 + 1e-12)
