"""Log heat kernels for Euclidean space, the circle, spheres, and hyperbolic space.

Every kernel is evaluated and returned in log space: the density p underflows
already at moderate dist^2/t while ln p stays well scaled for likelihood sums.
All evaluation is radial, so symmetry in (x, y) is exact by construction.

Accuracy policy: series are truncated so the absolute error on p stays below
``KernelConfig.tail_tol``.  Where an acceptance-grade *relative* accuracy of
ln p is required although p itself is astronomically small (deep small-t
regime, strongly cancelling spectral sums), the same series is summed in
extended precision via mpmath instead of being approximated or refused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np
from scipy.integrate import quad

from .manifolds import (
    CUT_LOCUS_TOL,
    Kind,
    ManifoldSpec,
    Point,
    Tangent,
    circle_dist,
    dist,
    exp_map,
    signed_arc,
    sphere_inner,
    tangent_basis,
)

TWO_PI = 2.0 * math.pi

# wrapped sum below this t, spectral sum above: each converges in O(1) terms
# in its regime
CIRCLE_SPECTRAL_CROSSOVER = 1.0

# float64 alternating spectral sum keeps 1e-12 accuracy in ln p down to about
# t = 0.3 at arc pi; below this the sum is evaluated in extended precision
_SPECTRAL_FLOAT64_MIN_T = 0.5

# sphere series: switch to extended precision once the leading log magnitude
# of p drops below this (float64 summation noise is ~1e-16 absolute)
_SPHERE_FLOAT64_MIN_LOGP = -25.0

_FD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)


class AccuracyError(RuntimeError):
    """Requested tolerance cannot be met with the configured term/evaluation caps."""


@dataclass(frozen=True)
class KernelConfig:
    """Truncation and quadrature settings governing kernel accuracy."""

    tail_tol: float = 1e-12
    max_terms: int = 10_000
    quad_rel_tol: float = 1e-10
    quad_upper_sigma: float = 12.0

    def __post_init__(self):
        if self.tail_tol <= 0 or self.quad_rel_tol <= 0 or self.quad_upper_sigma <= 0:
            raise ValueError("KernelConfig fields must be strictly positive")
        if self.max_terms < 8:
            raise ValueError("max_terms must be at least 8")


@dataclass(frozen=True)
class Diffusivity:
    """Time/diffusivity parameter of the heat kernel."""

    t: float

    def __post_init__(self):
        if not (self.t > 0 and math.isfinite(self.t)):
            raise ValueError(f"diffusivity must be positive and finite, got {self.t}")


DEFAULT_CONFIG = KernelConfig()


def _t_value(t) -> float:
    return t.t if isinstance(t, Diffusivity) else float(t)


# ---------------------------------------------------------------------------
# circle

def _wrapped_image_count(t: float, cfg: KernelConfig) -> int:
    """Smallest K whose first omitted image is negligible against the leading term.

    The bound is relative to the worst-case leading term e^{-pi^2/(4t)} (arc
    pi), which keeps ln p accurate to ~tail_tol even where p itself is tiny;
    it also implies the absolute contract, since the wrapped density at arc
    pi never exceeds 0.16 in these units.
    """
    tol = cfg.tail_tol * 1e-3
    k = 0
    while True:
        gap = (TWO_PI * (k + 1) - math.pi) ** 2 - math.pi**2
        if math.exp(-gap / (4.0 * t)) < tol:
            return k
        k += 1
        if 2 * k + 1 > cfg.max_terms:
            raise AccuracyError("wrapped image sum does not converge within max_terms")


def _circle_log_wrapped(delta, t: float, cfg: KernelConfig):
    """ln of the wrapped Gaussian; vectorized, accepts any real arc values."""
    delta = np.asarray(delta, dtype=float)
    kk = _wrapped_image_count(t, cfg)
    ks = TWO_PI * np.arange(-kk, kk + 1)
    a = -((delta[..., None] + ks) ** 2) / (4.0 * t)
    amax = a.max(axis=-1)
    s = np.log(np.exp(a - amax[..., None]).sum(axis=-1)) + amax
    return -0.5 * math.log(4.0 * math.pi * t) + s


def _spectral_terms_needed(t: float, cfg: KernelConfig, tol: float) -> int:
    j = 1
    while 2.0 * math.exp(-j * j * t) / TWO_PI >= tol:
        j += 1
        if j > cfg.max_terms:
            raise AccuracyError("spectral sum does not converge within max_terms")
    return j


def _circle_log_spectral_mp(delta: float, t: float, cfg: KernelConfig) -> float:
    # cancellation in the alternating theta sum destroys float64 once p is
    # tiny against 1/(2 pi); size the working precision from the wrapped-form
    # leading magnitude of p
    lead = -delta * delta / (4.0 * t) - 0.5 * math.log(4.0 * math.pi * t)
    digits = 30 + max(0, int(-(lead + math.log(TWO_PI)) / math.log(10.0)))
    jmax = int(math.sqrt((digits + 5) * math.log(10.0) / t)) + 2
    if 2 * jmax > 100 * cfg.max_terms:
        raise AccuracyError("extended-precision spectral sum too long; raise t or max_terms")
    with mp.workdps(digits):
        tt, dd = mp.mpf(t), mp.mpf(delta)
        s = mp.mpf(1)
        for j in range(1, jmax + 1):
            s += 2 * mp.e ** (-j * j * tt) * mp.cos(j * dd)
        return float(mp.log(s / (2 * mp.pi)))


def _circle_log_spectral(delta, t: float, cfg: KernelConfig):
    """ln of the eigenfunction series (1 + 2 sum e^{-k^2 t} cos k*delta)/(2 pi)."""
    delta = np.asarray(delta, dtype=float)
    if t < _SPECTRAL_FLOAT64_MIN_T:
        out = np.array([_circle_log_spectral_mp(float(d), t, cfg) for d in np.atleast_1d(delta)])
        return out.reshape(delta.shape) if delta.shape else float(out[0])
    jmax = _spectral_terms_needed(t, cfg, min(cfg.tail_tol, 1e-16))
    js = np.arange(1, jmax + 1)
    s = 1.0 + 2.0 * (np.exp(-js * js * t) * np.cos(delta[..., None] * js)).sum(axis=-1)
    return np.log(s / TWO_PI)


def circle_log_kernel(delta: float, t, cfg: KernelConfig = DEFAULT_CONFIG) -> float:
    """ln p on the circle at arc distance delta in [0, pi].

    Uses the wrapped-Gaussian image sum for small t and the spectral sum for
    large t; both converge in O(1) terms in their regime and agree to full
    precision where they overlap.
    """
    t = _t_value(t)
    if not 0.0 <= delta <= math.pi + 1e-12:
        raise ValueError(f"circle arc must lie in [0, pi], got {delta}")
    if t <= CIRCLE_SPECTRAL_CROSSOVER:
        return float(_circle_log_wrapped(delta, t, cfg))
    return float(_circle_log_spectral(delta, t, cfg))


# ---------------------------------------------------------------------------
# sphere

def gegenbauer(l: int, alpha: float, s: float) -> float:
    """Gegenbauer (ultraspherical) polynomial C_l^alpha(s) by three-term recurrence."""
    if l < 0 or l != int(l):
        raise ValueError("degree must be a nonnegative integer")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not -1.0 <= s <= 1.0:
        raise ValueError("argument must lie in [-1, 1]")
    if l == 0:
        return 1.0
    prev, cur = 1.0, 2.0 * alpha * s
    for n in range(2, l + 1):
        prev, cur = cur, (2.0 * s * (n + alpha - 1.0) * cur - (n + 2.0 * alpha - 2.0) * prev) / n
    return cur


def _sphere_log_area(m: int) -> float:
    # surface area of the unit m-sphere
    return math.log(2.0) + 0.5 * (m + 1) * math.log(math.pi) - math.lgamma(0.5 * (m + 1))


def _sphere_log_term_bound(l: int, m: int, t: float) -> float:
    # |term_l| <= e^{-l(l+m-1)t} (2l+m-1)/(m-1) C_l^alpha(1) / area,
    # with C_l^alpha(1) = binom(l+m-2, l)
    return (
        -l * (l + m - 1) * t
        + math.log((2.0 * l + m - 1.0) / (m - 1.0))
        + math.lgamma(l + m - 1)
        - math.lgamma(l + 1)
        - math.lgamma(m - 1)
        - _sphere_log_area(m)
    )


def _sphere_terms_needed(m: int, t: float, cfg: KernelConfig, log_tol: float) -> int:
    for l in range(2, cfg.max_terms + 1):
        if _sphere_log_term_bound(l, m, t) < log_tol:
            return l
    raise AccuracyError(
        "sphere series not converged within max_terms; raise max_terms or t"
    )


def _sphere_series_float(cs, m: int, t: float, nterms: int):
    alpha = 0.5 * (m - 1)
    inv_area = math.exp(-_sphere_log_area(m))
    cs = np.asarray(cs, dtype=float)
    c_prev = np.ones_like(cs)
    total = inv_area * c_prev.copy()  # l = 0 term
    if nterms > 1:
        c_cur = 2.0 * alpha * cs
        e_ratio = math.exp(-2.0 * t)
        q = math.exp(-m * t)  # e^{-(2l+m-2)t} at l = 1
        e_cur = q  # e^{-l(l+m-1)t} at l = 1
        total = total + e_cur * ((m + 1.0) / (m - 1.0)) * inv_area * c_cur
        for l in range(2, nterms):
            c_prev, c_cur = c_cur, (
                2.0 * cs * (l + alpha - 1.0) * c_cur - (l + 2.0 * alpha - 2.0) * c_prev
            ) / l
            q *= e_ratio
            e_cur *= q
            total = total + e_cur * ((2.0 * l + m - 1.0) / (m - 1.0)) * inv_area * c_cur
    return total


def _sphere_log_kernel_mp(c: float, m: int, t: float, cfg: KernelConfig, lead: float) -> float:
    log_tol = lead - 46.0  # keep the omitted tail ~20 digits below p itself
    nterms = _sphere_terms_needed(m, t, cfg, log_tol)
    digits = 30 + int(max(0.0, -lead) / math.log(10.0))
    alpha = 0.5 * (m - 1)
    with mp.workdps(digits):
        cc, tt = mp.mpf(c), mp.mpf(t)
        inv_area = mp.e ** (-mp.mpf(_sphere_log_area(m)))
        c_prev = mp.mpf(1)
        total = inv_area
        if nterms > 1:
            c_cur = 2 * alpha * cc
            e_ratio = mp.e ** (-2 * tt)
            q = mp.e ** (-m * tt)
            e_cur = q
            total += e_cur * mp.mpf(m + 1) / (m - 1) * inv_area * c_cur
            for l in range(2, nterms):
                c_prev, c_cur = c_cur, (
                    2 * cc * (l + alpha - 1) * c_cur - (l + 2 * alpha - 2) * c_prev
                ) / l
                q *= e_ratio
                e_cur *= q
                total += e_cur * mp.mpf(2 * l + m - 1) / (m - 1) * inv_area * c_cur
        if total <= 0:
            raise AccuracyError("sphere series cancelled to a nonpositive value")
        return float(mp.log(total))


def sphere_log_kernel(c: float, m: int, t, cfg: KernelConfig = DEFAULT_CONFIG) -> float:
    """ln p on the unit m-sphere as a function of c = <x, y> in [-1, 1].

    Sums the ultraspherical eigenfunction expansion, truncated where the term
    bound drops below ``cfg.tail_tol``.  In the deep small-t regime the same
    series is summed in extended precision, sized from the leading Gaussian
    magnitude of p.
    """
    t = _t_value(t)
    if m < 2:
        raise ValueError("sphere kernel requires intrinsic dimension m >= 2")
    if not -1.0 - 1e-12 <= c <= 1.0 + 1e-12:
        raise ValueError(f"inner product must lie in [-1, 1], got {c}")
    c = min(1.0, max(-1.0, c))
    theta = math.acos(c)
    lead = -0.5 * m * math.log(4.0 * math.pi * t) - theta * theta / (4.0 * t)
    if lead < _SPHERE_FLOAT64_MIN_LOGP:
        return _sphere_log_kernel_mp(c, m, t, cfg, lead)
    nterms = _sphere_terms_needed(m, t, cfg, math.log(cfg.tail_tol))
    total = float(_sphere_series_float(c, m, t, nterms))
    if total <= 0.0:  # cancellation fallback, reachable only near the regime edge
        return _sphere_log_kernel_mp(c, m, t, cfg, lead)
    return math.log(total)


def _sphere_log_kernel_many(cs, m: int, t: float, cfg: KernelConfig):
    """Vectorized sphere ln p over an array of inner products."""
    cs = np.clip(np.asarray(cs, dtype=float), -1.0, 1.0)
    theta = np.arccos(cs)
    lead = -0.5 * m * math.log(4.0 * math.pi * t) - theta * theta / (4.0 * t)
    if np.all(lead >= _SPHERE_FLOAT64_MIN_LOGP):
        nterms = _sphere_terms_needed(m, t, cfg, math.log(cfg.tail_tol))
        total = _sphere_series_float(cs, m, t, nterms)
        if np.all(total > 0.0):
            return np.log(total)
    return np.array([sphere_log_kernel(float(c), m, t, cfg) for c in cs.ravel()]).reshape(cs.shape)


# ---------------------------------------------------------------------------
# hyperbolic space
#
# Odd m = 2k+1:
#   p = (-1)^k (2 pi)^{-k} (4 pi t)^{-1/2} ((1/sinh r) d/dr)^k e^{-k^2 t - r^2/(4t)}
# Even m = 2k+2:
#   p = (-1)^k 2^{-k-5/2} pi^{-k-3/2} t^{-3/2} e^{-(2k+1)^2 t/4}
#       ((1/sinh r) d/dr)^k \int_r^inf s e^{-s^2/(4t)} (cosh s - cosh r)^{-1/2} ds
# The k-fold radial operator is applied by exact nested differentiation of
# the term algebra coef * r^a * cosh(r)^c / sinh(r)^b (times the Gaussian
# factor, tracked implicitly); k-fold numerical differencing would lose all
# precision by k = 2.  For even m the operator is moved inside the integral
# via the substitution cosh s = cosh r + v^2, which turns it into the same
# nested derivative of the integrand.

def _radial_terms(k: int, t: float, start: dict | None = None) -> dict:
    """Apply ((1/sinh r) d/dr)^k to e^{-r^2/4t} times the start terms.

    Terms map (a, b, c) -> coefficient, standing for r^a cosh(r)^c sinh(r)^{-b},
    with the common factor e^{-r^2/(4t)} kept implicit.
    """
    terms = dict(start) if start else {(0, 0, 0): 1.0}
    for _ in range(k):
        new: dict = {}

        def add(key, val):
            new[key] = new.get(key, 0.0) + val

        for (a, b, c), w in terms.items():
            if a:
                add((a - 1, b + 1, c), a * w)
            if c:
                add((a, b, c - 1), c * w)
            if b:
                add((a, b + 2, c + 1), -b * w)
            add((a + 1, b + 1, c), -w / (2.0 * t))
        terms = new
    return terms


def _terms_eval_mp(terms: dict, r: float) -> float:
    max_b = max(b for (_, b, _) in terms)
    rr = 1e-40 if r <= 0.0 else r
    digits = 30 + int(max_b * max(0.0, -math.log10(rr)))
    with mp.workdps(digits):
        x = mp.mpf(rr)
        sh, ch = mp.sinh(x), mp.cosh(x)
        total = mp.mpf(0)
        for (a, b, c), w in terms.items():
            total += mp.mpf(w) * x**a * ch**c / sh**b
        return float(total)


def _terms_eval(terms: dict, r, vectorized: bool = False):
    """Evaluate sum of coef * r^a cosh^c / sinh^b, stably near r = 0."""
    max_b = max(b for (_, b, _) in terms)
    max_cancel = any(b > a for (a, b, _) in terms)
    if not vectorized:
        r = float(r)
        if (r < 0.05 and max_b >= 2 and max_cancel) or r < 1e-12:
            return _terms_eval_mp(terms, r)
        sh, ch = math.sinh(r), math.cosh(r)
        return sum(w * r**a * ch**c / sh**b for (a, b, c), w in terms.items())
    r = np.asarray(r, dtype=float)
    small = (r < 0.05) if (max_b >= 2 and max_cancel) else (r < 1e-12)
    out = np.empty_like(r)
    big = ~small
    if np.any(big):
        rb = r[big]
        sh, ch = np.sinh(rb), np.cosh(rb)
        acc = np.zeros_like(rb)
        for (a, b, c), w in terms.items():
            acc += w * rb**a * ch**c / sh**b
        out[big] = acc
    if np.any(small):
        out[small] = [_terms_eval_mp(terms, float(x)) for x in r[small]]
    return out


def _hyp_log_kernel_odd(rho, m: int, t: float, cfg: KernelConfig, vectorized=False):
    k = (m - 1) // 2
    terms = _radial_terms(k, t)
    val = _terms_eval(terms, rho, vectorized=vectorized)
    signed = val if k % 2 == 0 else -np.asarray(val)
    if np.any(np.asarray(signed) <= 0.0):
        raise AccuracyError("odd-dimension radial sum cancelled to a nonpositive value")
    rho = np.asarray(rho, dtype=float) if vectorized else float(rho)
    out = (
        -k * math.log(TWO_PI)
        - 0.5 * math.log(4.0 * math.pi * t)
        - k * k * t
        - rho * rho / (4.0 * t)
        + np.log(signed)
    )
    return out if vectorized else float(out)


def _hyp_even_integral(rho: float, k: int, t: float, cfg: KernelConfig) -> float:
    """Quadrature of the even-dimension radial integral after s = rho + u^2.

    The substitution removes the inverse-square-root endpoint singularity;
    the Gaussian factor e^{-rho^2/(4t)} is pulled out by the caller.
    """
    terms = _radial_terms(k, t, start={(1, 1, 0): 1.0})

    def integrand(u):
        s = rho + u * u
        core = _terms_eval(terms, s)
        den = math.sqrt(2.0 * math.sinh(0.5 * (s + rho)) * math.sinh(0.5 * u * u))
        gauss = math.exp(-u * u * (2.0 * rho + u * u) / (4.0 * t))
        return 2.0 * u * math.sinh(s) * core * gauss / den

    umax = math.sqrt(cfg.quad_upper_sigma * math.sqrt(t))
    res = quad(integrand, 0.0, umax, epsabs=0.0, epsrel=cfg.quad_rel_tol, limit=300, full_output=1)
    val, abserr = res[0], res[1]
    if len(res) > 4 or (abs(val) > 0 and abserr > 100.0 * cfg.quad_rel_tol * abs(val)):
        raise AccuracyError(f"even-dimension quadrature failed tolerance {cfg.quad_rel_tol}")
    return val


def hyperbolic_log_kernel(rho: float, m: int, t, cfg: KernelConfig = DEFAULT_CONFIG) -> float:
    """ln p on hyperbolic m-space at geodesic distance rho >= 0.

    Odd m uses the closed nested-derivative form (pinned at m = 3 to
    p = (4 pi t)^{-3/2} (rho/sinh rho) e^{-t - rho^2/(4t)}); even m applies
    the same radial operator inside the endpoint-desingularized integral.
    The rho = 0 value is the series limit of the radial expression.
    """
    t = _t_value(t)
    if m < 2:
        raise ValueError("hyperbolic kernel requires intrinsic dimension m >= 2")
    if rho < 0:
        raise ValueError(f"distance must be nonnegative, got {rho}")
    if m % 2 == 1:
        return _hyp_log_kernel_odd(rho, m, t, cfg)
    k = (m - 2) // 2
    v = _hyp_even_integral(rho, k, t, cfg)
    signed = v if k % 2 == 0 else -v
    if signed <= 0.0:
        raise AccuracyError("even-dimension radial integral cancelled to a nonpositive value")
    return (
        -(k + 2.5) * math.log(2.0)
        - (k + 1.5) * math.log(math.pi)
        - 1.5 * math.log(t)
        - (2 * k + 1) ** 2 * t / 4.0
        - rho * rho / (4.0 * t)
        + math.log(signed)
    )


def _hyperbolic_log_kernel_many(rhos, m: int, t: float, cfg: KernelConfig):
    rhos = np.asarray(rhos, dtype=float)
    if m % 2 == 1:
        return _hyp_log_kernel_odd(rhos, m, t, cfg, vectorized=True)
    return np.array([hyperbolic_log_kernel(float(r), m, t, cfg) for r in rhos.ravel()]).reshape(
        rhos.shape
    )


# ---------------------------------------------------------------------------
# dispatcher and gradient

def log_heat_kernel(M: ManifoldSpec, x: Point, y: Point, t, cfg: KernelConfig = DEFAULT_CONFIG) -> float:
    """ln p(x, y, t) on M; absolute error on p bounded by cfg.tail_tol.

    Symmetric in x and y exactly: all supported kernels depend on the pair
    only through the geodesic distance (through <x, y> on the sphere).
    """
    t = _t_value(t)
    if x.manifold != M or y.manifold != M:
        raise ValueError("x and y must lie on the manifold the kernel is evaluated on")
    if M.kind is Kind.EUCLIDEAN:
        d2 = float(np.sum((x.coords - y.coords) ** 2))
        return -0.5 * M.dim * math.log(4.0 * math.pi * t) - d2 / (4.0 * t)
    if M.kind is Kind.CIRCLE:
        return circle_log_kernel(float(circle_dist(x.coords[0], y.coords[0])), t, cfg)
    if M.kind is Kind.SPHERE:
        return sphere_log_kernel(float(sphere_inner(x.coords, y.coords)), M.dim, t, cfg)
    if M.kind is Kind.HYPERBOLIC:
        return hyperbolic_log_kernel(dist(M, x, y), M.dim, t, cfg)
    raise ValueError(f"unsupported manifold kind {M.kind!r}")


def _circle_dlogp(delta, t: float, cfg: KernelConfig):
    """d/d(delta) of circle ln p at signed arc delta; vectorized."""
    delta = np.asarray(delta, dtype=float)
    if t <= CIRCLE_SPECTRAL_CROSSOVER:
        kk = _wrapped_image_count(t, cfg)
        ks = TWO_PI * np.arange(-kk, kk + 1)
        d = delta[..., None] + ks
        a = -(d * d) / (4.0 * t)
        a -= a.max(axis=-1, keepdims=True)
        w = np.exp(a)
        return -(d * w).sum(axis=-1) / (2.0 * t * w.sum(axis=-1))
    jmax = _spectral_terms_needed(t, cfg, cfg.tail_tol)
    js = np.arange(1, jmax + 1)
    e = np.exp(-js * js * t)
    s = 1.0 + 2.0 * (e * np.cos(delta[..., None] * js)).sum(axis=-1)
    num = -2.0 * (js * e * np.sin(delta[..., None] * js)).sum(axis=-1)
    return num / s


def log_kernel_grad(
    M: ManifoldSpec,
    x: Point,
    y: Point,
    t,
    cfg: KernelConfig = DEFAULT_CONFIG,
    method: str = "auto",
) -> Tangent:
    """Gradient of y -> ln p(x, y, t), as a tangent vector at y.

    Euclidean and Circle use exact analytic gradients; other manifolds (or
    ``method="fd"`` anywhere) use central differences along exp-map geodesics
    with step h = eps^(1/3) * max(1, dist(x, y)).
    """
    if method not in ("auto", "analytic", "fd"):
        raise ValueError(f"unknown gradient method {method!r}")
    t = _t_value(t)
    d = dist(M, x, y)
    if M.kind in (Kind.CIRCLE, Kind.SPHERE) and math.pi - d < CUT_LOCUS_TOL:
        from .manifolds import CutLocusError

        raise CutLocusError("gradient requested at the cut locus of x")
    if method != "fd":
        if M.kind is Kind.EUCLIDEAN:
            return Tangent(y, (x.coords - y.coords) / (2.0 * t))
        if M.kind is Kind.CIRCLE:
            delta = float(signed_arc(y.coords[0] - x.coords[0]))
            return Tangent(y, np.array([float(_circle_dlogp(delta, t, cfg))]))
        if method == "analytic":
            raise ValueError(f"no analytic kernel gradient on {M.kind.value}")
    h = _FD_STEP * max(1.0, d)
    comps = []
    basis = tangent_basis(y)
    for b in basis:
        yp = exp_map(M, y, Tangent(y, h * b))
        ym = exp_map(M, y, Tangent(y, -h * b))
        comps.append((log_heat_kernel(M, x, yp, t, cfg) - log_heat_kernel(M, x, ym, t, cfg)) / (2 * h))
    vec = np.zeros(M.ambient_dim)
    for g, b in zip(comps, basis):
        vec = vec + g * b
    return Tangent(y, vec)
