"""Estimation of diffusion and Fréchet means by multistart Riemannian descent.

The estimators minimize the sample negative log likelihood
``L(y) = -sum_i w_i ln p(X_i, y, t)`` (or the Fréchet function
``sum_i w_i dist(X_i, y)^2``) by gradient descent with backtracking line
search and exp-map retraction, started from every data point plus canonical
seeds.  Near-ties are reported instead of silently picking one optimum: both
objectives can have genuinely non-singleton minimizer sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .heat_kernels import (
    DEFAULT_CONFIG,
    CIRCLE_SPECTRAL_CROSSOVER,
    Diffusivity,
    KernelConfig,
    _circle_dlogp,
    _circle_log_wrapped,
    _circle_log_spectral,
    _hyperbolic_log_kernel_many,
    _sphere_log_kernel_many,
)
from .manifolds import (
    CutLocusError,
    Kind,
    ManifoldSpec,
    Point,
    hyp_dist,
    hyp_exp,
    minkowski_inner,
    signed_arc,
    sphere_exp,
    tangent_basis_raw,
    wrap_angle,
)

FRECHET = "frechet"

# two stationary points within this objective gap are reported as a tie;
# points closer than TIE_DIST are treated as the same optimum
TIE_TOL = 1e-6
TIE_DIST = 1e-4

_FD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)
_MIN_STEP = 1e-18


class ConvergenceError(RuntimeError):
    """No descent start reached the gradient tolerance; carries the best iterate."""

    def __init__(self, message: str, best_point: Point, best_objective: float):
        super().__init__(message)
        self.best_point = best_point
        self.best_objective = best_objective


class FlatnessError(RuntimeError):
    """A flatness probe found a non-positive objective gap; carries the radius."""

    def __init__(self, message: str, radius: float):
        super().__init__(message)
        self.radius = radius


@dataclass(frozen=True)
class Sample:
    """Nonempty list of points on one manifold, with optional weights summing to 1."""

    manifold: ManifoldSpec
    points: tuple[Point, ...]
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = tuple(self.points)
        if not pts:
            raise ValueError("sample must contain at least one point")
        for p in pts:
            if p.manifold != self.manifold:
                raise ValueError(f"sample point on {p.manifold} does not match {self.manifold}")
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape[0] != len(pts):
                raise ValueError("weights length must match the number of points")
            if np.any(w < 0):
                raise ValueError("weights must be nonnegative")
            if abs(float(w.sum()) - 1.0) > 1e-12:
                raise ValueError("weights must sum to 1 within 1e-12")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @classmethod
    def from_coords(cls, manifold: ManifoldSpec, coords, weights=None) -> "Sample":
        arr = np.atleast_2d(np.asarray(coords, dtype=float))
        return cls(manifold, tuple(Point(manifold, row) for row in arr), weights)

    @property
    def n(self) -> int:
        return len(self.points)

    def coords(self) -> np.ndarray:
        """Packed coordinate array: (n,) for Circle, (n, ambient_dim) otherwise."""
        arr = np.stack([p.coords for p in self.points])
        return arr[:, 0] if self.manifold.kind is Kind.CIRCLE else arr

    def weight_array(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights
        return np.full(self.n, 1.0 / self.n)


@dataclass(frozen=True)
class OptimOptions:
    max_iters: int = 500
    grad_tol: float = 1e-9
    initial_step: float = 0.1
    step_shrink: float = 0.5
    multistart_count: int | None = None  # None: all data points + 2 canonical seeds
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1 or self.grad_tol <= 0 or self.initial_step <= 0:
            raise ValueError("optimizer options must be positive")
        if not 0.0 < self.step_shrink < 1.0:
            raise ValueError("step_shrink must lie in (0, 1)")
        if self.multistart_count is not None and self.multistart_count < 1:
            raise ValueError("multistart_count must be positive when given")


@dataclass(frozen=True)
class EstimateReport:
    """Estimator output: optimum, objective, diagnostics, multistart provenance."""

    optimum: Point
    objective: float
    t: Diffusivity | str
    converged: bool
    grad_norm: float
    iterations: tuple[int, ...]
    selected_start: int
    near_ties: tuple[tuple[Point, float], ...]
    warnings: tuple[str, ...] = ()
    t_trace: tuple[tuple[float, float], ...] = ()


# ---------------------------------------------------------------------------
# objective construction on raw coordinate arrays

class _Objective:
    """Value/gradient of the chosen objective on raw coordinates.

    tag is either a positive diffusivity (float) or FRECHET.  Raw coordinates
    are a plain angle for the circle and an ambient vector elsewhere.
    """

    def __init__(self, kind: Kind, m: int, X: np.ndarray, w: np.ndarray, tag, cfg: KernelConfig):
        if tag != FRECHET and not (isinstance(tag, float) and tag > 0):
            raise ValueError(f"objective tag must be FRECHET or a positive diffusivity, got {tag!r}")
        self.kind, self.m, self.X, self.w, self.tag, self.cfg = kind, m, X, w, tag, cfg
        if kind is Kind.EUCLIDEAN:
            self.xbar = w @ X

    # -- retraction ---------------------------------------------------------
    def exp(self, y, v, s: float):
        if self.kind is Kind.CIRCLE:
            return wrap_angle(y + s * v)
        if self.kind is Kind.EUCLIDEAN:
            return y + s * v
        if self.kind is Kind.SPHERE:
            return sphere_exp(y, s * np.asarray(v))
        return hyp_exp(y, s * np.asarray(v))

    def grad_norm(self, g) -> float:
        if self.kind is Kind.CIRCLE:
            return abs(float(g))
        if self.kind is Kind.HYPERBOLIC:
            return math.sqrt(max(float(minkowski_inner(g, g)), 0.0))
        return float(np.linalg.norm(g))

    # -- objective value ----------------------------------------------------
    def value(self, y) -> float:
        return float(self.value_many(np.asarray(y)[None] if self.kind is not Kind.CIRCLE else np.asarray([y]))[0])

    def value_many(self, Y) -> np.ndarray:
        """Objective at many candidate points; Y is (G,) for Circle, (G, d) otherwise."""
        kind, X, w, tag = self.kind, self.X, self.w, self.tag
        if kind is Kind.CIRCLE:
            d = signed_arc(np.asarray(Y)[:, None] - X)
            if tag == FRECHET:
                return (d * d) @ w
            t = tag
            lnp = (
                _circle_log_wrapped(d, t, self.cfg)
                if t <= CIRCLE_SPECTRAL_CROSSOVER
                else _circle_log_spectral(d, t, self.cfg)
            )
            return -(lnp @ w)
        if kind is Kind.EUCLIDEAN:
            d2 = ((np.asarray(Y)[:, None, :] - X) ** 2).sum(axis=-1)
            if tag == FRECHET:
                return d2 @ w
            t = tag
            return 0.5 * self.m * math.log(4.0 * math.pi * t) + (d2 @ w) / (4.0 * t)
        if kind is Kind.SPHERE:
            c = np.clip(np.asarray(Y) @ X.T, -1.0, 1.0)
            if tag == FRECHET:
                th = np.arccos(c)
                return (th * th) @ w
            return -(_sphere_log_kernel_many(c, self.m, tag, self.cfg) @ w)
        rho = hyp_dist(np.asarray(Y)[:, None, :], X)
        if tag == FRECHET:
            return (rho * rho) @ w
        return -(_hyperbolic_log_kernel_many(rho, self.m, tag, self.cfg) @ w)

    # -- gradient -----------------------------------------------------------
    def grad(self, y):
        kind, X, w, tag = self.kind, self.X, self.w, self.tag
        if kind is Kind.CIRCLE:
            d = signed_arc(y - X)
            if tag == FRECHET:
                if np.any(math.pi - np.abs(d) < 1e-12):
                    raise CutLocusError("Fréchet gradient undefined: candidate antipodal to a data point")
                return 2.0 * (d @ w)
            return -(_circle_dlogp(d, tag, self.cfg) @ w)
        if kind is Kind.EUCLIDEAN:
            if tag == FRECHET:
                return 2.0 * (y - self.xbar)
            return (y - self.xbar) / (2.0 * tag)
        if tag == FRECHET:
            if kind is Kind.SPHERE:
                c = np.clip(X @ y, -1.0, 1.0)
                if np.any(c < -1.0 + 1e-12):
                    raise CutLocusError("Fréchet gradient undefined: candidate antipodal to a data point")
                th = np.arccos(c)
                fac = np.where(th < 1e-12, 1.0, th / np.sin(np.where(th < 1e-12, 1.0, th)))
                logs = fac[:, None] * (X - c[:, None] * y)
                return -2.0 * (w @ logs)
            ip = minkowski_inner(X, y)
            th = np.arccosh(np.maximum(-ip, 1.0))
            sh = np.sinh(th)
            fac = np.where(th < 1e-12, 1.0, th / np.where(sh < 1e-300, 1.0, sh))
            logs = fac[:, None] * (X + ip[:, None] * y)
            return -2.0 * (w @ logs)
        # diffusion objective on sphere/hyperbolic: central differences of the
        # total objective along an orthonormal tangent basis
        basis = tangent_basis_raw(self.kind, self.m, y)
        h = _FD_STEP
        g = np.zeros_like(np.asarray(y, dtype=float))
        probes = np.stack([self.exp(y, b, s) for b in basis for s in (h, -h)])
        vals = self.value_many(probes)
        for j, b in enumerate(basis):
            g = g + ((vals[2 * j] - vals[2 * j + 1]) / (2.0 * h)) * b
        return g

    def value_grad(self, y):
        return self.value(y), self.grad(y)


def _pack(s: Sample):
    return s.manifold.kind, s.manifold.dim, s.coords(), s.weight_array()


def _make_objective(s: Sample, tag, cfg: KernelConfig) -> _Objective:
    kind, m, X, w = _pack(s)
    return _Objective(kind, m, X, w, tag, cfg)


def _raw(p: Point):
    return float(p.coords[0]) if p.manifold.kind is Kind.CIRCLE else p.coords


def _to_point(M: ManifoldSpec, raw) -> Point:
    return Point(M, [raw]) if M.kind is Kind.CIRCLE else Point(M, raw)


def _raw_dist(kind: Kind, a, b) -> float:
    if kind is Kind.CIRCLE:
        return abs(float(signed_arc(a - b)))
    if kind is Kind.EUCLIDEAN:
        return float(np.linalg.norm(np.asarray(a) - b))
    if kind is Kind.SPHERE:
        return float(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0)))
    return float(hyp_dist(a, b))


# ---------------------------------------------------------------------------
# descent and multistart

def _descend(obj: _Objective, y0, opts: OptimOptions):
    """Gradient descent with backtracking line search and exp-map retraction."""
    y = y0
    try:
        f = obj.value(y)
        g = obj.grad(y)
    except CutLocusError:
        return y, math.inf, math.inf, 0, False
    step = opts.initial_step
    iters = 0
    for _ in range(opts.max_iters):
        gn = obj.grad_norm(g)
        if gn <= opts.grad_tol:
            return y, f, gn, iters, True
        iters += 1
        s = step
        accepted = False
        while s > _MIN_STEP:
            y_try = obj.exp(y, -g, s)
            f_try = obj.value(y_try)
            if f_try <= f - 1e-4 * s * gn * gn:
                accepted = True
                break
            s *= opts.step_shrink
        if not accepted:
            break
        y, f = y_try, f_try
        try:
            g = obj.grad(y)
        except CutLocusError:
            break
        step = min(s / opts.step_shrink, 1e6)
    gn = obj.grad_norm(g)
    return y, f, gn, iters, gn <= opts.grad_tol


def _canonical_starts(kind: Kind, m: int, X: np.ndarray, w: np.ndarray) -> list:
    if kind is Kind.EUCLIDEAN:
        return [w @ X, np.median(X, axis=0)]
    if kind is Kind.CIRCLE:
        a = float(np.arctan2(w @ np.sin(X), w @ np.cos(X)))
        return [wrap_angle(a), wrap_angle(a + math.pi)]
    if kind is Kind.SPHERE:
        v = w @ X
        nv = np.linalg.norm(v)
        p = v / nv if nv > 1e-12 else np.eye(m + 1)[0]
        return [p, -p]
    v = w @ X
    q = -minkowski_inner(v, v)
    origin = np.zeros(m + 1)
    origin[0] = 1.0
    return [v / math.sqrt(q) if q > 0 else origin, origin]


def _build_starts(obj: _Objective, opts: OptimOptions, extra=()) -> list:
    kind, X, w = obj.kind, obj.X, obj.w
    starts = list(extra) + _canonical_starts(kind, obj.m, X, w)
    data = [X[i] for i in range(X.shape[0])] if X.ndim > 1 else [float(a) for a in X]
    cap = opts.multistart_count
    if cap is not None and len(starts) + len(data) > cap:
        room = max(cap - len(starts), 0)
        if room and len(data):
            idx = np.unique(np.linspace(0, len(data) - 1, room).round().astype(int))
            data = [data[i] for i in idx]
        else:
            data = []
    return starts + data


def _run_multistart(s: Sample, obj: _Objective, starts, opts: OptimOptions, tag) -> EstimateReport:
    runs = []
    iterations = []
    for y0 in starts:
        y, f, gn, iters, conv = _descend(obj, y0, opts)
        runs.append((f, y, gn, conv))
        iterations.append(iters)
    finite = [r for r in runs if math.isfinite(r[0])]
    if not finite:
        raise ConvergenceError("no start produced a finite objective", _to_point(s.manifold, starts[0]), math.inf)
    best_overall = min(finite, key=lambda r: r[0])
    converged = [(i, r) for i, r in enumerate(runs) if r[3]]
    if not converged:
        raise ConvergenceError(
            f"no start reached gradient tolerance {opts.grad_tol:g}",
            _to_point(s.manifold, best_overall[1]),
            float(best_overall[0]),
        )
    sel, best = min(converged, key=lambda ir: ir[1][0])
    f_best, y_best = best[0], best[1]
    # distinct stationary points within TIE_TOL of the optimum
    ties = []
    kept = [y_best]
    for f, y, gn, conv in sorted((r for _, r in converged), key=lambda r: r[0]):
        if f > f_best + TIE_TOL:
            break
        if all(_raw_dist(obj.kind, y, k) > TIE_DIST for k in kept):
            kept.append(y)
            ties.append((_to_point(s.manifold, y), float(f)))
    return EstimateReport(
        optimum=_to_point(s.manifold, y_best),
        objective=float(f_best),
        t=tag,
        converged=True,
        grad_norm=float(best[2]),
        iterations=tuple(iterations),
        selected_start=sel,
        near_ties=tuple(ties),
    )


# ---------------------------------------------------------------------------
# public estimators

def neg_log_likelihood(s: Sample, y: Point, t, cfg: KernelConfig = DEFAULT_CONFIG) -> float:
    """Weighted negative log likelihood -sum_i w_i ln p(X_i, y, t)."""
    if y.manifold != s.manifold:
        raise ValueError(f"candidate on {y.manifold} does not match sample on {s.manifold}")
    t = t.t if isinstance(t, Diffusivity) else float(t)
    return _make_objective(s, t, cfg).value(_raw(y))


def frechet_value(s: Sample, y: Point) -> float:
    """Weighted Fréchet function sum_i w_i dist(X_i, y)^2."""
    if y.manifold != s.manifold:
        raise ValueError(f"candidate on {y.manifold} does not match sample on {s.manifold}")
    return _make_objective(s, FRECHET, DEFAULT_CONFIG).value(_raw(y))


def diffusion_mean(
    s: Sample,
    t,
    opts: OptimOptions = OptimOptions(),
    cfg: KernelConfig = DEFAULT_CONFIG,
) -> EstimateReport:
    """Minimize the sample negative log likelihood at fixed diffusivity t."""
    td = t if isinstance(t, Diffusivity) else Diffusivity(float(t))
    obj = _make_objective(s, td.t, cfg)
    return _run_multistart(s, obj, _build_starts(obj, opts), opts, td)


def frechet_mean(s: Sample, opts: OptimOptions = OptimOptions()) -> EstimateReport:
    """Minimize the Fréchet function (expected squared distance to the data)."""
    obj = _make_objective(s, FRECHET, DEFAULT_CONFIG)
    extra = []
    if s.manifold.kind is Kind.CIRCLE:
        # the objective is piecewise smooth with breaks at data antipodes: seed
        # one start inside every arc between consecutive sorted data points
        a = np.sort(np.unique(obj.X))
        if a.size > 1:
            mids = (a[:-1] + a[1:]) / 2.0
            extra = [float(v) for v in mids] + [float(wrap_angle((a[-1] + a[0] + 2.0 * math.pi) / 2.0))]
        else:
            extra = [float(a[0])]
    return _run_multistart(s, obj, _build_starts(obj, opts, extra=extra), opts, FRECHET)


def joint_fit(
    s: Sample,
    t_lo: float,
    t_hi: float,
    opts: OptimOptions = OptimOptions(),
    cfg: KernelConfig = DEFAULT_CONFIG,
) -> tuple[Diffusivity, EstimateReport]:
    """Jointly estimate (t, mean) by minimizing the profile objective t -> min_y L.

    A 16-point log-grid scan seeds a golden-section search over ln t; the
    inner minimization is warm-started from the previous optimum.  A minimum
    attained at the boundary of [t_lo, t_hi] is flagged in the report
    warnings rather than raised.
    """
    if not (0.0 < t_lo < t_hi):
        raise ValueError(f"need 0 < t_lo < t_hi, got [{t_lo}, {t_hi}]")
    grid = np.linspace(math.log(t_lo), math.log(t_hi), 16)
    trace: list[tuple[float, float]] = []
    warm = None

    def profile(lt: float, full: bool) -> tuple[float, object]:
        t = math.exp(lt)
        obj = _make_objective(s, t, cfg)
        extra = [warm] if warm is not None else []
        if full:
            starts = _build_starts(obj, opts, extra=extra)
        else:
            starts = extra + _canonical_starts(obj.kind, obj.m, obj.X, obj.w)
        rep = _run_multistart(s, obj, starts, opts, Diffusivity(t))
        trace.append((t, rep.objective))
        return rep.objective, _raw(rep.optimum)

    values = []
    for lt in grid:
        v, warm = profile(lt, full=True)
        values.append(v)
    i = int(np.argmin(values))
    boundary = i in (0, len(grid) - 1)
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, len(grid) - 1)]
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, _ = profile(c, full=False)
    fd, _ = profile(d, full=False)
    while b - a > 1e-6:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc, _ = profile(c, full=False)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd, _ = profile(d, full=False)
    t_hat = Diffusivity(math.exp(0.5 * (a + b)))
    obj = _make_objective(s, t_hat.t, cfg)
    rep = _run_multistart(s, obj, _build_starts(obj, opts, extra=[warm]), opts, t_hat)
    trace.append((t_hat.t, rep.objective))
    warnings = ()
    if boundary:
        side = "t_lo" if i == 0 else "t_hi"
        warnings = (f"profile objective is minimized at the {side} boundary; t estimate is not interior",)
    rep = replace(rep, warnings=warnings, t_trace=tuple(sorted(trace)))
    return t_hat, rep


def profile_likelihood(s: Sample, ts, grid) -> list[tuple[Diffusivity, Point, float]]:
    """Raw objective values L(t, y) over a grid of candidate points.

    Display rescaling is deliberately left to plotting scripts; the returned
    values are the unmodified negative log likelihoods.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("grid must be nonempty")
    for g in grid:
        if g.manifold != s.manifold:
            raise ValueError("grid points must lie on the sample manifold")
    kind = s.manifold.kind
    Y = np.array([_raw(g) for g in grid]) if kind is Kind.CIRCLE else np.stack([_raw(g) for g in grid])
    rows: list[tuple[Diffusivity, Point, float]] = []
    for t in ts:
        td = t if isinstance(t, Diffusivity) else Diffusivity(float(t))
        vals = _make_objective(s, td.t, DEFAULT_CONFIG if not isinstance(t, Diffusivity) else DEFAULT_CONFIG).value_many(Y)
        rows.extend((td, g, float(v)) for g, v in zip(grid, vals))
    return rows


def _probe_directions(kind: Kind, m: int, y) -> list:
    if kind is Kind.CIRCLE:
        return [1.0, -1.0]
    basis = tangent_basis_raw(kind, m, y)
    dirs = []
    for b in basis:
        dirs.append(b)
        dirs.append(-b)
    if m >= 2:
        for j in range(16):
            a = 2.0 * math.pi * j / 16.0
            dirs.append(math.cos(a) * basis[0] + math.sin(a) * basis[1])
    return dirs


def flatness_exponent(
    s: Sample,
    t,
    mu: Point,
    radii,
    cfg: KernelConfig = DEFAULT_CONFIG,
) -> float:
    """Least-squares slope of ln sup-gap against ln radius around a converged mean.

    The sup runs over a fixed angular design of tangent directions (the two
    directions +/-delta on the circle).  Any probe with non-positive gap
    (mu not a strict local minimum at that radius) raises FlatnessError.
    """
    radii = [float(r) for r in radii]
    if len(radii) < 2:
        raise ValueError("need at least two radii to fit a slope")
    inj = s.manifold.injectivity_radius
    if any(not 0.0 < r < inj for r in radii):
        raise ValueError(f"radii must lie in (0, {inj})")
    if mu.manifold != s.manifold:
        raise ValueError("mu must lie on the sample manifold")
    tag = FRECHET if (isinstance(t, str) and t == FRECHET) else (t.t if isinstance(t, Diffusivity) else float(t))
    obj = _make_objective(s, tag, cfg)
    y0 = _raw(mu)
    f0 = obj.value(y0)
    dirs = _probe_directions(obj.kind, obj.m, y0)
    gaps = []
    for r in radii:
        probes = (
            np.array([obj.exp(y0, d, r) for d in dirs])
            if obj.kind is Kind.CIRCLE
            else np.stack([obj.exp(y0, d, r) for d in dirs])
        )
        gap = float(obj.value_many(probes).max() - f0)
        if gap <= 0.0:
            raise FlatnessError(f"objective does not increase at radius {r:g}", r)
        gaps.append(gap)
    slope = float(np.polyfit(np.log(radii), np.log(gaps), 1)[0])
    return max(slope, 0.0)


# ---------------------------------------------------------------------------
# batched circle descent (bootstrap hot path)

def _circle_batch_fg(theta: np.ndarray, y: np.ndarray, tag, cfg: KernelConfig):
    """Objective and gradient for rows of resampled angles; uniform row weights."""
    d = signed_arc(y[:, None] - theta)
    if tag == FRECHET:
        return (d * d).mean(axis=1), 2.0 * d.mean(axis=1)
    t = tag
    if t <= CIRCLE_SPECTRAL_CROSSOVER:
        f = -_circle_log_wrapped(d, t, cfg).mean(axis=1)
    else:
        f = -_circle_log_spectral(d, t, cfg).mean(axis=1)
    g = -_circle_dlogp(d, t, cfg).mean(axis=1)
    return f, g


def _circle_batch_descend(theta: np.ndarray, y0: np.ndarray, tag, opts: OptimOptions, cfg: KernelConfig):
    y = np.array(y0, dtype=float)
    f, g = _circle_batch_fg(theta, y, tag, cfg)
    step = np.full(y.shape, opts.initial_step)
    stalled = np.zeros(y.shape, dtype=bool)
    for _ in range(4 * opts.max_iters):
        gn = np.abs(g)
        active = (gn > opts.grad_tol) & ~stalled
        if not active.any():
            break
        y_try = wrap_angle(y - step * g)
        f_try, g_try = _circle_batch_fg(theta, y_try, tag, cfg)
        ok = active & (f_try <= f - 1e-4 * step * gn * gn)
        rej = active & ~ok
        y[ok], f[ok], g[ok] = y_try[ok], f_try[ok], g_try[ok]
        step[ok] = np.minimum(step[ok] / opts.step_shrink, 1e6)
        step[rej] *= opts.step_shrink
        stalled |= step < _MIN_STEP
    return y, f, np.abs(g) <= opts.grad_tol


def _circle_batch_minimize(theta: np.ndarray, tag, warm: float, opts: OptimOptions, cfg: KernelConfig):
    """Per-row minimization over a small multistart set: the full-sample warm
    start, each row's extrinsic circular mean, and its antipode."""
    B = theta.shape[0]
    mean_dir = wrap_angle(np.arctan2(np.sin(theta).mean(axis=1), np.cos(theta).mean(axis=1)))
    starts = [np.full(B, wrap_angle(warm)), mean_dir, wrap_angle(mean_dir + math.pi)]
    best_y = np.full(B, np.nan)
    best_f = np.full(B, np.inf)
    any_conv = np.zeros(B, dtype=bool)
    for y0 in starts:
        y, f, conv = _circle_batch_descend(theta, y0, tag, opts, cfg)
        take = conv & (f < best_f)
        best_y[take], best_f[take] = y[take], f[take]
        any_conv |= conv
    return best_y, best_f, any_conv
