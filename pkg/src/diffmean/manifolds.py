"""Geometry primitives for the four supported manifold families.

Points, tangent vectors, distances, and exponential/logarithm maps on
Euclidean space R^m, the unit circle S^1 (angle coordinate, arc-length
distance), the unit sphere S^m (extrinsic unit vectors), and hyperbolic
space H^m (hyperboloid model with Minkowski form of signature -+...+).

All public operations are pure functions of immutable values and are safe
to call concurrently.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# cut-locus proximity threshold: log_map refuses to pick a branch closer
# than this to the antipode (distance pi on Circle/Sphere)
CUT_LOCUS_TOL = 1e-8


class CutLocusError(ValueError):
    """Logarithm requested at (or too close to) the cut locus, where it is not unique."""


class Kind(enum.Enum):
    EUCLIDEAN = "euclidean"
    CIRCLE = "circle"
    SPHERE = "sphere"
    HYPERBOLIC = "hyperbolic"


@dataclass(frozen=True)
class ManifoldSpec:
    """Tagged description of a data space: family plus intrinsic dimension."""

    kind: Kind
    dim: int

    def __post_init__(self):
        if not isinstance(self.kind, Kind):
            object.__setattr__(self, "kind", Kind(self.kind))
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.kind is Kind.CIRCLE and self.dim != 1:
            raise ValueError("Circle has intrinsic dimension 1")
        if self.kind in (Kind.SPHERE, Kind.HYPERBOLIC) and self.dim < 2:
            raise ValueError(f"{self.kind.value} requires dim >= 2 (use Circle for S^1)")

    @property
    def ambient_dim(self) -> int:
        """Length of the coordinate vector used to represent a point."""
        if self.kind in (Kind.EUCLIDEAN, Kind.CIRCLE):
            return self.dim
        return self.dim + 1

    @property
    def injectivity_radius(self) -> float:
        return math.pi if self.kind in (Kind.CIRCLE, Kind.SPHERE) else math.inf

    def __str__(self):
        return f"{self.kind.value}({self.dim})"


def euclidean(dim: int) -> ManifoldSpec:
    return ManifoldSpec(Kind.EUCLIDEAN, dim)


def circle() -> ManifoldSpec:
    return ManifoldSpec(Kind.CIRCLE, 1)


def sphere(dim: int = 2) -> ManifoldSpec:
    return ManifoldSpec(Kind.SPHERE, dim)


def hyperbolic(dim: int = 2) -> ManifoldSpec:
    return ManifoldSpec(Kind.HYPERBOLIC, dim)


# ---------------------------------------------------------------------------
# raw-coordinate helpers (vectorized; used by the estimation hot paths)

def wrap_angle(a):
    """Wrap angles into [0, 2*pi)."""
    return np.mod(a, TWO_PI)


def signed_arc(a):
    """Wrap angle differences into (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(a), TWO_PI)


def circle_dist(a, b):
    return np.abs(signed_arc(np.asarray(a) - b))


def sphere_inner(x, y):
    return np.sum(np.asarray(x) * y, axis=-1)


def sphere_dist(x, y):
    return np.arccos(np.clip(sphere_inner(x, y), -1.0, 1.0))


def sphere_project(x):
    x = np.asarray(x, dtype=float)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / n


def sphere_exp(x, v):
    """Geodesic from x with initial velocity v, unit time; renormalized."""
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    small = nv < 1e-300
    nv_safe = np.where(small, 1.0, nv)
    y = np.cos(nv) * x + np.sin(nv) * (v / nv_safe)
    return sphere_project(np.where(small, x, y))


def sphere_log(x, y):
    c = np.clip(sphere_inner(x, y), -1.0, 1.0)
    theta = np.arccos(c)
    w = y - c[..., None] * x
    nw = np.linalg.norm(w, axis=-1, keepdims=True)
    safe = np.where(nw < 1e-300, 1.0, nw)
    return np.where(nw < 1e-300, 0.0, theta[..., None] * w / safe)


def minkowski_inner(u, v):
    u, v = np.asarray(u), np.asarray(v)
    return np.sum(u * v, axis=-1) - 2.0 * u[..., 0] * v[..., 0]


def hyp_dist(x, y):
    return np.arccosh(np.maximum(-minkowski_inner(x, y), 1.0))


def hyp_project(x):
    """Scale onto the hyperboloid sheet <x,x> = -1, x0 > 0."""
    x = np.asarray(x, dtype=float)
    q = -minkowski_inner(x, x)
    if np.any(q <= 0) or np.any(x[..., 0] <= 0):
        raise ValueError("coordinates do not lie inside the upper Minkowski cone")
    return x / np.sqrt(q)[..., None]


def hyp_exp(x, v):
    nv2 = minkowski_inner(v, v)
    nv = np.sqrt(np.maximum(nv2, 0.0))
    small = nv < 1e-300
    nv_safe = np.where(small, 1.0, nv)
    y = np.cosh(nv)[..., None] * x + (np.sinh(nv) / nv_safe)[..., None] * v
    return hyp_project(np.where(small[..., None], x, y))


def hyp_log(x, y):
    theta = hyp_dist(x, y)
    w = y + minkowski_inner(x, y)[..., None] * x
    s = np.sinh(theta)
    safe = np.where(s < 1e-300, 1.0, s)
    return np.where(s[..., None] < 1e-300, 0.0, (theta / safe)[..., None] * w)


# ---------------------------------------------------------------------------
# typed point / tangent values

@dataclass(frozen=True)
class Point:
    """Coordinates constrained to a manifold; renormalized on construction."""

    manifold: ManifoldSpec
    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float).reshape(-1)
        if c.shape[0] != self.manifold.ambient_dim:
            raise ValueError(
                f"expected {self.manifold.ambient_dim} coordinates on {self.manifold}, got {c.shape[0]}"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("coordinates must be finite")
        kind = self.manifold.kind
        if kind is Kind.CIRCLE:
            c = wrap_angle(c)
        elif kind is Kind.SPHERE:
            n = float(np.linalg.norm(c))
            if abs(n - 1.0) > 1e-6:
                raise ValueError(f"sphere coordinates have norm {n:.6g}, not a unit vector")
            c = c / n
        elif kind is Kind.HYPERBOLIC:
            q = float(-minkowski_inner(c, c))
            if c[0] <= 0 or q <= 0 or abs(q - 1.0) > 1e-4:
                raise ValueError("coordinates do not satisfy the hyperboloid constraint")
            c = c / math.sqrt(q)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def __eq__(self, other):
        return (
            isinstance(other, Point)
            and self.manifold == other.manifold
            and np.array_equal(self.coords, other.coords)
        )

    def __hash__(self):
        return hash((self.manifold, self.coords.tobytes()))


@dataclass(frozen=True)
class Tangent:
    """Tangent vector in the ambient representation, anchored at ``base``."""

    base: Point
    vec: np.ndarray

    def __post_init__(self):
        v = np.array(self.vec, dtype=float).reshape(-1)
        if v.shape[0] != self.base.manifold.ambient_dim:
            raise ValueError("tangent vector has wrong ambient dimension")
        kind = self.base.manifold.kind
        x = self.base.coords
        if kind is Kind.SPHERE:
            r = float(np.dot(v, x))
            if abs(r) > 1e-6:
                raise ValueError(f"vector is not tangent to the sphere (residual {r:.3g})")
            v = v - r * x
        elif kind is Kind.HYPERBOLIC:
            r = float(minkowski_inner(v, x))
            if abs(r) > 1e-6:
                raise ValueError(f"vector is not tangent to the hyperboloid (residual {r:.3g})")
            v = v + r * x
        v.setflags(write=False)
        object.__setattr__(self, "vec", v)

    @property
    def norm(self) -> float:
        kind = self.base.manifold.kind
        if kind is Kind.HYPERBOLIC:
            return math.sqrt(max(float(minkowski_inner(self.vec, self.vec)), 0.0))
        return float(np.linalg.norm(self.vec))


def _require_on(M: ManifoldSpec, p: Point, name: str):
    if p.manifold != M:
        raise ValueError(f"{name} lies on {p.manifold}, expected {M}")


# ---------------------------------------------------------------------------
# public operations

def dist(M: ManifoldSpec, x: Point, y: Point) -> float:
    """Riemannian distance between two points of M."""
    _require_on(M, x, "x")
    _require_on(M, y, "y")
    if M.kind is Kind.EUCLIDEAN:
        return float(np.linalg.norm(x.coords - y.coords))
    if M.kind is Kind.CIRCLE:
        return float(circle_dist(x.coords[0], y.coords[0]))
    if M.kind is Kind.SPHERE:
        return float(sphere_dist(x.coords, y.coords))
    return float(hyp_dist(x.coords, y.coords))


def exp_map(M: ManifoldSpec, x: Point, v: Tangent) -> Point:
    """Point reached in unit time along the geodesic from x with velocity v."""
    _require_on(M, x, "x")
    if v.base != x:
        raise ValueError("tangent vector is not anchored at x")
    if M.kind is Kind.EUCLIDEAN:
        return Point(M, x.coords + v.vec)
    if M.kind is Kind.CIRCLE:
        return Point(M, wrap_angle(x.coords + v.vec))
    if M.kind is Kind.SPHERE:
        return Point(M, sphere_exp(x.coords, v.vec))
    return Point(M, hyp_exp(x.coords, v.vec))


def log_map(M: ManifoldSpec, x: Point, y: Point) -> Tangent:
    """Inverse of exp_map at x; rejects y within CUT_LOCUS_TOL of the cut locus of x.

    Raises
    ------
    CutLocusError
        If y is within 1e-8 of the antipode of x (Circle and Sphere), where
        the minimizing geodesic is not unique.
    """
    _require_on(M, x, "x")
    _require_on(M, y, "y")
    if M.kind is Kind.EUCLIDEAN:
        return Tangent(x, y.coords - x.coords)
    if M.kind is Kind.CIRCLE:
        d = float(signed_arc(y.coords[0] - x.coords[0]))
        if math.pi - abs(d) < CUT_LOCUS_TOL:
            raise CutLocusError("y is antipodal to x on the circle; logarithm is not unique")
        return Tangent(x, np.array([d]))
    if M.kind is Kind.SPHERE:
        theta = float(sphere_dist(x.coords, y.coords))
        if math.pi - theta < CUT_LOCUS_TOL:
            raise CutLocusError("y is antipodal to x on the sphere; logarithm is not unique")
        return Tangent(x, sphere_log(x.coords, y.coords))
    return Tangent(x, hyp_log(x.coords, y.coords))


def uniform_sample(M: ManifoldSpec, rng_seed: int, n: int) -> list[Point]:
    """Draw n independent points, deterministically from the seed.

    Circle and Sphere use the uniform (round) measure.  Euclidean and
    Hyperbolic space carry no uniform law; there the draw is isotropic with
    unit scale around the canonical origin (standard normal coordinates,
    respectively a standard normal tangent vector pushed through exp at the
    hyperboloid base point).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(rng_seed)
    if M.kind is Kind.EUCLIDEAN:
        return [Point(M, c) for c in rng.standard_normal((n, M.dim))]
    if M.kind is Kind.CIRCLE:
        return [Point(M, [a]) for a in rng.uniform(0.0, TWO_PI, n)]
    if M.kind is Kind.SPHERE:
        z = rng.standard_normal((n, M.dim + 1))
        return [Point(M, c) for c in sphere_project(z)]
    base = np.zeros(M.dim + 1)
    base[0] = 1.0
    vs = np.concatenate([np.zeros((n, 1)), rng.standard_normal((n, M.dim))], axis=1)
    return [Point(M, hyp_exp(base, v)) for v in vs]


def tangent_basis_raw(kind: Kind, m: int, y: np.ndarray) -> list[np.ndarray]:
    """Deterministic orthonormal basis of the tangent space at raw coordinates y."""
    if kind is Kind.EUCLIDEAN:
        return [e for e in np.eye(m)]
    if kind is Kind.CIRCLE:
        return [np.array([1.0])]
    if kind is Kind.SPHERE:
        y = np.asarray(y, dtype=float)
        q, _ = np.linalg.qr(np.concatenate([y[:, None], np.eye(m + 1)], axis=1))
        return [q[:, j] for j in range(1, m + 1)]
    # Minkowski Gram-Schmidt on the projections of the ambient basis
    x = np.asarray(y, dtype=float)
    basis: list[np.ndarray] = []
    for e in np.eye(m + 1):
        v = e + minkowski_inner(e, x) * x
        for b in basis:
            v = v - minkowski_inner(v, b) * b
        q = float(minkowski_inner(v, v))
        if q > 1e-12:
            basis.append(v / math.sqrt(q))
        if len(basis) == m:
            break
    return basis


def tangent_basis(y: Point) -> list[np.ndarray]:
    """Deterministic orthonormal basis of the tangent space at y (ambient arrays)."""
    return tangent_basis_raw(y.manifold.kind, y.manifold.dim, y.coords)
