"""Univariate and tensor-product B-spline bases and the geometry map.

Evaluation follows the classic knot-span algorithms (Cox-de Boor recursion
and the knot-difference derivative formula). All objects are immutable after
construction and safe for concurrent read access.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KnotVector",
    "TensorSpace",
    "GeometryMap",
    "open_uniform_knots",
    "find_span",
    "eval_basis",
    "eval_basis_derivs",
    "eval_basis_derivs_span",
    "basis_matrix",
    "greville_abscissae",
    "rectangle_geometry",
    "map_point",
    "map_jacobian",
    "parametric_lattice_coords",
    "knot_image_lattice",
]


class SplineError(ValueError):
    """Invalid spline data or evaluation outside the parametric domain."""


@dataclass(frozen=True)
class KnotVector:
    """Open knot vector on [0, 1] with degree ``p`` and ``n`` basis functions."""

    knots: np.ndarray
    p: int
    n: int = field(init=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "n", knots.size - self.p - 1)
        if self.p < 0:
            raise SplineError("degree must be nonnegative")
        if np.any(np.diff(knots) < 0):
            raise SplineError("knots must be nondecreasing")
        p = self.p
        if not (np.all(knots[: p + 1] == knots[0]) and np.all(knots[-(p + 1):] == knots[-1])):
            raise SplineError("knot vector must be open (end knots repeated p+1 times)")
        if knots.size > p + 1 and (knots[p + 1] == knots[0] or knots[-(p + 2)] == knots[-1]):
            raise SplineError("end knots repeated more than p+1 times")
        if self.n < self.p + 1:
            raise SplineError("need at least p+1 basis functions")

    @property
    def breakpoints(self) -> np.ndarray:
        """Unique knots (element boundaries)."""
        return np.unique(self.knots)

    @property
    def num_spans(self) -> int:
        return self.breakpoints.size - 1


def open_uniform_knots(p: int, num_elements: int, lo: float = 0.0, hi: float = 1.0) -> KnotVector:
    """Open knot vector with ``num_elements`` uniform spans on [lo, hi]."""
    if num_elements < 1:
        raise SplineError("need at least one element")
    interior = np.linspace(lo, hi, num_elements + 1)[1:-1]
    knots = np.concatenate([np.full(p + 1, lo), interior, np.full(p + 1, hi)])
    return KnotVector(knots, p)


def find_span(kv: KnotVector, xi: float) -> int:
    """Index ``i`` of the knot span with ``knots[i] <= xi < knots[i+1]``.

    ``xi`` must lie in [0, 1]; the right boundary is clamped into the last
    nonempty span so evaluation is closed on the full interval.
    """
    knots, p, n = kv.knots, kv.p, kv.n
    if not (knots[0] <= xi <= knots[-1]):
        raise SplineError(f"parametric coordinate {xi} outside [{knots[0]}, {knots[-1]}]")
    if xi >= knots[n]:
        return n - 1
    lo, hi = p, n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xi < knots[mid]:
            hi = mid
        else:
            lo = mid
    return lo


def eval_basis(kv: KnotVector, xi: float) -> tuple[int, np.ndarray]:
    """Evaluate the ``p+1`` basis functions active at ``xi``.

    Returns the span index and the values of functions
    ``span-p, ..., span`` computed by the Cox-de Boor recursion.
    """
    span = find_span(kv, xi)
    knots, p = kv.knots, kv.p
    values = np.empty(p + 1)
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    values[0] = 1.0
    for j in range(1, p + 1):
        left[j] = xi - knots[span + 1 - j]
        right[j] = knots[span + j] - xi
        saved = 0.0
        for r in range(j):
            tmp = values[r] / (right[r + 1] + left[j - r])
            values[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        values[j] = saved
    return span, values


def eval_basis_derivs(kv: KnotVector, xi: float, order: int) -> tuple[int, np.ndarray]:
    """Values and derivatives up to ``order`` of the active basis functions.

    Returns ``(span, ders)`` with ``ders`` of shape ``(order+1, p+1)``;
    row ``k`` holds the k-th derivatives of functions ``span-p..span``.
    Derivatives use the analytic knot-difference formula.
    """
    if order not in (0, 1, 2):
        raise SplineError("derivative order must be 0, 1 or 2")
    if order > kv.p:
        raise SplineError(f"order {order} exceeds degree {kv.p}")
    span = find_span(kv, xi)
    knots, p = kv.knots, kv.p

    # Triangular table of all lower-degree bases plus knot differences,
    # following the standard all-derivatives algorithm.
    ndu = np.empty((p + 1, p + 1))
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = xi - knots[span + 1 - j]
        right[j] = knots[span + j] - xi
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            tmp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        ndu[j, j] = saved

    ders = np.zeros((order + 1, p + 1))
    ders[0, :] = ndu[:, p]
    a = np.empty((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, order + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, order + 1):
        ders[k, :] *= fac
        fac *= p - k
    return span, ders


def eval_basis_derivs_span(kv: KnotVector, span: int, xis: np.ndarray,
                           order: int) -> np.ndarray:
    """Vectorized variant of :func:`eval_basis_derivs` for a known span.

    All points must lie in (or within roundoff of) the given span. Returns
    an array of shape ``(order+1, len(xis), p+1)``.
    """
    if order > kv.p:
        raise SplineError(f"order {order} exceeds degree {kv.p}")
    knots, p = kv.knots, kv.p
    xis = np.asarray(xis, dtype=float)
    m = xis.size

    ndu = np.empty((p + 1, p + 1, m))
    left = np.empty((p + 1, m))
    right = np.empty((p + 1, m))
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = xis - knots[span + 1 - j]
        right[j] = knots[span + j] - xis
        saved = np.zeros(m)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            tmp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        ndu[j, j] = saved

    ders = np.zeros((order + 1, m, p + 1))
    for r in range(p + 1):
        ders[0, :, r] = ndu[r, p]
    a = np.empty((2, p + 1, m))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, order + 1):
            d = np.zeros(m)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            ders[k, :, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, order + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


def basis_matrix(kv: KnotVector, xis: np.ndarray) -> np.ndarray:
    """Dense collocation matrix ``B[a, i]`` of all ``n`` functions at points ``xis``."""
    xis = np.asarray(xis, dtype=float)
    out = np.zeros((xis.size, kv.n))
    for a, xi in enumerate(xis):
        span, vals = eval_basis(kv, xi)
        out[a, span - kv.p : span + 1] = vals
    return out


def greville_abscissae(kv: KnotVector) -> np.ndarray:
    """Knot-average points associated with the control points."""
    p = kv.p
    return np.array([kv.knots[i + 1 : i + p + 1].mean() for i in range(kv.n)])


@dataclass(frozen=True)
class TensorSpace:
    """Tensor product of two univariate bases with equal degree.

    The flat basis index follows ``index = i1 * n2 + i2`` (second direction
    fastest), matching the row-major control-point layout.
    """

    kv1: KnotVector
    kv2: KnotVector

    def __post_init__(self):
        if self.kv1.p != self.kv2.p:
            raise SplineError("tensor space requires equal degree in both directions")

    @property
    def p(self) -> int:
        return self.kv1.p

    @property
    def shape(self) -> tuple[int, int]:
        return self.kv1.n, self.kv2.n

    @property
    def num_basis(self) -> int:
        return self.kv1.n * self.kv2.n

    def flat_index(self, i1: int, i2: int) -> int:
        return i1 * self.kv2.n + i2

    def support(self, i1: int, i2: int) -> tuple[tuple[float, float], tuple[float, float]]:
        """Parametric support rectangle of basis function (i1, i2)."""
        k1, k2, p = self.kv1.knots, self.kv2.knots, self.p
        return (k1[i1], k1[i1 + p + 1]), (k2[i2], k2[i2 + p + 1])


@dataclass(frozen=True)
class GeometryMap:
    """Spline geometry map from [0,1]^2 to the physical domain."""

    space: TensorSpace
    control_points: np.ndarray  # (num_basis, 2), row-major over the tensor grid

    def __post_init__(self):
        pts = np.asarray(self.control_points, dtype=float)
        object.__setattr__(self, "control_points", pts)
        if pts.shape != (self.space.num_basis, 2):
            raise SplineError(
                f"expected {self.space.num_basis} control points, got {pts.shape[0]}"
            )


def rectangle_geometry(space: TensorSpace, length: float, height: float,
                       origin: tuple[float, float] = (0.0, 0.0)) -> GeometryMap:
    """Geometry map for the axis-aligned rectangle ``[0,L] x [0,H]`` (shifted by origin).

    Control points sit at the Greville abscissae scaled to the rectangle,
    which makes the map exactly affine.
    """
    g1 = greville_abscissae(space.kv1)
    g2 = greville_abscissae(space.kv2)
    xs = origin[0] + length * g1
    ys = origin[1] + height * g2
    pts = np.empty((space.num_basis, 2))
    for i1 in range(space.kv1.n):
        for i2 in range(space.kv2.n):
            pts[space.flat_index(i1, i2)] = (xs[i1], ys[i2])
    return GeometryMap(space, pts)


def map_point(g: GeometryMap, xi: np.ndarray) -> np.ndarray:
    """Physical image of the parametric point ``xi``."""
    s1, v1 = eval_basis(g.space.kv1, float(xi[0]))
    s2, v2 = eval_basis(g.space.kv2, float(xi[1]))
    p = g.space.p
    out = np.zeros(2)
    for a in range(p + 1):
        i1 = s1 - p + a
        base = i1 * g.space.kv2.n
        for b in range(p + 1):
            out += v1[a] * v2[b] * g.control_points[base + s2 - p + b]
    return out


def map_jacobian(g: GeometryMap, xi: np.ndarray) -> np.ndarray:
    """Jacobian dF/dxi (2x2) at the parametric point ``xi``.

    Raises if the Jacobian determinant is not strictly positive.
    """
    s1, d1 = eval_basis_derivs(g.space.kv1, float(xi[0]), 1)
    s2, d2 = eval_basis_derivs(g.space.kv2, float(xi[1]), 1)
    p = g.space.p
    jac = np.zeros((2, 2))
    for a in range(p + 1):
        i1 = s1 - p + a
        base = i1 * g.space.kv2.n
        for b in range(p + 1):
            pt = g.control_points[base + s2 - p + b]
            jac[:, 0] += d1[1, a] * d2[0, b] * pt
            jac[:, 1] += d1[0, a] * d2[1, b] * pt
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    if det <= 0.0:
        raise SplineError(f"singular geometry map (det = {det})")
    return jac


def parametric_lattice_coords(kv: KnotVector) -> np.ndarray:
    """Unique knots plus the midpoint of every nonempty span, sorted."""
    bp = kv.breakpoints
    mids = 0.5 * (bp[:-1] + bp[1:])
    return np.sort(np.concatenate([bp, mids]))


def knot_image_lattice(g: GeometryMap) -> np.ndarray:
    """Physical sampling lattice: images of knots and span midpoints.

    Points are ordered lexicographically over the parametric grid (first
    direction outer). The lattice depends only on the geometry, never on
    the crack, so it provides a fixed sampling set across parameters.
    """
    c1 = parametric_lattice_coords(g.space.kv1)
    c2 = parametric_lattice_coords(g.space.kv2)
    pts = np.empty((c1.size * c2.size, 2))
    k = 0
    for a in c1:
        for b in c2:
            pts[k] = map_point(g, np.array([a, b]))
            k += 1
    return pts
