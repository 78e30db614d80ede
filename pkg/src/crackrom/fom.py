"""Full-order 2D plane-strain elasticity solver with crack enrichment.

The displacement field is discretized with tensor-product B-splines and
locally augmented with a sign function across the crack faces and four
square-root branch functions around each crack tip. Cut elements are
integrated on a crack-conforming triangulation; the tip element uses a
refined fan of triangles centered at the tip.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .splines import (
    GeometryMap,
    KnotVector,
    TensorSpace,
    eval_basis,
    eval_basis_derivs,
    find_span,
    open_uniform_knots,
    rectangle_geometry,
)

__all__ = [
    "MaterialModel",
    "CrackSpec",
    "ParameterVector",
    "LevelSets",
    "EnrichedSpace",
    "BoundaryConditions",
    "LinearSystem",
    "PlateProblem",
    "FomSolution",
    "make_plate_problem",
    "validate_crack",
    "plane_strain_matrix",
    "compute_level_sets",
    "heaviside",
    "tip_functions",
    "classify_and_enrich",
    "assemble",
    "solve_fom",
    "evaluate_solution",
    "dump_system",
]

DENSE_SOLVE_LIMIT = 2000
ON_CRACK_TOL = 1e-12


class CrackSpecError(ValueError):
    """Crack geometry invalid for the given domain."""


class RankDeficiencyError(RuntimeError):
    """Constrained system is singular."""


class DomainError(ValueError):
    """Evaluation point outside the physical domain."""


@dataclass(frozen=True)
class MaterialModel:
    """Isotropic linear-elastic material under plane strain."""

    youngs_modulus: float
    poisson_ratio: float

    def __post_init__(self):
        if self.youngs_modulus <= 0.0:
            raise ValueError("Young's modulus must be positive")
        if not (0.0 <= self.poisson_ratio < 0.5):
            raise ValueError("Poisson ratio must lie in [0, 0.5)")


def plane_strain_matrix(mat: MaterialModel) -> np.ndarray:
    """3x3 constitutive matrix relating (eps_xx, eps_yy, gamma_xy) to stress."""
    E, nu = mat.youngs_modulus, mat.poisson_ratio
    c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return c * np.array([
        [1.0 - nu, nu, 0.0],
        [nu, 1.0 - nu, 0.0],
        [0.0, 0.0, (1.0 - 2.0 * nu) / 2.0],
    ])


@dataclass(frozen=True)
class CrackSpec:
    """Straight crack, either entering from the boundary or fully interior.

    * ``kind="edge"``: segment from ``entry`` (on the domain boundary) to
      ``tip`` (strictly inside).
    * ``kind="center"``: segment centered at ``center`` with the given
      half-length and orientation angle; both tips strictly inside.
    """

    kind: str
    entry: tuple[float, float] | None = None
    tip: tuple[float, float] | None = None
    center: tuple[float, float] | None = None
    half_length: float | None = None
    angle: float | None = None

    def __post_init__(self):
        if self.kind == "edge":
            if self.entry is None or self.tip is None:
                raise CrackSpecError("edge crack needs entry and tip points")
        elif self.kind == "center":
            if self.center is None or self.half_length is None or self.angle is None:
                raise CrackSpecError("center crack needs center, half_length and angle")
            if self.half_length <= 0.0:
                raise CrackSpecError("center crack half-length must be positive")
        else:
            raise CrackSpecError(f"unknown crack kind {self.kind!r}")
        a, b = self.segment()
        if np.hypot(b[0] - a[0], b[1] - a[1]) <= 0.0:
            raise CrackSpecError("degenerate crack of zero length")

    def segment(self) -> tuple[np.ndarray, np.ndarray]:
        """Endpoints (a, b) of the crack segment; b is always a tip."""
        if self.kind == "edge":
            return np.asarray(self.entry, float), np.asarray(self.tip, float)
        c = np.asarray(self.center, float)
        d = self.half_length * np.array([np.cos(self.angle), np.sin(self.angle)])
        return c - d, c + d

    def tips(self) -> list[np.ndarray]:
        a, b = self.segment()
        return [b] if self.kind == "edge" else [a, b]

    def tangent(self) -> np.ndarray:
        """Unit tangent from segment start to segment end."""
        a, b = self.segment()
        t = b - a
        return t / np.hypot(t[0], t[1])

    def normal(self) -> np.ndarray:
        """Global unit normal to the crack line (tangent rotated +90 deg)."""
        t = self.tangent()
        return np.array([-t[1], t[0]])

    def tip_frames(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per-tip (tip point, outward tangent, frame normal).

        The outward tangent points away from the crack; the frame normal is
        the outward tangent rotated by +90 degrees, so each frame is
        right-handed with the first axis along the prospective growth
        direction of that tip.
        """
        a, b = self.segment()
        t = self.tangent()
        frames = [(b, t, np.array([-t[1], t[0]]))]
        if self.kind == "center":
            frames.insert(0, (a, -t, np.array([t[1], -t[0]])))
        return frames


@dataclass(frozen=True)
class ParameterVector:
    """Point in parameter space with per-component bounds."""

    mu: np.ndarray
    bounds: np.ndarray  # (P, 2)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, float))
        bounds = np.asarray(self.bounds, float).reshape(-1, 2)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "bounds", bounds)
        if mu.size != bounds.shape[0]:
            raise ValueError("parameter/bounds dimension mismatch")
        if np.any(mu < bounds[:, 0] - 1e-12) or np.any(mu > bounds[:, 1] + 1e-12):
            raise ValueError(f"parameter {mu} outside bounds {bounds.tolist()}")


@dataclass(frozen=True)
class LevelSets:
    """Signed normal (phi) and tangential (psi) distances locating the crack.

    ``phi`` is the signed distance to the extended crack line with respect to
    the global crack normal. ``psi`` is the signed distance along the crack
    direction from the nearest tip: negative behind the tip (on the crack),
    positive ahead of it.
    """

    phi: float
    psi: float


def compute_level_sets(crack: CrackSpec, x) -> LevelSets:
    """Level-set pair of a physical point with respect to the crack."""
    x = np.asarray(x, float)
    a, b = crack.segment()
    n = crack.normal()
    phi = float(np.dot(x - a, n))
    psis = [float(np.dot(x - tip, t_out)) for tip, t_out, _ in crack.tip_frames()]
    dists = [np.hypot(*(x - tip)) for tip in crack.tips()]
    psi = psis[int(np.argmin(dists))]
    return LevelSets(phi=phi, psi=psi)


def heaviside(ls: LevelSets) -> int:
    """Sign function across the crack faces: +1 for phi >= 0, else -1."""
    return 1 if ls.phi >= 0.0 else -1


def tip_functions(r: float, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Four branch functions of the near-tip displacement field.

    Returns values ``[sqrt(r) sin(t/2), sqrt(r) cos(t/2),
    sqrt(r) sin(t/2) sin(t), sqrt(r) cos(t/2) sin(t)]`` and their gradients
    with respect to the tip-local Cartesian frame, obtained from the polar
    chain rule. ``r`` must be strictly positive.
    """
    if r <= 0.0:
        raise ValueError("tip functions are singular at r = 0")
    sr = np.sqrt(r)
    s2, c2 = np.sin(theta / 2.0), np.cos(theta / 2.0)
    st, ct = np.sin(theta), np.cos(theta)
    vals = np.array([sr * s2, sr * c2, sr * s2 * st, sr * c2 * st])
    dr = np.array([s2, c2, s2 * st, c2 * st]) / (2.0 * sr)
    dth = sr * np.array([
        0.5 * c2,
        -0.5 * s2,
        0.5 * c2 * st + s2 * ct,
        -0.5 * s2 * st + c2 * ct,
    ])
    grads = np.empty((4, 2))
    grads[:, 0] = ct * dr - (st / r) * dth
    grads[:, 1] = st * dr + (ct / r) * dth
    return vals, grads


def _tip_values_at(crack: CrackSpec, x, side: int = 0):
    """Branch values and global-frame gradients at a physical point.

    ``side`` forces the crack-face branch: the normal coordinate is replaced
    by ``side * |x2|`` so the evaluation continues the field from the
    requested face. ``side=0`` evaluates naturally. Exactly at a tip the
    values vanish and the gradients are zeroed.
    """
    x = np.asarray(x, float)
    tips = crack.tips()
    frames = crack.tip_frames()
    k = int(np.argmin([np.hypot(*(x - tip)) for tip in tips]))
    tip, t_out, n_frame = frames[k]
    d = x - tip
    x1 = float(np.dot(d, t_out))
    x2 = float(np.dot(d, n_frame))
    if side != 0:
        x2 = side * abs(x2)
    r = np.hypot(x1, x2)
    if r == 0.0:
        return np.zeros(4), np.zeros((4, 2))
    theta = np.arctan2(x2, x1)
    vals, gl = tip_functions(r, theta)
    grads = np.outer(gl[:, 0], t_out) + np.outer(gl[:, 1], n_frame)
    return vals, grads


@dataclass(frozen=True)
class EnrichedSpace:
    """Crack-dependent enriched solution space and its DOF numbering.

    DOFs are ordered: standard block (2 per basis function), then the jump
    block (2 per cut function), then the tip block (8 per tip function,
    branch-major within each function). All index arrays are sorted.
    """

    space: TensorSpace
    h_set: np.ndarray
    t_set: np.ndarray
    h_pos: dict = field(repr=False)
    t_pos: dict = field(repr=False)

    @property
    def num_std(self) -> int:
        return self.space.num_basis

    @property
    def n_dofs(self) -> int:
        return 2 * (self.num_std + self.h_set.size + 4 * self.t_set.size)

    def std_dof(self, flat: int, comp: int) -> int:
        return 2 * flat + comp

    def heav_dof(self, flat: int, comp: int) -> int:
        return 2 * self.num_std + 2 * self.h_pos[flat] + comp

    def tip_dof(self, flat: int, branch: int, comp: int) -> int:
        return 2 * (self.num_std + self.h_set.size) + 8 * self.t_pos[flat] + 2 * branch + comp


def _support_rect(space: TensorSpace, rect, i1: int, i2: int):
    """Physical support rectangle of a basis function on an affine rectangle."""
    (u0, u1), (v0, v1) = space.support(i1, i2)
    x0, y0, L, H = rect
    return (x0 + L * u0, x0 + L * u1, y0 + H * v0, y0 + H * v1)


def _clip_segment(a, b, rect) -> tuple[float, float] | None:
    """Liang-Barsky clip of segment a->b against [xa,xb]x[ya,yb].

    Returns the parameter interval (t0, t1) of the portion inside, or None.
    """
    xa, xb, ya, yb = rect
    d = (b[0] - a[0], b[1] - a[1])
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-d[0], a[0] - xa),
        (d[0], xb - a[0]),
        (-d[1], a[1] - ya),
        (d[1], yb - a[1]),
    ):
        if p == 0.0:
            if q < 0.0:
                return None
        else:
            t = q / p
            if p < 0.0:
                if t > t1:
                    return None
                t0 = max(t0, t)
            else:
                if t < t0:
                    return None
                t1 = min(t1, t)
    if t0 > t1:
        return None
    return t0, t1


def _point_in_rect(p, rect, tol=0.0) -> bool:
    xa, xb, ya, yb = rect
    return (xa - tol <= p[0] <= xb + tol) and (ya - tol <= p[1] <= yb + tol)


def validate_crack(crack: CrackSpec, rect) -> None:
    """Check the crack sits inside the rectangle [x0,x0+L]x[y0,y0+H]."""
    x0, y0, L, H = rect
    bounds = (x0, x0 + L, y0, y0 + H)
    eps = 1e-9 * max(L, H)

    def on_boundary(p):
        inside = _point_in_rect(p, bounds, tol=eps)
        at_edge = (abs(p[0] - bounds[0]) < eps or abs(p[0] - bounds[1]) < eps or
                   abs(p[1] - bounds[2]) < eps or abs(p[1] - bounds[3]) < eps)
        return inside and at_edge

    def strictly_inside(p):
        return (bounds[0] + eps < p[0] < bounds[1] - eps and
                bounds[2] + eps < p[1] < bounds[3] - eps)

    if crack.kind == "edge":
        a, b = crack.segment()
        if not on_boundary(a):
            raise CrackSpecError(f"edge-crack entry {tuple(a)} not on the domain boundary")
        if not strictly_inside(b):
            raise CrackSpecError(f"edge-crack tip {tuple(b)} not strictly inside the domain")
    else:
        for tip in crack.tips():
            if not strictly_inside(tip):
                raise CrackSpecError(f"crack tip {tuple(tip)} not strictly inside the domain")


def classify_and_enrich(space: TensorSpace, rect, crack: CrackSpec | None) -> EnrichedSpace:
    """Select which basis functions carry jump and tip enrichment.

    A function is tip-enriched when its closed support contains a tip
    (topological enrichment). It is jump-enriched when the crack segment
    crosses its support with positive length and the normal level set
    changes sign strictly across the support; tip enrichment takes
    precedence. ``rect = (x0, y0, L, H)`` is the physical rectangle.
    """
    n1, n2 = space.shape
    if crack is None:
        empty = np.array([], dtype=int)
        return EnrichedSpace(space=space, h_set=empty, t_set=empty, h_pos={}, t_pos={})

    validate_crack(crack, rect)
    a, b = crack.segment()
    nrm = crack.normal()
    tips = crack.tips()
    diam = np.hypot(rect[2], rect[3])
    tol_len = 1e-12 * diam
    tol_tip = 1e-12 * diam

    h_list, t_list = [], []
    for i1 in range(n1):
        for i2 in range(n2):
            sup = _support_rect(space, rect, i1, i2)
            flat = space.flat_index(i1, i2)
            if any(_point_in_rect(tip, sup, tol=tol_tip) for tip in tips):
                t_list.append(flat)
                continue
            clip = _clip_segment(a, b, sup)
            if clip is None:
                continue
            t0, t1 = clip
            seg_len = (t1 - t0) * np.hypot(*(b - a))
            if seg_len <= tol_len:
                continue
            corners = np.array([
                (sup[0], sup[2]), (sup[1], sup[2]), (sup[1], sup[3]), (sup[0], sup[3])
            ])
            phis = (corners - a) @ nrm
            if phis.min() < -tol_len and phis.max() > tol_len:
                h_list.append(flat)

    h_set = np.array(sorted(h_list), dtype=int)
    t_set = np.array(sorted(t_list), dtype=int)
    return EnrichedSpace(
        space=space,
        h_set=h_set,
        t_set=t_set,
        h_pos={f: j for j, f in enumerate(h_set)},
        t_pos={f: j for j, f in enumerate(t_set)},
    )


@dataclass(frozen=True)
class BoundaryConditions:
    """Homogeneous Dirichlet on one edge, traction on another.

    ``dirichlet_dir`` is the constrained displacement component (0=x, 1=y).
    ``pin_corner`` additionally fixes the other component at the first
    control point of the Dirichlet edge, removing the remaining rigid
    translation so that the reduced system is positive definite.
    """

    dirichlet_edge: str = "bottom"
    dirichlet_dir: int = 1
    neumann_edge: str = "top"
    traction: tuple[float, float] = (0.0, 1.0)
    body_force: tuple[float, float] = (0.0, 0.0)
    pin_corner: bool = True

    def __post_init__(self):
        edges = {"bottom", "top", "left", "right"}
        if self.dirichlet_edge not in edges or self.neumann_edge not in edges:
            raise ValueError("edges must be one of bottom/top/left/right")
        if self.dirichlet_edge == self.neumann_edge:
            raise ValueError("Dirichlet and Neumann edges must be disjoint")
        if self.dirichlet_dir not in (0, 1):
            raise ValueError("dirichlet_dir must be 0 or 1")


@dataclass(frozen=True)
class LinearSystem:
    """Assembled stiffness matrix, load vector and constrained DOF list."""

    A: scipy.sparse.csr_matrix
    f: np.ndarray
    constrained: np.ndarray


@dataclass(frozen=True)
class PlateProblem:
    """Rectangular plate problem: geometry, discretization, material, loads."""

    length: float
    height: float
    material: MaterialModel
    bc: BoundaryConditions
    space: TensorSpace
    geometry: GeometryMap
    origin: tuple[float, float] = (0.0, 0.0)

    @property
    def rect(self) -> tuple[float, float, float, float]:
        return (self.origin[0], self.origin[1], self.length, self.height)

    def param_of(self, x) -> np.ndarray:
        """Inverse of the affine rectangle map."""
        xi = np.array([
            (x[0] - self.origin[0]) / self.length,
            (x[1] - self.origin[1]) / self.height,
        ])
        if np.any(xi < -1e-10) or np.any(xi > 1.0 + 1e-10):
            raise DomainError(f"point {tuple(np.asarray(x, float))} outside the domain")
        return np.clip(xi, 0.0, 1.0)


def make_plate_problem(length: float, height: float, degree: int,
                       elements: tuple[int, int], material: MaterialModel,
                       bc: BoundaryConditions) -> PlateProblem:
    """Plate on [0,L]x[0,H] with uniform open knot vectors."""
    kv1 = open_uniform_knots(degree, elements[0])
    kv2 = open_uniform_knots(degree, elements[1])
    space = TensorSpace(kv1, kv2)
    geom = rectangle_geometry(space, length, height)
    return PlateProblem(length=length, height=height, material=material,
                        bc=bc, space=space, geometry=geom)


@dataclass(frozen=True)
class FomSolution:
    """Full-order solution: DOF vector with its enriched space."""

    problem: PlateProblem
    crack: CrackSpec | None
    space: EnrichedSpace
    u: np.ndarray
    constrained: np.ndarray


# --------------------------------------------------------------------------
# quadrature helpers
# --------------------------------------------------------------------------

_TRI7_BARY = None
_TRI7_W = None


def _tri7_rule():
    global _TRI7_BARY, _TRI7_W
    if _TRI7_BARY is None:
        s15 = np.sqrt(15.0)
        a1 = (6.0 + s15) / 21.0
        a2 = (6.0 - s15) / 21.0
        pts = [(1 / 3, 1 / 3, 1 / 3)]
        wts = [9.0 / 40.0]
        for a, w in ((a1, (155.0 + s15) / 1200.0), (a2, (155.0 - s15) / 1200.0)):
            pts += [(a, a, 1 - 2 * a), (a, 1 - 2 * a, a), (1 - 2 * a, a, a)]
            wts += [w, w, w]
        _TRI7_BARY = np.array(pts)
        _TRI7_W = np.array(wts)
    return _TRI7_BARY, _TRI7_W


def _tri_area(p0, p1, p2) -> float:
    return 0.5 * abs((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))


def _tri7_points(p0, p1, p2):
    bary, w = _tri7_rule()
    area = _tri_area(p0, p1, p2)
    pts = bary @ np.array([p0, p1, p2])
    return pts, w * area


def _duffy_points(p0, p1, p2, n1d):
    """Tensor Gauss rule collapsed onto a triangle (n1d^2 points)."""
    g, gw = np.polynomial.legendre.leggauss(n1d)
    u = 0.5 * (g + 1.0)
    wu = 0.5 * gw
    p0, p1, p2 = map(np.asarray, (p0, p1, p2))
    pts, wts = [], []
    cross = (p1 - p0)[0] * (p2 - p0)[1] - (p1 - p0)[1] * (p2 - p0)[0]
    for iu, uu in enumerate(u):
        for iv, vv in enumerate(u):
            x = p0 * (1 - uu) + p1 * uu * (1 - vv) + p2 * uu * vv
            pts.append(x)
            wts.append(wu[iu] * wu[iv] * abs(cross) * uu)
    return np.array(pts), np.array(wts)


def _refine_triangle(p0, p1, p2, levels):
    tris = [(np.asarray(p0, float), np.asarray(p1, float), np.asarray(p2, float))]
    for _ in range(levels):
        nxt = []
        for a, b, c in tris:
            ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
            nxt += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        tris = nxt
    return tris


def _clip_polygon_halfplane(poly, point, normal, keep_positive):
    """Sutherland-Hodgman clip of a convex polygon against a line."""
    sgn = 1.0 if keep_positive else -1.0
    out = []
    m = len(poly)
    for i in range(m):
        cur, nxt = poly[i], poly[(i + 1) % m]
        dc = sgn * np.dot(cur - point, normal)
        dn = sgn * np.dot(nxt - point, normal)
        if dc >= 0:
            out.append(cur)
        if (dc > 0 and dn < 0) or (dc < 0 and dn > 0):
            t = dc / (dc - dn)
            out.append(cur + t * (nxt - cur))
    return out


def _fan_triangulate(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _boundary_param(p, rect):
    """Arc-style parameter in [0,4) of a point on the rectangle boundary."""
    xa, xb, ya, yb = rect
    w, h = xb - xa, yb - ya
    tol = 1e-9 * max(w, h)
    if abs(p[1] - ya) < tol:
        return (p[0] - xa) / w
    if abs(p[0] - xb) < tol:
        return 1.0 + (p[1] - ya) / h
    if abs(p[1] - yb) < tol:
        return 2.0 + (xb - p[0]) / w
    if abs(p[0] - xa) < tol:
        return 3.0 + (yb - p[1]) / h
    raise ValueError("point not on rectangle boundary")


def _element_quadrature(rect_el, crack: CrackSpec | None, p: int, enriched_active: bool):
    """Quadrature points/weights for one element, conforming to the crack.

    Returns (points, weights). Plain elements use a tensor Gauss rule,
    elevated by one when enriched functions are active. Elements fully cut
    by the crack are split into two conforming polygons; the element holding
    a tip is covered by a refined fan of triangles rooted at the tip.
    """
    xa, xb, ya, yb = rect_el

    def tensor_rule(n1d):
        g, gw = np.polynomial.legendre.leggauss(n1d)
        gx = 0.5 * (xa + xb) + 0.5 * (xb - xa) * g
        gy = 0.5 * (ya + yb) + 0.5 * (yb - ya) * g
        wx = 0.5 * (xb - xa) * gw
        wy = 0.5 * (yb - ya) * gw
        pts = np.array([(x, y) for x in gx for y in gy])
        wts = np.array([u * v for u in wx for v in wy])
        return pts, wts

    if crack is None:
        return tensor_rule(p + 1)

    a, b = crack.segment()
    clip = _clip_segment(a, b, rect_el)
    diam = np.hypot(xb - xa, yb - ya)
    if clip is None or (clip[1] - clip[0]) * np.hypot(*(b - a)) < 1e-12 * diam:
        return tensor_rule(p + 2 if enriched_active else p + 1)

    tips_in = [tip for tip in crack.tips() if _point_in_rect(tip, rect_el, tol=1e-12 * diam)]
    corners = [np.array([xa, ya]), np.array([xb, ya]), np.array([xb, yb]), np.array([xa, yb])]

    if not tips_in:
        # Fully cut: split by the crack line and triangulate each side.
        nrm = crack.normal()
        pts_list, wts_list = [], []
        for keep in (True, False):
            poly = _clip_polygon_halfplane(corners, a, nrm, keep)
            if len(poly) < 3:
                continue
            for tri in _fan_triangulate(poly):
                tp, tw = _duffy_points(*tri, n1d=p + 1)
                pts_list.append(tp)
                wts_list.append(tw)
        return np.vstack(pts_list), np.concatenate(wts_list)

    if len(tips_in) > 1:
        warnings.warn("both crack tips inside one element; using subdivided tensor rule")
        pts_list, wts_list = [], []
        nsub = 4
        xs = np.linspace(xa, xb, nsub + 1)
        ys = np.linspace(ya, yb, nsub + 1)
        for i in range(nsub):
            for j in range(nsub):
                sub = (xs[i], xs[i + 1], ys[j], ys[j + 1])
                sp, sw = _element_quadrature(sub, None, p, enriched_active)
                pts_list.append(sp)
                wts_list.append(sw)
        return np.vstack(pts_list), np.concatenate(wts_list)

    # Tip element: fan around the tip, conforming to the crack entry point.
    tip = tips_in[0]
    t0, t1 = clip
    seg_pts = [a + t0 * (b - a), a + t1 * (b - a)]
    boundary_pts = list(corners)
    for q in seg_pts:
        if np.hypot(*(q - tip)) < 1e-12 * diam:
            continue
        try:
            _boundary_param(q, rect_el)
        except ValueError:
            continue
        if all(np.hypot(*(q - c)) > 1e-12 * diam for c in boundary_pts):
            boundary_pts.append(q)
    boundary_pts.sort(key=lambda q: _boundary_param(q, rect_el))

    pts_list, wts_list = [], []
    m = len(boundary_pts)
    for i in range(m):
        v0, v1 = boundary_pts[i], boundary_pts[(i + 1) % m]
        if _tri_area(tip, v0, v1) < 1e-14 * diam * diam:
            continue
        for sub in _refine_triangle(tip, v0, v1, levels=2):
            sp, sw = _tri7_points(*sub)
            pts_list.append(sp)
            wts_list.append(sw)
    return np.vstack(pts_list), np.concatenate(wts_list)


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------

def _element_spans(kv: KnotVector) -> list[int]:
    bp = kv.breakpoints
    return [find_span(kv, 0.5 * (bp[i] + bp[i + 1])) for i in range(bp.size - 1)]


def _shape_table(problem: PlateProblem, es: EnrichedSpace, crack: CrackSpec | None,
                 pts: np.ndarray, side: int = 0):
    """Shape values/gradients of all element-active enriched DOFs at points.

    Returns (columns, vals, gx, gy): ``columns`` maps local columns to global
    DOFs; arrays have shape (npts, ncols).
    """
    space = problem.space
    p = space.p
    n2 = space.kv2.n
    npts = pts.shape[0]

    xi1 = (pts[:, 0] - problem.origin[0]) / problem.length
    xi2 = (pts[:, 1] - problem.origin[1]) / problem.height
    spans1 = np.empty(npts, int)
    spans2 = np.empty(npts, int)
    V1 = np.empty((npts, p + 1))
    D1 = np.empty((npts, p + 1))
    V2 = np.empty((npts, p + 1))
    D2 = np.empty((npts, p + 1))
    for q in range(npts):
        s, d = eval_basis_derivs(space.kv1, min(max(xi1[q], 0.0), 1.0), 1)
        spans1[q], V1[q], D1[q] = s, d[0], d[1] / problem.length
        s, d = eval_basis_derivs(space.kv2, min(max(xi2[q], 0.0), 1.0), 1)
        spans2[q], V2[q], D2[q] = s, d[0], d[1] / problem.height

    s1, s2 = spans1[0], spans2[0]
    active = [( (s1 - p + i1) * n2 + (s2 - p + i2), i1, i2)
              for i1 in range(p + 1) for i2 in range(p + 1)]

    h_active = [flat for flat, _, _ in active if flat in es.h_pos]
    t_active = [flat for flat, _, _ in active if flat in es.t_pos]

    nstd = len(active)
    ncols = nstd + len(h_active) + 4 * len(t_active)
    vals = np.zeros((npts, ncols))
    gx = np.zeros((npts, ncols))
    gy = np.zeros((npts, ncols))
    columns = np.empty(ncols, int)

    N = np.einsum("qa,qb->qab", V1, V2).reshape(npts, -1)
    Nx = np.einsum("qa,qb->qab", D1, V2).reshape(npts, -1)
    Ny = np.einsum("qa,qb->qab", V1, D2).reshape(npts, -1)
    order = [i1 * (p + 1) + i2 for _, i1, i2 in active]
    vals[:, :nstd] = N[:, order]
    gx[:, :nstd] = Nx[:, order]
    gy[:, :nstd] = Ny[:, order]
    for c, (flat, _, _) in enumerate(active):
        columns[c] = flat  # scalar basis id; expanded to DOFs by caller

    col = nstd
    hvals = None
    if h_active or t_active:
        if crack is None:
            raise ValueError("enriched functions present without a crack")
    if h_active:
        hvals = np.empty(npts)
        for q in range(npts):
            ls = compute_level_sets(crack, pts[q])
            hvals[q] = float(side) if side != 0 else float(heaviside(ls))
    h_cols = []
    for flat in h_active:
        _, i1l, i2l = next(t for t in active if t[0] == flat)
        j = order.index(i1l * (p + 1) + i2l)
        vals[:, col] = N[:, order][:, j] * hvals
        gx[:, col] = Nx[:, order][:, j] * hvals
        gy[:, col] = Ny[:, order][:, j] * hvals
        h_cols.append((col, flat))
        col += 1

    t_cols = []
    if t_active:
        F = np.empty((npts, 4))
        Fg = np.empty((npts, 4, 2))
        for q in range(npts):
            F[q], Fg[q] = _tip_values_at(crack, pts[q], side=side)
        for flat in t_active:
            _, i1l, i2l = next(t for t in active if t[0] == flat)
            j = order.index(i1l * (p + 1) + i2l)
            nj, nxj, nyj = N[:, order][:, j], Nx[:, order][:, j], Ny[:, order][:, j]
            for br in range(4):
                vals[:, col] = nj * F[:, br]
                gx[:, col] = nxj * F[:, br] + nj * Fg[:, br, 0]
                gy[:, col] = nyj * F[:, br] + nj * Fg[:, br, 1]
                t_cols.append((col, flat, br))
                col += 1

    return active, h_cols, t_cols, vals, gx, gy


def assemble(problem: PlateProblem, es: EnrichedSpace,
             crack: CrackSpec | None) -> LinearSystem:
    """Assemble the stiffness matrix and load vector for the enriched space."""
    space = problem.space
    p = space.p
    C = plane_strain_matrix(problem.material)
    n_dofs = es.n_dofs

    spans1 = _element_spans(space.kv1)
    spans2 = _element_spans(space.kv2)
    bp1 = space.kv1.breakpoints
    bp2 = space.kv2.breakpoints
    x0, y0 = problem.origin
    L, H = problem.length, problem.height

    enriched_flats = set(es.h_pos) | set(es.t_pos)

    rows, cols, data = [], [], []
    f = np.zeros(n_dofs)
    body = np.asarray(problem.bc.body_force, float)

    for e1, s1 in enumerate(spans1):
        for e2, s2 in enumerate(spans2):
            rect_el = (x0 + L * bp1[e1], x0 + L * bp1[e1 + 1],
                       y0 + H * bp2[e2], y0 + H * bp2[e2 + 1])
            act_flats = [(s1 - p + i1) * space.kv2.n + (s2 - p + i2)
                         for i1 in range(p + 1) for i2 in range(p + 1)]
            has_enriched = any(fl in enriched_flats for fl in act_flats)
            pts, wts = _element_quadrature(rect_el, crack, p, has_enriched)

            active, h_cols, t_cols, vals, gx, gy = _shape_table(
                problem, es, crack, pts)
            ncols = vals.shape[1]

            # global DOF per local column pair (x, y)
            gdof = np.empty(2 * ncols, int)
            for c, (flat, _, _) in enumerate(active):
                gdof[2 * c] = es.std_dof(flat, 0)
                gdof[2 * c + 1] = es.std_dof(flat, 1)
            for c, flat in h_cols:
                gdof[2 * c] = es.heav_dof(flat, 0)
                gdof[2 * c + 1] = es.heav_dof(flat, 1)
            for c, flat, br in t_cols:
                gdof[2 * c] = es.tip_dof(flat, br, 0)
                gdof[2 * c + 1] = es.tip_dof(flat, br, 1)

            B = np.zeros((pts.shape[0], 3, 2 * ncols))
            B[:, 0, 0::2] = gx
            B[:, 1, 1::2] = gy
            B[:, 2, 0::2] = gy
            B[:, 2, 1::2] = gx
            Ke = np.einsum("q,qia,ij,qjb->ab", wts, B, C, B, optimize=True)

            rows.append(np.repeat(gdof, gdof.size))
            cols.append(np.tile(gdof, gdof.size))
            data.append(Ke.ravel())

            if body[0] != 0.0 or body[1] != 0.0:
                fe = np.einsum("q,qc,d->cd", wts, vals, body)
                np.add.at(f, gdof[0::2], fe[:, 0])
                np.add.at(f, gdof[1::2], fe[:, 1])

    _neumann_load(problem, es, crack, f)

    A = scipy.sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_dofs, n_dofs),
    ).tocsr()
    A.sum_duplicates()

    constrained = _dirichlet_dofs(problem, es)
    return LinearSystem(A=A, f=f, constrained=constrained)


def _edge_geometry(problem: PlateProblem, edge: str):
    """(fixed parametric coordinate axis, value, arc length) of an edge."""
    if edge in ("bottom", "top"):
        return 1, 0.0 if edge == "bottom" else 1.0, problem.length
    return 0, 0.0 if edge == "left" else 1.0, problem.height


def _neumann_load(problem: PlateProblem, es: EnrichedSpace,
                  crack: CrackSpec | None, f: np.ndarray) -> None:
    space = problem.space
    p = space.p
    traction = np.asarray(problem.bc.traction, float)
    if traction[0] == 0.0 and traction[1] == 0.0:
        return
    axis, fixed_val, arc = _edge_geometry(problem, problem.bc.neumann_edge)
    kv_along = space.kv1 if axis == 1 else space.kv2
    bp = kv_along.breakpoints

    if crack is not None:
        # Crack faces are traction free and may not intersect the loaded edge.
        a, b = crack.segment()
        e0 = _edge_point(problem, fixed_val, axis, 0.0)
        e1 = _edge_point(problem, fixed_val, axis, 1.0)
        clip = _clip_segment(a, b, (min(e0[0], e1[0]), max(e0[0], e1[0]),
                                    min(e0[1], e1[1]), max(e0[1], e1[1])))
        if clip is not None and clip[1] - clip[0] > 1e-12:
            raise CrackSpecError("crack intersects the loaded edge")

    g, gw = np.polynomial.legendre.leggauss(p + 2)
    for i in range(bp.size - 1):
        t0, t1 = bp[i], bp[i + 1]
        ts = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * g
        ws = 0.5 * (t1 - t0) * gw * arc
        pts = np.array([_edge_point(problem, fixed_val, axis, t) for t in ts])
        active, h_cols, t_cols, vals, _, _ = _shape_table(problem, es, crack, pts)
        ncols = vals.shape[1]
        gdof = np.empty(2 * ncols, int)
        for c, (flat, _, _) in enumerate(active):
            gdof[2 * c] = es.std_dof(flat, 0)
            gdof[2 * c + 1] = es.std_dof(flat, 1)
        for c, flat in h_cols:
            gdof[2 * c] = es.heav_dof(flat, 0)
            gdof[2 * c + 1] = es.heav_dof(flat, 1)
        for c, flat, br in t_cols:
            gdof[2 * c] = es.tip_dof(flat, br, 0)
            gdof[2 * c + 1] = es.tip_dof(flat, br, 1)
        fe = np.einsum("q,qc->c", ws, vals)
        np.add.at(f, gdof[0::2], fe * traction[0])
        np.add.at(f, gdof[1::2], fe * traction[1])


def _edge_point(problem: PlateProblem, fixed_val: float, axis: int, t: float):
    xi = np.empty(2)
    xi[axis] = fixed_val
    xi[1 - axis] = t
    return np.array([
        problem.origin[0] + problem.length * xi[0],
        problem.origin[1] + problem.height * xi[1],
    ])


def _dirichlet_dofs(problem: PlateProblem, es: EnrichedSpace) -> np.ndarray:
    """DOFs eliminated by the homogeneous Dirichlet condition."""
    space = problem.space
    n1, n2 = space.shape
    edge = problem.bc.dirichlet_edge
    comp = problem.bc.dirichlet_dir
    if edge == "bottom":
        funcs = [space.flat_index(i1, 0) for i1 in range(n1)]
    elif edge == "top":
        funcs = [space.flat_index(i1, n2 - 1) for i1 in range(n1)]
    elif edge == "left":
        funcs = [space.flat_index(0, i2) for i2 in range(n2)]
    else:
        funcs = [space.flat_index(n1 - 1, i2) for i2 in range(n2)]

    dofs = []
    for flat in funcs:
        dofs.append(es.std_dof(flat, comp))
        if flat in es.h_pos:
            dofs.append(es.heav_dof(flat, comp))
        if flat in es.t_pos:
            dofs.extend(es.tip_dof(flat, br, comp) for br in range(4))
    if problem.bc.pin_corner:
        flat = funcs[0]
        other = 1 - comp
        dofs.append(es.std_dof(flat, other))
        if flat in es.h_pos:
            dofs.append(es.heav_dof(flat, other))
        if flat in es.t_pos:
            dofs.extend(es.tip_dof(flat, br, other) for br in range(4))
    return np.array(sorted(set(dofs)), dtype=int)


def solve_fom(problem: PlateProblem, crack: CrackSpec | None) -> FomSolution:
    """Assemble and solve the constrained system for one crack configuration.

    Homogeneous Dirichlet DOFs are eliminated by row/column removal; the
    reduced symmetric positive-definite system is factorized directly
    (dense below ``DENSE_SOLVE_LIMIT`` DOFs, sparse above). Eliminated
    entries are returned as zeros.
    """
    es = classify_and_enrich(problem.space, problem.rect, crack)
    system = assemble(problem, es, crack)
    n = es.n_dofs
    free = np.setdiff1d(np.arange(n), system.constrained, assume_unique=False)
    A_red = system.A[free][:, free]
    f_red = system.f[free]
    try:
        if free.size < DENSE_SOLVE_LIMIT:
            c, low = scipy.linalg.cho_factor(A_red.toarray(), check_finite=False)
            u_red = scipy.linalg.cho_solve((c, low), f_red, check_finite=False)
        else:
            u_red = scipy.sparse.linalg.spsolve(A_red.tocsc(), f_red)
        if not np.all(np.isfinite(u_red)):
            raise RankDeficiencyError(
                f"singular system ({system.constrained.size} constrained DOFs)")
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as err:
        raise RankDeficiencyError(
            f"singular system ({system.constrained.size} constrained DOFs)") from err
    u = np.zeros(n)
    u[free] = u_red
    return FomSolution(problem=problem, crack=crack, space=es, u=u,
                       constrained=system.constrained)


def evaluate_solution(sol: FomSolution, x, side_hint: int = 0) -> np.ndarray:
    """Displacement at a physical point.

    ``side_hint`` (+1/-1) selects the crack-face branch: the sign function
    and the tip branch angle are evaluated as if the point were approached
    from that side. This disambiguates on-crack points and provides the
    one-sided continuation of the field next to the crack; 0 evaluates the
    natural (positional) value.
    """
    problem, es, crack = sol.problem, sol.space, sol.crack
    x = np.asarray(x, float)
    xi = problem.param_of(x)
    p = problem.space.p
    n2 = problem.space.kv2.n

    s1, v1 = eval_basis(problem.space.kv1, xi[0])
    s2, v2 = eval_basis(problem.space.kv2, xi[1])

    out = np.zeros(2)
    hval = None
    tvals = None
    for a in range(p + 1):
        for b in range(p + 1):
            flat = (s1 - p + a) * n2 + (s2 - p + b)
            w = v1[a] * v2[b]
            if w == 0.0:
                continue
            out[0] += w * sol.u[es.std_dof(flat, 0)]
            out[1] += w * sol.u[es.std_dof(flat, 1)]
            if flat in es.h_pos:
                if hval is None:
                    ls = compute_level_sets(crack, x)
                    if side_hint != 0:
                        hval = float(side_hint)
                    else:
                        hval = float(heaviside(ls))
                out[0] += w * hval * sol.u[es.heav_dof(flat, 0)]
                out[1] += w * hval * sol.u[es.heav_dof(flat, 1)]
            if flat in es.t_pos:
                if tvals is None:
                    tvals, _ = _tip_values_at(crack, x, side=side_hint)
                for br in range(4):
                    out[0] += w * tvals[br] * sol.u[es.tip_dof(flat, br, 0)]
                    out[1] += w * tvals[br] * sol.u[es.tip_dof(flat, br, 1)]
    return out


def dump_system(system: LinearSystem, path) -> None:
    """Plain-text triplet dump of the assembled matrix and load vector."""
    coo = system.A.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# matrix {coo.shape[0]} {coo.shape[1]} nnz {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v!r}\n")
        fh.write(f"# rhs {system.f.size}\n")
        for v in system.f:
            fh.write(f"{v!r}\n")
