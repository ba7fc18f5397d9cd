"""Parametric surfaces, curvature-line equations, and the index-sum check.

A closed surface is described as a list of parametric patches with
partition-of-unity weights (no atlas transition machinery).  From a patch
the curvature-line binary form is assembled symbolically; its singular
points are the umbilics.  ``verify_index_theorem`` computes both sides of
the index-sum identity independently: the right side by loop tracking at
every owned singular point (exact rational), the left side as
(n/pi) * integral of Gaussian curvature by tensor-product Gauss-Legendre
quadrature.  The identity is the assertion under test; the report never
adjusts one side to match the other.

The (n/pi) reduction constant of the curvature integral is validated by
the shipped sphere case with a degree-1 direction field (two index-2
singular points, integral 4*pi) and the ellipsoid case; see the tests.
"""

from __future__ import annotations

import math
import random
import weakref
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from .expr import (DomainError, Expr, add, compile_value, compile_value_vec,
                   diff, div, mul, parse, sub)
from .expr import call as expr_call
from .fiber import (BinaryForm, ProjectiveSystem, Rect, SEP_FLOOR,
                    SINGULAR_TOL, SingularPoint, find_singularities)
from .index import PointIndexReport, index_report
from .monodromy import LoopSpec

__all__ = [
    "SurfacePatch", "WeightedPatch", "FundamentalForms", "TheoremReport",
    "PointRecord", "GeometryError", "DegenerateImmersion",
    "WeightsNotPartition", "SingularPointOnPatchBoundary",
    "fundamental_forms", "gaussian_curvature_brioschi", "curvature_line_bde",
    "integrate_gauss_curvature", "locate_on_patch", "verify_index_theorem",
]


class GeometryError(Exception):
    """Base class for surface-machinery errors."""


class DegenerateImmersion(GeometryError):
    """EG - F^2 is not strictly positive on the parameter rectangle."""


class WeightsNotPartition(GeometryError):
    """Patch weights fail to sum to 1 at a probe point."""


class SingularPointOnPatchBoundary(GeometryError):
    """A singular point has no patch owning it with weight 1 on a
    tracking loop."""


def _dot(a, b) -> Expr:
    return add(add(mul(a[0], b[0]), mul(a[1], b[1])), mul(a[2], b[2]))


def _cross(a, b):
    return (sub(mul(a[1], b[2]), mul(a[2], b[1])),
            sub(mul(a[2], b[0]), mul(a[0], b[2])),
            sub(mul(a[0], b[1]), mul(a[1], b[0])))


@dataclass(frozen=True)
class SurfacePatch:
    """Parametric surface piece (x(u,v), y(u,v), z(u,v)) over a rectangle.

    Derivative expressions are built once by symbolic differentiation and
    compiled; second derivatives come from differentiating the first-
    derivative expressions.  Construction fails with DegenerateImmersion
    when EG - F^2 is not positive on a probe grid.
    """
    x: Expr
    y: Expr
    z: Expr
    domain: Rect
    name: str = ""
    variables: tuple = ("u", "v")

    def __post_init__(self):
        probe = self._frame_grids(*self.domain.grid(9))
        w2 = probe["W2"]
        if not np.all(np.isfinite(w2)) or np.any(w2 <= 0.0):
            raise DegenerateImmersion(
                f"patch {self.name or '<unnamed>'}: EG - F^2 is not "
                "strictly positive on the parameter rectangle")

    @classmethod
    def from_strings(cls, x, y, z, domain, name="", variables=("u", "v")):
        return cls(parse(x, variables), parse(y, variables),
                   parse(z, variables), domain, name, tuple(variables))

    # --- symbolic frames ---------------------------------------------------

    @cached_property
    def coords(self):
        return (self.x, self.y, self.z)

    @cached_property
    def d1(self):
        u, v = self.variables
        du = tuple(diff(c, u) for c in self.coords)
        dv = tuple(diff(c, v) for c in self.coords)
        return du, dv

    @cached_property
    def d2(self):
        u, v = self.variables
        du, dv = self.d1
        duu = tuple(diff(c, u) for c in du)
        duv = tuple(diff(c, v) for c in du)
        dvv = tuple(diff(c, v) for c in dv)
        return duu, duv, dvv

    @cached_property
    def _pos_fns(self):
        return tuple(compile_value(c, self.variables) for c in self.coords)

    @cached_property
    def _frame_fns(self):
        du, dv = self.d1
        duu, duv, dvv = self.d2
        return tuple(tuple(compile_value(c, self.variables) for c in grp)
                     for grp in (du, dv, duu, duv, dvv))

    @cached_property
    def _frame_vec_fns(self):
        du, dv = self.d1
        duu, duv, dvv = self.d2
        return tuple(tuple(compile_value_vec(c, self.variables) for c in grp)
                     for grp in (du, dv, duu, duv, dvv))

    @cached_property
    def _pos_vec_fns(self):
        return tuple(compile_value_vec(c, self.variables)
                     for c in self.coords)

    # --- numeric evaluation -------------------------------------------------

    def position(self, u: float, v: float):
        try:
            return np.array([f(u, v) for f in self._pos_fns])
        except (ValueError, ZeroDivisionError, OverflowError) as e:
            raise DomainError(
                f"patch evaluation failed at ({u}, {v}): {e}") from None

    def frame(self, u: float, v: float):
        """First and second derivative vectors at a point."""
        try:
            su, sv, suu, suv, svv = (
                np.array([f(u, v) for f in grp]) for grp in self._frame_fns)
        except (ValueError, ZeroDivisionError, OverflowError) as e:
            raise DomainError(
                f"patch derivatives failed at ({u}, {v}): {e}") from None
        return su, sv, suu, suv, svv

    def _frame_grids(self, U, V):
        """Fundamental-form ingredients on a meshgrid (vectorized)."""
        UU, VV = np.meshgrid(U, V, indexing="ij")
        with np.errstate(all="raise"):
            try:
                su, sv, suu, suv, svv = (
                    np.stack([np.broadcast_to(np.asarray(f(UU, VV), dtype=float),
                                              UU.shape) for f in grp])
                    for grp in self._frame_vec_fns)
            except (FloatingPointError, ValueError, ZeroDivisionError,
                    OverflowError) as e:
                raise DomainError(
                    f"patch grid evaluation failed: {e}") from None
        E = np.einsum("kij,kij->ij", su, su)
        F = np.einsum("kij,kij->ij", su, sv)
        G = np.einsum("kij,kij->ij", sv, sv)
        n = np.cross(su, sv, axis=0)
        W2 = np.einsum("kij,kij->ij", n, n)
        Lt = np.einsum("kij,kij->ij", n, suu)
        Mt = np.einsum("kij,kij->ij", n, suv)
        Nt = np.einsum("kij,kij->ij", n, svv)
        return {"E": E, "F": F, "G": G, "W2": W2,
                "Lt": Lt, "Mt": Mt, "Nt": Nt}


@dataclass(frozen=True)
class FundamentalForms:
    E: float
    F: float
    G: float
    L: float
    M: float
    N: float
    K: float
    area_element: float


def fundamental_forms(patch: SurfacePatch, u: float, v: float
                      ) -> FundamentalForms:
    """First and second fundamental forms and Gaussian curvature."""
    su, sv, suu, suv, svv = patch.frame(u, v)
    E = float(su @ su)
    F = float(su @ sv)
    G = float(sv @ sv)
    n = np.cross(su, sv)
    W2 = float(n @ n)
    if W2 <= 0.0 or not math.isfinite(W2):
        raise DegenerateImmersion(f"EG - F^2 = {W2} at ({u}, {v})")
    W = math.sqrt(W2)
    L = float(n @ suu) / W
    M = float(n @ suv) / W
    N = float(n @ svv) / W
    K = (L * N - M * M) / W2
    return FundamentalForms(E, F, G, L, M, N, K, W)


def _brioschi_fns(patch: SurfacePatch):
    u, v = patch.variables
    du, dv = patch.d1
    E = _dot(du, du)
    F = _dot(du, dv)
    G = _dot(dv, dv)
    E_u, E_v = diff(E, u), diff(E, v)
    F_u, F_v = diff(F, u), diff(F, v)
    G_u, G_v = diff(G, u), diff(G, v)
    exprs = {
        "E": E, "F": F, "G": G,
        "E_u": E_u, "E_v": E_v, "E_vv": diff(E_v, v),
        "F_u": F_u, "F_v": F_v, "F_uv": diff(F_u, v),
        "G_u": G_u, "G_v": G_v, "G_uu": diff(G_u, u),
    }
    return {k: compile_value(e, patch.variables) for k, e in exprs.items()}


_BRIOSCHI_CACHE = weakref.WeakKeyDictionary()


def gaussian_curvature_brioschi(patch: SurfacePatch, u: float, v: float
                                ) -> float:
    """Intrinsic Gaussian curvature from the first fundamental form only
    (Brioschi formula); an independent oracle for the shape-operator
    route in ``fundamental_forms``."""
    fns = _BRIOSCHI_CACHE.get(patch)
    if fns is None:
        fns = _brioschi_fns(patch)
        _BRIOSCHI_CACHE[patch] = fns
    g = {k: f(u, v) for k, f in fns.items()}
    M1 = np.array([
        [-0.5 * g["E_vv"] + g["F_uv"] - 0.5 * g["G_uu"],
         0.5 * g["E_u"], g["F_u"] - 0.5 * g["E_v"]],
        [g["F_v"] - 0.5 * g["G_u"], g["E"], g["F"]],
        [0.5 * g["G_v"], g["F"], g["G"]],
    ])
    M2 = np.array([
        [0.0, 0.5 * g["E_v"], 0.5 * g["G_u"]],
        [0.5 * g["E_v"], g["E"], g["F"]],
        [0.5 * g["G_u"], g["F"], g["G"]],
    ])
    W2 = g["E"] * g["G"] - g["F"] ** 2
    return float((np.linalg.det(M1) - np.linalg.det(M2)) / W2 ** 2)


def curvature_line_bde(patch: SurfacePatch) -> BinaryForm:
    """Degree-2 form whose roots are the principal directions.

    Coefficients are normalized by (EG - F^2)^(3/2), which makes them
    scale-free across patch compression; the singular points are exactly
    the umbilics.
    """
    du, dv = patch.d1
    duu, duv, dvv = patch.d2
    E = _dot(du, du)
    F = _dot(du, dv)
    G = _dot(dv, dv)
    n = _cross(du, dv)
    W2 = _dot(n, n)
    Lt = _dot(n, duu)
    Mt = _dot(n, duv)
    Nt = _dot(n, dvv)
    denom = mul(W2, expr_call("sqrt", W2))
    a0 = div(sub(mul(E, Mt), mul(F, Lt)), denom)
    a1 = div(sub(mul(E, Nt), mul(G, Lt)), denom)
    a2 = div(sub(mul(F, Nt), mul(G, Mt)), denom)
    return BinaryForm(2, (a0, a1, a2), patch.variables)


# ---------------------------------------------------------------------------
# Closed surfaces: weighted patch lists


@dataclass(frozen=True)
class WeightedPatch:
    """A patch with its partition-of-unity weight (in patch coordinates)."""
    patch: SurfacePatch
    weight: Expr

    @cached_property
    def weight_fn(self):
        return compile_value(self.weight, self.patch.variables)

    @cached_property
    def weight_vec_fn(self):
        return compile_value_vec(self.weight, self.patch.variables)


def locate_on_patch(patch: SurfacePatch, point3, seed_grid: int = 8,
                    max_iter: int = 40):
    """Nearest parameter point of ``patch`` to a 3D point.

    Clamped Gauss-Newton on |r(u,v) - p|^2 seeded from a coarse grid;
    returns (u, v, distance).  Iterates are clamped into the rectangle,
    so points whose true preimage lies outside it report the boundary
    distance.
    """
    p = np.asarray(point3, dtype=float)
    dom = patch.domain
    U, V = dom.grid(seed_grid)
    UU, VV = np.meshgrid(U, V, indexing="ij")
    with np.errstate(all="ignore"):
        px = np.stack([np.broadcast_to(np.asarray(f(UU, VV), dtype=float),
                                       UU.shape)
                       for f in patch._pos_vec_fns])
    d2 = ((px - p.reshape(3, 1, 1)) ** 2).sum(axis=0)
    i, j = np.unravel_index(np.nanargmin(d2), d2.shape)
    u, v = float(UU[i, j]), float(VV[i, j])

    for _ in range(max_iter):
        r = patch.position(u, v)
        su, sv, *_ = patch.frame(u, v)
        J = np.column_stack([su, sv])
        try:
            step, *_ = np.linalg.lstsq(J, p - r, rcond=None)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        u = min(max(u + step[0], dom.xmin), dom.xmax)
        v = min(max(v + step[1], dom.ymin), dom.ymax)
        if np.hypot(*step) < 1e-14 * (1.0 + abs(u) + abs(v)):
            break
    dist = float(np.linalg.norm(patch.position(u, v) - p))
    return u, v, dist


def check_partition_of_unity(wpatches, probes_per_patch: int = 8,
                             tol: float = 1e-8, seed: int = 0):
    """Verify the declared weights sum to 1 at random probe points.

    Each probe is mapped to 3D and located on every patch; weights of the
    patches containing it (distance below a surface tolerance) are
    summed.  Raises WeightsNotPartition on failure.
    """
    rng = random.Random(seed)
    for wp in wpatches:
        dom = wp.patch.domain
        mx = 0.05 * (dom.xmax - dom.xmin)
        my = 0.05 * (dom.ymax - dom.ymin)
        for _ in range(probes_per_patch):
            u = rng.uniform(dom.xmin + mx, dom.xmax - mx)
            v = rng.uniform(dom.ymin + my, dom.ymax - my)
            p3 = wp.patch.position(u, v)
            loc_tol = 1e-6 * (1.0 + float(np.linalg.norm(p3)))
            total = 0.0
            for other in wpatches:
                ou, ov, dist = locate_on_patch(other.patch, p3)
                if dist <= loc_tol:
                    total += other.weight_fn(ou, ov)
            if abs(total - 1.0) > tol:
                raise WeightsNotPartition(
                    f"weights sum to {total:.12f} (not 1) at the probe "
                    f"point {tuple(p3)} from patch "
                    f"{wp.patch.name or '<unnamed>'}")


def _patch_curvature_integral(wp: WeightedPatch, order: int) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    dom = wp.patch.domain
    hu = 0.5 * (dom.xmax - dom.xmin)
    hv = 0.5 * (dom.ymax - dom.ymin)
    cu = 0.5 * (dom.xmax + dom.xmin)
    cv = 0.5 * (dom.ymax + dom.ymin)
    U = cu + hu * nodes
    V = cv + hv * nodes
    g = wp.patch._frame_grids(U, V)
    UU, VV = np.meshgrid(U, V, indexing="ij")
    with np.errstate(all="raise"):
        try:
            wgt = np.broadcast_to(
                np.asarray(wp.weight_vec_fn(UU, VV), dtype=float), UU.shape)
        except (FloatingPointError, ValueError, ZeroDivisionError,
                OverflowError) as e:
            raise DomainError(f"weight evaluation failed: {e}") from None
    # K * dA = (Lt*Nt - Mt^2) / W2^(3/2)  (unnormalized second form)
    kw = (g["Lt"] * g["Nt"] - g["Mt"] ** 2) / g["W2"] ** 1.5
    wij = np.outer(weights, weights)
    return float(hu * hv * np.sum(wij * wgt * kw))


def integrate_gauss_curvature(wpatches, quadrature_order: int = 32,
                              check_partition: bool = True, seed: int = 0):
    """Weighted Gaussian-curvature integral over a closed patched surface.

    Returns (value, error_estimate); the estimate compares the requested
    order against half the order (Richardson-style difference).
    """
    if check_partition:
        check_partition_of_unity(wpatches, seed=seed)
    lo_order = max(4, quadrature_order // 2)
    hi = sum(_patch_curvature_integral(wp, quadrature_order)
             for wp in wpatches)
    lo = sum(_patch_curvature_integral(wp, lo_order) for wp in wpatches)
    return hi, abs(hi - lo)


# ---------------------------------------------------------------------------
# The index-sum identity


@dataclass(frozen=True)
class PointRecord:
    patch_name: str
    singular_point: SingularPoint
    position3: tuple
    report: PointIndexReport


@dataclass(frozen=True)
class TheoremReport:
    """Both sides of the index-sum identity, computed independently."""
    sheet_count: int
    point_records: tuple
    hypothesis_ok: bool
    rhs: Fraction | None
    lhs: float
    lhs_error: float
    difference: float | None
    orientation_flipped: bool | None
    euler_characteristic_estimate: float
    tolerance: float
    identity_ok: bool | None
    notes: tuple = ()


def _weight_one_radius(wfn, sp: SingularPoint, margin: float,
                       samples: int = 32) -> float:
    """Largest loop radius (at most isolation/2) on which the owning
    patch weight stays within ``margin`` of 1."""
    try:
        w0 = wfn(sp.x, sp.y)
    except (ValueError, ZeroDivisionError, OverflowError):
        raise SingularPointOnPatchBoundary(
            f"weight undefined at the singular point ({sp.x}, {sp.y})")
    if w0 < 1.0 - margin:
        raise SingularPointOnPatchBoundary(
            f"owning-patch weight {w0:.9f} at ({sp.x}, {sp.y}) is below "
            f"1 - {margin}")
    r = sp.isolation_radius / 2.0
    for _ in range(40):
        ok = True
        for k in range(samples):
            th = 2.0 * math.pi * k / samples
            try:
                w = wfn(sp.x + r * math.cos(th), sp.y + r * math.sin(th))
            except (ValueError, ZeroDivisionError, OverflowError):
                ok = False
                break
            if w < 1.0 - margin:
                ok = False
                break
        if ok:
            return r
        r *= 0.6
        if r < 1e-6 * sp.isolation_radius:
            break
    raise SingularPointOnPatchBoundary(
        f"no loop radius around ({sp.x}, {sp.y}) keeps the patch weight "
        f"within {margin} of 1")


def verify_index_theorem(wpatches, bde_source="curvature_lines",
                         quadrature_order: int = 32,
                         grid_density: int = 48,
                         singular_tol: float = SINGULAR_TOL,
                         sep_floor: float = SEP_FLOOR,
                         weight_one_margin: float = 1e-6,
                         identity_tol_floor: float = 1e-3,
                         check_partition: bool = True,
                         seed: int = 0) -> TheoremReport:
    """Compute rhs = sum N(x) * total_index(x) by loop tracking and
    lhs = (n/pi) * curvature integral by quadrature, and compare.

    ``bde_source`` is either "curvature_lines" (the form is assembled from
    each patch) or a list of explicit BinaryForm values, one per patch in
    patch coordinates.  Each singular point is owned by the patch whose
    weight exceeds 1/2 there; the tracking loop must stay in the owning
    patch's weight-1 region.
    """
    wpatches = list(wpatches)
    if bde_source == "curvature_lines":
        forms = [curvature_line_bde(wp.patch) for wp in wpatches]
    else:
        forms = list(bde_source)
        if len(forms) != len(wpatches):
            raise ValueError("need one explicit form per patch")
    degrees = {f.degree for f in forms}
    if len(degrees) != 1:
        raise ValueError(f"patch forms disagree on the sheet count: "
                         f"{sorted(degrees)}")
    n = degrees.pop()

    records = []
    unowned = []
    for i, (wp, form) in enumerate(zip(wpatches, forms)):
        name = wp.patch.name or f"patch{i}"
        sys = ProjectiveSystem(wp.patch.domain, form=form)
        pts = find_singularities(sys, grid_density=grid_density,
                                 tol=singular_tol, sep_floor=sep_floor)
        for sp in pts:
            p3 = tuple(wp.patch.position(sp.x, sp.y))
            try:
                w = wp.weight_fn(sp.x, sp.y)
            except (ValueError, ZeroDivisionError, OverflowError):
                w = 0.0
            if w >= 0.5:
                radius = _weight_one_radius(wp.weight_fn, sp,
                                            weight_one_margin)
                rep = index_report(sys, sp, LoopSpec((sp.x, sp.y), radius),
                                   singular_tol=singular_tol,
                                   sep_floor=sep_floor)
                records.append(PointRecord(name, sp, p3, rep))
            else:
                unowned.append((name, sp, p3))

    scale3 = 1.0 + max((np.linalg.norm(r.position3) for r in records),
                       default=1.0)
    for name, sp, p3 in unowned:
        best = min((float(np.linalg.norm(np.array(p3) - np.array(r.position3)))
                    for r in records), default=math.inf)
        if best > 1e-5 * scale3:
            raise SingularPointOnPatchBoundary(
                f"singular point {p3} (patch {name}, weight < 1/2) has no "
                "owning patch")

    notes = []
    hypothesis_ok = all(r.report.uniform_orbit_size is not None
                        for r in records)
    rhs = None
    if hypothesis_ok:
        rhs = sum((r.report.uniform_orbit_size * r.report.total_index
                   for r in records), Fraction(0))
        if rhs.denominator != 1:
            raise GeometryError(
                f"internal inconsistency: rhs {rhs} is not an integer "
                "although all orbit sizes are uniform")
    else:
        notes.append("orbit sizes differ at some singular point; N(x) "
                     "undefined and the identity is not evaluated")

    integral, q_err = integrate_gauss_curvature(
        wpatches, quadrature_order=quadrature_order,
        check_partition=check_partition, seed=seed)
    lhs = n / math.pi * integral
    lhs_err = n / math.pi * q_err
    tolerance = max(identity_tol_floor, 10.0 * lhs_err)

    difference = None
    orientation_flipped = None
    identity_ok = None
    if rhs is not None:
        rhs_f = float(rhs)
        difference = abs(abs(lhs) - abs(rhs_f))
        orientation_flipped = bool(rhs_f != 0.0 and lhs * rhs_f < 0.0)
        identity_ok = difference < tolerance
        if orientation_flipped:
            notes.append("lhs and rhs agree in absolute value but differ "
                         "in sign (global orientation flip)")

    return TheoremReport(
        sheet_count=n,
        point_records=tuple(records),
        hypothesis_ok=hypothesis_ok,
        rhs=rhs,
        lhs=lhs,
        lhs_error=lhs_err,
        difference=difference,
        orientation_flipped=orientation_flipped,
        euler_characteristic_estimate=lhs / (2.0 * n),
        tolerance=tolerance,
        identity_ok=identity_ok,
        notes=tuple(notes))
