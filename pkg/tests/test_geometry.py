import math
import random
from fractions import Fraction

import numpy as np
import pytest

from monoweb.expr import parse
from monoweb.fiber import NonIsolatedZero, Rect, find_singularities
from monoweb.fiber import ProjectiveSystem
from monoweb.geometry import (
    DegenerateImmersion, SurfacePatch, WeightedPatch, WeightsNotPartition,
    curvature_line_bde, fundamental_forms, gaussian_curvature_brioschi,
    integrate_gauss_curvature, locate_on_patch, verify_index_theorem,
)
from monoweb.index import index_report

from surfaces import (cube_face_ellipsoid, constant_web_forms,
                      ellipsoid_umbilics, meridian_field_forms,
                      stereographic_sphere, torus_patch)


def test_sphere_curvature_one():
    sphere = stereographic_sphere()[0].patch
    for (u, v) in [(0.0, 0.0), (0.7, -0.4), (2.0, 1.5)]:
        ff = fundamental_forms(sphere, u, v)
        assert ff.K == pytest.approx(1.0, rel=1e-9)


def test_plane_second_form_vanishes():
    plane = SurfacePatch.from_strings("u", "v", "0", Rect(-1, 1, -1, 1))
    ff = fundamental_forms(plane, 0.3, -0.2)
    assert (ff.L, ff.M, ff.N) == (0.0, 0.0, 0.0)
    assert ff.K == 0.0


def test_cylinder_flat_but_curved():
    cyl = SurfacePatch.from_strings("cos(u)", "sin(u)", "v",
                                    Rect(0.1, 3.0, -1.0, 1.0))
    ff = fundamental_forms(cyl, 1.0, 0.0)
    assert ff.K == pytest.approx(0.0, abs=1e-12)
    assert abs(ff.L) > 0.5


def test_degenerate_immersion_rejected():
    with pytest.raises(DegenerateImmersion):
        SurfacePatch.from_strings("u", "u", "0", Rect(-1, 1, -1, 1))


def test_curvature_two_ways_agree():
    rng = random.Random(11)
    patches = [stereographic_sphere()[0].patch,
               cube_face_ellipsoid()[0].patch,
               torus_patch()[0].patch]
    for patch in patches:
        dom = patch.domain
        for _ in range(6):
            u = rng.uniform(dom.xmin + 0.1, dom.xmax - 0.1)
            v = rng.uniform(dom.ymin + 0.1, dom.ymax - 0.1)
            k1 = fundamental_forms(patch, u, v).K
            k2 = gaussian_curvature_brioschi(patch, u, v)
            assert k2 == pytest.approx(k1, rel=1e-6, abs=1e-9)


def test_sphere_bde_is_identically_zero():
    sphere = stereographic_sphere()[0].patch
    form = curvature_line_bde(sphere)
    sys = ProjectiveSystem(sphere.domain, form=form)
    with pytest.raises(NonIsolatedZero):
        find_singularities(sys, grid_density=16)


def test_monge_patch_around_one_umbilic():
    ux, _, uz = ellipsoid_umbilics()[0]
    patch = SurfacePatch.from_strings(
        "u", "v", "sqrt(1 - u^2/9 - v^2/4)",
        Rect(ux - 0.45, ux + 0.45, -0.45, 0.45), name="monge-umbilic")
    form = curvature_line_bde(patch)
    sys = ProjectiveSystem(patch.domain, form=form)
    pts = find_singularities(sys, grid_density=24)
    assert len(pts) == 1
    assert pts[0].x == pytest.approx(ux, abs=1e-8)
    assert pts[0].y == pytest.approx(0.0, abs=1e-8)
    rep = index_report(sys, pts[0])
    assert len(rep.orbit_reports) == 2
    for orb in rep.orbit_reports:
        assert (orb.size, orb.winding) == (1, 1)
        assert orb.classical_line_index == Fraction(1, 2)


def _shape_operator_fd(f, u, v):
    """Shape operator in the chart basis, everything by central finite
    differences on the height function; independent of the library's
    derivative machinery."""
    h1, h2 = 1e-6, 1e-4

    def r(uu, vv):
        return np.array([uu, vv, f(uu, vv)])

    ru = (r(u + h1, v) - r(u - h1, v)) / (2 * h1)
    rv = (r(u, v + h1) - r(u, v - h1)) / (2 * h1)
    ruu = (r(u + h2, v) - 2 * r(u, v) + r(u - h2, v)) / h2 ** 2
    rvv = (r(u, v + h2) - 2 * r(u, v) + r(u, v - h2)) / h2 ** 2
    ruv = (r(u + h2, v + h2) - r(u + h2, v - h2)
           - r(u - h2, v + h2) + r(u - h2, v - h2)) / (4 * h2 ** 2)
    n = np.cross(ru, rv)
    n = n / np.linalg.norm(n)
    I = np.array([[ru @ ru, ru @ rv], [ru @ rv, rv @ rv]])
    II = np.array([[n @ ruu, n @ ruv], [n @ ruv, n @ rvv]])
    return np.linalg.solve(I, II)


def test_umbilic_index_against_eigenvector_oracle():
    # brute force: follow the principal-direction eigenvector of the
    # finite-difference shape operator around the umbilic; the chart
    # angle must advance by pi (line-field index 1/2) for each field
    ux, _, _ = ellipsoid_umbilics()[0]

    def f(u, v):
        return math.sqrt(1 - u * u / 9 - v * v / 4)

    radius = 0.15
    samples = 720
    for which in (0, 1):  # larger / smaller principal curvature
        prev_angle = None
        total = 0.0
        for k in range(samples + 1):
            th = 2 * math.pi * k / samples
            S = _shape_operator_fd(f, ux + radius * math.cos(th),
                                   0.0 + radius * math.sin(th))
            evals, evecs = np.linalg.eig(S)
            order = np.argsort(evals.real)[::-1]
            vec = evecs[:, order[which]].real
            ang = math.atan2(vec[1], vec[0])
            if prev_angle is not None:
                d = math.fmod(ang - prev_angle + math.pi / 2, math.pi)
                if d <= 0:
                    d += math.pi
                total += d - math.pi / 2
            prev_angle = ang
        assert total == pytest.approx(math.pi, abs=1e-3)

    # the library agrees: winding 1 per orbit around the same umbilic
    patch = SurfacePatch.from_strings(
        "u", "v", "sqrt(1 - u^2/9 - v^2/4)",
        Rect(ux - 0.45, ux + 0.45, -0.45, 0.45))
    sys = ProjectiveSystem(patch.domain, form=curvature_line_bde(patch))
    pts = find_singularities(sys, grid_density=24)
    rep = index_report(sys, pts[0])
    assert [o.winding for o in rep.orbit_reports] == [1, 1]


def test_torus_has_no_umbilics():
    wp = torus_patch()[0]
    form = curvature_line_bde(wp.patch)
    sys = ProjectiveSystem(wp.patch.domain, form=form)
    assert find_singularities(sys, grid_density=24) == []


def test_locate_on_patch_roundtrip():
    sphere = stereographic_sphere()
    p3 = sphere[0].patch.position(0.7, -0.3)
    u, v, dist = locate_on_patch(sphere[1].patch, p3)
    assert dist < 1e-9
    assert np.allclose(sphere[1].patch.position(u, v), p3, atol=1e-9)


def test_sphere_two_patch_integral():
    value, err = integrate_gauss_curvature(stereographic_sphere(),
                                           quadrature_order=128)
    assert value == pytest.approx(4 * math.pi, abs=1e-6)
    assert err < 1e-2


def test_torus_integral_zero():
    value, _ = integrate_gauss_curvature(torus_patch(),
                                         quadrature_order=32)
    assert abs(value) < 1e-9


def test_cube_face_ellipsoid_integral():
    value, err = integrate_gauss_curvature(cube_face_ellipsoid(),
                                           quadrature_order=48)
    assert value == pytest.approx(4 * math.pi, abs=1e-4)
    assert err < 1e-4


def test_weights_not_partition_detected():
    patches = stereographic_sphere()
    bad = [WeightedPatch(patches[0].patch, parse("0.9/(1+(u^2+v^2)^4)",
                                                 ("u", "v"))),
           patches[1]]
    with pytest.raises(WeightsNotPartition):
        integrate_gauss_curvature(bad, quadrature_order=16)


def test_theorem_ellipsoid_curvature_lines():
    report = verify_index_theorem(cube_face_ellipsoid(),
                                  quadrature_order=24, grid_density=32)
    assert report.sheet_count == 2
    assert report.hypothesis_ok
    assert report.rhs == Fraction(8)
    assert len(report.point_records) == 4
    for rec in report.point_records:
        assert rec.report.uniform_orbit_size == 1
        assert rec.report.total_index == Fraction(2)
    assert report.lhs == pytest.approx(8.0, abs=1e-3)
    assert report.identity_ok
    assert report.euler_characteristic_estimate == pytest.approx(2.0,
                                                                 abs=1e-3)
    found = sorted(rec.position3 for rec in report.point_records)
    expected = sorted(ellipsoid_umbilics())
    for f, e in zip(found, expected):
        assert np.allclose(f, e, atol=1e-6)


def test_theorem_sphere_meridian_field():
    # degree-1 validation of the (n/pi) reduction: two poles of index 2,
    # rhs = 4 = (1/pi) * 4 pi
    report = verify_index_theorem(stereographic_sphere(),
                                  bde_source=meridian_field_forms(),
                                  quadrature_order=128, grid_density=24)
    assert report.sheet_count == 1
    assert report.rhs == Fraction(4)
    assert report.lhs == pytest.approx(4.0, abs=1e-3)
    assert report.identity_ok
    assert report.euler_characteristic_estimate == pytest.approx(2.0,
                                                                 abs=1e-3)


def test_theorem_torus_constant_web():
    report = verify_index_theorem(torus_patch(),
                                  bde_source=constant_web_forms(),
                                  quadrature_order=32, grid_density=24)
    assert report.rhs == Fraction(0)
    assert abs(report.lhs) < 1e-9
    assert report.identity_ok
    assert report.point_records == ()


def test_singular_point_outside_weight_one_zone():
    from monoweb.fiber import BinaryForm
    from monoweb.geometry import SingularPointOnPatchBoundary
    # a field zero at chart radius 0.5, where the stereographic weight is
    # 0.9961: owned (> 1/2) but never within 1e-6 of weight 1
    forms = [BinaryForm.from_strings(["v", "-(u - 0.5)"],
                                     variables=("u", "v")),
             BinaryForm.from_strings(["1", "0"], variables=("u", "v"))]
    with pytest.raises(SingularPointOnPatchBoundary):
        verify_index_theorem(stereographic_sphere(), bde_source=forms,
                             quadrature_order=16, grid_density=24,
                             check_partition=False)


def test_theorem_all_umbilic_sphere_rejected():
    with pytest.raises(NonIsolatedZero):
        verify_index_theorem(stereographic_sphere(), quadrature_order=16,
                             grid_density=16)


def test_local_global_classical_sum():
    # for a BDE split into n global line fields, the classical line-field
    # indices sum to n * Euler characteristic
    report = verify_index_theorem(cube_face_ellipsoid(),
                                  quadrature_order=24, grid_density=32)
    classical = sum(
        (rec.report.uniform_orbit_size
         * sum((o.classical_line_index for o in rec.report.orbit_reports),
               Fraction(0))
         for rec in report.point_records), Fraction(0))
    chi = round(report.euler_characteristic_estimate)
    assert classical == report.sheet_count * chi
    assert report.rhs == 2 * report.sheet_count * chi
