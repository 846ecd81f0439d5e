import logging
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cipfem.mesh import (BOTTOM, CIRCLE, LEFT, RIGHT, TOP, Mesh, MeshError,
                         MeshParseError, classify_boundary, export_mesh,
                         generate_disc, generate_square, import_mesh, refine_uniform)
from cipfem.operators import constant_velocity, rotation_velocity


def test_single_cell_square():
    m = generate_square(1)
    assert len(m.vertices) == 4 and m.n_triangles == 2
    assert len(m.interior_edges) == 1 and len(m.boundary_edges) == 4
    assert m.h == pytest.approx(math.sqrt(2))


@pytest.mark.parametrize("n", [1, 2, 5, 16])
def test_square_counts_and_area(n):
    m = generate_square(n)
    assert m.n_triangles == 2 * n * n
    assert m.n_vertices - m.n_edges + m.n_triangles == 1
    assert m.area == pytest.approx(1.0, abs=1e-12)
    assert len(m.boundary_edges) == 4 * n
    assert np.all(m.areas > 0)


def test_square_boundary_markers():
    m = generate_square(4)
    mid = m.edge_midpoints(m.boundary_edges)
    mk = m.edge_markers[m.boundary_edges]
    assert np.all(mk[np.isclose(mid[:, 1], 0)] == BOTTOM)
    assert np.all(mk[np.isclose(mid[:, 0], 1)] == RIGHT)
    assert np.all(mk[np.isclose(mid[:, 1], 1)] == TOP)
    assert np.all(mk[np.isclose(mid[:, 0], 0)] == LEFT)


@pytest.mark.parametrize("n", [2, 3, 8])
def test_periodic_square_has_only_interior_edges(n):
    m = generate_square(n, periodic=True)
    assert len(m.boundary_edges) == 0
    assert m.n_vertices == n * n
    assert m.n_edges == 3 * n * n          # torus: V - E + T = 0
    assert m.n_vertices - m.n_edges + m.n_triangles == 0


def test_periodic_square_needs_two_cells():
    with pytest.raises(MeshError):
        generate_square(1, periodic=True)


def test_interior_edge_geometry_consistent():
    m = generate_square(5)
    e = m.interior_edges
    left, right = m.edge_triangles[e, 0], m.edge_triangles[e, 1]
    # unit normal points from the left cell towards the right one
    d = m.barycenters[right] - m.barycenters[left]
    assert np.all(np.einsum("ij,ij->i", d, m.edge_normals[e]) > 0)
    assert np.allclose(np.linalg.norm(m.edge_normals, axis=1), 1.0)


def test_boundary_normals_point_outward():
    m = generate_disc(32)
    b = m.boundary_edges
    mid = m.edge_midpoints(b)
    assert np.all(np.einsum("ij,ij->i", mid, m.edge_normals[b]) > 0)


@pytest.mark.parametrize("nele", [8, 16, 40, 80, 160])
def test_disc_structure(nele):
    m = generate_disc(nele)
    b = m.boundary_edges
    assert len(b) == nele
    assert np.all(m.edge_markers[b] == CIRCLE)
    bv = np.unique(m.edges[b])
    assert np.allclose(np.hypot(*m.vertices[bv].T), 1.0, atol=1e-14)
    assert m.n_vertices - m.n_edges + m.n_triangles == 1
    assert m.shape_ratios().max() < 10


def test_disc_mesh_size_at_80():
    h = generate_disc(80).h
    assert math.pi / 80 <= h <= 4 * math.pi / 80


def test_disc_area_deficit_quarters():
    deficits = [math.pi - generate_disc(n).area for n in (40, 80, 160)]
    assert all(d > 0 for d in deficits)
    ratios = [deficits[i] / deficits[i + 1] for i in range(2)]
    assert all(3.8 < r < 4.2 for r in ratios)


@given(st.integers(2, 60).map(lambda k: 4 * k))
def test_disc_shape_regular_for_any_admissible_nele(nele):
    m = generate_disc(nele)
    assert m.shape_ratios().max() < 10
    assert np.all(m.areas > 0)
    assert 0.5 * 2 * math.pi / nele <= m.h <= 2 * 2 * math.pi / nele


@pytest.mark.parametrize("nele", [0, 6, 10])
def test_disc_rejects_bad_nele(nele):
    with pytest.raises(MeshError):
        generate_disc(nele)


def test_equilateral_shape_ratio_is_two():
    s = math.sqrt(3) / 2
    m = Mesh([[0, 0], [1, 0], [0.5, s]], [[0, 1, 2]])
    assert m.shape_ratios()[0] == pytest.approx(2.0)


def test_clockwise_triangle_rejected_by_constructor():
    with pytest.raises(MeshError):
        Mesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])


@pytest.mark.parametrize("make", [lambda: generate_square(3), lambda: generate_disc(16),
                                  lambda: generate_square(3, periodic=True)])
def test_refine_uniform(make):
    coarse = make()
    fine = refine_uniform(coarse)
    assert fine.n_triangles == 4 * coarse.n_triangles
    assert fine.area == pytest.approx(coarse.area, rel=1e-13)
    assert np.allclose(np.bincount(fine.parent, fine.areas), coarse.areas)
    # every child barycentre lies inside its parent
    lam = np.einsum("fmd,fd->fm", coarse.grad_lambda[fine.parent],
                    fine.barycenters - coarse.vertices[coarse.triangles[fine.parent, 0]])
    lam[:, 0] += 1.0
    assert lam.min() > 0
    assert fine.h == pytest.approx(coarse.h / 2)
    assert len(fine.boundary_edges) == 2 * len(coarse.boundary_edges)
    assert fine.is_periodic == coarse.is_periodic


def test_refined_periodic_mesh_matches_generated():
    fine = refine_uniform(generate_square(4, periodic=True))
    direct = generate_square(8, periodic=True)
    assert fine.n_vertices == direct.n_vertices and fine.n_edges == direct.n_edges


def test_classify_square_translation():
    m = generate_square(4)
    part = classify_boundary(m, constant_velocity(1.0, 0.0))
    assert np.all(m.edge_markers[part.inflow] == LEFT)
    assert len(part.inflow) == 4
    # tangential flow on top/bottom counts as outflow
    assert len(part.outflow) == 12


def test_classify_disc_rotation_all_outflow():
    for n in (16, 40, 80):
        m = generate_disc(n)
        part = classify_boundary(m, rotation_velocity())
        assert len(part.inflow) == 0
        assert len(part.outflow) == n


def test_classify_periodic_is_an_error():
    with pytest.raises(MeshError):
        classify_boundary(generate_square(3, periodic=True), constant_velocity(1, 0))


@pytest.mark.parametrize("make", [lambda: generate_square(3), lambda: generate_disc(24),
                                  lambda: generate_square(4, periodic=True)])
def test_export_import_round_trip(tmp_path, make):
    m = make()
    p = tmp_path / "m.txt"
    export_mesh(m, p)
    back = import_mesh(p)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.edge_markers, m.edge_markers)
    assert back.is_periodic == m.is_periodic
    assert back.n_edges == m.n_edges


def write(tmp_path, text):
    p = tmp_path / "mesh.txt"
    p.write_text(text)
    return p


def test_import_short_vertex_list_names_line(tmp_path):
    p = write(tmp_path, "3 1 0\n0 0 0\n1 0 0\n0 1 2\n")
    with pytest.raises(MeshParseError, match="line 5"):
        import_mesh(p)


def test_import_malformed_record(tmp_path):
    p = write(tmp_path, "# a comment\n3 1 0\n0 0 0\n1 zero 0\n0 1 0\n0 1 2\n")
    with pytest.raises(MeshParseError) as exc:
        import_mesh(p)
    assert exc.value.lineno == 4


def test_import_index_out_of_range(tmp_path):
    p = write(tmp_path, "3 1 0\n0 0 0\n1 0 0\n0 1 0\n0 1 3\n")
    with pytest.raises(MeshParseError, match="line 5"):
        import_mesh(p)


def test_import_trailing_record(tmp_path):
    p = write(tmp_path, "3 1 0\n0 0 0\n1 0 0\n0 1 0\n0 1 2\n0 1 1\n")
    with pytest.raises(MeshParseError, match="line 6"):
        import_mesh(p)


def test_import_repairs_clockwise_triangle(tmp_path, caplog):
    p = write(tmp_path, "3 1 0  # header\n0 0 0\n1 0 0\n0 1 0\n0 2 1\n")
    with caplog.at_level(logging.WARNING):
        m = import_mesh(p)
    assert m.areas[0] == pytest.approx(0.5)
    assert "clockwise" in caplog.text


def test_import_boundary_markers(tmp_path):
    p = write(tmp_path, "3 1 1\n0 0 0\n1 0 0\n0 1 0\n0 1 2\n0 1 7\n")
    m = import_mesh(p)
    b = m.boundary_edges
    marks = {tuple(sorted(m.edges[e])): m.edge_markers[e] for e in b}
    assert marks[(0, 1)] == 7 and marks[(1, 2)] == 1
