"""Conforming triangulations with edge topology.

A :class:`Mesh` stores vertex coordinates and counter-clockwise triangles
and derives the full edge topology on construction: every edge knows its
one or two neighbouring triangles, the local edge index inside each of
them, a unit normal pointing out of the first ("left") triangle and its
length.  Local edge ``i`` of a triangle is the edge opposite local vertex
``i``, i.e. it runs from vertex ``(i+1) % 3`` to vertex ``(i+2) % 3``.

Periodic meshes keep the geometric vertices on all four sides and carry a
``periodic_map`` sending every vertex to the representative of its class.
Edges are then identified across opposite sides, so that no boundary
edges remain.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

#: Boundary markers used by the structured square generator.
BOTTOM, RIGHT, TOP, LEFT = 1, 2, 3, 4
#: Marker of the circle in the disc generator.
CIRCLE = 1

INFLOW_TOL = 1e-12
PERIODIC_TOL = 1e-9


class MeshError(ValueError):
    """Invalid mesh data or invalid mesh operation."""


class MeshParseError(MeshError):
    """Malformed mesh file; ``lineno`` points at the offending line."""

    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class Mesh:
    """Triangulation of a polygonal 2D domain.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    triangles : array_like, shape (nt, 3)
        Vertex indices, counter-clockwise.
    vertex_markers : array_like, shape (nv,), optional
    boundary_markers : dict, optional
        Maps sorted vertex pairs ``(i, j)`` of boundary edges to an integer
        marker.  Unlisted boundary edges get marker 1.
    periodic_map : array_like, shape (nv,), optional
        Representative vertex of each vertex class.
    period : tuple of float, optional
        Lengths of the periodic box; required with ``periodic_map``.
    """

    def __init__(self, vertices, triangles, vertex_markers=None,
                 boundary_markers=None, periodic_map=None, period=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        nv = len(self.vertices)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= nv):
            raise MeshError("triangle vertex index out of range")
        if vertex_markers is None:
            vertex_markers = np.zeros(nv, dtype=np.int64)
        self.vertex_markers = np.asarray(vertex_markers, dtype=np.int64)
        if periodic_map is not None:
            if period is None:
                raise MeshError("periodic meshes need the period lengths")
            periodic_map = np.asarray(periodic_map, dtype=np.int64)
        self.periodic_map = periodic_map
        self.period = None if period is None else tuple(float(p) for p in period)

        self._geometry()
        self._topology(boundary_markers or {})
        for arr in (self.vertices, self.triangles, self.edges,
                    self.edge_triangles, self.edge_local, self.edge_normals,
                    self.edge_lengths, self.edge_markers, self.triangle_edges):
            arr.setflags(write=False)

    # ------------------------------------------------------------------
    # construction helpers

    def _geometry(self):
        x = self.vertices[self.triangles]            # (nt, 3, 2)
        d1 = x[:, 1] - x[:, 0]
        d2 = x[:, 2] - x[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(det <= 0.0):
            bad = int(np.flatnonzero(det <= 0.0)[0])
            raise MeshError(f"triangle {bad} is not counter-clockwise")
        self.areas = 0.5 * det
        # gradients of the barycentric coordinates, constant per triangle
        g = np.empty((len(det), 3, 2))
        for i in range(3):
            a = x[:, (i + 1) % 3]
            b = x[:, (i + 2) % 3]
            g[:, i, 0] = (a[:, 1] - b[:, 1]) / det
            g[:, i, 1] = (b[:, 0] - a[:, 0]) / det
        self.grad_lambda = g

    def _topology(self, boundary_markers):
        tri = self.triangles
        nt = len(tri)
        rep = self.vertex_class
        a = np.concatenate([tri[:, (i + 1) % 3] for i in range(3)])
        b = np.concatenate([tri[:, (i + 2) % 3] for i in range(3)])
        owner = np.tile(np.arange(nt), 3)
        local = np.repeat(np.arange(3), nt)
        ra, rb = rep[a], rep[b]
        key = [np.minimum(ra, rb), np.maximum(ra, rb)]
        if self.is_periodic:
            # distinct edges may join the same vertex classes on coarse
            # periodic meshes; the wrapped midpoint tells them apart
            mid = 0.5 * (self.vertices[a] + self.vertices[b])
            mid = np.mod(mid, self.period)
            mid = np.where(np.abs(mid - self.period) < PERIODIC_TOL, 0.0, mid)
            q = np.round(mid / PERIODIC_TOL).astype(np.int64)
            key += [q[:, 0], q[:, 1]]
        key = np.stack(key, axis=1)
        # half-edges ordered triangle-major for deterministic numbering
        order = np.lexsort((local, owner))
        _, first, inverse, counts = np.unique(
            key[order], axis=0, return_index=True, return_inverse=True,
            return_counts=True)
        if np.any(counts > 2):
            raise MeshError("non-manifold edge shared by more than two triangles")
        # number edges by first appearance
        perm = np.argsort(first, kind="stable")
        rank = np.empty_like(perm)
        rank[perm] = np.arange(len(perm))
        edge_of_half = np.empty(3 * nt, dtype=np.int64)
        edge_of_half[order] = rank[inverse.ravel()]
        ne = len(first)

        # first half-edge of an edge (in triangle-major order) is the left side
        he = edge_of_half[order]
        pos = np.argsort(he, kind="stable")
        side = np.ones(3 * nt, dtype=np.int64)
        side[pos[np.r_[0, np.flatnonzero(np.diff(he[pos])) + 1]]] = 0
        edge_tris = -np.ones((ne, 2), dtype=np.int64)
        edge_loc = -np.ones((ne, 2), dtype=np.int64)
        edge_tris[he, side] = owner[order]
        edge_loc[he, side] = local[order]
        self.edge_triangles = edge_tris
        self.edge_local = edge_loc
        t0, l0 = edge_tris[:, 0], edge_loc[:, 0]
        va = tri[t0, (l0 + 1) % 3]
        vb = tri[t0, (l0 + 2) % 3]
        self.edges = np.stack([va, vb], axis=1)
        d = self.vertices[vb] - self.vertices[va]
        length = np.hypot(d[:, 0], d[:, 1])
        self.edge_lengths = length
        self.edge_normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / length[:, None]
        te = np.empty((nt, 3), dtype=np.int64)
        te[owner, local] = edge_of_half
        self.triangle_edges = te

        markers = np.zeros(ne, dtype=np.int64)
        bnd = edge_tris[:, 1] < 0
        for e in np.flatnonzero(bnd):
            i, j = sorted((int(va[e]), int(vb[e])))
            markers[e] = boundary_markers.get((i, j), 1)
        self.edge_markers = markers

    # ------------------------------------------------------------------
    # queries

    @property
    def is_periodic(self):
        return self.periodic_map is not None

    @property
    def vertex_class(self):
        """Representative vertex index of every vertex."""
        if self.periodic_map is None:
            return np.arange(len(self.vertices))
        return self.periodic_map

    @property
    def n_vertices(self):
        """Number of distinct vertices after periodic identification."""
        return len(np.unique(self.vertex_class))

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def interior_edges(self):
        return np.flatnonzero(self.edge_triangles[:, 1] >= 0)

    @property
    def boundary_edges(self):
        return np.flatnonzero(self.edge_triangles[:, 1] < 0)

    @property
    def h(self):
        """Mesh size: the longest edge."""
        return float(self.edge_lengths.max())

    @property
    def area(self):
        return float(self.areas.sum())

    @property
    def barycenters(self):
        return self.vertices[self.triangles].mean(axis=1)

    def edge_midpoints(self, edges=None):
        e = self.edges if edges is None else self.edges[edges]
        return 0.5 * (self.vertices[e[:, 0]] + self.vertices[e[:, 1]])

    def shape_ratios(self):
        """Circumradius over inradius for every triangle (2 if equilateral)."""
        x = self.vertices[self.triangles]
        la = np.linalg.norm(x[:, 1] - x[:, 2], axis=1)
        lb = np.linalg.norm(x[:, 2] - x[:, 0], axis=1)
        lc = np.linalg.norm(x[:, 0] - x[:, 1], axis=1)
        area = self.areas
        circum = la * lb * lc / (4.0 * area)
        inr = 2.0 * area / (la + lb + lc)
        return circum / inr

    def __repr__(self):
        kind = "periodic " if self.is_periodic else ""
        return (f"<{kind}Mesh nv={self.n_vertices} nt={self.n_triangles} "
                f"ne={self.n_edges} h={self.h:.4g}>")


@dataclass(frozen=True)
class BoundaryPartition:
    """Split of the boundary edges into inflow and outflow parts."""

    inflow: np.ndarray
    outflow: np.ndarray


# ----------------------------------------------------------------------
# generators

def generate_square(nele, periodic=False):
    """Structured triangulation of the unit square.

    Each of the ``nele x nele`` cells is cut along its positive-slope
    diagonal.  With ``periodic=True`` opposite sides are identified.
    """
    nele = int(nele)
    if nele < 1:
        raise MeshError("nele must be positive")
    if periodic and nele < 2:
        raise MeshError("periodic square needs nele >= 2")
    n1 = nele + 1
    s = np.linspace(0.0, 1.0, n1)
    X, Y = np.meshgrid(s, s)                 # row j = y-index
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = np.arange(n1 * n1).reshape(n1, n1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

    on_left = np.isclose(vertices[:, 0], 0.0)
    on_right = np.isclose(vertices[:, 0], 1.0)
    on_bottom = np.isclose(vertices[:, 1], 0.0)
    on_top = np.isclose(vertices[:, 1], 1.0)
    vmark = np.zeros(len(vertices), dtype=np.int64)
    for m, sel in ((BOTTOM, on_bottom), (RIGHT, on_right), (TOP, on_top),
                   (LEFT, on_left)):
        vmark[sel & (vmark == 0)] = m

    if periodic:
        i = np.arange(n1) % nele
        rep = idx[np.ix_(i, i)].ravel()
        return Mesh(vertices, triangles, vertex_markers=vmark,
                    periodic_map=rep, period=(1.0, 1.0))

    bmark = {}
    for k in range(nele):
        for m, (p, q) in ((BOTTOM, (idx[0, k], idx[0, k + 1])),
                          (TOP, (idx[nele, k], idx[nele, k + 1])),
                          (LEFT, (idx[k, 0], idx[k + 1, 0])),
                          (RIGHT, (idx[k, nele], idx[k + 1, nele]))):
            bmark[tuple(sorted((int(p), int(q))))] = m
    return Mesh(vertices, triangles, vertex_markers=vmark,
                boundary_markers=bmark)


def generate_disc(nele):
    """Ring mesh of the unit disc with ``nele`` edges on the circle.

    Rings sit at radii ``i / nrings`` with ``nrings = ceil(nele / 8)``;
    ring ``i`` carries ``ceil(nele * r_i)`` equispaced vertices.  Adjacent
    rings are stitched by marching along both vertex circles in angle, the
    innermost ring is fanned to the centre.
    """
    nele = int(nele)
    if nele < 8 or nele % 4:
        raise MeshError("disc needs nele >= 8 and divisible by 4")
    nrings = math.ceil(nele / 8)
    verts = [np.zeros((1, 2))]
    rings = []
    angles = []
    start = 1
    for i in range(1, nrings + 1):
        r = i / nrings
        n = nele if i == nrings else math.ceil(nele * r)
        # stagger alternate rings by half a step
        phase = (np.pi / n) * (i % 2) if i < nrings else 0.0
        th = phase + 2.0 * np.pi * np.arange(n) / n
        verts.append(np.stack([r * np.cos(th), r * np.sin(th)], axis=1))
        rings.append(start + np.arange(n))
        angles.append(th)
        start += n
    vertices = np.concatenate(verts)

    tris = []
    inner = rings[0]
    for j in range(len(inner)):
        tris.append((0, inner[j], inner[(j + 1) % len(inner)]))
    for k in range(1, nrings):
        tris.extend(_stitch(rings[k - 1], angles[k - 1], rings[k], angles[k]))
    triangles = np.array(tris, dtype=np.int64)
    # enforce counter-clockwise orientation
    x = vertices[triangles]
    det = ((x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1])
           - (x[:, 1, 1] - x[:, 0, 1]) * (x[:, 2, 0] - x[:, 0, 0]))
    triangles[det < 0] = triangles[det < 0][:, [0, 2, 1]]

    vmark = np.zeros(len(vertices), dtype=np.int64)
    vmark[rings[-1]] = CIRCLE
    outer = rings[-1]
    bmark = {tuple(sorted((int(outer[j]), int(outer[(j + 1) % nele])))): CIRCLE
             for j in range(nele)}
    return Mesh(vertices, triangles, vertex_markers=vmark,
                boundary_markers=bmark)


def _stitch(ia, tha, ib, thb):
    """Triangulate the annulus strip between two vertex rings."""
    na, nb = len(ia), len(thb)
    # unwrapped angles, starting at each ring's first vertex
    ua = np.append(tha, tha[0] + 2 * np.pi)
    ub = np.append(thb, thb[0] + 2 * np.pi)
    i = j = 0
    out = []
    while i < na or j < nb:
        if j == nb or (i < na and ua[i + 1] < ub[j + 1]):
            out.append((ia[i % na], ib[j % nb], ia[(i + 1) % na]))
            i += 1
        else:
            out.append((ia[i % na], ib[j % nb], ib[(j + 1) % nb]))
            j += 1
    return out


def refine_uniform(mesh):
    """Split every triangle into four through its edge midpoints.

    Returns the refined mesh; its ``parent`` attribute maps each child
    triangle to the coarse triangle containing it.  Periodicity and
    boundary markers are inherited.
    """
    nv = len(mesh.vertices)
    nt = mesh.n_triangles
    t = mesh.triangles
    # one midpoint per geometric edge copy; periodic copies stay distinct
    x = mesh.vertices[t]
    half = np.stack([0.5 * (x[:, (i + 1) % 3] + x[:, (i + 2) % 3])
                     for i in range(3)], axis=1).reshape(-1, 2)
    q = np.round(half / PERIODIC_TOL).astype(np.int64)
    _, first, inverse = np.unique(q, axis=0, return_index=True,
                                  return_inverse=True)
    perm = np.argsort(first, kind="stable")
    rank = np.empty_like(perm)
    rank[perm] = np.arange(len(perm))
    m = nv + rank[inverse.ravel()].reshape(nt, 3)
    vertices = np.concatenate([mesh.vertices, half[np.sort(first)]])
    children = np.stack([
        np.stack([t[:, 0], m[:, 2], m[:, 1]], axis=1),
        np.stack([m[:, 2], t[:, 1], m[:, 0]], axis=1),
        np.stack([m[:, 1], m[:, 0], t[:, 2]], axis=1),
        np.stack([m[:, 0], m[:, 1], m[:, 2]], axis=1),
    ], axis=1).reshape(-1, 3)
    parent = np.repeat(np.arange(nt), 4)

    vmark = np.concatenate([mesh.vertex_markers,
                            np.zeros(len(first), dtype=np.int64)])
    if mesh.is_periodic:
        periodic_map = _periodic_classes(vertices, mesh.period)
        fine = Mesh(vertices, children, vertex_markers=vmark,
                    periodic_map=periodic_map, period=mesh.period)
    else:
        bmark = {}
        for e in mesh.boundary_edges:
            a, b = (int(v) for v in mesh.edges[e])
            mk = int(mesh.edge_markers[e])
            mid = int(m[mesh.edge_triangles[e, 0], mesh.edge_local[e, 0]])
            for p in (a, b):
                bmark[tuple(sorted((p, mid)))] = mk
            vmark[mid] = mk
        fine = Mesh(vertices, children, vertex_markers=vmark,
                    boundary_markers=bmark)
    fine.parent = parent
    return fine


def _periodic_classes(vertices, period):
    wrapped = np.mod(vertices, period)
    wrapped = np.where(np.abs(wrapped - period) < PERIODIC_TOL, 0.0, wrapped)
    q = np.round(wrapped / PERIODIC_TOL).astype(np.int64)
    _, first, inverse = np.unique(q, axis=0, return_index=True,
                                  return_inverse=True)
    return first[inverse.ravel()]


# ----------------------------------------------------------------------
# boundary classification

def classify_boundary(mesh, velocity, t=0.0):
    """Split boundary edges by the sign of ``beta . n`` at edge midpoints.

    Edges with ``|beta . n| < 1e-12`` count as outflow.
    """
    if mesh.is_periodic:
        raise MeshError("periodic meshes have no boundary")
    bnd = mesh.boundary_edges
    beta = velocity(mesh.edge_midpoints(bnd), t)
    bn = np.einsum("ij,ij->i", beta, mesh.edge_normals[bnd])
    inflow = bn < -INFLOW_TOL
    return BoundaryPartition(inflow=bnd[inflow], outflow=bnd[~inflow])


# ----------------------------------------------------------------------
# ASCII IO

def export_mesh(mesh, path):
    """Write the mesh geometry in the ``nv nt nb`` ASCII format.

    Periodic meshes get a leading ``# periodic Lx Ly`` comment, which
    :func:`import_mesh` uses to rebuild the identification and other
    readers ignore.
    """
    bnd = mesh.boundary_edges
    lines = []
    if mesh.is_periodic:
        lines.append("# periodic {!r} {!r}".format(*mesh.period))
    lines.append(f"{len(mesh.vertices)} {mesh.n_triangles} {len(bnd)}")
    for (x, y), m in zip(mesh.vertices, mesh.vertex_markers):
        lines.append(f"{float(x)!r} {float(y)!r} {int(m)}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    for e in bnd:
        i, j = mesh.edges[e]
        lines.append(f"{i} {j} {int(mesh.edge_markers[e])}")
    Path(path).write_text("\n".join(lines) + "\n")


def import_mesh(path):
    """Read a mesh written by :func:`export_mesh` (or a compatible tool).

    Clockwise triangles are repaired by swapping two indices, with a
    warning.  Malformed input raises :class:`MeshParseError`.
    """
    records = []
    period = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            directive = raw.strip().split()
            if directive[:2] == ["#", "periodic"]:
                try:
                    period = (float(directive[2]), float(directive[3]))
                except (IndexError, ValueError):
                    raise MeshParseError(lineno, "expected '# periodic Lx Ly'") from None
            body = raw.split("#", 1)[0].split()
            if body:
                records.append((lineno, body))
    it = iter(records)
    last = records[-1][0] if records else 0

    def take(what, conv):
        nonlocal last
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise MeshParseError(last + 1, f"expected {what}, got end of file") from None
        last = lineno
        if len(tok) != 3:
            raise MeshParseError(lineno, f"expected 3 fields for {what}, got {len(tok)}")
        try:
            return lineno, [c(v) for c, v in zip(conv, tok)]
        except ValueError:
            raise MeshParseError(lineno, f"malformed {what}: {' '.join(tok)}") from None

    _, (nv, nt, nb) = take("header 'nv nt nb'", (int, int, int))
    if min(nv, nt, nb) < 0 or nv < 3 or nt < 1:
        raise MeshParseError(1, "invalid counts in header")
    vertices = np.empty((nv, 2))
    vmark = np.empty(nv, dtype=np.int64)
    for i in range(nv):
        _, (x, y, m) = take("vertex record", (float, float, int))
        vertices[i] = x, y
        vmark[i] = m
    triangles = np.empty((nt, 3), dtype=np.int64)
    for i in range(nt):
        lineno, tri = take("triangle record", (int, int, int))
        if min(tri) < 0 or max(tri) >= nv:
            raise MeshParseError(lineno, "triangle vertex index out of range")
        if len(set(tri)) < 3:
            raise MeshParseError(lineno, "degenerate triangle")
        p = vertices[tri]
        det = ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1])
               - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0]))
        if det == 0.0:
            raise MeshParseError(lineno, "zero-area triangle")
        if det < 0.0:
            log.warning("line %d: clockwise triangle repaired", lineno)
            tri = [tri[0], tri[2], tri[1]]
        triangles[i] = tri
    bmark = {}
    for i in range(nb):
        lineno, (a, b, m) = take("boundary edge record", (int, int, int))
        if min(a, b) < 0 or max(a, b) >= nv:
            raise MeshParseError(lineno, "boundary vertex index out of range")
        bmark[tuple(sorted((a, b)))] = m
    extra = next(it, None)
    if extra is not None:
        raise MeshParseError(extra[0], "unexpected trailing record")
    if period is not None:
        return Mesh(vertices, triangles, vertex_markers=vmark,
                    periodic_map=_periodic_classes(vertices, np.array(period)),
                    period=period)
    return Mesh(vertices, triangles, vertex_markers=vmark, boundary_markers=bmark)
