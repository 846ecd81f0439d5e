"""Sparse bilinear forms of the stabilized transport discretization.

All matrices are assembled from dense local blocks scattered through a
COO triplet list, then compressed to CSR; duplicate triplets are summed
in a fixed order so repeated assembly is bit-identical.

Matrix rows are test functions, columns trial functions:
``A[i, j] = (beta . grad phi_j, phi_i)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .mesh import MeshError
from .quadrature import edge_quadrature, triangle_quadrature

CIP_VARIANTS = ("abs_beta", "abs_beta_n")
DEFAULT_GAMMA = 0.01


@dataclass(frozen=True)
class VelocityField:
    """Transport velocity ``beta(x, t)``.

    ``flow(x, t)`` is the backward characteristic map: the point at time 0
    that is transported to ``x`` at time ``t``.  Fields without a closed
    form flow leave it as ``None``.
    """

    field: Callable
    beta_inf: float
    divergence_free: bool = True
    flow: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        if self.divergence_free:
            err = self.divergence_error()
            if err > 1e-6:
                raise ValueError(f"velocity {self.name!r} flagged divergence free "
                                 f"but |div beta| reaches {err:.2e}")

    def __call__(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.field(x, t), x.shape)

    def divergence_error(self, npoints=100, step=1e-5, seed=0):
        """Max of the central-difference divergence at random points."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1.0, 1.0, size=(npoints, 2))
        t = rng.uniform(0.0, 1.0)
        ex, ey = np.array([step, 0.0]), np.array([0.0, step])
        div = ((self(x + ex, t)[:, 0] - self(x - ex, t)[:, 0])
               + (self(x + ey, t)[:, 1] - self(x - ey, t)[:, 1])) / (2 * step)
        return float(np.abs(div).max())


def constant_velocity(bx, by):
    b = np.array([bx, by], dtype=float)
    return VelocityField(
        field=lambda x, t: np.broadcast_to(b, np.shape(x)),
        beta_inf=float(np.hypot(bx, by)),
        flow=lambda x, t: np.asarray(x) - t * b,
        name=f"constant({bx:g},{by:g})",
    )


def _rotation_field(x, t):
    x = np.asarray(x)
    return np.stack([x[..., 1], -x[..., 0]], axis=-1)


def _rotation_flow(x, t):
    x = np.asarray(x)
    c, s = np.cos(t), np.sin(t)
    return np.stack([c * x[..., 0] - s * x[..., 1],
                     s * x[..., 0] + c * x[..., 1]], axis=-1)


def rotation_velocity(radius=1.0):
    """Clockwise rigid rotation ``beta = (y, -x)``; sup-norm over the disc."""
    return VelocityField(field=_rotation_field, beta_inf=float(radius),
                         flow=_rotation_flow, name="rotation")


@dataclass
class SystemOperators:
    """Assembled matrices of one space/velocity pair."""

    M: sp.csr_matrix
    A: sp.csr_matrix
    S: sp.csr_matrix
    B: Optional[sp.csr_matrix]
    gamma: float
    variant: str = "abs_beta"
    time: float = 0.0
    partition: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        n = self.M.shape[0]
        for m in (self.A, self.S, self.B):
            if m is not None and m.shape != (n, n):
                raise ValueError("operator dimensions disagree")

    @property
    def transport(self):
        """``A + B + gamma S``: everything but the mass matrix."""
        out = self.A + self.gamma * self.S
        if self.B is not None:
            out = out + self.B
        return out.tocsr()


# ----------------------------------------------------------------------
# helpers

def _scatter(local, rows, cols, n):
    I = np.broadcast_to(rows[:, :, None], local.shape)
    J = np.broadcast_to(cols[:, None, :], local.shape)
    return sp.coo_matrix((local.ravel(), (I.ravel(), J.ravel())),
                         shape=(n, n)).tocsr()


def _volume_degree(space):
    return 2 * space.degree + 2


def _data_degree(space):
    return 2 * space.degree + 4


def _edge_bary(mesh, edges, side, s):
    """Barycentric coordinates of edge parameter ``s`` on one side.

    ``s`` runs from the first to the second vertex of the edge as seen
    from the left triangle; the right triangle traverses it backwards.
    """
    loc = mesh.edge_local[edges, side]
    ne, nq = len(edges), len(s)
    lam = np.zeros((ne, nq, 3))
    a = (loc + 1) % 3
    b = (loc + 2) % 3
    ee = np.arange(ne)[:, None]
    sa, sb = (1.0 - s, s) if side == 0 else (s, 1.0 - s)
    lam[ee, np.arange(nq)[None, :], a[:, None]] = sa[None, :]
    lam[ee, np.arange(nq)[None, :], b[:, None]] = sb[None, :]
    return lam


def _edge_points(mesh, edges, s):
    x = mesh.vertices[mesh.edges[edges]]          # (ne, 2, 2)
    return (1.0 - s)[None, :, None] * x[:, None, 0] + s[None, :, None] * x[:, None, 1]


def _edge_grad(space, edges, side, s):
    """Physical basis gradients on one side of edges, (ne, nq, nloc, 2)."""
    mesh = space.mesh
    lam = _edge_bary(mesh, edges, side, s)
    ne, nq = lam.shape[:2]
    dl = space.basis_dlambda(lam.reshape(-1, 3)).reshape(ne, nq, space.nloc, 3)
    g = mesh.grad_lambda[mesh.edge_triangles[edges, side]]
    return np.einsum("eqam,emd->eqad", dl, g)


def _edge_basis(space, edges, s):
    lam = _edge_bary(space.mesh, edges, 0, s)
    ne, nq = lam.shape[:2]
    return space.basis(lam.reshape(-1, 3)).reshape(ne, nq, space.nloc)


# ----------------------------------------------------------------------
# volume forms

def assemble_mass(space):
    """Consistent mass matrix ``M_ij = (phi_j, phi_i)``."""
    rule = triangle_quadrature(_volume_degree(space))
    phi = space.basis(rule.points)
    w = space.quad_weights(rule)
    local = np.einsum("tq,qa,qb->tab", w, phi, phi)
    d = space.element_dofs
    return _scatter(local, d, d, space.ndof)


def assemble_stiffness(space):
    """``K_ij = (grad phi_j, grad phi_i)``."""
    rule = triangle_quadrature(_volume_degree(space))
    g = space.grad_basis(rule.points)
    w = space.quad_weights(rule)
    local = np.einsum("tq,tqad,tqbd->tab", w, g, g)
    d = space.element_dofs
    return _scatter(local, d, d, space.ndof)


def assemble_streamline(space, velocity, t=0.0):
    """``K_ij = (beta . grad phi_j, beta . grad phi_i)``."""
    rule = triangle_quadrature(_volume_degree(space))
    g = space.grad_basis(rule.points)
    beta = velocity(space.quad_points(rule), t)
    w = space.quad_weights(rule)
    bg = np.einsum("tqd,tqbd->tqb", beta, g)
    local = np.einsum("tq,tqa,tqb->tab", w, bg, bg)
    d = space.element_dofs
    return _scatter(local, d, d, space.ndof)


def assemble_convection(space, velocity, t=0.0):
    """``A_ij = (beta . grad phi_j, phi_i)``."""
    rule = triangle_quadrature(_volume_degree(space))
    phi = space.basis(rule.points)
    g = space.grad_basis(rule.points)
    beta = velocity(space.quad_points(rule), t)
    w = space.quad_weights(rule)
    bg = np.einsum("tqd,tqbd->tqb", beta, g)
    local = np.einsum("tq,qa,tqb->tab", w, phi, bg)
    d = space.element_dofs
    return _scatter(local, d, d, space.ndof)


def assemble_cip(space, velocity, t=0.0, variant="abs_beta"):
    """Gradient-jump penalty over interior edges.

    ``S_ij = sum_F h_F^2 int_F w [[d_n phi_j]] [[d_n phi_i]] ds`` with the
    weight ``w = |beta|`` (``abs_beta``) or ``|beta . n_F|``
    (``abs_beta_n``).  Only the normal derivative can jump for continuous
    functions, so this equals the full gradient jump.
    """
    if variant not in CIP_VARIANTS:
        raise ValueError(f"unknown CIP variant {variant!r}")
    mesh = space.mesh
    edges = mesh.interior_edges
    if len(edges) == 0:
        return sp.csr_matrix((space.ndof, space.ndof))
    rule = edge_quadrature(_volume_degree(space))
    s = rule.cartesian
    n = mesh.edge_normals[edges]
    dnL = np.einsum("eqad,ed->eqa", _edge_grad(space, edges, 0, s), n)
    dnR = np.einsum("eqad,ed->eqa", _edge_grad(space, edges, 1, s), n)
    jump = np.concatenate([dnL, -dnR], axis=2)
    beta = velocity(_edge_points(mesh, edges, s), t)
    if variant == "abs_beta":
        wfun = np.linalg.norm(beta, axis=2)
    else:
        wfun = np.abs(np.einsum("eqd,ed->eq", beta, n))
    hF = mesh.edge_lengths[edges]
    w = (hF ** 3)[:, None] * rule.weights[None, :] * wfun
    local = np.einsum("eq,eqa,eqb->eab", w, jump, jump)
    dofs = np.concatenate([space.element_dofs[mesh.edge_triangles[edges, 0]],
                           space.element_dofs[mesh.edge_triangles[edges, 1]]], axis=1)
    return _scatter(local, dofs, dofs, space.ndof)


# ----------------------------------------------------------------------
# inflow boundary

def _inflow_setup(space, partition, velocity, t, degree):
    if space.mesh.is_periodic:
        raise MeshError("periodic meshes have no inflow boundary")
    edges = np.asarray(partition.inflow, dtype=np.int64)
    rule = edge_quadrature(degree)
    s = rule.cartesian
    mesh = space.mesh
    x = _edge_points(mesh, edges, s)
    bn = np.einsum("eqd,ed->eq", velocity(x, t), mesh.edge_normals[edges])
    w = mesh.edge_lengths[edges][:, None] * rule.weights[None, :] * np.abs(bn)
    phi = _edge_basis(space, edges, s)
    dofs = space.element_dofs[mesh.edge_triangles[edges, 0]]
    return x, w, phi, dofs


def assemble_inflow_matrix(space, partition, velocity, t=0.0):
    """``B_ij = sum_{F in inflow} int_F |beta . n| phi_j phi_i ds``."""
    x, w, phi, dofs = _inflow_setup(space, partition, velocity, t,
                                    _volume_degree(space))
    local = np.einsum("eq,eqa,eqb->eab", w, phi, phi)
    return _scatter(local, dofs, dofs, space.ndof)


def assemble_inflow_rhs(space, partition, velocity, g, t=0.0):
    """``b_i = sum_{F in inflow} int_F |beta . n| g phi_i ds``."""
    x, w, phi, dofs = _inflow_setup(space, partition, velocity, t,
                                    _data_degree(space))
    local = np.einsum("eq,eqa->ea", w * g(x, t), phi)
    return np.bincount(dofs.ravel(), local.ravel(), minlength=space.ndof)


def assemble_source(space, f, t=0.0):
    """Load vector ``b_i = (f(., t), phi_i)``."""
    return space.integrate_field(f, t, _data_degree(space))


# ----------------------------------------------------------------------

def assemble_operators(space, velocity, gamma=DEFAULT_GAMMA, variant="abs_beta",
                       t=0.0, partition=None):
    """Assemble M, A, S and, on non-periodic meshes, B."""
    from .mesh import classify_boundary

    B = None
    if not space.mesh.is_periodic:
        partition = partition or classify_boundary(space.mesh, velocity, t)
        B = assemble_inflow_matrix(space, partition, velocity, t)
    return SystemOperators(
        M=assemble_mass(space),
        A=assemble_convection(space, velocity, t),
        S=assemble_cip(space, velocity, t, variant),
        B=B, gamma=gamma, variant=variant, time=t, partition=partition)


def dump_triplets(matrix, path):
    """Write a sparse matrix as ``row col value`` lines."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
