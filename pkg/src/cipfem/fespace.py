"""Continuous Lagrange spaces of degree 1 and 2 on triangular meshes.

Scalar fields passed to this module are callables ``f(x, t)`` taking an
array of points ``x`` with shape (..., 2) and returning values of shape
(...).  Reference basis functions are written in barycentric coordinates;
P2 local dofs are ordered as the three vertices followed by the midpoints
of the edges (0,1), (1,2), (2,0).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, splu

from .quadrature import triangle_quadrature

# local P2 edge dof k sits on local mesh edge _P2_EDGE[k] (opposite vertex)
_P2_PAIRS = ((0, 1), (1, 2), (2, 0))
_P2_EDGE = (2, 0, 1)

PROJECTION_RTOL = 1e-12
# largest system factorized directly; bigger ones are solved iteratively
DIRECT_MAX_DOFS = 250_000


class FeSpace:
    """Continuous piecewise polynomial space ``V_h`` of degree 1 or 2."""

    def __init__(self, mesh, degree):
        if degree not in (1, 2):
            raise ValueError(f"unsupported polynomial degree {degree}")
        self.mesh = mesh
        self.degree = degree
        cls = mesh.vertex_class
        reps, vdof = np.unique(cls, return_inverse=True)
        vdof = vdof.ravel()
        tri = mesh.triangles
        if degree == 1:
            dofs = vdof[tri]
            coords = mesh.vertices[reps]
        else:
            nvd = len(reps)
            edofs = nvd + mesh.triangle_edges[:, list(_P2_EDGE)]
            dofs = np.concatenate([vdof[tri], edofs], axis=1)
            coords = np.concatenate([mesh.vertices[reps], mesh.edge_midpoints()])
        self.element_dofs = dofs
        self.dof_coords = coords
        self.ndof = len(coords)
        self.nloc = dofs.shape[1]

    def __repr__(self):
        return f"<FeSpace P{self.degree} ndof={self.ndof}>"

    # reference basis ---------------------------------------------------

    def basis(self, bary):
        """Basis values at barycentric points, shape (nq, nloc)."""
        lam = np.atleast_2d(bary)
        if self.degree == 1:
            return lam.copy()
        out = np.empty((len(lam), 6))
        for i in range(3):
            out[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        for k, (i, j) in enumerate(_P2_PAIRS):
            out[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
        return out

    def basis_dlambda(self, bary):
        """Derivatives w.r.t. barycentric coordinates, shape (nq, nloc, 3)."""
        lam = np.atleast_2d(bary)
        nq = len(lam)
        if self.degree == 1:
            return np.broadcast_to(np.eye(3), (nq, 3, 3)).copy()
        out = np.zeros((nq, 6, 3))
        for i in range(3):
            out[:, i, i] = 4.0 * lam[:, i] - 1.0
        for k, (i, j) in enumerate(_P2_PAIRS):
            out[:, 3 + k, i] = 4.0 * lam[:, j]
            out[:, 3 + k, j] = 4.0 * lam[:, i]
        return out

    def grad_basis(self, bary, cells=None):
        """Physical gradients, shape (ncells, nq, nloc, 2)."""
        g = self.mesh.grad_lambda if cells is None else self.mesh.grad_lambda[cells]
        return np.einsum("qam,tmd->tqad", self.basis_dlambda(bary), g)

    # quadrature helpers --------------------------------------------------

    def quad_points(self, rule, cells=None):
        """Physical quadrature points, shape (ncells, nq, 2)."""
        tri = self.mesh.triangles if cells is None else self.mesh.triangles[cells]
        x = self.mesh.vertices[tri]
        return np.einsum("qm,tmd->tqd", rule.points, x)

    def quad_weights(self, rule, cells=None):
        """Physical quadrature weights, shape (ncells, nq)."""
        area = self.mesh.areas if cells is None else self.mesh.areas[cells]
        return 2.0 * area[:, None] * rule.weights[None, :]

    def load_vector(self, values, rule):
        """Assemble ``b_i = sum_T sum_q w_q values[T, q] phi_i(x_q)``."""
        phi = self.basis(rule.points)
        w = self.quad_weights(rule)
        local = np.einsum("tq,qa->ta", w * values, phi)
        return np.bincount(self.element_dofs.ravel(), local.ravel(),
                           minlength=self.ndof)

    def integrate_field(self, f, t=0.0, degree=None):
        """Load vector of a field, ``b_i = (f, phi_i)``."""
        rule = triangle_quadrature(degree if degree is not None else 2 * self.degree + 4)
        return self.load_vector(f(self.quad_points(rule), t), rule)


@dataclass
class FeFunction:
    """Coefficient vector bound to a :class:`FeSpace`."""

    space: FeSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.ndof,):
            raise ValueError(
                f"expected {self.space.ndof} coefficients, got {self.coefficients.shape}")

    def local(self, cells=None):
        dofs = self.space.element_dofs if cells is None else self.space.element_dofs[cells]
        return self.coefficients[dofs]

    def values_at(self, rule, cells=None):
        """Values at the quadrature points of every cell, shape (ncells, nq)."""
        return self.local(cells) @ self.space.basis(rule.points).T

    def gradients_at(self, rule, cells=None):
        """Gradients at quadrature points, shape (ncells, nq, 2)."""
        return np.einsum("ta,tqad->tqd", self.local(cells),
                         self.space.grad_basis(rule.points, cells))

    def at_barycentric(self, cells, bary):
        """Values at one barycentric point per listed cell."""
        phi = self.space.basis(bary)            # (n, nloc)
        return np.einsum("ta,ta->t", self.local(cells), phi)


def barycentric(mesh, cell, point):
    x = mesh.vertices[mesh.triangles[cell]]
    lam12 = np.linalg.solve(np.column_stack([x[1] - x[0], x[2] - x[0]]),
                            np.asarray(point, dtype=float) - x[0])
    return np.array([1.0 - lam12.sum(), lam12[0], lam12[1]])


def evaluate(fn, element, point):
    """Value and gradient of ``fn`` at a physical point inside ``element``."""
    lam = barycentric(fn.space.mesh, element, point)
    if lam.min() < -1e-12:
        raise ValueError(f"point {tuple(point)} lies outside element {element}")
    c = fn.local([element])[0]
    value = float(fn.space.basis(lam)[0] @ c)
    grad = fn.space.grad_basis(lam, [element])[0, 0]
    return value, c @ grad


def interpolate_nodal(f, t, space):
    """Lagrange interpolant: coefficients are nodal values of ``f``."""
    return FeFunction(space, np.asarray(f(space.dof_coords, t), dtype=float)
                      * np.ones(space.ndof))


class MassSolver:
    """Consistent mass matrix solver with residual control.

    Small systems are LU-factorized once; large ones use Jacobi-preconditioned
    conjugate gradients (the scaled mass matrix is well conditioned).
    """

    def __init__(self, mass, direct_max=DIRECT_MAX_DOFS):
        self.mass = sp.csr_matrix(mass)
        self.direct = self.mass.shape[0] <= direct_max
        if self.direct:
            self._lu = splu(sp.csc_matrix(mass), permc_spec="MMD_AT_PLUS_A")
        else:
            inv = 1.0 / self.mass.diagonal()
            self._jacobi = LinearOperator(self.mass.shape, matvec=lambda x: inv * x,
                                          dtype=float)

    def _solve(self, b):
        if self.direct:
            return self._lu.solve(b)
        x, _ = cg(self.mass, b, M=self._jacobi, rtol=0.1 * PROJECTION_RTOL, atol=0.0,
                  maxiter=2000)
        return x

    def solve(self, b):
        x = self._solve(b)
        nb = np.linalg.norm(b)
        if nb > 0:
            res = np.linalg.norm(self.mass @ x - b)
            if res > PROJECTION_RTOL * nb:
                # one step of iterative refinement
                x += self._solve(b - self.mass @ x)
                res = np.linalg.norm(self.mass @ x - b)
                if res > PROJECTION_RTOL * nb:
                    raise RuntimeError(f"mass solve residual {res / nb:.2e} too large")
        return x


def l2_project(f, t, space, mass, solver=None):
    """L2 projection of the field ``f(., t)`` onto ``space``.

    ``solver`` may be a prebuilt :class:`MassSolver` for ``mass``.
    """
    solver = solver or MassSolver(mass)
    return FeFunction(space, solver.solve(space.integrate_field(f, t)))


def project_values(values, rule, space, solver):
    """L2 projection of a field given by its values at quadrature points."""
    return FeFunction(space, solver.solve(space.load_vector(values, rule)))
