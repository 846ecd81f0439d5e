"""Continuous interior penalty finite elements for transient transport.

Modules
-------
mesh, quadrature, fespace
    Triangulations, quadrature rules and P1/P2 Lagrange spaces.
operators
    Mass, convection, gradient-jump (CIP) and inflow matrices.
timestepper
    Theta-scheme integration with a reused factorization.
analysis
    Error norms, weighted norms, dual norm, a posteriori estimator, rates.
scenarios
    Benchmark problems with exact solutions and the refinement-study driver.
verify, cli
    Invariant suite and command-line front-end.
"""
from .analysis import ErrorReport, WeightFunction
from .fespace import FeFunction, FeSpace
from .mesh import Mesh, generate_disc, generate_square, import_mesh, export_mesh
from .operators import SystemOperators, assemble_operators
from .scenarios import Scenario, get_scenario, run_convergence_study, simulate
from .timestepper import ThetaConfig, Trajectory, run_simulation

__version__ = "0.1.0"
