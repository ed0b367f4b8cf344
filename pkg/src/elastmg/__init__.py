"""
Matrix-free geometric multigrid for the elastic Helmholtz equation.

The equation is discretized in mixed displacement/pressure form on a MAC
staggered grid with compact β-spread stencils (``β = 1`` is the standard
scheme). The package provides the discrete operator, grid transfers, Vanka
and Kaczmarz relaxation, V/W/K-cycles used as shifted-Laplacian
preconditioners for flexible GMRES, and a two-grid local Fourier analysis
that predicts the multigrid convergence.
"""
from .discretization import MixedOperator, OperatorSpec, assemble_sparse
from .grid import FieldVector, MediaModel, StaggeredGrid
from .krylov import fgmres
from .lfa import LFAParams, smoothing_factor, two_grid_factor
from .multigrid import as_preconditioner, build_hierarchy, measure_convergence_factor
from .smoothers import VankaConfig

__version__ = '0.1.0'

__all__ = ['StaggeredGrid', 'MediaModel', 'FieldVector', 'OperatorSpec', 'MixedOperator',
           'assemble_sparse', 'VankaConfig', 'build_hierarchy', 'as_preconditioner',
           'measure_convergence_factor', 'fgmres', 'LFAParams', 'smoothing_factor',
           'two_grid_factor']
