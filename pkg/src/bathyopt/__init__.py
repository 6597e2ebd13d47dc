"""Finite-element Helmholtz solver and bathymetry optimizer for shallow-water waves."""
from .errors import BathyoptError
from .fem import AdmissibleBox, P0Field, P1Field, PlaneWave, discrete_tv, norm_1k0
from .helmholtz import HelmholtzModel, PhysicalParams, solve, wavenumber_from_physical
from .mesh import Mesh, build_structured_mesh, locate_region_elements
from .optim import ControlSpec, CostSpec, adjoint_gradient, evaluate_reduced, minimize

__version__ = "0.1.0"

__all__ = [
    "AdmissibleBox",
    "BathyoptError",
    "ControlSpec",
    "CostSpec",
    "HelmholtzModel",
    "Mesh",
    "P0Field",
    "P1Field",
    "PhysicalParams",
    "PlaneWave",
    "adjoint_gradient",
    "build_structured_mesh",
    "discrete_tv",
    "evaluate_reduced",
    "locate_region_elements",
    "minimize",
    "norm_1k0",
    "solve",
    "wavenumber_from_physical",
]
