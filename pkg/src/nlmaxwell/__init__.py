"""Nonlinear time-harmonic Maxwell curl-curl solver on boxes.

Main entry points:

* :class:`BoxGrid` and the discrete operators in :mod:`nlmaxwell.mesh`
* :class:`MaterialTensors` and :class:`NonlinearityModel`
* :func:`maxwell_eigs` / :func:`spectral_split` for the linear spectrum
* :class:`EnergyContext` and :func:`ground_state` for the Nehari reduction
* :mod:`nlmaxwell.reduced` and :mod:`nlmaxwell.symmetry` for cylindrical
  symmetry and the radial oracle
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    InvalidInputError,
    MaterialError,
    NLMaxwellError,
    NoRayMaximumError,
    NonConvexModelError,
    NumericError,
    OracleInapplicableError,
    ReductionError,
    SolverError,
    SpectralError,
    SymmetryError,
)
from .functional import EnergyContext, quadrature_nonlinear  # noqa: E402
from .helmholtz import HelmholtzProjector, decompose  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .material import (  # noqa: E402
    MaterialTensors,
    NonlinearityModel,
    certify_convex,
    check_condition,
)
from .mesh import BoxGrid, read_field, write_field  # noqa: E402
from .nehari import (  # noqa: E402
    fiber_minimize,
    ground_state,
    mountain_pass_estimate,
    ray_maximize,
    unimodality_witness,
)
from .reduced import CylField, CylGrid, ReducedContext, cylinder_grid, reduced_tau_solver  # noqa: E402
from .spectrum import MaxwellOperators, index_count, maxwell_eigs, spectral_split  # noqa: E402
from .symmetry import group_average, radial_oracle, split_tau_rho_zeta, verify_radial  # noqa: E402

__all__ = [
    "__version__",
    "BACKEND",
    "BoxGrid",
    "ConfigError",
    "CylField",
    "CylGrid",
    "EnergyContext",
    "HelmholtzProjector",
    "InvalidInputError",
    "MaterialError",
    "MaterialTensors",
    "MaxwellOperators",
    "NLMaxwellError",
    "NoRayMaximumError",
    "NonConvexModelError",
    "NonlinearityModel",
    "NumericError",
    "OracleInapplicableError",
    "ReducedContext",
    "ReductionError",
    "SolverError",
    "SpectralError",
    "SymmetryError",
    "certify_convex",
    "check_condition",
    "cylinder_grid",
    "decompose",
    "fiber_minimize",
    "ground_state",
    "group_average",
    "index_count",
    "maxwell_eigs",
    "mountain_pass_estimate",
    "quadrature_nonlinear",
    "radial_oracle",
    "ray_maximize",
    "read_field",
    "reduced_tau_solver",
    "spectral_split",
    "split_tau_rho_zeta",
    "unimodality_witness",
    "verify_radial",
    "write_field",
]
