"""Asymptotics of singular solutions to the Yamabe and sigma_k-Yamabe equations on the cylinder."""

import os as _os

__version__ = "0.1.0"

# BLAS threads have to be pinned before numpy loads
THREADS_ENV = "CYLINDER_ASYMPTOTICS_THREADS"
if _os.environ.get(THREADS_ENV):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ[THREADS_ENV])

from .errors import ArtifactError, ConfigError  # noqa: E402
from .radial_core import ProblemParams, RadialProfile, integrate_radial, make_params  # noqa: E402
from .index_sets import IndexSet, index_set_for  # noqa: E402
from .pde_lab import make_bvp, solve_cylinder_bvp, synthesize_field  # noqa: E402
from .expansion_engine import DecayFitter, extract_expansion, fit_decay, improved_radial_match, order1_extract  # noqa: E402

__all__ = [
    "ArtifactError", "ConfigError", "ProblemParams", "RadialProfile", "integrate_radial", "make_params",
    "IndexSet", "index_set_for", "make_bvp", "solve_cylinder_bvp", "synthesize_field", "DecayFitter",
    "extract_expansion", "fit_decay", "improved_radial_match", "order1_extract",
]
