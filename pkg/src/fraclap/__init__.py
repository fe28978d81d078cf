"""P1 Galerkin discretisation of the regional fractional Laplacian.

Assembly of the Gagliardo and log-weighted forms on interval and triangle
meshes, zero-mean Poisson and eigen solves, and derivatives of solutions and
of the first eigenvalue with respect to the order ``s``.
"""

__version__ = "0.1.0"

from .domain import (  # noqa: E402
    DiscreteFunction,
    Mesh,
    MeshError,
    from_spec,
    generate_disc,
    generate_interval,
    generate_square,
    interpolate,
    load_mesh,
    poincare_constant,
    save_mesh,
)
from .forms import MassMatrix, NonlocalMatrix, assemble, energy, mass, pv_apply, seminorm  # noqa: E402
from .quadrature import KernelSpec, PairClass, QuadratureError, Weight, classify_pair, pair_integral  # noqa: E402
from .solve import (  # noqa: E402
    DerivativeReport,
    Spectrum,
    dlambda_plus,
    eig,
    j_s,
    poisson_solve,
    s_derivative_solve,
)
from .specfun import c_ns, dc_ns, psi_sigma  # noqa: E402

__all__ = [
    "DerivativeReport", "DiscreteFunction", "KernelSpec", "MassMatrix", "Mesh", "MeshError",
    "NonlocalMatrix", "PairClass", "QuadratureError", "Spectrum", "Weight", "assemble",
    "c_ns", "classify_pair", "dc_ns", "dlambda_plus", "eig", "energy", "from_spec",
    "generate_disc", "generate_interval", "generate_square", "interpolate", "j_s",
    "load_mesh", "mass", "pair_integral", "poincare_constant", "poisson_solve", "psi_sigma",
    "pv_apply", "s_derivative_solve", "save_mesh", "seminorm",
]
