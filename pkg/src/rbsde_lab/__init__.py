"""Reflected backward SDEs on a symmetric binomial lattice."""

__version__ = "0.1.0"

from .analysis import (  # noqa: E402
    ComparisonReport,
    SweepResult,
    apriori_bound,
    approximation_sweep,
    check_comparison,
    norm_estimates,
    pointwise_bound_field,
)
from .errors import *  # noqa: E402,F403
from .generators import (  # noqa: E402
    Generator,
    Scenario,
    barrier_shift,
    clip,
    exp_quadratic_transform,
    f0,
    fdrift,
    fmono,
    fquad,
    lipschitz_approx,
    make_scenario,
    monotone_shift,
    truncate,
)
from .lattice import AdaptedField, BinomialLattice, TimeGrid, build_lattice  # noqa: E402
from .snell import brute_force_snell, explicit_quadratic, snell_envelope  # noqa: E402
from .solver import DiscreteSolution, SchemeOptions, residuals, solve_rbsde  # noqa: E402
