"""Characteristic flows of v.grad_x f + F.grad_v f transport and numerical checks
of the associated dispersion, Jacobian, resolvent and equiintegrability bounds."""

from .config import RunConfig
from .dispersion import (
    det_perturbation_check,
    injectivity_check,
    injectivity_time,
    jacobian_bounds,
    mixing_time_lower_bound,
    norm_l1_linf,
    norm_linf_l1,
    verify_dispersion,
)
from .equiint import equi_report, slab_fiber_experiment, modulus_v, modulus_xv, translation_modulus
from .errors import ConfigError, EscapeError, KinetraError
from .fields import ForceField, check_divergence_free_v, estimate_lipschitz, make_builtin
from .flow import (
    IntegratorConfig,
    PhasePoint,
    closed_form_flow,
    flow_points,
    group_defect,
    integrate_flow,
    integrate_variational,
    monodromy,
    volume_defect,
)
from .grid import InitialData, PhaseGrid, PhaseGridFunction, Rectangle, TestFunction, XGrid, XGridFunction
from .transport import (
    duality_check,
    resolvent,
    sobolev_seminorm,
    solve_cauchy,
    transport_derivative,
    velocity_moment,
)

__version__ = "0.1.0"
