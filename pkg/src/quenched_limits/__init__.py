"""quenched-limits - quenched spectral method and limit theorems for random interval maps."""

__version__ = "0.1.0"

from .bv_calculus import GridFunction, check_variation_axioms, norms
from .config import ExperimentPlan, parse_config, serialize_plan
from .limit_theorems import (
    aperiodicity_scan,
    birkhoff_samples,
    clt_experiment,
    lclt_experiment,
    lclt_periodic_experiment,
    ldp_experiment,
    legendre_rate,
)
from .observables import Observable, cosine, indicator
from .rds_model import BernoulliShift, IrrationalRotation, MapFamily, doubling, tripling, validate_family
from .runner import RunSummary, run
from .spectral import (
    center_observable,
    decay_rate,
    dual_functional,
    equivariant_density,
    lambda_curve,
    lyapunov_exponent,
    variance,
)
from .transfer_op import build_ulam
