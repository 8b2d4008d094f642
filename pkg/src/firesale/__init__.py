"""Fire-sales contagion on overlapping portfolios.

Finite-system cascades, limiting fixed points, resilience criteria and
capital requirements.
"""
from .cascade import run_auxiliary, run_fire_sales, smallest_fixed_point_finite, verify_coupling
from .errors import (DomainError, FiresaleError, InputError, IntegrationFailure, LadderNotConverged,
                     PreconditionViolated)
from .fixpoint import chi_star, epsilon_reduced_system, eval_f, eval_g, smallest_joint_root
from .kernels import BACKEND
from .limit import Latent, LimitSystem
from .model import (CapitalRule, FiniteSystem, ImpactFunction, PriceImpact, SalesFunction, ShockSpec,
                    cap_sales, eval_impact, eval_sales, left_continuous_modification)

__version__ = "0.1.0"
