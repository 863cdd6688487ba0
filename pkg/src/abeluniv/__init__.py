"""Abel universal functions: staged polynomial constructions, density tools and verification."""
from .poly import Poly, Series
from .enumerations import DEFAULT_BUDGET, EpsilonBudget, pair, unpair, rational_polynomial
from .regions import Region, exhaustion_K
from .engine import ApproximationTarget, BudgetExceeded, FitConstraints, approximate
from .constructions import StagedFunction
from .density import DensitySet, natural_density, uniform_density
from .verify import NeighborhoodSpec, TailUnreliable, VerificationReport, replay_stage_log, visit_set

__version__ = "0.1.0"
