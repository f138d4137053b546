"""Joint user association and resource allocation for DPE maximization.

Submodules: ``model`` (costs and DPE), ``scenario`` (topology and config),
``nlp`` and ``sdp`` (solvers), ``fp`` (resource step), ``assoc``
(association step), ``algorithm`` (outer loop and baselines), ``oracle``
(independent verifiers) and ``cli``.
"""

from .algorithm import BASELINES, DaurResult, initialize, run_baseline, run_daur
from .model import Allocation, ScenarioParams, dpe_objective, evaluate_costs
from .scenario import TopologySpec, generate_scenario

__all__ = [
    "Allocation", "BASELINES", "DaurResult", "ScenarioParams", "TopologySpec",
    "dpe_objective", "evaluate_costs", "generate_scenario", "initialize",
    "run_baseline", "run_daur",
]
__version__ = "0.1.0"
