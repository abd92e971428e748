"""Primal-dual natural actor-critic with burn-in for unichain average-reward CMDPs."""
from .errors import (ConfigurationError, DegenerateFit, GenerationFailed, Infeasible,
                     MultipleRecurrentClasses, NonFiniteUpdate, SingularSystemError,
                     UnknownEnvironment)
from .model import (CmdpModel, FeatureMap, SoftmaxPolicy, action_distribution, induced_kernel,
                    load_model, save_model, score, validate_unichain)

__version__ = "0.1.0"
