"""Actor-critic learning for linear-quadratic mean-field games."""
from .errors import *  # noqa: F401,F403
from .model import LinearGaussianPolicy, MfgModel, load_model, make_rng, scalar_reference_model

__version__ = "0.1.0"
