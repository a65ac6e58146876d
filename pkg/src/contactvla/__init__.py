"""Contact-aware action generation: flow matching with force/tactile expert fusion,
an RL in-hand rotation copilot, and a hierarchical executor over surrogate tasks."""

from .config import VARIANTS, AblationConfig, RunConfig, from_dict, load_config

__version__ = "0.1.0"

__all__ = ["VARIANTS", "AblationConfig", "RunConfig", "from_dict", "load_config", "__version__"]
