"""Surrogate contact-rich tasks, scripted demonstrators and metrics."""

from .common import EpisodeRecord, compute_pcr, compute_sr
from .demos import CalibrationError, env_from_config, generate_demos, make_env, run_script
from .insertion import InsertionEnv, InsertionParams, InsertionScript
from .peel import PeelEnv, PeelParams, PeelScript

__all__ = [
    "CalibrationError", "EpisodeRecord", "InsertionEnv", "InsertionParams", "InsertionScript", "PeelEnv",
    "PeelParams", "PeelScript", "compute_pcr", "compute_sr", "env_from_config", "generate_demos",
    "make_env", "run_script",
]
