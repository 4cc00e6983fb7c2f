"""Skill-sequencing transfer RL on deterministic toy tasks.

A high-level scheduler composes frozen pretrained skills over variable
durations to collect data; a new skill is distilled off-policy from the same
replay. Baselines (from-scratch EM policy optimisation, mixture reload with
freeze/fine-tune, KL-regularisation to a uniform skill mixture, and
teacher-mixture imitation) share the numerics / replay / environment stack.
"""

from .backend import backend_name

__all__ = ["backend_name"]
__version__ = "0.1.0"
