"""Adaptive zooming for adversarial Lipschitz bandits: library and simulator."""

__version__ = "0.1.0"

from . import algo, baselines, env, evaluate, metric, rng, trace  # noqa: F401
