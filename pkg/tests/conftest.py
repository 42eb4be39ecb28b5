import sys
from pathlib import Path

import pytest

# make the oracle helper importable from any test module
sys.path.insert(0, str(Path(__file__).parent))

from advzoom.env import MeanFunction, StochasticEnv

GOLD = 0.6180339887498949


def tent_mean(peak=0.8, baseline=0.0, target=GOLD):
    return MeanFunction(
        "distance_to_target",
        {"target": target, "peak": peak, "baseline": baseline},
    )


@pytest.fixture
def tent_env():
    def make(seed=0, noise="bernoulli", **kw):
        return StochasticEnv(tent_mean(**kw), noise=noise, seed=seed)

    return make
