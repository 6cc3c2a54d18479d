import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fkgclt.smoothing import SmoothedDensity

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


def corpus_models(count=20, seed=2024):
    """Seeded mixtures covering few/many centers, skew and several bandwidths."""
    rng = np.random.default_rng(seed)
    out = []
    taus = (0.25, 0.5, 1.0, 2.0)
    for i in range(count):
        kind = i % 5
        n = int(rng.integers(1, 200))
        if kind == 0:
            c = rng.normal(size=n)
        elif kind == 1:
            c = rng.uniform(-3, 3, size=n)
        elif kind == 2:
            c = rng.choice([-1.0, 1.0], size=n)
        elif kind == 3:
            c = rng.exponential(size=n)
        else:
            c = np.round(rng.normal(scale=2, size=n))
        out.append(SmoothedDensity.from_values(c, taus[i % 4]))
    return out


@pytest.fixture(scope="session")
def corpus():
    return corpus_models()
