import hypothesis
import numpy as np
import pytest

from pricelab.market_model import ElasticityCoefficients, FeatureMatrix, MarketState
from pricelab.regimes import lift_nonnegative, random_orthogonal

hypothesis.settings.register_profile("ci", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("ci")


def random_instance(rng, n=None, d=None, sym=True, zero_own=None):
    """A random market satisfying nonnegative elasticities and similarities."""
    n = n or int(rng.integers(2, 9))
    d = d or int(rng.integers(1, 5))
    e = (rng.random((n, d)) < 0.4).astype(float)
    e[np.arange(n), rng.integers(d, size=n)] = 1.0
    q = random_orthogonal(d, rng)
    v = lift_nonnegative((q * rng.uniform(0.2, 2.0, d)) @ q.T)
    v = (v + v.T) / 2
    own = rng.uniform(0.0, 0.5, n)
    if zero_own is not None:
        own[zero_own] = 0.0
    cross = rng.uniform(0.0, 0.5, (n, n)) * (rng.random((n, n)) < 0.6)
    if sym:
        cross = (cross + cross.T) / 2
    np.fill_diagonal(cross, 0.0)
    z = rng.uniform(0.0, 100.0, d)
    return FeatureMatrix(e), MarketState(z=z, v=v, alpha=ElasticityCoefficients(own, cross))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
