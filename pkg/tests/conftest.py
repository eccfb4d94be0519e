import numpy as np
import pytest

from dpm_cvqkd.channel import ChannelParams, entangling_cloner_covariance
from dpm_cvqkd.gaussian_info import TwoModeCovariance


@pytest.fixture()
def default_params() -> ChannelParams:
    # V=20, beta=0.95, eps=0.001, alpha=0.2 dB/km
    return ChannelParams(modulation_variance=20.0, beta=0.95, excess_noise=0.001, attenuation_db_per_km=0.2)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture()
def random_covariances(rng):
    def _random_covariances(count: int = 1000) -> list[TwoModeCovariance]:
        result = []
        for _ in range(count):
            t1, t2 = rng.uniform(0.01, 1.0, 2)
            eps = rng.uniform(0.0, 0.5)
            v = rng.uniform(1.01, 100.0)
            result.append(entangling_cloner_covariance(float(t1), float(t2), float(eps), float(v)))
        return result

    return _random_covariances
