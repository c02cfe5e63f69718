"""Shared fixtures: small scenarios that keep NM in the tens"""
import numpy as np
import pytest

from system_config import DEFAULT_CONFIG, SystemConfig, deep_merge

SMALL_CLASSES = [
    {'n_c': 1, 'k_c': 1, 'power_dbm': 23.0, 'snr_db': 15.0, 'target_rate': 2.0,
     'detector': 'MMSE', 'doppler_hz': 70.0},
    {'n_c': 2, 'k_c': 4, 'power_dbm': 17.0, 'snr_db': 1.5, 'target_rate': 0.5,
     'detector': 'MF', 'doppler_hz': 70.0},
]


def small_config_dict(antennas: int = 4, **sections) -> dict:
    overrides = {
        'system': {'antennas': antennas},
        'codebook': {'classes': SMALL_CLASSES},
        'harness': {'trials': 3, 'm_sweep': [4, 8], 'workers': 1, 'use_cache': False},
    }
    return deep_merge(deep_merge(DEFAULT_CONFIG, overrides), sections)


@pytest.fixture
def config_factory():
    """SystemConfig from the small scenario plus nested overrides"""
    def make(antennas: int = 4, **sections) -> SystemConfig:
        return SystemConfig.from_dict(small_config_dict(antennas, **sections))
    return make


@pytest.fixture
def small_config(config_factory):
    return config_factory()


@pytest.fixture
def flat_config(config_factory):
    """Single symbol, single path, i.i.d. antennas"""
    classes = [dict(c, doppler_hz=0.0) for c in SMALL_CLASSES]
    return config_factory(
        codebook={'classes': classes},
        channel={'profile': 'flat', 'spatial_model': 'identity'},
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_psd(rng: np.random.Generator, dim: int, rank: int = None) -> np.ndarray:
    rank = rank or dim
    a = (rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))) / np.sqrt(2 * rank)
    return a @ a.conj().T
