"""
System configuration - MOMA link-level simulator
Defaults, YAML scenario loading, .env overrides and the typed views used by
every other module.
"""
import copy
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml
from dotenv import load_dotenv

from codebook import ServiceClass
from exceptions import ConfigError

load_dotenv()
logger = logging.getLogger(__name__)

# ============================================
# DEFAULTS (documented in config/moma_default.yaml)
# ============================================
DEFAULT_CONFIG: Dict[str, Any] = {
    'system': {
        'antennas': 64,
        'noise_psd_dbm_hz': -174.0,
        'numerology': {
            'n_fft': 1024,
            'n_cp': 72,
            'bandwidth_hz': 10e6,
        },
        'rb': {
            'n_subcarriers': 12,
            'n_symbols': 14,
            'adjacency': 'time',          # time (TTI bundling) | frequency
            'data_mapping': 'per-rb',     # per-rb | intra-rb
            'data_symbol': 3,
            'data_subcarrier': 0,
        },
    },
    'codebook': {
        'base_kind': 'dft',               # dft | walsh-hadamard
        'w_method': 'unit-modulus-random',  # unit-modulus-random | binary-pn
        'seed': 2017,
        'classes': [
            {'n_c': 3, 'k_c': 6, 'power_dbm': 23.0, 'snr_db': 15.0,
             'target_rate': 2.0, 'detector': 'MMSE', 'doppler_hz': 70.0,
             'gain_spread_db': 0.0},
            {'n_c': 3, 'k_c': 18, 'power_dbm': 17.0, 'snr_db': 1.5,
             'target_rate': 0.5, 'detector': 'MF', 'doppler_hz': 70.0,
             'gain_spread_db': 0.0},
        ],
    },
    'channel': {
        'profile': 'ETU',                 # ETU | flat | custom
        'taps': None,                     # {'delays_s': [...], 'powers_db': [...]} for custom
        'spatial_model': 'physical',      # physical | identity
        'pm_ratio': 0.5,
        'element_spacing': 0.5,
        'seed': 7,
    },
    'estimation': {
        'perfect_csi': False,
        'pilot_covariance': 'true',       # true | literal
    },
    'detection': {
        'mmse_scope': 'class',            # class | all
    },
    'detequiv': {
        'tolerance': 1e-12,
        'max_iterations': 10000,
        'functional': 'scaled',           # scaled | literal
    },
    'harness': {
        'schemes': ['MOMA', 'eMTC-random-spreading', 'eMTC-repetition', 'FDMA'],
        'trials': 100,
        'm_sweep': [16, 32, 64],
        'seed': 1,
        'workers': None,
        'fdma_guard_fraction': 0.1,
        'use_cache': True,
        'db_url': 'sqlite:///moma_results.db',
        'capacity': {
            'antennas': 64,
            'k1': 3,
            'r2_grid': [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
            'k2_ceiling': 32,
        },
    },
}

ENV_OVERRIDES: Dict[str, Tuple[Tuple[str, ...], Any]] = {
    'MOMA_SEED': (('harness', 'seed'), int),
    'MOMA_TRIALS': (('harness', 'trials'), int),
    'MOMA_WORKERS': (('harness', 'workers'), int),
    'MOMA_DB_URL': (('harness', 'db_url'), str),
    'MOMA_USE_CACHE': (('harness', 'use_cache'), lambda v: v.lower() in ('1', 'true', 'yes')),
}

ETU_DELAYS_S = [0.0, 50e-9, 120e-9, 200e-9, 230e-9, 500e-9, 1600e-9, 2300e-9, 5000e-9]
ETU_POWERS_DB = [-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, -3.0, -5.0, -7.0]


def db_to_linear(value_db: float) -> float:
    return float(10.0 ** (value_db / 10.0))


def dbm_to_watts(value_dbm: float) -> float:
    return float(10.0 ** ((value_dbm - 30.0) / 10.0))


def pilot_reading(value: Any) -> str:
    """YAML turns an unquoted `true` into a bool"""
    if value is True:
        return 'true'
    return str(value).lower()


def deep_merge(base: Dict, override: Dict) -> Dict:
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """Defaults <- YAML file <- environment"""
    config = copy.deepcopy(DEFAULT_CONFIG)

    if path:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                user_config = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            logger.error(f"❌ Could not read config {path}: {e}")
            raise ConfigError(f"cannot load {path}: {e}") from e
        config = deep_merge(config, user_config)
        logger.info(f"✅ Config loaded: {path}")

    for env_name, (keys, cast) in ENV_OVERRIDES.items():
        raw = os.getenv(env_name)
        if raw is None or raw == '':
            continue
        section = config
        for key in keys[:-1]:
            section = section[key]
        section[keys[-1]] = cast(raw)
        logger.info(f"   {env_name} override: {keys[-1]}={section[keys[-1]]}")

    return config


# ============================================
# TYPED VIEWS
# ============================================
@dataclass(frozen=True)
class Numerology:
    n_fft: int = 1024
    n_cp: int = 72
    bandwidth_hz: float = 10e6

    @property
    def ts(self) -> float:
        return 1.0 / self.bandwidth_hz

    @property
    def symbol_duration(self) -> float:
        return (self.n_fft + self.n_cp) * self.ts

    @property
    def subcarrier_spacing(self) -> float:
        return 1.0 / (self.n_fft * self.ts)


@dataclass(frozen=True)
class RBGeometry:
    n_subcarriers: int = 12
    n_symbols: int = 14
    n_rbs: int = 6
    adjacency: str = 'time'
    data_mapping: str = 'per-rb'
    data_symbol: int = 3
    data_subcarrier: int = 0

    def to_global(self, rb: int, symbol: int, subcarrier: int) -> Tuple[int, int]:
        """(rb, symbol, subcarrier) -> (t, n)"""
        if self.adjacency == 'time':
            return rb * self.n_symbols + symbol, subcarrier
        return symbol, rb * self.n_subcarriers + subcarrier

    def contains(self, t: int, n: int) -> bool:
        if self.adjacency == 'time':
            return 0 <= t < self.n_rbs * self.n_symbols and 0 <= n < self.n_subcarriers
        return 0 <= t < self.n_symbols and 0 <= n < self.n_rbs * self.n_subcarriers


@dataclass(frozen=True)
class PathTaps:
    delays_s: Tuple[float, ...]
    powers: Tuple[float, ...]


@dataclass(frozen=True)
class ChannelSettings:
    profile: str = 'ETU'
    taps: Optional[PathTaps] = None
    spatial_model: str = 'physical'
    pm_ratio: float = 0.5
    element_spacing: float = 0.5
    seed: int = 7


@dataclass(frozen=True)
class EstimationSettings:
    perfect_csi: bool = False
    pilot_covariance: str = 'true'


@dataclass(frozen=True)
class DetectionSettings:
    mmse_scope: str = 'class'


@dataclass(frozen=True)
class DetEquivSettings:
    tolerance: float = 1e-12
    max_iterations: int = 10000
    functional: str = 'scaled'


@dataclass(frozen=True)
class SystemConfig:
    antennas: int
    classes: Tuple[ServiceClass, ...]
    numerology: Numerology = field(default_factory=Numerology)
    geometry: RBGeometry = field(default_factory=RBGeometry)
    noise_psd_dbm_hz: float = -174.0
    base_kind: str = 'dft'
    w_method: str = 'unit-modulus-random'
    codebook_seed: int = 2017
    channel: ChannelSettings = field(default_factory=ChannelSettings)
    estimation: EstimationSettings = field(default_factory=EstimationSettings)
    detection: DetectionSettings = field(default_factory=DetectionSettings)
    detequiv: DetEquivSettings = field(default_factory=DetEquivSettings)

    def __post_init__(self):
        if self.antennas < 1:
            raise ConfigError(f"antennas must be >= 1, got {self.antennas}")
        if not self.classes:
            raise ConfigError("at least one service class is required")
        rates = [c.target_rate for c in self.classes]
        if any(a <= b for a, b in zip(rates, rates[1:])):
            raise ConfigError(f"target rates must be strictly decreasing, got {rates}")
        if self.channel.spatial_model not in ('physical', 'identity'):
            raise ConfigError(f"unknown spatial model {self.channel.spatial_model}")
        if self.estimation.pilot_covariance not in ('true', 'literal'):
            raise ConfigError(f"unknown pilot covariance reading {self.estimation.pilot_covariance}")
        if self.detection.mmse_scope not in ('class', 'all'):
            raise ConfigError(f"unknown MMSE scope {self.detection.mmse_scope}")
        if self.detequiv.functional not in ('scaled', 'literal'):
            raise ConfigError(f"unknown det-equiv functional {self.detequiv.functional}")

    @property
    def spreading_length(self) -> int:
        return sum(c.n_c for c in self.classes)

    @property
    def n_users(self) -> int:
        return sum(c.k_c for c in self.classes)

    @property
    def noise_power(self) -> float:
        """Noise power per RE: PSD integrated over one subcarrier"""
        return dbm_to_watts(self.noise_psd_dbm_hz) * self.numerology.subcarrier_spacing

    def user_classes(self) -> List[int]:
        """0-based class position of every user, users ordered class by class"""
        return [pos for pos, c in enumerate(self.classes) for _ in range(c.k_c)]

    def class_users(self, position: int) -> List[int]:
        start = sum(c.k_c for c in self.classes[:position])
        return list(range(start, start + self.classes[position].k_c))

    def path_taps(self) -> PathTaps:
        if self.channel.taps is not None:
            taps = self.channel.taps
        elif self.channel.profile.upper() == 'ETU':
            taps = PathTaps(tuple(ETU_DELAYS_S), tuple(db_to_linear(p) for p in ETU_POWERS_DB))
        elif self.channel.profile.lower() == 'flat':
            taps = PathTaps((0.0,), (1.0,))
        else:
            raise ConfigError(f"profile {self.channel.profile} requires explicit taps")
        powers = np.asarray(taps.powers, dtype=float)
        return PathTaps(tuple(taps.delays_s), tuple(powers / powers.sum()))

    def with_antennas(self, antennas: int) -> 'SystemConfig':
        return replace(self, antennas=antennas)

    def with_class_users(self, position: int, k_c: int) -> 'SystemConfig':
        classes = list(self.classes)
        classes[position] = replace(classes[position], k_c=k_c)
        return replace(self, classes=tuple(classes))

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> 'SystemConfig':
        system = config['system']
        cb = config['codebook']
        ch = config['channel']

        classes = []
        for index, entry in enumerate(cb['classes'], 1):
            classes.append(ServiceClass(
                index=index,
                k_c=int(entry['k_c']),
                n_c=int(entry['n_c']),
                power_w=dbm_to_watts(float(entry['power_dbm'])),
                target_rate=float(entry['target_rate']),
                snr_db=float(entry.get('snr_db', 10.0)),
                detector=str(entry.get('detector', 'MF')).upper(),
                doppler_hz=float(entry.get('doppler_hz', 0.0)),
                gain_spread_db=float(entry.get('gain_spread_db', 0.0)),
            ))

        taps = None
        if ch.get('taps'):
            taps = PathTaps(
                tuple(float(d) for d in ch['taps']['delays_s']),
                tuple(db_to_linear(float(p)) for p in ch['taps']['powers_db']),
            )

        n_spread = sum(c.n_c for c in classes)
        return cls(
            antennas=int(system['antennas']),
            classes=tuple(classes),
            numerology=Numerology(**system['numerology']),
            geometry=RBGeometry(n_rbs=n_spread, **system['rb']),
            noise_psd_dbm_hz=float(system['noise_psd_dbm_hz']),
            base_kind=str(cb['base_kind']).lower(),
            w_method=str(cb['w_method']).lower(),
            codebook_seed=int(cb['seed']),
            channel=ChannelSettings(
                profile=str(ch['profile']),
                taps=taps,
                spatial_model=str(ch['spatial_model']).lower(),
                pm_ratio=float(ch['pm_ratio']),
                element_spacing=float(ch['element_spacing']),
                seed=int(ch['seed']),
            ),
            estimation=EstimationSettings(
                perfect_csi=bool(config['estimation']['perfect_csi']),
                pilot_covariance=pilot_reading(config['estimation']['pilot_covariance']),
            ),
            detection=DetectionSettings(**config['detection']),
            detequiv=DetEquivSettings(**config['detequiv']),
        )
