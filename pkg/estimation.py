"""
Pilot-based channel estimation
- Staggered comb pilot pattern, one pilot RE per user and RB
- Noisy pilot observations at the effective estimation SNR
- LMMSE interpolation of the pilot estimates onto the data REs
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from channel import ChannelRealization, SecondOrderStats, SeedLike, complex_normal, make_rng
from exceptions import CapacityExceededError, DimensionMismatchError, InvalidSizeError

logger = logging.getLogger(__name__)

Coordinate = Tuple[int, int]


@dataclass(frozen=True)
class PilotPattern:
    per_user: Tuple[Tuple[Coordinate, ...], ...]
    n_rbs: int

    @property
    def n_users(self) -> int:
        return len(self.per_user)

    @property
    def per_user_count(self) -> int:
        return len(self.per_user[0]) if self.per_user else 0

    @property
    def coordinates(self) -> Tuple[Coordinate, ...]:
        return tuple(c for user in self.per_user for c in user)

    @property
    def n_pilots(self) -> int:
        return len(self.coordinates)

    def coords(self, user: int) -> Tuple[Coordinate, ...]:
        return self.per_user[user]


@dataclass
class ChannelEstimate:
    user: int
    pilots_hat: np.ndarray
    h_hat: np.ndarray
    gamma_ce: float


def pilot_symbols(geometry) -> List[int]:
    """OFDM symbols of an RB that may carry pilots, in ascending order"""
    return [s for s in range(geometry.n_symbols) if s != geometry.data_symbol]


def pilot_coordinates(geometry, user: int) -> Tuple[Coordinate, ...]:
    """Pilot REs of one user; they depend only on the user index and the RB layout"""
    symbols = pilot_symbols(geometry)
    capacity = geometry.n_subcarriers * len(symbols)
    if user >= capacity:
        raise CapacityExceededError(
            f"user {user} needs a pilot RE but each RB hosts only {capacity} pilot REs"
        )
    symbol = symbols[user // geometry.n_subcarriers]
    return tuple(
        geometry.to_global(rb, symbol, (user + rb) % geometry.n_subcarriers)
        for rb in range(geometry.n_rbs)
    )


def build_pilot_pattern(config) -> PilotPattern:
    """N_k^p = N pilot REs per user (one per RB) on a frequency-staggered comb"""
    geometry = config.geometry
    n_users = config.n_users
    capacity = geometry.n_subcarriers * len(pilot_symbols(geometry))
    if n_users > capacity:
        raise CapacityExceededError(
            f"{n_users} users exceed the {capacity} pilot REs available per RB"
        )

    per_user = tuple(pilot_coordinates(geometry, k) for k in range(n_users))
    logger.debug(f"Pilot pattern: K={n_users}, N_p={n_users * geometry.n_rbs}")
    return PilotPattern(per_user=per_user, n_rbs=geometry.n_rbs)


def estimation_snr(gain: float, power_w: float, noise_power: float) -> float:
    """gamma_CE = g_k P_c / sigma^2"""
    return gain * power_w / noise_power


def observe_pilots(realization: ChannelRealization, gamma_ce: float,
                   seed: SeedLike = None, perfect: bool = False) -> np.ndarray:
    """H at every pilot RE plus independent CN(0, 1/gamma_CE) noise"""
    pilots = realization.pilots
    if perfect:
        return pilots.copy()
    if gamma_ce <= 0:
        raise InvalidSizeError("gamma_CE must be > 0 without the perfect-estimation flag")
    rng = make_rng(seed)
    return pilots + complex_normal(rng, pilots.shape) / np.sqrt(gamma_ce)


def lmmse_interpolate(pilots_hat: np.ndarray, r_np: np.ndarray, q_p: np.ndarray,
                      interpolator: Optional[np.ndarray] = None) -> np.ndarray:
    """H_hat = R^NP Q^P H_hat^p; a leading axis of `pilots_hat` is treated as a batch"""
    if r_np.shape[1] != q_p.shape[0] or pilots_hat.shape[-1] != q_p.shape[1]:
        raise DimensionMismatchError(
            f"R^NP {r_np.shape}, Q^P {q_p.shape} and pilots {pilots_hat.shape} do not line up"
        )
    weights = interpolator if interpolator is not None else r_np @ q_p
    if pilots_hat.ndim == 1:
        return weights @ pilots_hat
    return pilots_hat @ weights.T


def estimate_channel(realization: ChannelRealization, stats: SecondOrderStats,
                     seed: SeedLike = None, perfect: bool = False) -> ChannelEstimate:
    pilots_hat = observe_pilots(realization, stats.gamma_ce, seed, perfect)
    h_hat = lmmse_interpolate(pilots_hat, stats.r_np, stats.q_p, stats.interpolator)
    return ChannelEstimate(user=realization.user, pilots_hat=pilots_hat,
                           h_hat=h_hat, gamma_ce=stats.gamma_ce)
