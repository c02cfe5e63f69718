"""
Link-level Monte Carlo engine
- One LinkSimulator per (configuration, scheme codebook)
- Second-order statistics built once per user and shared across schemes and K
- Trials drawn concurrently from per-(trial, user) seeded streams
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from channel import SecondOrderStats, UserLinkModel, build_second_order_stats, build_user_models, draw_channel, trial_rng
from codebook import Codebook, build_resource_map
from detection import ReceiverSpec, SinrSample, effective_signatures, ergodic_rate, instantaneous_sinrs, receiver_vectors
from detequiv import DetEquivInput
from estimation import build_pilot_pattern, estimate_channel, estimation_snr
from exceptions import DimensionMismatchError
from system_config import SystemConfig

logger = logging.getLogger(__name__)

CHANNEL_STREAM = 0
PILOT_NOISE_STREAM = 1

StatsKey = Tuple[int, int, int]


@dataclass
class TrialBatch:
    """SINRs of a Monte Carlo run, trials x users"""
    gammas: np.ndarray
    user_classes: List[int]
    samples: List[SinrSample] = field(default_factory=list)

    @property
    def trials(self) -> int:
        return self.gammas.shape[0]

    def user_rate(self, user: int) -> Tuple[float, float]:
        return ergodic_rate(self.gammas[:, user])

    def user_rates(self) -> List[Tuple[float, float]]:
        return [self.user_rate(k) for k in range(self.gammas.shape[1])]

    def mean_sinr(self, user: int) -> float:
        return float(np.mean(self.gammas[:, user]))


class LinkSimulator:
    """Draws channels, estimates, detects and evaluates the exact SINR per trial"""

    def __init__(self, config: SystemConfig, codebook: Codebook, seed: int = 1,
                 workers: Optional[int] = None,
                 stats_cache: Optional[Dict[StatsKey, SecondOrderStats]] = None):
        if codebook.n_users != config.n_users:
            raise DimensionMismatchError(f"codebook has {codebook.n_users} users, config {config.n_users}")
        if codebook.spreading_length != config.spreading_length:
            raise DimensionMismatchError(
                f"codebook length {codebook.spreading_length} != N={config.spreading_length}"
            )

        self.config = config
        self.codebook = codebook
        self.seed = seed
        self.workers = workers
        self.stats_cache = stats_cache if stats_cache is not None else {}

        self.resource_map = build_resource_map(config.geometry, config.spreading_length)
        self.pilots = build_pilot_pattern(config)
        self.models: List[UserLinkModel] = build_user_models(config)
        self.user_classes = config.user_classes()

        powers = np.array([config.classes[c].power_w for c in self.user_classes])
        gains = np.array([m.gain for m in self.models])
        self.powers = powers
        self.gains = gains
        self.amplitudes = np.sqrt(powers * gains)

        self.receiver = ReceiverSpec(
            detectors=tuple(c.detector for c in config.classes),
            user_classes=tuple(self.user_classes),
            noise_power=config.noise_power,
            mmse_scope=config.detection.mmse_scope,
        )

        logger.debug(f"LinkSimulator: {codebook.scheme}, M={config.antennas}, K={config.n_users}, "
                     f"N={config.spreading_length}")

    # ==========================================
    # SECOND-ORDER STATISTICS
    # ==========================================
    def stats(self, user: int) -> SecondOrderStats:
        """Cached per (user, class, M); pilots and the link model depend only on these"""
        key = (user, self.user_classes[user], self.config.antennas)
        cached = self.stats_cache.get(key)
        if cached is None:
            model = self.models[user]
            gamma_ce = estimation_snr(model.gain, self.powers[user], self.config.noise_power)
            cached = build_second_order_stats(
                model, self.resource_map, self.pilots.coords(user), gamma_ce,
                self.config.numerology,
                perfect=self.config.estimation.perfect_csi,
                reading=self.config.estimation.pilot_covariance,
            )
            self.stats_cache[key] = cached
        return cached

    def all_stats(self) -> List[SecondOrderStats]:
        return [self.stats(k) for k in range(self.config.n_users)]

    # ==========================================
    # TRIALS
    # ==========================================
    def draw_trial_channels(self, trial: int) -> Tuple[np.ndarray, np.ndarray]:
        """(H, H_hat) stacked K x NM for one trial"""
        n_users = self.config.n_users
        dim = self.config.spreading_length * self.config.antennas
        h = np.zeros((n_users, dim), dtype=complex)
        h_hat = np.zeros((n_users, dim), dtype=complex)

        for k, model in enumerate(self.models):
            stats = self.stats(k)
            realization = draw_channel(
                model, self.resource_map, self.pilots.coords(k), self.config.numerology,
                trial_rng(self.seed, trial, k, CHANNEL_STREAM),
            )
            estimate = estimate_channel(
                realization, stats, trial_rng(self.seed, trial, k, PILOT_NOISE_STREAM),
                perfect=self.config.estimation.perfect_csi,
            )
            h[k] = realization.data
            h_hat[k] = estimate.h_hat
        return h, h_hat

    def signatures(self, h: np.ndarray) -> np.ndarray:
        return effective_signatures(self.codebook.codes, h, self.amplitudes, self.config.antennas)

    def run_trial(self, trial: int) -> List[SinrSample]:
        h, h_hat = self.draw_trial_channels(trial)
        b_true = self.signatures(h)
        b_hat = self.signatures(h_hat)
        receivers = receiver_vectors(self.receiver, b_hat)
        return instantaneous_sinrs(receivers, b_true, b_hat, self.config.noise_power,
                                   trial=trial, spec=self.receiver)

    def run(self, trials: int, progress: bool = False, keep_samples: bool = False) -> TrialBatch:
        """Trials are merged by index, so the result does not depend on the worker count"""
        self.all_stats()
        indices = range(trials)

        if self.workers and self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                results = executor.map(self.run_trial, indices)
                if progress:
                    results = tqdm(results, total=trials, desc=f"{self.codebook.scheme} M={self.config.antennas}",
                                   leave=False)
                outcomes = list(results)
        else:
            iterator = tqdm(indices, desc=f"{self.codebook.scheme} M={self.config.antennas}",
                            leave=False) if progress else indices
            outcomes = [self.run_trial(t) for t in iterator]

        gammas = np.array([[s.gamma for s in samples] for samples in outcomes], dtype=float)
        gammas = gammas.reshape(trials, self.config.n_users)
        samples = [s for trial_samples in outcomes for s in trial_samples] if keep_samples else []
        return TrialBatch(gammas=gammas, user_classes=self.user_classes, samples=samples)

    # ==========================================
    # DETERMINISTIC-EQUIVALENT INPUT
    # ==========================================
    def detequiv_input(self) -> DetEquivInput:
        stats = self.all_stats()
        w = None
        if self.codebook.classes:
            w = [self.codebook.w(k) for k in range(self.codebook.n_users)]
        return DetEquivInput(
            antennas=self.config.antennas,
            noise_power=self.config.noise_power,
            codes=self.codebook.codes,
            user_classes=self.user_classes,
            detectors=[c.detector for c in self.config.classes],
            powers=self.powers,
            gains=self.gains,
            phi=[s.phi for s in stats],
            r=[s.r for s in stats],
            phi_check=[s.phi_check for s in stats],
            r_check=[s.r_check for s in stats],
            w=w,
            class_dims=[c.n_c for c in self.config.classes],
            spatial_model=self.config.channel.spatial_model,
        )
