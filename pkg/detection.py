"""
Linear multiuser detection
- MF and MMSE receive vectors built from the channel estimates
- Exact instantaneous SINR with its denominator breakdown
- Monte Carlo ergodic rates, symbol-level sanity check and SINR sample export
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from channel import SeedLike, complex_normal, make_rng
from exceptions import (
    DimensionMismatchError,
    ExportError,
    InvalidSizeError,
    NonpositiveDenominatorError,
    SingularMatrixError,
)

logger = logging.getLogger(__name__)

SINR_COLUMNS = ['trial', 'user', 'class', 'detector', 'gamma_linear', 'rate_bits']


# ============================================
# DOMAIN TYPES
# ============================================
@dataclass(frozen=True)
class ReceiverSpec:
    """Detector per class position, user -> class map and noise power"""
    detectors: Tuple[str, ...]
    user_classes: Tuple[int, ...]
    noise_power: float
    mmse_scope: str = 'class'

    def __post_init__(self):
        if self.noise_power <= 0:
            raise InvalidSizeError(f"noise power must be > 0, got {self.noise_power}")
        if any(d not in ('MF', 'MMSE') for d in self.detectors):
            raise InvalidSizeError(f"unknown detector in {self.detectors}")
        if self.mmse_scope not in ('class', 'all'):
            raise InvalidSizeError(f"unknown MMSE scope {self.mmse_scope}")

    def detector(self, user: int) -> str:
        return self.detectors[self.user_classes[user]]

    def class_members(self, position: int) -> List[int]:
        return [k for k, c in enumerate(self.user_classes) if c == position]


@dataclass(frozen=True)
class SinrSample:
    user: int
    trial: int
    gamma: float
    noise: float
    self_error: float
    interference: float
    class_position: int = 0
    detector: str = 'MF'

    @property
    def rate_bits(self) -> float:
        return math.log2(1.0 + self.gamma)


@dataclass(frozen=True)
class SymbolLevelResult:
    user: int
    empirical: float
    analytic: float

    @property
    def relative_error(self) -> float:
        if self.analytic == 0:
            return abs(self.empirical)
        return abs(self.empirical - self.analytic) / self.analytic


# ============================================
# SIGNATURES
# ============================================
def effective_signatures(codes: np.ndarray, channels: np.ndarray, amplitudes: np.ndarray,
                         antennas: int) -> np.ndarray:
    """Rows sqrt(g_j P_c) C_j H_j for every user, shape K x NM"""
    codes = np.atleast_2d(codes)
    if channels.shape != (codes.shape[0], codes.shape[1] * antennas):
        raise DimensionMismatchError(
            f"channels {channels.shape} do not match {codes.shape[0]} codes of length "
            f"{codes.shape[1]} with M={antennas}"
        )
    return np.asarray(amplitudes)[:, None] * np.repeat(codes, antennas, axis=1) * channels


# ============================================
# RECEIVERS
# ============================================
def _mmse_factor(b_hat: np.ndarray, members: Sequence[int], noise_power: float):
    x = b_hat[list(members)]
    covariance = x.T @ x.conj() + noise_power * np.eye(b_hat.shape[1])
    try:
        return cho_factor(covariance, lower=True, check_finite=False)
    except LinAlgError as e:
        raise SingularMatrixError(f"MMSE covariance is not positive definite: {e}") from e


def receiver_vectors(spec: ReceiverSpec, b_hat: np.ndarray) -> np.ndarray:
    """All receive vectors of one trial, rows r_k.

    MMSE classes factor their covariance once and solve for every class member.
    """
    receivers = b_hat.copy()
    all_users = list(range(b_hat.shape[0]))
    for position, detector in enumerate(spec.detectors):
        if detector != 'MMSE':
            continue
        members = spec.class_members(position)
        if not members:
            continue
        scope = all_users if spec.mmse_scope == 'all' else members
        factor = _mmse_factor(b_hat, scope, spec.noise_power)
        receivers[members] = cho_solve(factor, b_hat[members].T, check_finite=False).T
    return receivers


def receiver_vector(user: int, spec: ReceiverSpec, b_hat: np.ndarray) -> np.ndarray:
    if spec.detector(user) == 'MF':
        return b_hat[user].copy()
    position = spec.user_classes[user]
    scope = range(b_hat.shape[0]) if spec.mmse_scope == 'all' else spec.class_members(position)
    factor = _mmse_factor(b_hat, list(scope), spec.noise_power)
    return cho_solve(factor, b_hat[user], check_finite=False)


# ============================================
# SINR
# ============================================
def sinr_terms(receivers: np.ndarray, b_true: np.ndarray, b_hat: np.ndarray,
               noise_power: float) -> Dict[str, np.ndarray]:
    """Numerator and denominator terms of the exact SINR for every user.

    The denominator keeps the full double sum including j = k and subtracts the
    own true-channel term, so `interference` is the j != k part.
    """
    gram = receivers.conj() @ b_true.T
    own_true = np.abs(np.diag(gram)) ** 2
    signal = np.abs(np.sum(receivers.conj() * b_hat, axis=1)) ** 2
    self_error = np.abs(np.sum(receivers.conj() * (b_true - b_hat), axis=1)) ** 2
    noise = noise_power * np.sum(np.abs(receivers) ** 2, axis=1)
    total = np.sum(np.abs(gram) ** 2, axis=1)

    denominator = noise + self_error - own_true + total
    interference = total - own_true
    return {
        'signal': signal,
        'noise': noise,
        'self_error': self_error,
        'interference': np.clip(interference, 0.0, None),
        'denominator': denominator,
    }


def instantaneous_sinrs(receivers: np.ndarray, b_true: np.ndarray, b_hat: np.ndarray,
                        noise_power: float, trial: int = 0,
                        spec: Optional[ReceiverSpec] = None) -> List[SinrSample]:
    terms = sinr_terms(receivers, b_true, b_hat, noise_power)
    bad = np.flatnonzero(terms['denominator'] <= 0)
    if bad.size:
        raise NonpositiveDenominatorError(f"SINR denominator <= 0 for users {bad.tolist()}")

    gammas = terms['signal'] / terms['denominator']
    samples = []
    for k in range(receivers.shape[0]):
        samples.append(SinrSample(
            user=k, trial=trial, gamma=float(gammas[k]),
            noise=float(terms['noise'][k]),
            self_error=float(terms['self_error'][k]),
            interference=float(terms['interference'][k]),
            class_position=spec.user_classes[k] if spec else 0,
            detector=spec.detector(k) if spec else 'MF',
        ))
    return samples


def instantaneous_sinr(user: int, r_k: np.ndarray, b_true: np.ndarray, b_hat: np.ndarray,
                       noise_power: float, trial: int = 0) -> SinrSample:
    gram = b_true @ r_k.conj()
    own_true = abs(gram[user]) ** 2
    total = float(np.sum(np.abs(gram) ** 2))
    signal = abs(np.vdot(r_k, b_hat[user])) ** 2
    self_error = abs(np.vdot(r_k, b_true[user] - b_hat[user])) ** 2
    noise = noise_power * float(np.vdot(r_k, r_k).real)

    denominator = noise + self_error - own_true + total
    if denominator <= 0:
        raise NonpositiveDenominatorError(f"SINR denominator {denominator:.3e} <= 0 for user {user}")
    return SinrSample(user=user, trial=trial, gamma=float(signal / denominator), noise=noise,
                      self_error=float(self_error), interference=max(total - own_true, 0.0))


# ============================================
# ERGODIC RATES
# ============================================
def ergodic_rate(gammas: Iterable[float]) -> Tuple[float, float]:
    """Sample mean of log2(1 + gamma) and its standard error"""
    rates = np.log2(1.0 + np.asarray(list(gammas), dtype=float))
    if rates.size == 0:
        raise InvalidSizeError("at least one trial is required")
    if rates.size == 1:
        return float(rates[0]), 0.0
    return float(rates.mean()), float(rates.std(ddof=1) / np.sqrt(rates.size))


def ergodic_rate_mc(user: int, trials: int, seed: int,
                    draw_trial: Callable[[int, int], Sequence[float]]) -> Tuple[float, float]:
    """`draw_trial(trial, seed)` returns the SINR of every user for that trial"""
    if trials < 1:
        raise InvalidSizeError(f"trials must be >= 1, got {trials}")
    gammas = [draw_trial(t, seed)[user] for t in range(trials)]
    return ergodic_rate(gammas)


# ============================================
# SYMBOL-LEVEL CHECK
# ============================================
def symbol_level_check(receivers: np.ndarray, b_true: np.ndarray, b_hat: np.ndarray,
                       noise_power: float, n_symbols: int = 10000, seed: SeedLike = None,
                       inject_noise: bool = True) -> List[SymbolLevelResult]:
    """Transmit unit-variance symbols through y = sum_j b_j s_j + n and measure the SINR
    seen after r_k against the analytic value on the same realization"""
    rng = make_rng(seed)
    n_users, dim = b_true.shape
    symbols = complex_normal(rng, (n_users, n_symbols))
    received = b_true.T @ symbols
    if inject_noise:
        received = received + np.sqrt(noise_power) * complex_normal(rng, (dim, n_symbols))

    outputs = receivers.conj() @ received
    desired = np.sum(receivers.conj() * b_hat, axis=1)[:, None] * symbols
    distortion = outputs - desired

    analytic_noise = noise_power if inject_noise else 0.0
    terms = sinr_terms(receivers, b_true, b_hat, analytic_noise)

    results = []
    for k in range(n_users):
        power = float(np.mean(np.abs(distortion[k]) ** 2))
        empirical = float(np.mean(np.abs(desired[k]) ** 2)) / power if power > 0 else math.inf
        denominator = terms['denominator'][k]
        analytic = float(terms['signal'][k] / denominator) if denominator > 0 else math.inf
        results.append(SymbolLevelResult(user=k, empirical=empirical, analytic=analytic))
    return results


# ============================================
# EXPORT
# ============================================
def sinr_frame(samples: Sequence[SinrSample]) -> pd.DataFrame:
    rows = [{
        'trial': s.trial,
        'user': s.user,
        'class': s.class_position + 1,
        'detector': s.detector,
        'gamma_linear': s.gamma,
        'rate_bits': s.rate_bits,
    } for s in sorted(samples, key=lambda s: (s.trial, s.user))]
    return pd.DataFrame(rows, columns=SINR_COLUMNS)


def export_sinr_samples(samples: Sequence[SinrSample], path: str) -> str:
    if not samples:
        raise ExportError("no SINR samples to export")
    try:
        sinr_frame(samples).to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
    except OSError as e:
        logger.error(f"❌ Could not write {path}: {e}")
        raise ExportError(f"cannot write {path}: {e}") from e
    logger.info(f"💾 {len(samples)} SINR samples -> {path}")
    return path
