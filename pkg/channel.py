"""
Correlated multipath MIMO-OFDM channel
Doppler/delay/space separable model, channel draws on data and pilot REs and the
second-order statistics (R_k, R_k^NP, Q_k^P, Phi_k and their flat reductions)
used by estimation, detection and the deterministic equivalents.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh, pinvh
from scipy.special import j0

from exceptions import (
    CovarianceNotPSDError,
    DimensionMismatchError,
    InvalidSizeError,
    SingularMatrixError,
)

logger = logging.getLogger(__name__)

Coordinate = Tuple[int, int]
SeedLike = Union[None, int, Sequence[int], np.random.Generator]

PSD_CLIP = 1e-10


# ============================================
# DOMAIN TYPES
# ============================================
@dataclass(frozen=True)
class PathProfile:
    delays_s: Tuple[float, ...]
    variances: Tuple[float, ...]

    def __post_init__(self):
        delays = np.asarray(self.delays_s, dtype=float)
        variances = np.asarray(self.variances, dtype=float)
        if delays.shape != variances.shape or delays.size == 0:
            raise InvalidSizeError("path delays and variances must be non-empty and aligned")
        if abs(variances.sum() - 1.0) > 1e-12:
            raise InvalidSizeError(f"path variances sum to {variances.sum()}, expected 1")
        if np.any(delays < 0) or np.any(np.diff(delays) <= 0):
            raise InvalidSizeError("path delays must be non-negative and strictly increasing")

    @property
    def n_paths(self) -> int:
        return len(self.delays_s)

    def check_cyclic_prefix(self, numerology) -> None:
        if max(self.delays_s) > numerology.n_cp * numerology.ts + 1e-15:
            raise InvalidSizeError(
                f"max delay {max(self.delays_s):.2e}s exceeds the cyclic prefix "
                f"{numerology.n_cp * numerology.ts:.2e}s"
            )


@dataclass
class UserLinkModel:
    user: int
    class_position: int
    gain: float
    doppler_hz: float
    profile: PathProfile
    spatial: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.gain <= 0:
            raise InvalidSizeError(f"user {self.user}: large-scale gain must be > 0")
        if len(self.spatial) != self.profile.n_paths:
            raise DimensionMismatchError(f"user {self.user}: one spatial matrix per path required")

    @property
    def antennas(self) -> int:
        return self.spatial[0].shape[0]

    @cached_property
    def spatial_sqrt(self) -> Tuple[np.ndarray, ...]:
        return tuple(psd_sqrt(r) for r in self.spatial)

    @cached_property
    def spatial_stack(self) -> np.ndarray:
        return np.stack(self.spatial)


@dataclass
class ChannelRealization:
    """H_k over the data REs (NM) and over the user's pilot REs (N_k^p M); leading axis = draw"""
    user: int
    data: np.ndarray
    pilots: np.ndarray


@dataclass
class SecondOrderStats:
    user: int
    r: np.ndarray
    r_np: np.ndarray
    q_p: np.ndarray
    phi: np.ndarray
    r_check: np.ndarray
    r_np_check: np.ndarray
    phi_check: np.ndarray
    gamma_ce: float
    interpolator: Optional[np.ndarray] = field(default=None, repr=False)


# ============================================
# HELPERS
# ============================================
def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def trial_rng(master_seed: int, trial: int, user: int, stream: int = 0) -> np.random.Generator:
    """Independent stream per (trial, user); does not depend on scheduling order"""
    return np.random.default_rng([int(master_seed), int(trial), int(user), int(stream)])


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def hermitize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.conj().T)


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Hermitian square root; small negative eigenvalues are clipped to zero"""
    eigvals, eigvecs = eigh(hermitize(np.asarray(matrix, dtype=complex)))
    scale = max(float(np.max(np.abs(eigvals))), np.finfo(float).tiny)
    if eigvals.min() < -PSD_CLIP * scale:
        raise CovarianceNotPSDError(
            f"covariance has eigenvalue {eigvals.min():.3e} (max {scale:.3e})"
        )
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.conj().T


def hermitian_inverse(matrix: np.ndarray) -> np.ndarray:
    try:
        factor = cho_factor(hermitize(matrix), lower=True)
    except LinAlgError as e:
        raise SingularMatrixError(f"matrix is not Hermitian positive definite: {e}") from e
    return cho_solve(factor, np.eye(matrix.shape[0], dtype=complex))


# ============================================
# TIME / SPACE CORRELATION
# ============================================
def temporal_corr(f_d: float, dt, numerology) -> np.ndarray:
    """r^alpha(dt) = J0(2 pi f_D (N_FFT + N_CP) T_s dt)"""
    if f_d < 0:
        raise InvalidSizeError(f"Doppler must be >= 0, got {f_d}")
    return j0(2.0 * np.pi * f_d * numerology.symbol_duration * np.asarray(dt, dtype=float))


def ula_response(antennas: int, angles: np.ndarray, spacing: float = 0.5) -> np.ndarray:
    """M x P unit-norm steering vectors"""
    m = np.arange(antennas)[:, None]
    return np.exp(2j * np.pi * spacing * m * np.sin(np.asarray(angles))[None, :]) / np.sqrt(antennas)


def physical_angles(dims: int, offset: float) -> np.ndarray:
    """`dims` angles uniformly spaced on [-pi/2, pi/2), shifted by offset in [0, 1)"""
    return -np.pi / 2 + (np.arange(dims) + offset) * np.pi / dims


def build_spatial_corr(antennas: int, dims: int, angles: Optional[np.ndarray], variance: float,
                       spacing: float = 0.5, mode: str = 'physical') -> np.ndarray:
    if mode == 'identity':
        return variance * np.eye(antennas, dtype=complex)
    if dims <= 0 or dims > antennas:
        raise InvalidSizeError(f"invalid dims: P={dims} with M={antennas}")
    a = ula_response(antennas, angles, spacing)
    return hermitize((variance * antennas / dims) * (a @ a.conj().T))


def build_user_models(config, seed: Optional[int] = None) -> List[UserLinkModel]:
    """One link model per user; every user draws from its own seeded stream"""
    seed = config.channel.seed if seed is None else seed
    taps = config.path_taps()
    profile = PathProfile(tuple(taps.delays_s), tuple(taps.powers))
    profile.check_cyclic_prefix(config.numerology)

    antennas = config.antennas
    dims = max(1, int(round(config.channel.pm_ratio * antennas)))
    noise = config.noise_power

    models = []
    for user, position in enumerate(config.user_classes()):
        service = config.classes[position]
        rng = np.random.default_rng([int(seed), user])

        gain = 10.0 ** (service.snr_db / 10.0) * noise / service.power_w
        if service.gain_spread_db > 0:
            gain *= 10.0 ** (rng.normal(0.0, service.gain_spread_db) / 10.0)

        spatial = []
        for variance in profile.variances:
            offset = rng.uniform(0.0, 1.0)
            spatial.append(build_spatial_corr(
                antennas, dims, physical_angles(dims, offset), variance,
                config.channel.element_spacing, config.channel.spatial_model,
            ))

        models.append(UserLinkModel(
            user=user, class_position=position, gain=gain,
            doppler_hz=service.doppler_hz, profile=profile, spatial=tuple(spatial),
        ))
    return models


def spatial_norm_audit(config, antenna_counts: Sequence[int] = (16, 32, 64, 128)) -> List[Dict]:
    """Spectral norm and normalized trace of every R_{k,l} for user 0 across M"""
    rows = []
    for antennas in antenna_counts:
        model = build_user_models(config.with_antennas(antennas))[0]
        for path, r in enumerate(model.spatial):
            rows.append({
                'antennas': antennas,
                'path': path,
                'spectral_norm': float(np.linalg.norm(r, 2)),
                'normalized_trace': float(np.real(np.trace(r)) / antennas),
                'variance': float(model.profile.variances[path]),
            })
    return rows


# ============================================
# COVARIANCE BUILDERS
# ============================================
def block_covariance(model: UserLinkModel, coords_a: Sequence[Coordinate],
                     coords_b: Sequence[Coordinate], numerology) -> np.ndarray:
    """Block (i,j) = sum_l r(t_i - t_j) R_l exp(-2 pi i tau_l (n_i - n_j) / (N_FFT T_s))"""
    ta = np.array([c[0] for c in coords_a], dtype=float)
    na = np.array([c[1] for c in coords_a], dtype=float)
    tb = np.array([c[0] for c in coords_b], dtype=float)
    nb = np.array([c[1] for c in coords_b], dtype=float)

    time_corr = temporal_corr(model.doppler_hz, ta[:, None] - tb[None, :], numerology)
    delays = np.asarray(model.profile.delays_s)
    dn = na[:, None] - nb[None, :]
    phases = np.exp(-2j * np.pi * delays[:, None, None] * dn[None] / (numerology.n_fft * numerology.ts))
    coeffs = time_corr[None] * phases

    m = model.antennas
    blocks = np.einsum('lij,lab->iajb', coeffs, model.spatial_stack)
    return blocks.reshape(len(coords_a) * m, len(coords_b) * m)


def build_R_k(model: UserLinkModel, resource_map, numerology) -> np.ndarray:
    coords = resource_map.coordinates
    return hermitize(block_covariance(model, coords, coords, numerology))


def build_pilot_second_order(model: UserLinkModel, resource_map, pilot_coords: Sequence[Coordinate],
                             gamma_ce: float, numerology, perfect: bool = False,
                             reading: str = 'true') -> Tuple[np.ndarray, np.ndarray]:
    """(R_k^NP, Q_k^P)"""
    r_np = block_covariance(model, resource_map.coordinates, pilot_coords, numerology)
    r_p = hermitize(block_covariance(model, pilot_coords, pilot_coords, numerology))

    if perfect:
        return r_np, pinvh(r_p)
    if gamma_ce <= 0:
        raise SingularMatrixError(f"gamma_CE must be > 0, got {gamma_ce}")

    # literal reading adds the pilot noise a second time
    noise_scale = 2.0 if reading == 'literal' else 1.0
    q_p = hermitian_inverse(r_p + (noise_scale / gamma_ce) * np.eye(r_p.shape[0]))
    return r_np, q_p


def build_Phi_k(r_np: np.ndarray, q_p: np.ndarray) -> np.ndarray:
    if r_np.shape[1] != q_p.shape[0] or q_p.shape[0] != q_p.shape[1]:
        raise DimensionMismatchError(f"R^NP {r_np.shape} incompatible with Q^P {q_p.shape}")
    return hermitize(r_np @ q_p @ r_np.conj().T)


def build_second_order_stats(model: UserLinkModel, resource_map, pilot_coords: Sequence[Coordinate],
                             gamma_ce: float, numerology, perfect: bool = False,
                             reading: str = 'true') -> SecondOrderStats:
    r = build_R_k(model, resource_map, numerology)
    r_np, q_p = build_pilot_second_order(model, resource_map, pilot_coords, gamma_ce,
                                         numerology, perfect, reading)
    phi = build_Phi_k(r_np, q_p)

    # flat reductions are taken relative to the first data RE
    r_check = hermitize(model.spatial_stack.sum(axis=0))
    r_np_check = block_covariance(model, resource_map.coordinates[:1], pilot_coords, numerology)
    phi_check = build_Phi_k(r_np_check, q_p)

    return SecondOrderStats(
        user=model.user, r=r, r_np=r_np, q_p=q_p, phi=phi,
        r_check=r_check, r_np_check=r_np_check, phi_check=phi_check,
        gamma_ce=gamma_ce, interpolator=r_np @ q_p,
    )


def is_flat(model: UserLinkModel, resource_map) -> bool:
    """Time and frequency correlation equal to one across the data REs"""
    ts = {t for t, _ in resource_map.coordinates}
    ns = {n for _, n in resource_map.coordinates}
    return (model.doppler_hz == 0 or len(ts) == 1) and (max(model.profile.delays_s) == 0 or len(ns) == 1)


# ============================================
# CHANNEL DRAWS
# ============================================
def draw_channel(model: UserLinkModel, resource_map, pilot_coords: Sequence[Coordinate],
                 numerology, seed: SeedLike = None, size: Optional[int] = None) -> ChannelRealization:
    """Draw H_k on the data REs and on the pilot REs of user k.

    Path gains are jointly Gaussian with covariance Gamma kron R_l over the symbols
    involved, paths independent. With `size` the arrays carry a leading draw axis.
    """
    rng = make_rng(seed)
    data_coords = list(resource_map.coordinates)
    pilot_coords = list(pilot_coords)
    coords = data_coords + pilot_coords

    times = sorted({t for t, _ in coords})
    t_index = {t: i for i, t in enumerate(times)}
    t_arr = np.asarray(times, dtype=float)
    gamma = temporal_corr(model.doppler_hz, t_arr[:, None] - t_arr[None, :], numerology)
    gamma_sqrt = psd_sqrt(gamma)

    n_draws = 1 if size is None else int(size)
    m = model.antennas
    n_paths = model.profile.n_paths

    z = complex_normal(rng, (n_draws, n_paths, m, len(times)))
    rh = np.stack(model.spatial_sqrt)
    alpha = np.einsum('lab,slbt->slat', rh, z) @ gamma_sqrt.T

    picks = np.array([t_index[t] for t, _ in coords])
    subcarriers = np.array([n for _, n in coords], dtype=float)
    delays = np.asarray(model.profile.delays_s)
    phases = np.exp(-2j * np.pi * delays[:, None] * subcarriers[None, :] / (numerology.n_fft * numerology.ts))

    h = np.einsum('slac,lc->sca', alpha[..., picks], phases)
    h = h.reshape(n_draws, len(coords) * m)
    data = h[:, :len(data_coords) * m]
    pilots = h[:, len(data_coords) * m:]
    if size is None:
        data, pilots = data[0], pilots[0]
    return ChannelRealization(user=model.user, data=data, pilots=pilots)
