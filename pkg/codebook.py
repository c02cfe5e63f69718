"""
Hierarchical spreading codebook
- Orthogonal base U (DFT or Walsh-Hadamard) split into per-class sub-bases U_c
- Intra-class signature matrices W_c
- Spreading codes c_k = U_c w_k and their mapping onto resource elements
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import dft, hadamard

from exceptions import (
    DimensionMismatchError,
    ExhaustedCodespaceError,
    InvalidSizeError,
    MapSizeMismatchError,
    UnassignedUserError,
)

logger = logging.getLogger(__name__)

BASE_KINDS = ('dft', 'walsh-hadamard')
W_METHODS = ('unit-modulus-random', 'binary-pn')


# ============================================
# DOMAIN TYPES
# ============================================
@dataclass(frozen=True)
class ServiceClass:
    index: int
    k_c: int
    n_c: int
    power_w: float
    target_rate: float
    snr_db: float = 10.0
    detector: str = 'MF'
    doppler_hz: float = 0.0
    gain_spread_db: float = 0.0

    def __post_init__(self):
        if self.n_c < 1:
            raise InvalidSizeError(f"class {self.index}: N_c must be >= 1, got {self.n_c}")
        if self.k_c < 0:
            raise InvalidSizeError(f"class {self.index}: K_c must be >= 0, got {self.k_c}")
        if self.detector not in ('MF', 'MMSE'):
            raise InvalidSizeError(f"class {self.index}: unknown detector {self.detector}")

    @property
    def overloading(self) -> float:
        return self.k_c / self.n_c


@dataclass(frozen=True)
class OrthogonalBase:
    n: int
    kind: str
    columns: np.ndarray


@dataclass
class ClassCodebook:
    sub_base: np.ndarray
    w: np.ndarray
    index_map: Dict[int, int] = field(default_factory=dict)


@dataclass
class Codebook:
    """Per-user codes for one scheme; `classes` is empty for baseline schemes"""
    scheme: str
    codes: np.ndarray
    user_classes: List[int]
    base: Optional[OrthogonalBase] = None
    classes: List[ClassCodebook] = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return self.codes.shape[0]

    @property
    def spreading_length(self) -> int:
        return self.codes.shape[1]

    def code(self, user: int) -> np.ndarray:
        if not 0 <= user < self.n_users:
            raise UnassignedUserError(f"user {user} has no code")
        return self.codes[user]

    def w(self, user: int) -> np.ndarray:
        position = self.user_classes[user]
        class_cb = self.classes[position]
        if user not in class_cb.index_map:
            raise UnassignedUserError(f"user {user} has no column in W_{position + 1}")
        return class_cb.w[:, class_cb.index_map[user]]


@dataclass(frozen=True)
class ResourceMap:
    coordinates: Tuple[Tuple[int, int], ...]
    n_subcarriers: int
    n_symbols: int
    n_rbs: int
    adjacency: str

    @property
    def size(self) -> int:
        return len(self.coordinates)


# ============================================
# BASE CONSTRUCTION
# ============================================
def build_orthogonal_base(n: int, kind: str = 'dft') -> OrthogonalBase:
    kind = kind.lower()
    if n < 1:
        raise InvalidSizeError(f"spreading length must be >= 1, got {n}")
    if kind == 'dft':
        columns = dft(n) / np.sqrt(n)
    elif kind == 'walsh-hadamard':
        if n & (n - 1):
            raise InvalidSizeError(f"Walsh-Hadamard base needs a power of 2, got {n}")
        columns = hadamard(n).astype(complex) / np.sqrt(n)
    else:
        raise InvalidSizeError(f"unknown base kind {kind}")
    return OrthogonalBase(n=n, kind=kind, columns=columns)


def partition_base(base: OrthogonalBase, dims: Sequence[int],
                   user_counts: Optional[Sequence[int]] = None) -> List[np.ndarray]:
    """Contiguous column slices in class order"""
    if sum(dims) != base.n:
        raise DimensionMismatchError(f"sum of class widths {sum(dims)} != N={base.n}")

    if user_counts is not None:
        ratios = [k / n for k, n in zip(user_counts, dims)]
        if any(a >= b for a, b in zip(ratios, ratios[1:])):
            logger.warning(f"⚠️ Overloading order K_c/N_c not increasing with class index: {ratios}")

    offsets = np.cumsum([0] + list(dims))
    return [base.columns[:, offsets[c]:offsets[c + 1]] for c in range(len(dims))]


def build_intra_class_codes(n_c: int, k_c: int, method: str = 'unit-modulus-random',
                            seed: Optional[int] = None) -> np.ndarray:
    """N_c x K_c matrix with unit-norm, pairwise distinct columns"""
    if method not in W_METHODS:
        raise InvalidSizeError(f"unknown W method {method}")
    if k_c < 0:
        raise InvalidSizeError(f"K_c must be >= 0, got {k_c}")
    if method == 'binary-pn' and k_c > 2 ** n_c:
        raise ExhaustedCodespaceError(
            f"binary-pn: {k_c} columns requested but only {2 ** n_c} distinct +/- columns exist"
        )

    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(n_c)
    w = np.zeros((n_c, k_c), dtype=complex)
    budget = 100 * max(k_c, 1) * (2 ** min(n_c, 16))

    for i in range(k_c):
        for _ in range(budget):
            if method == 'unit-modulus-random':
                column = scale * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, n_c))
            else:
                pn_seed = int(rng.integers(0, 2 ** 31 - 1))
                chips = np.random.default_rng(pn_seed).integers(0, 2, n_c)
                column = scale * (1.0 - 2.0 * chips).astype(complex)
            if not any(np.allclose(column, w[:, j], atol=1e-12) for j in range(i)):
                break
        else:
            raise ExhaustedCodespaceError(f"could not draw a distinct column {i} for W")
        w[:, i] = column

    return w


def spreading_code(class_codebook: ClassCodebook, user: int) -> np.ndarray:
    """c_k = U_c w_k"""
    if user not in class_codebook.index_map:
        raise UnassignedUserError(f"user {user} is not assigned in this class")
    w_k = class_codebook.w[:, class_codebook.index_map[user]]
    return class_codebook.sub_base @ w_k


def build_moma_codebook(classes: Sequence[ServiceClass], base_kind: str = 'dft',
                        w_method: str = 'unit-modulus-random', seed: int = 0) -> Codebook:
    dims = [c.n_c for c in classes]
    counts = [c.k_c for c in classes]
    base = build_orthogonal_base(sum(dims), base_kind)
    sub_bases = partition_base(base, dims, counts)

    # independent stream per class
    class_seeds = np.random.SeedSequence(seed).spawn(len(classes))

    class_codebooks = []
    codes = []
    user_classes = []
    user = 0
    for position, (service, sub_base) in enumerate(zip(classes, sub_bases)):
        w = build_intra_class_codes(
            service.n_c, service.k_c, w_method,
            int(class_seeds[position].generate_state(1)[0]),
        )
        index_map = {user + i: i for i in range(service.k_c)}
        class_cb = ClassCodebook(sub_base=sub_base, w=w, index_map=index_map)
        class_codebooks.append(class_cb)
        for k in index_map:
            codes.append(spreading_code(class_cb, k))
            user_classes.append(position)
        user += service.k_c

    n = base.n
    code_matrix = np.array(codes, dtype=complex).reshape(len(codes), n)
    logger.info(f"✅ MOMA codebook: N={n} ({base_kind}), classes={dims}, users={counts}")
    return Codebook(scheme='MOMA', codes=code_matrix, user_classes=user_classes,
                    base=base, classes=class_codebooks)


# ============================================
# SIGNATURES AND RESOURCE MAPPING
# ============================================
def signature_diagonal(c_k: np.ndarray, antennas: int) -> np.ndarray:
    """Diagonal of C_k = diag(c_k) kron I_M"""
    return np.repeat(np.asarray(c_k), antennas)


def signature_matrix(c_k: np.ndarray, antennas: int) -> np.ndarray:
    return np.kron(np.diag(np.asarray(c_k)), np.eye(antennas))


def build_resource_map(geometry, n: int) -> ResourceMap:
    """N data REs: neighbouring subcarriers of RB 0 (intra-rb) or one RE per RB (per-rb)"""
    if geometry.data_mapping == 'intra-rb':
        if geometry.data_subcarrier + n > geometry.n_subcarriers:
            raise MapSizeMismatchError(
                f"{n} REs do not fit in one RB symbol of {geometry.n_subcarriers} subcarriers"
            )
        coords = [geometry.to_global(0, geometry.data_symbol, geometry.data_subcarrier + i)
                  for i in range(n)]
    elif geometry.data_mapping == 'per-rb':
        if n > geometry.n_rbs:
            raise MapSizeMismatchError(f"{n} REs need {n} RBs, only {geometry.n_rbs} configured")
        coords = [geometry.to_global(b, geometry.data_symbol, geometry.data_subcarrier)
                  for b in range(n)]
    else:
        raise MapSizeMismatchError(f"unknown data mapping {geometry.data_mapping}")

    if len(set(coords)) != len(coords):
        raise MapSizeMismatchError("resource map coordinates are not distinct")
    if not all(geometry.contains(t, f) for t, f in coords):
        raise MapSizeMismatchError("resource map leaves the configured RB region")

    return ResourceMap(coordinates=tuple(coords), n_subcarriers=geometry.n_subcarriers,
                       n_symbols=geometry.n_symbols, n_rbs=geometry.n_rbs,
                       adjacency=geometry.adjacency)


def map_to_resources(c_k: np.ndarray, s_k: complex, power_w: float,
                     resource_map: ResourceMap) -> List[Tuple[int, int, complex]]:
    """x_{k,t,n} = sqrt(P_c) [c_k]_i s_k on the i-th RE of the map"""
    c_k = np.asarray(c_k)
    if c_k.shape[0] != resource_map.size:
        raise MapSizeMismatchError(f"code length {c_k.shape[0]} != |map| {resource_map.size}")
    samples = np.sqrt(power_w) * c_k * s_k
    return [(t, n, complex(x)) for (t, n), x in zip(resource_map.coordinates, samples)]
