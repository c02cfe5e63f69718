"""
Deterministic equivalents of the MF and MMSE SINRs
- Fixed-point system for delta and the resolvent-type matrix T
- Derivative system delta' and T' for a given functional F
- Large-system SINRs for MF and MMSE classes, and their flat-correlation and
  i.i.d. reductions
- Fixed-point diagnostics export
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from exceptions import (
    DimensionMismatchError,
    ExportError,
    InvalidSizeError,
    ModePreconditionError,
    NonConvergenceError,
    SingularSystemError,
)

logger = logging.getLogger(__name__)

REDUCED_MODES = ('MF-flat', 'MMSE-flat', 'MF-iid')
DIAGNOSTIC_COLUMNS = ['class', 'iterations', 'residual', 'deltas', 'cond_I_minus_J']


# ============================================
# DOMAIN TYPES
# ============================================
@dataclass
class FixedPointProblem:
    rho: float
    dim: int
    signatures: np.ndarray
    functional: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.rho <= 0:
            raise InvalidSizeError(f"rho must be > 0, got {self.rho}")
        self.signatures = np.asarray(self.signatures, dtype=complex).reshape(-1, self.dim, self.dim)
        if self.functional is not None and self.functional.shape != (self.dim, self.dim):
            raise DimensionMismatchError(f"F must be {self.dim}x{self.dim}, got {self.functional.shape}")

    @property
    def n_signatures(self) -> int:
        return self.signatures.shape[0]


@dataclass
class FixedPointSolution:
    deltas: np.ndarray
    iterations: int
    residual: float
    t: np.ndarray
    delta_primes: Optional[np.ndarray] = None
    t_prime: Optional[np.ndarray] = None
    j_matrix: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    cond_i_minus_j: float = float('nan')
    history: List[float] = field(default_factory=list, repr=False)


@dataclass
class DetEquivSinr:
    user: int
    detector: str
    gamma: float
    delta: float = float('nan')
    delta_prime: float = float('nan')
    theta: float = float('nan')
    theta_prime: float = float('nan')
    mu: float = float('nan')


@dataclass
class DetEquivInput:
    """Per-user second-order statistics of one scheme at one antenna count"""
    antennas: int
    noise_power: float
    codes: np.ndarray
    user_classes: Sequence[int]
    detectors: Sequence[str]
    powers: np.ndarray
    gains: np.ndarray
    phi: Sequence[np.ndarray]
    r: Sequence[np.ndarray]
    phi_check: Optional[Sequence[np.ndarray]] = None
    r_check: Optional[Sequence[np.ndarray]] = None
    w: Optional[Sequence[np.ndarray]] = None
    class_dims: Optional[Sequence[int]] = None
    spatial_model: str = 'physical'

    @property
    def n_users(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1] * self.antennas

    @property
    def received_power(self) -> np.ndarray:
        """P_c g_k per user"""
        return np.asarray(self.powers) * np.asarray(self.gains)

    def members(self, position: int) -> List[int]:
        return [k for k, c in enumerate(self.user_classes) if c == position]


@dataclass
class DetEquivResult:
    sinrs: List[DetEquivSinr]
    fixed_points: Dict[int, FixedPointSolution] = field(default_factory=dict)


# ============================================
# FIXED POINT
# ============================================
def _hermitian_inverse(matrix: np.ndarray) -> np.ndarray:
    factor = cho_factor(0.5 * (matrix + matrix.conj().T), lower=True, check_finite=False)
    return cho_solve(factor, np.eye(matrix.shape[0], dtype=complex), check_finite=False)


def build_T(problem: FixedPointProblem, deltas: np.ndarray) -> np.ndarray:
    """T = ((1/I) sum_j S_j / (1 + delta_j) + rho I)^-1"""
    weights = 1.0 / (problem.dim * (1.0 + np.asarray(deltas, dtype=float)))
    kernel = np.tensordot(weights, problem.signatures, axes=1) if problem.n_signatures else 0.0
    return _hermitian_inverse(kernel + problem.rho * np.eye(problem.dim))


def _normalized_traces(stack: np.ndarray, matrix: np.ndarray, dim: int) -> np.ndarray:
    """(1/I) tr(S_k M) for every S_k in the stack"""
    return np.real(np.einsum('kab,ba->k', stack, matrix)) / dim


def fixed_point_deltas(problem: FixedPointProblem, tolerance: float = 1e-12,
                       max_iterations: int = 10000) -> FixedPointSolution:
    """Iterate delta_k = (1/I) tr S_k T(delta) from delta^(0) = 1/rho"""
    if problem.n_signatures == 0:
        return FixedPointSolution(deltas=np.zeros(0), iterations=0, residual=0.0,
                                  t=np.eye(problem.dim) / problem.rho)

    deltas = np.full(problem.n_signatures, 1.0 / problem.rho)
    history = []
    warned = False
    for iteration in range(1, max_iterations + 1):
        t = build_T(problem, deltas)
        updated = _normalized_traces(problem.signatures, t, problem.dim)
        scale = np.where(updated > 0, updated, 1.0)
        residual = float(np.max(np.abs(updated - deltas) / scale))
        history.append(residual)
        deltas = updated

        if iteration > 3 and residual > history[-2] * (1.0 + 1e-9) and not warned:
            logger.warning(f"⚠️ Fixed-point residual increased at iteration {iteration}: "
                           f"{history[-2]:.3e} -> {residual:.3e}")
            warned = True

        if residual < tolerance:
            return FixedPointSolution(deltas=deltas, iterations=iteration, residual=residual,
                                      t=build_T(problem, deltas), history=history)

    raise NonConvergenceError(
        f"fixed point not converged after {max_iterations} iterations (residual {residual:.3e})",
        diagnostics={'deltas': deltas, 'residual': residual, 'iterations': max_iterations,
                     'history': history},
    )


@dataclass
class DerivativeSystem:
    """S_k T products and the J matrix; both are independent of F"""
    st: np.ndarray
    j_matrix: np.ndarray
    cond: float


def derivative_system(problem: FixedPointProblem, deltas: np.ndarray,
                      t: np.ndarray) -> DerivativeSystem:
    n = problem.n_signatures
    dim = problem.dim
    st = problem.signatures @ t
    traces = np.real(st.reshape(n, -1) @ st.transpose(0, 2, 1).reshape(n, -1).T) / dim
    j_matrix = traces / (dim * (1.0 + np.asarray(deltas))[None, :] ** 2)

    cond = float(np.linalg.cond(np.eye(n) - j_matrix)) if n else 1.0
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularSystemError(f"I - J is singular (cond {cond:.3e})")
    return DerivativeSystem(st=st, j_matrix=j_matrix, cond=cond)


def solve_primes(system: DerivativeSystem, t: np.ndarray, functional: Optional[np.ndarray]):
    n, dim = system.st.shape[0], system.st.shape[1]
    if functional is None:
        v = np.zeros(n)
    else:
        v = _normalized_traces(system.st, functional @ t, dim)
    try:
        primes = np.linalg.solve(np.eye(n) - system.j_matrix, v)
    except LinAlgError as e:
        raise SingularSystemError(f"I - J is singular: {e}") from e
    return primes, v


def delta_primes(problem: FixedPointProblem, deltas: np.ndarray, t: np.ndarray,
                 functional: Optional[np.ndarray] = None):
    """delta' = (I_J - J)^-1 v; returns (delta', J, v, cond(I_J - J))"""
    f = problem.functional if functional is None else functional
    if problem.n_signatures == 0:
        return np.zeros(0), np.zeros((0, 0)), np.zeros(0), 1.0

    system = derivative_system(problem, deltas, t)
    primes, v = solve_primes(system, t, f)
    return primes, system.j_matrix, v, system.cond


def build_T_prime(problem: FixedPointProblem, deltas: np.ndarray, primes: np.ndarray,
                  t: np.ndarray, functional: Optional[np.ndarray] = None) -> np.ndarray:
    """T' = T F T + (1/I) T (sum_j S_j delta'_j / (1 + delta_j)^2) T"""
    f = problem.functional if functional is None else functional
    inner = np.zeros((problem.dim, problem.dim), dtype=complex) if f is None else f.astype(complex)
    if problem.n_signatures:
        weights = np.asarray(primes) / (problem.dim * (1.0 + np.asarray(deltas)) ** 2)
        inner = inner + np.tensordot(weights, problem.signatures, axes=1)
    t_prime = t @ inner @ t
    return 0.5 * (t_prime + t_prime.conj().T)


def solve_fixed_point(problem: FixedPointProblem, tolerance: float = 1e-12,
                      max_iterations: int = 10000) -> FixedPointSolution:
    """delta and T, plus delta' and T' when the problem carries F"""
    solution = fixed_point_deltas(problem, tolerance, max_iterations)
    if problem.functional is not None:
        primes, j_matrix, v, cond = delta_primes(problem, solution.deltas, solution.t)
        solution.delta_primes = primes
        solution.j_matrix = j_matrix
        solution.v = v
        solution.cond_i_minus_j = cond
        solution.t_prime = build_T_prime(problem, solution.deltas, primes, solution.t)
    return solution


# ============================================
# SIGNATURE COVARIANCES
# ============================================
def _sandwich(code: np.ndarray, matrix: np.ndarray, antennas: int) -> np.ndarray:
    """C_k X C_k^H with C_k = diag(c_k) kron I_M"""
    d = np.repeat(code, antennas)
    return d[:, None] * matrix * d.conj()[None, :]


def _flat_blocks(check: np.ndarray, n: int) -> np.ndarray:
    return np.kron(np.ones((n, n)), check)


def _trace_products(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """[j, k] -> tr(left_j right_k)"""
    n_left, n_right = left.shape[0], right.shape[0]
    return left.reshape(n_left, -1) @ right.transpose(0, 2, 1).reshape(n_right, -1).T


def _stacks(inp: DetEquivInput, flat: bool = False):
    if flat:
        if inp.phi_check is None or inp.r_check is None:
            raise ModePreconditionError("flat-case statistics are not available")
        n = inp.codes.shape[1]
        phi = [_flat_blocks(p, n) for p in inp.phi_check]
        r = [_flat_blocks(p, n) for p in inp.r_check]
    else:
        phi, r = inp.phi, inp.r
    x = np.stack([_sandwich(c, p, inp.antennas) for c, p in zip(inp.codes, phi)])
    y = np.stack([_sandwich(c, p, inp.antennas) for c, p in zip(inp.codes, r)])
    return x, y, phi


# ============================================
# MF
# ============================================
def mf_det_sinr(inp: DetEquivInput) -> List[DetEquivSinr]:
    """Large-system MF SINR of every user"""
    x, y, _ = _stacks(inp)
    return _mf_from_stacks(inp, x, y)


def _mf_from_stacks(inp: DetEquivInput, x: np.ndarray, y: np.ndarray) -> List[DetEquivSinr]:
    dim = inp.dim
    p = inp.received_power
    tr_x = np.real(np.trace(x, axis1=1, axis2=2))
    cross = np.real(_trace_products(y, x))

    sinrs = []
    for k in range(inp.n_users):
        if tr_x[k] <= 0:
            sinrs.append(DetEquivSinr(user=k, detector='MF', gamma=0.0))
            continue
        numerator = p[k] * (tr_x[k] / dim) ** 2
        denominator = inp.noise_power / dim ** 2 * tr_x[k] + np.sum(p * cross[:, k]) / dim ** 2
        sinrs.append(DetEquivSinr(user=k, detector='MF', gamma=float(numerator / denominator)))
    return sinrs


# ============================================
# MMSE
# ============================================
def _mmse_class(inp: DetEquivInput, position: int, x: np.ndarray, y: np.ndarray,
                phi: Sequence[np.ndarray], functional: str, tolerance: float,
                max_iterations: int, cross_class: bool = True):
    members = inp.members(position)
    dim = inp.dim
    p = inp.received_power
    rho = inp.noise_power / inp.antennas

    signatures = p[members][:, None, None] * x[members]
    problem = FixedPointProblem(rho=rho, dim=dim, signatures=signatures)
    solution = fixed_point_deltas(problem, tolerance, max_iterations)
    deltas, t = solution.deltas, solution.t

    system = derivative_system(problem, deltas, t)
    solution.j_matrix = system.j_matrix
    solution.cond_i_minus_j = system.cond

    identity = np.eye(dim)
    primes_bar, _ = solve_primes(system, t, identity)
    t_bar = build_T_prime(problem, deltas, primes_bar, t, identity)

    interferers = range(inp.n_users) if cross_class else members
    interferers = list(interferers)
    y_flat = y[interferers].reshape(len(interferers), -1)
    x_members = x[members].reshape(len(members), -1)

    # theta_j = delta_j for class members
    theta = deltas

    sinrs = []
    for i, k in enumerate(members):
        f = signatures[i] if functional == 'scaled' else np.asarray(phi[k], dtype=complex)
        primes, _ = solve_primes(system, t, f)
        t_prime = build_T_prime(problem, deltas, primes, t, f)
        t_prime_t = t_prime.T.ravel()

        mu = p[interferers] * np.real(y_flat @ t_prime_t) / dim
        theta_prime = p[members] * (x_members @ t_prime_t) / dim
        correction = (2.0 * np.real(np.conj(theta) * theta_prime) * (1.0 + deltas)
                      - np.abs(theta) ** 2 * primes) / (1.0 + deltas) ** 2
        index = {j: n for n, j in enumerate(interferers)}
        for n, j in enumerate(members):
            mu[index[j]] -= correction[n]

        noise_term = inp.noise_power / dim ** 2 * np.real(np.sum(signatures[i] * t_bar.T))
        denominator = noise_term + np.sum(mu) / dim
        gamma = float(deltas[i] ** 2 / denominator) if deltas[i] > 0 else 0.0
        sinrs.append(DetEquivSinr(
            user=k, detector='MMSE', gamma=gamma, delta=float(deltas[i]),
            delta_prime=float(primes[i]), theta=float(theta[i]),
            theta_prime=float(np.real(theta_prime[i])), mu=float(np.sum(mu)),
        ))
    return sinrs, solution


def mmse_det_sinr(inp: DetEquivInput, functional: str = 'scaled', tolerance: float = 1e-12,
                  max_iterations: int = 10000, positions: Optional[Sequence[int]] = None,
                  workers: Optional[int] = None) -> DetEquivResult:
    """Large-system MMSE SINR for the users of the MMSE classes (or `positions`)"""
    if functional == 'literal':
        logger.warning("⚠️ MMSE deterministic equivalent uses F = Phi_k (literal reading) "
                       "instead of P_c g_k C_k Phi_k C_k^H")
    x, y, phi = _stacks(inp)
    return _mmse_result(inp, x, y, phi, functional, tolerance, max_iterations,
                        positions, workers, cross_class=True)


def _mmse_result(inp, x, y, phi, functional, tolerance, max_iterations, positions,
                 workers, cross_class) -> DetEquivResult:
    if positions is None:
        positions = [c for c, d in enumerate(inp.detectors) if d == 'MMSE']
    positions = [c for c in positions if inp.members(c)]

    def run(position):
        return _mmse_class(inp, position, x, y, phi, functional, tolerance,
                           max_iterations, cross_class)

    if workers and workers > 1 and len(positions) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(run, positions))
    else:
        outcomes = [run(c) for c in positions]

    result = DetEquivResult(sinrs=[])
    for position, (sinrs, solution) in zip(positions, outcomes):
        result.sinrs.extend(sinrs)
        result.fixed_points[position] = solution
        logger.debug(f"Class {position + 1}: {solution.iterations} iterations, "
                     f"residual {solution.residual:.2e}")
    result.sinrs.sort(key=lambda s: s.user)
    return result


def det_equiv_sinrs(inp: DetEquivInput, functional: str = 'scaled', tolerance: float = 1e-12,
                    max_iterations: int = 10000) -> DetEquivResult:
    """MF or MMSE deterministic equivalent per user following its class detector"""
    x, y, phi = _stacks(inp)
    mf = _mf_from_stacks(inp, x, y)
    result = _mmse_result(inp, x, y, phi, functional, tolerance, max_iterations,
                          None, None, cross_class=True)
    mmse_users = {s.user for s in result.sinrs}
    result.sinrs.extend(s for s in mf if s.user not in mmse_users)
    result.sinrs.sort(key=lambda s: s.user)
    return result


# ============================================
# REDUCED FORMS
# ============================================
def mf_iid_sinr(received_power: float, mean_received_power: float, noise_power: float,
                antennas: int, k_c: int, n_c: int, phi_trace_ratio: float = 1.0) -> float:
    """P_c g_k (tr Phi_check / M) / (sigma^2 / M + g_bar P_c K_c / (N_c M))"""
    return received_power * phi_trace_ratio / (
        noise_power / antennas + mean_received_power * k_c / (n_c * antennas)
    )


def _mf_flat(inp: DetEquivInput) -> List[DetEquivSinr]:
    if inp.w is None:
        raise ModePreconditionError("MF-flat needs the intra-class W columns of a MOMA codebook")
    if inp.phi_check is None or inp.r_check is None:
        raise ModePreconditionError("MF-flat needs flat-case statistics")

    m = inp.antennas
    p = inp.received_power
    sinrs = []
    for k in range(inp.n_users):
        phi_k = inp.phi_check[k]
        tr_phi = float(np.real(np.trace(phi_k)))
        if tr_phi <= 0:
            sinrs.append(DetEquivSinr(user=k, detector='MF', gamma=0.0))
            continue
        interference = 0.0
        for j in inp.members(inp.user_classes[k]):
            overlap = abs(np.vdot(inp.w[j], inp.w[k])) ** 2
            interference += p[j] * overlap * float(np.real(np.sum(inp.r_check[j] * phi_k.T))) / m
        denominator = inp.noise_power / m ** 2 * tr_phi + interference / m
        sinrs.append(DetEquivSinr(user=k, detector='MF',
                                  gamma=float(p[k] * (tr_phi / m) ** 2 / denominator)))
    return sinrs


def _mf_iid(inp: DetEquivInput) -> List[DetEquivSinr]:
    if inp.spatial_model != 'identity':
        raise ModePreconditionError("MF-iid requires the identity spatial model")
    if inp.phi_check is None or inp.class_dims is None:
        raise ModePreconditionError("MF-iid needs flat-case statistics and class widths")

    p = inp.received_power
    sinrs = []
    for k in range(inp.n_users):
        position = inp.user_classes[k]
        members = inp.members(position)
        ratio = float(np.real(np.trace(inp.phi_check[k]))) / inp.antennas
        gamma = mf_iid_sinr(p[k], float(np.mean(p[members])), inp.noise_power, inp.antennas,
                            len(members), inp.class_dims[position], ratio)
        sinrs.append(DetEquivSinr(user=k, detector='MF', gamma=gamma))
    return sinrs


def det_sinr_reduced(mode: str, inp: DetEquivInput, functional: str = 'scaled',
                     tolerance: float = 1e-12, max_iterations: int = 10000) -> DetEquivResult:
    if mode == 'MF-flat':
        return DetEquivResult(sinrs=_mf_flat(inp))
    if mode == 'MF-iid':
        return DetEquivResult(sinrs=_mf_iid(inp))
    if mode == 'MMSE-flat':
        x, y, phi = _stacks(inp, flat=True)
        return _mmse_result(inp, x, y, phi, functional, tolerance, max_iterations,
                            None, None, cross_class=False)
    raise ModePreconditionError(f"unknown reduced mode {mode}, expected one of {REDUCED_MODES}")


# ============================================
# DIAGNOSTICS
# ============================================
def fixed_point_frame(fixed_points: Dict[int, FixedPointSolution]) -> pd.DataFrame:
    rows = [{
        'class': position + 1,
        'iterations': solution.iterations,
        'residual': solution.residual,
        'deltas': ';'.join(f'{d:.17g}' for d in solution.deltas),
        'cond_I_minus_J': solution.cond_i_minus_j,
    } for position, solution in sorted(fixed_points.items())]
    return pd.DataFrame(rows, columns=DIAGNOSTIC_COLUMNS)


def export_fixed_point_diagnostics(fixed_points: Dict[int, FixedPointSolution], path: str) -> str:
    if not fixed_points:
        raise ExportError("no fixed-point diagnostics to export")
    try:
        fixed_point_frame(fixed_points).to_csv(path, index=False, float_format='%.17g',
                                               lineterminator='\n')
    except OSError as e:
        logger.error(f"❌ Could not write {path}: {e}")
        raise ExportError(f"cannot write {path}: {e}") from e
    logger.info(f"💾 Fixed-point diagnostics -> {path}")
    return path
