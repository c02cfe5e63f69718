"""
MOMA experiment harness
- Scenario loading (defaults <- YAML <- .env <- CLI flags)
- Baseline schemes: eMTC repetition, eMTC random spreading, FDMA
- Rate vs. antenna count sweep with deterministic equivalents and gap report
- Maximum class-2 load vs. target rate search
- CSV export, SQLite run storage and the command-line interface
"""
import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sqlalchemy.exc import OperationalError
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential
from tqdm import tqdm

from cache_manager import CacheManager, point_key
from channel import build_user_models, complex_normal, psd_sqrt, trial_rng
from codebook import Codebook, build_moma_codebook
from database_models import FixedPointRecord, ResultRecord, SimulationRun, get_database_session
from detection import ergodic_rate, export_sinr_samples
from detequiv import FixedPointSolution, det_equiv_sinrs, det_sinr_reduced, export_fixed_point_diagnostics
from exceptions import (
    ConfigError,
    ExportError,
    InvalidSizeError,
    MomaError,
    SearchBudgetExceededError,
    UnknownSchemeError,
)
from simulator import LinkSimulator, StatsKey
from system_config import SystemConfig, load_config
from system_monitor import SystemMonitor


# ============================================
# LOGGING
# ============================================
_installed_handlers: List[logging.Handler] = []


def setup_logging(log_file: Optional[str] = None, level: int = logging.INFO):
    """Rotating file log plus console, shared by every simulator module"""
    log_file = log_file or os.getenv('MOMA_LOG_FILE', 'moma.log')
    root = logging.getLogger()
    root.setLevel(level)
    for handler in _installed_handlers:
        root.removeHandler(handler)
        handler.close()
    _installed_handlers.clear()

    file_handler = RotatingFileHandler(
        log_file,
        maxBytes=10*1024*1024,
        backupCount=5,
        encoding='utf-8'
    )
    file_handler.setLevel(level)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)

    formatter = logging.Formatter(
        '%(asctime)s - %(levelname)s - [%(funcName)s] - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    file_handler.setFormatter(formatter)
    console_handler.setFormatter(formatter)

    for handler in (file_handler, console_handler):
        root.addHandler(handler)
        _installed_handlers.append(handler)
    logging.getLogger('sqlalchemy.engine').setLevel(logging.ERROR)

    return logging.getLogger(__name__)


logger = logging.getLogger(__name__)

SCHEMES = ('MOMA', 'eMTC-random-spreading', 'eMTC-repetition', 'FDMA')
BASELINES = ('eMTC-repetition', 'eMTC-random-spreading', 'FDMA')
SOURCES = ('monte-carlo', 'det-equiv-theorem', 'det-equiv-corollary')
RESULT_COLUMNS = ['scheme', 'antennas', 'class', 'user', 'detector', 'metric', 'value',
                  'std_error', 'source']
SEARCH_CEILING_LIMIT = 64
FDMA_STREAM = 2


# ============================================
# DOMAIN TYPES
# ============================================
@dataclass(frozen=True)
class CapacitySettings:
    antennas: int = 64
    k1: int = 3
    r2_grid: Tuple[float, ...] = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
    k2_ceiling: int = 32


@dataclass(frozen=True)
class Scenario:
    system: SystemConfig
    schemes: Tuple[str, ...] = SCHEMES
    trials: int = 100
    m_sweep: Tuple[int, ...] = (16, 32, 64)
    seed: int = 1
    workers: Optional[int] = None
    fdma_guard_fraction: float = 0.1
    use_cache: bool = True
    db_url: str = 'sqlite:///moma_results.db'
    capacity: CapacitySettings = field(default_factory=CapacitySettings)

    def __post_init__(self):
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise UnknownSchemeError(f"unknown schemes {unknown}, expected {SCHEMES}")
        if not 0.0 <= self.fdma_guard_fraction < 1.0:
            raise ConfigError(f"FDMA guard fraction must be in [0, 1), got {self.fdma_guard_fraction}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> 'Scenario':
        harness = config['harness']
        capacity = harness.get('capacity', {})
        return cls(
            system=SystemConfig.from_dict(config),
            schemes=tuple(harness.get('schemes', SCHEMES)),
            trials=int(harness.get('trials', 100)),
            m_sweep=tuple(int(m) for m in harness.get('m_sweep', (16, 32, 64))),
            seed=int(harness.get('seed', 1)),
            workers=harness.get('workers'),
            fdma_guard_fraction=float(harness.get('fdma_guard_fraction', 0.1)),
            use_cache=bool(harness.get('use_cache', True)),
            db_url=str(harness.get('db_url', 'sqlite:///moma_results.db')),
            capacity=CapacitySettings(
                antennas=int(capacity.get('antennas', 64)),
                k1=int(capacity.get('k1', 3)),
                r2_grid=tuple(float(r) for r in capacity.get('r2_grid', CapacitySettings.r2_grid)),
                k2_ceiling=int(capacity.get('k2_ceiling', 32)),
            ),
        )


@dataclass(frozen=True)
class ResultRow:
    scheme: str
    antennas: int
    class_index: int
    user: Optional[int]
    detector: str
    metric: str
    value: float
    std_error: float = 0.0
    source: str = 'monte-carlo'

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise InvalidSizeError(f"{self.metric} for {self.scheme} is not finite: {self.value}")
        if not self.std_error >= 0:
            raise InvalidSizeError(f"standard error must be >= 0, got {self.std_error}")
        if self.source not in SOURCES:
            raise InvalidSizeError(f"unknown source {self.source}")

    def as_record(self) -> Dict[str, Any]:
        return {
            'scheme': self.scheme,
            'antennas': self.antennas,
            'class': self.class_index,
            'user': self.user,
            'detector': self.detector,
            'metric': self.metric,
            'value': self.value,
            'std_error': self.std_error,
            'source': self.source,
        }


# ============================================
# BASELINES AND CODEBOOKS
# ============================================
def baseline_codes(scheme: str, n: int, k: int, seed: int = 0) -> Optional[np.ndarray]:
    """K x N codes of a baseline scheme; FDMA has no spreading and returns None"""
    if scheme == 'eMTC-repetition':
        return np.full((k, n), 1.0 / np.sqrt(n), dtype=complex)
    if scheme == 'eMTC-random-spreading':
        codes = np.empty((k, n), dtype=complex)
        for user in range(k):
            # per-user stream keeps a user's code fixed when K grows
            chips = np.random.default_rng([int(seed), user]).integers(0, 2, n)
            codes[user] = (1.0 - 2.0 * chips) / np.sqrt(n)
        return codes
    if scheme == 'FDMA':
        return None
    raise UnknownSchemeError(f"{scheme} is not a baseline scheme, expected one of {BASELINES}")


def build_codebook(config: SystemConfig, scheme: str) -> Codebook:
    if scheme == 'MOMA':
        return build_moma_codebook(config.classes, config.base_kind, config.w_method,
                                   config.codebook_seed)
    codes = baseline_codes(scheme, config.spreading_length, config.n_users, config.codebook_seed)
    if codes is None:
        raise UnknownSchemeError("FDMA is evaluated with its own rate model, not a codebook")
    return Codebook(scheme=scheme, codes=codes, user_classes=config.user_classes())


def fdma_user_rates(config: SystemConfig, guard_fraction: float, trials: int,
                    seed: int) -> List[Tuple[float, float]]:
    """Narrowband share beta = (1 - guard) / K, MRC with perfect CSI over a flat subchannel"""
    n_users = config.n_users
    if n_users == 0:
        return []
    beta = (1.0 - guard_fraction) / n_users
    models = build_user_models(config)

    rates = []
    for k, model in enumerate(models):
        position = config.user_classes()[k]
        snr = model.gain * config.classes[position].power_w / config.noise_power
        root = psd_sqrt(model.spatial_stack.sum(axis=0))
        z = complex_normal(trial_rng(seed, 0, k, FDMA_STREAM), (trials, config.antennas))
        h = z @ root.T
        energy = np.sum(np.abs(h) ** 2, axis=1)
        per_trial = beta * np.log2(1.0 + snr / beta * energy)
        if trials == 1:
            rates.append((float(per_trial[0]), 0.0))
        else:
            rates.append((float(per_trial.mean()), float(per_trial.std(ddof=1) / np.sqrt(trials))))
    return rates


# ============================================
# MONTE CARLO POINTS
# ============================================
class ExperimentRunner:
    """Monte Carlo points with statistics and result caching"""

    def __init__(self, scenario: Scenario, cache_manager: Optional[CacheManager] = None,
                 progress: bool = True, samples_path: Optional[str] = None):
        self.scenario = scenario
        self.cache_manager = cache_manager
        self.progress = progress
        self.samples_path = samples_path
        self.sample_files: List[str] = []
        self.stats_cache: Dict[StatsKey, Any] = {}
        self.monitor = SystemMonitor()
        self.workers = self.monitor.recommended_workers(scenario.workers)

    def simulator(self, config: SystemConfig, scheme: str) -> LinkSimulator:
        return LinkSimulator(config, build_codebook(config, scheme), seed=self.scenario.seed,
                             workers=self.workers, stats_cache=self.stats_cache)

    def point_key(self, config: SystemConfig, scheme: str) -> str:
        return point_key(system=dataclasses.asdict(config), scheme=scheme,
                         seed=self.scenario.seed, trials=self.scenario.trials)

    def samples_file(self, scheme: str, antennas: int) -> str:
        """<stem>_<scheme>_M<antennas><ext> next to the requested path"""
        stem, ext = os.path.splitext(self.samples_path)
        return f"{stem}_{scheme}_M{antennas}{ext or '.csv'}"

    def _cached_gammas(self, key: str, config: SystemConfig) -> Optional[np.ndarray]:
        if self.cache_manager is None or self.samples_path:
            return None
        cached = self.cache_manager.get_gammas(key)
        if cached is None:
            return None
        if cached.shape != (self.scenario.trials, config.n_users):
            logger.warning(f"⚠️ Cached point {key[:8]} has shape {cached.shape}, recomputing")
            self.cache_manager.invalidate(key)
            return None
        return cached

    def gammas(self, config: SystemConfig, scheme: str,
               simulator: Optional[LinkSimulator] = None) -> np.ndarray:
        """trials x users SINR matrix of one point, served from the cache when possible"""
        key = self.point_key(config, scheme)
        cached = self._cached_gammas(key, config)
        if cached is not None:
            return cached

        self.monitor.check_workload(config.spreading_length, config.antennas, config.n_users)
        simulator = simulator or self.simulator(config, scheme)
        batch = simulator.run(self.scenario.trials, progress=self.progress,
                              keep_samples=bool(self.samples_path))
        if self.samples_path:
            self.sample_files.append(
                export_sinr_samples(batch.samples, self.samples_file(scheme, config.antennas)))
        if self.cache_manager is not None:
            self.cache_manager.save_gammas(
                key, batch.gammas, scheme,
                f"{scheme} M={config.antennas} K={[c.k_c for c in config.classes]}",
            )
        return batch.gammas

    def user_rates(self, config: SystemConfig, scheme: str,
                   simulator: Optional[LinkSimulator] = None) -> List[Tuple[float, float]]:
        if scheme == 'FDMA':
            return fdma_user_rates(config, self.scenario.fdma_guard_fraction,
                                   self.scenario.trials, self.scenario.seed)
        gammas = self.gammas(config, scheme, simulator)
        return [ergodic_rate(gammas[:, k]) for k in range(config.n_users)]


def class_rate_rows(config: SystemConfig, scheme: str, rates: Sequence[Tuple[float, float]],
                    source: str) -> List[ResultRow]:
    """Per-user rates plus the class minimum and mean"""
    rows = []
    user_classes = config.user_classes()
    for k, (rate, se) in enumerate(rates):
        service = config.classes[user_classes[k]]
        rows.append(ResultRow(scheme, config.antennas, service.index, k, service.detector,
                              'rate', rate, se, source))

    for position, service in enumerate(config.classes):
        members = config.class_users(position)
        if not members:
            continue
        values = np.array([rates[k][0] for k in members])
        errors = np.array([rates[k][1] for k in members])
        worst = int(np.argmin(values))
        rows.append(ResultRow(scheme, config.antennas, service.index, None, service.detector,
                              'rate_min', float(values[worst]), float(errors[worst]), source))
        rows.append(ResultRow(scheme, config.antennas, service.index, None, service.detector,
                              'rate_mean', float(values.mean()),
                              float(np.sqrt(np.sum(errors ** 2)) / len(members)), source))
    return rows


# ============================================
# DETERMINISTIC EQUIVALENTS
# ============================================
def detequiv_rows(config: SystemConfig, simulator: LinkSimulator,
                  fixed_points: Optional[Dict[Tuple[int, int], FixedPointSolution]] = None
                  ) -> Tuple[List[ResultRow], Dict[int, float]]:
    """Large-system SINRs and rates of a MOMA configuration; returns rows and gamma-bar per user"""
    settings = config.detequiv
    inp = simulator.detequiv_input()
    general = det_equiv_sinrs(inp, settings.functional, settings.tolerance, settings.max_iterations)
    if fixed_points is not None:
        for position, solution in general.fixed_points.items():
            fixed_points[(config.antennas, position)] = solution

    rows = []
    gamma_bar = {s.user: s.gamma for s in general.sinrs}
    rows.extend(_sinr_rows(config, gamma_bar, 'det-equiv-theorem'))

    reduced: Dict[int, float] = {}
    mf_flat = det_sinr_reduced('MF-flat', inp).sinrs
    mmse_flat = det_sinr_reduced('MMSE-flat', inp, settings.functional, settings.tolerance,
                                 settings.max_iterations).sinrs
    mmse_users = {s.user for s in mmse_flat}
    reduced.update({s.user: s.gamma for s in mf_flat if s.user not in mmse_users})
    reduced.update({s.user: s.gamma for s in mmse_flat})
    rows.extend(_sinr_rows(config, reduced, 'det-equiv-corollary'))

    if config.channel.spatial_model == 'identity':
        iid = {s.user: s.gamma for s in det_sinr_reduced('MF-iid', inp).sinrs}
        user_classes = config.user_classes()
        for k, gamma in iid.items():
            service = config.classes[user_classes[k]]
            rows.append(ResultRow('MOMA', config.antennas, service.index, k, 'MF', 'sinr_iid',
                                  gamma, 0.0, 'det-equiv-corollary'))
    return rows, gamma_bar


def _sinr_rows(config: SystemConfig, gammas: Dict[int, float], source: str) -> List[ResultRow]:
    rows = []
    user_classes = config.user_classes()
    for k in sorted(gammas):
        service = config.classes[user_classes[k]]
        rows.append(ResultRow('MOMA', config.antennas, service.index, k, service.detector,
                              'sinr', gammas[k], 0.0, source))
    rates = [(math.log2(1.0 + gammas[k]), 0.0) for k in sorted(gammas)]
    if len(rates) == config.n_users:
        rows.extend(r for r in class_rate_rows(config, 'MOMA', rates, source)
                    if r.user is None)
    return rows


def gap_rows(config: SystemConfig, gammas: np.ndarray, gamma_bar: Dict[int, float]) -> List[ResultRow]:
    """Signed relative gap (gamma-bar - mean MC gamma) / gamma-bar per class"""
    rows = []
    user_classes = config.user_classes()
    for position, service in enumerate(config.classes):
        members = [k for k in config.class_users(position) if gamma_bar.get(k, 0) > 0]
        if not members:
            continue
        gaps = [(gamma_bar[k] - float(np.mean(gammas[:, k]))) / gamma_bar[k] for k in members]
        se = float(np.std(gaps, ddof=1) / np.sqrt(len(gaps))) if len(gaps) > 1 else 0.0
        rows.append(ResultRow('MOMA', config.antennas, service.index, None, service.detector,
                              'relative_gap', float(np.mean(gaps)), se, 'det-equiv-theorem'))
    return rows


# ============================================
# SWEEPS
# ============================================
def run_rate_vs_antennas(scenario: Scenario, cache_manager: Optional[CacheManager] = None,
                         fixed_points: Optional[Dict[Tuple[int, int], FixedPointSolution]] = None,
                         progress: bool = True, samples_path: Optional[str] = None) -> List[ResultRow]:
    """Rates per scheme over the antenna sweep, plus deterministic equivalents for MOMA.

    With `samples_path` every Monte Carlo point also writes its per-trial SINRs
    to `<stem>_<scheme>_M<antennas>.csv`.
    """
    if not scenario.m_sweep:
        raise ConfigError("the antenna sweep is empty")

    runner = ExperimentRunner(scenario, cache_manager, progress, samples_path)
    rows: List[ResultRow] = []
    gaps: Dict[int, List[ResultRow]] = {}

    for antennas in sorted(scenario.m_sweep):
        config = scenario.system.with_antennas(antennas)
        logger.info(f"📊 M={antennas}: {len(scenario.schemes)} schemes, {scenario.trials} trials")

        for scheme in scenario.schemes:
            if scheme == 'FDMA':
                rows.extend(class_rate_rows(config, scheme, runner.user_rates(config, scheme),
                                            'monte-carlo'))
                continue

            simulator = runner.simulator(config, scheme)
            gammas = runner.gammas(config, scheme, simulator)
            rates = [ergodic_rate(gammas[:, k]) for k in range(config.n_users)]
            rows.extend(class_rate_rows(config, scheme, rates, 'monte-carlo'))

            if scheme == 'MOMA':
                de_rows, gamma_bar = detequiv_rows(config, simulator, fixed_points)
                rows.extend(de_rows)
                point_gaps = gap_rows(config, gammas, gamma_bar)
                gaps[antennas] = point_gaps
                rows.extend(point_gaps)

    _log_gap_trend(gaps)
    logger.info(f"✅ Rate sweep done: {len(rows)} rows")
    return rows


def _log_gap_trend(gaps: Dict[int, List[ResultRow]]):
    by_class: Dict[int, List[Tuple[int, float]]] = {}
    for antennas, point in sorted(gaps.items()):
        for row in point:
            by_class.setdefault(row.class_index, []).append((antennas, abs(row.value)))
    for class_index, trend in by_class.items():
        values = [v for _, v in trend]
        shrinking = all(b < a for a, b in zip(values, values[1:]))
        marker = '✅' if shrinking else '⚠️'
        logger.info(f"{marker} Class {class_index} |gap| over M: "
                    + ', '.join(f"M={m}: {v:.3f}" for m, v in trend))


def run_capacity_vs_target_rate(scenario: Scenario, k1: Optional[int] = None,
                                r2_grid: Optional[Sequence[float]] = None,
                                cache_manager: Optional[CacheManager] = None,
                                progress: bool = True) -> List[ResultRow]:
    """Largest K2 with min_{k in class 2} R_k >= r2, per scheme and target.

    K2 grows from 0 in steps of 1 and stops at the first infeasible load; the
    class-2 minimum rate of each K2 is evaluated once and reused across targets,
    so the result is non-increasing in r2.
    """
    settings = scenario.capacity
    k1 = settings.k1 if k1 is None else k1
    r2_grid = sorted(settings.r2_grid if r2_grid is None else r2_grid)
    ceiling = settings.k2_ceiling
    if ceiling > SEARCH_CEILING_LIMIT:
        raise SearchBudgetExceededError(
            f"K2 ceiling {ceiling} exceeds the linear-search limit {SEARCH_CEILING_LIMIT}"
        )
    if len(scenario.system.classes) < 2:
        raise ConfigError("the capacity search needs at least two service classes")

    base = scenario.system.with_antennas(settings.antennas).with_class_users(0, k1)
    runner = ExperimentRunner(scenario, cache_manager, progress=False)
    detector = base.classes[1].detector
    rows: List[ResultRow] = []

    schemes = tqdm(scenario.schemes, desc='capacity search') if progress else scenario.schemes
    for scheme in schemes:
        min_rates: Dict[int, float] = {}

        def class2_min_rate(k2: int) -> float:
            if k2 not in min_rates:
                config = base.with_class_users(1, k2)
                rates = runner.user_rates(config, scheme)
                min_rates[k2] = min(rates[k][0] for k in config.class_users(1))
            return min_rates[k2]

        for r2 in r2_grid:
            best = 0
            for k2 in range(1, ceiling + 1):
                if class2_min_rate(k2) < r2:
                    break
                best = k2
            rows.append(ResultRow(scheme, settings.antennas, 2, None, detector,
                                  f"max_k2[r2={r2:g}]", float(best), 0.0, 'monte-carlo'))
            logger.info(f"   {scheme} r2={r2:g}: max K2 = {best}")

    logger.info(f"✅ Capacity search done: {len(rows)} rows")
    return rows


# ============================================
# EXPORT AND STORAGE
# ============================================
def results_frame(rows: Sequence[ResultRow]) -> pd.DataFrame:
    frame = pd.DataFrame([r.as_record() for r in rows], columns=RESULT_COLUMNS)
    frame['user'] = frame['user'].astype('Int64')
    return frame


def export_results(rows: Sequence[ResultRow], path: str) -> str:
    """One header line, fixed column order, round-trip float formatting"""
    if not rows:
        raise ExportError("no result rows to export")
    try:
        results_frame(rows).to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
    except OSError as e:
        logger.error(f"❌ Could not write {path}: {e}")
        raise ExportError(f"cannot write {path}: {e}") from e
    logger.info(f"💾 {len(rows)} rows -> {path}")
    return path


def load_results(path: str) -> List[ResultRow]:
    frame = pd.read_csv(path, dtype={'user': 'Int64'}, float_precision='round_trip')
    rows = []
    for record in frame.to_dict('records'):
        user = record['user']
        rows.append(ResultRow(
            scheme=record['scheme'],
            antennas=int(record['antennas']),
            class_index=int(record['class']),
            user=None if pd.isna(user) else int(user),
            detector=record['detector'],
            metric=record['metric'],
            value=float(record['value']),
            std_error=float(record['std_error']),
            source=record['source'],
        ))
    return rows


@retry(
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.2, min=0.2, max=2),
    retry=retry_if_exception_type(OperationalError),
    reraise=True,
)
def save_run(rows: Sequence[ResultRow], command: str, config: Dict[str, Any], seed: int,
             trials: int, output_path: str, elapsed_s: float, db_url: str,
             fixed_points: Optional[Dict[Tuple[int, int], FixedPointSolution]] = None) -> int:
    session = get_database_session(db_url)
    try:
        config_json = json.dumps(config, sort_keys=True, default=str)
        run = SimulationRun(
            command=command,
            config_hash=point_key(config=config),
            config_json=config_json,
            seed=seed,
            trials=trials,
            output_path=output_path,
            elapsed_s=elapsed_s,
        )
        for row in rows:
            run.results.append(ResultRecord(
                scheme=row.scheme, antennas=row.antennas, class_index=row.class_index,
                user=row.user, detector=row.detector, metric=row.metric, value=row.value,
                std_error=row.std_error, source=row.source,
            ))
        for (antennas, position), solution in sorted((fixed_points or {}).items()):
            run.fixed_points.append(FixedPointRecord(
                antennas=antennas, class_index=position + 1, iterations=solution.iterations,
                residual=solution.residual,
                deltas=';'.join(f'{d:.17g}' for d in solution.deltas),
                cond_i_minus_j=solution.cond_i_minus_j,
            ))
        session.add(run)
        session.commit()
        logger.info(f"💾 Run {run.id} stored ({len(rows)} rows)")
        return run.id
    except OperationalError:
        session.rollback()
        raise
    except Exception as e:
        session.rollback()
        logger.error(f"❌ Could not store run: {e}")
        return -1
    finally:
        session.close()


# ============================================
# CLI
# ============================================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='moma', description='MOMA link-level simulator')
    parser.add_argument('--config', help='YAML scenario file')
    parser.add_argument('--output', help='CSV output path')
    parser.add_argument('--seed', type=int, help='Monte Carlo seed override')
    parser.add_argument('--trials', type=int, help='trials override')
    parser.add_argument('--workers', type=int, help='worker threads')
    parser.add_argument('--no-cache', action='store_true', help='disable the SINR cache')
    parser.add_argument('--no-db', action='store_true', help='do not store the run in SQLite')
    parser.add_argument('--clear-cache', action='store_true', help='drop every cached SINR point first')

    sub = parser.add_subparsers(dest='command', required=True)
    rate = sub.add_parser('rate-vs-antennas', help='rates vs. BS array size')
    rate.add_argument('--sinr-samples', help='per-trial SINR CSV path (one file per scheme and M)')
    sub.add_parser('capacity-vs-rate', help='max class-2 users vs. target rate')
    sub.add_parser('validate', help='run the invariant suite')
    detequiv = sub.add_parser('detequiv', help='deterministic equivalents without Monte Carlo')
    detequiv.add_argument('--antennas', type=int, help='single M (default: the sweep)')
    detequiv.add_argument('--diagnostics', help='fixed-point diagnostics CSV path')
    return parser


def scenario_from_args(args) -> Tuple[Scenario, Dict[str, Any]]:
    config = load_config(args.config)
    harness = config['harness']
    if args.seed is not None:
        harness['seed'] = args.seed
    if args.trials is not None:
        harness['trials'] = args.trials
    if args.workers is not None:
        harness['workers'] = args.workers
    if args.no_cache:
        harness['use_cache'] = False
    return Scenario.from_config(config), config


def run_detequiv(scenario: Scenario, antennas: Optional[int] = None,
                 fixed_points: Optional[Dict[Tuple[int, int], FixedPointSolution]] = None
                 ) -> List[ResultRow]:
    runner = ExperimentRunner(scenario, progress=False)
    rows = []
    for m in ([antennas] if antennas else sorted(scenario.m_sweep)):
        config = scenario.system.with_antennas(m)
        simulator = runner.simulator(config, 'MOMA')
        point_rows, _ = detequiv_rows(config, simulator, fixed_points)
        rows.extend(point_rows)
        for row in point_rows:
            if row.user is None:
                logger.info(f"   M={m} class {row.class_index} {row.metric} ({row.source}): {row.value:.4f}")
    return rows


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()

    if args.command == 'validate':
        from diagnose import run_diagnostics
        return 0 if run_diagnostics() else 1

    try:
        scenario, config = scenario_from_args(args)
    except MomaError as e:
        logger.error(f"❌ Invalid scenario: {e}")
        return 2

    SystemMonitor().log_health()
    cache_manager = CacheManager(scenario.db_url) if scenario.use_cache else None
    if cache_manager is not None:
        if args.clear_cache:
            cache_manager.clear_all_cache()
        cache_manager.clean_expired_cache()
    fixed_points: Dict[Tuple[int, int], FixedPointSolution] = {}
    started = time.time()

    try:
        if args.command == 'rate-vs-antennas':
            rows = run_rate_vs_antennas(scenario, cache_manager, fixed_points,
                                        samples_path=args.sinr_samples)
            output = args.output or 'rate_vs_antennas.csv'
        elif args.command == 'capacity-vs-rate':
            rows = run_capacity_vs_target_rate(scenario, cache_manager=cache_manager)
            output = args.output or 'capacity_vs_rate.csv'
        else:
            rows = run_detequiv(scenario, args.antennas, fixed_points)
            output = args.output or 'detequiv.csv'
            if fixed_points:
                by_class = {}
                for (m, position), solution in sorted(fixed_points.items()):
                    by_class[position] = solution
                export_fixed_point_diagnostics(by_class, args.diagnostics or 'detequiv_diagnostics.csv')

        export_results(rows, output)
        if not args.no_db:
            run_id = save_run(rows, args.command, config, scenario.seed, scenario.trials, output,
                              time.time() - started, scenario.db_url, fixed_points)
            if run_id < 0:
                logger.error(f"❌ Results written to {output} but the run was not stored")
                return 1
    except OperationalError as e:
        logger.error(f"❌ Database unavailable: {e}")
        return 1
    except MomaError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return 1
    finally:
        if cache_manager is not None:
            stats = cache_manager.get_cache_stats()
            logger.info(f"📊 Cache: {stats.get('points_cached', 0)} points | "
                        f"hit rate {stats.get('hit_rate', 0)}%")
            cache_manager.close()

    logger.info(f"✅ {args.command} finished in {time.time() - started:.1f}s")
    return 0


if __name__ == '__main__':
    sys.exit(main())
