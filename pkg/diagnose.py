"""
MOMA simulator diagnostics
Run: python diagnose.py   (or: python harness.py validate)
"""
import os
import sys

import numpy as np
from dotenv import load_dotenv

load_dotenv()


def print_header(text):
    print(f"\n{'='*60}")
    print(f"  {text}")
    print(f"{'='*60}")


def test_item(name, condition, details=""):
    status = "✅" if condition else "❌"
    print(f"{status} {name}")
    if details:
        print(f"   {details}")
    return bool(condition)


def j0_series(x: float, terms: int = 40) -> float:
    """Power series of the Bessel function of the first kind, order 0"""
    total, term = 0.0, 1.0
    for m in range(terms):
        if m:
            term *= -(x / 2.0) ** 2 / (m * m)
        total += term
    return total


def run_diagnostics() -> bool:
    print("""
    ╔══════════════════════════════════════════╗
    ║   🔍 MOMA SIMULATOR DIAGNOSTICS          ║
    ║                                          ║
    ║   Checking invariants and oracles...     ║
    ╚══════════════════════════════════════════╝
    """)

    all_ok = True

    # ===========================================
    # 1. PYTHON & DEPENDENCIES
    # ===========================================
    print_header("1. PYTHON & DEPENDENCIES")

    python_version = sys.version_info
    all_ok &= test_item(
        "Python 3.9+",
        python_version >= (3, 9),
        f"Version: {python_version.major}.{python_version.minor}.{python_version.micro}"
    )

    required_modules = [
        ('numpy', 'numpy'),
        ('scipy', 'scipy'),
        ('pandas', 'pandas'),
        ('yaml', 'pyyaml'),
        ('dotenv', 'python-dotenv'),
        ('sqlalchemy', 'sqlalchemy'),
        ('tenacity', 'tenacity'),
        ('psutil', 'psutil'),
        ('tqdm', 'tqdm'),
    ]
    for module_name, pip_name in required_modules:
        try:
            __import__(module_name)
            test_item(f"Module {pip_name}", True)
        except ImportError:
            all_ok &= test_item(f"Module {pip_name}", False, f"Install: pip install {pip_name}")

    if not all_ok:
        return False

    from channel import (
        spatial_norm_audit,
        build_second_order_stats,
        build_user_models,
        psd_sqrt,
        temporal_corr,
    )
    from codebook import build_moma_codebook, build_resource_map
    from detection import ReceiverSpec, receiver_vectors, symbol_level_check
    from detequiv import FixedPointProblem, DetEquivInput, det_equiv_sinrs, mf_iid_sinr, solve_fixed_point
    from estimation import build_pilot_pattern, estimation_snr
    from system_config import SystemConfig, load_config

    # ===========================================
    # 2. CONFIGURATION
    # ===========================================
    print_header("2. CONFIGURATION")

    try:
        config = SystemConfig.from_dict(load_config(os.getenv('MOMA_CONFIG')))
        all_ok &= test_item(
            "Scenario loaded",
            True,
            f"M={config.antennas} N={config.spreading_length} K={config.n_users} "
            f"sigma^2={config.noise_power:.3e} W"
        )
    except Exception as e:
        all_ok &= test_item("Scenario loaded", False, str(e)[:100])
        return False

    # ===========================================
    # 3. CODEBOOK
    # ===========================================
    print_header("3. CODEBOOK")

    codebook = build_moma_codebook(config.classes, config.base_kind, config.w_method,
                                   config.codebook_seed)
    norms = np.linalg.norm(codebook.codes, axis=1)
    all_ok &= test_item("Unit-norm codes", np.allclose(norms, 1.0, atol=1e-12),
                        f"max |1 - ||c_k||| = {np.max(np.abs(1 - norms)):.1e}")

    gram = codebook.codes.conj() @ codebook.codes.T
    users = config.user_classes()
    cross = [abs(gram[j, k]) for j in range(len(users)) for k in range(len(users))
             if users[j] != users[k]]
    all_ok &= test_item("Inter-class orthogonality", not cross or max(cross) < 1e-12,
                        f"max |c_j^H c_k| across classes = {max(cross, default=0.0):.1e}")

    # ===========================================
    # 4. CHANNEL
    # ===========================================
    print_header("4. CHANNEL")

    xs = [0.0, 0.5, 2.0, 5.0]
    numerology = config.numerology
    scale = 2.0 * np.pi * numerology.symbol_duration
    ours = temporal_corr(1.0 / scale, np.array(xs), numerology)
    series = np.array([j0_series(x) for x in xs])
    all_ok &= test_item("Doppler correlation matches J0 series", np.allclose(ours, series, atol=1e-9),
                        f"max error {np.max(np.abs(ours - series)):.1e}")

    small = config.with_antennas(8)
    models = build_user_models(small)
    resource_map = build_resource_map(small.geometry, small.spreading_length)
    pilots = build_pilot_pattern(small)
    stats = build_second_order_stats(
        models[0], resource_map, pilots.coords(0),
        estimation_snr(models[0].gain, small.classes[0].power_w, small.noise_power),
        small.numerology,
    )
    eig_r = np.linalg.eigvalsh(stats.r)
    all_ok &= test_item("R_k Hermitian PSD", eig_r.min() > -1e-10 * eig_r.max(),
                        f"lambda_min = {eig_r.min():.2e}")

    eig_gap = np.linalg.eigvalsh(stats.r - stats.phi)
    all_ok &= test_item("Phi_k <= R_k (estimation error covariance PSD)",
                        eig_gap.min() > -1e-9 * eig_r.max(),
                        f"lambda_min(R - Phi) = {eig_gap.min():.2e}")

    for row in spatial_norm_audit(config, (16, 32, 64)):
        if row['path'] != 0:
            continue
        print(f"   📊 M={row['antennas']}: ||R_0|| = {row['spectral_norm']:.3f}, "
              f"tr/M = {row['normalized_trace']:.3f}")

    # ===========================================
    # 5. DETECTION
    # ===========================================
    print_header("5. DETECTION")

    rng = np.random.default_rng(11)
    b_true = (rng.standard_normal((4, 12)) + 1j * rng.standard_normal((4, 12))) / np.sqrt(2)
    b_hat = b_true + 0.1 * (rng.standard_normal((4, 12)) + 1j * rng.standard_normal((4, 12)))
    spec = ReceiverSpec(detectors=('MMSE', 'MF'), user_classes=(0, 0, 1, 1), noise_power=0.5)
    receivers = receiver_vectors(spec, b_hat)
    checks = symbol_level_check(receivers, b_true, b_hat, 0.5, n_symbols=40000, seed=3)
    worst = max(c.relative_error for c in checks)
    all_ok &= test_item("Symbol-level SINR matches exact SINR", worst < 0.05,
                        f"worst relative error {worst:.3f}")

    # ===========================================
    # 6. DETERMINISTIC EQUIVALENTS
    # ===========================================
    print_header("6. DETERMINISTIC EQUIVALENTS")

    problem = FixedPointProblem(rho=1.0, dim=4, signatures=np.stack([np.eye(4)] * 4),
                                functional=np.eye(4))
    solution = solve_fixed_point(problem)
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    all_ok &= test_item("Fixed point: golden ratio", np.allclose(solution.deltas, golden, atol=1e-10),
                        f"delta = {solution.deltas[0]:.10f} ({solution.iterations} iterations)")
    all_ok &= test_item("Derivative: 1/sqrt(5)",
                        np.allclose(solution.delta_primes, 1.0 / np.sqrt(5.0), atol=1e-8),
                        f"delta' = {solution.delta_primes[0]:.10f}")

    gamma = mf_iid_sinr(31.623, 31.623, 1.0, 64, 6, 3)
    all_ok &= test_item("MF i.i.d. closed form", abs(gamma - 31.50) < 0.005, f"gamma = {gamma:.4f}")

    x, antennas = 0.01, 64
    inp = DetEquivInput(
        antennas=antennas, noise_power=1.0, codes=np.ones((1, 1), dtype=complex),
        user_classes=[0], detectors=['MF'], powers=np.array([x]), gains=np.array([1.0]),
        phi=[np.eye(antennas)], r=[np.eye(antennas)],
    )
    mf = det_equiv_sinrs(inp).sinrs[0].gamma
    inp.detectors = ['MMSE']
    mmse = det_equiv_sinrs(inp).sinrs[0].gamma
    expected = x * antennas / (1.0 + x)
    all_ok &= test_item("Single-user MF oracle", abs(mf - expected) < 1e-9 * expected,
                        f"MF {mf:.4f} vs {expected:.4f}")
    all_ok &= test_item("MMSE ~ MF at -20 dB", abs(mmse - mf) < 0.01 * mf,
                        f"MMSE {mmse:.4f} vs MF {mf:.4f}")

    # ===========================================
    # 7. DATABASE
    # ===========================================
    print_header("7. DATABASE")

    db_url = os.getenv('MOMA_DB_URL', 'sqlite:///moma_results.db')
    try:
        from database_models import get_database_session
        session = get_database_session(db_url)
        session.close()
        test_item("Results database reachable", True, db_url)
    except Exception as e:
        all_ok &= test_item("Results database reachable", False, str(e)[:100])

    # ===========================================
    # SUMMARY
    # ===========================================
    print_header("DIAGNOSTIC SUMMARY")

    if all_ok:
        print("""
        ✅ ALL CHECKS PASSED

        python harness.py rate-vs-antennas
        python harness.py capacity-vs-rate
        """)
    else:
        print("""
        ❌ PROBLEMS DETECTED

        Fix the failed checks above before running sweeps.
        """)

    print(f"\n{'='*60}\n")
    return all_ok


if __name__ == '__main__':
    sys.exit(0 if run_diagnostics() else 1)
