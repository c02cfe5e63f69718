"""Tests for the correlated MIMO-OFDM channel and its second-order statistics."""
import math

import numpy as np
import pytest

from channel import (
    PathProfile,
    spatial_norm_audit,
    build_R_k,
    build_second_order_stats,
    build_spatial_corr,
    build_user_models,
    draw_channel,
    hermitian_inverse,
    is_flat,
    physical_angles,
    psd_sqrt,
    temporal_corr,
    trial_rng,
    ula_response,
)
from codebook import build_resource_map
from conftest import SMALL_CLASSES, random_psd
from estimation import build_pilot_pattern
from exceptions import CovarianceNotPSDError, InvalidSizeError, SingularMatrixError
from system_config import Numerology


def j0_series(x, terms=40):
    return sum((-1) ** m * (x / 2.0) ** (2 * m) / math.factorial(m) ** 2 for m in range(terms))


def stats_for(config, user=0, gamma_ce=10.0, perfect=False):
    models = build_user_models(config)
    resource_map = build_resource_map(config.geometry, config.spreading_length)
    pilots = build_pilot_pattern(config)
    stats = build_second_order_stats(models[user], resource_map, pilots.coords(user), gamma_ce,
                                     config.numerology, perfect=perfect)
    return models[user], resource_map, pilots, stats


# ============================================================================
# CORRELATION MODELS
# ============================================================================


class TestTemporalCorrelation:

    def test_matches_bessel_series(self):
        numerology = Numerology()
        f_d = 1.0 / (2.0 * np.pi * numerology.symbol_duration)
        dts = np.array([0.0, 0.3, 1.0, 2.5, 4.0])
        expected = [j0_series(x) for x in dts]
        assert np.allclose(temporal_corr(f_d, dts, numerology), expected, atol=1e-10)

    def test_static_channel(self):
        assert np.allclose(temporal_corr(0.0, np.arange(5), Numerology()), 1.0)

    def test_negative_doppler(self):
        with pytest.raises(InvalidSizeError):
            temporal_corr(-1.0, 1.0, Numerology())


class TestSpatialCorrelation:

    def test_steering_vectors_unit_norm(self):
        a = ula_response(16, physical_angles(8, 0.3))
        assert np.allclose(np.linalg.norm(a, axis=0), 1.0)

    def test_physical_trace_and_rank(self):
        r = build_spatial_corr(16, 4, physical_angles(4, 0.5), 0.25)
        assert np.real(np.trace(r)) == pytest.approx(0.25 * 16)
        assert np.linalg.matrix_rank(r, tol=1e-9) == 4
        assert np.allclose(r, r.conj().T)

    def test_identity_model(self):
        assert np.allclose(build_spatial_corr(8, 4, None, 0.5, mode='identity'), 0.5 * np.eye(8))

    def test_too_many_directions(self):
        with pytest.raises(InvalidSizeError):
            build_spatial_corr(4, 8, physical_angles(8, 0.0), 1.0)

    def test_audit_normalized_trace(self, small_config):
        rows = spatial_norm_audit(small_config, (4, 8))
        assert len(rows) == 2 * 9
        for row in rows:
            assert row['normalized_trace'] == pytest.approx(row['variance'], rel=1e-9)


class TestPathProfile:

    def test_variances_must_sum_to_one(self):
        with pytest.raises(InvalidSizeError):
            PathProfile((0.0, 1e-7), (0.5, 0.4))

    def test_delays_increasing(self):
        with pytest.raises(InvalidSizeError):
            PathProfile((1e-7, 0.0), (0.5, 0.5))

    def test_cyclic_prefix(self):
        with pytest.raises(InvalidSizeError):
            PathProfile((0.0, 1e-5), (0.5, 0.5)).check_cyclic_prefix(Numerology())
        PathProfile((0.0, 5e-6), (0.5, 0.5)).check_cyclic_prefix(Numerology())


# ============================================================================
# LINK MODELS
# ============================================================================


class TestUserModels:

    def test_gain_from_snr(self, small_config):
        models = build_user_models(small_config)
        assert len(models) == small_config.n_users
        for model in models:
            service = small_config.classes[model.class_position]
            snr = model.gain * service.power_w / small_config.noise_power
            assert 10 * np.log10(snr) == pytest.approx(service.snr_db)

    def test_total_spatial_power(self, small_config):
        for model in build_user_models(small_config):
            total = np.real(np.trace(model.spatial_stack.sum(axis=0)))
            assert total == pytest.approx(small_config.antennas)

    def test_deterministic(self, small_config):
        a = build_user_models(small_config)
        b = build_user_models(small_config)
        assert all(np.array_equal(x.spatial_stack, y.spatial_stack) for x, y in zip(a, b))

    def test_gain_spread(self, config_factory):
        classes = [dict(c, gain_spread_db=3.0) for c in SMALL_CLASSES]
        config = config_factory(codebook={'classes': classes})
        gains = {m.gain for m in build_user_models(config) if m.class_position == 1}
        assert len(gains) == 4


# ============================================================================
# LINEAR ALGEBRA HELPERS
# ============================================================================


class TestHelpers:

    def test_psd_sqrt(self, rng):
        a = random_psd(rng, 6, rank=3)
        s = psd_sqrt(a)
        assert np.allclose(s @ s, a, atol=1e-10)
        assert np.allclose(s, s.conj().T)

    def test_psd_sqrt_rejects_indefinite(self):
        with pytest.raises(CovarianceNotPSDError):
            psd_sqrt(np.diag([1.0, -0.5]))

    def test_hermitian_inverse(self, rng):
        a = random_psd(rng, 5) + 0.1 * np.eye(5)
        assert np.allclose(hermitian_inverse(a) @ a, np.eye(5), atol=1e-10)
        with pytest.raises(SingularMatrixError):
            hermitian_inverse(np.zeros((3, 3)))

    def test_trial_streams_independent_of_order(self):
        first = trial_rng(1, 5, 2).standard_normal(3)
        trial_rng(1, 4, 2).standard_normal(3)
        assert np.array_equal(first, trial_rng(1, 5, 2).standard_normal(3))
        assert not np.array_equal(first, trial_rng(1, 5, 3).standard_normal(3))


# ============================================================================
# SECOND-ORDER STATISTICS
# ============================================================================


class TestSecondOrderStats:

    def test_r_k_hermitian_psd(self, small_config):
        _, _, _, stats = stats_for(small_config)
        assert np.allclose(stats.r, stats.r.conj().T)
        eig = np.linalg.eigvalsh(stats.r)
        assert eig.min() > -1e-10 * eig.max()

    def test_diagonal_blocks(self, small_config):
        model, _, _, stats = stats_for(small_config)
        m = small_config.antennas
        for i in range(small_config.spreading_length):
            assert np.allclose(stats.r[i * m:(i + 1) * m, i * m:(i + 1) * m], stats.r_check)
        assert np.allclose(stats.r_check, model.spatial_stack.sum(axis=0))

    def test_phi_below_r(self, small_config):
        _, _, _, stats = stats_for(small_config)
        eig = np.linalg.eigvalsh(stats.r - stats.phi)
        assert eig.min() > -1e-9

    def test_better_pilots_give_larger_phi(self, small_config):
        _, _, _, low = stats_for(small_config, gamma_ce=0.1)
        _, _, _, high = stats_for(small_config, gamma_ce=100.0)
        assert np.real(np.trace(high.phi)) > np.real(np.trace(low.phi))

    def test_perfect_flat_phi_equals_r(self, flat_config):
        _, _, _, stats = stats_for(flat_config, perfect=True)
        assert np.allclose(stats.phi, stats.r, atol=1e-9)
        assert np.allclose(stats.phi_check, stats.r_check, atol=1e-9)

    def test_is_flat(self, small_config, flat_config):
        model, resource_map, _, _ = stats_for(flat_config)
        assert is_flat(model, resource_map)
        model, resource_map, _, _ = stats_for(small_config)
        assert not is_flat(model, resource_map)


# ============================================================================
# CHANNEL DRAWS
# ============================================================================


class TestDrawChannel:

    def test_shapes(self, small_config):
        model, resource_map, pilots, _ = stats_for(small_config)
        single = draw_channel(model, resource_map, pilots.coords(0), small_config.numerology, seed=1)
        m = small_config.antennas
        assert single.data.shape == (small_config.spreading_length * m,)
        assert single.pilots.shape == (len(pilots.coords(0)) * m,)

        batch = draw_channel(model, resource_map, pilots.coords(0), small_config.numerology,
                             seed=1, size=5)
        assert batch.data.shape == (5, small_config.spreading_length * m)

    def test_same_seed_same_draw(self, small_config):
        model, resource_map, pilots, _ = stats_for(small_config)
        a = draw_channel(model, resource_map, pilots.coords(0), small_config.numerology, seed=7)
        b = draw_channel(model, resource_map, pilots.coords(0), small_config.numerology, seed=7)
        assert np.array_equal(a.data, b.data)

    def test_empirical_covariance(self, config_factory):
        config = config_factory(antennas=2)
        model, resource_map, pilots, _ = stats_for(config)
        draws = draw_channel(model, resource_map, pilots.coords(0), config.numerology,
                             seed=3, size=40000)
        empirical = draws.data.T @ draws.data.conj() / draws.data.shape[0]
        assert np.allclose(empirical, build_R_k(model, resource_map, config.numerology), atol=0.05)

    def test_relative_covariance_error_etu(self, config_factory):
        config = config_factory(antennas=8)
        model, resource_map, pilots, _ = stats_for(config)
        draws = draw_channel(model, resource_map, pilots.coords(0), config.numerology,
                             seed=4, size=20000)
        empirical = draws.data.T @ draws.data.conj() / draws.data.shape[0]
        r = build_R_k(model, resource_map, config.numerology)
        assert np.linalg.norm(empirical - r) / np.linalg.norm(r) < 0.05
