"""Tests for MF/MMSE receivers, the exact SINR and Monte Carlo rates."""
import numpy as np
import pandas as pd
import pytest

from detection import (
    SINR_COLUMNS,
    ReceiverSpec,
    effective_signatures,
    ergodic_rate,
    ergodic_rate_mc,
    export_sinr_samples,
    instantaneous_sinr,
    instantaneous_sinrs,
    receiver_vector,
    receiver_vectors,
    sinr_terms,
    symbol_level_check,
)
from exceptions import (
    DimensionMismatchError,
    ExportError,
    InvalidSizeError,
    NonpositiveDenominatorError,
)


def random_signatures(rng, users=4, dim=12, error=0.1):
    shape = (users, dim)
    b_true = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    b_hat = b_true + error * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return b_true, b_hat


@pytest.fixture
def spec():
    return ReceiverSpec(detectors=('MMSE', 'MF'), user_classes=(0, 0, 1, 1), noise_power=0.5)


# ============================================================================
# SIGNATURES AND RECEIVERS
# ============================================================================


class TestReceivers:

    def test_effective_signatures(self):
        codes = np.array([[1.0, 1j], [1.0, -1.0]]) / np.sqrt(2)
        channels = np.ones((2, 6), dtype=complex)
        b = effective_signatures(codes, channels, np.array([2.0, 1.0]), 3)
        assert b.shape == (2, 6)
        assert np.allclose(b[0, :3], 2.0 / np.sqrt(2))
        assert np.allclose(b[0, 3:], 2j / np.sqrt(2))

        with pytest.raises(DimensionMismatchError):
            effective_signatures(codes, np.ones((2, 5)), np.ones(2), 3)

    def test_mf_uses_estimate(self, rng, spec):
        _, b_hat = random_signatures(rng)
        receivers = receiver_vectors(spec, b_hat)
        assert np.allclose(receivers[2:], b_hat[2:])

    def test_mmse_matches_explicit_inverse(self, rng, spec):
        _, b_hat = random_signatures(rng)
        receivers = receiver_vectors(spec, b_hat)
        members = b_hat[:2]
        covariance = members.T @ members.conj() + 0.5 * np.eye(12)
        for k in range(2):
            assert np.allclose(receivers[k], np.linalg.solve(covariance, b_hat[k]))
            assert np.allclose(receiver_vector(k, spec, b_hat), receivers[k])

    def test_mmse_scope_all(self, rng):
        _, b_hat = random_signatures(rng)
        spec = ReceiverSpec(('MMSE', 'MF'), (0, 0, 1, 1), 0.5, mmse_scope='all')
        covariance = b_hat.T @ b_hat.conj() + 0.5 * np.eye(12)
        assert np.allclose(receiver_vectors(spec, b_hat)[0], np.linalg.solve(covariance, b_hat[0]))

    def test_spec_validation(self):
        with pytest.raises(InvalidSizeError):
            ReceiverSpec(('ZF',), (0,), 1.0)
        with pytest.raises(InvalidSizeError):
            ReceiverSpec(('MF',), (0,), 0.0)


# ============================================================================
# EXACT SINR
# ============================================================================


class TestSinr:

    def test_single_user_perfect_csi(self, rng):
        b, _ = random_signatures(rng, users=1)
        spec = ReceiverSpec(('MF',), (0,), 0.25)
        samples = instantaneous_sinrs(receiver_vectors(spec, b), b, b, 0.25, spec=spec)
        assert samples[0].gamma == pytest.approx(np.sum(np.abs(b) ** 2) / 0.25)
        assert samples[0].self_error == pytest.approx(0.0, abs=1e-20)

    def test_terms_without_estimation_error(self, rng, spec):
        b, _ = random_signatures(rng)
        receivers = receiver_vectors(spec, b)
        terms = sinr_terms(receivers, b, b, 0.5)
        assert np.allclose(terms['self_error'], 0.0)
        assert np.allclose(terms['denominator'], terms['noise'] + terms['interference'])

    def test_mmse_beats_mf_with_perfect_csi(self, rng):
        b, _ = random_signatures(rng, users=6, dim=8)
        user_classes = (0,) * 6
        mf = ReceiverSpec(('MF',), user_classes, 0.3)
        mmse = ReceiverSpec(('MMSE',), user_classes, 0.3)
        gamma_mf = [s.gamma for s in instantaneous_sinrs(receiver_vectors(mf, b), b, b, 0.3)]
        gamma_mmse = [s.gamma for s in instantaneous_sinrs(receiver_vectors(mmse, b), b, b, 0.3)]
        assert all(g_mmse >= g_mf * (1 - 1e-9) for g_mf, g_mmse in zip(gamma_mf, gamma_mmse))

    def test_mmse_never_below_mf_over_realizations(self, rng):
        user_classes = (0,) * 4
        mf = ReceiverSpec(('MF',), user_classes, 0.3)
        mmse = ReceiverSpec(('MMSE',), user_classes, 0.3)
        violations = 0
        for _ in range(1000):
            b, _ = random_signatures(rng, users=4, dim=8)
            gamma_mf = np.array([s.gamma for s in instantaneous_sinrs(receiver_vectors(mf, b), b, b, 0.3)])
            gamma_mmse = np.array([s.gamma for s in instantaneous_sinrs(receiver_vectors(mmse, b), b, b, 0.3)])
            violations += int(np.sum(gamma_mmse < gamma_mf * (1 - 1e-9)))
        assert violations == 0

    @pytest.mark.parametrize('detector', ['MF', 'MMSE'])
    def test_common_scaling_leaves_sinr_unchanged(self, rng, detector):
        b_true, b_hat = random_signatures(rng)
        spec = ReceiverSpec((detector,), (0,) * 4, 0.5)
        base = [s.gamma for s in instantaneous_sinrs(receiver_vectors(spec, b_hat), b_true, b_hat, 0.5)]

        alpha = 3.0
        scaled_spec = ReceiverSpec((detector,), (0,) * 4, 0.5 * alpha ** 2)
        scaled = [s.gamma for s in instantaneous_sinrs(receiver_vectors(scaled_spec, alpha * b_hat),
                                                       alpha * b_true, alpha * b_hat, 0.5 * alpha ** 2)]
        assert np.allclose(scaled, base, rtol=1e-10)

    def test_receiver_scaling_leaves_sinr_unchanged(self, rng, spec):
        b_true, b_hat = random_signatures(rng)
        receivers = receiver_vectors(spec, b_hat)
        base = [s.gamma for s in instantaneous_sinrs(receivers, b_true, b_hat, 0.5)]
        scaled = [s.gamma for s in instantaneous_sinrs((2.0 - 1.0j) * receivers, b_true, b_hat, 0.5)]
        assert np.allclose(scaled, base, rtol=1e-10)

    @pytest.mark.parametrize('detector', ['MF', 'MMSE'])
    def test_sinr_falls_as_interferer_grows(self, rng, detector):
        b, _ = random_signatures(rng, dim=6)
        spec = ReceiverSpec((detector,), (0,) * 4, 0.2)
        gammas = []
        for amplitude in (0.5, 1.0, 2.0, 4.0):
            scaled = b.copy()
            scaled[1] *= amplitude
            samples = instantaneous_sinrs(receiver_vectors(spec, scaled), scaled, scaled, 0.2)
            gammas.append(samples[0].gamma)
        assert all(later <= earlier * (1 + 1e-12) for earlier, later in zip(gammas, gammas[1:]))
        assert gammas[-1] < gammas[0]

    def test_single_and_batch_agree(self, rng, spec):
        b_true, b_hat = random_signatures(rng)
        receivers = receiver_vectors(spec, b_hat)
        batch = instantaneous_sinrs(receivers, b_true, b_hat, 0.5, trial=3, spec=spec)
        for k in range(4):
            single = instantaneous_sinr(k, receivers[k], b_true, b_hat, 0.5, trial=3)
            assert single.gamma == pytest.approx(batch[k].gamma, rel=1e-10)
            assert batch[k].detector == spec.detector(k)
            assert batch[k].trial == 3

    def test_nonpositive_denominator(self):
        b = np.array([[1.0 + 0j, 0.5]])
        with pytest.raises(NonpositiveDenominatorError):
            instantaneous_sinrs(b.copy(), b, b, 0.0)

    def test_symbol_level_agreement(self, rng, spec):
        b_true, b_hat = random_signatures(rng)
        receivers = receiver_vectors(spec, b_hat)
        for check in symbol_level_check(receivers, b_true, b_hat, 0.5, n_symbols=40000, seed=8):
            assert check.relative_error < 0.05


# ============================================================================
# RATES AND EXPORT
# ============================================================================


class TestRates:

    def test_ergodic_rate(self):
        mean, se = ergodic_rate([0.0, 1.0, 3.0])
        assert mean == pytest.approx(1.0)
        assert se == pytest.approx(1.0 / np.sqrt(3))

    def test_single_trial(self):
        assert ergodic_rate([1.0]) == (1.0, 0.0)

    def test_empty(self):
        with pytest.raises(InvalidSizeError):
            ergodic_rate([])

    def test_monte_carlo_driver(self):
        mean, _ = ergodic_rate_mc(1, 4, seed=0, draw_trial=lambda t, s: [0.0, 3.0])
        assert mean == pytest.approx(2.0)
        with pytest.raises(InvalidSizeError):
            ergodic_rate_mc(0, 0, 0, lambda t, s: [1.0])

    def test_export(self, rng, spec, tmp_path):
        b_true, b_hat = random_signatures(rng)
        samples = instantaneous_sinrs(receiver_vectors(spec, b_hat), b_true, b_hat, 0.5, spec=spec)
        path = export_sinr_samples(samples, str(tmp_path / 'sinr.csv'))
        frame = pd.read_csv(path)
        assert list(frame.columns) == SINR_COLUMNS
        assert frame['class'].tolist() == [1, 1, 2, 2]
        assert np.allclose(frame['rate_bits'], np.log2(1 + frame['gamma_linear']))

        with pytest.raises(ExportError):
            export_sinr_samples([], str(tmp_path / 'empty.csv'))
