"""Tests for the hierarchical spreading codebook and the resource mapping."""
import logging

import numpy as np
import pytest

from codebook import (
    ServiceClass,
    build_intra_class_codes,
    build_moma_codebook,
    build_orthogonal_base,
    build_resource_map,
    map_to_resources,
    partition_base,
    signature_diagonal,
    signature_matrix,
)
from exceptions import (
    DimensionMismatchError,
    ExhaustedCodespaceError,
    InvalidSizeError,
    MapSizeMismatchError,
    UnassignedUserError,
)
from system_config import DEFAULT_CONFIG, RBGeometry, SystemConfig


def make_classes(spec):
    return [ServiceClass(index=i + 1, k_c=k, n_c=n, power_w=0.1, target_rate=2.0 - i)
            for i, (n, k) in enumerate(spec)]


# ============================================================================
# ORTHOGONAL BASE
# ============================================================================


class TestOrthogonalBase:

    @pytest.mark.parametrize("kind,n", [('dft', 6), ('dft', 7), ('walsh-hadamard', 8)])
    def test_unitary(self, kind, n):
        base = build_orthogonal_base(n, kind)
        assert np.allclose(base.columns.conj().T @ base.columns, np.eye(n), atol=1e-12)

    def test_hadamard_needs_power_of_two(self):
        with pytest.raises(InvalidSizeError):
            build_orthogonal_base(6, 'walsh-hadamard')

    def test_rejects_empty_and_unknown(self):
        with pytest.raises(InvalidSizeError):
            build_orthogonal_base(0)
        with pytest.raises(InvalidSizeError):
            build_orthogonal_base(4, 'zadoff-chu')

    def test_partition_is_contiguous(self):
        base = build_orthogonal_base(6)
        parts = partition_base(base, [2, 4])
        assert parts[0].shape == (6, 2) and parts[1].shape == (6, 4)
        assert np.allclose(np.hstack(parts), base.columns)
        assert np.allclose(parts[0].conj().T @ parts[1], 0.0, atol=1e-12)

    def test_partition_width_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            partition_base(build_orthogonal_base(6), [2, 3])

    def test_overloading_order_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            partition_base(build_orthogonal_base(4), [2, 2], user_counts=[6, 2])
        assert 'not increasing' in caplog.text


# ============================================================================
# INTRA-CLASS CODES
# ============================================================================


class TestIntraClassCodes:

    @pytest.mark.parametrize("method", ['unit-modulus-random', 'binary-pn'])
    def test_unit_norm_distinct_columns(self, method):
        w = build_intra_class_codes(4, 6, method, seed=3)
        assert w.shape == (4, 6)
        assert np.allclose(np.linalg.norm(w, axis=0), 1.0)
        assert np.allclose(np.abs(w), 0.5)
        for i in range(6):
            for j in range(i):
                assert not np.allclose(w[:, i], w[:, j])

    def test_binary_pn_fills_the_codespace(self):
        w = build_intra_class_codes(2, 4, 'binary-pn', seed=1)
        signs = {tuple(np.sign(w[:, i].real).astype(int)) for i in range(4)}
        assert len(signs) == 4

    def test_binary_pn_exhausted(self):
        with pytest.raises(ExhaustedCodespaceError):
            build_intra_class_codes(2, 5, 'binary-pn', seed=1)

    def test_same_seed_same_codes(self):
        a = build_intra_class_codes(3, 5, seed=42)
        b = build_intra_class_codes(3, 5, seed=42)
        assert np.array_equal(a, b)

    def test_unknown_method(self):
        with pytest.raises(InvalidSizeError):
            build_intra_class_codes(3, 2, 'gold')


# ============================================================================
# MOMA CODEBOOK
# ============================================================================


class TestMomaCodebook:

    def test_codes_and_orthogonality(self):
        classes = make_classes([(2, 3), (4, 10)])
        codebook = build_moma_codebook(classes, seed=5)
        assert codebook.codes.shape == (13, 6)
        assert codebook.user_classes == [0] * 3 + [1] * 10
        assert np.allclose(np.linalg.norm(codebook.codes, axis=1), 1.0)

        gram = codebook.codes.conj() @ codebook.codes.T
        assert np.allclose(gram[:3, 3:], 0.0, atol=1e-12)

    def test_within_class_correlation_equals_w_correlation(self):
        codebook = build_moma_codebook(make_classes([(2, 3), (4, 10)]), seed=5)
        for j in range(3, 13):
            for k in range(3, 13):
                expected = abs(np.vdot(codebook.w(j), codebook.w(k)))
                assert abs(np.vdot(codebook.code(j), codebook.code(k))) == pytest.approx(expected, abs=1e-12)

    def test_class_codes_are_stable_when_a_class_grows(self):
        small = build_moma_codebook(make_classes([(1, 1), (2, 2)]), seed=9)
        large = build_moma_codebook(make_classes([(1, 1), (2, 4)]), seed=9)
        assert np.allclose(small.codes, large.codes[:3])

    def test_empty_class(self):
        codebook = build_moma_codebook(make_classes([(2, 0), (2, 3)]), seed=1)
        assert codebook.n_users == 3
        assert codebook.spreading_length == 4

    def test_unassigned_user(self):
        codebook = build_moma_codebook(make_classes([(2, 2)]), seed=1)
        with pytest.raises(UnassignedUserError):
            codebook.code(2)

    def test_signature_diagonal(self):
        c = np.array([1.0, 1j, -1.0]) / np.sqrt(3)
        assert np.allclose(np.diag(signature_matrix(c, 4)), signature_diagonal(c, 4))
        assert signature_diagonal(c, 4)[:4].tolist() == [c[0]] * 4

    def test_default_scenario_codebook(self):
        config = SystemConfig.from_dict(DEFAULT_CONFIG)
        codebook = build_moma_codebook(config.classes, config.base_kind, config.w_method,
                                       config.codebook_seed)
        assert codebook.codes.shape == (24, 6)
        assert codebook.user_classes == [0] * 6 + [1] * 18

        gram = codebook.codes.conj() @ codebook.codes.T
        assert np.max(np.abs(gram[:6, 6:])) <= 1e-12
        for members in (range(0, 6), range(6, 24)):
            w = np.stack([codebook.w(k) for k in members], axis=1)
            block = gram[np.ix_(list(members), list(members))]
            assert np.max(np.abs(block - w.conj().T @ w)) <= 1e-12


# ============================================================================
# RESOURCE MAP
# ============================================================================


class TestResourceMap:

    def test_intra_rb(self):
        resource_map = build_resource_map(RBGeometry(n_rbs=3, data_mapping='intra-rb'), 3)
        assert resource_map.coordinates == ((3, 0), (3, 1), (3, 2))

    def test_per_rb_time_and_frequency(self):
        in_time = build_resource_map(RBGeometry(n_rbs=3, data_mapping='per-rb'), 3)
        assert in_time.coordinates == ((3, 0), (17, 0), (31, 0))
        in_freq = build_resource_map(
            RBGeometry(n_rbs=3, data_mapping='per-rb', adjacency='frequency'), 3)
        assert in_freq.coordinates == ((3, 0), (3, 12), (3, 24))

    def test_does_not_fit(self):
        with pytest.raises(MapSizeMismatchError):
            build_resource_map(RBGeometry(n_rbs=2, data_mapping='per-rb'), 3)
        with pytest.raises(MapSizeMismatchError):
            build_resource_map(RBGeometry(data_mapping='intra-rb', data_subcarrier=10), 3)

    def test_map_to_resources(self):
        resource_map = build_resource_map(RBGeometry(n_rbs=2, data_mapping='intra-rb'), 2)
        c = np.array([1.0, -1.0]) / np.sqrt(2)
        samples = map_to_resources(c, 1j, 4.0, resource_map)
        assert [s[:2] for s in samples] == [(3, 0), (3, 1)]
        assert samples[0][2] == pytest.approx(2j / np.sqrt(2))

        with pytest.raises(MapSizeMismatchError):
            map_to_resources(np.ones(3), 1.0, 1.0, resource_map)
