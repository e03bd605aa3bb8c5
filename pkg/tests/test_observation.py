import numpy as np
import pytest

from chanest.errors import InvalidParameterError
from chanest.observation import (
    NoiseModel,
    ObservationOperator,
    PHASE_SHIFT,
    PILOT_SELECTION,
    build_phase_shift_operator,
    build_pilot_selection_operator,
    observe,
)

from conftest import complex_normal


class TestPhaseShift:
    def test_constant_modulus_every_entry(self):
        op = build_phase_shift_operator(32, 128, rng_seed=7)
        np.testing.assert_allclose(np.abs(op.matrix), 1.0 / np.sqrt(32), rtol=1e-14)

    def test_row_norms(self):
        op = build_phase_shift_operator(32, 128, rng_seed=7)
        np.testing.assert_allclose(np.linalg.norm(op.matrix, axis=1), 2.0, rtol=1e-12)

    def test_entry_mean_vanishes(self):
        # ~1e6 entries across independent draws; mean is 0 within 3 sigma
        total = np.zeros((), dtype=np.complex128)
        count = 0
        for seed in range(250):
            op = build_phase_shift_operator(32, 128, rng_seed=1000 + seed)
            total += op.matrix.sum()
            count += op.matrix.size
        mean = total / count
        sigma = (1.0 / np.sqrt(32)) / np.sqrt(2.0 * count)
        assert abs(mean.real) < 3 * sigma
        assert abs(mean.imag) < 3 * sigma

    def test_rank_at_most_m(self, rng):
        op = build_phase_shift_operator(8, 32, rng_seed=3)
        assert np.linalg.matrix_rank(op.dense()) <= 8

    def test_underdetermined_contract(self):
        with pytest.raises(InvalidParameterError):
            build_phase_shift_operator(128, 128, rng_seed=0)
        with pytest.raises(InvalidParameterError):
            build_phase_shift_operator(0, 4, rng_seed=0)

    def test_determinism(self):
        a = build_phase_shift_operator(8, 32, rng_seed=5)
        b = build_phase_shift_operator(8, 32, rng_seed=5)
        np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_adjoint_matches_dense(self, rng):
        op = build_phase_shift_operator(8, 32, rng_seed=5)
        y = complex_normal(rng, 8)
        np.testing.assert_allclose(op.adjoint(y), op.dense().conj().T @ y, rtol=1e-12)


class TestPilotSelection:
    def test_lattice_default_layout(self):
        op = build_pilot_selection_operator("lattice", 20, 12, 14)
        A = op.dense()
        gram = A.T @ A
        assert np.count_nonzero(gram) == 20
        np.testing.assert_array_equal(np.unique(np.diag(gram))[-1], 1.0)
        # 4 subcarriers x 5 time slots
        subs = np.unique(op.indices % 12)
        times = np.unique(op.indices // 12)
        np.testing.assert_array_equal(subs, [1, 4, 7, 10])
        np.testing.assert_array_equal(times, [0, 3, 6, 10, 13])

    def test_single_one_per_row(self):
        op = build_pilot_selection_operator("lattice", 20, 12, 14)
        np.testing.assert_array_equal(op.dense().sum(axis=1), 1.0)

    def test_random_layout_determinism(self):
        a = build_pilot_selection_operator("random", 20, 12, 14, rng_seed=11)
        b = build_pilot_selection_operator("random", 20, 12, 14, rng_seed=11)
        np.testing.assert_array_equal(a.indices, b.indices)
        assert len(np.unique(a.indices)) == 20

    def test_all_ones_input(self):
        op = build_pilot_selection_operator("random", 20, 12, 14, rng_seed=1)
        np.testing.assert_array_equal(op.apply(np.ones(168)), np.ones(20))

    def test_rank_exactly_m(self):
        op = build_pilot_selection_operator("lattice", 20, 12, 14)
        assert np.linalg.matrix_rank(op.dense()) == 20

    def test_adjoint_scatters(self, rng):
        op = build_pilot_selection_operator("random", 5, 4, 6, rng_seed=2)
        y = complex_normal(rng, 5)
        out = op.adjoint(y)
        np.testing.assert_array_equal(out[op.indices], y)
        mask = np.ones(24, dtype=bool)
        mask[op.indices] = False
        assert np.all(out[mask] == 0)

    def test_too_many_pilots(self):
        with pytest.raises(InvalidParameterError):
            build_pilot_selection_operator("random", 169, 12, 14, rng_seed=0)

    def test_unknown_layout(self):
        with pytest.raises(InvalidParameterError):
            build_pilot_selection_operator("hexagonal", 20, 12, 14)

    def test_duplicate_indices_rejected(self):
        with pytest.raises(InvalidParameterError):
            ObservationOperator(PILOT_SELECTION, 3, 10,
                                indices=np.array([1, 1, 2]))


class TestObserve:
    def test_noiseless_limit(self, rng):
        op = build_phase_shift_operator(8, 32, rng_seed=5)
        h = complex_normal(rng, 32)
        y = observe(h, op, NoiseModel(0.0), rng_seed=0)
        np.testing.assert_allclose(y, op.apply(h), rtol=1e-14)

    def test_noise_power_matches_variance(self, rng):
        op = build_phase_shift_operator(8, 32, rng_seed=5)
        h = complex_normal(rng, 32)
        noise = NoiseModel(0.37)
        y = observe(np.tile(h, (100_000, 1)), op, noise, rng_seed=99)
        power = np.mean(np.abs(y - op.apply(h)) ** 2)
        assert abs(power - noise.variance) / noise.variance < 0.02

    def test_selection_semantics(self, rng):
        op = build_pilot_selection_operator("lattice", 20, 12, 14)
        h = complex_normal(rng, 168)
        noise = NoiseModel(1e-3)
        y = observe(h, op, noise, rng_seed=4)
        assert np.max(np.abs(y - h[op.indices])) < 0.5  # noise-sized deviation
        np.testing.assert_allclose(
            observe(h, op, NoiseModel(0.0), rng_seed=4), h[op.indices])

    def test_linear_in_h_for_fixed_noise(self, rng):
        op = build_phase_shift_operator(8, 32, rng_seed=5)
        noise = NoiseModel(0.5)
        h1, h2 = complex_normal(rng, 32), complex_normal(rng, 32)
        alpha = 1.7 - 0.3j
        base = observe(np.zeros(32, dtype=complex), op, noise, rng_seed=8)
        lhs = observe(alpha * h1 + h2, op, noise, rng_seed=8) - base
        rhs = (observe(h1, op, noise, rng_seed=8) - base) * alpha \
            + (observe(h2, op, noise, rng_seed=8) - base)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_determinism(self, rng):
        op = build_phase_shift_operator(8, 32, rng_seed=5)
        h = complex_normal(rng, 32)
        a = observe(h, op, NoiseModel(1.0), rng_seed=1)
        b = observe(h, op, NoiseModel(1.0), rng_seed=1)
        np.testing.assert_array_equal(a, b)

    def test_dimension_mismatch(self, rng):
        op = build_phase_shift_operator(8, 32, rng_seed=5)
        with pytest.raises(InvalidParameterError):
            observe(complex_normal(rng, 16), op, NoiseModel(1.0), rng_seed=0)


class TestNoiseModel:
    def test_snr_convention(self):
        assert NoiseModel(0.01).snr == pytest.approx(100.0)
        assert NoiseModel.from_snr_db(20.0).variance == pytest.approx(0.01)
        assert NoiseModel(0.0).snr == np.inf

    def test_negative_variance_rejected(self):
        with pytest.raises(InvalidParameterError):
            NoiseModel(-1.0)

    def test_component_variances(self, rng):
        n = NoiseModel(2.0).sample((200_000,), rng)
        assert abs(np.var(n.real) - 1.0) < 0.02
        assert abs(np.var(n.imag) - 1.0) < 0.02
