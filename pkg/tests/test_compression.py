import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from flwsim.compression import (Compressor, CompressorSpec, ErrorState, Mask,
                                SparseUpdate, apply_mask, block_scaled_sign,
                                contraction_check, delta_of, ef_compress,
                                quant_stochastic_uniform, quant_ternary,
                                r_top_k_mask, rand_k_mask, random_sparsify,
                                scaled_sign, sign_quant, solve_keep_probs,
                                sync_mask_schedule, top_k_mask)
from flwsim.errors import ContractViolation


def rng(seed=0):
    return np.random.default_rng(seed)


class TestRandomSparsify:
    def test_symmetric_pair_solution(self):
        # two equal coordinates with unit variance slack: p = 1/2 each, lam = 1/2
        p, lam = solve_keep_probs(np.array([1.0, 1.0]), 1.0)
        assert np.allclose(p, [0.5, 0.5], atol=1e-9)
        assert abs(lam - 0.5) <= 1e-9
        upd = random_sparsify(np.array([1.0, 1.0]), 1.0, rng(1))
        assert all(abs(v - 2.0) < 1e-9 for v in upd.values)

    def test_single_nonzero_keep_probability(self):
        # variance cap g^2/p <= (1+eps) g^2 pins p = 1/(1+eps); the kept
        # value rescales to (1+eps) g
        p, _ = solve_keep_probs(np.array([0.0, 0.0, 5.0]), 1.0)
        assert abs(p[2] - 0.5) <= 1e-9
        assert p[0] == p[1] == 0.0

    def test_tiny_epsilon_forces_deterministic_keep(self):
        g = np.array([0.0, 3.0])
        p, _ = solve_keep_probs(g, 1e-12)
        assert p[1] >= 1.0 - 1e-9
        upd = random_sparsify(g, 1e-12, rng(0))
        assert np.allclose(upd.to_dense(), g)

    def test_zero_vector_gives_empty_update(self):
        upd = random_sparsify(np.zeros(4), 1.0, rng(0))
        assert upd.nnz == 0

    def test_non_finite_input_rejected(self):
        with pytest.raises(ContractViolation):
            random_sparsify(np.array([1.0, np.inf]), 1.0, rng(0))

    def test_unbiased_with_large_epsilon(self):
        # high epsilon drives keep probabilities low; the mean stays on target
        g = np.array([1.0, -2.0, 0.5, 3.0])
        gen = rng(7)
        draws = 20_000
        p, _ = solve_keep_probs(g, 50.0)
        acc = np.zeros_like(g)
        for _ in range(draws):
            acc += random_sparsify(g, 50.0, gen).to_dense()
        mean = acc / draws
        sigma = np.sqrt(g * g * (1.0 - p) / p / draws)
        assert np.all(np.abs(mean - g) <= 3.0 * sigma + 1e-12)


class TestMasks:
    def test_top_k_by_magnitude(self):
        mask = top_k_mask(np.array([0.3, -1.2, 0.7, 0.1]), 2)
        assert np.array_equal(mask.bits, [0, 1, 1, 0])

    def test_top_k_full_keeps_everything(self):
        assert top_k_mask(np.ones(5), 5).nnz == 5

    def test_top_k_tie_break_lowest_index(self):
        mask = top_k_mask(np.array([1.0, 1.0, 1.0]), 2)
        assert np.array_equal(mask.bits, [1, 1, 0])

    def test_rand_k_full(self):
        assert rand_k_mask(4, 4, rng(0)).nnz == 4

    def test_rand_k_marginal_frequency(self):
        d, k, draws = 4, 2, 20_000
        counts = np.zeros(d)
        gen = rng(3)
        for _ in range(draws):
            counts += rand_k_mask(d, k, gen).bits
        freq = counts / draws
        sigma = np.sqrt(0.5 * 0.5 / draws)
        assert np.all(np.abs(freq - k / d) <= 3.0 * sigma)

    def test_r_top_k_degenerate_equals_top_k(self):
        g = np.array([0.1, 5.0, -3.0, 0.7])
        assert r_top_k_mask(g, 2, 2, rng(0)) == top_k_mask(g, 2)

    def test_r_top_k_subset_of_top_r(self):
        g = np.array([0.1, 5.0, -3.0, 0.7, 2.0])
        for seed in range(20):
            mask = r_top_k_mask(g, 3, 2, rng(seed))
            assert set(np.flatnonzero(mask.bits)) <= {1, 2, 4}

    def test_k_range_validation(self):
        with pytest.raises(ContractViolation):
            top_k_mask(np.ones(3), 0)
        with pytest.raises(ContractViolation):
            rand_k_mask(3, 4, rng(0))
        with pytest.raises(ContractViolation):
            r_top_k_mask(np.ones(4), 2, 3, rng(0))


class TestSyncMask:
    def test_cyclic_blocks(self):
        m1 = sync_mask_schedule(4, 0.5, 2, 1)
        m2 = sync_mask_schedule(4, 0.5, 2, 2)
        m3 = sync_mask_schedule(4, 0.5, 2, 3)
        assert np.array_equal(m1.bits, [1, 1, 0, 0])
        assert np.array_equal(m2.bits, [0, 0, 1, 1])
        assert np.array_equal(m3.bits, m1.bits)

    def test_full_level_is_all_ones(self):
        assert sync_mask_schedule(6, 1.0, 1, 5).nnz == 6

    def test_infeasible_pair_rejected(self):
        with pytest.raises(ContractViolation):
            sync_mask_schedule(8, 0.25, 2, 1)

    @pytest.mark.parametrize("d,phi,tau", [(4, 0.5, 2), (10, 0.3, 4),
                                           (7, 0.35, 5), (16, 0.125, 8)])
    def test_every_coordinate_selected_within_tau(self, d, phi, tau):
        horizon = 3 * tau
        last_seen = {c: 0 for c in range(d)}
        for t in range(1, horizon + 1):
            mask = sync_mask_schedule(d, phi, tau, t)
            for c in np.flatnonzero(mask.bits):
                assert t - last_seen[c] <= tau
                last_seen[c] = t
        assert all(horizon - last <= tau for last in last_seen.values())


class TestApplyMask:
    def test_basic(self):
        upd = apply_mask(np.array([1.0, 2.0, 3.0]), Mask(np.array([1, 0, 1])))
        assert list(upd.indices) == [1, 3]
        assert list(upd.values) == [1.0, 3.0]

    def test_empty_mask(self):
        upd = apply_mask(np.ones(3), Mask(np.zeros(3, dtype=np.uint8)))
        assert upd.nnz == 0

    def test_reconstruction_matches_elementwise_product(self):
        gen = rng(4)
        for _ in range(100):
            d = int(gen.integers(1, 30))
            g = gen.standard_normal(d)
            bits = (gen.random(d) < 0.4).astype(np.uint8)
            dense = apply_mask(g, Mask(bits)).to_dense()
            assert np.array_equal(dense, g * bits)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            apply_mask(np.ones(3), Mask(np.array([1, 0])))


class TestSparseUpdate:
    def test_indices_strictly_increasing_enforced(self):
        with pytest.raises(ContractViolation):
            SparseUpdate(4, np.array([2, 2]), np.array([1.0, 1.0]))

    def test_dense_round_trip(self):
        gen = rng(9)
        for _ in range(50):
            d = int(gen.integers(1, 20))
            g = gen.standard_normal(d) * (gen.random(d) < 0.5)
            mask = Mask((g != 0).astype(np.uint8))
            upd = apply_mask(g, mask)
            again = apply_mask(upd.to_dense(), upd.to_mask())
            assert np.array_equal(again.to_dense(), g)


class TestErrorFeedback:
    def test_identity_leaves_no_residual(self):
        comp = Compressor(CompressorSpec("identity"), 3)
        g = np.array([1.0, -2.0, 3.0])
        msg, err = ef_compress(g, ErrorState.zeros(3), comp)
        assert np.array_equal(msg.dense, g)
        assert np.array_equal(err.residual, np.zeros(3))

    def test_top_one_two_round_trace(self):
        comp = Compressor(CompressorSpec("top-k", k=1), 2)
        msg, err = ef_compress(np.array([3.0, 1.0]), ErrorState.zeros(2), comp)
        assert np.array_equal(msg.dense, [3.0, 0.0])
        assert np.array_equal(err.residual, [0.0, 1.0])
        msg2, err2 = ef_compress(np.array([0.0, 0.0]), err, comp)
        assert np.array_equal(msg2.dense, [0.0, 1.0])
        assert np.array_equal(err2.residual, [0.0, 0.0])

    @pytest.mark.parametrize("spec", [
        CompressorSpec("identity"),
        CompressorSpec("top-k", k=3),
        CompressorSpec("rand-k", k=3),
        CompressorSpec("r-top-k", k=2, r=5),
        CompressorSpec("sync-mask", phi=0.25, tau_max=4),
    ])
    def test_selection_schemes_conserve_bitwise(self, spec):
        # pure selections copy kept coordinates, so message + residual
        # reassembles the input exactly
        gen = rng(11)
        comp = Compressor(spec, 8)
        for trial in range(2000):
            g = gen.standard_normal(8)
            e = ErrorState(gen.standard_normal(8))
            msg, err = ef_compress(g, e, comp, gen, round_index=trial % 4 + 1)
            assert np.array_equal(msg.dense + err.residual, g + e.residual)

    @pytest.mark.parametrize("spec", [
        CompressorSpec("random-p", epsilon=1.0),
        CompressorSpec("stochastic-uniform", levels=4),
        CompressorSpec("ternary"),
        CompressorSpec("scaled-sign"),
        CompressorSpec("block-scaled-sign", block_size=3),
    ])
    def test_value_changing_schemes_update_rule_exact(self, spec):
        # the residual update itself is exact by construction; reassembly is
        # exact up to one rounding of the subtraction
        gen = rng(12)
        comp = Compressor(spec, 8)
        for trial in range(500):
            g = gen.standard_normal(8)
            e = ErrorState(gen.standard_normal(8))
            carried = g + e.residual
            msg, err = ef_compress(g, e, comp, gen)
            assert np.array_equal(err.residual, carried - msg.dense)
            assert np.allclose(msg.dense + err.residual, carried,
                               rtol=0.0, atol=1e-12 * np.abs(carried).max())

    def test_dimension_mismatch(self):
        comp = Compressor(CompressorSpec("identity"), 3)
        with pytest.raises(ContractViolation):
            ef_compress(np.ones(3), ErrorState.zeros(4), comp)


class TestStochasticUniform:
    def test_boundary_point_is_deterministic(self):
        # |u|/||u|| = (0.6, 0.8); with L = 5 the second lands on 4/5 exactly
        u = np.array([3.0, 4.0])
        outs = {tuple(quant_stochastic_uniform(u, 5, rng(s))) for s in range(10)}
        assert all(abs(o[1] - 4.0) < 1e-12 for o in outs)

    def test_many_levels_reproduce_input(self):
        u = rng(1).standard_normal(16)
        q = quant_stochastic_uniform(u, 2 ** 20, rng(2))
        assert np.linalg.norm(q - u) <= 1e-5 * np.linalg.norm(u)

    def test_unbiased(self):
        u = np.array([3.0, 4.0])
        gen = rng(3)
        draws = 20_000
        acc = np.zeros(2)
        for _ in range(draws):
            acc += quant_stochastic_uniform(u, 4, gen)
        mean = acc / draws
        # per-coordinate variance is bounded by (norm/L)^2 / 4
        sigma = (5.0 / 4.0) / 2.0 / np.sqrt(draws)
        assert np.all(np.abs(mean - u) <= 3.0 * sigma)

    def test_zero_vector_convention(self):
        assert np.array_equal(quant_stochastic_uniform(np.zeros(3), 4, rng(0)),
                              np.zeros(3))


class TestTernary:
    def test_deterministic_extremes(self):
        outs = {tuple(quant_ternary(np.array([2.0, 0.0]), rng(s))) for s in range(8)}
        assert outs == {(2.0, 0.0)}

    def test_output_alphabet(self):
        g = rng(5).standard_normal(32)
        gmax = np.abs(g).max()
        q = quant_ternary(g, rng(6))
        assert set(np.round(np.abs(q), 12)) <= {0.0, round(gmax, 12)}

    def test_unbiased(self):
        g = np.array([1.0, -2.0, 0.5])
        gen = rng(8)
        draws = 20_000
        acc = np.zeros(3)
        for _ in range(draws):
            acc += quant_ternary(g, gen)
        mean = acc / draws
        p = np.abs(g) / 2.0
        sigma = 2.0 * np.sqrt(p * (1 - p) / draws)
        assert np.all(np.abs(mean - g) <= 3.0 * sigma)


class TestSignFamily:
    def test_sign_zero_convention(self):
        assert np.array_equal(sign_quant(np.array([0.1, -7.0, 0.0])),
                              [1.0, -1.0, 1.0])

    def test_threshold_zero_matches_shifted_sign(self):
        g = rng(2).standard_normal(20)
        thresholded = sign_quant(g, 0.0, "thresholded-1bit")
        assert np.array_equal(thresholded, (sign_quant(g) + 1.0) / 2.0)

    def test_majority_vote(self):
        votes = np.array([[1.0], [1.0], [-1.0]])
        assert sign_quant(votes.sum(axis=0))[0] == 1.0

    def test_scaled_sign_single_block(self):
        assert np.array_equal(scaled_sign(np.array([1.0, -3.0])), [2.0, -2.0])

    def test_singleton_blocks_reproduce_input(self):
        g = rng(3).standard_normal(6)
        out = block_scaled_sign(g, [[i + 1] for i in range(6)])
        assert np.allclose(out, g)

    def test_bad_partition_rejected(self):
        with pytest.raises(ContractViolation):
            block_scaled_sign(np.ones(4), [[1, 2], [2, 3, 4]])
        with pytest.raises(ContractViolation):
            block_scaled_sign(np.ones(4), [[1, 2]])

    def test_delta_approximation_identity(self):
        gen = rng(10)
        for _ in range(1000):
            g = gen.standard_normal(int(gen.integers(1, 40)))
            lhs = float(np.sum((scaled_sign(g) - g) ** 2))
            rhs = (1.0 - delta_of(g)) * float(np.sum(g * g))
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, float(np.sum(g * g)))


class TestContraction:
    def test_lossless_top_k(self):
        spec = CompressorSpec("top-k", k=6)
        assert contraction_check(spec, 10, rng(0), dim=6) == 0.0

    def test_rand_k_expected_contraction(self):
        # E||x - comp||^2 = (1 - k/d) ||x||^2 exactly for uniform masks
        d, k = 8, 2
        gen = rng(1)
        comp = Compressor(CompressorSpec("rand-k", k=k), d)
        x = gen.standard_normal(d)
        trials = 20_000
        ratios = np.empty(trials)
        sq = float(x @ x)
        for i in range(trials):
            ratios[i] = np.sum((x - comp.compress(x, gen).dense) ** 2) / sq
        sigma = ratios.std(ddof=1) / np.sqrt(trials)
        assert ratios.mean() <= (1 - k / d) + 3 * sigma

    def test_top_k_per_sample_bound(self):
        gen = rng(2)
        comp = Compressor(CompressorSpec("top-k", k=2), 8)
        for _ in range(1000):
            x = gen.standard_normal(8)
            ratio = np.sum((x - comp.compress(x, gen).dense) ** 2) / (x @ x)
            assert ratio <= 0.75 + 1e-12

    def test_contraction_check_estimates_rand_k(self):
        worst = contraction_check(CompressorSpec("rand-k", k=2), trials=50,
                                  rng=rng(3), dim=8, inner=400)
        assert worst <= 0.75 * 1.25  # inner-mean noise stays near the bound
        assert worst >= 0.75 * 0.6


class TestPayloadAccounting:
    def test_identity_bits(self):
        comp = Compressor(CompressorSpec("identity"), 10)
        assert comp.compress(np.ones(10), rng(0)).payload_bits == 640

    def test_sign_bits(self):
        comp = Compressor(CompressorSpec("sign"), 10)
        assert comp.compress(np.ones(10), rng(0)).payload_bits == 10

    def test_sparse_bits_match_wire_length(self):
        comp = Compressor(CompressorSpec("top-k", k=3), 24)
        msg = comp.compress(rng(1).standard_normal(24), rng(2))
        assert msg.payload_bits == len(msg.wire) * 8

    @given(st.integers(1, 64), st.integers(0, 4))
    @settings(max_examples=40, deadline=None)
    def test_nominal_matches_actual_for_top_k(self, d, pad):
        k = min(d, pad + 1)
        comp = Compressor(CompressorSpec("top-k", k=k), d)
        gen = np.random.default_rng(d * 7 + pad)
        x = gen.standard_normal(d)
        assert comp.compress(x, gen).payload_bits == comp.nominal_bits()
