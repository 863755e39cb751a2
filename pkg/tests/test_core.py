from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from orchsim.core import (
    BijectionError,
    ConfigError,
    ContractError,
    CostModel,
    CostVariant,
    MiniBatch,
    PaddingMode,
    Rearrangement,
    SeqItem,
    apply,
    batch_length,
    cost,
    group_by_origin,
    interleaved_length,
    make_example,
)
from orchsim.verify import random_rearrangement

from conftest import item_lists, rng_from

U, P = PaddingMode.UNPADDED, PaddingMode.PADDED


def batch(lengths, mode=U, instance=0):
    return MiniBatch(instance, tuple(SeqItem(k, "x", x) for k, x in enumerate(lengths)), mode)


class TestBatchLength:
    def test_unpadded_sum(self):
        assert batch_length(batch([10, 20])) == 30

    def test_padded_size_times_max(self):
        assert batch_length(batch([7, 5, 3], P)) == 21

    def test_empty(self):
        assert batch_length(batch([])) == 0
        assert batch_length(batch([], P)) == 0

    @given(st.lists(st.integers(1, 100), max_size=20))
    def test_padded_never_below_unpadded(self, lengths):
        assert batch_length(batch(lengths, P)) >= batch_length(batch(lengths))


class TestCost:
    def test_quadratic_unpadded(self):
        assert cost(CostModel(1, 0.01, U), batch([10, 20])) == pytest.approx(35.0)

    def test_zero_beta_is_batch_length(self):
        for mode in (U, P):
            for variant in CostVariant:
                b = batch([3, 9, 4], mode)
                assert cost(CostModel(1, 0, mode, variant), b) == batch_length(b)

    def test_conv_transformer(self):
        m = CostModel(1, 0.01, P, CostVariant.CONV_TRANSFORMER_PADDED)
        assert cost(m, batch([4, 6], P)) == pytest.approx(12.72)
        # packed linear term, padded attention term
        m = CostModel(1, 0.01, U, CostVariant.CONV_TRANSFORMER_PADDED)
        assert cost(m, batch([4, 6])) == pytest.approx(10.72)

    def test_quadratic_padded(self):
        # L = 3 * 7 = 21, beta / b * L^2 = 0.01 / 3 * 441
        assert cost(CostModel(1, 0.01, P), batch([7, 5, 3], P)) == pytest.approx(21 + 1.47)

    def test_linear_ignores_beta(self):
        assert cost(CostModel(2, 5.0, U, CostVariant.LINEAR_ONLY), batch([1, 2])) == 6

    def test_mode_mismatch(self):
        with pytest.raises(ContractError):
            cost(CostModel(1, 0, P), batch([1, 2]))

    def test_negative_coefficients_rejected(self):
        with pytest.raises(ConfigError):
            CostModel(-1, 0)

    @given(st.lists(st.integers(1, 60), max_size=10), st.integers(1, 60),
           st.sampled_from(list(CostVariant)), st.sampled_from([U, P]),
           st.floats(0, 1), st.floats(0, 2))
    def test_monotone_and_above_linear(self, lengths, extra, variant, mode, beta, alpha):
        m = CostModel(alpha, beta, mode, variant)
        before = m.of_lengths(lengths)
        assert m.of_lengths(lengths + [extra]) >= before - 1e-9
        assert before >= alpha * batch_length(batch(lengths, mode)) - 1e-9


class TestInterleavedLength:
    def test_three_modalities(self):
        ex = make_example(0, [("text", 8), ("vision", 196), ("audio", 50)], rates={"vision": 1, "audio": 1})
        assert interleaved_length(ex) == 254

    def test_text_only(self):
        assert interleaved_length(make_example(0, [("text", 8)])) == 8

    def test_downsampled_vision(self):
        ex = make_example(0, [("vision", 784), ("text", 12)])
        assert ex.encoded_lengths == (196, 12)
        assert interleaved_length(ex) == 208

    def test_ceiling_division(self):
        assert make_example(0, [("audio", 5)]).encoded_lengths == (2,)
        assert make_example(0, [("audio", 1)]).encoded_lengths == (1,)

    def test_unknown_modality(self):
        with pytest.raises(ConfigError):
            make_example(0, [("smell", 3)])

    def test_bad_interleave_order(self):
        with pytest.raises(ConfigError):
            make_example(0, [("text", 3), ("vision", 8)], interleave_order=[0, 0])

    @given(st.lists(st.tuples(st.sampled_from(["text", "vision", "audio"]), st.integers(1, 5000)),
                    min_size=1, max_size=6))
    def test_at_least_longest_part(self, parts):
        ex = make_example(0, parts)
        assert interleaved_length(ex) >= max(ex.encoded_lengths)


class TestRearrangement:
    def test_identity_leaves_batches(self):
        bs = [batch([1, 2], instance=0), batch([3], instance=1)]
        assert apply(Rearrangement.identity(bs), bs) == bs

    def test_swap(self):
        a = MiniBatch(0, (SeqItem(0, "x", 4),))
        b = MiniBatch(1, (SeqItem(1, "x", 9, 1), SeqItem(2, "x", 2, 1)))
        re = Rearrangement(2, {(0, 0): (1, 0), (1, 0): (0, 0), (1, 1): (0, 1)})
        out = apply(re, [a, b])
        assert out[0].items == b.items and out[1].items == a.items

    def test_crossing_map_preserves_multiset(self):
        bs = group_by_origin([SeqItem(k, "x", 10 + k, k % 2) for k in range(4)], 2)
        re = Rearrangement(2, {(0, 0): (1, 1), (0, 1): (0, 0), (1, 0): (1, 0), (1, 1): (0, 1)})
        out = apply(re, bs)
        before = sorted((it.key, it.length) for b in bs for it in b.items)
        after = sorted((it.key, it.length) for b in out for it in b.items)
        assert before == after
        assert [it.example_id for it in out[0].items] == [2, 3]

    def test_duplicate_destination(self):
        with pytest.raises(BijectionError):
            Rearrangement(2, {(0, 0): (1, 0), (0, 1): (1, 0)})

    def test_gap_in_destination_slots(self):
        with pytest.raises(BijectionError):
            Rearrangement(2, {(0, 0): (1, 1)})

    def test_missing_slot_on_apply(self):
        bs = [batch([1, 2])]
        with pytest.raises(BijectionError):
            apply(Rearrangement(1, {(0, 0): (0, 0)}), bs)

    def test_empty_destinations_allowed(self):
        bs = [batch([5, 6], instance=0), MiniBatch(1)]
        out = apply(Rearrangement(2, {(0, 0): (0, 0), (0, 1): (0, 1)}), bs)
        assert out[1].items == () and batch_length(out[1]) == 0

    @given(item_lists(max_d=5, max_n=30), st.integers(0, 2**32 - 1))
    def test_apply_preserves_multiset(self, case, seed):
        d, items = case
        bs = group_by_origin(items, d)
        re = random_rearrangement(rng_from(seed), [len(b) for b in bs], d)
        out = apply(re, bs)
        assert len(out) == d
        assert Counter(it for b in bs for it in b.items) == Counter(it for b in out for it in b.items)
        for i, b in enumerate(out):
            assert b.instance == i
