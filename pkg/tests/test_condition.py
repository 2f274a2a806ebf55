import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcfg.condition import ConditionSlots, SplitEmbedder, dropout, init_embedder, mask

slot_values = st.lists(
    st.one_of(st.none(), st.integers(min_value=0, max_value=1)), min_size=1, max_size=5
)


def toy_embedder():
    # E_i(v) = 2v + 1 in one dimension, for both attributes.
    table = np.array([[1.0], [3.0]])
    return SplitEmbedder((table, table.copy()))


def test_all_null_embeds_to_zero_vector():
    emb = init_embedder((2, 2, 2), d=4)
    out = emb.embed(ConditionSlots.null(3))
    assert out.shape == (12,)
    assert np.all(out == 0.0)


def test_toy_affine_map_by_hand():
    emb = toy_embedder()
    assert np.array_equal(emb.embed(ConditionSlots((0, 1))), [1.0, 3.0])


def test_mask_then_embed_equals_embed_then_zero():
    emb = toy_embedder()
    slots = ConditionSlots((1, 0))
    masked = emb.embed(mask(slots, {1}))
    direct = emb.embed(slots)
    direct[: emb.d] = 0.0
    assert np.array_equal(masked, direct)


def test_mask_full_group_is_identity():
    slots = ConditionSlots((0, 1, None))
    assert mask(slots, {0, 1, 2}) == slots


def test_mask_empty_group_is_all_null():
    assert mask(ConditionSlots((0, 1, 1)), set()) == ConditionSlots.null(3)


def test_mask_example_three_slots():
    assert mask(ConditionSlots((0, 1, 1)), {0, 2}) == ConditionSlots((0, None, 1))


def test_mask_rejects_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        mask(ConditionSlots((0, 1)), {2})


def test_dropout_limits():
    slots = ConditionSlots((1, 0))
    rng = np.random.default_rng(0)
    assert all(dropout(slots, 0.0, rng) == slots for _ in range(100))
    assert all(dropout(slots, 1.0, rng).is_all_null for _ in range(100))


def test_dropout_rate_concentrates():
    slots = ConditionSlots((1, 0))
    rng = np.random.default_rng(1)
    hits = sum(dropout(slots, 0.5, rng).is_all_null for _ in range(100_000))
    assert hits / 100_000 == pytest.approx(0.5, abs=0.01)


def test_dropout_rejects_bad_probability():
    with pytest.raises(ValueError):
        dropout(ConditionSlots((0,)), 1.5, np.random.default_rng(0))


@settings(max_examples=80, deadline=None)
@given(values=slot_values, data=st.data())
def test_mask_idempotent_and_composes_by_intersection(values, data):
    slots = ConditionSlots(tuple(values))
    k = len(slots)
    g1 = data.draw(st.sets(st.integers(min_value=0, max_value=k - 1)))
    g2 = data.draw(st.sets(st.integers(min_value=0, max_value=k - 1)))
    assert mask(mask(slots, g1), g1) == mask(slots, g1)
    assert mask(mask(slots, g1), g2) == mask(slots, g1 & g2)


@settings(max_examples=40, deadline=None)
@given(values=slot_values, data=st.data())
def test_embed_null_consistency(values, data):
    slots = ConditionSlots(tuple(values))
    k = len(slots)
    group = data.draw(st.sets(st.integers(min_value=0, max_value=k - 1)))
    emb = SplitEmbedder(tuple(np.arange(1.0, 7.0).reshape(2, 3) + i for i in range(k)))
    full = emb.embed(slots)
    masked = emb.embed(mask(slots, group))
    for i in range(k):
        block = slice(i * emb.d, (i + 1) * emb.d)
        if i in group:
            assert np.array_equal(masked[block], full[block])
        else:
            assert np.all(masked[block] == 0.0)


def test_embedder_rejects_slot_count_mismatch():
    emb = toy_embedder()
    with pytest.raises(ValueError, match="expected 2 slots"):
        emb.embed(ConditionSlots((1,)))


def test_embedder_rejects_out_of_range_value():
    emb = toy_embedder()
    with pytest.raises(ValueError, match="out of range"):
        emb.embed(ConditionSlots((1, 5)))
