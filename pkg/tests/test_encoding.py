import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridnas.encoding import (
    FIELDS, MalformedEncoding, TooManyBlocks, decode, encode, from_bitstring, to_bitstring,
)
from hybridnas.space import min_subnet, sample_subnet
from hybridnas.subnet import FFNChoice, StageArch


def test_field_widths():
    widths = [w for _, w in FIELDS.values()]
    assert sum(widths) == 24
    assert FIELDS["stage"][1] == 4
    assert FIELDS["in_width"][1] + FIELDS["out_width"][1] == 8
    assert FIELDS["ffn_expansion"][1] + FIELDS["mhsa_expansion"][1] == 6


def test_shape_and_padding(space, uniform):
    a = sample_subnet(space, uniform, 0)
    enc = encode(a, space)
    assert enc.shape == (44, 24) and enc.dtype == np.uint8
    n = len(a.blocks())
    assert enc[:n].any(axis=1).all() and not enc[n:].any()


def test_stage2_fused_row(space, uniform):
    # stage-2 fused FFN, width index 1, E=3, K=3, ReLU
    a = min_subnet(space)
    s2 = StageArch(48, (FFNChoice("fused", 3, 3, "relu"),) * 2, (None, None))
    a = a.__class__(a.stem_activation, (a.stages[0], s2) + a.stages[2:], a.embeds)
    enc = encode(a, space)
    row_index = 1 + a.stages[0].depth + 1  # stem, stage-1 blocks, embed
    assert set(np.flatnonzero(enc[row_index])) == {1, 4 + 1, 8 + 1, 12 + 1, 18 + 0, 20 + 0, 22 + 1}


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=300, deadline=None)
def test_roundtrip_property(seed):
    from hybridnas.space import build_default_space, init_uniform_distribution

    sp = build_default_space()
    a = sample_subnet(sp, init_uniform_distribution(sp), seed)
    assert decode(encode(a, sp), sp) == a


def test_roundtrip_1000(space, uniform):
    for i in range(1000):
        a = sample_subnet(space, uniform, i)
        assert decode(encode(a, space), space) == a


def test_injective(space, uniform):
    seen = {}
    rng = np.random.default_rng(1)
    for _ in range(10000):
        a = sample_subnet(space, uniform, rng)
        key = encode(a, space).tobytes()
        assert seen.setdefault(key, a) == a


def test_bitstring_roundtrip(space):
    enc = encode(min_subnet(space), space)
    bits = to_bitstring(enc)
    assert len(bits) == 44 * 24
    assert (from_bitstring(bits) == enc).all()


def test_malformed(space):
    with pytest.raises(MalformedEncoding):
        decode(np.zeros((44, 24), dtype=np.uint8), space)
    enc = encode(min_subnet(space), space)
    assert decode(enc, space) == min_subnet(space)
    bad = enc.copy()
    bad[2, 20:22] = 1  # two kernels
    with pytest.raises(MalformedEncoding):
        decode(bad, space)
    bad = enc.copy()
    bad[40, 0] = 1  # stray row after padding starts
    with pytest.raises(MalformedEncoding):
        decode(bad, space)
    with pytest.raises(MalformedEncoding):
        decode(enc[:10], space)


def test_too_many_blocks(space):
    a = min_subnet(space)
    long = StageArch(248, (FFNChoice("fused", 2, 3, "relu"),) * 40, (None,) * 40)
    with pytest.raises(TooManyBlocks):
        encode(a.__class__(a.stem_activation, a.stages[:3] + (long,), a.embeds), space)
