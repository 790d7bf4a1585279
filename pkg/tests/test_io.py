import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rafanet.checkpoint import MAGIC, decode_tensors, encode_tensors, load_tensors, save_tensors
from rafanet.errors import FormatError
from rafanet.ppm import decode_ppm, encode_ppm, read_ppm, write_ppm
from rafanet.rng import Rng


def test_rng_same_seed_same_stream():
    a, b = Rng(7), Rng(7)
    np.testing.assert_array_equal(a.uniform(0, 1, 50), b.uniform(0, 1, 50))
    np.testing.assert_array_equal(a.normal(0, 1, 50), b.normal(0, 1, 50))


def test_rng_derived_streams_are_reproducible_and_distinct():
    base = Rng(3)
    np.testing.assert_array_equal(base.derive(1, 2).uniform(size=8), Rng(3).derive(1, 2).uniform(size=8))
    assert not np.array_equal(base.derive(1, 2).uniform(size=8), base.derive(2, 1).uniform(size=8))


def test_rng_integers_half_open():
    draws = Rng(0).integers(0, 3, 1000)
    assert set(np.unique(draws)) == {0, 1, 2}


def test_checkpoint_layout_by_hand():
    payload = encode_tensors({"w": np.array([[1.5, -2.0]])})
    expected = MAGIC + struct.pack("<I", 1) + struct.pack("<I", 1) + b"w" + struct.pack("<III", 2, 1, 2)
    expected += struct.pack("<2d", 1.5, -2.0)
    assert payload == expected


@given(
    st.dictionaries(
        st.text(min_size=1, max_size=8),
        hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4), elements=st.floats(allow_nan=False)),
        max_size=4,
    )
)
def test_checkpoint_round_trip_bit_identical(tensors):
    out = decode_tensors(encode_tensors(tensors))
    assert list(out) == list(tensors)
    for name, arr in tensors.items():
        assert out[name].shape == arr.shape
        assert out[name].tobytes() == np.ascontiguousarray(arr).tobytes()


def test_checkpoint_file_round_trip(tmp_path):
    save_tensors(tmp_path / "c.rafa", {"a": np.arange(6.0).reshape(2, 3), "s": np.array(2.5)})
    out = load_tensors(tmp_path / "c.rafa")
    np.testing.assert_array_equal(out["a"], np.arange(6.0).reshape(2, 3))
    assert out["s"].shape == ()


def test_checkpoint_rejects_bad_magic():
    payload = bytearray(encode_tensors({"a": np.ones(2)}))
    payload[:5] = b"RAFA2"
    with pytest.raises(FormatError, match="magic"):
        decode_tensors(bytes(payload))


@pytest.mark.parametrize("cut", [3, 7, 12, 20, 30])
def test_checkpoint_rejects_truncation(cut):
    payload = encode_tensors({"abc": np.ones((2, 2))})
    with pytest.raises(FormatError):
        decode_tensors(payload[:cut])


def test_checkpoint_rejects_trailing_bytes():
    with pytest.raises(FormatError, match="trailing"):
        decode_tensors(encode_tensors({"a": np.ones(1)}) + b"\0")


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3)).astype(np.uint8)
    write_ppm(tmp_path / "x.ppm", img)
    np.testing.assert_array_equal(read_ppm(tmp_path / "x.ppm"), img)
    assert encode_ppm(img).startswith(b"P6\n7 5\n255\n")


def test_ppm_header_comments():
    body = bytes(range(6))
    img = decode_ppm(b"P6 # comment\n2 # w\n1\n255\n" + body)
    assert img.shape == (1, 2, 3)
    np.testing.assert_array_equal(img.reshape(-1), list(body))


@pytest.mark.parametrize(
    "payload",
    [b"P3\n1 1\n255\n\0\0\0", b"P6\n1 1\n65535\n\0\0\0\0\0\0", b"P6\n2 2\n255\n\0\0\0", b"P6\n1"],
)
def test_ppm_rejects_malformed(payload):
    with pytest.raises(FormatError):
        decode_ppm(payload)
