import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from orspoken import paramio
from orspoken.errors import ValidationError


def test_layout_of_a_small_blob():
    blob = paramio.dumps("k", {"w": np.array([[1.0, 2.0]]), "b": np.array(0.5)})
    expected = (
        b"ORSP" + struct.pack("<I", 1) + struct.pack("<H", 1) + b"k" + struct.pack("<I", 2)
        + struct.pack("<H", 1) + b"w" + struct.pack("<I", 2) + struct.pack("<2I", 1, 2) + struct.pack("<2f", 1, 2)
        + struct.pack("<H", 1) + b"b" + struct.pack("<I", 0) + struct.pack("<f", 0.5)
    )
    assert blob == expected


@settings(max_examples=100)
@given(arrays(np.float32, array_shapes(min_dims=0, max_dims=3, max_side=4),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip(a):
    kind, back = paramio.loads(paramio.dumps("x", {"a": a}))
    assert kind == "x"
    assert back["a"].shape == a.shape and back["a"].dtype == np.float64
    assert np.array_equal(back["a"], a.astype(np.float64))


def test_kind_check_and_corruption(tmp_path):
    blob = paramio.dumps("fusion_scorer", {"w": np.ones(3)})
    with pytest.raises(ValidationError, match="expected"):
        paramio.loads(blob, "instance_scorer")
    with pytest.raises(ValidationError, match="magic"):
        paramio.loads(b"XXXX" + blob[4:])
    with pytest.raises(ValidationError, match="version"):
        paramio.loads(blob[:4] + struct.pack("<I", 9) + blob[8:])
    with pytest.raises(ValidationError, match="truncated"):
        paramio.loads(blob[:-1])
    with pytest.raises(ValidationError, match="trailing"):
        paramio.loads(blob + b"\0")
    paramio.save(tmp_path / "p.orsp", "k", {"w": np.arange(4.0)})
    assert paramio.load(tmp_path / "p.orsp", "k")["w"].tolist() == [0, 1, 2, 3]
