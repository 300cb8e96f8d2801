import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from protoem.numerics import checkpoint
from protoem.numerics.checkpoint import CheckpointError


def test_layout_by_hand():
    buf = checkpoint.encode({"ab": np.array([[1.0, 2.0]])})
    want = (b"PFKT" + struct.pack("<II", 1, 1) + struct.pack("<I", 2) + b"ab"
            + struct.pack("<I", 2) + struct.pack("<2Q", 1, 2) + np.array([1, 2], "<f4").tobytes())
    assert buf == want


names = st.text(min_size=1, max_size=12)
arrays = hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4),
                    elements=st.floats(-1e6, 1e6, width=32))


@given(st.dictionaries(names, arrays, max_size=4))
def test_roundtrip_is_exact_for_fp32_values(tensors):
    back = checkpoint.decode(checkpoint.encode(tensors))
    assert list(back) == list(tensors)
    for k, v in tensors.items():
        assert back[k].shape == v.shape
        assert np.array_equal(back[k], v.astype(np.float64))


def test_fp64_values_are_rounded():
    x = np.array([1.0 + 1e-12, np.pi])
    back = checkpoint.decode(checkpoint.encode({"x": x}))["x"]
    assert np.array_equal(back, checkpoint.fp32_round(x))


def test_corrupt_files_rejected(tmp_path):
    good = checkpoint.encode({"w": np.ones((2, 2))})
    for bad in (b"XXXX" + good[4:], good[:-3], good + b"\0",
                good[:4] + struct.pack("<I", 9) + good[8:]):
        with pytest.raises(CheckpointError):
            checkpoint.decode(bad)
    p = tmp_path / "w.pfkt"
    checkpoint.save(p, {"w": np.eye(2)})
    assert np.array_equal(checkpoint.load(p)["w"], np.eye(2))
