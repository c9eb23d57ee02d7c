import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cdk.store import (
    FormatError,
    atomic_write,
    decode_pnm,
    decode_tsr,
    encode_pnm,
    encode_tsr,
    load_checkpoint,
    read_tsr,
    save_checkpoint,
    to_bytes,
    write_tsr,
)

arrays = hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                    elements=st.floats(width=32, allow_nan=False))


class TestTsr:
    @given(st.dictionaries(st.text(min_size=1, max_size=12), arrays, max_size=4))
    @settings(max_examples=60)
    def test_roundtrip_bitwise(self, tensors):
        back = decode_tsr(encode_tsr(tensors))
        assert list(back) == list(tensors)
        for k, v in tensors.items():
            assert back[k].shape == v.shape and back[k].tobytes() == v.tobytes()

    def test_layout(self):
        buf = encode_tsr({"ab": np.array([[1.0, 2.0]], np.float32)})
        expect = b"TSR1" + struct.pack("<HI", 1, 1) + struct.pack("<H", 2) + b"ab" \
            + struct.pack("<III", 2, 1, 2) + struct.pack("<2f", 1.0, 2.0)
        assert buf == expect

    def test_special_values_survive(self):
        x = np.array([np.nan, np.inf, -0.0, 1e-45], np.float32)
        assert decode_tsr(encode_tsr({"x": x}))["x"].tobytes() == x.tobytes()

    @pytest.mark.parametrize("mutate", [
        lambda b: b"TSR2" + b[4:],
        lambda b: b[:-1],
        lambda b: b + b"\0",
        lambda b: b[:4] + struct.pack("<H", 9) + b[6:],
    ])
    def test_corrupt(self, mutate):
        buf = encode_tsr({"w": np.ones((2, 3), np.float32)})
        with pytest.raises(FormatError):
            decode_tsr(mutate(buf))

    def test_file_roundtrip(self, tmp_path):
        t = {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}
        write_tsr(tmp_path / "t.tsr", t)
        assert read_tsr(tmp_path / "t.tsr")["a"].tobytes() == t["a"].tobytes()

    def test_checkpoint_manifest(self, tmp_path):
        params = {"w": np.ones((2, 2), np.float32), "b": np.zeros(2, np.float32)}
        save_checkpoint(tmp_path / "m", params, model={"resolution": 8})
        back, meta = load_checkpoint(tmp_path / "m.tsr")
        assert meta["model"] == {"resolution": 8}
        assert meta["tensors"] == [{"name": "w", "shape": [2, 2]}, {"name": "b", "shape": [2]}]
        meta["tensors"][0]["shape"] = [4]
        (tmp_path / "m.json").write_text(json.dumps(meta))
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "m.tsr")


class TestImages:
    def test_gray_levels(self):
        assert to_bytes(np.array([-1.0, 1.0, 0.0])).tolist() == [0, 255, 128]

    def test_clamped(self):
        assert to_bytes(np.array([-3.0, 7.0])).tolist() == [0, 255]

    def test_pgm_header(self):
        buf = encode_pnm(np.zeros((1, 2, 3)))
        assert buf.startswith(b"P5\n3 2\n255\n") and len(buf) == len(b"P5\n3 2\n255\n") + 6

    @given(hnp.arrays(np.float64, st.tuples(st.sampled_from([1, 3]), st.integers(1, 6), st.integers(1, 6)),
                      elements=st.floats(-1, 1)))
    def test_pnm_roundtrip(self, img):
        assert np.array_equal(decode_pnm(encode_pnm(img)), to_bytes(img))

    def test_bad_channels(self):
        with pytest.raises(FormatError):
            encode_pnm(np.zeros((2, 4, 4)))


class TestAtomicWrite:
    def test_replaces_and_leaves_no_temp(self, tmp_path):
        p = tmp_path / "sub" / "f.bin"
        atomic_write(p, b"one")
        atomic_write(p, "two")
        assert p.read_bytes() == b"two"
        assert [q.name for q in p.parent.iterdir()] == ["f.bin"]

    def test_failure_keeps_old_content(self, tmp_path, monkeypatch):
        p = tmp_path / "f.bin"
        atomic_write(p, b"old")

        def boom(*a):
            raise OSError("disk full")

        monkeypatch.setattr("cdk.store.os.replace", boom)
        with pytest.raises(OSError):
            atomic_write(p, b"new")
        assert p.read_bytes() == b"old"
        assert [q.name for q in tmp_path.iterdir()] == ["f.bin"]
