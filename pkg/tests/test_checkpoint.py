import numpy as np
import pytest

from harnet import checkpoint as ck
from harnet.errors import CheckpointError


def _ckpt():
    rng = np.random.default_rng(0)
    tensors = {
        "a/w": rng.standard_normal((3, 4)),
        "a/b": np.array([0.0, -0.0, np.inf, 1e-310]),
        "c": np.array([np.nan]),
    }
    return ck.Checkpoint(tensors, {"k": [1, 2]}, 42, {"format": "x"})


def test_round_trip_bit_exact(tmp_path):
    c = _ckpt()
    ck.save(tmp_path / "x.ckpt", c)
    back = ck.load(tmp_path / "x.ckpt")
    assert ck.same_tensors(c.tensors, back.tensors)
    assert back.config == c.config and back.seed == 42 and back.meta == c.meta


def test_layout_header():
    blob = ck.encode(_ckpt())
    assert blob[:8] == ck.MAGIC
    assert int.from_bytes(blob[8:12], "little") == ck.VERSION
    # payload is raw little-endian f64, 12 + 4 + 1 values
    assert (len(blob) - 20 - int.from_bytes(blob[12:20], "little")) == 17 * 8


@pytest.mark.parametrize("mutate", [
    lambda b: b[:-3],
    lambda b: b[:-8],
    lambda b: b"XXXXXXXX" + b[8:],
    lambda b: b[:8] + (7).to_bytes(4, "little") + b[12:],
    lambda b: b[:20] + b"[" + b[21:],
    lambda b: b[:20] + b'{"config":{},"seed":0,"tensors":[{"path":"a"}]}'.ljust(len(b) - 20, b" "),
])
def test_corruption_is_detected(mutate):
    with pytest.raises(CheckpointError):
        ck.decode(mutate(ck.encode(_ckpt())))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        ck.load(tmp_path / "nope.ckpt")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    ck.atomic_write_bytes(tmp_path / "d" / "f.bin", b"abc")
    ck.atomic_write_bytes(tmp_path / "d" / "f.bin", b"xyz")
    assert (tmp_path / "d" / "f.bin").read_bytes() == b"xyz"
    assert [p.name for p in (tmp_path / "d").iterdir()] == ["f.bin"]
