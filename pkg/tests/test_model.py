import hashlib
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdnn.errors import BadWidths, CorruptChecksum, IoError, ShapeMismatch, VersionMismatch
from sdnn.model import MAGIC, Checkpoint, Mlp, init, load, load_checkpoint, param_count, save, save_checkpoint


def _reseal(payload: bytes) -> bytes:
    return payload + hashlib.sha256(payload).digest()


class TestInit:
    def test_single_unit(self):
        for seed in range(5):
            net = init([1, 1], seed=seed)
            assert net.weights[0].shape == (1, 1)
            assert abs(net.weights[0][0, 0]) <= np.sqrt(3)
            assert net.biases[0].tolist() == [0.0]

    def test_same_seed_same_parameters(self):
        assert np.array_equal(init([2, 50, 50, 50, 1], seed=11).flatten(), init([2, 50, 50, 50, 1], seed=11).flatten())

    def test_different_seeds_differ(self):
        assert not np.array_equal(init([2, 5, 1], seed=1).flatten(), init([2, 5, 1], seed=2).flatten())

    @pytest.mark.parametrize(
        "widths, count",
        [([2, 50, 50, 50, 1], 5301), ([1, 10, 10, 10, 10, 1], 361), ([2, 20, 20, 20, 20, 1], 1341)],
    )
    def test_parameter_count(self, widths, count):
        # 2*20+20 + 3*(20*20+20) + 20+1 = 1341
        assert param_count(widths) == count
        assert init(widths).n_params == count

    def test_glorot_bounds(self):
        net = init([3, 40, 7], seed=0)
        for W in net.weights:
            d_out, d_in = W.shape
            assert np.max(np.abs(W)) <= np.sqrt(6 / (d_in + d_out))

    @pytest.mark.parametrize("widths", [[], [3], [2, 0, 1], [2, -1]])
    def test_bad_widths(self, widths):
        with pytest.raises(BadWidths):
            init(widths)


class TestMlp:
    def test_output_layer_is_affine(self):
        net = init([1, 3, 2], seed=0)
        x = np.array([[0.4]])
        h = np.tanh(net.weights[0] @ x.T + net.biases[0][:, None])
        expect = (net.weights[1] @ h + net.biases[1][:, None]).T
        assert np.allclose(net(x), expect, rtol=0, atol=1e-15)

    def test_flatten_roundtrip(self):
        net = init([2, 4, 3, 1], seed=3)
        assert np.array_equal(net.with_flat(net.flatten()).flatten(), net.flatten())

    def test_shape_check(self):
        with pytest.raises(ShapeMismatch):
            Mlp([np.zeros((3, 2)), np.zeros((1, 4))], [np.zeros(3), np.zeros(1)])

    def test_widths(self):
        assert init([2, 7, 1]).widths == [2, 7, 1]


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        net = init([2, 6, 6, 1], seed=4)
        save(net, tmp_path / "n.ckpt")
        back = load(tmp_path / "n.ckpt")
        for a, b in zip(net.weights + net.biases, back.weights + back.biases):
            assert np.array_equal(a, b)
        assert back.activation == net.activation

    def test_roundtrip_with_moments(self, tmp_path):
        net = init([1, 4, 1], seed=5)
        rng = np.random.default_rng(0)
        m, v = rng.standard_normal(net.n_params), rng.random(net.n_params)
        save_checkpoint(Checkpoint(net, seed=7, step=123, m=m, v=v), tmp_path / "c")
        ck = load_checkpoint(tmp_path / "c")
        assert (ck.seed, ck.step) == (7, 123)
        assert np.array_equal(ck.m, m) and np.array_equal(ck.v, v)

    def test_truncated(self, tmp_path):
        p = save(init([2, 5, 1]), tmp_path / "c")
        p.write_bytes(p.read_bytes()[:-10])
        with pytest.raises(CorruptChecksum):
            load(p)

    def test_flipped_byte(self, tmp_path):
        p = save(init([2, 5, 1]), tmp_path / "c")
        blob = bytearray(p.read_bytes())
        blob[60] ^= 0xFF
        p.write_bytes(bytes(blob))
        with pytest.raises(CorruptChecksum):
            load(p)

    def test_version_mismatch(self, tmp_path):
        p = save(init([2, 5, 1]), tmp_path / "c")
        payload = bytearray(p.read_bytes()[:-32])
        struct.pack_into("<I", payload, len(MAGIC), 99)
        p.write_bytes(_reseal(bytes(payload)))
        with pytest.raises(VersionMismatch):
            load(p)

    def test_declared_widths_mismatch(self, tmp_path):
        p = save(init([2, 5, 1]), tmp_path / "c")
        payload = p.read_bytes()[:-32]
        _, hlen = struct.unpack_from("<II", payload, len(MAGIC))
        start = len(MAGIC) + 8
        header = json.loads(payload[start : start + hlen])
        header["widths"] = [2, 6, 1]
        hb = json.dumps(header).encode()
        new = MAGIC + struct.pack("<II", 1, len(hb)) + hb + payload[start + hlen :]
        p.write_bytes(_reseal(new))
        with pytest.raises(CorruptChecksum):
            load(p)

    def test_not_a_checkpoint(self, tmp_path):
        p = tmp_path / "junk"
        p.write_bytes(b"hello world" * 10)
        with pytest.raises(CorruptChecksum):
            load(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            load(tmp_path / "nope")

    def test_error_codes(self):
        assert CorruptChecksum("x").code == "CorruptChecksum"


@settings(max_examples=20, deadline=None)
@given(widths=st.lists(st.integers(1, 8), min_size=2, max_size=5), seed=st.integers(0, 2**31))
def test_checkpoint_roundtrip_property(tmp_path_factory, widths, seed):
    net = init(widths, seed=seed)
    path = tmp_path_factory.mktemp("ck") / "net"
    save(net, path)
    assert np.array_equal(load(path).flatten(), net.flatten())
