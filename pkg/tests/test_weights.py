import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsesplat.config import RunConfig
from sparsesplat.harness.pipeline import init_weights
from sparsesplat.weights import WeightFormatError, WeightStore, load_tensor, save_tensor


@pytest.fixture
def store():
    s = WeightStore(seed=42)
    s.add_linear("a.fc", 4, 3)
    s.add_conv("b.conv", 3, 2, 5)
    s["c.double"] = np.arange(6, dtype=np.float64).reshape(2, 3)
    return s


class TestInit:
    def test_same_seed_bit_identical(self):
        a, b = init_weights(RunConfig(seed=7)), init_weights(RunConfig(seed=7))
        assert a.to_bytes() == b.to_bytes()

    def test_different_seed_differs(self):
        a, b = init_weights(RunConfig(seed=7)), init_weights(RunConfig(seed=8))
        assert not np.array_equal(a["encoder.conv0.weight"], b["encoder.conv0.weight"])

    def test_entry_independent_of_creation_order(self):
        a = WeightStore(seed=1)
        a.add_linear("x", 3, 2)
        a.add_linear("y", 3, 2)
        b = WeightStore(seed=1)
        b.add_linear("y", 3, 2)
        b.add_linear("x", 3, 2)
        np.testing.assert_array_equal(a["x.weight"], b["x.weight"])

    def test_documented_generator(self):
        s = WeightStore(seed=9)
        s.add_linear("layer", 16, 4)
        ss = np.random.SeedSequence([9, zlib.crc32(b"layer.weight")])
        expect = np.random.Generator(np.random.PCG64(ss)).uniform(-0.25, 0.25, size=(16, 4)).astype(np.float32)
        np.testing.assert_array_equal(s["layer.weight"], expect)

    def test_fan_in_bound(self):
        s = WeightStore(seed=0)
        s.add_conv("c", 3, 8, 16)
        assert np.abs(s["c.weight"]).max() <= 1 / np.sqrt(72)

    def test_zero_init(self):
        s = WeightStore()
        s.add_linear("z", 3, 3, zero=True)
        assert not s["z.weight"].any() and not s["z.bias"].any()


class TestFormat:
    def test_round_trip_bit_exact(self, store, tmp_path):
        p = tmp_path / "w.tswt"
        store.save(p)
        back = WeightStore.load(p)
        assert back.seed == 42
        assert back.names() == store.names()
        for k in store.names():
            assert back[k].dtype == store[k].dtype
            np.testing.assert_array_equal(back[k], store[k])
        assert back.to_bytes() == p.read_bytes()

    def test_header_layout(self, store):
        raw = store.to_bytes()
        assert raw[:4] == b"TSWT"
        version, seed, count = struct.unpack("<IQI", raw[4:20])
        assert (version, seed, count) == (1, 42, len(store))
        (n,) = struct.unpack("<H", raw[20:22])
        name = raw[22:22 + n].decode()
        rank = raw[22 + n]
        dims = struct.unpack(f"<{rank}I", raw[23 + n:23 + n + 4 * rank])
        dtype_code = raw[23 + n + 4 * rank]
        assert name == "a.fc.weight"
        assert dims == (4, 3)
        assert dtype_code == 0
        start = 24 + n + 4 * rank
        payload = np.frombuffer(raw[start:start + 48], "<f4").reshape(4, 3)
        np.testing.assert_array_equal(payload, store["a.fc.weight"])

    def test_bad_magic(self):
        with pytest.raises(WeightFormatError):
            WeightStore.from_bytes(b"NOPE" + bytes(16))

    def test_truncated(self, store):
        with pytest.raises(WeightFormatError):
            WeightStore.from_bytes(store.to_bytes()[:-3])

    def test_unsupported_dtype(self):
        with pytest.raises(WeightFormatError):
            WeightStore({"i": np.arange(3)}).to_bytes()

    def test_single_tensor(self, tmp_path, rng):
        arr = rng.normal(size=(4, 4, 8)).astype(np.float32)
        save_tensor(tmp_path / "t.tswt", arr)
        np.testing.assert_array_equal(load_tensor(tmp_path / "t.tswt"), arr)

    def test_expect_shape(self, store):
        with pytest.raises(WeightFormatError):
            store.expect("a.fc.weight", (3, 4))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.text(min_size=1, max_size=12), st.lists(st.integers(0, 4), max_size=3),
                              st.booleans()), max_size=5, unique_by=lambda t: t[0]),
           st.integers(0, 2**64 - 1))
    def test_round_trip_property(self, specs, seed):
        r = np.random.default_rng(0)
        entries = {name: r.normal(size=tuple(dims)).astype(np.float64 if dbl else np.float32)
                   for name, dims, dbl in specs}
        s = WeightStore(entries, seed)
        back = WeightStore.from_bytes(s.to_bytes())
        assert back.seed == seed
        for k, v in entries.items():
            assert back[k].shape == v.shape
            np.testing.assert_array_equal(back[k], v)
