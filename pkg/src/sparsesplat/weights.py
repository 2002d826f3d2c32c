"""Named parameter storage and the TSWT binary weight format.

File layout (all little-endian)::

    magic  b"TSWT"
    u32    version          (1)
    u64    seed
    u32    entry count
    per entry:
        u16   name length, then UTF-8 name bytes
        u8    rank
        u32   dims[rank]
        u8    dtype (0 = float32, 1 = float64)
        raw   row-major data

Version 1 files are initialised with numpy's PCG64 generator seeded by
``SeedSequence([seed, crc32(name)])`` per entry, so an entry's initial
values depend only on the seed and its own name, never on creation order.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"TSWT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class WeightFormatError(ValueError):
    pass


@dataclass
class WeightStore:
    """Map from parameter name to dense array, plus the seed used to fill it."""

    entries: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"weight store has no entry {name!r}") from None

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.entries[name] = np.asarray(value)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def _rng(self, name: str) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, zlib.crc32(name.encode("utf-8"))])
        return np.random.Generator(np.random.PCG64(ss))

    # -- initialisers -------------------------------------------------------

    def add_linear(self, name: str, n_in: int, n_out: int, zero: bool = False) -> None:
        """Fan-in scaled uniform init, ``U(-1/sqrt(n_in), 1/sqrt(n_in))``."""
        self._add_dense(name, (n_in, n_out), n_in, zero)

    def add_conv(self, name: str, k: int, c_in: int, c_out: int, zero: bool = False) -> None:
        self._add_dense(name, (k, k, c_in, c_out), k * k * c_in, zero)

    def _add_dense(self, name, shape, fan_in, zero):
        if zero:
            w = np.zeros(shape, np.float32)
            b = np.zeros(shape[-1], np.float32)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            w = self._rng(name + ".weight").uniform(-bound, bound, size=shape).astype(np.float32)
            b = self._rng(name + ".bias").uniform(-bound, bound, size=shape[-1]).astype(np.float32)
        self.entries[f"{name}.weight"] = w
        self.entries[f"{name}.bias"] = b

    def add_mlp(self, name: str, sizes: list[int], zero_last: bool = False) -> None:
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.add_linear(f"{name}.fc{i}", a, b, zero=zero_last and i == len(sizes) - 2)

    def zero(self, prefix: str) -> None:
        """Zero every entry whose name starts with ``prefix``."""
        for k in self.entries:
            if k.startswith(prefix):
                self.entries[k] = np.zeros_like(self.entries[k])

    def expect(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        arr = self[name]
        if tuple(arr.shape) != tuple(shape):
            raise WeightFormatError(f"entry {name!r} has shape {arr.shape}, expected {shape}")
        return arr

    def copy(self) -> "WeightStore":
        return WeightStore({k: v.copy() for k, v in self.entries.items()}, self.seed)

    # -- IO -------------------------------------------------------------------

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<IQI", VERSION, self.seed, len(self.entries))]
        for name, arr in self.entries.items():
            arr = np.asarray(arr)
            code = _CODES.get(arr.dtype)
            if code is None:
                raise WeightFormatError(f"entry {name!r}: unsupported dtype {arr.dtype}")
            raw_name = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw_name)))
            parts.append(raw_name)
            parts.append(struct.pack("<B", arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(struct.pack("<B", code))
            parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightStore":
        if data[:4] != MAGIC:
            raise WeightFormatError("not a TSWT file (bad magic)")
        try:
            version, seed, count = struct.unpack_from("<IQI", data, 4)
            if version != VERSION:
                raise WeightFormatError(f"unsupported TSWT version {version}")
            off = 4 + 16
            entries = {}
            for _ in range(count):
                (n,) = struct.unpack_from("<H", data, off)
                off += 2
                name = data[off:off + n].decode("utf-8")
                off += n
                (rank,) = struct.unpack_from("<B", data, off)
                off += 1
                dims = struct.unpack_from(f"<{rank}I", data, off)
                off += 4 * rank
                (code,) = struct.unpack_from("<B", data, off)
                off += 1
                if code not in _DTYPES:
                    raise WeightFormatError(f"entry {name!r}: unknown dtype code {code}")
                dt = _DTYPES[code]
                nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
                if off + nbytes > len(data):
                    raise WeightFormatError(f"entry {name!r}: truncated payload")
                arr = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize, offset=off)
                entries[name] = arr.reshape(dims).astype(dt.newbyteorder("="))
                off += nbytes
        except struct.error as exc:
            raise WeightFormatError(f"truncated TSWT file: {exc}") from exc
        if name_dupes := count - len(entries):
            raise WeightFormatError(f"{name_dupes} duplicate entry names")
        return cls(entries, seed)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WeightStore":
        return cls.from_bytes(Path(path).read_bytes())


def save_tensor(path, array: np.ndarray, name: str = "tensor") -> None:
    """Write a single array as a one-entry TSWT file."""
    WeightStore({name: np.asarray(array)}).save(path)


def load_tensor(path) -> np.ndarray:
    store = WeightStore.load(path)
    if len(store) != 1:
        raise WeightFormatError(f"{path}: expected a single tensor, found {len(store)} entries")
    return next(iter(store.entries.values()))
