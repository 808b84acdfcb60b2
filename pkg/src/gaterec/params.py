"""Named parameter registry with Adam state and a versioned checkpoint format.

A ParameterSet maps slot names to dense arrays and carries the Adam first and
second moment buffers plus a shared step counter. Slots registered with
``regularized=True`` contribute to the L2 penalty.

Checkpoints are a sectioned little-endian binary container:

    magic "GRECCKPT" | u32 format version | u64 step | u32 meta length |
    meta (canonical JSON, utf-8) | u32 slot count | slots...

Each slot section is: u16 name length, name utf-8, u8 flags (bit 0 =
regularized), u8 dtype code (0 = float64, 1 = float32), u8 ndim, u32 dims,
then raw bytes for value, first moment, second moment. Raw float bytes round
trip bit-exactly.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError

CHECKPOINT_MAGIC = b"GRECCKPT"
CHECKPOINT_VERSION = 1

_DTYPE_FOR_CODE = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODE_FOR_DTYPE = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}


@dataclass
class AdamConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def validate(self) -> "AdamConfig":
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.beta1 < 1:
            raise ConfigError(f"beta1 must be in (0, 1), got {self.beta1}")
        if not 0 < self.beta2 < 1:
            raise ConfigError(f"beta2 must be in (0, 1), got {self.beta2}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        return self


class ParameterSet:
    """Ordered name -> array registry with per-slot Adam moments."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._values: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._regularized: set[str] = set()
        self.step = 0

    def register(self, name: str, value: np.ndarray, regularized: bool = False) -> None:
        if name in self._values:
            raise ValueError(f"slot {name!r} already registered")
        arr = np.array(value, dtype=self.dtype)
        self._values[name] = arr
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)
        if regularized:
            self._regularized.add(name)

    def names(self) -> list[str]:
        return list(self._values)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        slot = self._values[name]
        value = np.asarray(value, dtype=self.dtype)
        if value.shape != slot.shape:
            raise ValueError(f"slot {name!r} expects shape {slot.shape}, got {value.shape}")
        slot[...] = value

    def is_regularized(self, name: str) -> bool:
        return name in self._regularized

    def moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._m[name], self._v[name]

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self._values.items()}

    def l2(self) -> float:
        """Sum of squared entries over regularized slots."""
        return float(sum(np.sum(self._values[n].astype(np.float64) ** 2) for n in self._regularized))

    def add_l2_grads(self, grads: dict[str, np.ndarray], weight: float) -> None:
        for name in self._regularized:
            grads[name] += 2.0 * weight * self._values[name]

    def copy(self) -> "ParameterSet":
        out = ParameterSet(dtype=self.dtype)
        for name, arr in self._values.items():
            out.register(name, arr.copy(), regularized=name in self._regularized)
            out._m[name][...] = self._m[name]
            out._v[name][...] = self._v[name]
        out.step = self.step
        return out

    def equal_bits(self, other: "ParameterSet") -> bool:
        """Bit-exact equality of values, moments, and step counter."""
        if self.names() != other.names() or self.step != other.step:
            return False
        return all(
            np.array_equal(self._values[n], other._values[n])
            and np.array_equal(self._m[n], other._m[n])
            and np.array_equal(self._v[n], other._v[n])
            for n in self._values
        )


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)); vectors use fan_out 1."""
    if len(shape) == 2:
        fan_out, fan_in = shape
    elif len(shape) == 1:
        fan_out, fan_in = 1, shape[0]
    else:
        raise ValueError(f"unsupported shape {shape}")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], cfg: AdamConfig) -> None:
    """In-place bias-corrected Adam update; increments the shared step counter."""
    for name in params.names():
        if name not in grads:
            raise ValueError(f"missing gradient for slot {name!r}")
    for name in grads:
        if name not in params:
            raise ValueError(f"gradient for unknown slot {name!r}")
        g = np.asarray(grads[name])
        if g.shape != params[name].shape:
            raise ValueError(
                f"gradient shape mismatch for slot {name!r}: {g.shape} vs {params[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for slot {name!r}")

    params.step += 1
    t = params.step
    b1, b2 = cfg.beta1, cfg.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name in params.names():
        g = np.asarray(grads[name], dtype=params.dtype)
        m, v = params.moments(name)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = cfg.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + cfg.epsilon)
        params[name][...] -= update


def _pack_array(arr: np.ndarray, dtype: np.dtype) -> bytes:
    return np.ascontiguousarray(arr, dtype=dtype).tobytes()


def save_checkpoint(params: ParameterSet, path, meta: dict | None = None) -> None:
    """Write a bit-exact snapshot of values, Adam moments, step, and metadata."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    dtype_code = _CODE_FOR_DTYPE[params.dtype]
    le_dtype = _DTYPE_FOR_CODE[dtype_code]
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<IQ", CHECKPOINT_VERSION, params.step),
        struct.pack("<I", len(meta_bytes)),
        meta_bytes,
        struct.pack("<I", len(params.names())),
    ]
    for name in params.names():
        arr = params[name]
        m, v = params.moments(name)
        name_bytes = name.encode("utf-8")
        flags = 1 if params.is_regularized(name) else 0
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BBB", flags, dtype_code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(_pack_array(arr, le_dtype))
        chunks.append(_pack_array(m, le_dtype))
        chunks.append(_pack_array(v, le_dtype))
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError("truncated checkpoint file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[ParameterSet, dict]:
    """Read a checkpoint back; inverse of save_checkpoint (bit-exact)."""
    reader = _Reader(Path(path).read_bytes())
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    version, step = reader.unpack("<IQ")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = reader.unpack("<I")
    meta = json.loads(reader.take(meta_len).decode("utf-8"))
    (n_slots,) = reader.unpack("<I")

    params: ParameterSet | None = None
    for _ in range(n_slots):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        flags, dtype_code, ndim = reader.unpack("<BBB")
        shape = reader.unpack(f"<{ndim}I")
        if dtype_code not in _DTYPE_FOR_CODE:
            raise DataError(f"{path}: unknown dtype code {dtype_code}")
        le_dtype = _DTYPE_FOR_CODE[dtype_code]
        if params is None:
            params = ParameterSet(dtype=le_dtype.newbyteorder("="))
        count = int(np.prod(shape)) if ndim else 1
        nbytes = count * le_dtype.itemsize

        def read_array() -> np.ndarray:
            flat = np.frombuffer(reader.take(nbytes), dtype=le_dtype)
            return flat.reshape(shape).astype(le_dtype.newbyteorder("="), copy=True)

        value = read_array()
        m = read_array()
        v = read_array()
        params.register(name, value, regularized=bool(flags & 1))
        params._m[name][...] = m
        params._v[name][...] = v

    if params is None:
        params = ParameterSet()
    params.step = step
    return params, meta
