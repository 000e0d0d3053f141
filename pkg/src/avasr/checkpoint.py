"""Binary serialization for model checkpoints and single tensors.

Checkpoint layout (all integers little-endian):
    magic 'AVCK' | u32 version=1 | u32 config_len | config UTF-8 text
    | u32 param_count | param records
Each param record:
    u16 name_len | name UTF-8 | u8 dtype code (1=float32, 2=float64)
    | u8 ndim | ndim x u64 dims | raw little-endian element bytes

Single-tensor files ('AVTF') use the same record body without a name.
Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InputError

_CKPT_MAGIC = b"AVCK"
_TENSOR_MAGIC = b"AVTF"
_VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def _dtype_code(arr: np.ndarray) -> int:
    code = _DTYPE_CODES.get(np.dtype(arr.dtype.str.replace(">", "<")))
    if code is None:
        raise InputError(f"unsupported tensor dtype {arr.dtype}")
    return code


def _write_array(f, arr: np.ndarray) -> None:
    code = _dtype_code(arr)
    f.write(struct.pack("<BB", code, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes())


def _read_array(f) -> np.ndarray:
    code, ndim = struct.unpack("<BB", f.read(2))
    shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim)) if ndim else ()
    dtype = _CODE_DTYPES.get(code)
    if dtype is None:
        raise InputError(f"unknown dtype code {code}")
    count = int(np.prod(shape)) if shape else 1
    data = f.read(count * dtype.itemsize)
    if len(data) != count * dtype.itemsize:
        raise InputError("truncated tensor data")
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy()


def save_checkpoint(path, named_arrays: dict[str, np.ndarray], config_text: str) -> None:
    cfg = config_text.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(cfg)))
        f.write(cfg)
        f.write(struct.pack("<I", len(named_arrays)))
        for name, arr in named_arrays.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            _write_array(f, arr)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise InputError(f"{path} is not a checkpoint file")
        version, cfg_len = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise InputError(f"unsupported checkpoint version {version}")
        config_text = f.read(cfg_len).decode("utf-8")
        (count,) = struct.unpack("<I", f.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            arrays[name] = _read_array(f)
    return arrays, config_text


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(_TENSOR_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        _write_array(f, np.asarray(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(4) != _TENSOR_MAGIC:
            raise InputError(f"{path} is not a tensor file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise InputError(f"unsupported tensor file version {version}")
        return _read_array(f)
