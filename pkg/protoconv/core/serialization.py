"""
Binary tensor dumps and checkpoints

Tensor dump layout (little-endian):
    b"DPCN" | u16 version=1 | u8 dtype (0=f32, 1=f64) | u8 rank | rank×u32 dims | payload

A checkpoint is the concatenation of tensor dumps plus a text index
(`<file>.index`, one `name byte_offset` line per tensor).
"""
import logging
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Tuple, Union

import numpy as np

from protoconv.core.errors import IoError, MalformedTensorFile
from protoconv.core.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"DPCN"
VERSION = 1
_HEADER = struct.Struct("<4sHBB")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}

ArrayOrTensor = Union[Tensor, np.ndarray]


def encode_tensor(value: ArrayOrTensor) -> bytes:
    """Serialize one tensor to bytes"""
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    code = _CODES.get(arr.dtype)
    if code is None:
        arr = arr.astype(np.float64)
        code = 1
    header = _HEADER.pack(MAGIC, VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    return header + dims + payload


def decode_tensor(buf: bytes, offset: int = 0) -> Tuple[Tensor, int]:
    """Parse one tensor at `offset`; returns the tensor and the offset just past it"""
    if len(buf) - offset < _HEADER.size:
        raise MalformedTensorFile("truncated tensor header")
    magic, version, code, rank = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise MalformedTensorFile(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedTensorFile(f"unsupported version {version}")
    if code not in _DTYPES:
        raise MalformedTensorFile(f"unknown dtype code {code}")
    offset += _HEADER.size
    if len(buf) - offset < 4 * rank:
        raise MalformedTensorFile("truncated dims")
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    dtype = _DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - offset < nbytes:
        raise MalformedTensorFile("truncated payload")
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
    arr = arr.reshape(dims).astype(dtype.newbyteorder("="), copy=True)
    return Tensor(arr, dtype=arr.dtype), offset + nbytes


def dump_tensor(value: ArrayOrTensor, fp: BinaryIO) -> int:
    data = encode_tensor(value)
    fp.write(data)
    return len(data)


def write_tensor(value: ArrayOrTensor, path: Path) -> None:
    try:
        Path(path).write_bytes(encode_tensor(value))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_tensor(path: Path) -> Tensor:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    tensor, end = decode_tensor(buf)
    if end != len(buf):
        raise MalformedTensorFile(f"{path}: {len(buf) - end} trailing bytes")
    return tensor


def index_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".index")


def save_checkpoint(tensors: Mapping[str, ArrayOrTensor], path: Path) -> None:
    """Write named tensors in iteration order plus the offset index"""
    path = Path(path)
    lines = []
    try:
        with open(path, "wb") as fp:
            offset = 0
            for name, value in tensors.items():
                if any(ch.isspace() for ch in name):
                    raise ValueError(f"tensor name '{name}' contains whitespace")
                lines.append(f"{name} {offset}")
                offset += dump_tensor(value, fp)
        index_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write checkpoint {path}: {e}") from e
    logger.debug("saved %d tensors to %s", len(lines), path)


def load_checkpoint(path: Path) -> Dict[str, Tensor]:
    """Read a checkpoint back into an ordered name -> tensor mapping"""
    path = Path(path)
    try:
        buf = path.read_bytes()
        index = index_path(path).read_text(encoding="utf-8").split("\n")
    except OSError as e:
        raise IoError(f"cannot read checkpoint {path}: {e}") from e
    tensors: Dict[str, Tensor] = {}
    for line in index:
        if not line.strip():
            continue
        try:
            name, offset = line.split()
            start = int(offset)
        except ValueError as e:
            raise MalformedTensorFile(f"bad index line '{line}'") from e
        tensors[name], _ = decode_tensor(buf, start)
    return tensors
