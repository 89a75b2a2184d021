"""
Binary masks as P5 PGM files (maxval 255, foreground = 255)
"""
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from protoconv.core.errors import IoError, MalformedHeader
from protoconv.core.tensor import Tensor

MAXVAL = 255


def pgm_header(width: int, height: int) -> bytes:
    return f"P5\n{width} {height}\n{MAXVAL}\n".encode("ascii")


def write_mask_pgm(mask: Union[Tensor, np.ndarray], path: Path) -> None:
    arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {arr.shape}")
    height, width = arr.shape
    payload = np.where(arr > 0.5, MAXVAL, 0).astype(np.uint8).tobytes()
    try:
        Path(path).write_bytes(pgm_header(width, height) + payload)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def _header_fields(buf: bytes) -> Tuple[list, int]:
    """Magic plus three integers; returns them and the payload offset"""
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeader("truncated PGM header")
        fields.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise MalformedHeader("missing whitespace after maxval")
    return fields, pos + 1


def read_mask_pgm(path: Path) -> Tensor:
    """Read a P5 mask back as a {0, 1} tensor"""
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    fields, offset = _header_fields(buf)
    if fields[0] != b"P5":
        raise MalformedHeader(f"{path}: magic {fields[0]!r}, expected P5")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as e:
        raise MalformedHeader(f"{path}: non-integer header field") from e
    if width < 1 or height < 1 or maxval != MAXVAL:
        raise MalformedHeader(f"{path}: unsupported geometry {width}x{height} maxval {maxval}")
    raster = np.frombuffer(buf, dtype=np.uint8, offset=offset)
    if raster.size != width * height:
        raise MalformedHeader(f"{path}: expected {width * height} pixels, found {raster.size}")
    return Tensor((raster.reshape(height, width) > MAXVAL // 2).astype(np.float64))
