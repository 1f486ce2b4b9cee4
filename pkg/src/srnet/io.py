"""File formats: SRTN tensors, binary PGM/PPM images, flat ``key = value`` configs.

SRTN layout::

    b"SRTN" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim
    | ndim x u32 LE extents | row-major LE scalars
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .tensor import ParamSet

SRTN_MAGIC = b"SRTN"
SRTN_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    pass


def encode_srtn(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise FormatError(f"SRTN stores float32/float64 only, got {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("too many axes")
    code = _DTYPE_CODES[arr.dtype]
    head = SRTN_MAGIC + struct.pack("<BBB", SRTN_VERSION, code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes()


def decode_srtn(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != SRTN_MAGIC:
        raise FormatError("not an SRTN stream (bad magic)")
    version, code, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != SRTN_VERSION:
        raise FormatError(f"unsupported SRTN version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown SRTN dtype code {code}")
    off = 7 + 4 * ndim
    if len(buf) < off:
        raise FormatError("truncated SRTN header")
    shape = struct.unpack_from(f"<{ndim}I", buf, 7)
    dt = _CODE_DTYPES[code]
    n = int(np.prod(shape)) if ndim else 1
    if len(buf) != off + n * dt.itemsize:
        raise FormatError(f"SRTN payload size mismatch for shape {shape}")
    return np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(shape).astype(dt.newbyteorder("="))


def write_srtn(path: str, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_srtn(arr))


def read_srtn(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_srtn(fh.read())


# -- netpbm -------------------------------------------------------------------

def _read_netpbm(path: str, magic: bytes) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} header, got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise FormatError("only 8-bit netpbm files are supported")
    ch = 3 if magic == b"P6" else 1
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * ch, offset=pos)
    return raster.reshape(h, w, ch) if ch == 3 else raster.reshape(h, w)


def _write_netpbm(path: str, magic: bytes, arr: np.ndarray) -> None:
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def read_pgm(path: str) -> np.ndarray:
    """8-bit single-channel image as ``uint8[H, W]``."""
    return _read_netpbm(path, b"P5")


def write_pgm(path: str, arr) -> None:
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim != 2:
        raise FormatError("PGM needs a single-channel image")
    _write_netpbm(path, b"P5", arr)


def read_ppm(path: str) -> np.ndarray:
    """8-bit RGB image as ``float32[H, W, 3]`` in [0, 1]."""
    return _read_netpbm(path, b"P6").astype(np.float32) / 255.0


def write_ppm(path: str, rgb) -> None:
    rgb = np.asarray(rgb)
    if rgb.dtype.kind == "f":
        rgb = np.clip(np.rint(rgb * 255.0), 0, 255)
    _write_netpbm(path, b"P6", rgb)


def read_frame(path: str) -> np.ndarray:
    if path.endswith(".srtn"):
        return read_srtn(path).astype(np.float32)
    return read_ppm(path)


def read_labels(path: str) -> np.ndarray:
    """Label map (0 = background, i = object i) from PGM or SRTN."""
    if path.endswith(".srtn"):
        arr = read_srtn(path)
        return np.rint(arr.reshape(arr.shape[:2])).astype(np.int64)
    return read_pgm(path).astype(np.int64)


# -- key = value configs -------------------------------------------------------

def _parse_value(raw: str):
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    if "," in raw:
        return tuple(_parse_value(p.strip()) for p in raw.split(",") if p.strip())
    return raw


def parse_kv(text: str) -> dict:
    """Parse flat ``dotted.key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"line {lineno}: empty key")
        out[key] = _parse_value(raw)
    return out


def read_kv(path: str) -> dict:
    with open(path) as fh:
        return parse_kv(fh.read())


def format_kv(mapping: dict) -> str:
    lines = []
    for k, v in mapping.items():
        if isinstance(v, (tuple, list)):
            v = ", ".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def write_kv(path: str, mapping: dict) -> None:
    with open(path, "w") as fh:
        fh.write(format_kv(mapping))


# -- parameter sets --------------------------------------------------------------

def save_params(params: ParamSet, directory: str) -> None:
    """One SRTN file per parameter, named ``<param-name>.srtn``, plus ``params.txt``."""
    os.makedirs(directory, exist_ok=True)
    names = params.names()
    for name in names:
        write_srtn(os.path.join(directory, f"{name}.srtn"), params[name].data)
    with open(os.path.join(directory, "params.txt"), "w") as fh:
        fh.write("\n".join(names) + "\n")


def load_params(directory: str, dtype=None) -> ParamSet:
    with open(os.path.join(directory, "params.txt")) as fh:
        names = [ln.strip() for ln in fh if ln.strip()]
    arrays = {n: read_srtn(os.path.join(directory, f"{n}.srtn")) for n in names}
    if dtype is None:
        dtype = arrays[names[0]].dtype if names else np.float32
    params = ParamSet(dtype)
    for n in names:
        params.add(n, arrays[n])
    return params
