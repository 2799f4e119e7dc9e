"""Header-plus-payload container used by every on-disk format.

A file is one UTF-8 JSON object terminated by ``\\n`` followed by a raw
little-endian array payload.
"""

import json
from pathlib import Path

import numpy as np

from .errors import HeaderError, MissingFileError, SizeMismatchError


def write_blob(path, header, arrays, dtype="<f8"):
    line = json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n"
    with open(path, "wb") as fh:
        fh.write(line)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def read_blob(path):
    """Return ``(header_dict, payload_bytes)``."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"file not found: {path}")
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise HeaderError(f"{path}: header line is not terminated by a newline")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"{path}: header is not valid JSON ({exc})") from None
    if not isinstance(header, dict):
        raise HeaderError(f"{path}: header must be a JSON object")
    return header, raw[nl + 1:]


def header_int(header, key, path, minimum=1):
    if key not in header:
        raise HeaderError(f"{path}: header field '{key}' is missing")
    value = header[key]
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise HeaderError(f"{path}: header field '{key}' must be an integer >= {minimum}, got {value!r}")
    return value


def split_payload(payload, counts, path, dtype="<f8"):
    """Cut ``payload`` into float64 arrays of the given element counts."""
    itemsize = np.dtype(dtype).itemsize
    expected = sum(counts) * itemsize
    if len(payload) != expected:
        raise SizeMismatchError(
            f"{path}: payload holds {len(payload)} bytes, header implies {expected}"
        )
    out = []
    offset = 0
    for n in counts:
        chunk = np.frombuffer(payload, dtype=dtype, count=n, offset=offset)
        out.append(chunk.astype(np.float64))
        offset += n * itemsize
    return out


def expect_type(header, kind, path):
    if header.get("type") != kind:
        raise HeaderError(f"{path}: expected type '{kind}', got {header.get('type')!r}")
