"""Radiance RGBE (.hdr) reader and writer.

Shared-exponent encoding: each pixel stores 8-bit mantissas for R, G, B
plus one exponent byte E, decoding to c * 2^(E-136).  The reader accepts
flat scanlines and the adaptive run-length encoding; the writer always
emits adaptive RLE, so write -> read -> write is byte-stable once the
first quantization has happened.
"""

from __future__ import annotations

import numpy as np

from relightkit.envlight.envmap import EnvMap
from relightkit.errors import FileFormatError

_MAGIC = b"#?RADIANCE"
_FORMAT = b"FORMAT=32-bit_rle_rgbe"


def _float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    """(n, 3) float -> (n, 4) uint8 with canonical mantissas."""
    rgb = np.maximum(rgb, 0.0)
    peak = rgb.max(axis=1)
    out = np.zeros((rgb.shape[0], 4), dtype=np.uint8)
    live = peak >= 1e-32
    if np.any(live):
        mant, expo = np.frexp(peak[live])
        # scale is an exact power of two for already-quantized input, so
        # truncation reproduces the stored mantissas byte for byte; it
        # also keeps channel * scale < 256 for fresh data.
        scale = mant * 256.0 / peak[live]
        out[live, :3] = np.floor(rgb[live] * scale[:, None]).astype(np.uint8)
        out[live, 3] = (expo + 128).astype(np.uint8)
    return out


def _rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """(n, 4) uint8 -> (n, 3) float64."""
    expo = rgbe[:, 3].astype(np.int32)
    scale = np.where(expo == 0, 0.0, np.ldexp(1.0, expo - 136))
    return rgbe[:, :3].astype(np.float64) * scale[:, None]


def _read_header(data: bytes, path) -> tuple[int, int, int]:
    """Parse header lines; returns (width, height, body offset)."""
    pos = 0
    lineno = 0
    saw_format = False
    first = True
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise FileFormatError(path, "unterminated header")
        line = data[pos:nl]
        lineno += 1
        pos = nl + 1
        if first:
            if not line.startswith(_MAGIC):
                raise FileFormatError(path, "missing #?RADIANCE magic", line=1)
            first = False
            continue
        if line == b"":
            break                       # blank line ends the header
        if line.startswith(b"#"):
            continue
        if line.startswith(b"FORMAT="):
            if line.strip() != _FORMAT:
                raise FileFormatError(
                    path, f"unsupported FORMAT {line.decode(errors='replace')}",
                    line=lineno)
            saw_format = True
        # EXPOSURE / other variables are legal; carry no meaning here.
    if not saw_format:
        raise FileFormatError(path, "missing FORMAT=32-bit_rle_rgbe line")
    nl = data.find(b"\n", pos)
    if nl < 0:
        raise FileFormatError(path, "missing resolution line")
    lineno += 1
    parts = data[pos:nl].split()
    if len(parts) != 4 or parts[0] != b"-Y" or parts[2] != b"+X":
        raise FileFormatError(
            path, "only '-Y H +X W' orientation is supported", line=lineno)
    try:
        height, width = int(parts[1]), int(parts[3])
    except ValueError:
        raise FileFormatError(path, "bad resolution line", line=lineno) from None
    if height < 1 or width < 1:
        raise FileFormatError(path, "non-positive resolution", line=lineno)
    return width, height, nl + 1


def _decode_rle_scanline(data: bytes, pos: int, width: int, path) -> tuple[np.ndarray, int]:
    """Decode one adaptive-RLE scanline into (width, 4) uint8 bytes."""
    row = np.empty((4, width), dtype=np.uint8)
    for comp in range(4):
        filled = 0
        while filled < width:
            if pos >= len(data):
                raise FileFormatError(path, "truncated RLE scanline")
            code = data[pos]
            pos += 1
            if code > 128:              # run of a repeated byte
                count = code - 128
                if pos >= len(data) or filled + count > width:
                    raise FileFormatError(path, "corrupt RLE run")
                row[comp, filled:filled + count] = data[pos]
                pos += 1
            else:                       # literal bytes
                count = code
                if count == 0 or filled + count > width or pos + count > len(data):
                    raise FileFormatError(path, "corrupt RLE literal block")
                row[comp, filled:filled + count] = np.frombuffer(
                    data, dtype=np.uint8, count=count, offset=pos)
                pos += count
            filled += count
    return row.T, pos


def read_hdr(path) -> EnvMap:
    """Read a Radiance .hdr file into an EnvMap (requires W = 2H)."""
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, pos = _read_header(data, path)
    rgbe = np.empty((height, width, 4), dtype=np.uint8)
    for iy in range(height):
        if pos + 4 > len(data):
            raise FileFormatError(path, f"truncated at scanline {iy}")
        head = data[pos:pos + 4]
        if head[0] == 2 and head[1] == 2 and (head[2] << 8 | head[3]) == width \
                and 8 <= width < 32768:
            rgbe[iy], pos = _decode_rle_scanline(data, pos + 4, width, path)
        elif head[0] == 1 and head[1] == 1 and head[2] == 1:
            raise FileFormatError(path, "old-style RLE scanlines not supported")
        else:                           # flat scanline
            need = width * 4
            if pos + need > len(data):
                raise FileFormatError(path, f"truncated at scanline {iy}")
            rgbe[iy] = np.frombuffer(
                data, dtype=np.uint8, count=need, offset=pos).reshape(width, 4)
            pos += need
    rgb = _rgbe_to_float(rgbe.reshape(-1, 4)).reshape(height, width, 3)
    return EnvMap(rgb)


def _encode_component(comp: bytes) -> bytearray:
    """Adaptive RLE for one scanline component (greedy, runs >= 4)."""
    out = bytearray()
    n = len(comp)
    i = 0
    lit_start = 0
    while i < n:
        run = 1
        while i + run < n and run < 127 and comp[i + run] == comp[i]:
            run += 1
        if run >= 4:
            j = lit_start
            while j < i:                # flush pending literals first
                chunk = min(128, i - j)
                out.append(chunk)
                out.extend(comp[j:j + chunk])
                j += chunk
            out.append(128 + run)
            out.append(comp[i])
            i += run
            lit_start = i
        else:
            i += run
    j = lit_start
    while j < n:
        chunk = min(128, n - j)
        out.append(chunk)
        out.extend(comp[j:j + chunk])
        j += chunk
    return out


def write_hdr(path, env: EnvMap) -> None:
    """Write an EnvMap as Radiance RGBE with adaptive-RLE scanlines."""
    h, w = env.height, env.width
    rgbe = _float_to_rgbe(env.data.reshape(-1, 3)).reshape(h, w, 4)
    out = bytearray()
    out.extend(_MAGIC + b"\n")
    out.extend(_FORMAT + b"\n\n")
    out.extend(f"-Y {h} +X {w}\n".encode())
    flat_rows = not (8 <= w < 32768)    # RLE header can't express tiny/huge W
    for iy in range(h):
        if flat_rows:
            out.extend(rgbe[iy].tobytes())
            continue
        out.extend(bytes((2, 2, w >> 8, w & 0xFF)))
        for comp in range(4):
            out.extend(_encode_component(rgbe[iy, :, comp].tobytes()))
    with open(path, "wb") as fh:
        fh.write(bytes(out))
