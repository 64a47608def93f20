"""LDR image and mask files: 8-bit PNG and binary PGM.

PNG carries [0, 1] float images quantized to uint8 with rounding; PGM
(P5, maxval 255) carries boolean masks as 0/255. Both are the smallest
formats the surrounding tools (image viewers, numpy, PIL) all agree on.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

from relightkit.errors import FileFormatError, PreconditionError

__all__ = ["read_png", "write_png", "read_pgm", "write_pgm"]


def write_png(path, image) -> None:
    """Write a float image in [0, 1] (HxW or HxWx3) as an 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None].repeat(3, axis=-1)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise PreconditionError(f"expected HxW or HxWx3 image, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise PreconditionError("image contains non-finite values")
    quant = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quant, mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Read a PNG as an HxWx3 float array in [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64)
    except UnidentifiedImageError as exc:
        raise FileFormatError(path, f"not a readable image: {exc}") from exc
    return arr / 255.0


def write_pgm(path, mask) -> None:
    """Write a boolean mask as binary PGM (P5), true -> 255."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise PreconditionError(f"expected an HxW mask, got shape {arr.shape}")
    data = np.where(arr.astype(bool), 255, 0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _pgm_tokens(blob: bytes, path):
    """Yield header tokens, skipping whitespace and # comments."""
    i = 0
    for _ in range(4):  # magic, width, height, maxval
        while i < len(blob):
            c = blob[i:i + 1]
            if c == b"#":
                while i < len(blob) and blob[i:i + 1] != b"\n":
                    i += 1
            elif c.isspace():
                i += 1
            else:
                break
        start = i
        while i < len(blob) and not blob[i:i + 1].isspace():
            i += 1
        if start == i:
            raise FileFormatError(path, "truncated PGM header")
        yield blob[start:i]
        i += 1  # single whitespace byte after a token
    yield i


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM as a boolean mask (pixel > maxval/2 -> true)."""
    with open(path, "rb") as f:
        blob = f.read()
    magic, w_tok, h_tok, maxval_tok, offset = _pgm_tokens(blob, path)
    if magic != b"P5":
        raise FileFormatError(path, f"expected P5 magic, got {magic!r}")
    try:
        w, h, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    except ValueError as exc:
        raise FileFormatError(path, "non-numeric PGM header field") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 256:
        raise FileFormatError(
            path, f"bad PGM dimensions {w}x{h} maxval {maxval}")
    raster = blob[offset:offset + w * h]
    if len(raster) != w * h:
        raise FileFormatError(
            path, f"PGM raster has {len(raster)} bytes, expected {w * h}")
    data = np.frombuffer(raster, dtype=np.uint8).reshape(h, w)
    return data > maxval // 2
