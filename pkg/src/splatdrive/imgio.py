"""Binary image I/O: PPM (P6, 8-bit color) and PFM (32-bit float, little-endian).

PFM scanlines are stored bottom-to-top with a negative scale marking
little-endian data, per the de-facto standard.
"""
from __future__ import annotations

import os

import numpy as np

from .errors import InvalidInputError


def write_ppm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as binary PPM."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError(f"PPM wants (H, W, 3), got {image.shape}")
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary PPM into an (H, W, 3) float64 image in [0, 1]."""
    with open(path, "rb") as f:
        magic = _token(f)
        if magic != b"P6":
            raise InvalidInputError(f"{path}: not a P6 PPM (magic {magic!r})")
        w, h, maxval = int(_token(f)), int(_token(f)), int(_token(f))
        if maxval != 255:
            raise InvalidInputError(f"{path}: unsupported maxval {maxval}")
        raw = f.read(w * h * 3)
    if len(raw) != w * h * 3:
        raise InvalidInputError(f"{path}: truncated PPM payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def _token(f) -> bytes:
    # whitespace-delimited header token; '#' starts a comment to end of line
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise InvalidInputError("unexpected end of header")
        if c == b"#":
            while c and c != b"\n":
                c = f.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def write_pfm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write an (H, W) or (H, W, 3) float image as little-endian PFM."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        header = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        header = b"PF"
    else:
        raise InvalidInputError(f"PFM wants (H, W) or (H, W, 3), got {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(image[::-1].astype("<f4").tobytes())


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    """Read a PFM into (H, W) or (H, W, 3) float32, top-to-bottom rows."""
    with open(path, "rb") as f:
        magic = _token(f)
        if magic == b"PF":
            channels = 3
        elif magic == b"Pf":
            channels = 1
        else:
            raise InvalidInputError(f"{path}: not a PFM (magic {magic!r})")
        w, h = int(_token(f)), int(_token(f))
        scale = float(_token(f))
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        raw = f.read(count * 4)
    if len(raw) != count * 4:
        raise InvalidInputError(f"{path}: truncated PFM payload")
    data = np.frombuffer(raw, dtype=dtype).reshape(h, w, channels)[::-1]
    data = data.astype(np.float32)
    return data[..., 0] if channels == 1 else data
