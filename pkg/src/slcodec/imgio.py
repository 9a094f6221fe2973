"""Image and map file formats: binary PGM (P5), PFM float maps, and the
red-marked error visualization PNGs."""

from __future__ import annotations

import numpy as np
from PIL import Image


def write_pgm(path, img: np.ndarray):
    """Binary PGM; uint8 uses maxval 255, uint16 maxval 65535 big-endian."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM expects a 2-D array")
    if img.dtype == np.uint8:
        maxval, payload = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, payload = 65535, img.astype(">u2").tobytes()
    else:
        raise ValueError(f"unsupported dtype {img.dtype}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode())
        fh.write(payload)


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM file")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    img = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return img.reshape(height, width).astype(np.uint16 if maxval > 255 else np.uint8)


def write_pfm(path, data: np.ndarray, scale: float = -1.0):
    """Single-channel PFM; negative scale marks little-endian payload."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError("PFM expects a 2-D array")
    payload = data[::-1].astype("<f4" if scale < 0 else ">f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{data.shape[1]} {data.shape[0]}\n{scale}\n".encode())
        fh.write(payload)


def read_pfm(path) -> tuple[np.ndarray, float]:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise ValueError("only single-channel PFM is supported")
        dims = fh.readline().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(4 * width * height), dtype=dtype)
    return data.reshape(height, width)[::-1].astype(np.float32), abs(scale)


def render_disparity_png(path, disparity, valid=None, error_mask=None):
    """Grayscale disparity render with error pixels painted red and invalid
    pixels black."""
    disp = np.asarray(disparity, dtype=np.float64)
    valid = np.ones(disp.shape, bool) if valid is None else np.asarray(valid, bool)
    vals = disp[valid]
    lo, hi = (vals.min(), vals.max()) if vals.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    gray = np.clip((disp - lo) / span * 255.0, 0, 255).astype(np.uint8)
    rgb = np.stack([gray, gray, gray], axis=-1)
    rgb[~valid] = 0
    if error_mask is not None:
        rgb[np.asarray(error_mask, bool) & valid] = (220, 30, 30)
    Image.fromarray(rgb, "RGB").save(path)


def render_mask_png(path, mask):
    """Boolean map as a black and white image (white marks set pixels)."""
    img = np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8)
    Image.fromarray(img, "L").save(path)
