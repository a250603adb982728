"""8-bit RGB image files (PNG via Pillow, binary PPM by hand)."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, img) -> None:
    """Binary P6 PPM; byte-exact for a given float image."""
    data = to_uint8(img)
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: only 8-bit P6 PPM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw[pos + 1 : pos + 1 + w * h * 3], dtype=np.uint8)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def write_png(path, img) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def read_image(path) -> np.ndarray:
    """Float RGB image in [0, 1] from a PNG or PPM file."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_image(path, img) -> None:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        write_ppm(path, img)
    else:
        write_png(path, img)
