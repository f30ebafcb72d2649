"""Grayscale/RGB image and mask file I/O (PNG, PGM P5, TIFF via Pillow)."""
from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .errors import ConfigError, ImageIOError


def _check_depth(a, depth):
    if depth not in (8, 16):
        raise ConfigError("bit depth must be 8 or 16")
    if a.size and (a.min() < 0 or a.max() >= 2 ** depth):
        raise ConfigError(f"values outside [0, 2^{depth})")


def read_gray(path) -> np.ndarray:
    """Single-channel image as uint8/uint16. RGB input is converted to luma."""
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                a = np.asarray(im, dtype=np.int64)
                return a.astype(np.uint16)
            if im.mode != "L":
                im = im.convert("L")
            return np.asarray(im, dtype=np.uint8).copy()
    except (OSError, ValueError) as e:
        raise ImageIOError(f"cannot read image {path}: {e}") from e


def read_rgb(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as e:
        raise ImageIOError(f"cannot read image {path}: {e}") from e


def read_mask(path) -> np.ndarray:
    """Masks are stored as {0,255}; any nonzero pixel is foreground."""
    return read_gray(path) > 0


def write_gray(path, img, depth=8):
    a = np.rint(np.asarray(img, dtype=np.float64))
    _check_depth(a, depth)
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        if str(path).lower().endswith(".pgm"):
            _write_pgm(path, a, depth)
        elif depth == 8:
            Image.fromarray(a.astype(np.uint8), "L").save(path)
        else:
            Image.fromarray(a.astype(np.uint16)).save(path)
    except OSError as e:
        raise ImageIOError(f"cannot write {path}: {e}") from e


def _write_pgm(path, a, depth):
    H, W = a.shape
    maxval = 255 if depth == 8 else 65535
    dt = np.uint8 if depth == 8 else ">u2"
    with open(path, "wb") as f:
        f.write(f"P5\n{W} {H}\n{maxval}\n".encode("ascii"))
        f.write(a.astype(dt).tobytes())


def write_mask(path, mask):
    write_gray(path, np.asarray(mask, bool).astype(np.uint8) * 255)


def write_rgb(path, img):
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        Image.fromarray(np.asarray(img, np.uint8), "RGB").save(path)
    except OSError as e:
        raise ImageIOError(f"cannot write {path}: {e}") from e


def write_labels(path, labels):
    lab = np.asarray(labels)
    depth = 8 if lab.max(initial=0) < 256 else 16
    write_gray(path, lab, depth)
