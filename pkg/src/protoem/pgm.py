"""Binary greyscale (P5) image files and assignment-map export."""
from pathlib import Path

import numpy as np
from PIL import Image


def write_pgm(path, pixels):
    """Write an (H, W) integer array in [0, 255] as an 8-bit P5 file."""
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("pixel values must lie in [0, 255]")
    Image.fromarray(arr.astype(np.uint8)).save(path, format="PPM")


def read_pgm(path):
    """(H, W) uint8 array from a PGM file."""
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "L":
            raise ValueError(f"{path} is not a greyscale PGM")
        return np.asarray(im, dtype=np.uint8).copy()


def read_image(path):
    """Greyscale image as (H, W, 1) floats in [0, 1]."""
    return read_pgm(path).astype(np.float64)[..., None] / 255.0


def assignment_images(assign, height, width):
    """Per-prototype maps ``round(255 M)`` and the argmax map from a (K, T) assignment."""
    m = np.asarray(assign, dtype=np.float64)
    k = m.shape[0]
    if m.shape[1] != height * width:
        raise ValueError(f"assignment has {m.shape[1]} tokens, grid is {height}x{width}")
    if k > 256:
        raise ValueError("argmax map holds at most 256 prototypes")
    maps = [np.rint(255.0 * m[i]).reshape(height, width).astype(np.uint8) for i in range(k)]
    argmax = np.argmax(m, axis=0).reshape(height, width).astype(np.uint8)
    return maps, argmax


def export_assignments(assign, height, width, out_dir):
    """Write ``proto_<k>.pgm`` for every prototype and ``argmax.pgm``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maps, argmax = assignment_images(assign, height, width)
    paths = []
    for i, img in enumerate(maps):
        p = out / f"proto_{i}.pgm"
        write_pgm(p, img)
        paths.append(p)
    p = out / "argmax.pgm"
    write_pgm(p, argmax)
    paths.append(p)
    return paths
