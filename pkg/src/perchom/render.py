"""Binary PGM/PPM images of fields and cluster labels, one pixel per vertex.

In 3D the central slice ``x_0 = side // 2`` is drawn.  Row ``i`` of the
image is index ``i`` along axis 0, column ``j`` is index ``j`` along axis 1.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .cluster import ClusterLabels

__all__ = ["field_image", "labels_image", "write_pgm", "write_ppm", "MAXIMAL_RGB", "OTHER_RGB"]

MAXIMAL_RGB = (40, 80, 220)
OTHER_RGB = (210, 40, 40)
EMPTY_RGB = (255, 255, 255)


def _slice2d(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3:
        return arr[arr.shape[0] // 2]
    raise ValueError(f"cannot render a {arr.ndim}-dimensional array")


def field_image(u: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Min-max normalised 8-bit gray levels; pixels outside ``mask`` are black.

    A constant field renders as uniform mid gray.
    """
    u = _slice2d(np.asarray(u, dtype=float))
    keep = np.ones(u.shape, dtype=bool) if mask is None else _slice2d(np.asarray(mask, bool))
    img = np.zeros(u.shape, dtype=np.uint8)
    if not keep.any():
        return img
    lo, hi = float(u[keep].min()), float(u[keep].max())
    if hi > lo:
        img[keep] = np.round(255.0 * (u[keep] - lo) / (hi - lo)).astype(np.uint8)
    else:
        img[keep] = 128
    return img


def labels_image(labels: ClusterLabels) -> np.ndarray:
    """RGB image: maximal cluster blue, other open clusters red, isolated vertices white."""
    labs = _slice2d(labels.labels)
    rgb = np.empty(labs.shape + (3,), dtype=np.uint8)
    rgb[:] = EMPTY_RGB
    rgb[labs >= 0] = OTHER_RGB
    if labels.maximal_id is not None:
        rgb[labs == labels.maximal_id] = MAXIMAL_RGB
    return rgb


def write_pgm(path: str, img: np.ndarray) -> None:
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def write_ppm(path: str, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
