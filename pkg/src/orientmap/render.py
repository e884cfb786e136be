"""Static PNG renderings of masks, orientation channels and destination gradients."""
from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import numpy as np
from matplotlib import colormaps
from PIL import Image

from .core import BinaryMask, OrientationMap


def signed_heatmap(values: np.ndarray, cmap: str = "RdBu_r") -> np.ndarray:
    """Diverging colormap centred on zero; an all-zero input maps to the midpoint color."""
    vmax = float(np.max(np.abs(values))) if values.size else 0.0
    norm = 0.5 + 0.5 * values / (vmax if vmax > 0 else 1.0)
    rgba = colormaps[cmap](norm)
    return (rgba[..., :3] * 255).round().astype(np.uint8)


def destination_gradient(omap: OrientationMap) -> tuple[np.ndarray, np.ndarray]:
    """Forward-difference magnitudes of the destination field along x and y.

    Entry ``gx[i, j]`` is ``|D[i, j+1] - D[i, j]|``; the last column/row is 0.
    """
    dest = omap.destinations()
    gx = np.zeros(dest.shape[:2])
    gy = np.zeros(dest.shape[:2])
    gx[:, :-1] = np.linalg.norm(dest[:, 1:] - dest[:, :-1], axis=-1)
    gy[:-1, :] = np.linalg.norm(dest[1:, :] - dest[:-1, :], axis=-1)
    return gx, gy


def gradient_image(omap: OrientationMap, cmap: str = "magma") -> np.ndarray:
    gx, gy = destination_gradient(omap)
    mag = gx + gy
    top = float(mag.max()) if mag.size else 0.0
    rgba = colormaps[cmap](mag / top if top > 0 else mag)
    return (rgba[..., :3] * 255).round().astype(np.uint8)


def overlay_masks(background: np.ndarray, masks: Sequence[BinaryMask], scores: Sequence[float],
                  threshold: float = 0.3, alpha: float = 0.5) -> tuple[np.ndarray, int]:
    """Blend masks scoring at least ``threshold`` over ``background``.

    Returns the image and the number of masks drawn.
    """
    out = np.asarray(background, dtype=np.float64).copy()
    palette = colormaps["tab20"]
    drawn = 0
    for mask, score in zip(masks, scores):
        if score < threshold:
            continue
        color = np.asarray(palette(drawn % 20)[:3]) * 255.0
        m = mask.bits
        out[m] = (1.0 - alpha) * out[m] + alpha * color
        drawn += 1
    return out.round().clip(0, 255).astype(np.uint8), drawn


def blank_canvas(height: int, width: int, gray: int = 32) -> np.ndarray:
    return np.full((height, width, 3), gray, dtype=np.uint8)


def load_background(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_png(arr: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path, format="PNG")
