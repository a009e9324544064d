"""Ground-truth error masks from original/corrupted decode pairs.

The pipeline per frame: absolute luma difference, threshold, binary opening
then closing with square structuring elements, removal of small 8-connected
components, and filling of small enclosed holes.

Morphology border convention: pixels outside the frame never count against
a structuring element, i.e. erosion pads with 1 and dilation pads with 0.
A corrupted region touching the frame edge therefore survives opening and
closing intact.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .yuv import FramePlane, PathLike

log = logging.getLogger(__name__)

EIGHT = np.ones((3, 3), dtype=bool)


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class MaskParams:
    threshold: int = 20
    open_radius: int = 2
    close_radius: int = 2
    min_component_area: int = 64
    # OR in chroma differences (upsampled to luma resolution)
    chroma: bool = False

    def __post_init__(self):
        if not 1 <= self.threshold <= 255:
            raise ValueError("threshold must be in 1..255")
        if self.open_radius < 1 or self.close_radius < 1 or self.min_component_area < 1:
            raise ValueError("radii and min_component_area must be positive")

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, d: dict) -> "MaskParams":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class ErrorMask:
    bits: np.ndarray  # bool, luma resolution
    placeholder: bool = False

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def area(self) -> int:
        return self.bits.size

    @property
    def area_ratio(self) -> float:
        return self.count / self.area

    def save_png(self, path: PathLike) -> None:
        Image.fromarray(self.bits.astype(np.uint8) * 255).save(path)

    @classmethod
    def load_png(cls, path: PathLike) -> "ErrorMask":
        with Image.open(path) as im:
            a = np.asarray(im.convert("L"))
        return cls(a >= 128)


def _square(radius: int) -> np.ndarray:
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


def erode(bits: np.ndarray, radius: int) -> np.ndarray:
    return ndimage.binary_erosion(bits, _square(radius), border_value=1)


def dilate(bits: np.ndarray, radius: int) -> np.ndarray:
    return ndimage.binary_dilation(bits, _square(radius), border_value=0)


def open_close(bits: np.ndarray, open_radius: int, close_radius: int) -> np.ndarray:
    """Opening with one square, then closing with another."""
    opened = dilate(erode(bits, open_radius), open_radius)
    return erode(dilate(opened, close_radius), close_radius)


def remove_small(bits: np.ndarray, min_area: int) -> np.ndarray:
    labels, n = ndimage.label(bits, EIGHT)
    if n == 0:
        return bits.copy()
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_area
    keep[0] = False
    return keep[labels]


def fill_small_holes(bits: np.ndarray, min_area: int) -> np.ndarray:
    """Fill background components that do not touch the border and are small."""
    labels, n = ndimage.label(~bits, EIGHT)
    if n == 0:
        return bits.copy()
    sizes = np.bincount(labels.ravel())
    edge = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    fill = sizes < min_area
    fill[0] = False
    fill[edge] = False
    return bits | fill[labels]


def _check_dims(a: FramePlane, b: FramePlane) -> None:
    if a.size != b.size:
        raise DimensionMismatch(f"frame sizes differ: {a.size} vs {b.size}")


def gray_diff(original: FramePlane, corrupted: FramePlane, chroma: bool = False) -> np.ndarray:
    """|original - corrupted| on luma, uint8. ``chroma`` max-merges U/V diffs."""
    _check_dims(original, corrupted)
    d = np.abs(original.luma.astype(np.int16) - corrupted.luma.astype(np.int16))
    if chroma:
        for a, b in zip(original.upsampled_chroma(), corrupted.upsampled_chroma()):
            np.maximum(d, np.abs(a.astype(np.int16) - b.astype(np.int16)), out=d)
    return d.astype(np.uint8)


def binarize_and_clean(diff: np.ndarray, params: MaskParams = MaskParams()) -> ErrorMask:
    bits = np.asarray(diff) >= params.threshold
    bits = open_close(bits, params.open_radius, params.close_radius)
    bits = remove_small(bits, params.min_component_area)
    bits = fill_small_holes(bits, params.min_component_area)
    return ErrorMask(bits)


def mask_sequence(
    pairs: Sequence[Tuple[FramePlane, FramePlane]], params: MaskParams = MaskParams()
) -> List[ErrorMask]:
    masks = []
    for orig, corr in pairs:
        if corr.placeholder:
            _check_dims(orig, corr)
            masks.append(ErrorMask(np.ones((orig.height, orig.width), bool), placeholder=True))
            continue
        masks.append(binarize_and_clean(gray_diff(orig, corr, params.chroma), params))
    return masks


def write_masks(directory: PathLike, masks: Sequence[ErrorMask]) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, m in enumerate(masks):
        p = directory / f"{k:05d}.png"
        m.save_png(p)
        paths.append(p)
    return paths


def read_masks(directory: PathLike) -> List[ErrorMask]:
    return [ErrorMask.load_png(p) for p in sorted(Path(directory).glob("*.png"))]
