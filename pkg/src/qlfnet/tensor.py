"""Planar (channel-major) image tensors and the helpers every module builds on.

A ``Tensor3`` is simply a C-contiguous ``float64`` ndarray of shape
``(channels, height, width)``; a ``Matrix`` is a 2-D ``float64`` ndarray.
Keeping them as plain arrays lets numpy do the heavy lifting while the
functions here enforce the shape and range contracts.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import RangeError, ShapeError

DEFAULT_MAX_RAW = 255.0


class Channel(enum.IntEnum):
    R = 0
    G = 1
    B = 2


@dataclass(frozen=True)
class ChannelMask:
    """Ordered, non-empty subset of the RGB planes.

    Construction normalizes the order to (R, G, B) restricted to the subset.
    """

    selection: tuple

    def __post_init__(self):
        chans = [Channel[c.upper()] if isinstance(c, str) else Channel(c) for c in self.selection]
        if not chans:
            raise ValueError("channel mask must select at least one channel")
        if len(set(chans)) != len(chans):
            raise ValueError(f"duplicate channels in mask {self.selection!r}")
        object.__setattr__(self, "selection", tuple(sorted(chans)))

    @classmethod
    def parse(cls, text: str) -> "ChannelMask":
        """``'rg'`` -> ChannelMask((R, G))."""
        return cls(tuple(text.strip()))

    @property
    def name(self) -> str:
        return "".join(c.name for c in self.selection)

    @property
    def indices(self) -> list:
        return [int(c) for c in self.selection]

    def __len__(self):
        return len(self.selection)

    def __str__(self):
        return self.name


MASK_R = ChannelMask(("R",))
MASK_RG = ChannelMask(("R", "G"))
MASK_RGB = ChannelMask(("R", "G", "B"))
ABLATION_MASKS = (MASK_R, MASK_RG, MASK_RGB)


def as_tensor3(x) -> np.ndarray:
    """Validate and return ``x`` as a contiguous float64 (C, H, W) array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"expected a 3-D (channels, height, width) array, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"all tensor dimensions must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RangeError("tensor contains non-finite values")
    return arr


def tensor_new(channels: int, height: int, width: int, fill: float = 0.0) -> np.ndarray:
    if min(channels, height, width) < 1:
        raise ValueError(f"tensor dimensions must be >= 1, got ({channels}, {height}, {width})")
    return np.full((channels, height, width), float(fill), dtype=np.float64)


def channel_select(image, mask: ChannelMask) -> np.ndarray:
    """Copy the planes named by ``mask`` out of a 3-channel image.

    Also accepts a stack of images shaped (N, 3, H, W).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim not in (3, 4) or image.shape[-3] != 3:
        raise ShapeError(f"channel_select needs a 3-channel image, got shape {image.shape}")
    return np.ascontiguousarray(image[..., mask.indices, :, :])


def normalize(image, max_raw: float = DEFAULT_MAX_RAW) -> np.ndarray:
    """Scale raw intensities in ``[0, max_raw]`` to the unit interval."""
    if not max_raw > 0:
        raise ValueError(f"max_raw must be positive, got {max_raw}")
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise RangeError("image contains non-finite values")
    lo, hi = image.min(), image.max()
    if lo < 0 or hi > max_raw:
        raise RangeError(f"raw intensities must lie in [0, {max_raw}], found [{lo}, {hi}]")
    return image / max_raw


def flatten(image) -> np.ndarray:
    """Channel-major feature vector of a (C, H, W) tensor."""
    return np.asarray(image, dtype=np.float64).reshape(-1).copy()


def reshape(vector, channels: int, height: int, width: int) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.size != channels * height * width:
        raise ShapeError(f"cannot reshape {vector.size} values to ({channels}, {height}, {width})")
    return vector.reshape(channels, height, width).copy()


def flatten_batch(images) -> np.ndarray:
    """Stack of (C, H, W) images -> Matrix with one flattened row per image."""
    images = np.asarray(images, dtype=np.float64)
    return images.reshape(images.shape[0], -1).copy()
