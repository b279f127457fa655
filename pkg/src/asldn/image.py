"""2D image grid with voxel-size metadata.

All slice-level data in the toolkit (perfusion-weighted differences,
proton-density images, CBF maps, noise-std maps, masks) travels as
:class:`Image2D`: a row-major float64 grid plus in-plane voxel size in mm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError

DEFAULT_VOXEL_SIZE = (2.7, 2.7)


@dataclass(frozen=True)
class Image2D:
    """A 2D float64 grid. ``data`` has shape (height, width)."""

    data: np.ndarray
    voxel_size: tuple[float, float] = DEFAULT_VOXEL_SIZE

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"Image2D data must be 2D, got ndim={arr.ndim}")
        if arr.size == 0:
            raise ShapeMismatchError("Image2D data must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Image2D data contains non-finite values")
        vs = (float(self.voxel_size[0]), float(self.voxel_size[1]))
        if vs[0] <= 0 or vs[1] <= 0:
            raise ValueError(f"voxel size must be positive, got {vs}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "voxel_size", vs)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def like(self, data: np.ndarray) -> "Image2D":
        """New image with this image's voxel size and the given data."""
        return Image2D(data=data, voxel_size=self.voxel_size)

    def same_shape(self, other: "Image2D") -> bool:
        return self.data.shape == other.data.shape


def require_same_shape(*images: Image2D) -> None:
    shapes = {img.data.shape for img in images}
    if len(shapes) > 1:
        raise ShapeMismatchError(f"images disagree in shape: {sorted(shapes)}")


def as_mask(img: Image2D) -> np.ndarray:
    """Boolean view of a binary mask image (nonzero = inside)."""
    return img.data != 0.0
