import numpy as np

from dataclasses import dataclass
from scipy import ndimage

from utility.errors import MissingChannelError, RasterShapeError


def check_rgb_tile(pixels: np.ndarray) -> np.ndarray:
    """Validates an H&E tile: (height, width, 3) uint8, height and width >= 1.
    :param pixels: array to check
    :return
        the array
    """
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
        raise RasterShapeError(f"RGB tile must have shape (height, width, 3), got {pixels.shape}")
    if pixels.dtype != np.uint8:
        raise RasterShapeError(f"RGB tile must be uint8, got {pixels.dtype}")
    return pixels


def raster_shape(raster) -> tuple:
    """(height, width) of an array (2d or height-width-channel) or of a LogitStack / InstanceMap."""
    if hasattr(raster, "height") and hasattr(raster, "width"):
        return raster.height, raster.width
    return tuple(np.shape(raster)[:2])


def check_same_shape(reference_shape: tuple,
                     **rasters) -> None:
    """Raises RasterShapeError if any raster's (height, width) differs from the reference.
    :param reference_shape: (height, width)
    :param rasters: name -> raster
    """
    for name, raster in rasters.items():
        shape = raster_shape(raster)
        if shape != tuple(reference_shape):
            raise RasterShapeError(f"{name} has dimensions {shape}, expected {tuple(reference_shape)}")


class LogitStack:
    def __init__(self,
                 channels: list[str],
                 planes: np.ndarray):
        """Named stack of float32 logit planes.
        :param channels: canonical class names, one per plane
        :param planes: array of shape (channels, height, width)
        """
        self.channels = list(channels)
        self.planes = np.ascontiguousarray(planes, dtype=np.float32)

        if self.planes.ndim != 3 or self.planes.shape[0] != len(self.channels):
            raise RasterShapeError(f"logit planes of shape {self.planes.shape} do not match "
                                   f"{len(self.channels)} channels")
        if len(set(self.channels)) != len(self.channels):
            raise RasterShapeError(f"channel names are not distinct: {self.channels}")
        if not np.all(np.isfinite(self.planes)):
            raise RasterShapeError("logit planes contain NaN or Inf values")
        self.height = self.planes.shape[1]
        self.width = self.planes.shape[2]

    @property
    def shape(self) -> tuple:
        return self.height, self.width

    def index(self,
              name: str) -> int:
        try:
            return self.channels.index(name)
        except ValueError:
            raise MissingChannelError(f"channel {name!r} missing, stack has {self.channels}") from None

    def plane(self,
              name: str) -> np.ndarray:
        """Single logit plane.
        :param name: canonical class name
        :return
            (height, width) float32 view
        """
        return self.planes[self.index(name)]

    def select(self,
               names) -> np.ndarray:
        """Planes in the requested order.
        :param names: iterable of canonical class names
        :return
            (len(names), height, width) float32 array
        """
        return self.planes[[self.index(n) for n in names]]

    def require(self,
                names) -> None:
        missing = [n for n in names if n not in self.channels]
        if missing:
            raise MissingChannelError(f"channels {missing} missing, stack has {self.channels}")

    def crop(self,
             window):
        """Sub-stack covering window = (y0, x0, y1, x1)."""
        y0, x0, y1, x1 = window
        return LogitStack(self.channels, self.planes[:, y0:y1, x0:x1])

    def __repr__(self):
        return f"LogitStack({self.height}x{self.width}, channels={self.channels})"


@dataclass
class NucleusAttributes:
    teacher_type: str | None
    pixel_count: int
    centroid: tuple


class InstanceMap:
    def __init__(self,
                 ids: np.ndarray,
                 attrs: dict):
        """Raster of nucleus instance ids (0 = none) with per-instance attributes.
        :param ids: (height, width) integer raster
        :param attrs: instance id -> NucleusAttributes
        """
        self.ids = np.ascontiguousarray(ids, dtype=np.uint32)
        self.attrs = dict(attrs)
        if self.ids.ndim != 2:
            raise RasterShapeError(f"instance ids must be 2-dimensional, got {self.ids.shape}")
        self.height, self.width = self.ids.shape

    @classmethod
    def from_labels(cls,
                    ids: np.ndarray,
                    teacher_types: dict | None = None):
        """Builds the attributes from an id raster.
        :param ids: (height, width) integer raster, 0 = background
        :param teacher_types: optional instance id -> nucleus teacher type
        :return
            InstanceMap object
        """
        ids = np.asarray(ids).astype(np.int64)
        teacher_types = teacher_types or {}
        present = np.unique(ids)
        present = present[present != 0]
        if present.size == 0:
            return cls(ids, {})
        counts = np.bincount(ids.ravel())
        yy, xx = np.indices(ids.shape)
        sum_y = np.bincount(ids.ravel(), weights=yy.ravel())
        sum_x = np.bincount(ids.ravel(), weights=xx.ravel())
        attrs = {}
        for i in present.tolist():
            attrs[i] = NucleusAttributes(teacher_type=teacher_types.get(i),
                                         pixel_count=int(counts[i]),
                                         centroid=(sum_y[i] / counts[i], sum_x[i] / counts[i]))
        return cls(ids, attrs)

    @property
    def shape(self) -> tuple:
        return self.height, self.width

    def instance_ids(self) -> list[int]:
        return sorted(self.attrs)

    def __len__(self):
        return len(self.attrs)

    def teacher_types(self) -> dict:
        return {i: a.teacher_type for i, a in self.attrs.items() if a.teacher_type is not None}

    def object_slices(self) -> dict:
        """Bounding-box slices per instance id, via scipy.ndimage.find_objects."""
        slices = ndimage.find_objects(self.ids.astype(np.int64))
        return {i + 1: s for i, s in enumerate(slices) if s is not None}

    def crop(self,
             window):
        """Instance map restricted to window = (y0, x0, y1, x1); attributes are recomputed
        for the visible part, teacher types are kept.
        """
        y0, x0, y1, x1 = window
        return InstanceMap.from_labels(self.ids[y0:y1, x0:x1], self.teacher_types())

    def validate(self) -> None:
        """Checks the id/attribute consistency: no id 0 entry, every raster id has attributes
        with the raster's pixel count.
        """
        if 0 in self.attrs:
            raise RasterShapeError("instance id 0 must not carry attributes")
        present, counts = np.unique(self.ids[self.ids != 0], return_counts=True)
        for i, c in zip(present.tolist(), counts.tolist()):
            if i not in self.attrs:
                raise RasterShapeError(f"instance {i} on the raster has no attributes")
            if self.attrs[i].pixel_count != c:
                raise RasterShapeError(f"instance {i}: pixel_count {self.attrs[i].pixel_count} "
                                       f"!= raster count {c}")

    def __repr__(self):
        return f"InstanceMap({self.height}x{self.width}, instances={len(self.attrs)})"
