import numpy as np

from dataclasses import dataclass

from utility.errors import ConfigError, RasterShapeError


@dataclass(frozen=True)
class TilePlan:
    crop: int = 384
    stride: int = 320
    halo: int = 0

    def __post_init__(self):
        if self.crop < 1 or not 0 < self.stride <= self.crop or self.halo < 0:
            raise ConfigError(f"invalid tile plan: crop={self.crop}, stride={self.stride}, halo={self.halo}; "
                              f"0 < stride <= crop and halo >= 0 required")

    @classmethod
    def from_config(cls, config):
        return cls(crop=config.crop, stride=config.stride, halo=config.halo)


@dataclass(frozen=True)
class TileWindow:
    """Core window [y0, y1) x [x0, x1) and its context window extended by the halo, clipped to the extent."""
    index: int
    y0: int
    x0: int
    y1: int
    x1: int
    context: tuple

    @property
    def core(self) -> tuple:
        return self.y0, self.x0, self.y1, self.x1

    @property
    def core_in_context(self) -> tuple:
        """Core window in coordinates relative to the context origin."""
        cy0, cx0 = self.context[0], self.context[1]
        return self.y0 - cy0, self.x0 - cx0, self.y1 - cy0, self.x1 - cx0

    def core_slices(self) -> tuple:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    def context_slices(self) -> tuple:
        cy0, cx0, cy1, cx1 = self.context
        return slice(cy0, cy1), slice(cx0, cx1)


def axis_offsets(length: int,
                 crop: int,
                 stride: int) -> list[int]:
    """Window offsets along one axis. Offsets advance by stride; the last window is shifted back
    to end at the extent. An extent smaller than the crop yields a single window.
    """
    if length <= crop:
        return [0]
    offsets = list(range(0, length - crop + 1, stride))
    if offsets[-1] + crop < length:
        offsets.append(length - crop)
    return offsets


def iterate_tiles(extent: tuple,
                  plan: TilePlan) -> list[TileWindow]:
    """Tile windows covering the extent in row-major order.
    :param extent: (height, width)
    :param plan: TilePlan
    :return
        list of TileWindow objects
    """
    height, width = extent
    if height < 1 or width < 1:
        raise RasterShapeError(f"cannot tile an empty extent {extent}")
    windows = []
    for y in axis_offsets(height, plan.crop, plan.stride):
        for x in axis_offsets(width, plan.crop, plan.stride):
            y1, x1 = min(y + plan.crop, height), min(x + plan.crop, width)
            context = (max(0, y - plan.halo), max(0, x - plan.halo),
                       min(height, y1 + plan.halo), min(width, x1 + plan.halo))
            windows.append(TileWindow(len(windows), y, x, y1, x1, context))
    return windows


def stitch(tiles,
           extent: tuple,
           mode: str = "labels",
           fill=0) -> np.ndarray:
    """Assembles tile rasters into the full raster.
    :param tiles: iterable of (TileWindow, array); arrays cover the window's core, leading axes
                  are channels for mode 'sum'
    :param extent: (height, width)
    :param mode: 'labels' (last writer in row-major window order) or 'sum' (overlaps summed)
    :param fill: value of pixels no tile covers
    :return
        stitched raster
    """
    tiles = sorted(tiles, key=lambda t: t[0].index)
    if not tiles:
        raise RasterShapeError("nothing to stitch")
    first = np.asarray(tiles[0][1])
    lead = first.shape[:-2]
    if mode == "labels":
        out = np.full(lead + tuple(extent), fill, dtype=first.dtype)
    elif mode == "sum":
        out = np.zeros(lead + tuple(extent), dtype=np.float64)
    else:
        raise ConfigError(f"unknown stitch mode {mode!r}, expected 'labels' or 'sum'")

    for window, array in tiles:
        array = np.asarray(array)
        expected = lead + (window.y1 - window.y0, window.x1 - window.x0)
        if array.shape != expected:
            raise RasterShapeError(f"tile {window.index} has shape {array.shape}, expected {expected}")
        target = (Ellipsis,) + window.core_slices()
        if mode == "labels":
            out[target] = array
        else:
            out[target] += array
    return out
