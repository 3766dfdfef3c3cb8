"""Core data types and image tiling."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

DEFAULT_BYTES_PER_PIXEL = 1
DEFAULT_HEADER_BYTES = 4


class TaskKind(str, enum.Enum):
    QA = "QA"
    CLASSIFICATION = "Classification"
    DETECTION = "Detection"


@dataclass(frozen=True)
class TaskAnswer:
    """An answer whose payload depends on ``kind``.

    QA answers carry a token tuple, classification answers an integer label and
    detection answers a pixel box ``(x_min, y_min, x_max, y_max)``.
    """

    kind: TaskKind
    value: Union[tuple, int]

    def __post_init__(self):
        kind = TaskKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is TaskKind.QA:
            object.__setattr__(self, "value", tuple(int(t) for t in self.value))
        elif kind is TaskKind.CLASSIFICATION:
            object.__setattr__(self, "value", int(self.value))
        else:
            box = tuple(float(v) for v in self.value)
            if len(box) != 4 or not (box[0] < box[2] and box[1] < box[3]):
                raise ValueError(f"invalid detection box {box!r}")
            object.__setattr__(self, "value", box)

    @classmethod
    def qa(cls, tokens):
        return cls(TaskKind.QA, tuple(tokens))

    @classmethod
    def label(cls, label):
        return cls(TaskKind.CLASSIFICATION, label)

    @classmethod
    def box(cls, x_min, y_min, x_max, y_max):
        return cls(TaskKind.DETECTION, (x_min, y_min, x_max, y_max))

    def to_text(self) -> str:
        if self.kind is TaskKind.QA:
            return " ".join(str(t) for t in self.value)
        if self.kind is TaskKind.CLASSIFICATION:
            return str(self.value)
        return ",".join(repr(v) for v in self.value)

    @classmethod
    def from_text(cls, kind, text: str) -> "TaskAnswer":
        kind = TaskKind(kind)
        if kind is TaskKind.QA:
            return cls.qa(int(t) for t in text.split())
        if kind is TaskKind.CLASSIFICATION:
            return cls.label(int(text))
        return cls(kind, tuple(float(v) for v in text.split(",")))


@dataclass(frozen=True)
class Sample:
    id: int
    image: np.ndarray
    prompt: str
    ground_truth: TaskAnswer
    difficulty: float
    task_kind: TaskKind
    # per-region planted relevance for the synthetic encoder, row-major
    relevance: Optional[np.ndarray] = None

    def __post_init__(self):
        image = np.asarray(self.image, dtype=float)
        if image.ndim != 2 or image.size == 0:
            raise ValueError("image must be a non-empty 2-D grid")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ValueError(f"difficulty {self.difficulty} outside [0, 1]")
        if TaskKind(self.task_kind) is not self.ground_truth.kind:
            raise ValueError("ground truth kind does not match task kind")
        image.setflags(write=False)
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "task_kind", TaskKind(self.task_kind))


@dataclass(frozen=True)
class ByteSize:
    bytes: int

    def __post_init__(self):
        if self.bytes < 0:
            raise ValueError("byte size must be non-negative")

    def __add__(self, other):
        return ByteSize(self.bytes + int(getattr(other, "bytes", other)))

    __radd__ = __add__

    def __int__(self):
        return self.bytes

    @property
    def bits(self) -> int:
        return 8 * self.bytes


@dataclass(frozen=True)
class RegionGrid:
    region_height: int
    region_width: int
    image_height: int
    image_width: int
    regions: tuple = field(repr=False)
    padding_flags: tuple = ()

    @property
    def rows(self) -> int:
        return math.ceil(self.image_height / self.region_height)

    @property
    def cols(self) -> int:
        return math.ceil(self.image_width / self.region_width)

    def __len__(self):
        return len(self.regions)

    def region_bounds(self, index):
        """Pixel bounds ``(y0, x0, y1, x1)`` of a region, clipped to the image."""
        r, c = divmod(index, self.cols)
        y0, x0 = r * self.region_height, c * self.region_width
        return (y0, x0, min(y0 + self.region_height, self.image_height),
                min(x0 + self.region_width, self.image_width))


def partition_image(image, region_height: int, region_width: int) -> RegionGrid:
    """Tile ``image`` row-major into fixed-size regions, zero-padding the edges."""
    if region_height < 1 or region_width < 1:
        raise ValueError("region dimensions must be >= 1")
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or image.size == 0:
        raise ValueError("image must be a non-empty 2-D grid")
    h, w = image.shape
    rows, cols = math.ceil(h / region_height), math.ceil(w / region_width)
    padded = np.zeros((rows * region_height, cols * region_width))
    padded[:h, :w] = image
    regions, flags = [], []
    for r in range(rows):
        for c in range(cols):
            block = padded[r * region_height:(r + 1) * region_height,
                           c * region_width:(c + 1) * region_width].copy()
            block.setflags(write=False)
            regions.append(block)
            flags.append((r + 1) * region_height > h or (c + 1) * region_width > w)
    return RegionGrid(region_height, region_width, h, w, tuple(regions), tuple(flags))


def reassemble(grid: RegionGrid, regions: Optional[Sequence] = None) -> np.ndarray:
    """Stitch regions back into an image and crop the padding.

    ``regions`` defaults to the grid's own; a ``None`` entry is zero-filled.
    """
    regions = grid.regions if regions is None else regions
    out = np.zeros((grid.rows * grid.region_height, grid.cols * grid.region_width))
    for index, block in enumerate(regions):
        if block is None:
            continue
        r, c = divmod(index, grid.cols)
        out[r * grid.region_height:(r + 1) * grid.region_height,
            c * grid.region_width:(c + 1) * grid.region_width] = block
    return out[:grid.image_height, :grid.image_width]


def byte_size(obj, bytes_per_pixel: int = DEFAULT_BYTES_PER_PIXEL,
              header_bytes: int = DEFAULT_HEADER_BYTES) -> ByteSize:
    """Serialized size of a region, a list of regions, or a whole grid.

    Each region costs ``header_bytes`` plus its pixels; a discarded region
    (``None`` or empty) costs the header only.
    """
    if isinstance(obj, RegionGrid):
        obj = obj.regions
    if obj is None:
        return ByteSize(header_bytes)
    if isinstance(obj, (list, tuple)):
        return ByteSize(sum(byte_size(r, bytes_per_pixel, header_bytes).bytes for r in obj))
    pixels = np.asarray(obj).size
    return ByteSize(pixels * bytes_per_pixel + header_bytes)


def box_regions(grid: RegionGrid, box) -> list:
    """Indices of regions whose pixel area intersects ``box``."""
    x0, y0, x1, y1 = box
    hits = []
    for i in range(len(grid)):
        ry0, rx0, ry1, rx1 = grid.region_bounds(i)
        if rx0 < x1 and x0 < rx1 and ry0 < y1 and y0 < ry1:
            hits.append(i)
    return hits
