"""Training-patch extraction: region normalization, inscribed rectangles, square sampling.

Patch corpora are stored one file per side length (``.bsp``)::

    magic "BSP1" | u32le l | u32le count | count * l * l pixels, uint8, row-major
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .imgio import POLAR_HEIGHT, POLAR_WIDTH, NormalizedIris

PATCH_MAGIC = b"BSP1"

SOURCE_TAGS = ("annotation", "gaze", "random")


@dataclass
class RegionMask:
    """Binary region of interest aligned to a source image."""

    grid: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 2:
            raise DataError(f"region grid must be 2-D, got shape {self.grid.shape}")

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]


@dataclass
class CircleParams:
    """Pupil and iris boundary circles in source-image pixel coordinates."""

    pupil_x: float
    pupil_y: float
    pupil_r: float
    iris_x: float
    iris_y: float
    iris_r: float

    def __post_init__(self):
        if self.pupil_r <= 0 or self.iris_r <= 0:
            raise ConfigError("circle radii must be positive")
        if self.pupil_r >= self.iris_r:
            raise ConfigError(
                f"pupil radius {self.pupil_r} must be smaller than iris radius {self.iris_r}"
            )


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangle, top-left corner plus extent."""

    col: int
    row: int
    width: int
    height: int

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass
class PatchSet:
    """A set of square grayscale patches of one side length.

    Pixels are raw 8-bit intensities copied verbatim from the source
    images; no filtering or rescaling is ever applied.
    """

    side: int
    patches: np.ndarray
    source_tag: str = "random"

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.uint8)
        if self.patches.size == 0:
            self.patches = self.patches.reshape(0, self.side, self.side)
        if self.patches.ndim != 3 or self.patches.shape[1:] != (self.side, self.side):
            raise DataError(
                f"patches must have shape (count, {self.side}, {self.side}), "
                f"got {self.patches.shape}"
            )
        if self.source_tag not in SOURCE_TAGS:
            raise ConfigError(f"source_tag must be one of {SOURCE_TAGS}, got {self.source_tag!r}")

    def __len__(self) -> int:
        return self.patches.shape[0]


@dataclass
class CorpusReport:
    """Per-size patch counts plus bookkeeping from corpus building."""

    source_tag: str
    counts: dict[int, int] = field(default_factory=dict)
    regions_used: int = 0
    regions_empty: int = 0
    skipped_by_size: dict[int, int] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Rubber-sheet normalization of annotation regions


def _polar_sample_coords(circles: CircleParams, width: int, height: int):
    """Cartesian sample coordinates for every polar grid cell.

    Angles and radii are taken at cell centers: column j samples angle
    2*pi*(j + 0.5)/width from the positive x-axis, row k samples the
    fraction (k + 0.5)/height of the pupil-to-iris distance.
    """
    theta = 2.0 * np.pi * (np.arange(width) + 0.5) / width
    radius = (np.arange(height) + 0.5) / height
    px = circles.pupil_x + circles.pupil_r * np.cos(theta)
    py = circles.pupil_y + circles.pupil_r * np.sin(theta)
    ix = circles.iris_x + circles.iris_r * np.cos(theta)
    iy = circles.iris_y + circles.iris_r * np.sin(theta)
    r = radius[:, None]
    x = (1.0 - r) * px[None, :] + r * ix[None, :]
    y = (1.0 - r) * py[None, :] + r * iy[None, :]
    return x, y


def normalize_region(
    region: RegionMask,
    circles: CircleParams,
    width: int = POLAR_WIDTH,
    height: int = POLAR_HEIGHT,
) -> RegionMask:
    """Map a Cartesian region mask onto the polar iris grid (nearest neighbor)."""
    for cx, cy, cr in (
        (circles.pupil_x, circles.pupil_y, circles.pupil_r),
        (circles.iris_x, circles.iris_y, circles.iris_r),
    ):
        if cx - cr < 0 or cy - cr < 0 or cx + cr > region.width or cy + cr > region.height:
            raise DataError(
                f"circle (x={cx}, y={cy}, r={cr}) extends outside the "
                f"{region.width}x{region.height} region raster"
            )
    x, y = _polar_sample_coords(circles, width, height)
    cols = np.rint(x).astype(np.intp).clip(0, region.width - 1)
    rows = np.rint(y).astype(np.intp).clip(0, region.height - 1)
    return RegionMask(grid=region.grid[rows, cols], source_id=region.source_id)


# ---------------------------------------------------------------------------
# Largest inscribed rectangle


def largest_inscribed_rectangle(region: RegionMask) -> Rectangle:
    """Maximal-area axis-aligned rectangle of set pixels.

    Ties are broken by smallest top row, then smallest left column, then
    smallest height, so the result is deterministic.
    """
    grid = region.grid
    if not grid.any():
        raise DataError("region is empty, no inscribed rectangle exists")
    h, w = grid.shape
    heights = np.zeros(w, dtype=np.int64)
    # (negative area, top row, left col, height): minimize lexicographically
    best = (0, 0, 0, 0)
    for bottom in range(h):
        heights = np.where(grid[bottom], heights + 1, 0)
        # Histogram-stack sweep: popping a bar yields the widest rectangle
        # of that bar's height ending before the current column.
        stack: list[int] = []
        for col in range(w + 1):
            cur = heights[col] if col < w else 0
            while stack and heights[stack[-1]] >= cur:
                bar = int(heights[stack.pop()])
                if bar == 0:
                    continue
                left = stack[-1] + 1 if stack else 0
                cand = (-bar * (col - left), bottom - bar + 1, left, bar)
                if cand < best:
                    best = cand
            stack.append(col)
    neg_area, top, left, height = best
    width = (-neg_area) // height
    return Rectangle(col=left, row=top, width=width, height=height)


# ---------------------------------------------------------------------------
# Square sampling


def sample_squares(
    image: NormalizedIris,
    rect: Rectangle,
    side: int,
    count: int,
    seed,
    source_tag: str = "random",
) -> PatchSet:
    """Sample ``count`` axis-aligned squares uniformly inside ``rect``.

    Squares larger than the rectangle are discarded (empty result).
    Sampling is with replacement over the admissible top-left offsets and
    deterministic for a given seed.
    """
    if side % 2 == 0 or side < 1:
        raise ConfigError(f"patch side must be odd and positive, got {side}")
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    if (
        rect.col < 0
        or rect.row < 0
        or rect.col + rect.width > image.width
        or rect.row + rect.height > image.height
    ):
        raise DataError(f"rectangle {rect} is not inside the {image.width}x{image.height} image")
    if side > rect.width or side > rect.height:
        return PatchSet(side=side, patches=np.empty((0, side, side), np.uint8), source_tag=source_tag)
    rng = np.random.default_rng(seed)
    rows = rng.integers(rect.row, rect.row + rect.height - side + 1, size=count)
    cols = rng.integers(rect.col, rect.col + rect.width - side + 1, size=count)
    patches = np.empty((count, side, side), dtype=np.uint8)
    for i, (r, c) in enumerate(zip(rows, cols)):
        patches[i] = image.pixels[r : r + side, c : c + side]
    return PatchSet(side=side, patches=patches, source_tag=source_tag)


def build_corpus(
    entries: list[tuple[NormalizedIris, RegionMask]],
    sizes: list[int],
    per_region_count: int,
    seed: int,
    source_tag: str,
) -> tuple[dict[int, PatchSet], CorpusReport]:
    """Build one PatchSet per requested side length from (image, region) pairs.

    Every region contributes up to ``per_region_count`` squares per size,
    sampled inside its largest inscribed rectangle.  Each (region, size)
    pair draws from its own RNG stream derived from the master seed, so
    the result is independent of evaluation order.  Corpora from different
    source tags must never be merged; the tag is stamped on every set.
    """
    if source_tag not in SOURCE_TAGS:
        raise ConfigError(f"source_tag must be one of {SOURCE_TAGS}, got {source_tag!r}")
    sizes = sorted(set(int(s) for s in sizes))
    for s in sizes:
        if s % 2 == 0 or s < 1:
            raise ConfigError(f"patch sizes must be odd, got {s}")
    if not entries:
        warnings.warn("building corpus from zero regions; result is empty")

    report = CorpusReport(source_tag=source_tag, skipped_by_size={s: 0 for s in sizes})
    collected: dict[int, list[np.ndarray]] = {s: [] for s in sizes}
    for region_index, (image, region) in enumerate(entries):
        if region.grid.shape != image.pixels.shape:
            raise DataError(
                f"region {region.source_id or region_index} shape {region.grid.shape} "
                f"does not match image {image.id!r} shape {image.pixels.shape}"
            )
        if not region.grid.any():
            report.regions_empty += 1
            continue
        rect = largest_inscribed_rectangle(region)
        report.regions_used += 1
        for size_index, s in enumerate(sizes):
            got = sample_squares(
                image,
                rect,
                s,
                per_region_count,
                seed=[seed, region_index, size_index],
                source_tag=source_tag,
            )
            if len(got) == 0:
                report.skipped_by_size[s] += 1
            else:
                collected[s].append(got.patches)

    corpora: dict[int, PatchSet] = {}
    for s in sizes:
        stacked = (
            np.concatenate(collected[s], axis=0)
            if collected[s]
            else np.empty((0, s, s), np.uint8)
        )
        corpora[s] = PatchSet(side=s, patches=stacked, source_tag=source_tag)
        report.counts[s] = len(corpora[s])
    return corpora, report


# ---------------------------------------------------------------------------
# Corpus files


def save_patch_set(patch_set: PatchSet, path: Path | str) -> None:
    header = struct.pack("<4sII", PATCH_MAGIC, patch_set.side, len(patch_set))
    Path(path).write_bytes(header + patch_set.patches.tobytes())


def load_patch_set(path: Path | str, source_tag: str = "random") -> PatchSet:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    data = path.read_bytes()
    if len(data) < 12:
        raise DataError(f"truncated patch file {path}")
    magic, side, count = struct.unpack_from("<4sII", data, 0)
    if magic != PATCH_MAGIC:
        raise DataError(f"bad magic {magic!r} in {path}, expected {PATCH_MAGIC!r}")
    need = 12 + count * side * side
    if len(data) != need:
        raise DataError(f"{path}: expected {need} bytes for side={side} count={count}")
    patches = np.frombuffer(data, dtype=np.uint8, offset=12).reshape(count, side, side)
    return PatchSet(side=side, patches=patches.copy(), source_tag=source_tag)
