"""Bit-exact I/O for normalized iris images, masks, manifests, filter banks and templates.

File formats
------------
Images are 8-bit single-channel binary PGM (``P5``).  Masks are either PGM
(any value > 127 counts as valid) or binary PBM (``P4``, set bits count as
valid).

Filter banks (``.bsf``)::

    magic "BSF1" | u32le n | u32le l | u32le reserved=0
    n * l * l coefficients, float64 little-endian, row-major per filter,
    filter 0 first (filter 0 produces the most significant code bit)

Templates (``.bst``)::

    magic "BST1" | u32le n | u32le width=512 | u32le height=64 | 32-byte bank fingerprint
    n bit-planes then the validity mask, each packed row-major,
    8 bits per byte, most significant bit first

Manifests are UTF-8 CSV with header ``image,mask,subject,eye,sensor,iris_id``
and no quoting of commas in paths.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

POLAR_WIDTH = 512
POLAR_HEIGHT = 64

BANK_MAGIC = b"BSF1"
TEMPLATE_MAGIC = b"BST1"
FINGERPRINT_BYTES = 32

MAX_FILTER_COUNT = 16
MIN_FILTER_SIDE = 3

MANIFEST_HEADER = ("image", "mask", "subject", "eye", "sensor", "iris_id")


# ---------------------------------------------------------------------------
# Domain types


@dataclass
class NormalizedIris:
    """A polar iris image with its occlusion mask.

    ``pixels`` is a (height, width) uint8 array: rows run along the radius,
    columns along the angle.  ``mask`` has the same shape; True marks valid
    iris texture.  ``kind`` is ``"polar"`` for pipeline-standard 512x64
    images and ``"patch-source"`` for free-size images used only as patch
    sources.
    """

    pixels: np.ndarray
    mask: np.ndarray
    id: str = ""
    kind: str = "polar"

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.pixels.ndim != 2:
            raise DataError(f"iris image must be 2-D, got shape {self.pixels.shape}")
        if self.pixels.shape != self.mask.shape:
            raise DataError(
                f"mask shape {self.mask.shape} does not match image shape {self.pixels.shape}"
            )
        if self.kind == "polar" and self.pixels.shape != (POLAR_HEIGHT, POLAR_WIDTH):
            raise DataError(
                f"polar iris image must be {POLAR_WIDTH}x{POLAR_HEIGHT}, "
                f"got {self.pixels.shape[1]}x{self.pixels.shape[0]}"
            )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class FilterBank:
    """An ordered set of n real-valued l x l filters.

    ``filters`` has shape (n, l, l); filter 0 produces the most significant
    bit of the code values.
    """

    filters: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.float64)
        if self.filters.ndim != 3 or self.filters.shape[1] != self.filters.shape[2]:
            raise ConfigError(f"filters must have shape (n, l, l), got {self.filters.shape}")
        n, l = self.n, self.l
        if not 1 <= n <= MAX_FILTER_COUNT:
            raise ConfigError(f"filter count n={n} outside [1, {MAX_FILTER_COUNT}]")
        if l < MIN_FILTER_SIDE or l % 2 == 0:
            raise ConfigError(f"filter side l={l} must be odd and >= {MIN_FILTER_SIDE}")
        if not np.all(np.isfinite(self.filters)):
            raise DataError("filter bank contains non-finite coefficients")

    @property
    def n(self) -> int:
        return self.filters.shape[0]

    @property
    def l(self) -> int:
        return self.filters.shape[1]


@dataclass
class IrisTemplate:
    """Binary template: n bit-planes plus the validity mask.

    ``planes`` has shape (n, height, width) and ``mask`` (height, width).
    The mask already excludes occluded pixels and the rows invalidated by
    filter-border trimming.  ``bank_fingerprint`` binds the template to the
    bank that produced it.
    """

    planes: np.ndarray
    mask: np.ndarray
    bank_fingerprint: bytes = b"\x00" * FINGERPRINT_BYTES

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.planes.ndim != 3 or self.planes.shape[0] < 1:
            raise ConfigError(f"planes must have shape (n, h, w) with n >= 1, got {self.planes.shape}")
        if self.planes.shape[1:] != self.mask.shape:
            raise DataError(
                f"mask shape {self.mask.shape} does not match plane shape {self.planes.shape[1:]}"
            )
        if len(self.bank_fingerprint) != FINGERPRINT_BYTES:
            raise DataError("bank fingerprint must be 32 bytes")

    @property
    def n(self) -> int:
        return self.planes.shape[0]

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    def matches_bank(self, bank: FilterBank) -> bool:
        """True when this template was produced by ``bank``."""
        return self.bank_fingerprint == bank_fingerprint(bank)


@dataclass(frozen=True)
class ManifestRecord:
    image: str
    mask: str
    subject: str
    eye: str
    sensor: str
    iris_id: str


@dataclass
class DatasetManifest:
    """Validated list of dataset records."""

    records: list[ManifestRecord] = field(default_factory=list)

    def __post_init__(self):
        seen_images: set[str] = set()
        group: dict[str, tuple[str, str]] = {}
        for rec in self.records:
            if rec.eye not in ("L", "R"):
                raise DataError(f"eye must be 'L' or 'R', got {rec.eye!r} for {rec.image}")
            if rec.image in seen_images:
                raise DataError(f"duplicate image path in manifest: {rec.image}")
            seen_images.add(rec.image)
            key = (rec.subject, rec.eye)
            if rec.iris_id in group and group[rec.iris_id] != key:
                raise DataError(
                    f"iris_id {rec.iris_id!r} maps to both {group[rec.iris_id]} and {key}"
                )
            group[rec.iris_id] = key

    def __len__(self) -> int:
        return len(self.records)

    @property
    def subjects(self) -> set[str]:
        return {rec.subject for rec in self.records}

    @property
    def iris_ids(self) -> set[str]:
        return {rec.iris_id for rec in self.records}


# ---------------------------------------------------------------------------
# PNM rasters


def _read_pnm(path: Path) -> tuple[bytes, np.ndarray]:
    """Read a binary PGM (P5) or PBM (P4) file, returning (magic, array).

    P5 yields a uint8 array; P4 yields a bool array with set (black) bits True.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    data = path.read_bytes()

    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(data):
            c = data[pos : pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"truncated header in {path}")
        return data[start:pos]

    magic = next_token()
    if magic not in (b"P5", b"P4"):
        raise DataError(f"unsupported raster magic {magic!r} in {path} (need P5 or P4)")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token()) if magic == b"P5" else 1
    except ValueError as exc:
        raise DataError(f"malformed header in {path}: {exc}") from exc
    if width <= 0 or height <= 0:
        raise DataError(f"non-positive dimensions {width}x{height} in {path}")
    if magic == b"P5" and not 0 < maxval <= 255:
        raise DataError(f"only 8-bit PGM supported, maxval={maxval} in {path}")
    pos += 1  # single whitespace byte separates header from raster

    if magic == b"P5":
        need = width * height
        raster = data[pos : pos + need]
        if len(raster) < need:
            raise DataError(f"truncated raster in {path}: need {need} bytes, have {len(raster)}")
        arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
        return magic, arr
    row_bytes = (width + 7) // 8
    need = row_bytes * height
    raster = data[pos : pos + need]
    if len(raster) < need:
        raise DataError(f"truncated raster in {path}: need {need} bytes, have {len(raster)}")
    rows = np.frombuffer(raster, dtype=np.uint8).reshape(height, row_bytes)
    bits = np.unpackbits(rows, axis=1)[:, :width]
    return magic, bits.astype(bool)


def load_pgm(path: Path | str) -> np.ndarray:
    """Load an 8-bit P5 PGM as a (height, width) uint8 array."""
    magic, arr = _read_pnm(Path(path))
    if magic != b"P5":
        raise DataError(f"expected PGM (P5) image at {path}")
    return arr


def save_pgm(path: Path | str, pixels: np.ndarray) -> None:
    """Write a (height, width) uint8 array as binary PGM."""
    pixels = np.ascontiguousarray(np.asarray(pixels, dtype=np.uint8))
    if pixels.ndim != 2:
        raise DataError(f"PGM payload must be 2-D, got shape {pixels.shape}")
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def load_mask(path: Path | str) -> np.ndarray:
    """Load a PGM or PBM mask as a bool array; PGM values > 127 are valid."""
    magic, arr = _read_pnm(Path(path))
    if magic == b"P5":
        return arr > 127
    return arr


def save_mask(path: Path | str, mask: np.ndarray) -> None:
    """Write a bool mask as a 0/255 PGM."""
    save_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def load_normalized_iris(
    image_path: Path | str,
    mask_path: Path | str,
    id: str = "",
    strict: bool = True,
) -> NormalizedIris:
    """Load an iris image and its occlusion mask.

    With ``strict`` (the pipeline default) the image must be exactly
    512x64; ``strict=False`` admits patch-source images of any size,
    tagged ``kind="patch-source"``.  Intensities are never rescaled.
    """
    pixels = load_pgm(image_path)
    mask = load_mask(mask_path)
    if pixels.shape != mask.shape:
        raise DataError(
            f"mask {mask_path} has shape {mask.shape}, image {image_path} has {pixels.shape}"
        )
    if strict and pixels.shape != (POLAR_HEIGHT, POLAR_WIDTH):
        raise DataError(
            f"{image_path}: expected {POLAR_WIDTH}x{POLAR_HEIGHT} normalized image, "
            f"got {pixels.shape[1]}x{pixels.shape[0]}"
        )
    return NormalizedIris(
        pixels=pixels,
        mask=mask,
        id=id or Path(image_path).stem,
        kind="polar" if strict else "patch-source",
    )


# ---------------------------------------------------------------------------
# Filter banks


def serialize_filter_bank(bank: FilterBank) -> bytes:
    """Canonical byte representation of a bank (also the on-disk format)."""
    header = struct.pack("<4sIII", BANK_MAGIC, bank.n, bank.l, 0)
    body = np.ascontiguousarray(bank.filters, dtype="<f8").tobytes()
    return header + body


def bank_fingerprint(bank: FilterBank) -> bytes:
    """SHA-256 digest of the canonical bank bytes; stored in templates."""
    return hashlib.sha256(serialize_filter_bank(bank)).digest()


def save_filter_bank(bank: FilterBank, path: Path | str) -> None:
    Path(path).write_bytes(serialize_filter_bank(bank))


def load_filter_bank(path: Path | str, provenance: str = "") -> FilterBank:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    data = path.read_bytes()
    if len(data) < 16:
        raise DataError(f"truncated filter bank file {path}")
    magic, n, l, reserved = struct.unpack_from("<4sIII", data, 0)
    if magic != BANK_MAGIC:
        raise DataError(f"bad magic {magic!r} in {path}, expected {BANK_MAGIC!r}")
    if not 1 <= n <= MAX_FILTER_COUNT:
        raise DataError(f"filter count n={n} out of range in {path}")
    if l < MIN_FILTER_SIDE or l % 2 == 0:
        raise DataError(f"filter side l={l} invalid in {path}")
    need = 16 + n * l * l * 8
    if len(data) != need:
        raise DataError(f"{path}: expected {need} bytes for n={n} l={l}, found {len(data)}")
    coeffs = np.frombuffer(data, dtype="<f8", offset=16).reshape(n, l, l)
    if not np.all(np.isfinite(coeffs)):
        raise DataError(f"non-finite coefficient in {path}")
    return FilterBank(filters=coeffs.astype(np.float64), provenance=provenance or path.stem)


# ---------------------------------------------------------------------------
# Templates


def _pack_bits(grid: np.ndarray) -> bytes:
    return np.packbits(grid.astype(np.uint8), bitorder="big").tobytes()


def _unpack_bits(buf: bytes, height: int, width: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="big")
    return bits[: height * width].reshape(height, width).astype(bool)


def save_template(template: IrisTemplate, path: Path | str) -> None:
    if (template.height, template.width) != (POLAR_HEIGHT, POLAR_WIDTH):
        raise DataError(
            f"template files are fixed at {POLAR_WIDTH}x{POLAR_HEIGHT}, "
            f"got {template.width}x{template.height}"
        )
    header = struct.pack(
        "<4sIII32s",
        TEMPLATE_MAGIC,
        template.n,
        template.width,
        template.height,
        template.bank_fingerprint,
    )
    parts = [header]
    for plane in template.planes:
        parts.append(_pack_bits(plane))
    parts.append(_pack_bits(template.mask))
    Path(path).write_bytes(b"".join(parts))


def load_template(path: Path | str) -> IrisTemplate:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    data = path.read_bytes()
    if len(data) < 48:
        raise DataError(f"truncated template file {path}")
    magic, n, width, height, fingerprint = struct.unpack_from("<4sIII32s", data, 0)
    if magic != TEMPLATE_MAGIC:
        raise DataError(f"bad magic {magic!r} in {path}, expected {TEMPLATE_MAGIC!r}")
    if (width, height) != (POLAR_WIDTH, POLAR_HEIGHT):
        raise DataError(f"{path}: unsupported template size {width}x{height}")
    if not 1 <= n <= MAX_FILTER_COUNT:
        raise DataError(f"plane count n={n} out of range in {path}")
    plane_bytes = height * width // 8
    need = 48 + (n + 1) * plane_bytes
    if len(data) != need:
        raise DataError(f"{path}: expected {need} bytes for n={n}, found {len(data)}")
    planes = np.empty((n, height, width), dtype=bool)
    pos = 48
    for i in range(n):
        planes[i] = _unpack_bits(data[pos : pos + plane_bytes], height, width)
        pos += plane_bytes
    mask = _unpack_bits(data[pos : pos + plane_bytes], height, width)
    return IrisTemplate(planes=planes, mask=mask, bank_fingerprint=fingerprint)


# ---------------------------------------------------------------------------
# Manifests


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty manifest {path}") from None
        if tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise DataError(
                f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} fields")
            records.append(ManifestRecord(*(v.strip() for v in row)))
    return DatasetManifest(records=records)


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for rec in manifest.records:
            writer.writerow([rec.image, rec.mask, rec.subject, rec.eye, rec.sensor, rec.iris_id])
