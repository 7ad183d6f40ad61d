"""Apply a filter bank to a normalized iris: bit-plane codes, code values, histograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError
from .imgio import FilterBank, IrisTemplate, NormalizedIris, bank_fingerprint

# Cap on the scratch buffer used by the windowed correlation (elements).
_CHUNK_ELEMENTS = 1 << 22


@dataclass
class BsifHistogram:
    """Occurrence counts of the 2^n code values over valid pixels."""

    bins: np.ndarray
    n: int

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.int64)
        if self.bins.ndim != 1 or self.bins.shape[0] != 1 << self.n:
            raise ConfigError(
                f"histogram for n={self.n} needs {1 << self.n} bins, got shape {self.bins.shape}"
            )
        if np.any(self.bins < 0):
            raise DataError("histogram bins must be non-negative")

    @property
    def total(self) -> int:
        return int(self.bins.sum())


def shift_columns(array: np.ndarray, k: int) -> np.ndarray:
    """Circularly shift content k columns toward higher column indices."""
    return np.roll(array, k, axis=-1)


def shift_template(template: IrisTemplate, k: int) -> IrisTemplate:
    """Column-shift all planes and the mask of a template."""
    return IrisTemplate(
        planes=shift_columns(template.planes, k),
        mask=shift_columns(template.mask, k),
        bank_fingerprint=template.bank_fingerprint,
    )


def _correlate_bank(pixels: np.ndarray, filters: np.ndarray) -> np.ndarray:
    """Cross-correlate with every filter: circular along columns, zero-padded rows.

    Returns responses of shape (n, height, width).  Row chunks keep the
    flattened window buffer bounded; each response value is a plain dot
    product of the window with the filter, so integer-valued inputs give
    exact results.
    """
    n, l, _ = filters.shape
    r = l // 2
    h, w = pixels.shape
    padded = np.pad(pixels, ((r, r), (0, 0)), mode="constant")
    padded = np.pad(padded, ((0, 0), (r, r)), mode="wrap")
    windows = sliding_window_view(padded, (l, l))  # (h, w, l, l)
    flat_filters = filters.reshape(n, l * l).T  # (l*l, n)
    out = np.empty((n, h, w), dtype=np.float64)
    rows_per_chunk = max(1, _CHUNK_ELEMENTS // (w * l * l))
    for start in range(0, h, rows_per_chunk):
        stop = min(start + rows_per_chunk, h)
        block = windows[start:stop].reshape((stop - start) * w, l * l)
        out[:, start:stop, :] = (block @ flat_filters).T.reshape(n, stop - start, w)
    return out


def encode(image: NormalizedIris, bank: FilterBank) -> IrisTemplate:
    """Produce the binary template of ``image`` under ``bank``.

    Each filter response is thresholded strictly at zero (response > 0
    sets the bit).  Filtering wraps circularly along the angular axis, so
    a column shift of the input shifts the code planes identically.  The
    template mask is the occlusion mask with the top and bottom l//2 rows
    cleared, where row filtering would read outside the image.
    """
    if not image.mask.any():
        raise DataError(f"image {image.id!r} has an empty occlusion mask")
    r = bank.l // 2
    if image.height - 2 * r < 1:
        raise ConfigError(
            f"filters of side {bank.l} leave no valid rows on a {image.height}-row image"
        )
    responses = _correlate_bank(image.pixels.astype(np.float64), bank.filters)
    planes = responses > 0.0
    row_valid = np.zeros_like(image.mask)
    row_valid[r : image.height - r, :] = True
    return IrisTemplate(
        planes=planes,
        mask=image.mask & row_valid,
        bank_fingerprint=bank_fingerprint(bank),
    )


def grey_values(template: IrisTemplate) -> np.ndarray:
    """Combine the n bits per pixel into a code value; plane 0 is the MSB."""
    values = np.zeros((template.height, template.width), dtype=np.uint32)
    for plane in template.planes:
        values = (values << 1) | plane.astype(np.uint32)
    return values


def histogram(template: IrisTemplate) -> BsifHistogram:
    """Histogram of code values over the valid (non-occluded, untrimmed) pixels."""
    if not template.mask.any():
        raise DataError("template mask is empty, histogram is undefined")
    values = grey_values(template)[template.mask]
    bins = np.bincount(values, minlength=1 << template.n).astype(np.int64)
    return BsifHistogram(bins=bins, n=template.n)


def normalize_histogram(hist: BsifHistogram) -> np.ndarray:
    """Histogram normalized to unit sum."""
    total = hist.total
    if total <= 0:
        raise DataError("cannot normalize a histogram with zero total")
    return hist.bins.astype(np.float64) / float(total)
