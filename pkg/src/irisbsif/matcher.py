"""The five comparison scores: chi-squared histogram distances and masked
fractional Hamming distances with rotation search."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .encoder import BsifHistogram, histogram, normalize_histogram
from .errors import ConfigError, NumericError
from .imgio import IrisTemplate

# One column is 360/512 = 0.703125 degrees, so a rotation search over
# +-11.25 degrees is exactly +-16 columns.
DEFAULT_MAX_SHIFT = 16


class Strategy(str, Enum):
    HIST_RAW = "hist-raw"
    HIST_NORM = "hist-norm"
    HD_MEAN = "hd-mean"
    HD_MIN = "hd-min"
    HD_MAX = "hd-max"


HIST_STRATEGIES = (Strategy.HIST_RAW, Strategy.HIST_NORM)
HD_STRATEGIES = (Strategy.HD_MEAN, Strategy.HD_MIN, Strategy.HD_MAX)
ALL_STRATEGIES = tuple(Strategy)

_HD_REDUCERS = {
    Strategy.HD_MEAN: np.mean,
    Strategy.HD_MIN: np.min,
    Strategy.HD_MAX: np.max,
}


@dataclass
class ShiftRange:
    """Rotation search window, in columns either way."""

    max_shift_columns: int = DEFAULT_MAX_SHIFT

    def __post_init__(self):
        if not 0 <= self.max_shift_columns < 256:
            raise ConfigError(
                f"max_shift_columns must be in [0, 256), got {self.max_shift_columns}"
            )

    def shifts_by_priority(self) -> list[int]:
        """Candidate shifts in tie-break order: |shift| ascending, negative first."""
        out = [0]
        for k in range(1, self.max_shift_columns + 1):
            out.extend((-k, k))
        return out


@dataclass
class ComparisonScore:
    """A dissimilarity score; smaller means more similar."""

    value: float
    strategy: Strategy
    best_shift: int | None = None
    valid_bits_at_best_shift: int | None = None


@dataclass
class HdAtShift:
    """Per-filter fractional Hamming distances at one probe rotation."""

    shift: int
    distances: np.ndarray
    valid_bits: int

    @property
    def valid(self) -> bool:
        return self.valid_bits > 0


def _check_template_pair(t: IrisTemplate, p: IrisTemplate) -> None:
    if t.n != p.n:
        raise ConfigError(f"templates have different plane counts: {t.n} vs {p.n}")
    if t.mask.shape != p.mask.shape:
        raise ConfigError(
            f"templates have different dimensions: {t.mask.shape} vs {p.mask.shape}"
        )


def _check_histogram_pair(a: BsifHistogram, b: BsifHistogram) -> None:
    if a.n != b.n or a.bins.shape != b.bins.shape:
        raise ConfigError(f"histogram bin counts differ: 2^{a.n} vs 2^{b.n}")


def chi2_raw(h_t: BsifHistogram, h_p: BsifHistogram) -> ComparisonScore:
    """Half the chi-squared distance between raw histograms.

    Bins empty in both histograms contribute nothing (the limit of a
    vanishing stabilizer in the denominator).
    """
    _check_histogram_pair(h_t, h_p)
    a = h_t.bins.astype(np.float64)
    b = h_p.bins.astype(np.float64)
    return ComparisonScore(value=_chi2(a, b), strategy=Strategy.HIST_RAW)


def chi2_normalized(h_t: BsifHistogram, h_p: BsifHistogram) -> ComparisonScore:
    """Chi-squared distance between unit-sum histograms; always in [0, 1]."""
    _check_histogram_pair(h_t, h_p)
    return ComparisonScore(
        value=_chi2(normalize_histogram(h_t), normalize_histogram(h_p)),
        strategy=Strategy.HIST_NORM,
    )


def _chi2(a: np.ndarray, b: np.ndarray) -> float:
    denom = a + b
    nz = denom > 0
    diff = a[nz] - b[nz]
    return float(0.5 * np.sum(diff * diff / denom[nz]))


def hd_per_filter(t: IrisTemplate, p: IrisTemplate, shift: int) -> HdAtShift:
    """Fractional Hamming distance per plane with the probe rotated by ``shift``.

    A positive shift aligns a probe whose content sits ``shift`` columns
    further along the angular axis than the template's.  Only bits valid
    in both masks count; zero mask overlap marks the shift invalid rather
    than raising.
    """
    _check_template_pair(t, p)
    p_mask = np.roll(p.mask, -shift, axis=1)
    overlap = t.mask & p_mask
    valid_bits = int(np.count_nonzero(overlap))
    if valid_bits == 0:
        return HdAtShift(shift=shift, distances=np.full(t.n, np.nan), valid_bits=0)
    p_planes = np.roll(p.planes, -shift, axis=2)
    disagree = (t.planes ^ p_planes) & overlap
    counts = disagree.reshape(t.n, -1).sum(axis=1)
    return HdAtShift(shift=shift, distances=counts / valid_bits, valid_bits=valid_bits)


def hd_curve(t: IrisTemplate, p: IrisTemplate, shift_range: ShiftRange) -> list[HdAtShift]:
    """Hamming distances at every candidate shift, in tie-break priority order."""
    return [hd_per_filter(t, p, s) for s in shift_range.shifts_by_priority()]


def _best_over_shifts(curve: list[HdAtShift], strategy: Strategy) -> ComparisonScore:
    reducer = _HD_REDUCERS[strategy]
    best: HdAtShift | None = None
    best_value = np.inf
    for point in curve:
        if not point.valid:
            continue
        value = float(reducer(point.distances))
        if value < best_value:
            best_value = value
            best = point
    if best is None:
        raise NumericError("no probe rotation yields any mask overlap")
    return ComparisonScore(
        value=best_value,
        strategy=strategy,
        best_shift=best.shift,
        valid_bits_at_best_shift=best.valid_bits,
    )


def score_hd(
    t: IrisTemplate,
    p: IrisTemplate,
    strategy: Strategy,
    shift_range: ShiftRange | None = None,
) -> ComparisonScore:
    """Aggregate the per-plane distances (mean, min or max) and take the
    minimum over the rotation search window.

    Ties in the outer minimum go to the smaller |shift|, negative before
    positive.
    """
    if strategy not in _HD_REDUCERS:
        raise ConfigError(f"{strategy} is not a Hamming-distance strategy")
    return _best_over_shifts(hd_curve(t, p, shift_range or ShiftRange()), strategy)


def score(
    a,
    b,
    strategy: Strategy,
    shift_range: ShiftRange | None = None,
) -> ComparisonScore:
    """Uniform dispatch over the five strategies.

    Accepts two templates for any strategy (histograms are derived when
    needed) or two histograms for the histogram strategies only.
    """
    strategy = Strategy(strategy)
    if isinstance(a, IrisTemplate) and isinstance(b, IrisTemplate):
        if strategy in _HD_REDUCERS:
            return score_hd(a, b, strategy, shift_range)
        h_a, h_b = histogram(a), histogram(b)
    elif isinstance(a, BsifHistogram) and isinstance(b, BsifHistogram):
        if strategy in _HD_REDUCERS:
            raise ConfigError(f"{strategy.value} needs templates, not histograms")
        h_a, h_b = a, b
    else:
        raise ConfigError(
            f"cannot score {type(a).__name__} against {type(b).__name__}"
        )
    if strategy is Strategy.HIST_RAW:
        return chi2_raw(h_a, h_b)
    return chi2_normalized(h_a, h_b)


def score_all(
    t: IrisTemplate,
    p: IrisTemplate,
    strategies=ALL_STRATEGIES,
    shift_range: ShiftRange | None = None,
) -> dict[Strategy, ComparisonScore]:
    """Score one template pair under several strategies, sharing the
    histogram and rotation-curve computations."""
    strategies = [Strategy(s) for s in strategies]
    out: dict[Strategy, ComparisonScore] = {}
    wanted_hd = [s for s in strategies if s in _HD_REDUCERS]
    if wanted_hd:
        curve = hd_curve(t, p, shift_range or ShiftRange())
        for s in wanted_hd:
            out[s] = _best_over_shifts(curve, s)
    if Strategy.HIST_RAW in strategies or Strategy.HIST_NORM in strategies:
        h_t, h_p = histogram(t), histogram(p)
        if Strategy.HIST_RAW in strategies:
            out[Strategy.HIST_RAW] = chi2_raw(h_t, h_p)
        if Strategy.HIST_NORM in strategies:
            out[Strategy.HIST_NORM] = chi2_normalized(h_t, h_p)
    return {s: out[s] for s in strategies}
