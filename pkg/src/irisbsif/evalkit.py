"""Selection and testing methodology: pairing, EER, d-prime, grid search,
bootstrap resampling and a permutation-based significance test."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .encoder import encode
from .errors import ConfigError, DataError, NumericError
from .imgio import DatasetManifest, FilterBank, NormalizedIris
from .matcher import ALL_STRATEGIES, ShiftRange, Strategy, score_all

DEFAULT_BOOTSTRAP_SETS = 30
DEFAULT_PERMUTATIONS = 100_000


@dataclass
class ScoreSet:
    """Labeled genuine and impostor comparison scores."""

    genuine: np.ndarray
    impostor: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).ravel()
        self.impostor = np.asarray(self.impostor, dtype=np.float64).ravel()
        for name, arr in (("genuine", self.genuine), ("impostor", self.impostor)):
            if arr.size and not np.all(np.isfinite(arr)):
                raise DataError(f"{name} scores contain non-finite values")


@dataclass
class ScoreStats:
    mean_g: float
    mean_i: float
    var_g: float
    var_i: float

    @classmethod
    def from_score_set(cls, s: ScoreSet) -> "ScoreStats":
        if s.genuine.size < 2 or s.impostor.size < 2:
            raise ConfigError("need at least 2 genuine and 2 impostor scores")
        return cls(
            mean_g=float(s.genuine.mean()),
            mean_i=float(s.impostor.mean()),
            var_g=float(s.genuine.var(ddof=1)),
            var_i=float(s.impostor.var(ddof=1)),
        )


@dataclass
class EvalReport:
    d_prime: float
    eer: float
    eer_threshold: float
    roc: list[tuple[float, float, float]]  # (threshold, far, frr)
    n_genuine: int
    n_impostor: int
    config: dict = field(default_factory=dict)


@dataclass
class PairSet:
    """Index pairs into a manifest's records."""

    genuine: list[tuple[int, int]]
    impostor: list[tuple[int, int]]
    skipped_single_image: int = 0


@dataclass
class GridCell:
    bank_index: int
    n: int
    l: int
    provenance: str
    strategy: Strategy
    d_prime: float | None = None
    eer: float | None = None
    error: str | None = None


@dataclass
class BoxplotSummary:
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: list[float]


# ---------------------------------------------------------------------------
# Pairing protocol


def make_pairs(manifest: DatasetManifest, seed: int = 0) -> PairSet:
    """Select comparison pairs that minimize statistical dependence.

    Genuine: at most one image pair per (subject, eye, sensor) group,
    drawn at random from the group's images.  Impostor: one pair per
    iris, matching a random representative image against an image of a
    different subject, preferring the same sensor; no pair repeats.
    Deterministic for a fixed seed.
    """
    rng = np.random.default_rng([seed, 0])
    by_group: dict[tuple[str, str, str], list[int]] = {}
    by_iris: dict[str, list[int]] = {}
    for idx, rec in enumerate(manifest.records):
        by_group.setdefault((rec.subject, rec.eye, rec.sensor), []).append(idx)
        by_iris.setdefault(rec.iris_id, []).append(idx)

    genuine: list[tuple[int, int]] = []
    skipped = 0
    for key in sorted(by_group):
        members = by_group[key]
        if len(members) < 2:
            skipped += 1
            continue
        a, b = rng.choice(len(members), size=2, replace=False)
        genuine.append((members[min(a, b)], members[max(a, b)]))
    if skipped:
        warnings.warn(f"{skipped} (subject, eye, sensor) groups have a single image; "
                      "they contribute no genuine pair")

    impostor: list[tuple[int, int]] = []
    used: set[tuple[int, int]] = set()
    records = manifest.records
    for iris_id in sorted(by_iris):
        members = by_iris[iris_id]
        rep = members[int(rng.integers(len(members)))]
        rep_rec = records[rep]
        same_sensor = [
            i for i, rec in enumerate(records)
            if rec.subject != rep_rec.subject and rec.sensor == rep_rec.sensor
        ]
        cross = [i for i, rec in enumerate(records) if rec.subject != rep_rec.subject]
        candidates = same_sensor or cross
        if not candidates:
            continue
        order = rng.permutation(len(candidates))
        for j in order:
            other = candidates[int(j)]
            pair = (min(rep, other), max(rep, other))
            if pair not in used:
                used.add(pair)
                impostor.append(pair)
                break
    return PairSet(genuine=genuine, impostor=impostor, skipped_single_image=skipped)


# ---------------------------------------------------------------------------
# Metrics


def d_prime(s: ScoreSet) -> float:
    """Decidability: |mean_g - mean_i| / sqrt((var_g + var_i) / 2)."""
    stats = ScoreStats.from_score_set(s)
    pooled = 0.5 * (stats.var_g + stats.var_i)
    if pooled <= 0.0:
        raise NumericError("zero pooled variance, d-prime is undefined")
    return abs(stats.mean_g - stats.mean_i) / math.sqrt(pooled)


def _operating_points(s: ScoreSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FAR/FRR at every distinct score threshold (accept iff score <= t)."""
    thresholds = np.unique(np.concatenate([s.genuine, s.impostor]))
    far = np.searchsorted(np.sort(s.impostor), thresholds, side="right") / s.impostor.size
    frr = 1.0 - np.searchsorted(np.sort(s.genuine), thresholds, side="right") / s.genuine.size
    return thresholds, far, frr


def eer(s: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its threshold for dissimilarity scores.

    FAR - FRR is non-decreasing in the threshold; the crossing is located
    between adjacent operating points and resolved by linear interpolation
    of both curves.
    """
    if s.genuine.size == 0 or s.impostor.size == 0:
        raise ConfigError("need non-empty genuine and impostor score lists")
    thresholds, far, frr = _operating_points(s)
    diff = far - frr
    k = int(np.searchsorted(diff >= 0.0, True))  # first operating point with FAR >= FRR
    if diff[k] == 0.0:
        return float(far[k]), float(thresholds[k])
    if k == 0:
        # FAR already exceeds FRR at the smallest score; below it FAR=0, FRR=1.
        t_lo, far_lo, frr_lo = thresholds[0] - 1.0, 0.0, 1.0
    else:
        t_lo, far_lo, frr_lo = thresholds[k - 1], far[k - 1], frr[k - 1]
    frac = (frr_lo - far_lo) / ((far[k] - far_lo) - (frr[k] - frr_lo))
    value = far_lo + frac * (far[k] - far_lo)
    threshold = t_lo + frac * (thresholds[k] - t_lo)
    return float(value), float(threshold)


def roc_points(s: ScoreSet) -> list[tuple[float, float, float]]:
    thresholds, far, frr = _operating_points(s)
    return [(float(t), float(a), float(r)) for t, a, r in zip(thresholds, far, frr)]


def evaluate_scores(s: ScoreSet, config: dict | None = None) -> EvalReport:
    """Full report (d-prime, EER, ROC) for one score set."""
    value, threshold = eer(s)
    return EvalReport(
        d_prime=d_prime(s),
        eer=value,
        eer_threshold=threshold,
        roc=roc_points(s),
        n_genuine=int(s.genuine.size),
        n_impostor=int(s.impostor.size),
        config=dict(config or {}),
    )


# ---------------------------------------------------------------------------
# Grid search


def score_pairs(
    images: list[NormalizedIris],
    pairs: PairSet,
    bank: FilterBank,
    strategies=ALL_STRATEGIES,
    shift_range: ShiftRange | None = None,
) -> dict[Strategy, ScoreSet]:
    """Encode the images once under ``bank`` and score all pairs.

    Rotation curves and histograms are shared across the requested
    strategies for each pair.
    """
    strategies = [Strategy(s) for s in strategies]
    templates = [encode(img, bank) for img in images]
    per_strategy: dict[Strategy, dict[str, list[float]]] = {
        s: {"genuine": [], "impostor": []} for s in strategies
    }
    for label, pair_list in (("genuine", pairs.genuine), ("impostor", pairs.impostor)):
        for a, b in pair_list:
            scores = score_all(templates[a], templates[b], strategies, shift_range)
            for s in strategies:
                per_strategy[s][label].append(scores[s].value)
    return {
        s: ScoreSet(
            genuine=np.array(vals["genuine"]),
            impostor=np.array(vals["impostor"]),
            metadata={"bank": bank.provenance, "strategy": s.value},
        )
        for s, vals in per_strategy.items()
    }


_STRATEGY_ORDER = {s: i for i, s in enumerate(ALL_STRATEGIES)}


def grid_cell_sort_key(cell: GridCell):
    """Total ranking order: d-prime desc, EER asc, n asc, l asc, then
    strategy and bank index; failed cells sort last."""
    failed = cell.error is not None
    return (
        failed,
        -(cell.d_prime if cell.d_prime is not None else -math.inf),
        cell.eer if cell.eer is not None else math.inf,
        cell.n,
        cell.l,
        _STRATEGY_ORDER[cell.strategy],
        cell.bank_index,
    )


def grid_search(
    images: list[NormalizedIris],
    pairs: PairSet,
    banks: list[FilterBank],
    strategies=ALL_STRATEGIES,
    shift_range: ShiftRange | None = None,
) -> list[GridCell]:
    """Evaluate every (bank, strategy) cell and rank the results.

    A failure inside one cell is recorded on that cell instead of
    aborting the search.
    """
    strategies = [Strategy(s) for s in strategies]
    cells: list[GridCell] = []
    for bank_index, bank in enumerate(banks):
        base = dict(bank_index=bank_index, n=bank.n, l=bank.l, provenance=bank.provenance)
        try:
            by_strategy = score_pairs(images, pairs, bank, strategies, shift_range)
        except Exception as exc:  # keep the sweep alive, record the failure
            cells.extend(
                GridCell(strategy=s, error=f"{type(exc).__name__}: {exc}", **base)
                for s in strategies
            )
            continue
        for s in strategies:
            try:
                report = evaluate_scores(by_strategy[s])
                cells.append(GridCell(strategy=s, d_prime=report.d_prime, eer=report.eer, **base))
            except Exception as exc:
                cells.append(GridCell(strategy=s, error=f"{type(exc).__name__}: {exc}", **base))
    cells.sort(key=grid_cell_sort_key)
    return cells


# ---------------------------------------------------------------------------
# Bootstrap and significance


def bootstrap_dprime(
    s: ScoreSet, sets: int = DEFAULT_BOOTSTRAP_SETS, seed: int = 0
) -> tuple[list[float], BoxplotSummary]:
    """d-prime over ``sets`` resamples of the score lists.

    Each set independently resamples genuine and impostor scores with
    replacement to their original sizes; set k draws from its own RNG
    stream, so results do not depend on evaluation order.
    """
    if sets < 1:
        raise ConfigError("need at least one bootstrap set")
    if s.genuine.size == 0 or s.impostor.size == 0:
        raise ConfigError("need non-empty genuine and impostor score lists")
    values: list[float] = []
    for k in range(sets):
        rng = np.random.default_rng([seed, k])
        g = rng.choice(s.genuine, size=s.genuine.size, replace=True)
        i = rng.choice(s.impostor, size=s.impostor.size, replace=True)
        values.append(d_prime(ScoreSet(genuine=g, impostor=i)))
    q1, median, q3 = np.percentile(values, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    outliers = [float(v) for v in values if v < lo or v > hi]
    summary = BoxplotSummary(
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        whisker_low=float(lo),
        whisker_high=float(hi),
        outliers=outliers,
    )
    return values, summary


def _f_statistic(values: np.ndarray, idx_a: np.ndarray, idx_b: np.ndarray) -> float:
    """One-way two-group ANOVA F from index sets (ascending order kept so
    that a given partition always produces bit-identical sums)."""
    ya = values[idx_a]
    yb = values[idx_b]
    n_a, n_b = ya.size, yb.size
    mean_a = ya.sum() / n_a
    mean_b = yb.sum() / n_b
    grand = (ya.sum() + yb.sum()) / (n_a + n_b)
    ssb = n_a * (mean_a - grand) ** 2 + n_b * (mean_b - grand) ** 2
    ssw = ((ya - mean_a) ** 2).sum() + ((yb - mean_b) ** 2).sum()
    df_w = n_a + n_b - 2
    if ssw == 0.0:
        if ssb == 0.0:
            raise NumericError("all values identical, F statistic is undefined")
        return math.inf
    return float((ssb / 1.0) / (ssw / df_w))


def compare_methods(
    a,
    b,
    permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
) -> tuple[float, float]:
    """Two-group one-way ANOVA with a permutation p-value.

    The p-value is the fraction of label reassignments whose F statistic
    strictly exceeds the observed one.  All assignments are enumerated
    when there are at most ``permutations`` of them; otherwise that many
    are sampled without the null distribution ever relying on the F
    distribution's normality assumptions.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise ConfigError("need at least 2 values per group")
    values = np.concatenate([a, b])
    n_a, n = a.size, a.size + b.size
    all_idx = np.arange(n)
    observed = _f_statistic(values, all_idx[:n_a], all_idx[n_a:])

    exceed = 0
    total = 0
    if math.comb(n, n_a) <= permutations:
        for combo in combinations(range(n), n_a):
            idx_a = np.array(combo)
            mask = np.zeros(n, dtype=bool)
            mask[idx_a] = True
            f = _f_statistic(values, idx_a, all_idx[~mask])
            exceed += f > observed
            total += 1
    else:
        rng = np.random.default_rng(seed)
        for _ in range(permutations):
            perm = rng.permutation(n)
            idx_a = np.sort(perm[:n_a])
            idx_b = np.sort(perm[n_a:])
            f = _f_statistic(values, idx_a, idx_b)
            exceed += f > observed
            total += 1
    return observed, exceed / total
