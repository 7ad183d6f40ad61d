"""Learn filter banks from patch corpora: DC removal, PCA whitening, fixed-point ICA."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .imgio import MAX_FILTER_COUNT, FilterBank
from .patches import PatchSet

# The supported size/count grids: 12 filter sides by 8 filter counts,
# 96 configurations in total.
GRID_FILTER_SIDES = (5, 7, 9, 11, 13, 15, 17, 19, 21, 27, 33, 39)
GRID_FILTER_COUNTS = (5, 6, 7, 8, 9, 10, 11, 12)

NONLINEARITIES = ("log-cosh", "cube")

# Relative eigenvalue floor below which a principal direction is treated
# as degenerate during whitening.
EIGENVALUE_FLOOR = 1e-12


@dataclass
class TrainingConfig:
    n: int
    l: int
    seed: int = 0
    max_iterations: int = 200
    convergence_tolerance: float = 1e-4
    nonlinearity: str = "log-cosh"

    def __post_init__(self):
        if self.l < 3 or self.l % 2 == 0:
            raise ConfigError(f"filter side l={self.l} must be odd and >= 3")
        if not 1 <= self.n <= MAX_FILTER_COUNT:
            raise ConfigError(f"filter count n={self.n} outside [1, {MAX_FILTER_COUNT}]")
        if self.n > self.l * self.l - 1:
            raise ConfigError(
                f"n={self.n} exceeds the {self.l * self.l - 1} informative dimensions "
                f"of mean-free {self.l}x{self.l} patches"
            )
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.convergence_tolerance <= 0:
            raise ConfigError("convergence_tolerance must be positive")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigError(f"nonlinearity must be one of {NONLINEARITIES}")


@dataclass
class TrainingReport:
    iterations: int
    converged: bool
    whiteness_max_offdiag: float
    whiteness_max_diag_error: float


def standard_grid() -> list[tuple[int, int]]:
    """All 96 supported (n, l) configurations, ordered by l then n."""
    return [(n, l) for l in GRID_FILTER_SIDES for n in GRID_FILTER_COUNTS]


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    """Symmetric orthogonalization: W <- (W W^T)^(-1/2) W."""
    s, u = np.linalg.eigh(w @ w.T)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


def _nonlinearity(name: str, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Contrast derivative g(x) and the per-row mean of g'(x)."""
    if name == "log-cosh":
        gx = np.tanh(x)
        return gx, (1.0 - gx**2).mean(axis=1)
    gx = x**3
    return gx, (3.0 * x**2).mean(axis=1)


def train_filters(patches: PatchSet, cfg: TrainingConfig) -> tuple[FilterBank, TrainingReport]:
    """Learn an n-filter bank from square patches.

    Each patch vector first loses its own mean, the corpus is whitened to
    the top n principal directions, and a symmetric fixed-point ICA
    rotation maximizes the independence of the component responses.  The
    learned filters are the rows of (unmixing x whitening), reshaped to
    l x l and sign-canonicalized so the largest-magnitude coefficient is
    non-negative.  Deterministic for a fixed seed.
    """
    if patches.side != cfg.l:
        raise ConfigError(f"patch side {patches.side} does not match configured l={cfg.l}")
    dim = cfg.l * cfg.l
    count = len(patches)
    if count <= max(cfg.n, 1):
        raise ConfigError(f"need more than {cfg.n} patches, got {count}")
    if count < 10 * dim:
        warnings.warn(
            f"only {count} patches for l={cfg.l} (recommended >= {10 * dim}); "
            "filters may be poorly estimated"
        )

    x = patches.patches.reshape(count, dim).astype(np.float64)
    x -= x.mean(axis=1, keepdims=True)  # per-patch DC removal

    mu = x.mean(axis=0)
    xc = x - mu
    cov = (xc.T @ xc) / (count - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = eigvals[::-1]
    eigvecs = eigvecs[:, ::-1]
    floor = EIGENVALUE_FLOOR * max(eigvals[0], 0.0)
    if eigvals[0] <= 0.0 or np.sum(eigvals > floor) < cfg.n:
        raise NumericError(
            f"patch corpus is rank deficient: fewer than n={cfg.n} usable "
            "principal directions after DC removal"
        )
    whitening = (eigvecs[:, : cfg.n] / np.sqrt(eigvals[: cfg.n])).T
    z = whitening @ xc.T  # (n, count), unit covariance

    rng = np.random.default_rng(cfg.seed)
    w = _sym_decorrelate(rng.standard_normal((cfg.n, cfg.n)))
    converged = False
    iterations = cfg.max_iterations
    for it in range(1, cfg.max_iterations + 1):
        gx, gprime_mean = _nonlinearity(cfg.nonlinearity, w @ z)
        w_new = _sym_decorrelate(gx @ z.T / count - gprime_mean[:, None] * w)
        step = np.max(np.abs(np.abs(np.sum(w_new * w, axis=1)) - 1.0))
        w = w_new
        if step < cfg.convergence_tolerance:
            converged = True
            iterations = it
            break

    flat = w @ whitening
    for row in flat:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0

    bank = FilterBank(
        filters=flat.reshape(cfg.n, cfg.l, cfg.l),
        provenance=f"ica:{patches.source_tag}",
    )

    responses = flat @ x.T
    resp_cov = np.cov(responses) if cfg.n > 1 else np.cov(responses).reshape(1, 1)
    off = resp_cov - np.diag(np.diag(resp_cov))
    report = TrainingReport(
        iterations=iterations,
        converged=converged,
        whiteness_max_offdiag=float(np.max(np.abs(off))),
        whiteness_max_diag_error=float(np.max(np.abs(np.diag(resp_cov) - 1.0))),
    )
    return bank, report


def filter_dc(bank: FilterBank) -> np.ndarray:
    """Per-filter coefficient sums (near zero for banks trained here)."""
    return bank.filters.sum(axis=(1, 2))


def random_orthonormal_bank(n: int, l: int, seed: int = 0) -> FilterBank:
    """Baseline bank of seeded random orthonormal filters (no training data)."""
    cfg = TrainingConfig(n=n, l=l, seed=seed)  # reuse the (n, l) validation
    rng = np.random.default_rng(cfg.seed)
    q, _ = np.linalg.qr(rng.standard_normal((l * l, n)))
    flat = q.T.copy()
    for row in flat:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return FilterBank(filters=flat.reshape(n, l, l), provenance="random-orthonormal")
