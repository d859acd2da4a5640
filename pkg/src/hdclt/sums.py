"""Normalized sums, exact gaussian analogs and the two bootstrap draws.

The gaussian analog of an averaged independent sum is drawn in a single
shot from the average covariance: a normalized sum of independent centered
gaussians with average covariance S has exactly the law N(0, S), so one
factored draw is exact in law and costs O(p^2) per replication instead of
O(n p).  The multiplier and empirical bootstrap draws are computed from
their defining weighted sums.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .datagen import Dataset, DesignSpec, sample_dataset
from .errors import NotPositiveSemidefiniteError, ParameterError

SUM_KINDS = ("x", "y", "interpolated", "multiplier", "empirical")

# Substream tags for draws that consume two independent branches.
TAG_DATA_BRANCH = 1
TAG_GAUSS_BRANCH = 2


@dataclass(frozen=True)
class SumVector:
    """A single realization of one of the normalized-sum statistics."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ParameterError("sum vector must be a finite 1-d array")
        if self.kind not in SUM_KINDS:
            raise ParameterError(f"unknown sum kind {self.kind!r}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class CovMatrix:
    """A symmetric covariance matrix tagged as population or empirical."""

    matrix: np.ndarray
    flavor: str = "population"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ParameterError(f"covariance must be square, got shape {m.shape}")
        scale = max(1.0, float(np.max(np.abs(m))) if m.size else 1.0)
        if float(np.max(np.abs(m - m.T))) > 1e-12 * scale:
            raise ParameterError("covariance must be symmetric within 1e-12")
        if float(np.min(np.diag(m))) < -1e-12 * scale:
            raise ParameterError("covariance diagonal must be nonnegative")
        if self.flavor not in ("population", "empirical"):
            raise ParameterError(f"unknown covariance flavor {self.flavor!r}")
        object.__setattr__(self, "matrix", (m + m.T) / 2.0)

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    def to_config(self) -> dict:
        return {"p": self.p, "data": [float(v) for v in self.matrix.ravel()]}

    @staticmethod
    def from_config(cfg: dict, flavor: str = "population") -> "CovMatrix":
        p = int(cfg["p"])
        data = np.asarray(cfg["data"], dtype=np.float64).reshape(p, p)
        return CovMatrix(data, flavor=flavor)


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular factor of a covariance, with the jitter that was needed."""

    L: np.ndarray
    jitter_used: float = 0.0

    @property
    def p(self) -> int:
        return self.L.shape[0]


def normalized_sum(dataset: Dataset) -> SumVector:
    """Column sums scaled by n^{-1/2}."""
    n = dataset.n
    return SumVector(dataset.values.sum(axis=0) / math.sqrt(n), kind="x")


def empirical_covariance(dataset: Dataset) -> CovMatrix:
    """Centered second-moment matrix with divisor n (not n-1)."""
    centered = dataset.values - dataset.values.mean(axis=0)
    return CovMatrix(centered.T @ centered / dataset.n, flavor="empirical")


def robust_cholesky(cov: CovMatrix, base_jitter: float = 1e-10) -> CholFactor:
    """Cholesky factor, escalating diagonal jitter base * 2^k for k = 0..20.

    The first attempt uses no jitter, so well-conditioned inputs report
    ``jitter_used == 0``.  Raises after 21 failed jittered attempts.
    """
    a = cov.matrix
    if not (base_jitter > 0.0):
        raise ParameterError(f"base_jitter must be positive, got {base_jitter!r}")
    jitters = [0.0] + [base_jitter * 2.0**k for k in range(21)]
    eye = np.eye(cov.p)
    for jit in jitters:
        try:
            L = np.linalg.cholesky(a + jit * eye)
            return CholFactor(L=L, jitter_used=jit)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveSemidefiniteError(
        f"matrix not positive semidefinite after jitter up to {jitters[-1]:g}"
    )


def gaussian_draw(chol: CholFactor, seed: int) -> SumVector:
    """One N(0, L L') draw; word t of the stream feeds coordinate t."""
    z = rng.normals(seed, chol.p)
    return SumVector(chol.L @ z, kind="y")


def gaussian_draw_batch(chol: CholFactor, seed: int, start: int, count: int) -> np.ndarray:
    """Rows r = start..start+count-1 of the replication stream, one draw each.

    Row r consumes the same stream words as ``gaussian_draw(chol,
    mix64(seed, r))`` and agrees with it up to the float summation order of
    the matrix product.  The batch path itself is deterministic for fixed
    batch boundaries, which is what the estimators rely on.
    """
    keys = rng.mix64_array(seed, np.arange(start, start + count, dtype=np.uint64))
    z = rng.to_normal(rng.word_grid(keys, chol.p))
    return z @ chol.L.T


def interpolated_draw(design: DesignSpec, n: int, chol: CholFactor,
                      v: float, seed: int) -> SumVector:
    """sqrt(v) * (data sum) + sqrt(1-v) * (gaussian analog), independent branches.

    The data branch uses substream mix64(seed, 1), the gaussian branch
    mix64(seed, 2); at v = 1 or v = 0 the law is exactly the corresponding
    endpoint.
    """
    if not (0.0 <= v <= 1.0):
        raise ParameterError(f"interpolation weight must be in [0, 1], got {v!r}")
    if chol.p != design.p:
        raise ParameterError("factor dimension does not match design dimension")
    sx = normalized_sum(sample_dataset(design, n, rng.mix64(seed, TAG_DATA_BRANCH)))
    sy = gaussian_draw(chol, rng.mix64(seed, TAG_GAUSS_BRANCH))
    vals = math.sqrt(v) * sx.values + math.sqrt(1.0 - v) * sy.values
    return SumVector(vals, kind="interpolated")


def multiplier_draw(dataset: Dataset, seed: int) -> SumVector:
    """n^{-1/2} sum of centered rows weighted by independent standard normals.

    Conditional on the data the draw is exactly gaussian with the empirical
    covariance.
    """
    if dataset.n < 2:
        raise ParameterError("multiplier draw needs n >= 2")
    e = rng.normals(seed, dataset.n)
    centered = dataset.values - dataset.values.mean(axis=0)
    return SumVector(centered.T @ e / math.sqrt(dataset.n), kind="multiplier")


def multiplier_draw_batch(dataset: Dataset, seed: int, start: int, count: int) -> np.ndarray:
    """Batched multiplier draws; row r matches ``multiplier_draw(dataset,
    mix64(seed, r))`` up to float summation order (same stream words)."""
    keys = rng.mix64_array(seed, np.arange(start, start + count, dtype=np.uint64))
    e = rng.to_normal(rng.word_grid(keys, dataset.n))
    centered = dataset.values - dataset.values.mean(axis=0)
    return e @ centered / math.sqrt(dataset.n)


def _resample_indices(words: np.ndarray, n: int) -> np.ndarray:
    idx = (rng.to_uniform(words) * n).astype(np.int64)
    np.minimum(idx, n - 1, out=idx)
    return idx


def empirical_resample_draw(dataset: Dataset, seed: int) -> SumVector:
    """n^{-1/2} sum of n rows resampled with replacement, centered at the mean."""
    if dataset.n < 2:
        raise ParameterError("empirical bootstrap draw needs n >= 2")
    n = dataset.n
    idx = _resample_indices(rng.words(seed, n), n)
    total = dataset.values[idx].sum(axis=0)
    vals = (total - n * dataset.values.mean(axis=0)) / math.sqrt(n)
    return SumVector(vals, kind="empirical")


def empirical_resample_draw_batch(dataset: Dataset, seed: int,
                                  start: int, count: int) -> np.ndarray:
    """Batched empirical-bootstrap draws via per-replication row counts.

    Summing each resampled multiset through its count vector gives the same
    row totals as materializing the resample; row r matches
    ``empirical_resample_draw(dataset, mix64(seed, r))`` up to float
    summation order, and the batch path is itself deterministic.
    """
    n = dataset.n
    keys = rng.mix64_array(seed, np.arange(start, start + count, dtype=np.uint64))
    idx = _resample_indices(rng.word_grid(keys, n), n)
    flat = idx + (np.arange(count, dtype=np.int64) * n)[:, None]
    counts = np.bincount(flat.ravel(), minlength=count * n).reshape(count, n)
    totals = counts.astype(np.float64) @ dataset.values
    mean = dataset.values.mean(axis=0)
    return (totals - n * mean) / math.sqrt(n)
