"""Hitting probabilities and sup-discrepancies over finite set families.

Estimation layout
-----------------
Replications are processed in fixed-size batches; replication ``r`` of a
side with stream seed ``s`` derives its randomness from ``mix64(s, r)``, so
any assignment of batches to worker threads produces bit-identical counts.
Hits are accumulated as integers, which makes the reduction order
irrelevant.  The two compared sides always use independent streams (tags 1
and 2 of the caller's seed): no common-random-number coupling is applied,
since the compared laws differ.

The reported ``noise_floor`` is the frozen approximation
``4.5 * sqrt(0.5 / R) * sqrt(log(K) + 1)`` of the 99.9% quantile of the
sup over K sets of two-sample binomial noise when the compared laws
coincide; estimated discrepancies below the floor are indistinguishable
from zero.

A finite family can only witness a lower bound of a sup over an infinite
class, so every estimate records the family that produced it.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from . import rng
from .datagen import Dataset, DesignSpec, values_from_row_keys
from .errors import ParameterError
from .geometry import Hyperrectangle, SetFamily, hit_counts
from .sums import (
    CholFactor,
    CovMatrix,
    empirical_resample_draw_batch,
    multiplier_draw_batch,
    robust_cholesky,
)

BATCH = 1 << 13  # fixed batch size; must not depend on the worker count

TAG_FIRST = 1
TAG_SECOND = 2
TAG_GRID = 16


def noise_floor(R: int, K: int) -> float:
    """Frozen identical-law calibration bound for the sup over K sets."""
    return 4.5 * math.sqrt(0.5 / R) * math.sqrt(math.log(K) + 1.0)


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

class _Sampler:
    """Base: replication r of stream ``seed`` uses the key ``mix64(seed, r)``."""

    p: int

    def draw(self, seed: int, start: int, count: int) -> np.ndarray:
        keys = rng.mix64_array(seed, np.arange(start, start + count, dtype=np.uint64))
        return self.draw_keys(keys)

    def draw_keys(self, keys: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class GaussianSumSampler(_Sampler):
    """Exact N(0, L L') draws."""

    def __init__(self, chol: CholFactor):
        self.chol = chol
        self.p = chol.p

    def draw_keys(self, keys: np.ndarray) -> np.ndarray:
        z = rng.to_normal(rng.word_grid(keys, self.p))
        return z @ self.chol.L.T


class DesignSumSampler(_Sampler):
    """Replications of the normalized n-row sum of a design.

    The literal path draws a fresh dataset per replication (dataset seed
    ``mix64(seed, r)``, rows from its per-row substreams) and sums it.  Two
    designs admit an exact-in-law shortcut, on by default:

    * gaussian rows: the normalized sum is N(0, Sigma) for every n, so one
      row of the design is an exact draw;
    * independent sign rows: each coordinate of the sum is an independent
      (2*Binomial(n, 1/2) - n) / sqrt(n), drawn by binomial inversion
      against the exact CDF table.

    Shortcut draws consume different stream words than the literal path but
    have exactly the law of the sum statistic.
    """

    def __init__(self, design: DesignSpec, n: int, exact_law: bool = True):
        if n < 2:
            raise ParameterError(f"need n >= 2, got {n!r}")
        self.design = design
        self.n = n
        self.p = design.p
        gaussian_like = design.kind == "gaussian" or (
            design.kind == "log_concave" and design.variant == "gaussian"
        )
        self.mode = "literal"
        if exact_law and gaussian_like:
            self.mode = "gaussian"
        elif exact_law and design.kind == "rademacher":
            self.mode = "binomial"
            self._cdf = binom.cdf(np.arange(n + 1), n, 0.5)

    def draw_keys(self, keys: np.ndarray) -> np.ndarray:
        if self.mode == "gaussian":
            return values_from_row_keys(self.design, keys)
        if self.mode == "binomial":
            u = rng.to_uniform(rng.word_grid(keys, self.p))
            heads = np.searchsorted(self._cdf, u, side="left")
            return (2.0 * heads - self.n) / math.sqrt(self.n)
        # literal: chunk replications so the (b, n, p) block stays small
        count = len(keys)
        out = np.empty((count, self.p))
        per = max(1, (1 << 22) // max(1, self.n * self.p))
        for i in range(0, count, per):
            row_keys = rng.word_grid(keys[i:i + per], self.n)
            vals = values_from_row_keys(self.design, row_keys)
            out[i:i + row_keys.shape[0]] = vals.sum(axis=1) / math.sqrt(self.n)
        return out


class InterpolatedSampler(_Sampler):
    """sqrt(v) * (data sum) + sqrt(1 - v) * N(0, L L'), independent branches.

    Replication r derives ``s_r = mix64(seed, r)`` and feeds branch keys
    ``mix64(s_r, 1)`` (data) and ``mix64(s_r, 2)`` (gaussian), matching the
    single-draw convention.
    """

    def __init__(self, design: DesignSpec, n: int, chol: CholFactor, v: float,
                 exact_law: bool = True):
        if not (0.0 <= v <= 1.0):
            raise ParameterError(f"interpolation weight must be in [0, 1], got {v!r}")
        if chol.p != design.p:
            raise ParameterError("factor dimension does not match design dimension")
        self.inner_x = DesignSumSampler(design, n, exact_law)
        self.inner_y = GaussianSumSampler(chol)
        self.v = v
        self.p = design.p

    def draw_keys(self, keys: np.ndarray) -> np.ndarray:
        sx = self.inner_x.draw_keys(rng.mix64_keys(keys, TAG_FIRST))
        sy = self.inner_y.draw_keys(rng.mix64_keys(keys, TAG_SECOND))
        return math.sqrt(self.v) * sx + math.sqrt(1.0 - self.v) * sy


class MultiplierSampler:
    """Multiplier-bootstrap draws of a fixed dataset."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.p = dataset.p

    def draw(self, seed: int, start: int, count: int) -> np.ndarray:
        return multiplier_draw_batch(self.dataset, seed, start, count)


class EmpiricalSampler:
    """Empirical-bootstrap draws of a fixed dataset."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.p = dataset.p

    def draw(self, seed: int, start: int, count: int) -> np.ndarray:
        return empirical_resample_draw_batch(self.dataset, seed, start, count)


# ---------------------------------------------------------------------------
# estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbEstimate:
    """Hit fraction with its binomial standard error."""

    p_hat: float
    R: int
    se: float
    seed: int

    def to_config(self) -> dict:
        return {"p_hat": self.p_hat, "R": self.R, "se": self.se, "seed": self.seed}


@dataclass(frozen=True)
class GapRow:
    label: str
    p_first: float
    p_second: float
    diff: float
    se_diff: float


@dataclass(frozen=True)
class GapEstimate:
    """Sup over a family of |p_hat_first - p_hat_second| with per-set detail."""

    sup_diff: float
    argmax_set_label: str
    per_set: tuple
    R: int
    noise_floor: float
    seed: int
    sides: tuple = ("first", "second")

    def to_config(self) -> dict:
        return {
            "sup_diff": self.sup_diff,
            "argmax_set_label": self.argmax_set_label,
            "R": self.R,
            "noise_floor": self.noise_floor,
            "seed": self.seed,
            "sides": list(self.sides),
            "per_set": [
                {"label": r.label, "p_x": r.p_first, "p_y": r.p_second,
                 "diff": r.diff, "se_diff": r.se_diff}
                for r in self.per_set
            ],
        }

    def csv_rows(self) -> tuple[list, list]:
        header = ["label", "p_x", "p_y", "diff", "se_diff"]
        rows = [[r.label, r.p_first, r.p_second, r.diff, r.se_diff]
                for r in self.per_set]
        return header, rows


@dataclass(frozen=True)
class InterpolationEstimate:
    """Max interpolation discrepancy over a weight grid and a family."""

    sup_diff: float
    noise_floor: float
    per_v: tuple  # tuple of (v, GapEstimate)
    R: int
    seed: int

    def to_config(self) -> dict:
        return {
            "sup_diff": self.sup_diff,
            "noise_floor": self.noise_floor,
            "R": self.R,
            "seed": self.seed,
            "per_v": [{"v": v, "estimate": est.to_config()} for v, est in self.per_v],
        }


# ---------------------------------------------------------------------------
# estimation core
# ---------------------------------------------------------------------------

def _batches(R: int) -> list[tuple[int, int]]:
    return [(start, min(BATCH, R - start)) for start in range(0, R, BATCH)]


def _map_batches(work, R: int, workers: int | None) -> list:
    """Run ``work(start, count)`` over the fixed batch grid.

    Results come back indexed by batch so the reduction order never depends
    on scheduling.
    """
    batches = _batches(R)
    w = workers if workers else default_workers()
    if w <= 1 or len(batches) <= 1:
        return [work(s, c) for s, c in batches]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(lambda sc: work(*sc), batches))


def family_hit_counts(sampler, family: SetFamily, R: int, seed: int,
                      workers: int | None = None) -> np.ndarray:
    if sampler.p != family.p:
        raise ParameterError(
            f"sampler dimension {sampler.p} does not match family dimension {family.p}"
        )

    def work(start: int, count: int) -> np.ndarray:
        return hit_counts(family, sampler.draw(seed, start, count))

    parts = _map_batches(work, R, workers)
    return np.sum(parts, axis=0)


def estimate_prob(sampler, set_, R: int, seed: int,
                  workers: int | None = None) -> ProbEstimate:
    """Fraction of R independent draws landing in one set."""
    if R < 100:
        raise ParameterError(f"need R >= 100 replications, got {R!r}")
    family = SetFamily((set_,), ("set",))
    count = int(family_hit_counts(sampler, family, R, seed, workers)[0])
    p_hat = count / R
    return ProbEstimate(p_hat=p_hat, R=R, se=math.sqrt(p_hat * (1.0 - p_hat) / R),
                        seed=seed)


def _gap_from_counts(counts_1: np.ndarray, counts_2: np.ndarray,
                     family: SetFamily, R: int, seed: int,
                     sides: tuple) -> GapEstimate:
    p1 = counts_1 / R
    p2 = counts_2 / R
    diff = np.abs(p1 - p2)
    se = np.sqrt(p1 * (1.0 - p1) / R + p2 * (1.0 - p2) / R)
    k = int(np.argmax(diff))
    rows = tuple(
        GapRow(label=family.labels[i], p_first=float(p1[i]), p_second=float(p2[i]),
               diff=float(diff[i]), se_diff=float(se[i]))
        for i in range(len(family))
    )
    return GapEstimate(
        sup_diff=float(diff[k]), argmax_set_label=family.labels[k], per_set=rows,
        R=R, noise_floor=noise_floor(R, len(family)), seed=seed, sides=sides,
    )


def _check_gap_args(family: SetFamily, R: int) -> None:
    if R < 1000:
        raise ParameterError(f"need R >= 1000 replications, got {R!r}")
    if len(family) < 1:
        raise ParameterError("need a nonempty family")


def gaussian_approx_gap(design: DesignSpec, n: int, sigma: CovMatrix,
                        family: SetFamily, R: int, seed: int,
                        workers: int | None = None,
                        exact_law: bool = True) -> GapEstimate:
    """Sup over the family of |P(sum in A) - P(N(0, sigma) in A)|, estimated
    from R fresh-sum draws against R gaussian draws on independent streams."""
    _check_gap_args(family, R)
    sampler_x = DesignSumSampler(design, n, exact_law)
    sampler_y = GaussianSumSampler(robust_cholesky(sigma))
    counts_x = family_hit_counts(sampler_x, family, R, rng.mix64(seed, TAG_FIRST), workers)
    counts_y = family_hit_counts(sampler_y, family, R, rng.mix64(seed, TAG_SECOND), workers)
    return _gap_from_counts(counts_x, counts_y, family, R, seed, ("sum", "gaussian"))


def bootstrap_gap(dataset: Dataset, sigma: CovMatrix, family: SetFamily,
                  R: int, seed: int, mode: str,
                  workers: int | None = None) -> GapEstimate:
    """Conditional bootstrap analog: bootstrap draws of a fixed dataset
    against N(0, sigma) draws.  ``mode`` is "MB" (multiplier) or "EB"
    (empirical)."""
    _check_gap_args(family, R)
    if mode == "MB":
        sampler_b = MultiplierSampler(dataset)
    elif mode == "EB":
        sampler_b = EmpiricalSampler(dataset)
    else:
        raise ParameterError(f"mode must be 'MB' or 'EB', got {mode!r}")
    sampler_y = GaussianSumSampler(robust_cholesky(sigma))
    counts_b = family_hit_counts(sampler_b, family, R, rng.mix64(seed, TAG_FIRST), workers)
    counts_y = family_hit_counts(sampler_y, family, R, rng.mix64(seed, TAG_SECOND), workers)
    return _gap_from_counts(counts_b, counts_y, family, R, seed,
                            ("multiplier" if mode == "MB" else "empirical", "gaussian"))


def _require_lower_orthants(family: SetFamily) -> None:
    for s in family.sets:
        if not isinstance(s, Hyperrectangle) or not np.all(np.isneginf(s.lower)):
            raise ParameterError(
                "interpolation discrepancies are defined over one-sided "
                "rectangles {w : w <= y}"
            )


def interpolation_gap(design: DesignSpec, n: int, sigma: CovMatrix,
                      family: SetFamily, v_grid, R: int, seed: int,
                      workers: int | None = None,
                      exact_law: bool = True) -> InterpolationEstimate:
    """Max over interpolation weights and one-sided sets of the discrepancy
    between the interpolated statistic and its gaussian endpoint.

    The noise floor uses the total number of compared cells (sets times
    grid points), since the max runs over all of them.
    """
    v_grid = [float(v) for v in v_grid]
    if not v_grid:
        raise ParameterError("need a nonempty grid of interpolation weights")
    _check_gap_args(family, R)
    _require_lower_orthants(family)
    chol = robust_cholesky(sigma)
    per_v = []
    sup = 0.0
    for k, v in enumerate(v_grid):
        sub_seed = rng.mix64(seed, TAG_GRID + k)
        sampler_i = InterpolatedSampler(design, n, chol, v, exact_law)
        sampler_y = GaussianSumSampler(chol)
        counts_i = family_hit_counts(sampler_i, family, R,
                                     rng.mix64(sub_seed, TAG_FIRST), workers)
        counts_y = family_hit_counts(sampler_y, family, R,
                                     rng.mix64(sub_seed, TAG_SECOND), workers)
        est = _gap_from_counts(counts_i, counts_y, family, R, sub_seed,
                               ("interpolated", "gaussian"))
        per_v.append((v, est))
        sup = max(sup, est.sup_diff)
    floor = noise_floor(R, len(family) * len(v_grid))
    return InterpolationEstimate(sup_diff=sup, noise_floor=floor,
                                 per_v=tuple(per_v), R=R, seed=seed)
