"""Moment functionals and closed-form rate quantities for the sum statistics.

The rate formulas are templates with explicit multiplicative constants K1,
K2 (default 1): the guarantees behind them only assert existence of
constants depending on the variance floor, so reports always surface the
constants used rather than pretending to a certified envelope.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .datagen import Dataset, DesignSpec, population_moments, sample_dataset
from .errors import ParameterError
from .sums import (
    CovMatrix,
    empirical_covariance,
    gaussian_draw_batch,
    multiplier_draw_batch,
    robust_cholesky,
)

_BATCH = 1 << 13


@dataclass(frozen=True)
class BoundParams:
    """Constants entering the rate formulas.

    ``alpha`` is a confidence level and must lie in (0, 1/e); ``q`` is a
    polynomial moment order above 2.
    """

    b: float
    B_n: float
    K1: float = 1.0
    K2: float = 1.0
    q: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        for name in ("b", "B_n", "K1", "K2"):
            v = getattr(self, name)
            if not (v > 0.0) or not math.isfinite(v):
                raise ParameterError(f"params.{name} must be positive, got {v!r}")
        if self.q is not None and not (self.q > 2.0):
            raise ParameterError(f"params.q must exceed 2, got {self.q!r}")
        if self.alpha is not None and not (0.0 < self.alpha < 1.0 / math.e):
            raise ParameterError(
                f"params.alpha must lie in (0, 1/e), got {self.alpha!r}"
            )

    def to_config(self) -> dict:
        out = {"b": self.b, "B_n": self.B_n, "K1": self.K1, "K2": self.K2}
        if self.q is not None:
            out["q"] = self.q
        if self.alpha is not None:
            out["alpha"] = self.alpha
        return out


@dataclass(frozen=True)
class MomentEstimate:
    """A Monte Carlo moment with its standard error and replication count."""

    value: float
    se: float
    R: int


@dataclass(frozen=True)
class BoundReport:
    """Every rate quantity of one dataset or design, with the constants used."""

    provenance: str  # "population" | "empirical"
    params: BoundParams
    n: int
    p: int
    L_n: float
    M_x: float
    M_y: float
    M_y_se: float
    phi_n: float
    phi_used: float
    main_bound: float
    D1: float | None = None
    D2q: float | None = None
    D1_alpha: float | None = None
    D2q_alpha: float | None = None
    delta_nr: float | None = None
    moment_R: int = 0

    def to_config(self) -> dict:
        out = {
            "provenance": self.provenance,
            "params": self.params.to_config(),
            "n": self.n,
            "p": self.p,
            "L_n": self.L_n,
            "M_x": self.M_x,
            "M_y": self.M_y,
            "M_y_se": self.M_y_se,
            "phi_n": self.phi_n,
            "phi_used": self.phi_used,
            "main_bound": self.main_bound,
            "moment_R": self.moment_R,
        }
        for key in ("D1", "D2q", "D1_alpha", "D2q_alpha", "delta_nr"):
            v = getattr(self, key)
            if v is not None:
                out[key] = v
        return out


def _as_matrix(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.values
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ParameterError("expected a dataset or an (n, p) matrix")
    return m


def max_third_moment(data) -> float:
    """Largest per-coordinate mean cubed absolute deviation from the column mean."""
    x = _as_matrix(data)
    if x.shape[0] < 2:
        raise ParameterError("third-moment maximum needs n >= 2")
    centered = np.abs(x - x.mean(axis=0))
    return float(np.max(np.mean(centered**3, axis=0)))


def truncation_threshold(phi: float, n: int, p: int) -> float:
    """Row-maximum cutoff sqrt(n) / (4 phi log p) of the tail moments."""
    if not (phi >= 1.0):
        raise ParameterError(f"phi must be at least 1, got {phi!r}")
    if p < 3:
        raise ParameterError(f"tail moments need p >= 3, got {p}")
    return math.sqrt(n) / (4.0 * phi * math.log(p))


def tail_third_moment(data, phi: float) -> float:
    """Mean over rows of the cubed centered row maximum, kept above the cutoff."""
    x = _as_matrix(data)
    tau = truncation_threshold(phi, x.shape[0], x.shape[1])
    row_max = np.max(np.abs(x - x.mean(axis=0)), axis=1)
    return float(np.mean(np.where(row_max > tau, row_max**3, 0.0)))


def _tail_cube_stats(draws: np.ndarray, tau: float) -> tuple[float, float, int]:
    g = np.max(np.abs(draws), axis=1)
    vals = np.where(g > tau, g**3, 0.0)
    return float(vals.sum()), float((vals**2).sum()), vals.shape[0]


def _moment_from_sums(total: float, total_sq: float, count: int) -> MomentEstimate:
    mean = total / count
    if count > 1:
        var = max(0.0, (total_sq - count * mean * mean) / (count - 1))
        se = math.sqrt(var / count)
    else:
        se = 0.0
    return MomentEstimate(value=mean, se=se, R=count)


def tail_third_moment_bootstrap(dataset: Dataset, phi: float, R: int,
                                seed: int) -> MomentEstimate:
    """Monte Carlo tail third moment of the multiplier-bootstrap maximum.

    Averages the cubed draw maximum above the cutoff over R multiplier
    draws of the given dataset; replication r uses substream mix64(seed, r).
    """
    if R < 1:
        raise ParameterError(f"need at least one replication, got {R!r}")
    tau = truncation_threshold(phi, dataset.n, dataset.p)
    total = total_sq = 0.0
    done = 0
    while done < R:
        b = min(_BATCH, R - done)
        draws = multiplier_draw_batch(dataset, seed, done, b)
        s, s2, _ = _tail_cube_stats(draws, tau)
        total += s
        total_sq += s2
        done += b
    return _moment_from_sums(total, total_sq, R)


def tail_third_moment_gaussian(sigma: CovMatrix, n: int, phi: float, R: int,
                               seed: int) -> MomentEstimate:
    """Monte Carlo tail third moment of the N(0, sigma) coordinate maximum."""
    if R < 1:
        raise ParameterError(f"need at least one replication, got {R!r}")
    tau = truncation_threshold(phi, n, sigma.p)
    chol = robust_cholesky(sigma)
    total = total_sq = 0.0
    done = 0
    while done < R:
        b = min(_BATCH, R - done)
        draws = gaussian_draw_batch(chol, seed, done, b)
        s, s2, _ = _tail_cube_stats(draws, tau)
        total += s
        total_sq += s2
        done += b
    return _moment_from_sums(total, total_sq, R)


def _check_rate_args(p: int, n: int) -> None:
    if p < 3:
        raise ParameterError(f"rate formulas need p >= 3, got {p}")
    if n < 4:
        raise ParameterError(f"rate formulas need n >= 4, got {n}")


def smoothing_parameter(L_bar: float, p: int, n: int, K2: float = 1.0) -> float:
    """K2 * (L^2 log^4(p) / n)^(-1/6): the inverse-bandwidth of the smoothing."""
    _check_rate_args(p, n)
    if not (L_bar > 0.0):
        raise ParameterError(f"third-moment scale must be positive, got {L_bar!r}")
    return K2 * (L_bar**2 * math.log(p) ** 4 / n) ** (-1.0 / 6.0)


def gaussian_approx_bound(L_bar: float, M_n: float, p: int, n: int,
                          K1: float = 1.0) -> float:
    """K1 * [ (L^2 log^7(p) / n)^(1/6) + M_n / L ]."""
    _check_rate_args(p, n)
    if not (L_bar > 0.0):
        raise ParameterError(f"third-moment scale must be positive, got {L_bar!r}")
    if M_n < 0.0:
        raise ParameterError(f"tail moment must be nonnegative, got {M_n!r}")
    return K1 * ((L_bar**2 * math.log(p) ** 7 / n) ** (1.0 / 6.0) + M_n / L_bar)


def rate_terms(B_n: float, p: int, n: int, q: float | None = None,
               alpha: float | None = None) -> dict:
    """The four moment-condition rate terms, keyed D1, D2q, D1_alpha, D2q_alpha.

    D2q needs q; the alpha variants need alpha (D2q_alpha needs both).
    Absent inputs simply omit the corresponding keys.
    """
    _check_rate_args(p, n)
    if not (B_n > 0.0):
        raise ParameterError(f"B_n must be positive, got {B_n!r}")
    if q is not None and not (q > 2.0):
        raise ParameterError(f"q must exceed 2, got {q!r}")
    if alpha is not None and not (0.0 < alpha < 1.0 / math.e):
        raise ParameterError(f"alpha must lie in (0, 1/e), got {alpha!r}")
    lpn = math.log(p * n)
    out = {"D1": (B_n**2 * lpn**7 / n) ** (1.0 / 6.0)}
    if q is not None:
        out["D2q"] = (B_n**2 * lpn**3 / n ** (1.0 - 2.0 / q)) ** (1.0 / 3.0)
    if alpha is not None:
        out["D1_alpha"] = (
            B_n**2 * lpn**5 * math.log(1.0 / alpha) ** 2 / n
        ) ** (1.0 / 6.0)
        if q is not None:
            out["D2q_alpha"] = (
                B_n**2 * lpn**3 / (alpha ** (2.0 / q) * n ** (1.0 - 2.0 / q))
            ) ** (1.0 / 3.0)
    return out


def max_covariance_gap(sigma_hat: CovMatrix, sigma: CovMatrix) -> float:
    """Largest entrywise absolute difference of two covariance matrices."""
    if sigma_hat.p != sigma.p:
        raise ParameterError(
            f"covariance dimensions differ: {sigma_hat.p} vs {sigma.p}"
        )
    return float(np.max(np.abs(sigma_hat.matrix - sigma.matrix)))


def family_covariance_gap(sigma_hat: CovMatrix, sigma: CovMatrix, family) -> float:
    """Largest |v1' (S_hat - S) v2| over facet-normal pairs of each polytope."""
    from .geometry import Polytope

    if sigma_hat.p != sigma.p:
        raise ParameterError(
            f"covariance dimensions differ: {sigma_hat.p} vs {sigma.p}"
        )
    delta = sigma_hat.matrix - sigma.matrix
    worst = 0.0
    for s in family.sets:
        if not isinstance(s, Polytope):
            raise ParameterError("family members must be polytopes")
        proj = s.normals @ delta @ s.normals.T
        worst = max(worst, float(np.max(np.abs(proj))))
    return worst


def orlicz_norm(samples, alpha: float) -> float:
    """Plug-in exponential-moment norm: the smallest scale at which the
    empirical mean of exp((|x|/scale)^alpha) drops to 2.

    Bisection to 1e-9 relative tolerance; all-zero samples give 0.
    """
    if not (alpha > 0.0):
        raise ParameterError(f"alpha must be positive, got {alpha!r}")
    x = np.abs(np.asarray(samples, dtype=np.float64).ravel())
    if x.size == 0:
        raise ParameterError("need at least one sample")
    top = float(np.max(x))
    if top == 0.0:
        return 0.0

    def feasible(lam: float) -> bool:
        with np.errstate(over="ignore"):
            return float(np.mean(np.exp((x / lam) ** alpha))) <= 2.0

    hi = top / math.log(2.0) ** (1.0 / alpha)  # always feasible
    lo = hi
    while feasible(lo):
        lo /= 2.0
        if lo < 1e-300:
            return 0.0
    while hi - lo > 1e-9 * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------

def _phi_pair(L_bar: float, p: int, n: int, K2: float) -> tuple[float, float]:
    # the tail moments are defined for phi >= 1; below that the bound is
    # vacuous, so they are evaluated at 1 while phi_n is reported as computed
    phi = smoothing_parameter(L_bar, p, n, K2)
    return phi, max(1.0, phi)


def report_from_dataset(dataset: Dataset, params: BoundParams,
                        moment_R: int = 10_000, seed: int = 0,
                        sigma: CovMatrix | None = None) -> BoundReport:
    """Empirical-analog report: centered moments of one observed matrix."""
    n, p = dataset.n, dataset.p
    L = max_third_moment(dataset)
    phi_n, phi_used = _phi_pair(L, p, n, params.K2)
    m_x = tail_third_moment(dataset, phi_used)
    m_y = tail_third_moment_bootstrap(dataset, phi_used, moment_R,
                                      rng.mix64(seed, 2))
    main = gaussian_approx_bound(L, m_x + m_y.value, p, n, params.K1)
    terms = rate_terms(params.B_n, p, n, params.q, params.alpha)
    delta = None
    if sigma is not None:
        delta = max_covariance_gap(empirical_covariance(dataset), sigma)
    return BoundReport(
        provenance="empirical", params=params, n=n, p=p, L_n=L,
        M_x=m_x, M_y=m_y.value, M_y_se=m_y.se,
        phi_n=phi_n, phi_used=phi_used, main_bound=main,
        D1=terms.get("D1"), D2q=terms.get("D2q"),
        D1_alpha=terms.get("D1_alpha"), D2q_alpha=terms.get("D2q_alpha"),
        delta_nr=delta, moment_R=m_y.R,
    )


def _population_tail_x(design: DesignSpec, n: int, tau: float, R: int,
                       seed: int) -> MomentEstimate:
    # bounded designs are exactly zero once the cutoff clears the bound
    bound = None
    if design.kind == "rademacher":
        bound = 1.0
    elif design.kind == "log_concave" and design.variant == "uniform":
        bound = math.sqrt(3.0) if design.standardize else math.sqrt(3.0) * design.scale
    if bound is not None and bound <= tau:
        return MomentEstimate(value=0.0, se=0.0, R=0)
    rows = sample_dataset(design, max(2, R), seed).values
    s, s2, cnt = _tail_cube_stats(rows, tau)
    return _moment_from_sums(s, s2, cnt)


def report_from_design(design: DesignSpec, n: int,
                       params: BoundParams | None = None,
                       moment_R: int = 10_000, seed: int = 0) -> BoundReport:
    """Population report from a design's analytic moments.

    The gaussian-side tail moment is always Monte Carlo; the data-side one
    is analytic zero for bounded designs below the cutoff and Monte Carlo
    over fresh rows otherwise.
    """
    moments = population_moments(design)
    if params is None:
        params = BoundParams(b=moments.b_lower, B_n=moments.B_n)
    p = design.p
    L = moments.L_n_population
    phi_n, phi_used = _phi_pair(L, p, n, params.K2)
    tau = truncation_threshold(phi_used, n, p)
    m_x = _population_tail_x(design, n, tau, moment_R, rng.mix64(seed, 1))
    m_y = tail_third_moment_gaussian(moments.sigma, n, phi_used, moment_R,
                                     rng.mix64(seed, 2))
    main = gaussian_approx_bound(L, m_x.value + m_y.value, p, n, params.K1)
    terms = rate_terms(params.B_n, p, n, params.q, params.alpha)
    return BoundReport(
        provenance="population", params=params, n=n, p=p, L_n=L,
        M_x=m_x.value, M_y=m_y.value, M_y_se=m_y.se,
        phi_n=phi_n, phi_used=phi_used, main_bound=main,
        D1=terms.get("D1"), D2q=terms.get("D2q"),
        D1_alpha=terms.get("D1_alpha"), D2q_alpha=terms.get("D2q_alpha"),
        delta_nr=None, moment_R=moment_R,
    )
