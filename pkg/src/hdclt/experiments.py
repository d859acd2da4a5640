"""Study drivers: rate scans, the anti-concentration check, the smooth-max
sandwich check, and byte-stable report emission."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import rng, serialize
from .bounds import (
    BoundParams,
    gaussian_approx_bound,
    rate_terms,
    smoothing_parameter,
    tail_third_moment_gaussian,
)
from .datagen import DesignSpec, population_moments
from .errors import NotPositiveSemidefiniteError, ParameterError
from .geometry import sample_rectangles
from .montecarlo import (
    GaussianSumSampler,
    gaussian_approx_gap,
    _map_batches,
)
from .sums import CovMatrix, robust_cholesky

TAG_SCAN_FAMILY = 3


# ---------------------------------------------------------------------------
# rate scan
# ---------------------------------------------------------------------------

def dimension_rule(rule: dict, n: int) -> int:
    """Resolve the dimension for a sample size under a scan rule.

    Rules: {"rule": "fixed", "p": P}; {"rule": "power", "c": C, "coef": A}
    giving p = round(A * n^C); {"rule": "exp_power", "c": C, "coef": A}
    giving p = round(exp(A * n^C)).  Dimensions are floored at 3.
    """
    kind = rule.get("rule")
    if kind == "fixed":
        p = int(rule["p"])
    elif kind == "power":
        p = round(float(rule.get("coef", 1.0)) * n ** float(rule["c"]))
    elif kind == "exp_power":
        p = round(math.exp(float(rule.get("coef", 1.0)) * n ** float(rule["c"])))
    else:
        raise ParameterError(f"unknown dimension rule {kind!r}")
    return max(3, int(p))


@dataclass(frozen=True)
class ScanSpec:
    """A grid of (n, p) cells: the design template is re-dimensioned per cell.

    ``design`` is a design config without the 'p' entry (it is supplied by
    the rule).  ``family_K`` rectangles per cell; ``moment_R`` replications
    for the tail-moment Monte Carlo entering the closed-form bound.
    """

    design: dict
    n_grid: tuple
    p_rule: dict
    family_K: int
    R: int
    seed: int
    params: BoundParams | None = None
    moment_R: int = 10_000
    exact_law: bool = True

    def __post_init__(self):
        ns = tuple(int(n) for n in self.n_grid)
        if len(ns) < 1:
            raise ParameterError("n_grid must be nonempty")
        if list(ns) != sorted(set(ns)) or len(set(ns)) != len(ns):
            raise ParameterError("n_grid must be strictly increasing")
        if ns[0] < 4:
            raise ParameterError(f"every n must be at least 4, got {ns[0]}")
        if self.family_K < 1:
            raise ParameterError("family_K must be positive")
        object.__setattr__(self, "n_grid", ns)

    def to_config(self) -> dict:
        out = {
            "design": dict(self.design),
            "n_grid": list(self.n_grid),
            "p_rule": dict(self.p_rule),
            "family_K": self.family_K,
            "R": self.R,
            "seed": self.seed,
            "moment_R": self.moment_R,
            "exact_law": self.exact_law,
        }
        if self.params is not None:
            out["params"] = self.params.to_config()
        return out


@dataclass(frozen=True)
class ScanRow:
    n: int
    p: int
    rho_hat: float
    noise_floor: float
    D1: float
    main_bound: float
    censored: bool


@dataclass(frozen=True)
class ScanResult:
    """Scan rows plus the log-log decay slope over uncensored rows.

    Rows whose estimate sits at or below the noise floor are censored out
    of the fit rather than biasing the slope toward zero.  ``slope_logp``
    is reported when the dimension varies across the grid (slope of the
    log estimate against log log p), without asserting any exponent.
    """

    rows: tuple
    slope: float | None
    slope_se: float | None
    slope_logp: float | None
    spec: ScanSpec

    def to_config(self) -> dict:
        return {
            "rows": [
                {"n": r.n, "p": r.p, "rho_hat": r.rho_hat,
                 "noise_floor": r.noise_floor, "D1": r.D1,
                 "main_bound": r.main_bound, "censored": r.censored}
                for r in self.rows
            ],
            "slope": self.slope,
            "slope_se": self.slope_se,
            "slope_logp": self.slope_logp,
            "spec": self.spec.to_config(),
        }

    def csv_rows(self) -> tuple[list, list]:
        header = ["n", "p", "rho_hat", "noise_floor", "D1", "main_bound", "censored"]
        rows = [[r.n, r.p, r.rho_hat, r.noise_floor, r.D1, r.main_bound,
                 int(r.censored)] for r in self.rows]
        return header, rows


def _ls_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float | None]:
    xc = x - x.mean()
    slope = float((xc * (y - y.mean())).sum() / (xc * xc).sum())
    if len(x) >= 3:
        resid = y - y.mean() - slope * xc
        dof = len(x) - 2
        se = math.sqrt(float((resid * resid).sum()) / dof / float((xc * xc).sum()))
    else:
        se = None
    return slope, se


def rate_scan(spec: ScanSpec, workers: int | None = None) -> ScanResult:
    """Estimate the discrepancy at every (n, p) cell and fit its decay."""
    rows = []
    for idx, n in enumerate(spec.n_grid):
        p = dimension_rule(spec.p_rule, n)
        try:
            design = DesignSpec.from_config(dict(spec.design, p=p))
            moments = population_moments(design)
            cell_seed = rng.mix64(spec.seed, idx)
            sd = np.sqrt(np.diag(moments.sigma.matrix))
            # family seed depends on p only: equal-dimension cells share one
            # family, so decay across n is measured on the same sets
            family_seed = rng.mix64(rng.mix64(spec.seed, TAG_SCAN_FAMILY), p)
            family = sample_rectangles(p, spec.family_K, sd, family_seed)
            gap = gaussian_approx_gap(design, n, moments.sigma, family, spec.R,
                                      cell_seed, workers, spec.exact_law)
            params = spec.params or BoundParams(b=moments.b_lower, B_n=moments.B_n)
            terms = rate_terms(params.B_n, p, n)
            L = moments.L_n_population
            phi_used = max(1.0, smoothing_parameter(L, p, n, params.K2))
            m_y = tail_third_moment_gaussian(moments.sigma, n, phi_used,
                                             spec.moment_R, rng.mix64(cell_seed, 2))
            main = gaussian_approx_bound(L, m_y.value, p, n, params.K1)
        except ParameterError as exc:
            raise ParameterError(f"scan cell (n={n}, p={p}): {exc}") from exc
        except NotPositiveSemidefiniteError as exc:
            raise NotPositiveSemidefiniteError(
                f"scan cell (n={n}, p={p}): {exc}"
            ) from exc
        rows.append(ScanRow(
            n=n, p=p, rho_hat=gap.sup_diff, noise_floor=gap.noise_floor,
            D1=terms["D1"], main_bound=main,
            censored=gap.sup_diff <= gap.noise_floor,
        ))

    kept = [r for r in rows if not r.censored]
    slope = slope_se = slope_logp = None
    if len(kept) >= 2:
        x = np.log([r.n for r in kept])
        y = np.log([r.rho_hat for r in kept])
        slope, slope_se = _ls_slope(x, y)
        logp = np.log([math.log(r.p) for r in kept])
        if float(np.ptp(logp)) > 1e-12:
            slope_logp, _ = _ls_slope(logp, y)
    return ScanResult(rows=tuple(rows), slope=slope, slope_se=slope_se,
                      slope_logp=slope_logp, spec=spec)


# ---------------------------------------------------------------------------
# anti-concentration check (Nazarov's inequality)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NazarovRow:
    p: int
    a: float
    y_label: str
    diff_hat: float
    se: float
    ratio: float


@dataclass(frozen=True)
class NazarovResult:
    rows: tuple
    max_ratio: float
    R: int
    seed: int

    def to_config(self) -> dict:
        return {
            "rows": [
                {"p": r.p, "a": r.a, "y_label": r.y_label, "diff_hat": r.diff_hat,
                 "se": r.se, "ratio": r.ratio}
                for r in self.rows
            ],
            "max_ratio": self.max_ratio,
            "R": self.R,
            "seed": self.seed,
        }

    def csv_rows(self) -> tuple[list, list]:
        header = ["p", "a", "y_label", "diff_hat", "se", "ratio"]
        rows = [[r.p, r.a, r.y_label, r.diff_hat, r.se, r.ratio] for r in self.rows]
        return header, rows


def nazarov_check(sigma: CovMatrix, y_count: int, a_grid, R: int, seed: int,
                  workers: int | None = None) -> NazarovResult:
    """Orthant-increment check P(Y <= y + a) - P(Y <= y) against a*sqrt(log p).

    Anchors are coordinatewise equal quantile levels: y_j = Phi^{-1}(u) *
    sd_j for u on an even grid, covering the center and both tails.  The
    two orthant probabilities are estimated from the same draws, so each
    increment is the fraction of draws in the slab and is nonnegative by
    construction; the laws on the two sides coincide, which is what makes
    the pairing variance-safe here.
    """
    p = sigma.p
    if p < 3:
        raise ParameterError(f"anti-concentration check needs p >= 3, got {p}")
    if y_count < 1:
        raise ParameterError("need at least one anchor point")
    a_grid = [float(a) for a in a_grid]
    if not a_grid or any(a < 0 for a in a_grid):
        raise ParameterError("offsets must be nonnegative")
    if R < 1000:
        raise ParameterError(f"need R >= 1000, got {R!r}")
    diag = np.diag(sigma.matrix)
    if float(np.min(diag)) <= 0.0:
        raise ParameterError("anchor quantiles need positive coordinate variances")

    sd = np.sqrt(diag)
    levels = [(k + 1) / (y_count + 1) for k in range(y_count)]
    anchors = [float(ndtri(u)) * sd for u in levels]
    sampler = GaussianSumSampler(robust_cholesky(sigma))

    def work(start: int, count: int) -> np.ndarray:
        draws = sampler.draw(seed, start, count)
        counts = np.zeros((len(anchors), len(a_grid) + 1), dtype=np.int64)
        for k, y in enumerate(anchors):
            gap = np.max(draws - y, axis=1)
            counts[k, 0] = np.count_nonzero(gap <= 0.0)
            for j, a in enumerate(a_grid):
                counts[k, j + 1] = np.count_nonzero(gap <= a)
        return counts

    counts = np.sum(_map_batches(work, R, workers), axis=0)

    rows = []
    max_ratio = 0.0
    root_logp = math.sqrt(math.log(p))
    for k, u in enumerate(levels):
        base = counts[k, 0] / R
        for j, a in enumerate(a_grid):
            d = counts[k, j + 1] / R - base
            se = math.sqrt(max(d * (1.0 - d), 0.0) / R)
            ratio = d / (a * root_logp) if a > 0 else 0.0
            max_ratio = max(max_ratio, ratio)
            rows.append(NazarovRow(p=p, a=a, y_label=f"u={u:.6g}",
                                   diff_hat=d, se=se, ratio=ratio))
    return NazarovResult(rows=tuple(rows), max_ratio=max_ratio, R=R, seed=seed)


# ---------------------------------------------------------------------------
# smooth-max sandwich check
# ---------------------------------------------------------------------------

def smoothmax_gap(diffs: np.ndarray, beta: float) -> np.ndarray:
    """F_beta(w) - max_j(w_j - y_j) for rows of differences w - y.

    Max-shifted evaluation: the shifted exponentials are all at most 1, so
    the sum never overflows and the gap is exactly log(sum)/beta >= 0.
    """
    m = diffs.max(axis=-1, keepdims=True)
    return np.log(np.exp(beta * (diffs - m)).sum(axis=-1)) / beta


def smoothmax_check(beta_grid, p_grid, trials: int, seed: int) -> float:
    """Largest violation of 0 <= F_beta - max <= log(p)/beta over random and
    adversarial inputs; a correct implementation stays below 1e-12.

    Random rows are uniform in [-50, 50]; the adversarial rows are the
    all-equal pattern (saturates the upper bound), a one-dominant pattern
    (saturates the lower), and an alternating +-50 pattern.
    """
    beta_grid = [float(b) for b in beta_grid]
    p_grid = [int(p) for p in p_grid]
    if not beta_grid or any(b <= 0 for b in beta_grid):
        raise ParameterError("beta grid must hold positive values")
    if not p_grid or any(p < 1 for p in p_grid):
        raise ParameterError("p grid must hold positive dimensions")
    if trials < 1:
        raise ParameterError("need at least one trial")

    worst = -math.inf
    for bi, beta in enumerate(beta_grid):
        for pi, p in enumerate(p_grid):
            key = rng.mix64(seed, bi * 1000 + pi)
            keys = rng.mix64_array(key, np.arange(trials, dtype=np.uint64))
            d = 100.0 * rng.to_uniform(rng.word_grid(keys, p)) - 50.0
            adversarial = np.zeros((4, p))
            adversarial[1, 1:] = -100.0          # one dominant coordinate
            adversarial[2, :] = 50.0             # all equal, positive
            adversarial[3, ::2] = 50.0
            adversarial[3, 1::2] = -50.0         # alternating
            d = np.vstack([d, adversarial])
            gap = smoothmax_gap(d, beta)
            upper = math.log(p) / beta
            worst = max(worst, float(np.max(-gap)), float(np.max(gap - upper)))
    return worst


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def emit_report(result, path: str, format: str = "json") -> None:
    """Write a result byte-stably; rerunning writes identical bytes.

    ``result`` is a mapping or any object with ``to_config()``; csv output
    additionally needs ``csv_rows()``.
    """
    if format == "json":
        payload = result if isinstance(result, dict) else result.to_config()
        text = serialize.dumps(payload)
    elif format == "csv":
        if not hasattr(result, "csv_rows"):
            raise ParameterError(
                f"{type(result).__name__} has no tabular form; use json"
            )
        header, rows = result.csv_rows()
        text = serialize.csv_table(header, rows)
    else:
        raise ParameterError(f"unknown report format {format!r}")
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
