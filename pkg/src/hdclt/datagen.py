"""Synthetic designs for centered independent rows with known moments.

A design describes the common law of the rows of an ``n x p`` data matrix.
Five families are supported, all centered:

* ``rademacher``      -- independent signs, bounded by 1;
* ``trunc_exp``       -- symmetrized exponential with sub-exponential tails,
                         scaled so ``E exp(|X|/B_n) = 2`` exactly;
* ``heavy_tail``      -- symmetrized Pareto with polynomial tails, scaled so
                         ``E[(max_j |X_j| / B_n)^q] = 1.8`` (10% margin below
                         the admissible ceiling of 2);
* ``gaussian``        -- exact multivariate normal with an identity,
                         equicorrelated or AR(1) correlation structure;
* ``log_concave``     -- a log-concave family: either the gaussian variant
                         above or a uniform on a centered cube.

``population_moments`` reports the analytic per-coordinate moments and the
moment-condition flags of a design, so that empirical checks have an exact
reference.  Row ``i`` of a sampled matrix is a pure function of
``mix64(seed, i)`` (see :mod:`hdclt.rng`), which makes generation
order-independent and safe to parallelize.
"""
from __future__ import annotations

import csv
import functools
import io
import itertools
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from . import rng
from .errors import ParameterError

_GAUSS_THIRD = 2.0 * math.sqrt(2.0 / math.pi)  # E|N(0,1)|^3

DESIGN_KINDS = ("rademacher", "trunc_exp", "heavy_tail", "gaussian", "log_concave")
COVARIANCE_KINDS = ("identity", "equicorrelated", "ar1")

# Fixed internal seed for the coordinate-subset sample in verify_conditions.
_SUBSET_SEED = 0x5EED5EED
_SUBSET_SAMPLE = 10_000
_EXHAUSTIVE_LIMIT = 100_000

_MAGIC = b"HDCB"
_VERSION = 1


@dataclass(frozen=True)
class CovarianceModel:
    """Correlation structure of a gaussian design; unit diagonal throughout."""

    kind: str = "identity"
    r: float | None = None

    def __post_init__(self):
        if self.kind not in COVARIANCE_KINDS:
            raise ParameterError(f"unknown covariance model {self.kind!r}")
        if self.kind == "identity":
            if self.r is not None:
                raise ParameterError("identity covariance takes no parameter r")
        else:
            if self.r is None or not (0.0 < self.r < 1.0):
                raise ParameterError(
                    f"covariance model {self.kind!r} needs r in (0, 1), got {self.r!r}"
                )

    def matrix(self, p: int) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(p)
        if self.kind == "equicorrelated":
            return (1.0 - self.r) * np.eye(p) + self.r * np.ones((p, p))
        idx = np.arange(p)
        return self.r ** np.abs(idx[:, None] - idx[None, :])

    def to_config(self) -> dict:
        out = {"model": self.kind}
        if self.r is not None:
            out["r"] = self.r
        return out

    @staticmethod
    def from_config(cfg: dict) -> "CovarianceModel":
        if not isinstance(cfg, dict) or "model" not in cfg:
            raise ParameterError("covariance config must be {'model': ..., [...]}")
        return CovarianceModel(kind=cfg["model"], r=cfg.get("r"))


IDENTITY = CovarianceModel("identity")


@dataclass(frozen=True)
class DesignSpec:
    """Parameters of a row distribution.

    ``scale`` is the tail scale B_n for ``trunc_exp`` and ``heavy_tail`` and
    the coordinate standard deviation for the uniform ``log_concave``
    variant; the sign/gaussian designs have no free scale.  ``tail_index``
    is the polynomial-moment order q of the heavy-tailed family and must
    exceed 4 so that fourth moments exist.  ``standardize`` rescales the
    coordinates to unit variance (and the reported scale constants along
    with them).
    """

    kind: str
    p: int
    covariance: CovarianceModel = IDENTITY
    scale: float = 1.0
    tail_index: float | None = None
    variant: str | None = None
    standardize: bool = False

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise ParameterError(f"unknown design kind {self.kind!r}")
        if not isinstance(self.p, int) or self.p < 3:
            raise ParameterError(f"design dimension p must be an integer >= 3, got {self.p!r}")
        if not (self.scale > 0.0) or not math.isfinite(self.scale):
            raise ParameterError(f"design scale must be positive, got {self.scale!r}")
        gaussian_like = self.kind == "gaussian" or (
            self.kind == "log_concave" and self.variant in (None, "gaussian")
        )
        if not gaussian_like and self.covariance.kind != "identity":
            raise ParameterError(
                f"design {self.kind!r} supports only independent coordinates"
            )
        if self.kind == "heavy_tail":
            if self.tail_index is None or not (self.tail_index > 4.0):
                raise ParameterError(
                    f"heavy_tail needs tail_index q > 4, got {self.tail_index!r}"
                )
        elif self.tail_index is not None:
            raise ParameterError(f"design {self.kind!r} takes no tail_index")
        if self.kind == "log_concave":
            if self.variant not in ("gaussian", "uniform"):
                raise ParameterError(
                    "log_concave needs variant 'gaussian' or 'uniform', "
                    f"got {self.variant!r}"
                )
        elif self.variant is not None:
            raise ParameterError(f"design {self.kind!r} takes no variant")
        if self.kind in ("rademacher", "gaussian") and self.scale != 1.0:
            raise ParameterError(f"design {self.kind!r} has a fixed scale of 1")
        if self.kind == "log_concave" and self.variant == "gaussian" and self.scale != 1.0:
            raise ParameterError("gaussian log_concave variant has a fixed scale of 1")

    def to_config(self) -> dict:
        out = {
            "kind": self.kind,
            "p": self.p,
            "covariance": self.covariance.to_config(),
            "scale": self.scale,
            "standardize": self.standardize,
        }
        if self.tail_index is not None:
            out["tail_index"] = self.tail_index
        if self.variant is not None:
            out["variant"] = self.variant
        return out

    @staticmethod
    def from_config(cfg: dict) -> "DesignSpec":
        if not isinstance(cfg, dict):
            raise ParameterError("design config must be a mapping")
        known = {"kind", "p", "covariance", "scale", "tail_index", "variant", "standardize"}
        extra = set(cfg) - known
        if extra:
            raise ParameterError(f"unknown design keys: {sorted(extra)}")
        if "kind" not in cfg or "p" not in cfg:
            raise ParameterError("design config needs at least 'kind' and 'p'")
        cov = cfg.get("covariance")
        return DesignSpec(
            kind=cfg["kind"],
            p=int(cfg["p"]),
            covariance=CovarianceModel.from_config(cov) if cov is not None else IDENTITY,
            scale=float(cfg.get("scale", 1.0)),
            tail_index=(None if cfg.get("tail_index") is None else float(cfg["tail_index"])),
            variant=cfg.get("variant"),
            standardize=bool(cfg.get("standardize", False)),
        )


@dataclass(frozen=True)
class Dataset:
    """An observed matrix together with the design and seed that produced it.

    ``design`` and ``seed`` are ``None`` for matrices loaded from files or
    constructed ad hoc; downstream statistics only need ``values``.
    """

    values: np.ndarray
    design: DesignSpec | None = None
    seed: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ParameterError(f"dataset values must be 2-d, got shape {v.shape}")
        if v.shape[0] < 2:
            raise ParameterError(f"dataset needs n >= 2 rows, got {v.shape[0]}")
        if v.shape[1] < 1:
            raise ParameterError("dataset needs at least one column")
        if not np.all(np.isfinite(v)):
            raise ParameterError("dataset values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MomentReport:
    """Analytic per-coordinate moments of a design and its condition flags.

    ``condition_flags`` maps each moment condition to "holds", "fails" or
    "not-applicable", evaluated at the reported ``B_n``.  ``e1_value`` is
    ``E exp(|X_j| / B_n)`` (``inf`` for polynomial tails) and ``e2_value``
    is ``E[(max_j |X_j| / B_n)^q]`` when a tail order q applies.
    """

    b_lower: float
    B_n: float
    L_n_population: float
    fourth_moment_max: float
    sigma: "object"  # CovMatrix; typed loosely to avoid an import cycle
    condition_flags: dict
    tail_index: float | None = None
    e1_value: float | None = None
    e2_value: float | None = None
    coordinate_sd: float = 1.0
    notes: tuple = ()


@functools.lru_cache(maxsize=None)
def _pareto_max_moment(p: int, shape: float, order: float) -> float:
    """E[(max of p iid Pareto(shape))^order] for order < shape.

    Computed as 1 + (order/shape) * Int_0^1 x^(-order/shape) g(x) dx with
    g(x) = (1 - (1-x)^p) / x, using an algebraic-weight quadrature for the
    endpoint singularity.
    """
    if not order < shape:
        raise ParameterError("max-moment order must be below the Pareto shape")
    ratio = order / shape

    def g(x):
        if x < 1e-12:
            return float(p)
        if x >= 1.0:
            return 1.0
        return -math.expm1(p * math.log1p(-x)) / x

    val, _ = quad(g, 0.0, 1.0, weight="alg", wvar=(-ratio, 0.0), limit=200)
    return 1.0 + ratio * val


def _heavy_tail_params(design: DesignSpec) -> tuple[float, float, float]:
    """(pareto shape, scale multiplier c, E[(max |X|/B)^q]) of a heavy design.

    The Pareto shape is q+1: at shape exactly q the q-th max-moment is
    infinite, while shape q+1 keeps moments up to order q finite so the
    polynomial-tail condition can be pinned at 90% of its ceiling.
    """
    q = design.tail_index
    a = q + 1.0
    target = 1.8
    emax = _pareto_max_moment(design.p, a, q)
    c = design.scale * (target / emax) ** (1.0 / q)
    return a, c, target


def _base_moments(design: DesignSpec) -> dict:
    """Unstandardized per-coordinate moments; coordinates share one law."""
    if design.kind == "rademacher":
        return dict(var=1.0, third=1.0, fourth=1.0, B=1.0, bound=1.0)
    if design.kind == "trunc_exp":
        lam = design.scale / 2.0
        return dict(
            var=2.0 * lam**2, third=6.0 * lam**3, fourth=24.0 * lam**4,
            B=design.scale, bound=None,
        )
    if design.kind == "heavy_tail":
        a, c, _ = _heavy_tail_params(design)
        return dict(
            var=c**2 * a / (a - 2.0),
            third=c**3 * a / (a - 3.0),
            fourth=c**4 * a / (a - 4.0),
            B=design.scale, bound=None,
        )
    if design.kind == "gaussian" or design.variant == "gaussian":
        return dict(var=1.0, third=_GAUSS_THIRD, fourth=3.0, B=math.sqrt(3.0), bound=None)
    # uniform cube with sd = scale
    h = math.sqrt(3.0) * design.scale
    third = h**3 / 4.0
    fourth = h**4 / 5.0
    return dict(var=design.scale**2, third=third, fourth=fourth,
                B=max(third, math.sqrt(fourth)), bound=h)


def _exp_moment(design: DesignSpec, B: float, sd: float) -> float:
    """E exp(|X_j| / B) after any standardization (division by sd)."""
    if design.kind == "rademacher":
        return math.exp(1.0 / (B * sd))
    if design.kind == "trunc_exp":
        lam = design.scale / 2.0
        t = 1.0 / (B * sd)
        return math.inf if lam * t >= 1.0 else 1.0 / (1.0 - lam * t)
    if design.kind == "heavy_tail":
        return math.inf
    if design.kind == "gaussian" or design.variant == "gaussian":
        t = 1.0 / (B * sd)
        return 2.0 * math.exp(t * t / 2.0) * float(ndtr(t))
    h = math.sqrt(3.0) * design.scale
    t = 1.0 / (B * sd)
    return math.expm1(h * t) / (h * t)


def population_moments(design: DesignSpec) -> MomentReport:
    """Analytic moments and moment-condition flags of a design."""
    from .sums import CovMatrix

    base = _base_moments(design)
    sd = math.sqrt(base["var"]) if design.standardize else 1.0
    var = base["var"] / sd**2
    third = base["third"] / sd**3
    fourth = base["fourth"] / sd**4
    B = base["B"] / sd
    bound = None if base["bound"] is None else base["bound"] / sd

    e1 = _exp_moment(design, B, sd)
    e2 = None
    notes: tuple = ()
    if design.kind == "heavy_tail":
        _, _, e2 = _heavy_tail_params(design)
        notes = (
            "heavy_tail realizes the polynomial-tail condition with a "
            "symmetrized Pareto of shape q+1, scaled to a max-moment of 1.8",
        )

    tol = 1e-12
    flags = {
        "M.1": "holds" if var > 0.0 else "fails",
        "M.2": "holds" if (third <= B + tol and fourth <= B**2 + tol) else "fails",
        "E.1": "holds" if e1 <= 2.0 + 1e-9 else "fails",
    }
    if e2 is not None:
        flags["E.2"] = "holds" if e2 <= 2.0 + tol else "fails"
    elif bound is not None and bound <= B + tol:
        flags["E.2"] = "holds"  # bounded by B, so every moment order passes
    else:
        flags["E.2"] = "not-applicable"

    sigma = var * design.covariance.matrix(design.p)
    return MomentReport(
        b_lower=var,
        B_n=B,
        L_n_population=third,
        fourth_moment_max=fourth,
        sigma=CovMatrix(sigma, flavor="population"),
        condition_flags=flags,
        tail_index=design.tail_index,
        e1_value=e1,
        e2_value=e2,
        coordinate_sd=math.sqrt(base["var"]) / sd,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def words_per_row(design: DesignSpec) -> int:
    """Number of 64-bit stream words one row consumes."""
    if design.kind == "rademacher":
        return (design.p + 63) // 64
    if design.covariance.kind == "equicorrelated":
        return design.p + 1
    return design.p


def values_from_row_keys(design: DesignSpec, row_keys: np.ndarray) -> np.ndarray:
    """Realize rows from their stream keys; output shape is ``row_keys.shape + (p,)``.

    This is the single definition of every design's transform; batched
    samplers call it with a matrix of keys and get bit-identical rows to
    one-at-a-time generation.
    """
    p = design.p
    if design.kind == "rademacher":
        w = rng.word_grid(row_keys, words_per_row(design))
        bits = np.unpackbits(
            np.ascontiguousarray(w).view(np.uint8), axis=-1, bitorder="little"
        )[..., :p]
        return 1.0 - 2.0 * bits.astype(np.float64)

    if design.kind == "trunc_exp":
        u = rng.to_uniform(rng.word_grid(row_keys, p))
        v = 2.0 * u - 1.0
        lam = design.scale / 2.0
        x = -lam * np.sign(v) * np.log1p(-np.abs(v))
    elif design.kind == "heavy_tail":
        u = rng.to_uniform(rng.word_grid(row_keys, p))
        v = 2.0 * u - 1.0
        a, c, _ = _heavy_tail_params(design)
        x = c * np.sign(v) * np.abs(v) ** (-1.0 / a)
    elif design.kind == "log_concave" and design.variant == "uniform":
        u = rng.to_uniform(rng.word_grid(row_keys, p))
        h = math.sqrt(3.0) * design.scale
        x = h * (2.0 * u - 1.0)
    else:  # gaussian, or the gaussian log-concave variant
        cov = design.covariance
        if cov.kind == "identity":
            x = rng.to_normal(rng.word_grid(row_keys, p))
        elif cov.kind == "equicorrelated":
            z = rng.to_normal(rng.word_grid(row_keys, p + 1))
            x = math.sqrt(cov.r) * z[..., :1] + math.sqrt(1.0 - cov.r) * z[..., 1:]
        else:  # ar1: stationary recursion, exact for the r^|i-j| covariance
            z = rng.to_normal(rng.word_grid(row_keys, p))
            x = np.empty_like(z)
            x[..., 0] = z[..., 0]
            c = math.sqrt(1.0 - cov.r**2)
            for j in range(1, p):
                x[..., j] = cov.r * x[..., j - 1] + c * z[..., j]

    if design.standardize:
        x = x / math.sqrt(_base_moments(design)["var"])
    return x


def sample_dataset(design: DesignSpec, n: int, seed: int) -> Dataset:
    """Draw an ``n x p`` matrix; row i is a pure function of mix64(seed, i)."""
    if not isinstance(n, int) or n < 2:
        raise ParameterError(f"need n >= 2 rows, got {n!r}")
    row_keys = rng.mix64_array(seed, np.arange(n, dtype=np.uint64))
    values = values_from_row_keys(design, row_keys)
    return Dataset(values=values, design=design, seed=seed)


# ---------------------------------------------------------------------------
# condition checks
# ---------------------------------------------------------------------------

def _subset_min_eigs(sigma: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    sub = sigma[subsets[:, :, None], subsets[:, None, :]]
    return np.linalg.eigvalsh(sub)[:, 0]


def verify_conditions(report: MomentReport, s: int) -> dict:
    """Flag the variance-floor conditions of a design, including the sparse one.

    The sparse variant requires a positive variance floor for every unit
    vector supported on at most ``s`` coordinates, which equals the minimum
    eigenvalue over all ``s x s`` principal submatrices of the covariance.
    All subsets are enumerated when there are at most 100000 of them;
    otherwise 10000 subsets are sampled from a fixed internal stream and
    the result is marked ``sampled``.
    """
    sigma = np.asarray(report.sigma.matrix, dtype=np.float64)
    p = sigma.shape[0]
    if not (1 <= s <= p):
        raise ParameterError(f"subset size s must be in [1, {p}], got {s}")

    tol = 1e-10 * max(1.0, float(np.max(np.diag(sigma))))
    b1 = float(np.min(np.diag(sigma)))
    required_B = max(report.L_n_population, math.sqrt(report.fourth_moment_max))

    total = math.comb(p, s)
    if s == 1:
        b_sparse, sampled = b1, False
    elif total <= _EXHAUSTIVE_LIMIT:
        subsets = np.array(list(itertools.combinations(range(p), s)), dtype=np.intp)
        b_sparse = float(np.min(_subset_min_eigs(sigma, subsets)))
        sampled = False
    else:
        keys = rng.mix64_array(_SUBSET_SEED, np.arange(_SUBSET_SAMPLE, dtype=np.uint64))
        u = rng.to_uniform(rng.word_grid(keys, p))
        subsets = np.argpartition(u, s - 1, axis=1)[:, :s].astype(np.intp)
        b_sparse = float(np.min(_subset_min_eigs(sigma, subsets)))
        sampled = True

    return {
        "M.1": {"status": "holds" if b1 > tol else "fails", "constant": b1},
        "M.2": {
            "status": "holds" if required_B <= report.B_n + 1e-12 else "fails",
            "constant": required_B,
        },
        "M.1''": {
            "status": "holds" if b_sparse > tol else "fails",
            "constant": b_sparse,
            "s": s,
            "sampled": sampled,
        },
    }


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_dataset(dataset: Dataset, path: str, fmt: str | None = None) -> None:
    """Persist a dataset; ``fmt`` is 'bin' or 'csv' (default from extension)."""
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "bin")
    if fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _VERSION))
            fh.write(struct.pack("<QQ", dataset.n, dataset.p))
            fh.write(np.ascontiguousarray(dataset.values, dtype="<f8").tobytes())
    elif fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{j + 1}" for j in range(dataset.p)])
        for row in dataset.values:
            writer.writerow([f"{v:.17g}" for v in row])
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        raise ParameterError(f"unknown dataset format {fmt!r}")


def read_dataset(path: str) -> Dataset:
    """Load a dataset written by :func:`write_dataset` (either format)."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head == _MAGIC:
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _VERSION:
                raise ParameterError(f"unsupported dataset version {version}")
            n, p = struct.unpack("<QQ", fh.read(16))
            data = np.frombuffer(fh.read(8 * n * p), dtype="<f8").reshape(n, p)
            return Dataset(values=data.astype(np.float64))
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or not header[0].startswith("x"):
            raise ParameterError(f"{path} is neither a binary nor a csv dataset")
        rows = [[float(v) for v in row] for row in reader if row]
    return Dataset(values=np.asarray(rows, dtype=np.float64))
