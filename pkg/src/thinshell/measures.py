"""Probability measures: atom clouds, sampling families, grid discretizations,
moments and the exact quadratic transport cost."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, sparse
from scipy.special import logsumexp

from .errors import (
    CapabilityError,
    ConfigurationError,
    DegenerateMeasureError,
    InputError,
    PreconditionError,
)
from . import rng as _rng

SQRT3 = float(np.sqrt(3.0))
EIG_FLOOR = 1e-10


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# discrete measures


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely many weighted atoms in R^n.

    Weights must already sum to one (1e-12); use :meth:`from_unnormalized`
    for raw masses and :meth:`from_samples` for point clouds that may
    contain repeats.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.ndim != 2 or atoms.shape[0] < 1:
            raise InputError("atoms must be a non-empty (m, n) array")
        if weights.shape[0] != atoms.shape[0]:
            raise InputError("one weight per atom required")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
            raise InputError("atoms and weights must be finite")
        if np.any(weights < 0):
            raise InputError("weights must be non-negative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise InputError(f"weights sum to {weights.sum()!r}, expected 1")
        if np.unique(atoms, axis=0).shape[0] != atoms.shape[0]:
            raise InputError("atoms must be pairwise distinct")
        object.__setattr__(self, "atoms", _readonly(atoms))
        object.__setattr__(self, "weights", _readonly(weights))

    @property
    def dimension(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @classmethod
    def from_unnormalized(cls, atoms, masses) -> "DiscreteMeasure":
        masses = np.asarray(masses, dtype=float)
        total = masses.sum()
        if not total > 0:
            raise InputError("total mass must be positive")
        w = masses / total
        # absorb rounding so the sum is 1 to machine precision
        w[np.argmax(w)] += 1.0 - w.sum()
        return cls(atoms, w)

    @classmethod
    def from_samples(cls, points) -> "DiscreteMeasure":
        """Empirical measure; repeated points are merged."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        uniq, counts = np.unique(pts, axis=0, return_counts=True)
        return cls.from_unnormalized(uniq, counts.astype(float))

    @classmethod
    def point_mass(cls, x) -> "DiscreteMeasure":
        return cls(np.atleast_2d(np.asarray(x, dtype=float)), [1.0])

    @classmethod
    def two_point(cls, left=-1.0, right=1.0, weights=(0.5, 0.5)) -> "DiscreteMeasure":
        atoms = np.vstack([np.atleast_1d(left), np.atleast_1d(right)]).astype(float)
        return cls(atoms, weights)

    def to_json(self) -> dict:
        return {
            "dimension": self.dimension,
            "atoms": self.atoms.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict | str) -> "DiscreteMeasure":
        if isinstance(doc, str):
            doc = json.loads(doc)
        if "grid" in doc:
            return GridMeasure.from_json(doc).to_discrete()
        atoms = np.asarray(doc["atoms"], dtype=float).reshape(-1, int(doc["dimension"]))
        return cls(atoms, doc["weights"])


# --------------------------------------------------------------------------
# grid measures


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Density values on a regular 1D or 2D lattice of cell midpoints."""

    axes: tuple
    density: np.ndarray
    cell_volume: float
    log_density: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        axes = tuple(_readonly(ax) for ax in self.axes)
        dens = np.asarray(self.density, dtype=float)
        if dens.shape != tuple(len(ax) for ax in axes):
            raise InputError("density shape does not match the axes")
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise InputError("density values must be finite and >= 0")
        if abs(dens.sum() * self.cell_volume - 1.0) > 1e-10:
            raise InputError("grid weights must sum to 1")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "density", _readonly(dens))
        if self.log_density is not None:
            object.__setattr__(self, "log_density", _readonly(self.log_density))

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return self.density.shape

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def weights(self) -> np.ndarray:
        return self.density.ravel() * self.cell_volume

    def to_discrete(self) -> DiscreteMeasure:
        w = self.weights
        keep = w > 0
        return DiscreteMeasure.from_unnormalized(self.points[keep], w[keep])

    def is_log_concave(self, tol: float = 1e-8) -> bool:
        """Second differences of the log-density along every lattice line are <= tol."""
        logd = self.log_density
        if logd is None:
            with np.errstate(divide="ignore"):
                logd = np.log(self.density)
        for axis in range(self.dimension):
            lo = np.take(logd, range(0, logd.shape[axis] - 2), axis=axis)
            mid = np.take(logd, range(1, logd.shape[axis] - 1), axis=axis)
            hi = np.take(logd, range(2, logd.shape[axis]), axis=axis)
            ok = np.isfinite(lo) & np.isfinite(mid) & np.isfinite(hi)
            second = lo[ok] - 2 * mid[ok] + hi[ok]
            if second.size and second.max() > tol:
                return False
            # interior zeros surrounded by mass break concavity of the support
            gap = np.isfinite(lo) & ~np.isfinite(mid) & np.isfinite(hi)
            if np.any(gap):
                return False
        return True

    def to_json(self) -> dict:
        return {
            "dimension": self.dimension,
            "grid": {"axes": [ax.tolist() for ax in self.axes], "cell_volume": self.cell_volume},
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict | str) -> "GridMeasure":
        if isinstance(doc, str):
            doc = json.loads(doc)
        axes = tuple(np.asarray(ax, dtype=float) for ax in doc["grid"]["axes"])
        vol = float(doc["grid"]["cell_volume"])
        dens = np.asarray(doc["weights"], dtype=float).reshape([len(ax) for ax in axes]) / vol
        return cls(axes, dens, vol)


def discretize_density(
    log_density: Callable[[np.ndarray], np.ndarray],
    domain,
    resolution,
) -> GridMeasure:
    """Discretize ``exp(log_density)`` on cell midpoints of a box.

    ``domain`` is ``(lo, hi)`` or a sequence of such pairs (at most two);
    ``log_density`` receives an ``(m, n)`` array and may return ``-inf``
    for points outside the support.
    """
    dom = np.asarray(domain, dtype=float)
    if dom.ndim == 1:
        dom = dom[None, :]
    if dom.shape[1] != 2 or dom.shape[0] not in (1, 2):
        raise InputError("domain must be an interval or a 2D box")
    dim = dom.shape[0]
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (dim,))
    if np.any(res < 8):
        raise InputError("resolution must be >= 8 per axis")
    axes, widths = [], []
    for (lo, hi), r in zip(dom, res):
        if not hi > lo:
            raise InputError("empty domain")
        h = (hi - lo) / r
        axes.append(lo + h * (np.arange(r) + 0.5))
        widths.append(h)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    logd = np.asarray(log_density(pts), dtype=float).reshape(pts.shape[0])
    if np.any(np.isnan(logd)) or np.any(logd == np.inf):
        raise InputError("log-density must be finite or -inf")
    if not np.any(np.isfinite(logd)):
        raise InputError("density vanishes on the whole grid")
    cell = float(np.prod(widths))
    lognorm = logsumexp(logd) + np.log(cell)
    logd = (logd - lognorm).reshape(tuple(res))
    return GridMeasure(tuple(axes), np.exp(logd), cell, log_density=logd)


# --------------------------------------------------------------------------
# convex regions and sampling families


@dataclass(frozen=True)
class Region:
    """Convex region used for Gaussian truncation.

    kinds: ``whole-space``, ``box`` (|x_i| <= half_width), ``half-space``
    (x_axis >= offset), ``slab`` (|x_axis| <= half_width), ``ball``
    (|x| <= radius).
    """

    kind: str = "whole-space"
    half_width: float = 1.0
    axis: int = 0
    offset: float = 0.0
    radius: float = 1.0

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.kind == "whole-space":
            return np.ones(x.shape[0], dtype=bool)
        if self.kind == "box":
            return np.all(np.abs(x) <= self.half_width, axis=1)
        if self.kind == "half-space":
            return x[:, self.axis] >= self.offset
        if self.kind == "slab":
            return np.abs(x[:, self.axis]) <= self.half_width
        if self.kind == "ball":
            return np.einsum("ij,ij->i", x, x) <= self.radius**2
        raise ConfigurationError(f"unknown region kind {self.kind!r}")

    @property
    def symmetric(self) -> bool:
        """Invariant under x -> -x (so a truncated centered Gaussian stays centered)."""
        return self.kind in ("whole-space", "box", "slab", "ball")

    def log_indicator(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.contains(x), 0.0, -np.inf)


FAMILY_KINDS = (
    "standard-gaussian",
    "product-exponential-centered",
    "uniform-cube-isotropic",
    "uniform-ball-isotropic",
    "truncated-gaussian",
    "two-point",
    "custom-discrete",
)

_ALIASES = {
    "gaussian": "standard-gaussian",
    "normal": "standard-gaussian",
    "exp": "product-exponential-centered",
    "exponential": "product-exponential-centered",
    "cube": "uniform-cube-isotropic",
    "ball": "uniform-ball-isotropic",
    "twopoint": "two-point",
}


@dataclass(frozen=True, eq=False)
class DistributionFamily:
    kind: str
    dimension: int
    region: Region | None = None
    precision: np.ndarray | None = None
    measure: DiscreteMeasure | None = None

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in FAMILY_KINDS:
            raise ConfigurationError(f"unknown distribution family {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.dimension < 1:
            raise ConfigurationError("dimension must be >= 1")
        if kind in ("two-point", "custom-discrete"):
            if self.measure is None or self.measure.dimension != self.dimension:
                raise ConfigurationError(f"{kind} needs a measure of dimension {self.dimension}")
        if kind == "truncated-gaussian":
            if self.region is None:
                object.__setattr__(self, "region", Region())
            B = np.eye(self.dimension) if self.precision is None else np.asarray(self.precision, float)
            if B.shape != (self.dimension, self.dimension) or np.linalg.eigvalsh(B).min() <= 0:
                raise ConfigurationError("precision must be positive definite")
            object.__setattr__(self, "precision", _readonly(B))

    @property
    def is_isotropic(self) -> bool:
        if self.kind in ("standard-gaussian", "product-exponential-centered",
                         "uniform-cube-isotropic", "uniform-ball-isotropic"):
            return True
        if self.kind == "truncated-gaussian":
            return self.region.kind == "whole-space" and np.allclose(self.precision, np.eye(self.dimension))
        mom = moments(self.measure)
        return bool(np.allclose(mom.mean, 0, atol=1e-8)
                    and np.allclose(mom.covariance, np.eye(self.dimension), atol=1e-8))

    @property
    def is_centered(self) -> bool:
        if self.kind == "truncated-gaussian":
            return self.region.symmetric
        if self.kind in ("two-point", "custom-discrete"):
            return bool(np.allclose(moments(self.measure).mean, 0, atol=1e-10))
        return True

    @property
    def ball_radius(self) -> float:
        return float(np.sqrt(self.dimension + 2.0))

    # convenience constructors
    @classmethod
    def gaussian(cls, n: int) -> "DistributionFamily":
        return cls("standard-gaussian", n)

    @classmethod
    def exponential(cls, n: int) -> "DistributionFamily":
        return cls("product-exponential-centered", n)

    @classmethod
    def cube(cls, n: int) -> "DistributionFamily":
        return cls("uniform-cube-isotropic", n)

    @classmethod
    def ball(cls, n: int) -> "DistributionFamily":
        return cls("uniform-ball-isotropic", n)

    @classmethod
    def truncated(cls, n: int, region: Region, precision=None) -> "DistributionFamily":
        return cls("truncated-gaussian", n, region=region, precision=precision)

    @classmethod
    def discrete(cls, measure: DiscreteMeasure) -> "DistributionFamily":
        kind = "two-point" if measure.size == 2 else "custom-discrete"
        return cls(kind, measure.dimension, measure=measure)


def family_from_name(name: str, n: int) -> DistributionFamily:
    kind = _ALIASES.get(name, name)
    if kind == "two-point":
        return DistributionFamily.discrete(DiscreteMeasure.two_point(-np.ones(n), np.ones(n)))
    if kind in ("truncated-gaussian", "custom-discrete"):
        raise ConfigurationError(f"family {name!r} needs explicit parameters")
    return DistributionFamily(kind, n)


def _truncated_gaussian(family: DistributionFamily, count: int, gen: np.random.Generator) -> np.ndarray:
    n = family.dimension
    cov_chol = np.linalg.cholesky(np.linalg.inv(family.precision))
    region = family.region
    pilot = gen.standard_normal((max(4 * count, 10_000), n)) @ cov_chol.T
    hit = region.contains(pilot)
    rate = hit.mean()
    if rate < 1e-4:
        raise CapabilityError(f"rejection acceptance rate {rate:.2e} below 1e-4")
    out = [pilot[hit]]
    have = out[0].shape[0]
    while have < count:
        draw = gen.standard_normal((int((count - have) / rate * 1.2) + 64, n)) @ cov_chol.T
        keep = draw[region.contains(draw)]
        out.append(keep)
        have += keep.shape[0]
    return np.concatenate(out)[:count]


def sample(family: DistributionFamily, count: int, gen: np.random.Generator) -> np.ndarray:
    """``count`` i.i.d. points from ``family`` drawn with ``gen``; shape (count, n)."""
    if count < 1:
        raise InputError("count must be >= 1")
    n = family.dimension
    kind = family.kind
    if kind == "standard-gaussian":
        return gen.standard_normal((count, n))
    if kind == "product-exponential-centered":
        return gen.standard_exponential((count, n)) - 1.0
    if kind == "uniform-cube-isotropic":
        return gen.uniform(-SQRT3, SQRT3, (count, n))
    if kind == "uniform-ball-isotropic":
        g = gen.standard_normal((count, n))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = family.ball_radius * gen.random(count) ** (1.0 / n)
        return g * r[:, None]
    if kind == "truncated-gaussian":
        return _truncated_gaussian(family, count, gen)
    if kind in ("two-point", "custom-discrete"):
        m = family.measure
        idx = gen.choice(m.size, size=count, p=m.weights)
        return m.atoms[idx].copy()
    raise ConfigurationError(f"unknown distribution family {kind!r}")


def sample_stream(family: DistributionFamily, count: int, stream: _rng.Stream,
                  chunk: int = _rng.CHUNK) -> np.ndarray:
    """Chunked, thread-count independent version of :func:`sample`."""
    return _rng.chunked_draw(lambda g, k: sample(family, k, g), count, stream, chunk)


def write_samples_csv(points: np.ndarray, dest=None) -> str:
    points = np.atleast_2d(points)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{i + 1}" for i in range(points.shape[1])])
    for row in points:
        writer.writerow([repr(float(v)) for v in row])
    text = buf.getvalue()
    if dest is not None:
        with open(dest, "w", newline="") as fh:
            fh.write(text)
    return text


# --------------------------------------------------------------------------
# moments


@dataclass(frozen=True, eq=False)
class MomentSummary:
    mean: np.ndarray
    covariance: np.ndarray
    third: np.ndarray | None = None

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise InputError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10 * max(1.0, np.trace(cov)):
            raise InputError("covariance must be positive semi-definite")


def third_moment_tensor(centered: np.ndarray, weights: np.ndarray | None = None,
                        chunk: int = 1 << 14) -> np.ndarray:
    """``sum_k w_k y_k (x) y_k (x) y_k`` (uniform weights 1/N by default), symmetrized."""
    y = np.atleast_2d(centered)
    N, n = y.shape
    w = np.full(N, 1.0 / N) if weights is None else np.asarray(weights, dtype=float)
    acc = np.zeros((n * n, n))
    for s in range(0, N, chunk):
        blk = y[s:s + chunk]
        outer = (blk[:, :, None] * blk[:, None, :]).reshape(blk.shape[0], n * n)
        acc += (outer * w[s:s + chunk, None]).T @ blk
    T = acc.reshape(n, n, n)
    return (T + T.transpose(0, 2, 1) + T.transpose(1, 0, 2)
            + T.transpose(1, 2, 0) + T.transpose(2, 0, 1) + T.transpose(2, 1, 0)) / 6.0


def moments(data, order: int = 2) -> MomentSummary:
    """Exact weighted moments of a measure, or sample moments of an (N, n) array.

    Sample covariance is the unbiased one; the third tensor is the central
    moment ``E (X - m)^{(x)3}`` in both cases.
    """
    if order not in (2, 3):
        raise InputError("order must be 2 or 3")
    if isinstance(data, GridMeasure):
        data = data.to_discrete()
    if isinstance(data, DiscreteMeasure):
        w, x = data.weights, data.atoms
        mean = w @ x
        y = x - mean
        cov = (y * w[:, None]).T @ y
        cov = 0.5 * (cov + cov.T)
        third = third_moment_tensor(y, w) if order == 3 else None
        return MomentSummary(mean, cov, third)
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise InputError("samples must be an (N, n) array")
    if x.shape[0] < 2:
        raise InputError("at least two samples required")
    mean = x.mean(axis=0)
    y = x - mean
    cov = y.T @ y / (x.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    third = third_moment_tensor(y) if order == 3 else None
    return MomentSummary(mean, cov, third)


def inverse_sqrt(cov: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    lam, vec = np.linalg.eigh(cov)
    if lam.min() <= floor:
        raise DegenerateMeasureError(f"covariance eigenvalue {lam.min():.3e} below floor {floor}")
    return (vec / np.sqrt(lam)) @ vec.T


def isotropize(measure: DiscreteMeasure) -> DiscreteMeasure:
    """Affine image with mean 0 and identity covariance."""
    mom = moments(measure)
    S = inverse_sqrt(mom.covariance)
    atoms = (measure.atoms - mom.mean) @ S
    return DiscreteMeasure(atoms, measure.weights)


# --------------------------------------------------------------------------
# quadratic transport cost

MAX_T2_ATOMS = 256


def t2_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, max_atoms: int | None = MAX_T2_ATOMS) -> float:
    """Exact optimal transport cost with cost |x - y|^2 (a squared distance).

    Solves the transportation LP with HiGHS.  ``max_atoms`` bounds the
    combined support; pass ``None`` to lift it when one side is tiny.
    """
    if mu.dimension != nu.dimension:
        raise InputError("dimension mismatch")
    m, k = mu.size, nu.size
    if max_atoms is not None and m + k > max_atoms:
        raise CapabilityError(
            f"combined support {m + k} exceeds {max_atoms} atoms; subsample the measures first"
        )
    diff = mu.atoms[:, None, :] - nu.atoms[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    if m == 1 or k == 1:
        return float(mu.weights @ cost @ nu.weights)
    rows = sparse.kron(sparse.eye(m), np.ones((1, k)), format="csr")
    cols = sparse.kron(np.ones((1, m)), sparse.eye(k), format="csr")
    A_eq = sparse.vstack([rows, cols[:-1]], format="csc")
    b_eq = np.concatenate([mu.weights, nu.weights[:-1] * (mu.weights.sum() / nu.weights.sum())])
    res = optimize.linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise CapabilityError(f"transport LP failed: {res.message}")
    return max(float(res.fun), 0.0)


def require(cond: bool, message: str, exc=PreconditionError) -> None:
    if not cond:
        raise exc(message)
