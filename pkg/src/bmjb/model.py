"""Core domain vocabulary: intervals, jump measures, run configuration, randomness.

Everything here is immutable after construction and safe to share across
workers.  Time/space are dimensionless with the diffusion generator fixed to
-(1/2) d^2/dx^2.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np

from .errors import DomainError, ValidationError

WEIGHT_TOL = 1e-12

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class Interval:
    """Open interval (a, b) the process lives on."""

    a: float
    b: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValidationError(f"interval endpoints must be finite, got ({self.a}, {self.b})")
        if not self.a < self.b:
            raise ValidationError(f"interval requires a < b, got ({self.a}, {self.b})")

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def center(self) -> float:
        return 0.5 * (self.a + self.b)

    def contains(self, x, strict: bool = True):
        x = np.asarray(x)
        if strict:
            return (x > self.a) & (x < self.b)
        return (x >= self.a) & (x <= self.b)

    def reflect(self, x):
        """R(x) = a + b - x, the mirror map about the center."""
        x_arr = np.asarray(x, dtype=float)
        if np.any(~self.contains(x_arr, strict=False)):
            raise DomainError(f"reflect: point outside [{self.a}, {self.b}]")
        out = self.a + self.b - x_arr
        return float(out) if np.isscalar(x) or out.ndim == 0 else out


def reflect(x, interval: Interval):
    return interval.reflect(x)


@dataclass(frozen=True)
class JumpMeasure:
    """Probability measure on the open interval used to redistribute at boundary hits.

    Variants (field `kind`): "dirac" (single atom), "mixture" (finite atoms),
    "grid" (piecewise-constant density on a uniform cell mesh, values stored
    normalized), "quasistationary" (density proportional to the ground
    Dirichlet eigenfunction sin(pi (y-a)/L)).
    """

    interval: Interval
    kind: str
    atoms: tuple = ()
    weights: tuple = ()
    values: tuple = ()

    # -- constructors ------------------------------------------------------

    @classmethod
    def dirac(cls, interval: Interval, point: float) -> "JumpMeasure":
        return cls(interval, "dirac", atoms=(float(point),), weights=(1.0,))

    @classmethod
    def mixture(cls, interval: Interval, atoms, weights) -> "JumpMeasure":
        order = np.argsort(np.asarray(atoms, dtype=float))
        a = tuple(float(p) for p in np.asarray(atoms, dtype=float)[order])
        w = tuple(float(p) for p in np.asarray(weights, dtype=float)[order])
        return cls(interval, "mixture", atoms=a, weights=w)

    @classmethod
    def grid_density(cls, interval: Interval, values) -> "JumpMeasure":
        v = np.asarray(values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValidationError("grid density needs a 1-d, non-empty value array")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValidationError("grid density values must be finite and nonnegative")
        total = v.sum() * (interval.length / v.size)
        if total <= 0:
            raise ValidationError("grid density has no mass")
        return cls(interval, "grid", values=tuple(v / total))

    @classmethod
    def quasistationary(cls, interval: Interval) -> "JumpMeasure":
        return cls(interval, "quasistationary")

    # -- validation --------------------------------------------------------

    def __post_init__(self) -> None:
        if self.kind not in ("dirac", "mixture", "grid", "quasistationary"):
            raise ValidationError(f"unknown measure kind {self.kind!r}")
        if self.kind in ("dirac", "mixture"):
            pts = np.asarray(self.atoms, dtype=float)
            wts = np.asarray(self.weights, dtype=float)
            if pts.size == 0 or pts.size != wts.size:
                raise ValidationError("atomic measure needs matching atoms and weights")
            inside = self.interval.contains(pts, strict=True)
            if not np.all(inside):
                bad = pts[~inside][0]
                raise ValidationError(
                    f"atom {bad!r} not strictly inside ({self.interval.a}, {self.interval.b})"
                )
            if np.any(wts < 0):
                raise ValidationError("mixture weights must be nonnegative")
            if abs(wts.sum() - 1.0) > WEIGHT_TOL:
                raise ValidationError(f"weights sum to {wts.sum()!r}, not 1 within {WEIGHT_TOL}")
        elif self.kind == "grid":
            v = np.asarray(self.values, dtype=float)
            if v.size == 0:
                raise ValidationError("grid measure needs values")
            if np.any(~np.isfinite(v)) or np.any(v < 0):
                raise ValidationError("grid density values must be finite and nonnegative")
            if abs(v.sum() * self.cell_width - 1.0) > 1e-9:
                raise ValidationError("grid density must integrate to 1 (use grid_density())")

    # -- structure ---------------------------------------------------------

    @property
    def is_atomic(self) -> bool:
        return self.kind in ("dirac", "mixture")

    @property
    def cell_width(self) -> float:
        return self.interval.length / len(self.values)

    @property
    def cell_centers(self) -> np.ndarray:
        n = len(self.values)
        return self.interval.a + (np.arange(n) + 0.5) * self.cell_width

    def support_distance(self) -> float:
        """dist(supp nu, {a, b}); grid support measured to occupied cell centers.

        The quasistationary density is positive up to the boundary, so its
        support distance is 0 (it never satisfies the coupling gap
        precondition, which is the only consumer of this margin).
        """
        I = self.interval
        if self.is_atomic:
            pts = np.asarray(self.atoms)
            return float(min(pts.min() - I.a, I.b - pts.max()))
        if self.kind == "grid":
            v = np.asarray(self.values)
            occupied = np.nonzero(v > 0)[0]
            centers = self.cell_centers[occupied]
            return float(min(centers.min() - I.a, I.b - centers.max()))
        return 0.0

    # -- distribution functions --------------------------------------------

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        I = self.interval
        if self.is_atomic:
            pts = np.asarray(self.atoms)
            wts = np.asarray(self.weights)
            return (wts[None, :] * (pts[None, :] <= x[..., None])).sum(axis=-1)
        if self.kind == "grid":
            v = np.asarray(self.values)
            h = self.cell_width
            edges = I.a + h * np.arange(len(v) + 1)
            cum = np.concatenate([[0.0], np.cumsum(v) * h])
            i = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(v) - 1)
            out = cum[i] + v[i] * np.clip(x - edges[i], 0.0, h)
            return np.clip(out, 0.0, 1.0)
        z = np.clip((x - I.a) / I.length, 0.0, 1.0)
        return 0.5 * (1.0 - np.cos(np.pi * z))

    def quantile(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if np.any((q < 0) | (q > 1)):
            raise DomainError("quantile levels must lie in [0, 1]")
        I = self.interval
        if self.is_atomic:
            pts = np.asarray(self.atoms)
            cum = np.cumsum(self.weights)
            i = np.minimum(np.searchsorted(cum, q, side="left"), len(pts) - 1)
            return pts[i]
        if self.kind == "grid":
            v = np.asarray(self.values)
            h = self.cell_width
            cum = np.concatenate([[0.0], np.cumsum(v) * h])
            cum[-1] = 1.0
            i = np.clip(np.searchsorted(cum, q, side="right") - 1, 0, len(v) - 1)
            # walk forward over zero-mass cells
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(v[i] > 0, (q - cum[i]) / v[i], 0.0)
            return I.a + i * h + np.clip(frac, 0.0, h)
        return I.a + (I.length / np.pi) * np.arccos(1.0 - 2.0 * q)

    def density(self, y) -> np.ndarray:
        """Lebesgue density for the density variants; atoms have none."""
        if self.is_atomic:
            raise DomainError(f"{self.kind} measure has no Lebesgue density")
        y = np.asarray(y, dtype=float)
        I = self.interval
        if self.kind == "grid":
            v = np.asarray(self.values)
            i = np.clip(((y - I.a) / self.cell_width).astype(int), 0, len(v) - 1)
            out = np.where(self.interval.contains(y, strict=False), v[i], 0.0)
            return out
        L = I.length
        z = np.pi * (y - I.a) / L
        return np.where(self.interval.contains(y, strict=False),
                        (np.pi / (2.0 * L)) * np.sin(z), 0.0)

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-transform sampling; exact for every variant."""
        if self.kind == "dirac":
            p = self.atoms[0]
            return p if size is None else np.full(size, p)
        u = rng.uniform(size=size if size is not None else 1)
        out = self.quantile(u)
        return float(out[0]) if size is None else out

    def mean(self) -> float:
        return float(self.integrate(lambda y: y))

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """Integral of a (vectorized) function against the measure."""
        if self.is_atomic:
            pts = np.asarray(self.atoms)
            wts = np.asarray(self.weights)
            return float(np.sum(wts * np.asarray(f(pts), dtype=float)))
        if self.kind == "grid":
            v = np.asarray(self.values)
            h = self.cell_width
            # 8-point Gauss per cell; density is constant within a cell
            nodes = self.cell_centers[:, None] + 0.5 * h * _GL_NODES[None, :]
            vals = np.asarray(f(nodes.ravel())).reshape(nodes.shape)
            return float(np.sum(v * 0.5 * h * (vals * _GL_WEIGHTS[None, :]).sum(axis=1)))
        I = self.interval
        nodes, wts = np.polynomial.legendre.leggauss(256)
        y = I.center + 0.5 * I.length * nodes
        w = 0.5 * I.length * wts
        return float(np.sum(w * self.density(y) * np.asarray(f(y), dtype=float)))

    def reflected(self) -> "JumpMeasure":
        """Pushforward under the mirror map R."""
        I = self.interval
        if self.kind == "dirac":
            return JumpMeasure.dirac(I, I.reflect(self.atoms[0]))
        if self.kind == "mixture":
            return JumpMeasure.mixture(I, [I.reflect(p) for p in self.atoms], self.weights)
        if self.kind == "grid":
            return JumpMeasure(I, "grid", values=tuple(reversed(self.values)))
        return self

    def truncate_distance(self, margin: float) -> "JumpMeasure":
        """Condition on dist(y, {a,b}) > margin and renormalize."""
        I = self.interval
        if self.is_atomic:
            pts = np.asarray(self.atoms)
            wts = np.asarray(self.weights)
            keep = (pts - I.a > margin) & (I.b - pts > margin)
            if not np.any(keep):
                raise ValidationError(f"no mass at distance > {margin} from the boundary")
            w = wts[keep] / wts[keep].sum()
            if keep.sum() == 1:
                return JumpMeasure.dirac(I, float(pts[keep][0]))
            return JumpMeasure.mixture(I, pts[keep], w)
        if self.kind == "grid":
            # partial cells keep their overlap fraction, so the truncated
            # measure varies continuously with the margin
            v = np.asarray(self.values, dtype=float)
            h = self.cell_width
            edges = I.a + h * np.arange(len(self.values) + 1)
            overlap = np.minimum(edges[1:], I.b - margin) - np.maximum(edges[:-1], I.a + margin)
            out = v * np.clip(overlap / h, 0.0, 1.0)
            if out.sum() <= 0:
                raise ValidationError(f"no mass at distance > {margin} from the boundary")
            return JumpMeasure.grid_density(I, out)
        raise ValidationError("truncate a quantized copy of the quasistationary measure instead")

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        d = {"kind": self.kind if self.kind != "grid" else "grid",
             "interval": {"a": self.interval.a, "b": self.interval.b}}
        if self.kind == "dirac":
            d["point"] = self.atoms[0]
        elif self.kind == "mixture":
            d["atoms"] = list(self.atoms)
            d["weights"] = list(self.weights)
        elif self.kind == "grid":
            d["values"] = list(self.values)
        return d

    @classmethod
    def from_dict(cls, d: Mapping, interval: Interval | None = None) -> "JumpMeasure":
        if interval is None:
            spec = d.get("interval")
            if spec is None:
                raise ValidationError("measure dict lacks an interval")
            interval = Interval(float(spec["a"]), float(spec["b"]))
        kind = d.get("kind")
        if kind == "dirac":
            return cls.dirac(interval, float(d["point"]))
        if kind == "mixture":
            return cls.mixture(interval, d["atoms"], d["weights"])
        if kind == "grid":
            return cls.grid_density(interval, d["values"])
        if kind == "quasistationary":
            return cls.quasistationary(interval)
        raise ValidationError(f"unknown measure kind {kind!r}")


def sample_jump(nu: JumpMeasure, rng) -> float:
    """One redistribution draw from the jump measure."""
    gen = rng.generator if isinstance(rng, RandomStream) else rng
    if nu.kind == "dirac":
        return nu.atoms[0]
    return float(nu.quantile(gen.uniform()))


def quantize(nu: JumpMeasure, n: int) -> JumpMeasure:
    """n-atom midpoint-quantile discretization: atoms at the (k-1/2)/n quantiles.

    Converges weakly to nu as n grows; duplicate quantiles collapse (so a
    Dirac measure quantizes to itself).
    """
    if n < 1:
        raise ValidationError("quantize needs n >= 1")
    q = (np.arange(n) + 0.5) / n
    pts = nu.quantile(q)
    uniq, counts = np.unique(pts, return_counts=True)
    if uniq.size == 1:
        return JumpMeasure.dirac(nu.interval, float(uniq[0]))
    return JumpMeasure.mixture(nu.interval, uniq, counts / n)


@dataclass(frozen=True)
class RandomStream:
    """Reproducible substream tree over a single root seed.

    Streams with identical (seed, key) produce identical variate sequences,
    regardless of creation order; distinct keys give statistically independent
    generators (numpy SeedSequence spawn keys).  Instances are cheap; create
    one per replicate or per (block, round) and never share across workers.
    """

    seed: int
    key: tuple = ()

    def substream(self, *key) -> "RandomStream":
        # string labels map to stable 32-bit spawn-key entries
        parts = tuple(
            zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in key
        )
        return RandomStream(self.seed, self.key + parts)

    @cached_property
    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.key))

    def uniform(self, size=None):
        return self.generator.uniform(size=size)

    def normal(self, size=None):
        return self.generator.normal(size=size)


DEFAULT_TOLERANCES: Mapping[str, float] = {
    "series_tail": 1e-12,      # analytic tail bound for kernel series
    "cdf_invert": 1e-12,       # absolute tolerance in probability for exit sampling
    "mass_defect": 1e-8,       # law-at-time integral defect budget
    "dual_series": 1e-10,      # spectral/image agreement requirement
    "root_residual": 1e-10,    # relative determinant residual at accepted roots
}


@dataclass(frozen=True)
class RunConfig:
    """Inputs that fully determine a Monte-Carlo experiment."""

    seed: int
    replicates: int
    initial: object          # point (float) or JumpMeasure
    horizon: float
    tolerances: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        if self.seed < 0 or self.seed > 2**64 - 1:
            raise ValidationError("seed must fit in 64 unsigned bits")

    def tolerance(self, name: str) -> float:
        if name in self.tolerances:
            return float(self.tolerances[name])
        return DEFAULT_TOLERANCES[name]
