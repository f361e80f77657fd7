"""Numbered end-to-end verification battery behind `verify-all`.

Each criterion is a self-contained experiment with frozen numeric targets:
closed-form constants where one exists, otherwise cross-validation between
independent routes (exact sampler vs discretized oracle, series vs Monte
Carlo, spectral vs image kernels).  The command line and the test suite
share these runners, so both certify the same computation.

Monte-Carlo criteria draw from substreams of one root seed; everything
else is deterministic given the tolerances.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.stats import chi2 as chi2_dist
from scipy.stats import ks_2samp

from . import coupling as cpl
from . import dirichlet as dch
from . import process as proc
from .errors import ValidationError
from .model import Interval, JumpMeasure, RandomStream, quantize
from .spectrum import (CharacteristicSystem, SearchRegion, char_det,
                       find_spectrum, spectral_gap)

I01 = Interval(0.0, 1.0)
TWO_PI_SQ = 2.0 * np.pi**2
LAM2 = 4.5 * np.pi**2
LAM_GROUND = 0.5 * np.pi**2

_OPS = {"abs": "~", "le": "<=", "ge": ">=", "lt": "<", "gt": ">"}


@dataclass(frozen=True)
class Check:
    """One scalar comparison inside a criterion."""

    name: str
    value: float
    target: float
    mode: str                    # abs | le | ge | lt | gt
    tol: float = 0.0

    @property
    def passed(self) -> bool:
        if self.mode == "abs":
            return abs(self.value - self.target) <= self.tol
        if self.mode == "le":
            return self.value <= self.target
        if self.mode == "ge":
            return self.value >= self.target
        if self.mode == "lt":
            return self.value < self.target
        if self.mode == "gt":
            return self.value > self.target
        raise ValidationError(f"unknown check mode {self.mode!r}")

    def describe(self) -> str:
        if self.mode == "abs":
            return (f"{self.name}: |{self.value:.12g} - {self.target:.12g}|"
                    f" = {abs(self.value - self.target):.3g} <= {self.tol:g}")
        return f"{self.name}: {self.value:.12g} {_OPS[self.mode]} {self.target:.12g}"


@dataclass(frozen=True)
class CriterionResult:
    number: int
    title: str
    checks: tuple
    seconds: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} {flag}  {self.title} ({self.seconds:.1f} s)"


def _battery():
    """The four single-measure test cases used by criteria 1 and 2."""
    atoms = np.round(np.linspace(0.3, 0.7, 5), 10)
    return (
        ("dirac-center", JumpMeasure.dirac(I01, 0.5)),
        ("dirac-off", JumpMeasure.dirac(I01, 0.3)),
        ("mixture-5", JumpMeasure.mixture(I01, atoms, np.full(5, 0.2))),
        ("quantized-qsd", quantize(JumpMeasure.quasistationary(I01), 32)),
    )


def criterion_1(seed: int = 7, workers: int | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    checks = [Check(f"gap[{name}]", spectral_gap(nu), TWO_PI_SQ, "abs", 1e-8)
              for name, nu in _battery()]
    return CriterionResult(1, "spectral gap is measure-independent",
                           tuple(checks), time.perf_counter() - t0)


def _real_scan(system: CharacteristicSystem, re_max: float, grid: int = 6000):
    """Distinct real roots by sign changes of the deflated determinant."""
    lam = np.linspace(1e-6, re_max, grid)
    vals = np.real(char_det(lam, system)) / lam

    def f(u):
        return float(np.real(char_det(np.array([u]), system))[0] / u)

    hits = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)
    return np.array([brentq(f, lam[i], lam[i + 1], xtol=1e-12) for i in hits])


def criterion_2(seed: int = 7, workers: int | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    region = SearchRegion(re_min=1e-6, re_max=120.0, im_max=50.0)
    checks = []
    for name, nu in _battery():
        system = CharacteristicSystem(nu)
        found = find_spectrum(system, region)
        scan = _real_scan(system, region.re_max)
        lams = np.array([lam for lam, _ in found.eigenvalues])
        checks.append(Check(f"max |Im|[{name}]",
                            float(np.max(np.abs(lams.imag))), 1e-6, "lt"))
        checks.append(Check(f"count - scan count[{name}]",
                            float(lams.size - scan.size), 0.0, "abs", 0.0))
        match = float(np.max(np.min(np.abs(lams.real[:, None] - scan[None, :]),
                                    axis=1)))
        checks.append(Check(f"root-to-scan distance[{name}]", match, 1e-6, "le"))
    return CriterionResult(2, "single-measure spectra are real and complete",
                           tuple(checks), time.perf_counter() - t0)


def _pair_gap(args):
    p, q = args
    return spectral_gap(JumpMeasure.dirac(I01, p), JumpMeasure.dirac(I01, q))


def criterion_3(seed: int = 7, workers: int | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    g = spectral_gap(JumpMeasure.dirac(I01, 2.0 / 3.0),
                     JumpMeasure.dirac(I01, 1.0 / 3.0))
    checks = [Check("gap at the optimal pair", g, LAM2, "abs", 1e-8)]

    ps = np.linspace(0.1, 0.9, 21)
    tasks = [(p, q) for p in ps for q in ps]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            gaps = np.array(list(pool.map(_pair_gap, tasks, chunksize=21)))
    else:
        gaps = np.array([_pair_gap(t) for t in tasks])
    p_best, q_best = tasks[int(np.argmax(gaps))]
    cell = ps[1] - ps[0]
    checks.append(Check("sweep argmax p offset", abs(p_best - 2.0 / 3.0),
                        cell + 1e-12, "le"))
    checks.append(Check("sweep argmax q offset", abs(q_best - 1.0 / 3.0),
                        cell + 1e-12, "le"))
    return CriterionResult(3, "two-measure gap peaks at the second level",
                           tuple(checks), time.perf_counter() - t0)


def criterion_4(seed: int = 7, workers: int | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    ns = 2 ** np.arange(2, 11)               # 4 .. 1024
    gaps = np.array([_pair_gap((1.0 / n, 1.0 - 1.0 / n)) for n in ns])
    checks = [
        Check("largest consecutive increase", float(np.max(np.diff(gaps))),
              0.0, "lt"),
        Check("relative distance to the limit at n=1024",
              float(abs(gaps[-1] - LAM_GROUND) / LAM_GROUND), 0.05, "le"),
        Check("margin above the limit", float(np.min(gaps - LAM_GROUND)),
              0.0, "gt"),
    ]
    return CriterionResult(4, "boundary pairs approach the unattained limit",
                           tuple(checks), time.perf_counter() - t0)


def criterion_5(seed: int = 7, workers: int | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    nu = JumpMeasure.dirac(I01, 0.5)
    pos = proc.simulate_positions(0.5, nu, 3.0, 1_000_000,
                                  RandomStream(seed).substream("invariant"),
                                  workers=workers)
    edges = np.linspace(0.0, 1.0, 201)
    emp = np.histogram(pos, bins=edges)[0] / pos.size
    exact = proc.invariant_density(nu).bin_masses(edges)
    tv = 0.5 * float(np.sum(np.abs(emp - exact)))
    checks = [Check("200-bin TV to the tent density", tv, 0.01, "lt")]

    nuq = JumpMeasure.quasistationary(I01)
    inv = proc.invariant_density(nuq)
    y = np.linspace(1e-3, 1.0 - 1e-3, 2001)
    ground = 0.5 * np.pi * np.sin(np.pi * y)
    rel = float(np.max(np.abs(inv.density(y) / ground - 1.0)))
    checks.append(Check("fixed-point sup relative error", rel, 1e-10, "lt"))
    return CriterionResult(5, "stationary law matches the closed forms",
                           tuple(checks), time.perf_counter() - t0)


def criterion_6(seed: int = 7, workers: int | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    slope, _ = proc.tv_mirror_rate(I01, 0.25, window=(0.2, 0.6), points=9)
    checks = [Check("log-TV slope", slope, -TWO_PI_SQ, "abs", 0.005 * TWO_PI_SQ)]

    nu = JumpMeasure.dirac(I01, 0.5)
    exact = proc.tv_mirror_exact(I01, 0.25, 0.2)
    mc, se = proc.tv_mirror_mc(nu, 0.25, 0.2, 1_000_000,
                               RandomStream(seed).substream("mirror"))
    checks.append(Check("MC TV minus series", abs(mc - exact), 3.0 * se, "le"))
    return CriterionResult(6, "mirror TV decays at the spectral rate",
                           tuple(checks), time.perf_counter() - t0)


def criterion_7(seed: int = 7, workers: int | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    nu = JumpMeasure.dirac(I01, 0.5)
    tc = cpl.tail_vs_sum5(0.45, 0.55, nu, 100_000,
                          np.linspace(0.02, 0.6, 30), RandomStream(seed).substream("tail"))
    sig = np.hypot(np.asarray(tc.se_coupl), np.asarray(tc.se_sum5))
    worst = float(np.max(np.asarray(tc.surv_coupl) - np.asarray(tc.surv_sum5)
                         - 3.0 * sig))
    checks = [
        Check("domination slack (worst grid point)", worst, 0.0, "le"),
        Check("tail exponent lower bound", tc.exponent, 0.9 * TWO_PI_SQ, "ge"),
        Check("tail exponent upper bound", tc.exponent, 1.1 * TWO_PI_SQ, "le"),
    ]
    return CriterionResult(7, "staged coupling is efficient",
                           tuple(checks), time.perf_counter() - t0)


def criterion_8(seed: int = 7, workers: int | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    nu = JumpMeasure.dirac(I01, 0.5)
    x, y, n = 0.50, 0.58, 10_000
    staged, _ = cpl.staged_coupling_times(x, y, nu, n, RandomStream(seed).substream("staged"))
    oracle = cpl._oracle_batch(x, y, nu, 1e-5, RandomStream(seed).substream("oracle"), n)
    p_ks = float(ks_2samp(staged, oracle).pvalue)
    checks = [Check("KS p-value (exact vs oracle)", p_ks, 0.01, "gt")]

    horizon = 0.4
    _, pos = cpl._oracle_batch(x, y, nu, 1e-5, RandomStream(seed).substream("marginal"),
                               n, horizon=horizon)
    law = proc.law_at_time(x, nu, horizon)
    edges = np.linspace(0.0, 1.0, 41)
    expected = law.bin_masses(edges) * pos.size
    observed = np.histogram(pos, bins=edges)[0].astype(float)
    small = expected < 10
    if np.any(small):
        expected = np.append(expected[~small], expected[small].sum())
        observed = np.append(observed[~small], observed[small].sum())
    expected *= observed.sum() / expected.sum()
    stat = float(np.sum((observed - expected) ** 2 / expected))
    p_chi = float(chi2_dist.sf(stat, len(expected) - 1))
    checks.append(Check("chi-square p-value (marginal vs law)", p_chi,
                        0.01, "gt"))
    return CriterionResult(8, "exact sampler agrees with the discretized oracle",
                           tuple(checks), time.perf_counter() - t0)


def criterion_9(seed: int = 7, workers: int | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    nu = JumpMeasure.dirac(I01, 0.5)

    def f(yv):
        return ((yv > 0.4) & (yv < 0.6)).astype(float)

    system = proc.renewal_solve(f, nu, initial=0.2, t_max=6.0, dt=1e-3)
    late = system.t >= 2.0
    sup_err = float(np.max(np.abs(system.solution[late] - 0.36)))
    checks = [Check("sup |Z(t) - 0.36| for t >= 2", sup_err, 1e-3, "lt")]

    n = 200_000
    pos = proc.simulate_positions(0.2, nu, 0.5, n, RandomStream(seed).substream("renewal"),
                                  workers=workers)
    phat = float(np.mean((pos > 0.4) & (pos < 0.6)))
    se = float(np.sqrt(phat * (1.0 - phat) / n))
    z_half = float(system.at(0.5))
    checks.append(Check("|Z(0.5) - MC|", abs(z_half - phat), 3.0 * se, "le"))
    return CriterionResult(9, "renewal solution reaches the window mass",
                           tuple(checks), time.perf_counter() - t0)


def criterion_10(seed: int = 7, workers: int | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    tc = dch.crossover_time(I01)
    xi = np.linspace(0.02, 0.98, 21)
    eta = np.linspace(0.03, 0.97, 21)
    t_arr = np.full_like(xi, tc)
    kern = float(np.max(np.abs(dch._kernel_img(1.0, xi, eta, t_arr, 1e-13)
                               - dch._kernel_spec(1.0, xi, eta, t_arr, 1e-13))))
    surv = float(np.max(np.abs(dch._survival_img(1.0, xi, t_arr, 1e-13)
                               - dch._survival_spec(1.0, xi, t_arr, 1e-13))))
    checks = [
        Check("kernel image-spectral mismatch at crossover", kern, 1e-10, "lt"),
        Check("survival image-spectral mismatch at crossover", surv, 1e-10, "lt"),
    ]

    rep = cpl.domination_check(I01, np.linspace(0.02, 0.98, 50),
                               np.linspace(0.02, 1.5, 50))
    checks.append(Check("survival domination violation (50x50)",
                        rep.max_violation, 1e-12, "le"))

    nu = JumpMeasure.dirac(I01, 0.5)
    t_count = 0.5
    n = 100_000
    _, counts = proc.simulate_positions(0.5, nu, t_count, n,
                                        RandomStream(seed).substream("counts"),
                                        workers=workers, return_counts=True)
    bound = proc.jump_tail_bound(nu, t_count)
    i = np.arange(1, counts.max() + 1)
    emp = np.array([(counts >= k).mean() for k in i])
    slack = float(np.max(emp - bound.bound(i - 1)))
    checks.append(Check("jump-count tail bound violation", slack, 0.0, "le"))
    return CriterionResult(10, "kernel infrastructure cross-checks",
                           tuple(checks), time.perf_counter() - t0)


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10)


def run_criteria(numbers=None, seed: int = 7,
                 workers: int | None = None) -> list:
    """Run the requested criteria (default: all ten) in order."""
    if numbers is None:
        numbers = range(1, len(CRITERIA) + 1)
    chosen = sorted(set(int(k) for k in numbers))
    bad = [k for k in chosen if not 1 <= k <= len(CRITERIA)]
    if bad:
        raise ValidationError(f"no such criterion: {bad}")
    return [CRITERIA[k - 1](seed=seed, workers=workers) for k in chosen]
