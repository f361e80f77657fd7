"""Coalescent couplings of two copies of the jump process.

Two copies started at x < y are driven by one Brownian motion through at
most three stages: stage a slides the pair together until either its
midpoint reaches the center (symmetric endgame) or the upper copy hits b
and jumps; stage b runs the copies toward each other with mirrored
increments until they meet or their gap reaches b - J1; stage c runs them
in parallel again until the upper copy hits b and jumps onto the lower one
(which is sitting exactly at the carried target J1), or the pair becomes
symmetric.  The symmetric endgame couples at the exit time of one BM from
an interval of length (b-a)/2 regardless of the gap, either by meeting at
the center or by a simultaneous boundary hit with a shared jump draw.

Every stage is the exit of a driving BM from an explicit interval of
length at most (b-a)/2, so the total coupling time is stochastically
dominated by a sum of five center-start exit times of a half-length
interval; tail_vs_sum5 checks that chain empirically and against the
closed-form exponential-moment envelope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dirichlet as dch
from .errors import DomainError, PairError, ValidationError, WindowError
from .model import Interval, JumpMeasure, RandomStream, sample_jump

_UNIT = Interval(0.0, 1.0)


def _gen(rng):
    return rng.generator if isinstance(rng, RandomStream) else rng


# ---------------------------------------------------------------------------
# pair normalization and the symmetric endgame
# ---------------------------------------------------------------------------


def normalize_pair(x: float, y: float, nu: JumpMeasure):
    """Order the pair, reflect it above the center, and gate the gap.

    Returns (x', y', nu') with x' <= y' and midpoint >= center; when the
    reflection is applied the measure is conjugated too (for symmetric nu
    this is the identity).  Pairs whose gap reaches the measure's support
    distance are rejected: the staged construction needs room for the
    carried jump target on both sides.
    """
    I = nu.interval
    pts = np.array([x, y], dtype=float)
    if np.any(~I.contains(pts)):
        raise DomainError(f"pair must lie inside ({I.a}, {I.b})")
    lo, hi = float(pts.min()), float(pts.max())
    out_nu = nu
    if lo + hi < I.a + I.b:
        lo, hi = I.reflect(hi), I.reflect(lo)
        out_nu = nu.reflected()
    gap = hi - lo
    if gap > 0 and gap >= out_nu.support_distance():
        raise PairError(
            f"gap {gap:g} >= support distance {out_nu.support_distance():g}; "
            "couple through intermediate points (chaining) instead")
    return lo, hi, out_nu


def symmetric_interval(interval: Interval, gap: float) -> Interval:
    """Driving-BM exit interval for a symmetric pair with the given gap.

    Length is (b-a)/2 whatever the gap: the left endpoint is the meeting
    event, the right endpoint the simultaneous boundary hit.
    """
    if not 0.0 <= gap < interval.length:
        raise DomainError("gap must lie in [0, b-a)")
    return Interval(-0.5 * gap, 0.5 * (interval.length - gap))


def symmetric_coupling_time(interval: Interval, x: float, rng) -> float:
    """Coupling time of the mirror pair (x, R(x)): one exit-time draw.

    x must lie in (a, c]; x = c means the pair is already coalesced.
    """
    c = 0.5 * (interval.a + interval.b)
    if not (interval.a < x <= c):
        raise DomainError("x must lie in (a, (a+b)/2]")
    if x == c:
        return 0.0
    gap = interval.a + interval.b - 2.0 * x
    t, _ = dch.sample_exit(0.0, symmetric_interval(interval, gap), rng)
    return t


# ---------------------------------------------------------------------------
# staged construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoupledPairState:
    """Snapshot of the pair between stage transitions."""

    interval: Interval
    x: float
    y: float
    phase: str                  # stage_a | stage_b | stage_c | symmetric | coupled
    j1: float | None
    elapsed: float

    def __post_init__(self):
        I = self.interval
        if not (I.contains(self.x) and I.contains(self.y)):
            raise ValidationError("pair left the open interval")
        if self.phase == "symmetric":
            if abs(self.y - I.reflect(self.x)) > 1e-12 * I.length:
                raise ValidationError("symmetric phase requires y = R(x)")
        if self.phase in ("stage_b", "stage_c") and self.j1 is None:
            raise ValidationError("stages b/c carry a jump target")


@dataclass(frozen=True)
class StageRecord:
    """One driving-BM exit: the interval it left, through which side, when."""

    name: str
    lo: float
    hi: float
    side: str
    duration: float


@dataclass(frozen=True)
class CouplingRecord:
    """Full trace of one staged coupling run."""

    interval: Interval
    stages: tuple               # StageRecord per completed stage
    symmetric_gap: float | None
    symmetric_duration: float | None
    total: float
    position: float             # where the copies coalesced

    def __post_init__(self):
        half = 0.5 * self.interval.length + 1e-12
        for st in self.stages:
            if st.hi - st.lo > half:
                raise ValidationError(f"stage {st.name} interval longer than (b-a)/2")
        parts = sum(st.duration for st in self.stages)
        if self.symmetric_duration is not None:
            parts += self.symmetric_duration
        if abs(parts - self.total) > 1e-9 * max(1.0, self.total):
            raise ValidationError("stage durations do not sum to the total")

    @property
    def stages_visited(self) -> str:
        names = [st.name.replace("stage_", "") for st in self.stages]
        if self.symmetric_duration is not None:
            names.append("sym")
        return "-".join(names) if names else "none"


def _stage_a_interval(interval, x, y):
    return 0.5 * ((interval.a + interval.b) - (x + y)), interval.b - y


def _stage_b_interval(interval, gap, j1):
    return 0.5 * (gap - (interval.b - j1)), 0.5 * gap


def _stage_c_interval(interval, gap, j1):
    return 0.5 * (interval.a + gap - j1), 0.5 * gap


def staged_coupling_sample(x: float, y: float, nu: JumpMeasure, rng) -> CouplingRecord:
    """Event-driven sample of the three-stage coupling from the pair (x, y).

    Exact in distribution: each stage is one joint (time, side) exit draw;
    no time discretization anywhere.
    """
    I = nu.interval
    gen = _gen(rng)
    if x == y:
        if not I.contains(x):
            raise DomainError(f"pair must lie inside ({I.a}, {I.b})")
        return CouplingRecord(I, (), None, None, 0.0, float(x))
    x, y, nu = normalize_pair(x, y, nu)
    gap = y - x
    elapsed = 0.0
    stages = []

    # CoupledPairState constructions are pure invariant checks: every
    # intermediate position must stay interior, symmetric entries mirrored
    lo, hi = _stage_a_interval(I, x, y)
    sym_gap = None
    j1 = None
    if lo >= 0.0:
        sym_gap = gap            # pair already symmetric; stage a degenerates
        CoupledPairState(I, x, y, "symmetric", None, 0.0)
    else:
        t, side = dch.sample_exit(0.0, Interval(lo, hi), gen)
        elapsed += t
        stages.append(StageRecord("stage_a", lo, hi, side, t))
        if side == "left":
            sym_gap = gap
            CoupledPairState(I, x + lo, y + lo, "symmetric", None, elapsed)
        else:
            j1 = sample_jump(nu, gen)
            CoupledPairState(I, I.b - gap, j1, "stage_b", j1, elapsed)

    if sym_gap is None:
        lo, hi = _stage_b_interval(I, gap, j1)
        t, side = dch.sample_exit(0.0, Interval(lo, hi), gen)
        elapsed += t
        stages.append(StageRecord("stage_b", lo, hi, side, t))
        if side == "left":
            pos = 0.5 * (I.b + j1 - gap)
            CoupledPairState(I, pos, pos, "coupled", None, elapsed)
            return CouplingRecord(I, tuple(stages), None, None, elapsed, pos)
        CoupledPairState(I, I.b - 0.5 * gap, j1 - 0.5 * gap, "stage_c", j1, elapsed)

        lo, hi = _stage_c_interval(I, gap, j1)
        t, side = dch.sample_exit(0.0, Interval(lo, hi), gen)
        elapsed += t
        stages.append(StageRecord("stage_c", lo, hi, side, t))
        if side == "right":
            # upper copy hits b and jumps onto the carried target
            CoupledPairState(I, j1, j1, "coupled", None, elapsed)
            return CouplingRecord(I, tuple(stages), None, None, elapsed, float(j1))
        sym_gap = I.b - j1
        CoupledPairState(I, 0.5 * (I.a + j1), I.b - 0.5 * (j1 - I.a),
                         "symmetric", None, elapsed)

    itilde = symmetric_interval(I, sym_gap)
    t, side = dch.sample_exit(0.0, itilde, gen)
    elapsed += t
    if side == "left":
        pos = 0.5 * (I.a + I.b)              # mirror copies meet at the center
    else:
        pos = sample_jump(nu, gen)           # simultaneous boundary hit, shared draw
    CoupledPairState(I, pos, pos, "coupled", None, elapsed)
    return CouplingRecord(I, tuple(stages), sym_gap, t, elapsed, float(pos))


def staged_coupling_times(x: float, y: float, nu: JumpMeasure, n: int, rng):
    """Vectorized coupling times for n independent runs of the staged sampler.

    Same law as staged_coupling_sample; per-sample stage intervals are
    rescaled onto (0,1) so one batched exit call serves every carried
    target.  Returns (times, visited) with visited a small string code per
    sample.
    """
    if n < 1:
        raise ValidationError("need at least one replicate")
    I = nu.interval
    gen = _gen(rng)
    if x == y:
        return np.zeros(n), np.full(n, "none", dtype=object)
    x, y, nu = normalize_pair(x, y, nu)
    gap = y - x
    times = np.zeros(n)
    visited = np.full(n, "", dtype=object)
    sym_gap = np.full(n, np.nan)

    lo, hi = _stage_a_interval(I, x, y)
    if lo >= 0.0:
        sym_gap[:] = gap
    else:
        t, right = _exit_rescaled(np.full(n, lo), np.full(n, hi), gen)
        times += t
        visited[:] = "a"
        sym_gap[~right] = gap
        if np.any(right):
            j1 = _jump_batch(nu, int(right.sum()), gen)
            lob, hib = _stage_b_interval(I, gap, j1)
            tb, rb = _exit_rescaled(lob, hib, gen)
            times[right] += tb
            visited[right] = "a-b"
            idx_b = np.flatnonzero(right)
            if np.any(rb):
                idx_c = idx_b[rb]
                j1c = j1[rb]
                loc, hic = _stage_c_interval(I, gap, j1c)
                tc, rc = _exit_rescaled(loc, hic, gen)
                times[idx_c] += tc
                visited[idx_c] = "a-b-c"
                sym_idx = idx_c[~rc]
                sym_gap[sym_idx] = I.b - j1c[~rc]

    in_sym = ~np.isnan(sym_gap)
    if np.any(in_sym):
        g = sym_gap[in_sym]
        ts, _ = _exit_rescaled(-0.5 * g, 0.5 * (I.length - g), gen)
        times[in_sym] += ts
        visited[in_sym] = [v + "-sym" if v else "sym" for v in visited[in_sym]]
    return times, visited


def _exit_rescaled(lo: np.ndarray, hi: np.ndarray, gen):
    """Joint (time, is_right) exits of BM from 0 out of per-sample (lo, hi)."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    w = hi - lo
    t, right = dch.exit_from_uniforms(_UNIT, -lo / w,
                                      gen.uniform(size=lo.size),
                                      gen.uniform(size=lo.size))
    return t * w**2, right


def _jump_batch(nu: JumpMeasure, n: int, gen) -> np.ndarray:
    if nu.kind == "dirac":
        return np.full(n, nu.atoms[0])
    return np.asarray(nu.quantile(gen.uniform(size=n)), dtype=float)


# ---------------------------------------------------------------------------
# domination and tail comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DominationReport:
    """Survival of exit times from off-center starts versus the center."""

    interval: Interval
    x_grid: tuple
    t_grid: tuple
    survival: tuple              # rows per x, columns per t
    center: tuple

    @property
    def max_violation(self) -> float:
        rows = np.asarray(self.survival)
        return float(np.max(rows - np.asarray(self.center)[None, :]))

    def ok(self, tol: float = 1e-12) -> bool:
        return self.max_violation <= tol


def domination_check(interval: Interval, x_grid, t_grid) -> DominationReport:
    """Exact-series check that the center start has the heaviest exit tail."""
    xs = np.asarray(x_grid, dtype=float)
    ts = np.asarray(t_grid, dtype=float)
    c = 0.5 * (interval.a + interval.b)
    center = dch.survival(interval, np.full_like(ts, c), ts)
    rows = [dch.survival(interval, np.full_like(ts, x), ts) for x in xs]
    return DominationReport(interval, tuple(float(v) for v in xs),
                            tuple(float(v) for v in ts),
                            tuple(tuple(float(v) for v in row) for row in rows),
                            tuple(float(v) for v in center))


@dataclass(frozen=True)
class TailComparison:
    """Empirical coupling-time tail against the sum-of-five-exits bound."""

    t_grid: tuple
    surv_coupl: tuple
    se_coupl: tuple
    surv_sum5: tuple
    se_sum5: tuple
    chernoff: tuple
    exponent: float
    exponent_se: float
    n_samples: int

    @property
    def dominated(self) -> bool:
        """tau_coupl survival below the sum-of-five within 3 sigma, pointwise."""
        s = np.asarray(self.surv_coupl)
        b = np.asarray(self.surv_sum5)
        sig = np.hypot(np.asarray(self.se_coupl), np.asarray(self.se_sum5))
        return bool(np.all(s <= b + 3.0 * sig))

    @property
    def chernoff_dominates(self) -> bool:
        b = np.asarray(self.surv_sum5)
        return bool(np.all(np.asarray(self.chernoff) >= b - 3.0 * np.asarray(self.se_sum5)))

    def rows(self):
        return list(zip(self.t_grid, self.surv_coupl, self.surv_sum5, self.chernoff))


def _survival_curve(samples: np.ndarray, t_grid: np.ndarray):
    n = samples.size
    surv = (samples[None, :] > t_grid[:, None]).mean(axis=1)
    se = np.sqrt(np.clip(surv * (1.0 - surv), 0.0, None) / n)
    return surv, se


def chernoff_envelope(interval: Interval, t_grid, k: int = 5, grid: int = 400):
    """min over lam of (E e^{lam xi})^k e^{-lam t}, xi a half-length exit time."""
    L = interval.length
    abscissa = 2.0 * np.pi**2 / L**2
    lams = np.linspace(0.0, abscissa, grid, endpoint=False)[1:]
    mgf = 1.0 / np.cos(0.25 * L * np.sqrt(2.0 * lams))
    ts = np.asarray(t_grid, dtype=float)
    curves = mgf[None, :] ** k * np.exp(-lams[None, :] * ts[:, None])
    return np.minimum(curves.min(axis=1), 1.0)


def _tail_exponent(t_grid, surv, n):
    """WLS fit of -d/dt log-survival where the tail is resolved."""
    t = np.asarray(t_grid, dtype=float)
    s = np.asarray(surv, dtype=float)
    win = (s >= 1e-4) & (s <= 0.5)
    if win.sum() < 2:
        raise WindowError("survival grid leaves fewer than two usable tail points")
    tw, sw = t[win], s[win]
    w = n * sw / (1.0 - sw)                  # 1 / Var(log s_hat)
    X = np.column_stack([tw, np.ones_like(tw)])
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    beta = cov @ (X.T @ (w * np.log(sw)))
    return float(-beta[0]), float(np.sqrt(cov[0, 0]))


def tail_vs_sum5(x: float, y: float, nu: JumpMeasure, n_samples: int,
                 t_grid, rng) -> TailComparison:
    """MC comparison of tau_coupl against the five-exit-time bound."""
    I = nu.interval
    gen = _gen(rng)
    ts = np.asarray(t_grid, dtype=float)
    taus, _ = staged_coupling_times(x, y, nu, n_samples, gen)

    half = Interval(-0.25 * I.length, 0.25 * I.length)
    xi, _ = dch.sample_exit_batch(half, np.zeros(5 * n_samples), gen)
    sums = xi.reshape(n_samples, 5).sum(axis=1)

    surv_c, se_c = _survival_curve(taus, ts)
    surv_s, se_s = _survival_curve(sums, ts)
    env = chernoff_envelope(I, ts)
    exponent, exp_se = _tail_exponent(ts, surv_c, n_samples)
    return TailComparison(
        t_grid=tuple(float(v) for v in ts),
        surv_coupl=tuple(float(v) for v in surv_c),
        se_coupl=tuple(float(v) for v in se_c),
        surv_sum5=tuple(float(v) for v in surv_s),
        se_sum5=tuple(float(v) for v in se_s),
        chernoff=tuple(float(v) for v in env),
        exponent=exponent,
        exponent_se=exp_se,
        n_samples=n_samples,
    )


# ---------------------------------------------------------------------------
# discretized oracle
# ---------------------------------------------------------------------------

_PH_A, _PH_B, _PH_C, _PH_SYM, _PH_MERGED, _PH_DONE = range(6)


def _bridge_crossed(prev, cur, lo, hi, dt, gen):
    """First-passage detection for one Gaussian step, bridge-corrected.

    A step ending inside the barriers may still have crossed in between;
    the Brownian bridge crossing probability exp(-2 d_prev d_cur / dt)
    restores the O(sqrt(dt)) mass a naive endpoint check loses.
    """
    p_lo = np.exp(-2.0 * np.clip(prev - lo, 0.0, None)
                  * np.clip(cur - lo, 0.0, None) / dt)
    p_hi = np.exp(-2.0 * np.clip(hi - prev, 0.0, None)
                  * np.clip(hi - cur, 0.0, None) / dt)
    hit_lo = (cur <= lo) | (gen.uniform(size=cur.shape) < p_lo)
    hit_hi = (cur >= hi) | (gen.uniform(size=cur.shape) < p_hi)
    both = hit_lo & hit_hi
    if np.any(both):
        hit_hi = np.where(both, p_hi >= p_lo, hit_hi)
        hit_lo = np.where(both, ~hit_hi, hit_lo)
    return hit_lo, hit_hi


def _oracle_batch(x: float, y: float, nu: JumpMeasure, dt: float, rng,
                  n: int, horizon: float | None = None):
    """Gaussian-step replica of the staged construction, n samples at once.

    The driving BM advances in dt increments with Brownian-bridge crossing
    corrections at the current stage's two barriers.  Without a horizon,
    returns the n coupling times.  With one, also tracks the x-coordinate
    through stages and beyond coalescence (as a discretized copy of the
    jump process) and returns (coupling times, positions at the horizon).
    """
    if dt > 1e-4:
        raise ValidationError("oracle requires dt <= 1e-4")
    I = nu.interval
    gen = _gen(rng)

    phase = np.full(n, _PH_A, dtype=np.int8)
    b_lo = np.empty(n)
    b_hi = np.empty(n)
    xbase = np.empty(n)
    xsign = np.ones(n)
    bpos = np.zeros(n)
    j1 = np.full(n, np.nan)
    ctime = np.full(n, np.nan)
    cpos = np.full(n, np.nan)

    if x == y:
        if horizon is None:
            return np.zeros(n)
        if not I.contains(x):
            raise DomainError(f"pair must lie inside ({I.a}, {I.b})")
        ctime[:] = 0.0
        cpos[:] = float(x)
        phase[:] = _PH_MERGED
        xbase[:] = float(x)
        b_lo[:], b_hi[:] = I.a - x, I.b - x
        gap = 0.0
    else:
        xn, yn, nu = normalize_pair(x, y, nu)
        gap = yn - xn
        lo_a, hi_a = _stage_a_interval(I, xn, yn)
        if lo_a >= 0.0:
            phase[:] = _PH_SYM
            b_lo[:], b_hi[:] = -0.5 * gap, 0.5 * (I.length - gap)
            xbase[:] = xn
            xsign[:] = -1.0
        else:
            b_lo[:], b_hi[:] = lo_a, hi_a
            xbase[:] = xn

    sqdt = np.sqrt(dt)
    steps = 0
    max_steps = 10_000_000           # runaway guard, far beyond any tail
    while True:
        live = phase != _PH_DONE
        if not np.any(live):
            break
        if horizon is not None and steps * dt >= horizon:
            break
        if steps > max_steps:
            raise ValidationError("oracle exceeded its step budget")
        steps += 1
        t_now = steps * dt

        idx = np.flatnonzero(live)
        prev = bpos[idx]
        cur = prev + gen.normal(size=idx.size) * sqdt
        hit_lo, hit_hi = _bridge_crossed(prev, cur, b_lo[idx], b_hi[idx], dt, gen)
        bpos[idx] = np.where(hit_lo | hit_hi, bpos[idx], cur)

        for which, hit in (("lo", hit_lo), ("hi", hit_hi)):
            sub = idx[hit]
            if sub.size == 0:
                continue
            ph = phase[sub]

            sel = sub[ph == _PH_A]
            if sel.size:
                if which == "lo":
                    phase[sel] = _PH_SYM
                    xbase[sel] = xbase[sel] + b_lo[sel]
                    xsign[sel] = -1.0
                    b_lo[sel], b_hi[sel] = -0.5 * gap, 0.5 * (I.length - gap)
                else:
                    draws = _jump_batch(nu, sel.size, gen)
                    j1[sel] = draws
                    phase[sel] = _PH_B
                    xbase[sel] = I.b - gap
                    lob, hib = _stage_b_interval(I, gap, draws)
                    b_lo[sel], b_hi[sel] = lob, hib
                bpos[sel] = 0.0

            sel = sub[ph == _PH_B]
            if sel.size:
                if which == "lo":
                    ctime[sel] = t_now
                    cpos[sel] = 0.5 * (I.b + j1[sel] - gap)
                    _finish(sel, phase, horizon, xbase, xsign, bpos, b_lo, b_hi, cpos, I)
                else:
                    phase[sel] = _PH_C
                    xbase[sel] = I.b - 0.5 * gap
                    loc, hic = _stage_c_interval(I, gap, j1[sel])
                    b_lo[sel], b_hi[sel] = loc, hic
                    bpos[sel] = 0.0

            sel = sub[ph == _PH_C]
            if sel.size:
                if which == "hi":
                    ctime[sel] = t_now
                    cpos[sel] = j1[sel]
                    _finish(sel, phase, horizon, xbase, xsign, bpos, b_lo, b_hi, cpos, I)
                else:
                    g2 = I.b - j1[sel]
                    phase[sel] = _PH_SYM
                    xbase[sel] = I.b - 0.5 * (j1[sel] - I.a)
                    xsign[sel] = 1.0
                    b_lo[sel], b_hi[sel] = -0.5 * g2, 0.5 * (I.length - g2)
                    bpos[sel] = 0.0

            sel = sub[ph == _PH_SYM]
            if sel.size:
                ctime[sel] = t_now
                if which == "lo":
                    cpos[sel] = 0.5 * (I.a + I.b)
                else:
                    cpos[sel] = _jump_batch(nu, sel.size, gen)
                _finish(sel, phase, horizon, xbase, xsign, bpos, b_lo, b_hi, cpos, I)

            sel = sub[ph == _PH_MERGED]
            if sel.size:
                # coalesced copy hit a boundary: redistribute and keep going
                draws = _jump_batch(nu, sel.size, gen)
                xbase[sel] = draws
                bpos[sel] = 0.0
                b_lo[sel], b_hi[sel] = I.a - draws, I.b - draws

    if horizon is None:
        return ctime
    positions = xbase + xsign * bpos
    return ctime, positions


def _finish(sel, phase, horizon, xbase, xsign, bpos, b_lo, b_hi, cpos, I):
    """Coalescence: stop, or carry on as one discretized jump process."""
    if horizon is None:
        phase[sel] = _PH_DONE
        return
    phase[sel] = _PH_MERGED
    xbase[sel] = cpos[sel]
    xsign[sel] = 1.0
    bpos[sel] = 0.0
    b_lo[sel], b_hi[sel] = I.a - cpos[sel], I.b - cpos[sel]


def discretized_oracle(x: float, y: float, nu: JumpMeasure, dt: float, rng) -> float:
    """One brute-force coupling time; validation target for the exact sampler."""
    return float(_oracle_batch(x, y, nu, dt, rng, 1)[0])
