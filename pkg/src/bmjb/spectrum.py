"""Characteristic spectrum of the jump process.

A function u = A s + B c with u'' = -2 lambda u belongs to the generator
domain iff u(a) and u(b) both equal the jump-measure average of u; nontrivial
(A, B) exist exactly where a 2x2 determinant D(lambda) vanishes.  D is entire
(s and c are even in sqrt(2 lambda), so no branch is ever chosen), its root
at 0 is structural, and the decay rate of the semigroup is the smallest real
part among the remaining roots.

Roots are localized by argument-principle winding counts on rectangles,
subdivided until each cell isolates one root counted with multiplicity, then
polished by Newton iterations running on analytic lambda-derivatives of the
basis.  Clusters that refuse to separate below a diameter floor are treated
as one multiple root and polished on the (m-1)-th derivative; the two-measure
optimum sits at a genuine triple root, which is where that path earns its
keep.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial

import numpy as np

from .errors import SearchError, ToleranceError, ValidationError
from .model import Interval, JumpMeasure, quantize

SERIES_SWITCH = 1e-2        # |2 lambda| L^2 below this: power series, no 1/lambda
CONTOUR_POINTS = 256        # initial samples per rectangle side
CONTOUR_CAP = 8192
WINDING_TOL = 1e-3
MAX_NUDGES = 5
RESIDUAL_FACTOR = 1e-10
NOISE_FACTOR = 100.0        # residual floor in units of the cancellation noise
_GL_CELL = 8                # per-cell nodes for grid measures
_GL_GLOBAL = 64             # global nodes for the quasistationary density


# ---------------------------------------------------------------------------
# entire basis s, c and their lambda-derivative ladders
# ---------------------------------------------------------------------------


def _ladder_trig(lam, u, order):
    """S_j, C_j at |2 lambda| L^2 >= SERIES_SWITCH via explicit recursions.

    S_0 = sin(omega u)/omega, C_0 = cos(omega u) with omega = sqrt(2 lambda);
    differentiating the defining relations once gives
      S_{j+1} = (u C_j - (2j+1) S_j) / (2 lambda),  C_{j+1} = -u S_j,
    which stay stable because the trig branch keeps |2 lambda| away from 0.
    """
    om = np.sqrt(2.0 * lam)[:, None]
    arg = om * u[None, :]
    S = np.empty((order + 1,) + arg.shape, dtype=complex)
    C = np.empty_like(S)
    S[0] = np.sin(arg) / om
    C[0] = np.cos(arg)
    two_lam = (2.0 * lam)[:, None]
    for j in range(order):
        S[j + 1] = (u[None, :] * C[j] - (2 * j + 1) * S[j]) / two_lam
        C[j + 1] = -u[None, :] * S[j]
    return S, C


def _ladder_series(lam, u, order, tol=1e-20):
    """S_j, C_j near lambda = 0 by the power series in z = 2 lambda u^2."""
    z = 2.0 * lam[:, None] * (u[None, :] ** 2)
    S = np.zeros((order + 1,) + z.shape, dtype=complex)
    C = np.zeros_like(S)
    for j in range(order + 1):
        pref = u[None, :] ** (2 * j) * (-2.0) ** j
        fs = np.zeros(z.shape, dtype=complex)
        fc = np.zeros(z.shape, dtype=complex)
        term = np.ones(z.shape, dtype=complex)
        i = 0
        while True:
            fact = factorial(j + i) // factorial(i)
            fs += term * (fact / float(factorial(2 * j + 2 * i + 1)))
            fc += term * (fact / float(factorial(2 * j + 2 * i)))
            i += 1
            term = term * (-z)
            if i > 30 or np.max(np.abs(term)) * fact < tol:
                break
        S[j] = pref * u[None, :] * fs
        C[j] = pref * fc
    return S, C


def _ladders(lam, u, order, length):
    """Dispatch between the trig and series evaluations per lambda."""
    lam = np.asarray(lam, dtype=complex)
    u = np.asarray(u, dtype=float)
    small = np.abs(2.0 * lam) * length**2 < SERIES_SWITCH
    if not np.any(small):
        return _ladder_trig(lam, u, order)
    if np.all(small):
        return _ladder_series(lam, u, order)
    S = np.empty((order + 1, lam.size, u.size), dtype=complex)
    C = np.empty_like(S)
    St, Ct = _ladder_trig(lam[~small], u, order)
    Ss, Cs = _ladder_series(lam[small], u, order)
    S[:, ~small], C[:, ~small] = St, Ct
    S[:, small], C[:, small] = Ss, Cs
    return S, C


def _measure_nodes(nu: JumpMeasure) -> tuple:
    """Quadrature representation (distances from a, weights) of a measure.

    Atomic kinds are exact; grid cells get Gauss-Legendre nodes sized so the
    basis oscillation across one cell is resolved to machine accuracy in the
    default search region; the quasistationary density takes a global rule.
    """
    iv = nu.interval
    if nu.kind == "dirac" or nu.kind == "mixture":
        atoms = np.asarray(nu.atoms, dtype=float)
        wts = np.asarray(nu.weights, dtype=float)
        return atoms - iv.a, wts
    if nu.kind == "grid":
        vals = np.asarray(nu.values, dtype=float)
        h = iv.length / vals.size
        gx, gw = np.polynomial.legendre.leggauss(_GL_CELL)
        lo = np.arange(vals.size) * h
        pts = (lo[:, None] + 0.5 * h * (gx[None, :] + 1.0)).ravel()
        wts = (vals[:, None] * (0.5 * h * gw)[None, :]).ravel()
        return pts, wts
    gx, gw = np.polynomial.legendre.leggauss(_GL_GLOBAL)
    L = iv.length
    pts = 0.5 * L * (gx + 1.0)
    dens = (np.pi / (2.0 * L)) * np.sin(np.pi * pts / L)
    return pts, dens * 0.5 * L * gw


class CharacteristicSystem:
    """Entire basis plus measure moments for one or two jump measures.

    nu constrains the value at a, nu_b (defaulting to nu) the value at b.
    """

    def __init__(self, nu: JumpMeasure, nu_b: JumpMeasure | None = None):
        if nu_b is not None and nu_b.interval != nu.interval:
            raise ValidationError("both measures must live on the same interval")
        self.interval = nu.interval
        self.nu = nu
        self.nu_b = nu_b
        self._nodes_a = _measure_nodes(nu)
        self._nodes_b = self._nodes_a if nu_b is None else _measure_nodes(nu_b)

    # -- basis evaluators ---------------------------------------------------

    def s(self, x, lam):
        """Solution with s(a) = 0, s'(a) = 1, entire in lam."""
        u = np.atleast_1d(np.asarray(x, dtype=float)) - self.interval.a
        S, _ = _ladders(np.atleast_1d(lam), u, 0, self.interval.length)
        return S[0]

    def c(self, x, lam):
        """Solution with c(a) = 1, c'(a) = 0, entire in lam."""
        u = np.atleast_1d(np.asarray(x, dtype=float)) - self.interval.a
        _, C = _ladders(np.atleast_1d(lam), u, 0, self.interval.length)
        return C[0]

    def moments(self, lam, order: int = 0, side: str = "a"):
        """(S_nu^(j), C_nu^(j)) for j = 0..order, shape (order+1, len(lam))."""
        pts, wts = self._nodes_a if side == "a" else self._nodes_b
        S, C = _ladders(np.atleast_1d(lam), pts, order, self.interval.length)
        return S @ wts, C @ wts

    def det_ladder(self, lam, order: int = 0):
        """D and its lambda-derivatives up to the requested order."""
        lam = np.atleast_1d(np.asarray(lam, dtype=complex))
        L = np.array([self.interval.length])
        Sa, Ca = self.moments(lam, order, "a")
        Sb, Cb = self.moments(lam, order, "b")
        SL, CL = _ladders(lam, L, order, self.interval.length)
        SL, CL = SL[:, :, 0], CL[:, :, 0]
        G = CL - Cb                       # value matching at b, cos part
        H = SL - Sb                       # value matching at b, sin part
        Q = Ca.copy()
        Q[0] = Q[0] - 1.0                 # value matching at a
        D = np.zeros((order + 1, lam.size), dtype=complex)
        for j in range(order + 1):
            acc = np.zeros(lam.size, dtype=complex)
            for i in range(j + 1):
                acc += comb(j, i) * (Sa[i] * G[j - i] - Q[i] * H[j - i])
            D[j] = acc
        return D

    def noise_floor(self, lam):
        """Cancellation scale of D: eps times the absolute-term sum.

        |D| values below this are numerically zero; no polish can be asked
        to land deeper.
        """
        lam = np.atleast_1d(np.asarray(lam, dtype=complex))
        L = np.array([self.interval.length])
        Sa, Ca = self.moments(lam, 0, "a")
        Sb, Cb = self.moments(lam, 0, "b")
        SL, CL = _ladders(lam, L, 0, self.interval.length)
        mags = (np.abs(Sa[0]) * (np.abs(CL[0, :, 0]) + np.abs(Cb[0]))
                + (np.abs(Ca[0]) + 1.0) * (np.abs(SL[0, :, 0]) + np.abs(Sb[0])))
        return np.finfo(float).eps * mags


def char_det(lam, system: CharacteristicSystem):
    """Determinant of the value-matching system; entire, vanishing at roots."""
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=complex))
    D = system.det_ladder(lam_arr, 0)[0]
    if np.isscalar(lam) or np.asarray(lam).ndim == 0:
        return complex(D[0])
    return D


# ---------------------------------------------------------------------------
# argument-principle search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchRegion:
    """Rectangle in the lambda plane with contour-quadrature controls."""

    re_min: float
    re_max: float
    im_max: float
    max_depth: int = 48
    points: int = CONTOUR_POINTS

    def __post_init__(self):
        if not (0 < self.re_min < self.re_max):
            raise ValidationError("need 0 < re_min < re_max")
        if self.im_max <= 0:
            raise ValidationError("im_max must be positive")


def default_region(interval: Interval) -> SearchRegion:
    lam2 = 9.0 * np.pi**2 / (2.0 * interval.length**2)
    return SearchRegion(re_min=1e-6, re_max=8.0 * lam2, im_max=4.0 * lam2)


@dataclass(frozen=True)
class SpectrumResult:
    """Roots with multiplicities plus the diagnostics that certify them."""

    eigenvalues: tuple          # ((lambda, multiplicity), ...) sorted by Re
    residuals: tuple            # |D(lambda)| per root
    windings: tuple             # ((re0, re1, im0, im1), count) per counted cell
    region: SearchRegion

    @property
    def gap(self) -> float:
        if not self.eigenvalues:
            raise SearchError("no nonzero roots in the searched region")
        return min(ev.real for ev, _ in self.eigenvalues)

    @property
    def total_multiplicity(self) -> int:
        return sum(m for _, m in self.eigenvalues)


def _rect_samples(rect, points):
    r0, r1, i0, i1 = rect
    top = np.linspace(r0, r1, points, endpoint=False)
    right = np.linspace(i0, i1, points, endpoint=False)
    bottom = np.linspace(r1, r0, points, endpoint=False)
    left = np.linspace(i1, i0, points, endpoint=False)
    lam = np.concatenate([
        top + 1j * i0,
        r1 + 1j * right,
        bottom + 1j * i1,
        r0 + 1j * left,
    ])
    return np.append(lam, lam[0])


def _winding(system, rect, points):
    """Phase-tracked winding number of D/lambda around the rectangle.

    Returns (count, ok, max_step).  Not ok when the total misses an integer
    by more than WINDING_TOL, a phase step exceeds pi/2 (contour too coarse
    or a zero too close), or the contour passes suspiciously close to a zero.
    """
    lam = _rect_samples(rect, points)
    vals = system.det_ladder(lam, 0)[0] / lam
    mag = np.abs(vals)
    scale = np.median(mag)
    if scale == 0 or np.min(mag) < 1e-12 * scale:
        return 0, False, np.pi
    steps = np.angle(vals[1:] / vals[:-1])
    max_step = float(np.max(np.abs(steps)))
    if max_step > 0.5 * np.pi:
        return 0, False, max_step
    total = float(np.sum(steps)) / (2.0 * np.pi)
    count = int(round(total))
    ok = abs(total - count) < WINDING_TOL and count >= 0
    return count, ok, max_step


def _stable_winding(system, rect, points):
    """Refine the contour until the count is trustworthy.

    A clean pass (integer total, all phase steps below 0.3 pi) is accepted
    outright; marginal passes must agree across a doubling, since a zero
    lurking near the contour can hide a full phase turn between samples.
    """
    prev = None
    pts = points
    while pts <= CONTOUR_CAP:
        count, ok, max_step = _winding(system, rect, pts)
        if ok and max_step < 0.3 * np.pi:
            return count, True
        if ok and prev == count:
            return count, True
        prev = count if ok else None
        pts *= 2
    return 0, False


def _counted(system, rect, points, attempt_scale=1.0):
    """Winding count with automatic boundary nudging, MAX_NUDGES retries."""
    r0, r1, i0, i1 = rect
    for attempt in range(MAX_NUDGES):
        count, ok = _stable_winding(system, (r0, r1, i0, i1), points)
        if ok:
            return count, (r0, r1, i0, i1)
        bump = 1e-6 * (1 + attempt) * attempt_scale * max(1.0, abs(r1), abs(i1))
        if r0 > 2e-6:
            r0 -= bump
        r1 += bump
        i0 -= bump
        i1 += bump
    raise SearchError(
        f"winding count unstable on {rect} after {MAX_NUDGES} nudges")


def _newton(system, start, mult, rect, scale, max_iter=80):
    """Polish one root of multiplicity mult inside its counted cell.

    Newton runs on the (mult-1)-th derivative, whose zero at the root is
    simple.  Steps that would leave the (slightly padded) cell are halved
    until they stay inside: the winding count certifies the root is in this
    cell, so escaping would only trade it for some other cell's root.  The
    residual reported is |D| itself.

    Acceptance adds the evaluation noise floor to the contour-relative
    threshold.  Around a tight cluster the cell contour magnitude collapses
    like r^mult and would otherwise demand residuals below what the
    cancellation noise of D permits; a cluster whose |D| sits at the noise
    floor is numerically a multiple root and is reported as one.
    """
    r0, r1, i0, i1 = rect
    pad_r, pad_i = 0.02 * (r1 - r0), 0.02 * (i1 - i0)
    box = (r0 - pad_r, r1 + pad_r, i0 - pad_i, i1 + pad_i)
    jitters = [0.0, 0.31 + 0.17j, -0.22 + 0.29j, 0.11 - 0.33j]
    for jit in jitters:
        lam = complex(start) + jit.real * 0.5 * (r1 - r0) \
            + 1j * jit.imag * 0.5 * (i1 - i0)
        for _ in range(max_iter):
            D = system.det_ladder(np.array([lam]), mult)
            g, gp = D[mult - 1, 0], D[mult, 0]
            if gp == 0:
                break
            step = g / gp
            for _ in range(60):
                cand = lam - step
                if (box[0] <= cand.real <= box[1]
                        and box[2] <= cand.imag <= box[3]):
                    break
                step *= 0.5
            else:
                break
            lam = cand
            if abs(step) < 1e-15 * (1.0 + abs(lam)):
                resid = abs(system.det_ladder(np.array([lam]), 0)[0, 0])
                floor = NOISE_FACTOR * float(
                    system.noise_floor(np.array([lam]))[0])
                if resid < RESIDUAL_FACTOR * scale + floor:
                    return lam, resid
                break
    raise ToleranceError(
        f"root polish failed near {start} (multiplicity {mult})")


def _split(rect, eta=0.013):
    """Quadrisect, nudging split lines off-center to dodge axis-bound roots."""
    r0, r1, i0, i1 = rect
    rm = r0 + (0.5 + eta) * (r1 - r0)
    im = i0 + (0.5 + eta) * (i1 - i0)
    return [(r0, rm, i0, im), (rm, r1, i0, im),
            (r0, rm, im, i1), (rm, r1, im, i1)]


def find_spectrum(system: CharacteristicSystem,
                  region: SearchRegion | None = None) -> SpectrumResult:
    """All nonzero roots (with multiplicity) of char_det in the region.

    lambda = 0 is removed analytically by counting D/lambda.  Cells keep
    subdividing while they hold more than one root and stay wider than the
    cluster floor max(1e-3, 1e-4 |lambda|); a cell at the floor is polished
    as one root of the full cell multiplicity.
    """
    if region is None:
        region = default_region(system.interval)
    top = (region.re_min, region.re_max, -region.im_max, region.im_max)
    count, top = _counted(system, top, region.points)
    windings = [(top, count)]
    roots, residuals = [], []
    queue = [(top, count, 0)]
    while queue:
        rect, count, depth = queue.pop()
        if count == 0:
            continue
        center = complex(0.5 * (rect[0] + rect[1]), 0.5 * (rect[2] + rect[3]))
        diam = max(rect[1] - rect[0], rect[3] - rect[2])
        floor = max(1e-3, 1e-4 * abs(center))
        if count == 1 or diam <= floor:
            lam_contour = _rect_samples(rect, region.points)
            scale = float(np.max(np.abs(
                system.det_ladder(lam_contour, 0)[0])))
            try:
                root, resid = _newton(system, center, count, rect, scale)
            except ToleranceError:
                if diam <= floor:
                    raise
                root = None       # wide cell, bad basin: subdivide instead
            if root is not None:
                if abs(root.imag) < 1e-12 * max(1.0, abs(root.real)):
                    root = complex(root.real, 0.0)
                roots.append((root, count))
                residuals.append(resid)
                continue
        if depth >= region.max_depth:
            raise SearchError(f"subdivision depth exhausted at {rect}")
        total = 0
        children = []
        for child in _split(rect, eta=0.013 * (1 + depth % 3)):
            c_count, c_rect = _counted(system, child, region.points)
            total += c_count
            children.append((c_rect, c_count, depth + 1))
            windings.append((c_rect, c_count))
        if total != count:
            # nudged children can overlap an edge root; recount the parent
            count2, rect2 = _counted(system, rect, region.points, 3.0)
            if total != count2:
                raise SearchError(
                    f"child winding counts {total} != parent {count} at {rect}")
        queue.extend(children)
    order = np.argsort([r.real for r, _ in roots])
    return SpectrumResult(
        eigenvalues=tuple((roots[i][0], roots[i][1]) for i in order),
        residuals=tuple(residuals[i] for i in order),
        windings=tuple(windings),
        region=region,
    )


# ---------------------------------------------------------------------------
# gap and sweeps
# ---------------------------------------------------------------------------


def spectral_gap(nu: JumpMeasure, nu_b: JumpMeasure | None = None,
                 region: SearchRegion | None = None) -> float:
    """Smallest real part among the nonzero characteristic roots.

    The region grows (re_max doubling) until at least three nonzero roots are
    inside, so the reported minimum cannot be an artifact of a window that
    clipped everything but a spurious straggler.
    """
    system = CharacteristicSystem(nu, nu_b)
    reg = region if region is not None else default_region(system.interval)
    for _ in range(5):
        result = find_spectrum(system, reg)
        if result.total_multiplicity >= 3:
            return result.gap
        reg = SearchRegion(reg.re_min, 2.0 * reg.re_max, reg.im_max,
                           reg.max_depth, reg.points)
    raise SearchError("fewer than three roots after region expansion")


@dataclass(frozen=True)
class SweepTable:
    """Gap as a function of a discretization level, with its limit."""

    params: tuple
    gaps: tuple
    limit_gap: float

    @property
    def max_deviation(self) -> float:
        return max(abs(g - self.limit_gap) for g in self.gaps)

    def rows(self):
        return list(zip(self.params, self.gaps))


def continuity_sweep(nu: JumpMeasure, n_list, partner: JumpMeasure | None = None,
                     mode: str = "quantize") -> SweepTable:
    """Gap along a quantization or boundary-truncation refinement of nu.

    mode "quantize" replaces nu by its n-atom midpoint-quantile version;
    mode "truncate" conditions nu on staying 1/n away from the boundary.
    partner, when given, is held fixed as the second measure.
    """
    if mode not in ("quantize", "truncate"):
        raise ValidationError("mode must be 'quantize' or 'truncate'")
    gaps = []
    for n in n_list:
        if mode == "quantize":
            approx = quantize(nu, int(n))
        else:
            approx = nu.truncate_distance(1.0 / float(n))
        gaps.append(spectral_gap(approx, partner))
    limit = spectral_gap(nu, partner)
    return SweepTable(params=tuple(int(n) for n in n_list),
                      gaps=tuple(gaps), limit_gap=limit)
