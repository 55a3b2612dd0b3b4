"""Band spectra of Fibonacci periodic approximants and their quantitative laws.

The level-k approximant spectrum is the set of energies where the block
trace satisfies |x_k| <= 2.  It coincides with the spectrum of the periodic
chain whose period is the length-F_k prefix of the Fibonacci potential, so
its band edges are the eigenvalues of the F_k x F_k periodic (trace = +2)
and antiperiodic (trace = -2) matrices.  That eigenvalue route finds every
edge to machine precision with no sampling-resolution risk; a short Newton
polish against the trace polynomial then tightens the edges to the
requested tolerance.

For coupling above 4 three consecutive traces can never be simultaneously
bounded by 2 in absolute value, which forces the band combinatorics: each
band of level k lies either inside a band of level k-1 (type A) or inside a
band of level k-2 (type B), with fixed genealogy counts, bounded derivative
ratios between consecutive levels, and bandwidths shrinking no faster than
(2 lambda + 22) per level.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import qmc

from quasidyn.lattice import DomainError, Model, PotentialSpec, potential_values
from quasidyn.traces import (
    fib_trace_orbit_grid,
    fibonacci_numbers,
    trace_derivative_grid,
)

#: Inverse golden mean; its reciprocal (1 + sqrt 5)/2 drives all exponents.
_LOG_OMEGA_INV = math.log((1.0 + math.sqrt(5.0)) / 2.0)


class BandCountError(RuntimeError):
    """Band count disagrees with F_k in the regime where it is guaranteed."""


class ClassificationError(RuntimeError):
    """A band fits neither or both of the parent containment rules."""


class BandKind(enum.Enum):
    TYPE_A = "A"
    TYPE_B = "B"
    UNCLASSIFIED = "?"


@dataclass(frozen=True)
class Band:
    lo: float
    hi: float
    k: int
    kind: BandKind = BandKind.UNCLASSIFIED

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise DomainError(f"band lo={self.lo} exceeds hi={self.hi}")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, other: "Band", tol: float = 0.0) -> bool:
        return self.lo - tol <= other.lo and other.hi <= self.hi + tol

    def interior_points(self, count: int) -> np.ndarray:
        """Chebyshev-spaced sample points strictly inside the band."""
        j = np.arange(count)
        nodes = np.cos((2 * j + 1) * np.pi / (2 * count))
        mid, half = 0.5 * (self.lo + self.hi), 0.5 * self.width
        return mid + half * nodes[::-1]


@dataclass(frozen=True)
class BandSet:
    lam: float
    k: int
    bands: tuple[Band, ...]

    def __post_init__(self):
        for left, right in zip(self.bands, self.bands[1:]):
            if not left.hi < right.lo:
                raise DomainError("bands must be sorted and pairwise disjoint")

    def __len__(self) -> int:
        return len(self.bands)

    def __iter__(self):
        return iter(self.bands)

    @property
    def total_measure(self) -> float:
        return float(sum(b.width for b in self.bands))

    @property
    def min_width(self) -> float:
        return float(min(b.width for b in self.bands))

    def covers(self, e_lo: float, e_hi: float, tol: float) -> bool:
        """True if [e_lo, e_hi] lies inside a single band, up to tol."""
        return any(b.lo - tol <= e_lo and e_hi <= b.hi + tol for b in self.bands)


@dataclass(frozen=True)
class BoundParameters:
    """Closed-form constants entering the power-law and measure bounds."""

    lam: float
    c_lambda: float
    d: float
    alpha: float
    gamma: float
    gamma_in_regime: bool

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "c_lambda": self.c_lambda,
            "d": self.d,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "gamma_in_regime": self.gamma_in_regime,
        }


def bound_parameters(lam: float) -> BoundParameters:
    """Constants C = 2 + sqrt(8 + lambda^2), d = C (2C+1)^2, and exponents.

    alpha = 2 log d / log((1+sqrt5)/2) controls the transfer-matrix power
    law; gamma = log(2 lambda + 22) / log((1+sqrt5)/2) - 1 controls the
    approximant measure decay and is meaningful for lambda > 4 only (it is
    still returned, flagged out of regime, otherwise).
    """
    if lam <= 0:
        raise DomainError("coupling must be positive")
    c = 2.0 + math.sqrt(8.0 + lam * lam)
    d = c * (2.0 * c + 1.0) ** 2
    alpha = 2.0 * math.log(d) / _LOG_OMEGA_INV
    gamma = math.log(2.0 * lam + 22.0) / _LOG_OMEGA_INV - 1.0
    return BoundParameters(lam=lam, c_lambda=c, d=d, alpha=alpha, gamma=gamma,
                           gamma_in_regime=lam > 4.0)


# ---------------------------------------------------------------------------
# band construction

def _approximant_potential_row(lam: float, k: int) -> np.ndarray:
    """Periodic potential row whose discriminant is the level-k trace.

    Level 0 is the single site 0 (value 0); level k >= 1 takes sites
    1 .. F_k of the Fibonacci chain.
    """
    spec = PotentialSpec(Model.FIBONACCI, lam)
    if k == 0:
        return potential_values(spec, np.array([0]))
    f_k = int(fibonacci_numbers(k)[k])
    return potential_values(spec, np.arange(1, f_k + 1))


def _bloch_edge_energies(row: np.ndarray, theta: float) -> np.ndarray:
    """Eigenvalues of the period-q chain with phase theta = +1 (periodic)
    or -1 (antiperiodic); these solve trace = 2 theta."""
    q = row.size
    h = np.diag(row.astype(np.float64))
    if q == 1:
        h[0, 0] += 2.0 * theta
    else:
        idx = np.arange(q - 1)
        h[idx, idx + 1] = 1.0
        h[idx + 1, idx] = 1.0
        h[0, q - 1] += theta
        h[q - 1, 0] += theta
    return np.linalg.eigvalsh(h)


def _newton_polish_edges(lam: float, k: int, edges: np.ndarray, targets: np.ndarray,
                         edge_tol: float) -> np.ndarray:
    """A few Newton steps of x_k(E) - target, kept only where they help.

    At a closed gap the trace is tangent to the target level and the Newton
    step is noise; such edges keep their eigenvalue estimate, preserving the
    coincidence that the merge stage relies on.
    """
    out = edges.copy()
    cap = 10.0 * edge_tol + 1e-9
    for _ in range(3):
        xs, dxs = trace_derivative_grid(lam, out, k)
        resid = xs[k] - targets
        step = np.zeros_like(out)
        good = np.abs(dxs[k]) > 0
        step[good] = resid[good] / dxs[k][good]
        # a trustworthy eigenvalue needs at most a tiny correction; a large
        # predicted step means the derivative is noise (tangent edge), and
        # the eigenvalue estimate is kept as is
        trusted = np.abs(step) <= cap
        trial = np.where(trusted, out - step, out)
        xs_new, _ = trace_derivative_grid(lam, trial, k)
        better = np.abs(xs_new[k] - targets) <= np.abs(resid)
        out = np.where(better, trial, out)
    return out


def approximant_spectrum(lam: float, k: int, *, edge_tol: float = 1e-10,
                         merge_tol: float = 1e-10) -> BandSet:
    """All maximal energy intervals with |x_k| <= 2, as a sorted BandSet.

    Edges come from the periodic/antiperiodic eigenvalue problems and are
    polished against the trace polynomial to ``edge_tol``.  Bands separated
    by less than ``merge_tol`` are merged (closed gaps).  For lambda > 4 the
    band count must equal F_k, otherwise :class:`BandCountError` is raised;
    for smaller coupling the count is reported without assertion.
    """
    if k < 0:
        raise DomainError("approximant level must be nonnegative")
    if edge_tol <= 0:
        raise DomainError("edge tolerance must be positive")
    row = _approximant_potential_row(lam, k)
    e_per = _bloch_edge_energies(row, +1.0)
    e_anti = _bloch_edge_energies(row, -1.0)
    edges = np.concatenate([e_per, e_anti])
    targets = np.concatenate([np.full(e_per.size, 2.0), np.full(e_anti.size, -2.0)])
    order = np.argsort(edges, kind="stable")
    edges, targets = edges[order], targets[order]
    if k >= 1:
        edges = _newton_polish_edges(lam, k, edges, targets, edge_tol)
        edges = np.sort(edges)
    intervals = [(edges[2 * i], edges[2 * i + 1]) for i in range(edges.size // 2)]
    merged: list[list[float]] = []
    for lo, hi in intervals:
        if merged and lo - merged[-1][1] <= merge_tol:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    bands = tuple(Band(lo=lo, hi=hi, k=k) for lo, hi in merged)
    expected = int(fibonacci_numbers(k)[k])
    if lam > 4.0 and len(bands) != expected:
        raise BandCountError(
            f"level {k} at lambda={lam}: found {len(bands)} bands, expected F_{k} = {expected}")
    return BandSet(lam=lam, k=k, bands=bands)


@lru_cache(maxsize=256)
def _cached_spectrum(lam: float, k: int, edge_tol: float) -> BandSet:
    return approximant_spectrum(lam, k, edge_tol=edge_tol)


@dataclass(frozen=True)
class CoveringReport:
    lam: float
    m: int
    ok: bool
    violations: tuple[tuple[int, float, float], ...]


def covering_check(lam: float, m: int, *, tol: float = 1e-8,
                   edge_tol: float = 1e-10) -> CoveringReport:
    """Check that level m and m+1 bands lie inside the level m-1/m union.

    Every band of sigma_m and sigma_{m+1} must be contained, within ``tol``,
    in the union of the bands of sigma_{m-1} and sigma_m.
    """
    if m < 2:
        raise DomainError("covering check needs m >= 2")
    cover: list[tuple[float, float]] = []
    for src in (_cached_spectrum(lam, m - 1, edge_tol), _cached_spectrum(lam, m, edge_tol)):
        cover.extend((b.lo, b.hi) for b in src)
    cover.sort()
    union: list[list[float]] = []
    for lo, hi in cover:
        if union and lo - union[-1][1] <= tol:
            union[-1][1] = max(union[-1][1], hi)
        else:
            union.append([lo, hi])
    violations = []
    for level in (m, m + 1):
        for band in _cached_spectrum(lam, level, edge_tol):
            inside = any(lo - tol <= band.lo and band.hi <= hi + tol for lo, hi in union)
            if not inside:
                violations.append((level, band.lo, band.hi))
    return CoveringReport(lam=lam, m=m, ok=not violations, violations=tuple(violations))


def classify_bands(lam: float, k: int, *, edge_tol: float = 1e-10,
                   containment_tol: float = 1e-9) -> BandSet:
    """Label each level-k band type A (inside level k-1) or B (inside k-2).

    Only meaningful above coupling 4, where the two cases are exhaustive and
    exclusive; a band matching neither or both raises
    :class:`ClassificationError`.
    """
    if lam <= 4.0:
        raise DomainError("band classification requires lambda > 4")
    if k < 2:
        raise DomainError("classification needs k >= 2")
    cur = _cached_spectrum(lam, k, edge_tol)
    parent_a = _cached_spectrum(lam, k - 1, edge_tol)
    parent_b = _cached_spectrum(lam, k - 2, edge_tol)
    labeled = []
    for band in cur:
        in_a = parent_a.covers(band.lo, band.hi, containment_tol)
        in_b = parent_b.covers(band.lo, band.hi, containment_tol)
        if in_a == in_b:
            raise ClassificationError(
                f"band [{band.lo}, {band.hi}] of level {k}: in_a={in_a}, in_b={in_b}")
        kind = BandKind.TYPE_A if in_a else BandKind.TYPE_B
        labeled.append(Band(lo=band.lo, hi=band.hi, k=k, kind=kind))
    return BandSet(lam=lam, k=k, bands=tuple(labeled))


def genealogy_check(lam: float, k: int, *, edge_tol: float = 1e-10) -> dict:
    """Verify the two-generation refinement counts of the level-k bands.

    A type A band contains exactly one level-(k+2) band (type B) and none
    from level k+1; a type B band contains exactly one level-(k+1) band
    (type A) and two level-(k+2) bands (type B) positioned around it.
    Also asserts that no band of level k+2 meets both levels k and k+1
    anywhere (three consecutive traces cannot all be small).
    """
    if lam <= 4.0:
        raise DomainError("genealogy counts require lambda > 4")
    tol = 1e-9
    cur = classify_bands(lam, k, edge_tol=edge_tol)
    child1 = classify_bands(lam, k + 1, edge_tol=edge_tol)
    child2 = classify_bands(lam, k + 2, edge_tol=edge_tol)
    failures = []
    for band in cur:
        c1 = [c for c in child1 if band.contains(c, tol)]
        c2 = [c for c in child2 if band.contains(c, tol)]
        if band.kind is BandKind.TYPE_A:
            if len(c1) != 0 or len(c2) != 1 or c2[0].kind is not BandKind.TYPE_B:
                failures.append(("A", band.lo, band.hi, len(c1), len(c2)))
        else:
            ok = (len(c1) == 1 and c1[0].kind is BandKind.TYPE_A
                  and len(c2) == 2 and all(c.kind is BandKind.TYPE_B for c in c2)
                  and c2[0].hi < c1[0].lo and c1[0].hi < c2[1].lo)
            if not ok:
                failures.append(("B", band.lo, band.hi, len(c1), len(c2)))
    triple_overlap = []
    for grand in child2:
        meets_cur = any(b.lo - tol <= grand.hi and grand.lo <= b.hi + tol for b in cur)
        meets_child1 = any(b.lo - tol <= grand.hi and grand.lo <= b.hi + tol for b in child1)
        if meets_cur and meets_child1:
            triple_overlap.append((grand.lo, grand.hi))
    counts = {
        "n_bands": len(cur),
        "n_type_a": sum(b.kind is BandKind.TYPE_A for b in cur),
        "n_type_b": sum(b.kind is BandKind.TYPE_B for b in cur),
    }
    return {
        "lam": lam,
        "k": k,
        "ok": not failures and not triple_overlap,
        "failures": failures,
        "triple_overlap": triple_overlap,
        **counts,
    }


# ---------------------------------------------------------------------------
# quantitative band laws

def f_pm(x, y, lam: float, sign: int = +1):
    """Middle-of-triple solution (x y +- sqrt(4 lam^2 + (4-x^2)(4-y^2))) / 2.

    Given the outer two traces of a consecutive triple on the invariant
    surface, returns the middle one; the radicand must be nonnegative.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    radicand = 4.0 * lam * lam + (4.0 - x * x) * (4.0 - y * y)
    if np.any(radicand < 0):
        raise DomainError("f_pm radicand is negative")
    out = 0.5 * (x * y + float(np.sign(sign)) * np.sqrt(radicand))
    return float(out) if out.ndim == 0 else out


def f_pm_partials(x, y, lam: float, sign: int = +1):
    """Analytic partial derivatives (df/dx, df/dy) of :func:`f_pm`."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    radicand = 4.0 * lam * lam + (4.0 - x * x) * (4.0 - y * y)
    if np.any(radicand <= 0):
        raise DomainError("partials need a strictly positive radicand")
    root = np.sqrt(radicand)
    s = float(np.sign(sign))
    dfdx = 0.5 * (y - s * x * (4.0 - y * y) / root)
    dfdy = 0.5 * (x - s * y * (4.0 - x * x) / root)
    return dfdx, dfdy


def partials_bound_check(lams=(4.5, 5.0, 8.0), n_samples_log2: int = 14,
                         tol: float = 1e-12) -> dict:
    """Sobol sample of |df/dx|, |df/dy| over [-2, 2]^2 for couplings above 4.

    The expected uniform bound is 1.  The sample count is a power of two to
    keep the Sobol balance properties.
    """
    sampler = qmc.Sobol(d=2, scramble=False)
    pts = 4.0 * sampler.random_base2(n_samples_log2) - 2.0
    n_samples = pts.shape[0]
    worst = 0.0
    for lam in lams:
        for sign in (+1, -1):
            dfdx, dfdy = f_pm_partials(pts[:, 0], pts[:, 1], lam, sign)
            worst = max(worst, float(np.max(np.abs(dfdx))), float(np.max(np.abs(dfdy))))
    return {"max_abs_partial": worst, "bound": 1.0, "ok": worst <= 1.0 + tol,
            "n_samples": n_samples, "lams": tuple(lams)}


def derivative_ratio_check(lam: float, k: int, *, samples_per_band: int = 33,
                           tol: float = 1e-6, edge_tol: float = 1e-10) -> dict:
    """Derivative-ratio bounds between a band's level and its parent level.

    On a type A band of level k the ratio |x_k' / x_{k-1}'| stays below
    lambda + 11; on a type B band |x_k' / x_{k-2}'| stays below
    2 lambda + 22.  Samples with a vanishing parent derivative are skipped
    and counted.
    """
    bands = classify_bands(lam, k, edge_tol=edge_tol)
    max_a = 0.0
    max_b = 0.0
    skipped = 0
    violations = []
    bound_a = lam + 11.0
    bound_b = 2.0 * lam + 22.0
    for band in bands:
        energies = band.interior_points(samples_per_band)
        _, dxs = trace_derivative_grid(lam, energies, k)
        parent = k - 1 if band.kind is BandKind.TYPE_A else k - 2
        denom = dxs[parent]
        numer = dxs[k]
        ok = denom != 0.0
        skipped += int(np.sum(~ok))
        ratios = np.abs(numer[ok] / denom[ok])
        if ratios.size == 0:
            continue
        peak = float(np.max(ratios))
        if band.kind is BandKind.TYPE_A:
            max_a = max(max_a, peak)
            if peak > bound_a * (1.0 + tol) + tol:
                violations.append(("A", band.lo, band.hi, peak))
        else:
            max_b = max(max_b, peak)
            if peak > bound_b * (1.0 + tol) + tol:
                violations.append(("B", band.lo, band.hi, peak))
    return {
        "lam": lam,
        "k": k,
        "max_ratio_type_a": max_a,
        "max_ratio_type_b": max_b,
        "bound_type_a": bound_a,
        "bound_type_b": bound_b,
        "samples_per_band": samples_per_band,
        "skipped_zero_derivative": skipped,
        "violations": violations,
        "ok": not violations,
    }


def measure_report(lam: float, kmax: int, *, edge_tol: float = 1e-10,
                   samples_per_band: int = 33) -> dict:
    """Per-level measure table with the decay-exponent fit.

    Reports |sigma_k|, the minimum bandwidth, the log-log fit of measure
    against F_k (the empirical decay exponent, to compare with -gamma), the
    per-level minimum-bandwidth contraction against 1/(2 lambda + 22), and
    an empirical estimate of the derivative-growth prefactor.
    """
    if lam <= 4.0:
        raise DomainError("the measure bounds hold for lambda > 4")
    params = bound_parameters(lam)
    fib = fibonacci_numbers(kmax)
    rows = []
    c_estimate = 0.0
    for k in range(1, kmax + 1):
        bands = _cached_spectrum(lam, k, edge_tol)
        peak_deriv = 0.0
        for band in bands:
            _, dxs = trace_derivative_grid(lam, band.interior_points(samples_per_band), k)
            peak_deriv = max(peak_deriv, float(np.max(np.abs(dxs[k]))))
        c_estimate = max(c_estimate, peak_deriv / (2.0 * lam + 22.0) ** k)
        rows.append({
            "k": k,
            "f_k": int(fib[k]),
            "n_bands": len(bands),
            "measure": bands.total_measure,
            "min_width": bands.min_width,
            "max_abs_trace_derivative": peak_deriv,
        })
    logs_f = np.log([row["f_k"] for row in rows])
    logs_m = np.log([row["measure"] for row in rows])
    slope, intercept = np.polyfit(logs_f, logs_m, 1)
    width_ratios = [rows[i + 1]["min_width"] / rows[i]["min_width"] for i in range(len(rows) - 1)]
    return {
        "lam": lam,
        "kmax": kmax,
        "rows": rows,
        "decay_exponent": float(slope),
        "fit_intercept": float(intercept),
        "gamma": params.gamma,
        "decay_respects_gamma": bool(slope >= -params.gamma),
        "min_width_ratios": width_ratios,
        "width_ratio_lower_bound": 1.0 / (2.0 * lam + 22.0),
        "c_estimate": c_estimate,
    }


def trace_bound_check(lam: float, k: int, *, samples_per_band: int = 33,
                      edge_tol: float = 1e-10) -> dict:
    """Verify |x_i| <= C_lambda for 0 <= i <= k on sampled level-k energies."""
    if k < 1:
        raise DomainError("trace bound check needs k >= 1")
    params = bound_parameters(lam)
    bands = _cached_spectrum(lam, k, edge_tol)
    worst = 0.0
    for band in bands:
        xs = fib_trace_orbit_grid(lam, band.interior_points(samples_per_band), k)
        worst = max(worst, float(np.max(np.abs(xs))))
    return {
        "lam": lam,
        "k": k,
        "max_abs_trace": worst,
        "c_lambda": params.c_lambda,
        "ok": worst <= params.c_lambda + 1e-9,
    }
