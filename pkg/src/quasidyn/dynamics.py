"""Time evolution, resolvents, transport moments, and lower-bound checks.

Two independent routes compute the exponentially time-averaged site
probabilities

    a(n, T) = (2/T) Int_0^inf e^{-2t/T} |psi(t, n)|^2 dt,
    psi(t) = e^{-itH} delta_1,

normalized so the profile carries unit mass.  The time route propagates the
state with a Chebyshev polynomial expansion of the evolution operator and
integrates on a uniform grid; the resolvent route uses the Parseval identity

    a(n, T) = (eps/pi) Int |((H - E - i eps)^{-1} delta_1)(n)|^2 dE,

with eps = 1/T, evaluated by midpoint quadrature over an energy grid and a
banded tridiagonal solve per grid point.  Their agreement is a strong
end-to-end check of both pipelines.

Moments of the position operator are accumulated in the log domain so that
orders up to p ~ 120 stay inside the floating-point range, and finite-time
growth exponents are least-squares slopes of log-moment against log T over
the largest-T half of a ladder.  The theoretical lower bounds against which
these slopes are compared constrain exponents only; all prefactors are
normalized away at the smallest ladder time.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import jv, logsumexp

from quasidyn.lattice import (
    DomainError,
    Geometry,
    LatticeWindow,
    Model,
    PotentialSpec,
    ResourceError,
    ScaleOverflowError,
    TruncationError,
    potential_values,
    spectral_norm,
)
from quasidyn.spectra import approximant_spectrum, bound_parameters
from quasidyn.traces import FIB_CONVENTION_ID, fibonacci_numbers

#: Abel-average integration cutoff: t_max = TIME_CUTOFF * T.
TIME_CUTOFF = 6.0

#: Window sizing rule for evolutions and profiles (radius in sites).
def default_window_radius(t_max: float) -> int:
    return int(math.ceil(2.0 * t_max)) + 64


class Verdict(enum.Enum):
    PASS = "pass"
    SOFT_FAIL = "soft-fail"
    OUT_OF_REGIME = "out-of-regime"


@dataclass(frozen=True)
class AmplitudeProfile:
    """Sampled a(n, T) over a window at fixed T, with its method tag."""

    T: float
    window: LatticeWindow
    a: np.ndarray
    method: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.a.shape[0] != self.window.size:
            raise DomainError("profile length does not match window")

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.a))

    def sites(self) -> np.ndarray:
        return self.window.sites()


@dataclass(frozen=True)
class MomentSeries:
    p: float
    points: tuple[tuple[float, float], ...]  # (T, log moment)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DomainError("moment series times must be strictly increasing")
        if any(not math.isfinite(m) for _, m in self.points):
            raise DomainError("moment series values must be finite")


@dataclass(frozen=True)
class GrowthFit:
    slope: float
    confidence: float
    n_points_used: int


@dataclass(frozen=True)
class BoundEntry:
    p: float
    measured_slope: float
    slope_confidence: float
    bound_slope: float
    verdict: Verdict


@dataclass(frozen=True)
class BoundReport:
    spec_description: str
    bound_id: str
    entries: tuple[BoundEntry, ...]
    T_values: tuple[float, ...]
    slope_tolerance: float
    meta: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(e.verdict is not Verdict.SOFT_FAIL for e in self.entries)


@dataclass(frozen=True)
class GoodSetInput:
    """Inputs to the moment lower bound driven by a good energy set.

    ``a_of_n`` maps a length scale N to the interval list (lo, hi) of the
    good set A(N) contained in [-K, K]; alpha is the power-law exponent
    certified on A(N).
    """

    alpha: float
    K: float
    a_of_n: Callable[[float], Sequence[tuple[float, float]]]


# ---------------------------------------------------------------------------
# resolvent route

def _window_potential(spec: PotentialSpec, window: LatticeWindow) -> np.ndarray:
    if spec.geometry is not window.geometry:
        raise DomainError("window geometry does not match the potential spec")
    return potential_values(spec, window.sites())


def resolvent_vector(spec: PotentialSpec, z: complex, window: LatticeWindow, *,
                     boundary_tol: float | None = None,
                     residual_tol: float = 1e-12) -> np.ndarray:
    """Solve (H - z) phi = delta_1 on the window (Dirichlet truncation).

    Requires Im z > 0.  The banded solve is verified against its residual;
    if ``boundary_tol`` is given, the squared amplitude on the two edge
    sites relative to the vector norm must stay below it, otherwise
    :class:`TruncationError` signals that the window is too small.
    """
    if z.imag <= 0:
        raise DomainError("resolvent vectors are computed for Im z > 0")
    v = _window_potential(spec, window)
    n = window.size
    rhs = np.zeros(n, dtype=np.complex128)
    rhs[window.index(1)] = 1.0
    ab = np.zeros((3, n), dtype=np.complex128)
    ab[0, 1:] = 1.0
    ab[1, :] = v - z
    ab[2, :-1] = 1.0
    phi = solve_banded((1, 1), ab, rhs)
    norm = float(np.linalg.norm(phi))
    resid = (v - z) * phi
    resid[:-1] += phi[1:]
    resid[1:] += phi[:-1]
    resid -= rhs
    if np.linalg.norm(resid) > residual_tol * max(norm, 1.0):
        raise ArithmeticError("resolvent solve residual above tolerance")
    if boundary_tol is not None and n > 2:
        edge = (abs(phi[0]) ** 2 + abs(phi[-1]) ** 2) / max(norm * norm, np.finfo(float).tiny)
        if edge > boundary_tol:
            raise TruncationError(
                f"boundary weight {edge:.3e} above {boundary_tol:.3e}; enlarge the window")
    return phi


def _default_energy_grid(spec: PotentialSpec, window: LatticeWindow, eps: float,
                         pad: float) -> np.ndarray:
    v = _window_potential(spec, window)
    lo = float(v.min()) - 2.0 - pad
    hi = float(v.max()) + 2.0 + pad
    spacing = eps / 4.0
    count = int(math.ceil((hi - lo) / spacing))
    # midpoint nodes of a uniform partition
    return lo + (np.arange(count) + 0.5) * (hi - lo) / count


def profile_resolvent(spec: PotentialSpec, T: float, window: LatticeWindow | None = None, *,
                      energy_grid: np.ndarray | None = None, pad: float = 4.0,
                      threads: int = 1, richardson: bool = False) -> AmplitudeProfile:
    """Site probabilities a(n, T) from the resolvent side of the identity.

    Midpoint quadrature of (eps/pi) |R(E + i eps) delta_1(n)|^2 over the
    energy grid, eps = 1/T.  A caller-provided grid must be uniform with
    spacing at most eps/4 and span the padded spectral window, otherwise it
    is rejected.  With ``richardson`` set, every 16th quadrature cell is
    re-evaluated at half spacing and the worst relative cell discrepancy is
    reported in the profile metadata as a convergence diagnostic.
    """
    if T <= 0:
        raise DomainError("T must be positive")
    eps = 1.0 / T
    if window is None:
        radius = default_window_radius(TIME_CUTOFF * T)
        window = (LatticeWindow(1, radius, Geometry.HALF_LINE)
                  if spec.geometry is Geometry.HALF_LINE
                  else LatticeWindow(-radius, radius))
    if energy_grid is None:
        grid = _default_energy_grid(spec, window, eps, pad)
    else:
        grid = np.asarray(energy_grid, dtype=np.float64)
        spacings = np.diff(grid)
        if grid.size < 2 or np.any(spacings > eps / 4.0 + 1e-15):
            raise DomainError("energy grid spacing must not exceed eps/4")
        if np.max(spacings) - np.min(spacings) > 1e-12 * np.max(spacings):
            raise DomainError("energy grid must be uniform (midpoint quadrature)")
        v = _window_potential(spec, window)
        if grid[0] > v.min() - 2.0 - 1.0 or grid[-1] < v.max() + 2.0 + 1.0:
            raise DomainError("energy grid must span the padded spectral window")
    h = float(grid[1] - grid[0])
    v = _window_potential(spec, window)
    weights = np.empty((grid.size, window.size), dtype=np.float64)

    def fill(chunk: np.ndarray) -> None:
        n = window.size
        ab = np.zeros((3, n), dtype=np.complex128)
        ab[0, 1:] = 1.0
        ab[2, :-1] = 1.0
        rhs = np.zeros(n, dtype=np.complex128)
        rhs[window.index(1)] = 1.0
        for i in chunk:
            ab[1, :] = v - (grid[i] + 1j * eps)
            phi = solve_banded((1, 1), ab, rhs, overwrite_ab=False, overwrite_b=False)
            weights[i] = np.abs(phi) ** 2

    indices = np.arange(grid.size)
    if threads <= 1:
        fill(indices)
    else:
        chunks = np.array_split(indices, threads * 4)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, chunks))
    # fixed-order reduction over the energy axis keeps results identical
    # for every thread count
    a = (eps / math.pi) * h * np.sum(weights, axis=0)
    meta = {
        "model": spec.model.value,
        "lambda": spec.lam,
        "T": T,
        "epsilon": eps,
        "grid_points": int(grid.size),
        "grid_spacing": h,
        "convention": FIB_CONVENTION_ID,
    }
    if richardson:
        n = window.size
        ab = np.zeros((3, n), dtype=np.complex128)
        ab[0, 1:] = 1.0
        ab[2, :-1] = 1.0
        rhs = np.zeros(n, dtype=np.complex128)
        rhs[window.index(1)] = 1.0
        worst = 0.0
        for i in range(0, grid.size, 16):
            refined = np.zeros(1)
            for offset in (-0.25 * h, 0.25 * h):
                ab[1, :] = v - (grid[i] + offset + 1j * eps)
                phi = solve_banded((1, 1), ab, rhs)
                refined = refined + 0.5 * np.sum(np.abs(phi) ** 2)
            coarse = float(np.sum(weights[i]))
            worst = max(worst, abs(float(refined[0]) - coarse) / max(coarse, 1e-300))
        meta["richardson_max_rel_delta"] = worst
    return AmplitudeProfile(T=T, window=window, a=a, method="resolvent", meta=meta)


# ---------------------------------------------------------------------------
# time route

def _chebyshev_order(x: float, tol: float, max_order: int) -> int:
    """Smallest safe expansion order for phase argument x.

    Bessel coefficients J_k(x) decay superexponentially past k ~ x; the
    order is pushed until the next five coefficients all drop below tol.
    """
    k = int(x) + 8
    while True:
        if k > max_order:
            raise ResourceError("Chebyshev expansion order cap exceeded; "
                                "lower the accuracy or shorten the step")
        tail = np.abs(jv(np.arange(k, k + 5), x))
        if np.all(tail < tol):
            return k
        k += max(4, k // 8)


class _Propagator:
    """Chebyshev propagator for the windowed chain Hamiltonian."""

    def __init__(self, spec: PotentialSpec, window: LatticeWindow, *,
                 tol: float = 1e-15, max_order: int = 1 << 17):
        self.v = _window_potential(spec, window)
        self.window = window
        lo = float(self.v.min()) - 2.0
        hi = float(self.v.max()) + 2.0
        margin = 0.025 * (hi - lo)
        self.center = 0.5 * (hi + lo)
        self.half_width = 0.5 * (hi - lo) + margin
        self.tol = tol
        self.max_order = max_order

    def _apply(self, psi: np.ndarray) -> np.ndarray:
        out = self.v * psi
        out[:-1] += psi[1:]
        out[1:] += psi[:-1]
        return out

    def step(self, psi: np.ndarray, dt: float) -> np.ndarray:
        """One exact-in-principle step of e^{-i dt H} via the expansion."""
        x = self.half_width * dt
        order = _chebyshev_order(x, self.tol, self.max_order)
        coeff = jv(np.arange(order + 1), x)
        a_inv = 1.0 / self.half_width
        tm1 = psi
        t0 = (self._apply(psi) - self.center * psi) * a_inv
        acc = coeff[0] * tm1 + 2.0 * coeff[1] * (-1j) * t0
        phase = -1j
        for k in range(2, order + 1):
            phase *= -1j
            t1 = 2.0 * (self._apply(t0) - self.center * t0) * a_inv - tm1
            acc += (2.0 * coeff[k] * phase) * t1
            tm1, t0 = t0, t1
        return np.exp(-1j * self.center * dt) * acc


def evolve_state(spec: PotentialSpec, t: float, window: LatticeWindow, *,
                 tol: float = 1e-15, max_order: int = 1 << 17) -> np.ndarray:
    """The state e^{-itH} delta_1 on the window, from a single expansion.

    The window must out-run the ballistic light cone (group velocity at most
    2 for unit hopping) so the Dirichlet truncation never matters.
    """
    n = window.size
    psi = np.zeros(n, dtype=np.complex128)
    psi[window.index(1)] = 1.0
    if t == 0.0:
        return psi
    prop = _Propagator(spec, window, tol=tol, max_order=max_order)
    return prop.step(psi, t)


def _time_grid_step(spec: PotentialSpec, window: LatticeWindow, dt: float | None) -> float:
    if dt is not None:
        return dt
    v = _window_potential(spec, window)
    span = float(v.max() - v.min()) + 4.0
    # keep the sampling rate above the largest Bohr frequency (Nyquist)
    return min(0.5, 5.5 / span)


def profile_time(spec: PotentialSpec, T: float, window: LatticeWindow | None = None, *,
                 dt: float | None = None, cutoff: float = TIME_CUTOFF) -> AmplitudeProfile:
    """Site probabilities a(n, T) by direct time averaging."""
    return profiles_time_ladder(spec, [T], window=window, dt=dt, cutoff=cutoff)[0]


def profiles_time_ladder(spec: PotentialSpec, T_values: Sequence[float],
                         window: LatticeWindow | None = None, *, dt: float | None = None,
                         cutoff: float = TIME_CUTOFF) -> list[AmplitudeProfile]:
    """Profiles for a whole ladder of averaging times from one trajectory.

    The weighted time integrals for every T in the ladder share the same
    |psi(t, n)|^2 samples, so the state is propagated once out to
    cutoff * max(T) and each ladder entry accumulates its own trapezoid
    sum, truncated at its own cutoff.
    """
    T_values = sorted(float(T) for T in T_values)
    if not T_values or T_values[0] <= 0:
        raise DomainError("averaging times must be positive")
    t_max = cutoff * T_values[-1]
    if window is None:
        radius = default_window_radius(t_max)
        window = (LatticeWindow(1, radius, Geometry.HALF_LINE)
                  if spec.geometry is Geometry.HALF_LINE
                  else LatticeWindow(-radius, radius))
    step = _time_grid_step(spec, window, dt)
    n_steps = int(math.ceil(t_max / step))
    prop = _Propagator(spec, window)
    psi = np.zeros(window.size, dtype=np.complex128)
    psi[window.index(1)] = 1.0
    acc = [np.zeros(window.size) for _ in T_values]
    last_step = [0] * len(T_values)
    for j in range(n_steps + 1):
        t = j * step
        prob = np.abs(psi) ** 2
        for i, T in enumerate(T_values):
            if t <= cutoff * T + 0.5 * step:
                w = math.exp(-2.0 * t / T)
                if j == 0:
                    w *= 0.5
                acc[i] += w * prob
                last_step[i] = j
        if j < n_steps:
            psi = prop.step(psi, step)
    profiles = []
    for i, T in enumerate(T_values):
        # the endpoint trapezoid correction is skipped: the weight there is
        # e^{-2 cutoff} ~ 6e-6, far below the quadrature tolerance
        profiles.append(AmplitudeProfile(
            T=T, window=window, a=(2.0 / T) * step * acc[i], method="time-average",
            meta={
                "model": spec.model.value,
                "lambda": spec.lam,
                "T": T,
                "dt": step,
                "cutoff": cutoff,
                "t_max": last_step[i] * step,
                "convention": FIB_CONVENTION_ID,
            }))
    return profiles


# ---------------------------------------------------------------------------
# moments and exponents

def moments(profile: AmplitudeProfile, p: float) -> float:
    """log of the p-th absolute position moment of the profile.

    Accumulated as logsumexp of p log|n| + log a(n), in a fixed site order,
    so that orders well past p = 100 remain finite and reductions are
    deterministic.
    """
    if p <= 0:
        raise DomainError("moment order must be positive")
    if profile.a.size == 0:
        raise DomainError("empty profile")
    sites = profile.sites()
    mask = (sites != 0) & (profile.a > 0.0)
    if not np.any(mask):
        raise DomainError("profile carries no off-origin mass")
    terms = p * np.log(np.abs(sites[mask]).astype(np.float64)) + np.log(profile.a[mask])
    return float(logsumexp(terms))


def moment_series(profiles: Sequence[AmplitudeProfile], p: float) -> MomentSeries:
    pts = tuple(sorted((prof.T, moments(prof, p)) for prof in profiles))
    meta = dict(profiles[0].meta) if profiles else {}
    meta["p"] = p
    return MomentSeries(p=p, points=pts, meta=meta)


def outside_probability(profile: AmplitudeProfile, gamma: float) -> float:
    """Mass of the profile at distances |n| >= T^gamma - 2."""
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")
    threshold = profile.T ** gamma - 2.0
    sites = profile.sites()
    return float(np.sum(profile.a[np.abs(sites) >= threshold]))


def growth_exponent(series: MomentSeries) -> GrowthFit:
    """Finite-time slope of log moment against log T.

    Least squares over the largest-T half of the series; the confidence
    halfwidth is twice the standard error of the fitted slope.  Requires at
    least five points spanning at least 1.5 decades.
    """
    ts = np.array([t for t, _ in series.points])
    ms = np.array([m for _, m in series.points])
    if ts.size < 5:
        raise DomainError("growth exponent needs at least 5 ladder points")
    if math.log10(ts[-1] / ts[0]) < 1.5:
        raise DomainError("growth exponent needs at least 1.5 decades of T")
    half = ts.size // 2
    x = np.log(ts[half:])
    y = ms[half:]
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    dof = max(x.size - 2, 1)
    se = math.sqrt(float(np.sum(resid ** 2)) / dof / float(np.sum((x - x.mean()) ** 2)))
    return GrowthFit(slope=float(slope), confidence=2.0 * se, n_points_used=int(x.size))


# ---------------------------------------------------------------------------
# theoretical lower bounds

def _interval_union_measure(intervals: Sequence[tuple[float, float]]) -> float:
    merged: list[list[float]] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return sum(hi - lo for lo, hi in merged)


def good_set_moment_bound(inp: GoodSetInput, T: float, p: float) -> dict:
    """Moment lower bound generated by a good energy set, in log form.

    With N(T) = T^{1/(1+alpha)} and B(T) the 1/T-neighborhood of A(N(T)),
    the time-averaged p-th moment is bounded below by
    (1/T) |B(T)| N(T)^{p+1-2 alpha} up to a uniform constant, and the mass
    beyond N(T)/2 by (1/T) |B(T)| N(T)^{1-2 alpha}.  Both are returned as
    natural logs together with the ingredients.
    """
    if T <= 1.0:
        raise DomainError("the bound is asymptotic; use T > 1")
    n_of_t = T ** (1.0 / (1.0 + inp.alpha))
    intervals = [(lo - 1.0 / T, hi + 1.0 / T) for lo, hi in inp.a_of_n(n_of_t)]
    if not intervals:
        raise DomainError("the good energy set is empty")
    b_measure = _interval_union_measure(intervals)
    log_n = math.log(n_of_t)
    log_common = -math.log(T) + math.log(b_measure)
    return {
        "T": T,
        "p": p,
        "N": n_of_t,
        "B_measure": b_measure,
        "log_moment_bound": log_common + (p + 1.0 - 2.0 * inp.alpha) * log_n,
        "log_far_mass_bound": log_common + (1.0 - 2.0 * inp.alpha) * log_n,
    }


def fibonacci_good_set(lam: float, *, edge_tol: float = 1e-10) -> GoodSetInput:
    """Good-set provider choosing the approximant level from the scale N.

    Given N, the level k with F_{k-1} < N <= F_k is selected and A(N) is the
    level-k band set.
    """
    params = bound_parameters(lam)

    def a_of_n(n: float) -> list[tuple[float, float]]:
        fib = fibonacci_numbers(32)
        k = 1
        while fib[k] < n:
            k += 1
        bands = approximant_spectrum(lam, k, edge_tol=edge_tol)
        return [(b.lo, b.hi) for b in bands]

    return GoodSetInput(alpha=params.alpha, K=2.0 + lam, a_of_n=a_of_n)


_BOUND_FORMULAS: dict[str, Callable[[float, dict], float]] = {
    "tm": lambda p, ctx: p - 1.0,
    "pd": lambda p, ctx: (p - 5.0) / 2.0,
    "fib-a": lambda p, ctx: (p - 1.0 - 4.0 * ctx["alpha"]) / (1.0 + ctx["alpha"]),
    "fib-b": lambda p, ctx: (p - ctx["gamma"] - 3.0 * ctx["alpha"]) / (1.0 + ctx["alpha"]),
    "one-energy": lambda p, ctx: (p - 1.0 - 4.0 * ctx["alpha"]) / (1.0 + ctx["alpha"]),
    "power-eta": lambda p, ctx: (p - 1.0 - 8.0 * ctx["eta"]) / (1.0 + 2.0 * ctx["eta"]),
}


def bound_slope(bound_id: str, p: float, *, lam: float | None = None,
                alpha: float | None = None, eta: float | None = None) -> float:
    """Theoretical lower-bound slope for the p-th moment growth."""
    if bound_id not in _BOUND_FORMULAS:
        raise DomainError(f"unknown bound id {bound_id!r}; known: {sorted(_BOUND_FORMULAS)}")
    ctx: dict = {"alpha": alpha, "eta": eta, "gamma": None}
    if bound_id in ("fib-a", "fib-b"):
        if lam is None:
            raise DomainError("fibonacci bounds need the coupling")
        params = bound_parameters(lam)
        ctx["alpha"] = params.alpha
        ctx["gamma"] = params.gamma
        if bound_id == "fib-b" and not params.gamma_in_regime:
            raise DomainError("fib-b requires lambda > 4")
    if bound_id == "one-energy" and ctx["alpha"] is None:
        raise DomainError("one-energy bound needs alpha")
    if bound_id == "power-eta" and ctx["eta"] is None:
        raise DomainError("power-eta bound needs eta")
    return float(_BOUND_FORMULAS[bound_id](p, ctx))


def default_bound_id(model: Model) -> str:
    return {Model.THUE_MORSE: "tm", Model.PERIOD_DOUBLING: "pd",
            Model.FIBONACCI: "fib-a"}.get(model, "one-energy")


def bound_report(spec: PotentialSpec, p_values: Sequence[float], T_values: Sequence[float],
                 bound_id: str | None = None, *, slope_tolerance: float = 0.15,
                 dt: float | None = None, alpha: float | None = None,
                 eta: float | None = None, window: LatticeWindow | None = None,
                 max_cost: float = 5e10) -> BoundReport:
    """Measured finite-time slopes against a theoretical lower bound.

    Runs the shared-trajectory time profiles over the ladder, fits one slope
    per moment order, and grades each against the chosen bound formula:
    OUT_OF_REGIME when the bound slope is nonpositive (the bound is trivial
    there and asserts nothing), PASS when the measured slope clears
    bound - slope_tolerance, SOFT_FAIL otherwise.  The bounds are
    asymptotic statements, hence never a hard error at finite T.
    """
    if bound_id is None:
        bound_id = default_bound_id(spec.model)
    T_values = sorted(float(t) for t in T_values)
    # resolve every bound slope up front so a bad bound id or missing
    # parameter fails before the expensive sweep starts
    theoretical_slopes = {p: bound_slope(bound_id, p, lam=spec.lam or None,
                                         alpha=alpha, eta=eta) for p in p_values}
    t_max = TIME_CUTOFF * T_values[-1]
    radius = default_window_radius(t_max)
    est_cost = (t_max / 0.5) * (2.2 * radius)
    if est_cost > max_cost:
        raise ResourceError(
            f"estimated sweep cost {est_cost:.2e} exceeds budget {max_cost:.2e}; "
            "lower Tmax or raise the budget")
    profiles = profiles_time_ladder(spec, T_values, window=window, dt=dt)
    entries = []
    for p in p_values:
        series = moment_series(profiles, p)
        fit = growth_exponent(series)
        theoretical = theoretical_slopes[p]
        if theoretical <= 0.0:
            verdict = Verdict.OUT_OF_REGIME
        elif fit.slope >= theoretical - slope_tolerance:
            verdict = Verdict.PASS
        else:
            verdict = Verdict.SOFT_FAIL
        entries.append(BoundEntry(p=float(p), measured_slope=fit.slope,
                                  slope_confidence=fit.confidence,
                                  bound_slope=theoretical, verdict=verdict))
    meta = {
        "model": spec.model.value,
        "lambda": spec.lam,
        "geometry": spec.geometry.value,
        "perturbation": list(spec.perturbation),
        "convention": FIB_CONVENTION_ID,
        "dt": dt,
        "cutoff": TIME_CUTOFF,
    }
    return BoundReport(spec_description=spec.describe(), bound_id=bound_id,
                       entries=tuple(entries), T_values=tuple(T_values),
                       slope_tolerance=slope_tolerance, meta=meta)


# ---------------------------------------------------------------------------
# transfer-matrix power laws

def _one_step(v: float, z: complex) -> np.ndarray:
    return np.array([[z - v, -1.0], [1.0, 0.0]], dtype=np.complex128)


def transfer_norms_from_origin(spec: PotentialSpec, E: complex, m_max: int) -> dict[int, float]:
    """Spectral norms of T(m, 1; E) for 1 <= |m| <= m_max, swept incrementally.

    On the whole line the negative side uses ||T(m, 1)|| = ||T(1, m)||,
    valid because transfer matrices are unimodular.
    """
    norms: dict[int, float] = {1: 1.0}
    cur = np.eye(2, dtype=np.complex128)
    vals = potential_values(spec, np.arange(2, m_max + 1)) if m_max >= 2 else np.array([])
    for m, v in zip(range(2, m_max + 1), vals):
        cur = _one_step(v, E) @ cur
        peak = np.max(np.abs(cur))
        if peak > 1e140:
            raise ScaleOverflowError(f"transfer norm overflow at m={m}")
        norms[m] = float(spectral_norm(cur))
    if spec.geometry is Geometry.WHOLE_LINE:
        # T(1, m-1) = T(1, m) A(m): extend the product leftward one site
        cur = np.eye(2, dtype=np.complex128)
        vals = potential_values(spec, np.arange(1, -m_max, -1))
        for m, v in zip(range(0, -m_max - 1, -1), vals):
            cur = cur @ _one_step(v, E)
            peak = np.max(np.abs(cur))
            if peak > 1e140:
                raise ScaleOverflowError(f"transfer norm overflow at m={m}")
            norms[m] = float(spectral_norm(cur))
    return norms


@dataclass(frozen=True)
class PowerlawReport:
    E: float
    alpha: float
    m_max: int
    c_estimate: float
    argmax_m: int
    max_norm: float
    violations: tuple[int, ...]


def powerlaw_check(spec: PotentialSpec, E: float, alpha: float, m_max: int, *,
                   cap: float | None = None) -> PowerlawReport:
    """Max of ||T(m, 1; E)|| / |m|^alpha over the swept range.

    ``cap``, when given, marks the m whose ratio exceeds it as violations.
    """
    if m_max < 2:
        raise DomainError("m_max must be at least 2")
    norms = transfer_norms_from_origin(spec, E, m_max)
    best_ratio, best_m, max_norm = 0.0, 1, 0.0
    violations = []
    for m, norm in sorted(norms.items()):
        if m == 0:
            continue
        ratio = norm / abs(m) ** alpha
        max_norm = max(max_norm, norm)
        if ratio > best_ratio:
            best_ratio, best_m = ratio, m
        if cap is not None and ratio > cap:
            violations.append(m)
    return PowerlawReport(E=E, alpha=alpha, m_max=m_max, c_estimate=best_ratio,
                          argmax_m=best_m, max_norm=max_norm,
                          violations=tuple(violations))


def zeckendorf(m: int) -> list[int]:
    """Indices k_0 < k_1 < ... of the greedy Fibonacci coding of m.

    Uses the index convention F_1 = 1, F_2 = 2, F_3 = 3, F_4 = 5, ...; the
    greedy choice guarantees consecutive indices differ by at least 2, and
    the top index is max{i : F_i <= m}.
    """
    if m < 1:
        raise DomainError("Zeckendorf coding needs m >= 1")
    fib = [1, 1]
    while fib[-1] <= m:
        fib.append(fib[-1] + fib[-2])
    indices = []
    rest = m
    i = len(fib) - 2
    while rest > 0:
        while fib[i] > rest:
            i -= 1
        indices.append(i)
        rest -= fib[i]
        i -= 2
    return sorted(indices)


def zeckendorf_bound_check(spec: PotentialSpec, E: float, m_max: int, d: float) -> dict:
    """Check ||T(m, 1; E)|| <= d^{m_N} with m_N the top Zeckendorf index."""
    norms = transfer_norms_from_origin(spec, E, m_max)
    log_d = math.log(d)
    worst_margin = -math.inf
    violations = []
    for m in range(1, m_max + 1):
        m_top = zeckendorf(m)[-1]
        margin = math.log(norms[m]) - m_top * log_d
        worst_margin = max(worst_margin, margin)
        if margin > 0:
            violations.append(m)
    return {"E": E, "m_max": m_max, "d": d, "worst_log_margin": worst_margin,
            "violations": violations, "ok": not violations}


def complex_energy_bound_check(spec: PotentialSpec, E: float, N: int,
                               deltas: Sequence[complex]) -> dict:
    """Perturbed-energy transfer bound ||T(n, .; E + delta)|| <= K e^{K n |delta|}.

    K = K(N) is the exact sup of ||T(n, m; E)|| over the site box (both
    signs on the whole line, 1..N on the half line), computed from prefix
    products.  The forward sweep checks sites 1..N from anchor 1, and on
    the whole line the backward sweep checks -N..0 from anchor 0.
    """
    if N < 2:
        raise DomainError("N must be at least 2")
    whole = spec.geometry is Geometry.WHOLE_LINE
    lo = -N if whole else 1
    # prefix[j - lo] = T(j, lo; E); pairwise quotients give every T(n, m; E)
    prefixes = np.empty((N - lo + 1, 2, 2), dtype=np.complex128)
    prefixes[0] = np.eye(2)
    cur = np.eye(2, dtype=np.complex128)
    vals = potential_values(spec, np.arange(lo + 1, N + 1))
    for j, v in enumerate(vals):
        cur = _one_step(v, E) @ cur
        if np.max(np.abs(cur)) > 1e120:
            raise ScaleOverflowError("prefix product overflow while measuring K(N)")
        prefixes[j + 1] = cur
    inv = np.empty_like(prefixes)
    inv[..., 0, 0] = prefixes[..., 1, 1]
    inv[..., 1, 1] = prefixes[..., 0, 0]
    inv[..., 0, 1] = -prefixes[..., 0, 1]
    inv[..., 1, 0] = -prefixes[..., 1, 0]
    pair_norms = spectral_norm(np.einsum("aij,bjk->abik", prefixes, inv))
    k_const = float(np.max(pair_norms))
    worst = 0.0
    max_abs_delta = 0.0
    for delta in deltas:
        z = E + complex(delta)
        max_abs_delta = max(max_abs_delta, abs(complex(delta)))
        cur = np.eye(2, dtype=np.complex128)
        vals = potential_values(spec, np.arange(2, N + 1))
        for n, v in zip(range(2, N + 1), vals):
            cur = _one_step(v, z) @ cur
            bound = k_const * math.exp(k_const * n * abs(complex(delta)))
            worst = max(worst, float(spectral_norm(cur)) / bound)
        if whole:
            cur = np.eye(2, dtype=np.complex128)
            vals = potential_values(spec, np.arange(0, -N, -1))
            for n, v in zip(range(-1, -N - 1, -1), vals):
                cur = cur @ _one_step(v, z)
                bound = k_const * math.exp(k_const * abs(n) * abs(complex(delta)))
                worst = max(worst, float(spectral_norm(cur)) / bound)
    return {"E": E, "N": N, "K": k_const, "max_ratio": worst,
            "max_abs_delta": max_abs_delta, "ok": worst <= 1.0 + 1e-9}


def resolvent_tail_scaling(spec: PotentialSpec, T_values: Sequence[float], *,
                           energies_per_t: int = 5, edge_tol: float = 1e-10) -> dict:
    """Scaling of the far-mass resolvent sum along a time ladder.

    For each ladder time T, energies are sampled from B(T) (the 1/T
    neighborhood of the good band set at scale N(T)) and the quantity
    S(T) = min_E sum_{|n| >= N(T)/2} |R(E + i/T) delta_1(n)|^2 is recorded.
    The returned exponents are the log-log slope of S against T and its
    restatement per log N(T).
    """
    if spec.model is not Model.FIBONACCI:
        raise DomainError("the tail-scaling check drives the Fibonacci good sets")
    inp = fibonacci_good_set(spec.lam, edge_tol=edge_tol)
    rows = []
    for T in sorted(float(t) for t in T_values):
        n_of_t = T ** (1.0 / (1.0 + inp.alpha))
        intervals = inp.a_of_n(n_of_t)
        mids = [0.5 * (lo + hi) for lo, hi in intervals]
        offsets = np.linspace(-1.0, 1.0, max(energies_per_t // len(mids), 1)) / T
        energies = sorted(m + o for m in mids for o in offsets)[:max(energies_per_t, 1)]
        radius = int(math.ceil(4.0 * T)) + 64
        window = LatticeWindow(-radius, radius)
        s_min = math.inf
        for E in energies:
            phi = resolvent_vector(spec, E + 1j / T, window)
            sites = window.sites()
            s_val = float(np.sum(np.abs(phi[np.abs(sites) >= n_of_t / 2.0]) ** 2))
            s_min = min(s_min, s_val)
        rows.append({"T": T, "N": n_of_t, "S_min": s_min})
    logs_t = np.log([r["T"] for r in rows])
    logs_s = np.log([r["S_min"] for r in rows])
    slope_t = float(np.polyfit(logs_t, logs_s, 1)[0])
    return {
        "rows": rows,
        "exponent_in_T": slope_t,
        "exponent_in_N": slope_t * (1.0 + inp.alpha),
        "alpha": inp.alpha,
        "positive": slope_t > 0.0,
    }
