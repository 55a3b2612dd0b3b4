"""Aperiodic tight-binding chains: potentials, operator action, transfer matrices.

The chains studied here are discrete Schroedinger operators

    (H psi)(n) = psi(n-1) + psi(n+1) + V(n) psi(n)

on the whole line or on the half line with a Dirichlet condition at site 0.
The potential V takes the two values {0, lambda} according to an aperiodic
rule: the Fibonacci circle map, the period-doubling substitution, or the
Thue-Morse substitution.  A free chain (V = 0) and explicit periodic words
are available as references.

Solutions of H u = z u are propagated by 2x2 one-step matrices

    A(n, z) = [[z - V(n), -1], [1, 0]],

whose ordered products form the transfer matrices T(n, m; z).  All one-step
matrices have determinant exactly one, so transfer matrices are unimodular
and the spectral norm of an inverse equals the norm of the matrix itself.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Mapping

import numpy as np

#: Inverse golden mean, the rotation number of the Fibonacci circle map.
OMEGA = (math.sqrt(5.0) - 1.0) / 2.0

#: Left endpoint of the half-open arc that marks the high sites.
_FIB_THRESHOLD = 1.0 - OMEGA

#: Entry magnitude at which transfer products are declared overflowed.
OVERFLOW_LIMIT = 1e150

#: Hard cap on generated substitution words.
MAX_WORD_LENGTH = 1 << 24


class DomainError(ValueError):
    """A site or argument is outside the domain of the requested quantity."""


class ResourceError(RuntimeError):
    """A computation was refused because it exceeds a configured cap."""


class ScaleOverflowError(OverflowError):
    """Transfer-product entries left the floating-point range.

    Callers should switch to :func:`transfer_matrix_scaled`, which tracks a
    logarithmic scale factor alongside a normalized matrix.
    """


class TruncationError(RuntimeError):
    """A window was too small for the requested boundary accuracy."""


class Model(enum.Enum):
    FIBONACCI = "fibonacci"
    PERIOD_DOUBLING = "period-doubling"
    THUE_MORSE = "thue-morse"
    EXPLICIT_PERIODIC = "periodic"
    FREE = "free"

    @classmethod
    def parse(cls, name: str) -> "Model":
        key = name.strip().lower()
        aliases = {
            "fib": cls.FIBONACCI,
            "fibonacci": cls.FIBONACCI,
            "pd": cls.PERIOD_DOUBLING,
            "period-doubling": cls.PERIOD_DOUBLING,
            "perioddoubling": cls.PERIOD_DOUBLING,
            "tm": cls.THUE_MORSE,
            "thue-morse": cls.THUE_MORSE,
            "thuemorse": cls.THUE_MORSE,
            "free": cls.FREE,
            "periodic": cls.EXPLICIT_PERIODIC,
        }
        try:
            return aliases[key]
        except KeyError:
            raise DomainError(f"unknown model {name!r}") from None


class Geometry(enum.Enum):
    WHOLE_LINE = "whole-line"
    HALF_LINE = "half-line"


#: letter images of the two substitutions, indexed by letter.
SUBSTITUTIONS: dict[Model, np.ndarray] = {
    Model.PERIOD_DOUBLING: np.array([[0, 1], [0, 0]], dtype=np.uint8),
    Model.THUE_MORSE: np.array([[0, 1], [1, 0]], dtype=np.uint8),
}


def substitution_word(model: Model | str, k: int, *, max_len: int = MAX_WORD_LENGTH) -> np.ndarray:
    """Return the k-th substitution iterate S^k(0) as a uint8 letter array.

    The word has length 2**k.  Iterates longer than ``max_len`` raise
    :class:`ResourceError`.
    """
    model = Model.parse(model) if isinstance(model, str) else model
    if model not in SUBSTITUTIONS:
        raise DomainError(f"{model} is not a substitution model")
    if k < 0:
        raise DomainError("iterate count must be nonnegative")
    if 2 ** k > max_len:
        raise ResourceError(f"word of length 2**{k} exceeds cap {max_len}")
    images = SUBSTITUTIONS[model]
    word = np.array([0], dtype=np.uint8)
    for _ in range(k):
        word = images[word].reshape(-1)
    return word


@lru_cache(maxsize=32)
def _fixed_point_prefix(model: Model, min_len: int) -> np.ndarray:
    """Prefix of the one-sided substitution fixed point starting from 0."""
    word = np.array([0], dtype=np.uint8)
    images = SUBSTITUTIONS[model]
    while word.size < min_len:
        word = images[word].reshape(-1)
        if word.size > MAX_WORD_LENGTH:
            raise ResourceError("substitution fixed point grew past the word cap")
    return word


@lru_cache(maxsize=32)
def _left_fixed_suffix(model: Model, min_len: int) -> np.ndarray:
    """Suffix of S^{2K}(1), read as the left half of the two-sided word.

    Both substitutions satisfy: S^2(1) ends with 1 and S^2(0) begins with 0,
    and the pair "10" occurs in the one-sided fixed point.  The two-sided
    sequence ... S^{2K}(1) | S^{2K}(0) ... is therefore a legal subshift
    element; every finite subword of it occurs inside some S^{2K}("10").
    """
    word = np.array([1], dtype=np.uint8)
    images = SUBSTITUTIONS[model]
    while word.size < min_len:
        word = images[images[word].reshape(-1)].reshape(-1)
        if word.size > MAX_WORD_LENGTH:
            raise ResourceError("substitution fixed point grew past the word cap")
    return word


def _parse_two_sided_seed(seed: str) -> tuple[np.ndarray, np.ndarray]:
    if "|" not in seed:
        raise DomainError("explicit two-sided seed must contain '|' at the origin")
    left, right = seed.split("|", 1)
    if not set(left + right) <= {"0", "1"}:
        raise DomainError("seed words use letters 0 and 1 only")
    to_arr = lambda s: np.frombuffer(s.encode(), dtype=np.uint8) - ord("0")
    return to_arr(left), to_arr(right)


@dataclass(frozen=True)
class PotentialSpec:
    """Declarative description of a chain potential.

    Parameters
    ----------
    model:
        One of the :class:`Model` members (or a string alias).
    lam:
        Coupling constant; the potential takes values in {0, lam} for the
        three named aperiodic models.
    geometry:
        Whole line or Dirichlet half line.
    seed:
        For the substitution models, an optional explicit two-sided word
        "LEFT|RIGHT" overriding the canonical subshift element; for
        EXPLICIT_PERIODIC the mandatory period word.  Integers are accepted
        as a substitution-iterate hint and otherwise ignored (words are
        grown on demand).
    perturbation:
        Finitely supported overlay added on top of the base potential,
        stored as a sorted tuple of (site, value) pairs.
    """

    model: Model
    lam: float = 0.0
    geometry: Geometry = Geometry.WHOLE_LINE
    seed: int | str | None = None
    perturbation: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        model = Model.parse(self.model) if isinstance(self.model, str) else self.model
        object.__setattr__(self, "model", model)
        if isinstance(self.geometry, str):
            object.__setattr__(self, "geometry", Geometry(self.geometry))
        if model is Model.EXPLICIT_PERIODIC and not isinstance(self.seed, str):
            raise DomainError("explicit periodic model requires a seed word")
        pert = tuple(sorted((int(n), float(v)) for n, v in dict(self.perturbation).items())
                     if isinstance(self.perturbation, Mapping) else
                     sorted((int(n), float(v)) for n, v in self.perturbation))
        if self.geometry is Geometry.HALF_LINE and any(n < 1 for n, _ in pert):
            raise DomainError("half-line perturbation sites must satisfy n >= 1")
        object.__setattr__(self, "perturbation", pert)

    @property
    def perturbation_map(self) -> dict[int, float]:
        return dict(self.perturbation)

    def describe(self) -> str:
        pieces = [self.model.value, f"lambda={self.lam:.17g}", self.geometry.value]
        if self.seed is not None:
            pieces.append(f"seed={self.seed}")
        if self.perturbation:
            pieces.append(f"perturbation={self.perturbation}")
        return "; ".join(pieces)


def perturb(spec: PotentialSpec, overlay: Mapping[int, float]) -> PotentialSpec:
    """Return a new spec whose potential is the old one plus ``overlay``.

    Overlays compose additively: perturbing twice at the same site adds the
    two values.
    """
    merged = dict(spec.perturbation)
    for site, value in overlay.items():
        merged[site] = merged.get(site, 0.0) + float(value)
    merged = {n: v for n, v in merged.items() if v != 0.0}
    return replace(spec, perturbation=tuple(sorted(merged.items())))


@dataclass(frozen=True)
class LatticeWindow:
    """Inclusive site range [lo, hi] with its geometry."""

    lo: int
    hi: int
    geometry: Geometry = Geometry.WHOLE_LINE

    def __post_init__(self):
        if isinstance(self.geometry, str):
            object.__setattr__(self, "geometry", Geometry(self.geometry))
        if self.lo > self.hi:
            raise DomainError(f"window lo={self.lo} exceeds hi={self.hi}")
        if self.geometry is Geometry.HALF_LINE and self.lo < 1:
            raise DomainError("half-line windows start at site 1 or later")

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    def sites(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1, dtype=np.int64)

    def index(self, n: int) -> int:
        if not self.lo <= n <= self.hi:
            raise DomainError(f"site {n} outside window [{self.lo}, {self.hi}]")
        return n - self.lo


def _substitution_letters(spec: PotentialSpec, sites: np.ndarray) -> np.ndarray:
    """Letters of the subshift element at the given sites.

    Site n >= 1 reads letter n-1 of the one-sided fixed point; site n <= 0
    reads the left half of the canonical two-sided element (or the explicit
    seed when one was supplied).
    """
    letters = np.empty(sites.shape, dtype=np.uint8)
    pos = sites >= 1
    if isinstance(spec.seed, str):
        left, right = _parse_two_sided_seed(spec.seed)
        if np.any(pos):
            idx = sites[pos] - 1
            if idx.size and idx.max() >= right.size:
                raise DomainError("explicit seed word too short for requested sites")
            letters[pos] = right[idx]
        if np.any(~pos):
            idx = -sites[~pos]
            if idx.size and idx.max() >= left.size:
                raise DomainError("explicit seed word too short for requested sites")
            letters[~pos] = left[left.size - 1 - idx]
        return letters
    if np.any(pos):
        need = int(sites[pos].max())
        right = _fixed_point_prefix(spec.model, need)
        letters[pos] = right[sites[pos] - 1]
    if np.any(~pos):
        need = int(-sites[~pos].min()) + 1
        left = _left_fixed_suffix(spec.model, need)
        letters[~pos] = left[left.size - 1 + sites[~pos]]
    return letters


def potential_values(spec: PotentialSpec, sites: np.ndarray) -> np.ndarray:
    """Vectorized potential evaluation over an integer site array."""
    sites = np.asarray(sites, dtype=np.int64)
    if spec.geometry is Geometry.HALF_LINE and sites.size and sites.min() < 1:
        raise DomainError("half-line potential is defined for n >= 1 only")
    if spec.model is Model.FREE:
        vals = np.zeros(sites.shape, dtype=np.float64)
    elif spec.model is Model.FIBONACCI:
        frac = (sites * OMEGA) % 1.0
        vals = np.where(frac >= _FIB_THRESHOLD, spec.lam, 0.0)
    elif spec.model in SUBSTITUTIONS:
        vals = spec.lam * _substitution_letters(spec, sites).astype(np.float64)
    elif spec.model is Model.EXPLICIT_PERIODIC:
        if not set(str(spec.seed)) <= {"0", "1"}:
            raise DomainError("periodic seed words use letters 0 and 1 only")
        word = np.frombuffer(str(spec.seed).encode(), dtype=np.uint8) - ord("0")
        vals = spec.lam * word[(sites - 1) % word.size].astype(np.float64)
    else:  # pragma: no cover - enum is closed
        raise DomainError(f"unhandled model {spec.model}")
    if spec.perturbation:
        vals = vals.astype(np.float64, copy=True)
        for site, value in spec.perturbation:
            vals[sites == site] += value
    return vals


def potential_value(spec: PotentialSpec, n: int) -> float:
    """Potential at a single site, perturbation overlay included."""
    return float(potential_values(spec, np.array([n]))[0])


def one_step_matrix(spec: PotentialSpec, n: int, z: complex) -> np.ndarray:
    """One-step matrix [[z - V(n), -1], [1, 0]]; determinant is exactly 1."""
    v = potential_value(spec, n)
    return np.array([[z - v, -1.0], [1.0, 0.0]], dtype=np.complex128)


def det2(m: np.ndarray) -> complex | np.ndarray:
    """Determinant of a 2x2 matrix (broadcasts over leading axes)."""
    m = np.asarray(m)
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def mat_inv_unimodular(m: np.ndarray) -> np.ndarray:
    """Exact inverse of a determinant-one 2x2 matrix via its adjugate."""
    m = np.asarray(m)
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 1, 1] = m[..., 0, 0]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    return out


def spectral_norm(m: np.ndarray) -> float | np.ndarray:
    """Spectral (2-)norm of 2x2 matrices in closed form via singular values.

    For a 2x2 matrix, sigma_max^2 = (f + sqrt(f^2 - 4 d^2)) / 2 with f the
    squared Frobenius norm and d = |det|.
    """
    m = np.asarray(m, dtype=np.complex128)
    fro2 = np.sum(np.abs(m) ** 2, axis=(-2, -1))
    d = np.abs(det2(m))
    disc = np.maximum(fro2 * fro2 - 4.0 * d * d, 0.0)
    smax2 = 0.5 * (fro2 + np.sqrt(disc))
    out = np.sqrt(smax2)
    return float(out) if out.ndim == 0 else out


def _site_range_values(spec: PotentialSpec, lo: int, hi: int) -> np.ndarray:
    return potential_values(spec, np.arange(lo, hi + 1, dtype=np.int64))


def _check_transfer_sites(spec: PotentialSpec, n: int, m: int) -> None:
    if spec.geometry is Geometry.HALF_LINE and min(n, m) < 0:
        raise DomainError("half-line transfer matrices need n, m >= 0")


def transfer_matrix(spec: PotentialSpec, n: int, m: int, z: complex) -> np.ndarray:
    """Transfer matrix T(n, m; z) propagating solution data from m to n.

    For n > m this is the ordered product A(n) A(n-1) ... A(m+1); T(n, n) is
    the identity; for n < m the unimodular inverse of T(m, n; z).  Raises
    :class:`ScaleOverflowError` when entries leave the floating-point range.
    """
    _check_transfer_sites(spec, n, m)
    if n == m:
        return np.eye(2, dtype=np.complex128)
    if n < m:
        return mat_inv_unimodular(transfer_matrix(spec, m, n, z))
    vals = _site_range_values(spec, m + 1, n)
    out = np.eye(2, dtype=np.complex128)
    for j, v in enumerate(vals):
        a = np.array([[z - v, -1.0], [1.0, 0.0]], dtype=np.complex128)
        out = a @ out
        if j % 64 == 0 or j == vals.size - 1:
            peak = np.max(np.abs(out))
            if not np.isfinite(peak) or peak > OVERFLOW_LIMIT:
                raise ScaleOverflowError(
                    f"transfer product overflow near site {m + 1 + j}; "
                    "use transfer_matrix_scaled")
    return out


def transfer_matrix_scaled(spec: PotentialSpec, n: int, m: int, z: complex) -> tuple[float, np.ndarray]:
    """Transfer matrix as (log_scale, normalized matrix).

    The true matrix is exp(log_scale) times the returned one; useful off the
    spectrum where entries grow exponentially.
    """
    _check_transfer_sites(spec, n, m)
    if n == m:
        return 0.0, np.eye(2, dtype=np.complex128)
    if n < m:
        log_scale, mat = transfer_matrix_scaled(spec, m, n, z)
        # the true matrix e^ls M has det 1, so its inverse is its adjugate
        # e^ls adj(M); the adjugate is linear in the entries for 2x2.
        ds, inv = _renorm(mat_inv_unimodular(mat))
        return log_scale + ds, inv
    vals = _site_range_values(spec, m + 1, n)
    out = np.eye(2, dtype=np.complex128)
    log_scale = 0.0
    for v in vals:
        a = np.array([[z - v, -1.0], [1.0, 0.0]], dtype=np.complex128)
        out = a @ out
        peak = np.max(np.abs(out))
        if peak > 1e100:
            out /= peak
            log_scale += np.log(peak)
    ds, out = _renorm(out)
    return log_scale + ds, out


def _renorm(m: np.ndarray) -> tuple[float, np.ndarray]:
    peak = float(np.max(np.abs(m)))
    if peak == 0.0 or peak == 1.0:
        return 0.0, m
    return math.log(peak), m / peak


def apply_hamiltonian(spec: PotentialSpec, window: LatticeWindow, v: np.ndarray) -> np.ndarray:
    """Apply the chain Hamiltonian on a window with Dirichlet truncation."""
    v = np.asarray(v)
    if v.shape[0] != window.size:
        raise DomainError(f"vector length {v.shape[0]} does not match window size {window.size}")
    if spec.geometry is not window.geometry:
        raise DomainError("window geometry does not match the potential spec")
    diag = potential_values(spec, window.sites())
    out = diag * v
    out[:-1] += v[1:]
    out[1:] += v[:-1]
    return out
