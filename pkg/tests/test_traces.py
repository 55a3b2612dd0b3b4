import numpy as np
import numpy.testing as npt
import pytest

from quasidyn.lattice import Model, PotentialSpec, one_step_matrix, spectral_norm
from quasidyn.spectra import approximant_spectrum, bound_parameters
from quasidyn.traces import (
    FIB_CONVENTION_ID,
    fib_base_matrices,
    fib_invariant,
    fib_matrices,
    fib_trace_orbit,
    fib_trace_orbit_grid,
    fibonacci_numbers,
    indexing_convention_report,
    pd_root_certificates,
    pd_special_energies,
    subst_trace_orbit,
    subst_transfer,
    tm_root_certificates,
    tm_special_energies,
    trace_derivative_grid,
    trace_derivative_orbit,
)

from conftest import brute_transfer, fib_spec


def test_fibonacci_numbers():
    npt.assert_array_equal(fibonacci_numbers(10), [1, 1, 2, 3, 5, 8, 13, 21, 34, 55, 89])


def test_indexing_oracle_picks_site_one_product():
    report = indexing_convention_report(lam=1.0, E=0.7, kmax=8)
    assert report["adopted"] == "A(F_k)...A(1)"
    assert report["residual_adopted"] < 1e-12
    assert report["residual_rejected"] > 0.1
    assert report["convention_id"] == FIB_CONVENTION_ID
    # the recursion anchors the convention at other couplings too
    report = indexing_convention_report(lam=3.2, E=-1.1, kmax=8)
    assert report["adopted"] == "A(F_k)...A(1)"


@pytest.mark.parametrize("lam,energy", [(1.0, 0.0), (1.0, 0.5), (2.0, -0.8)])
def test_fib_matrices_match_brute_products(lam, energy):
    spec = fib_spec(lam)
    fib = fibonacci_numbers(5)
    mats = fib_matrices(lam, energy, 5)
    npt.assert_allclose(mats[0], one_step_matrix(spec, 0, energy), atol=1e-15)
    for k in range(1, 6):
        npt.assert_allclose(mats[k], brute_transfer(spec, int(fib[k]), 0, energy),
                            atol=1e-12)


def test_fib_matrices_unimodular_on_band():
    band = approximant_spectrum(1.0, 16).bands[321]
    mats = fib_matrices(1.0, 0.5 * (band.lo + band.hi), 12)
    dets = mats[:, 0, 0] * mats[:, 1, 1] - mats[:, 0, 1] * mats[:, 1, 0]
    npt.assert_allclose(dets, 1.0, atol=1e-12)


def test_trace_orbit_matches_matrix_traces(rng):
    for _ in range(25):
        lam = rng.uniform(0.2, 4.0)
        energy = rng.uniform(-4.0, 4.0)
        orbit = fib_trace_orbit(lam, energy, 12)
        try:
            mats = fib_matrices(lam, energy, 12)
        except Exception:
            continue
        traces = np.trace(mats, axis1=1, axis2=2).real
        stop = orbit.overflow_at if orbit.overflow_at is not None else 13
        npt.assert_allclose(orbit.xs[:stop], traces[:stop], rtol=1e-9, atol=1e-9)


def test_trace_orbit_seeds_from_matrices():
    m0, m1 = fib_base_matrices(2.0, 0.3)
    orbit = fib_trace_orbit(2.0, 0.3, 4)
    assert orbit.xs[0] == np.trace(m0).real
    assert orbit.xs[1] == np.trace(m1).real
    assert orbit.xs[2] == np.trace(m0 @ m1).real


def test_invariant_examples():
    assert fib_invariant(2.0, 2.0, 2.0) == 4.0
    assert fib_invariant(0.0, 0.0, 0.0) == 0.0


def test_invariant_constant_along_orbit():
    # lam = 1: the conserved value is 5 at every step
    for energy in (0.0, 0.5):
        orbit = fib_trace_orbit(1.0, energy, 20)
        inv = orbit.invariant_values()
        xs = orbit.xs
        for k in range(1, 19):
            if not np.isfinite(inv[k]):
                continue
            if max(abs(xs[k - 1]), abs(xs[k]), abs(xs[k + 1])) > 1e6:
                continue
            assert abs(inv[k] - 5.0) / 5.0 < 1e-9


def test_invariant_drift_random_couplings(rng):
    for _ in range(60):
        lam = rng.uniform(0.0, 4.0)
        energy = rng.uniform(-4.0, 4.0)
        orbit = fib_trace_orbit(lam, energy, 25)
        inv = orbit.invariant_values()
        target = 4.0 + lam * lam
        xs = orbit.xs
        for k in range(1, 24):
            if not np.isfinite(inv[k]):
                continue
            if max(abs(xs[k - 1]), abs(xs[k]), abs(xs[k + 1])) > 1e6:
                continue
            assert abs(inv[k] - target) / target < 1e-9


def test_orbit_flags_overflow():
    orbit = fib_trace_orbit(4.0, -4.0, 30)
    assert orbit.overflow_at is not None
    assert abs(orbit.xs[orbit.overflow_at]) > 1e150


def test_traces_bounded_on_band_energies():
    # level-3 band energies keep the whole orbit below the coupling constant bound
    params = bound_parameters(5.0)
    for band in approximant_spectrum(5.0, 3):
        for energy in band.interior_points(9):
            orbit = fib_trace_orbit(5.0, float(energy), 3)
            assert np.max(np.abs(orbit.xs[:4])) <= params.c_lambda + 1e-9


def test_grid_orbit_matches_scalar():
    energies = np.linspace(-2.0, 2.0, 11)
    grid = fib_trace_orbit_grid(1.0, energies, 10)
    for i, energy in enumerate(energies):
        orbit = fib_trace_orbit(1.0, float(energy), 10)
        stop = orbit.overflow_at if orbit.overflow_at is not None else 11
        npt.assert_allclose(grid[:stop, i], orbit.xs[:stop], rtol=1e-9, atol=1e-9)


# ---------------------------------------------------------------------------
# derivatives

def test_derivative_orbit_base_cases():
    lam, energy = 1.7, 0.4
    orbit = trace_derivative_orbit(lam, energy, 3)
    assert orbit.dxs[0] == 1.0
    assert orbit.dxs[1] == 1.0
    assert orbit.dxs[2] == pytest.approx(2.0 * energy - lam, abs=1e-14)


def test_derivative_orbit_vs_finite_differences():
    lam, energy, h = 1.0, 0.3, 1e-6
    orbit = trace_derivative_orbit(lam, energy, 10)
    plus = fib_trace_orbit(lam, energy + h, 10)
    minus = fib_trace_orbit(lam, energy - h, 10)
    fd = (plus.xs - minus.xs) / (2.0 * h)
    for k in range(11):
        assert orbit.dxs[k] == pytest.approx(fd[k], rel=1e-4, abs=1e-6)


def test_derivative_grid_matches_orbit():
    energies = np.linspace(3.2, 6.8, 7)
    xs, dxs = trace_derivative_grid(5.0, energies, 8)
    for i, energy in enumerate(energies):
        orbit = trace_derivative_orbit(5.0, float(energy), 8)
        npt.assert_allclose(xs[:, i], orbit.xs, rtol=1e-10, atol=1e-10)
        npt.assert_allclose(dxs[:, i], orbit.dxs, rtol=1e-10, atol=1e-10)


def test_derivative_ratio_inside_type_a_band():
    # on an interior band contained in its predecessor, the consecutive-level
    # derivative ratio stays below lam + 11
    lam = 5.0
    from quasidyn.spectra import classify_bands, BandKind

    bands = classify_bands(lam, 7)
    a_band = next(b for b in bands if b.kind is BandKind.TYPE_A)
    energies = a_band.interior_points(33)
    _, dxs = trace_derivative_grid(lam, energies, 7)
    ratios = np.abs(dxs[7] / dxs[6])
    assert np.max(ratios) <= lam + 11.0 + 1e-6


# ---------------------------------------------------------------------------
# substitution blocks

def test_pd_explicit_blocks_at_zero_energy():
    for lam in (1.0, 2.5):
        t0, t1 = subst_transfer("pd", lam, 0.0, 1)
        npt.assert_array_equal(t0.real, [[-1.0, lam], [0.0, -1.0]])
        npt.assert_array_equal(t1.real, -np.eye(2))
        assert np.all(t0.imag == 0) and np.all(t1.imag == 0)


def test_pd_block_power_formula():
    lam = 1.5
    t0, _ = subst_transfer("pd", lam, 0.0, 1)
    for n in (2, 5, 11):
        expected = (-1.0) ** n * np.array([[1.0, -n * lam], [0.0, 1.0]])
        npt.assert_allclose(np.linalg.matrix_power(t0, n).real, expected, atol=1e-12)


def test_subst_traces_match_blocks():
    rng = np.random.default_rng(5)
    for model in ("pd", "tm"):
        for _ in range(10):
            lam = rng.uniform(0.2, 3.0)
            energy = rng.uniform(-3.0, 3.0)
            orbit = subst_trace_orbit(model, lam, energy, 14)
            for k in range(15):
                if orbit.overflow_at is not None and k >= orbit.overflow_at:
                    break
                if abs(orbit.xs[k]) > 1e50:
                    break
                t0, t1 = subst_transfer(model, lam, energy, k)
                assert orbit.xs[k] == pytest.approx(np.trace(t0).real, rel=1e-8, abs=1e-8)
                assert orbit.ys[k] == pytest.approx(np.trace(t1).real, rel=1e-8, abs=1e-8)


def test_pd_orbit_at_zero_energy():
    orbit = subst_trace_orbit("pd", 1.0, 0.0, 3)
    assert orbit.xs[1] == -2.0 and orbit.ys[1] == -2.0


def test_tm_traces_coincide_from_level_one(rng):
    for _ in range(10):
        lam = rng.uniform(0.2, 3.0)
        energy = rng.uniform(-3.0, 3.0)
        for k in (1, 2, 3, 5):
            t0, t1 = subst_transfer("tm", lam, energy, k)
            assert np.trace(t0).real == pytest.approx(np.trace(t1).real, rel=1e-10, abs=1e-10)


def test_tm_two_is_fixed():
    # once the trace hits 2 it stays there
    orbit = subst_trace_orbit("tm", 1.0, 2.0, 10)
    npt.assert_allclose(orbit.xs[3:], 2.0, atol=1e-9)


def test_tm_factorization_identity():
    # x_{k+1} - 2 = x_{k-1}^2 (x_k - 2) pointwise
    energies = np.linspace(-2.9, 3.9, 500)
    lam = 1.0
    orbits = [subst_trace_orbit("tm", lam, float(e), 8).xs for e in energies]
    xs = np.array(orbits).T
    for k in range(2, 8):
        lhs = xs[k + 1] - 2.0
        rhs = xs[k - 1] ** 2 * (xs[k] - 2.0)
        good = np.isfinite(lhs) & np.isfinite(rhs) & (np.abs(rhs) < 1e40)
        npt.assert_allclose(lhs[good], rhs[good], rtol=1e-9, atol=1e-9)


# ---------------------------------------------------------------------------
# special energies

def test_pd_root_level_zero():
    roots = pd_special_energies(1.0, 0)
    npt.assert_allclose(roots, [0.0], atol=1e-14)
    _, t1 = subst_transfer("pd", 1.0, 0.0, 1)
    npt.assert_array_equal(t1.real, -np.eye(2))


def test_pd_roots_level_two_contract():
    roots = pd_special_energies(1.0, 2)
    assert roots.size == 4
    for energy in roots:
        orbit = subst_trace_orbit("pd", 1.0, float(energy), 2)
        assert abs(orbit.xs[2]) < 1e-10
        t0, _ = subst_transfer("pd", 1.0, float(energy), 3)
        assert np.trace(t0).real == pytest.approx(-2.0, abs=1e-8)


@pytest.mark.parametrize("k", range(0, 7))
def test_pd_root_counts_and_certificates(k):
    certs = pd_root_certificates(1.0, k)
    assert len(certs) == 2 ** k
    for cert in certs:
        assert cert["trace_defect"] <= 1e-8
        assert cert["t1_plus_identity_norm"] <= 1e-8


def test_tm_special_energies_level_three():
    roots = tm_special_energies(1.0, 3)
    npt.assert_allclose(sorted(roots), [-1.0, 2.0], atol=1e-12)
    for energy in (-1.0, 2.0):
        t0, t1 = subst_transfer("tm", 1.0, energy, 3)
        assert spectral_norm(t0 - np.eye(2)) <= 1e-8
        assert spectral_norm(t1 - np.eye(2)) <= 1e-8


def test_tm_special_energies_identity_blocks():
    for k in (4, 5, 6):
        for energy in tm_special_energies(1.0, k):
            t0, t1 = subst_transfer("tm", 1.0, float(energy), k)
            assert spectral_norm(t0 - np.eye(2)) <= 1e-8
            assert spectral_norm(t1 - np.eye(2)) <= 1e-8


def test_tm_certificates_to_level_eight():
    for cert in tm_root_certificates(1.0, 8):
        assert cert["t0_minus_identity_norm"] <= 1e-8
        assert cert["t1_minus_identity_norm"] <= 1e-8


def test_tm_special_energy_nesting():
    previous = tm_special_energies(1.0, 3)
    for k in (4, 5, 6):
        current = tm_special_energies(1.0, k)
        for energy in previous:
            assert np.min(np.abs(current - energy)) < 1e-9
        previous = current


def test_tm_level_two_set_is_excluded():
    # energies with x_2 = 2 are dropped from the returned special set
    from quasidyn.traces import _tm_trace_on_grid

    roots = tm_special_energies(1.0, 6)
    x2 = _tm_trace_on_grid(1.0, roots, 2)
    assert np.all(np.abs(x2 - 2.0) > 1e-9)
