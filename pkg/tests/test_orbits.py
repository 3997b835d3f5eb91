import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stadium_otoc.geometry import BilliardGeometry, UnitSystem
from stadium_otoc.orbits import (OrbitError, axial_orbit, c_gamma, chebyshev_trace, cos_factor, find_orbit,
                                 load_library, monodromy, orbit_library, po_correction, save_library,
                                 vertical_orbit)

G = BilliardGeometry()


@pytest.fixture(scope="module")
def library():
    return orbit_library(G, n_orbits=8, seed=0)


def test_axial_orbit_against_hand_composition():
    o = axial_orbit(G)
    assert o.length == pytest.approx(2 * (G.ls + G.a), abs=1e-14)
    F = np.array([[1.0, G.ls + G.a], [0.0, 1.0]])
    flat = -np.eye(2)
    arc = np.array([[-1.0, 0.0], [2.0 / G.a, -1.0]])
    hand = flat @ F @ arc @ F
    M, tr = monodromy(o)
    assert tr == pytest.approx(np.trace(hand), abs=1e-12)
    assert np.linalg.det(M) == pytest.approx(1.0, abs=1e-12)
    assert o.unstable


def test_vertical_orbit_is_marginal_with_zero_correlation():
    o = vertical_orbit(G, 0.4)
    assert o.length == pytest.approx(2 * G.a, abs=1e-14)
    assert o.marginal and not o.unstable
    assert abs(abs(o.trace) - 2) < 1e-12
    c = c_gamma(o, np.linspace(0, 3, 7), pmag=2.0)
    np.testing.assert_array_equal(c.values, 0.0)
    with pytest.raises(ValueError, match="marginal"):
        po_correction([o], 1, 0.1, [0.0])
    with pytest.raises(ValueError):
        vertical_orbit(G, 1.5)


def test_library_orbits(library):
    assert len(library) >= 5
    for o in library:
        assert o.closure_residual < 1e-10
        assert o.angle_residual < 1e-10
        assert np.linalg.det(o.monodromy) == pytest.approx(1.0, abs=1e-8)
        assert o.unstable
        for p in (2, 3, 4):
            tr_p = np.trace(np.linalg.matrix_power(o.monodromy, p))
            assert chebyshev_trace(o.trace, p) == pytest.approx(tr_p, rel=1e-8, abs=1e-8)
    assert len({round(o.length, 8) for o in library}) == len(library)


def test_newton_recovers_orbit_from_perturbed_guess(library):
    o = next(x for x in library if not x.on_symmetry_line)
    rng = np.random.default_rng(0)
    found = find_orbit(G, o.params + 1e-3 * rng.standard_normal(o.params.size))
    assert found.length == pytest.approx(o.length, abs=1e-10)
    assert found.closure_residual < 1e-10


def test_find_orbit_rejects_corner_guess():
    with pytest.raises(OrbitError):
        find_orbit(G, np.array([0.0, 0.0]), max_iter=5)


@given(st.floats(-50, 50), st.integers(0, 6))
@settings(max_examples=60, deadline=None)
def test_chebyshev_identity(tr, p):
    # any 2x2 matrix of unit determinant with the given trace
    M = np.array([[tr, -1.0], [1.0, 0.0]])
    expected = np.trace(np.linalg.matrix_power(M, p))
    assert chebyshev_trace(tr, p) == pytest.approx(expected, rel=1e-8, abs=1e-8)


def test_c_gamma_refinement_periodicity_and_sign(library):
    o = library[1]
    pmag, m = 3.0, 0.5
    fine = c_gamma(o, [0.0], pmag, m, n_nodes=10240).values[0]
    coarse = c_gamma(o, [0.0], pmag, m).values[0]
    assert abs(coarse / fine - 1) < 1e-6
    period = o.length * m / pmag
    t = np.linspace(0, period, 9)
    a = c_gamma(o, t, pmag, m).values
    b = c_gamma(o, t + period, pmag, m).values
    np.testing.assert_allclose(a, b, rtol=1e-9)
    assert np.all(a >= 0)
    with pytest.raises(ValueError):
        c_gamma(o, [0.0], pmag, m, n_nodes=100)


def test_po_correction_empty_and_superposition(library):
    t = np.linspace(0, 0.3, 4)
    units = UnitSystem()
    zero = po_correction([], 2, 1 / 32, t, units)
    np.testing.assert_array_equal(zero.values, 0.0)
    a, b = library[0], library[1]
    ab = po_correction([a, b], 2, 1 / 32, t, units).values
    sa = po_correction([a], 2, 1 / 32, t, units).values
    sb = po_correction([b], 2, 1 / 32, t, units).values
    np.testing.assert_array_equal(ab, sa + sb)


def test_po_correction_is_damped_at_low_temperature(library):
    t = np.array([0.0, 0.1])
    cold = po_correction([library[0]], 1, 1e3, t).values
    assert np.all(np.isfinite(cold)) and np.max(np.abs(cold)) < 1e-3


def test_cos_factor_period(library):
    o = library[0]
    k = np.linspace(0, 40, 200001)
    c = cos_factor(o, k)
    peaks = k[1:-1][(c[1:-1] > c[:-2]) & (c[1:-1] > c[2:])]
    assert np.mean(np.diff(peaks)) == pytest.approx(2 * np.pi / o.length, rel=1e-4)


def test_library_roundtrip_with_nu_override(tmp_path, library):
    path = save_library(library, tmp_path / "lib.json")
    back = load_library(G, path, {library[1].label: 7})
    assert [o.label for o in back] == [o.label for o in library]
    assert back[1].nu == 7
    np.testing.assert_allclose([o.length for o in back], [o.length for o in library], rtol=1e-12)
