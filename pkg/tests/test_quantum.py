import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from stadium_otoc.quantum import (LeakageWarning, ThermalWeights, heisenberg, otoc, otoc_components,
                                  otoc_multi, state_components)
from stadium_otoc.spectral import EigenBasis, OperatorMatrix, p_matrix

# toy spectra are far too short for a clean thermal cutoff
pytestmark = pytest.mark.filterwarnings("ignore::stadium_otoc.quantum.LeakageWarning")


def toy(n=50, n_keep=None, seed=0):
    rng = np.random.default_rng(seed)
    E = np.sort(rng.uniform(0, 40, n))
    A = rng.standard_normal((n, n))
    basis = EigenBasis(E, None, 0.1, "toy", n_keep=n_keep)
    X = OperatorMatrix(0.5 * (A + A.T), "X", basis.fingerprint)
    return basis, X, p_matrix(X, basis)


def dense_components(basis, X, P, beta, t):
    H = np.diag(basis.energies)
    U = sla.expm(1j * H * t)
    At = U @ X.data @ U.conj().T
    B = P.data
    rho = np.diag(np.exp(-beta * basis.energies))
    rho /= np.trace(rho)
    O1 = np.trace(rho @ At @ B @ At @ B)
    O2 = np.trace(rho @ At @ B @ B @ At).real
    O3 = np.trace(rho @ B @ At @ At @ B).real
    M = At @ B - B @ At
    return O1, O2, O3, np.trace(rho @ M.conj().T @ M).real


@given(st.floats(-5, 5))
@settings(max_examples=25, deadline=None)
def test_heisenberg_invariants(t):
    basis, X, _ = toy(20)
    At = heisenberg(X, basis, t).matrix
    assert np.linalg.norm(At) == pytest.approx(np.linalg.norm(X.data), rel=1e-12)
    assert np.trace(At) == pytest.approx(np.trace(X.data), abs=1e-10)
    if t == 0:
        np.testing.assert_array_equal(At, X.data)


@pytest.mark.parametrize("t", [0.0, 0.13, 1.7])
def test_against_dense_evaluation(t):
    basis, X, P = toy(50)
    w = ThermalWeights.build(basis, 0.05)
    O1, O2, O3 = otoc_components(X, P, basis, w, t)
    d1, d2, d3, dC = dense_components(basis, X, P, 0.05, t)
    assert O1 == pytest.approx(d1, rel=1e-10)
    assert O2 == pytest.approx(d2, rel=1e-10)
    assert O3 == pytest.approx(d3, rel=1e-10)
    C = otoc(X, P, basis, w, [t]).values[0]
    assert C == pytest.approx(dC, rel=1e-10)


def test_infinite_temperature_o2_equals_o3():
    basis, X, P = toy(40)
    w = ThermalWeights.build(basis, 0.0)
    q = otoc_multi(X, P, basis, [w], np.linspace(0, 3, 13))[0]
    np.testing.assert_allclose(q.O2, q.O3, rtol=1e-10)


def test_identities_and_positivity():
    basis, X, P = toy(60, n_keep=45)
    for t in np.linspace(0, 4, 9):
        s = state_components(X, P, basis, t)
        assert s.identity_residual < 1e-10
        assert np.all(s.C >= 0) and np.all(s.O2 >= 0) and np.all(s.O3 >= 0)


def test_time_reversal_symmetry():
    basis, X, P = toy(30)
    w = ThermalWeights.build(basis, 0.1)
    t = np.linspace(0.1, 2, 7)
    a = otoc(X, P, basis, w, t).values
    b = otoc_multi(X, P, basis, [w], -t[::-1])[0].C[::-1]
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_multi_temperature_matches_single():
    basis, X, P = toy(30)
    ws = [ThermalWeights.build(basis, b) for b in (0.02, 0.2)]
    t = np.linspace(0, 1, 5)
    multi = otoc_multi(X, P, basis, ws, t)
    for w, q in zip(ws, multi):
        np.testing.assert_allclose(otoc(X, P, basis, w, t).values, q.C, rtol=1e-12)
    assert multi[0].series("O1").meta["quantity"] == "O1"


def test_leakage_warning_and_weights():
    basis, X, P = toy(30)
    hot = ThermalWeights.build(basis, 1e-3)
    assert hot.leaky
    with pytest.warns(LeakageWarning):
        otoc(X, P, basis, hot, [0.0])
    cold = ThermalWeights.from_kT(basis, 0.5)
    assert not cold.leaky and cold.support < basis.n_keep
    assert cold.average(np.ones(basis.n_keep)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ThermalWeights.build(basis, -1.0)
