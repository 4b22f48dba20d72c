import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chanest.numerics import khatri_rao, make_rng
from chanest.signal_model import (
    PAPER_PATHS,
    ArrayGeometry,
    OfdmConfig,
    PathParams,
    Scenario,
    freq_response_vector,
    noise_free_measurements,
    paper_scenario,
    path_matrices,
    permutation_matrix,
    shuffle_permutation,
    steering_vector,
    synthesize,
)

from conftest import crandn


def test_steering_broadside_is_constant():
    g = ArrayGeometry((0.0, 0.37, 1.1))
    np.testing.assert_allclose(steering_vector(90.0, g), np.full(3, 1 / np.sqrt(3)), atol=1e-15)


def test_steering_endfire_half_wavelength():
    a = steering_vector(0.0, ArrayGeometry.ula(4))
    np.testing.assert_allclose(a, 0.5 * np.array([1, -1, 1, -1]), atol=1e-12)


@given(st.floats(0.0, 180.0), st.integers(2, 8), st.floats(0.1, 2.0))
def test_steering_unit_norm(theta, M, d):
    assert np.linalg.norm(steering_vector(theta, ArrayGeometry.ula(M, d))) == pytest.approx(1, abs=1e-12)


def test_freq_response_examples():
    ofdm = OfdmConfig(N=4)
    np.testing.assert_allclose(freq_response_vector(0.0, ofdm), np.full(4, 0.5))
    np.testing.assert_allclose(freq_response_vector(4.0, ofdm), np.full(4, 0.5), atol=1e-12)
    np.testing.assert_allclose(freq_response_vector(1.0, ofdm), 0.5 * np.array([1, -1j, -1, 1j]),
                               atol=1e-12)


@given(st.floats(0.0, 40.0), st.integers(2, 32))
def test_freq_response_unit_norm_and_periodic(tau, N):
    ofdm = OfdmConfig(N=N)
    b = freq_response_vector(tau, ofdm)
    assert np.linalg.norm(b) == pytest.approx(1, abs=1e-12)
    np.testing.assert_allclose(freq_response_vector(tau + N, ofdm), b, atol=1e-9)


def test_non_finite_parameters_rejected():
    with pytest.raises(ValueError):
        steering_vector(np.nan, ArrayGeometry.ula(2))
    with pytest.raises(ValueError):
        freq_response_vector(np.inf, OfdmConfig())


def test_geometry_validation():
    with pytest.raises(ValueError):
        ArrayGeometry((0.5, 1.0))
    with pytest.raises(ValueError):
        ArrayGeometry((0.0,))
    assert ArrayGeometry.ula(4).is_uniform
    assert not ArrayGeometry((0.0, 0.5, 1.7)).is_uniform


def test_scenario_validation():
    g, o = ArrayGeometry.ula(4), OfdmConfig(T_cp=2.0)
    with pytest.raises(ValueError):
        Scenario(g, o, (PathParams(2.0, 50.0),))
    with pytest.raises(ValueError):
        Scenario(g, o, ())
    with pytest.raises(ValueError):
        PathParams(0.1, 180.0)
    with pytest.raises(ValueError):
        Scenario(g, o, (PathParams(0.1, 50.0),), snr_reference="bogus")


def test_scenario_round_trip():
    sc = paper_scenario(10.0, snr_reference="element")
    back = Scenario.from_dict(sc.to_dict())
    assert back == sc
    assert sc.snr_db == pytest.approx(10.0)
    assert paper_scenario().noise_variance == 0.0


def test_paper_paths_verbatim():
    sc = paper_scenario()
    got = [(p.gain_magnitude, p.tau, p.theta) for p in sc.paths]
    assert got == [(1.12, 0.10, 64.98), (0.85, 1.23, 46.54), (0.71, 1.97, 94.71),
                   (0.52, 3.57, 121.17), (0.41, 5.02, 105.32)]
    assert got == list(PAPER_PATHS)
    assert (sc.M, sc.N, sc.L) == (4, 16, 3)


def test_single_constant_path():
    g, o = ArrayGeometry.ula(4), OfdmConfig(N=8)
    sc = Scenario(g, o, (PathParams(0.0, 90.0, 1.0),), L=2)
    data, H = synthesize(sc, make_rng(5))
    # unit magnitude gain with random phase; undo the phase per snapshot
    Y = data.Y / H[0]
    np.testing.assert_allclose(Y, np.full((32, 2), 1 / np.sqrt(32)), atol=1e-12)


def test_noise_free_matches_khatri_rao():
    g, o = ArrayGeometry.ula(3), OfdmConfig(N=6, T_cp=3.0)
    sc = Scenario(g, o, (PathParams(0.4, 30.0, 1.0), PathParams(1.7, 120.0, 0.6)), L=4)
    data, H = synthesize(sc, make_rng(11))
    A = np.stack([[np.exp(-2j * np.pi * r * np.cos(np.deg2rad(t))) / np.sqrt(3)
                   for r in g.positions] for t in (30.0, 120.0)], axis=1)
    B = np.stack([[np.exp(-2j * np.pi * n * tau / 6) / np.sqrt(6) for n in range(6)]
                  for tau in (0.4, 1.7)], axis=1)
    dense = np.column_stack([np.kron(B[:, p], A[:, p]) for p in range(2)])
    np.testing.assert_allclose(data.Y, dense @ H, atol=1e-12)
    np.testing.assert_allclose(noise_free_measurements(sc, H), data.Y, atol=1e-12)


def test_stacking_is_antenna_fastest():
    g, o = ArrayGeometry.ula(3), OfdmConfig(N=5, T_cp=3.0)
    sc = Scenario(g, o, (PathParams(0.9, 70.0, 1.0),), L=1)
    data, H = synthesize(sc, make_rng(0))
    A, B = path_matrices(sc)
    for n in range(5):
        for m in range(3):
            assert data.Y[m + 3 * n, 0] == pytest.approx(A[m, 0] * B[n, 0] * H[0, 0], abs=1e-14)


@pytest.mark.parametrize("reference, factor", [("entry", 1.0), ("element", 1 / 64)])
def test_noise_variance_per_entry(reference, factor):
    sc = Scenario(ArrayGeometry.ula(4), OfdmConfig(N=16),
                  (PathParams(1.0, 60.0, 1e-300),), L=2000, snr_reference=reference)
    sc = sc.with_snr_db(3.0)
    data, _ = synthesize(sc, make_rng(77))
    assert data.Y.size >= 10**5
    var = np.mean(np.abs(data.Y) ** 2)
    assert var == pytest.approx(10 ** -0.3 * factor, rel=0.02)


def test_noise_free_lies_in_atom_span():
    sc = paper_scenario()
    data, _ = synthesize(sc, make_rng(3))
    A, B = path_matrices(sc)
    X = khatri_rao(B, A)
    resid = data.Y - X @ np.linalg.lstsq(X, data.Y, rcond=None)[0]
    assert np.linalg.norm(resid) <= 1e-10


def test_synthesize_deterministic():
    sc = paper_scenario(5.0)
    a, ha = synthesize(sc, make_rng(42))
    b, hb = synthesize(sc, make_rng(42))
    assert np.array_equal(a.Y, b.Y) and np.array_equal(ha, hb)
    np.testing.assert_allclose(np.abs(ha), np.array([p[0] for p in PAPER_PATHS])[:, None] * np.ones(3))


@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 6), st.integers(1, 5))
def test_khatri_rao_factorisation(seed, P, N, L):
    rng = np.random.default_rng(seed)
    M = 1 + seed % 5
    A, B, H = crandn(rng, M, P), crandn(rng, N, P), crandn(rng, P, L)
    lhs = khatri_rao(B, A) @ H
    rhs = np.kron(B, np.eye(M)) @ khatri_rao(np.eye(P), A) @ H
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1, np.abs(lhs).max())


@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 6))
def test_permutation_identity(seed, N, P):
    B = crandn(np.random.default_rng(seed), N, P)
    J = permutation_matrix(N, P)
    np.testing.assert_allclose(J.T @ khatri_rao(B, np.eye(P)), khatri_rao(np.eye(P), B), atol=1e-12)
    np.testing.assert_array_equal(J @ J.T, np.eye(N * P))
    perm = shuffle_permutation(N, P)
    assert sorted(perm.tolist()) == list(range(N * P))
