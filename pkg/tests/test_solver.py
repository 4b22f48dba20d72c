import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chanest.dictionary import uniform_grid
from chanest.numerics import compact_svd, make_rng, svd_values
from chanest.signal_model import (
    ArrayGeometry,
    OfdmConfig,
    PathParams,
    Scenario,
    paper_scenario,
    steering_vector,
    synthesize,
)
from chanest.solver import (
    TRACE_SCHEMA,
    PathPoint,
    RegSchedule,
    SolverConfig,
    SolveTrace,
    bcd_solve,
    best_response,
    exact_line_search,
    mu_max,
    objective,
    optimality_violation,
    select_model,
    solution_path,
    stela_solve,
    support_groups,
    svt,
)

from conftest import crandn

OFDM8 = OfdmConfig(N=8, T_cp=4.0)


def instance(seed, Q=12, L=3):
    rng = np.random.default_rng(seed)
    d = uniform_grid(Q, OFDM8, 4)
    G = d.zeros(L)
    for q in rng.choice(Q, 2, replace=False):
        G[q] = np.outer(steering_vector(rng.uniform(10, 170), ArrayGeometry.ula(4)),
                        crandn(rng, L))
    Y = d.apply(G) + 0.1 * crandn(rng, 32, L)
    return d, Y


# svt

def test_svt_examples():
    X = np.diag([3.0, 1.0]).astype(complex)
    np.testing.assert_allclose(svd_values(svt(X, 1.0)), [2.0, 0.0], atol=1e-12)
    A = crandn(np.random.default_rng(0), 4, 3)
    assert not np.any(svt(A, svd_values(A)[0]))
    with pytest.raises(ValueError):
        svt(A, -1.0)


@given(st.integers(0, 2**31), st.floats(0, 4))
def test_svt_shrinks_singular_values_keeps_vectors(seed, mu):
    A = crandn(np.random.default_rng(seed), 4, 3)
    U, S, V = compact_svd(A)
    out = svt(A, mu)
    np.testing.assert_allclose(svd_values(out), np.maximum(S - mu, 0), atol=1e-10)
    np.testing.assert_allclose(out, U * np.maximum(S - mu, 0) @ V.conj().T, atol=1e-10)


def test_svt_prox_oracle_small():
    rng = np.random.default_rng(1)
    A = crandn(rng, 4, 3)
    mu = 0.7
    f = lambda X: 0.5 * np.linalg.norm(X - A) ** 2 + mu * svd_values(X).sum(axis=-1)
    X0 = svt(A, mu)
    cand = X0 + crandn(rng, 2000, 4, 3) * rng.uniform(1e-4, 1, (2000, 1, 1))
    vals = 0.5 * np.sum(np.abs(cand - A) ** 2, axis=(1, 2)) + mu * svd_values(cand).sum(-1)
    assert f(X0) <= vals.min() + 1e-12


# best response and line search

def test_best_response_zero():
    d = uniform_grid(6, OFDM8, 4)
    assert not np.any(best_response(np.zeros((32, 2)), d.zeros(2), d, 0.5))


def test_best_response_single_atom():
    d = uniform_grid(8, OFDM8, 4)
    G = d.zeros(3)
    G[3] = np.outer(steering_vector(60.0, ArrayGeometry.ula(4)), [1.0, 1j, -0.5])
    Y = d.apply(G)
    mu = 0.5 * svd_values(G[3])[0]
    Gamma = best_response(Y, d.zeros(3), d, mu)
    corr = d.adjoint(Y)
    for q in range(8):
        if svd_values(corr[q])[0] > mu:
            np.testing.assert_allclose(Gamma[q], svt(corr[q], mu), atol=1e-12)
        else:
            assert not np.any(Gamma[q])
    np.testing.assert_allclose(Gamma[3], svt(G[3], mu), atol=1e-12)


def test_best_response_matches_per_block_residual():
    d, Y = instance(3)
    rng = np.random.default_rng(3)
    G = crandn(rng, d.Q, 4, 3) * 0.1
    Gamma = best_response(Y, G, d, 0.2)
    for q in range(d.Q):
        others = G.copy()
        others[q] = 0
        direct = d.adjoint_block(q, Y - d.apply(others))
        np.testing.assert_allclose(Gamma[q], svt(direct, 0.2), atol=1e-12)


def test_best_response_fixed_point_at_optimum():
    d, Y = instance(5, Q=4)
    mu = 0.3 * mu_max(Y, d)
    G, _ = bcd_solve(Y, d, SolverConfig(mu, 400000, 1e-14))
    assert np.linalg.norm(best_response(Y, G, d, mu) - G) <= 1e-6


def test_line_search_degenerate_and_perfect_fit():
    d, Y = instance(2)
    G = d.zeros(3)
    assert exact_line_search(Y, G, G, d, 0.3) == 0.0
    rng = np.random.default_rng(2)
    Gamma = crandn(rng, d.Q, 4, 3)
    # mu = 0 is outside SolverConfig's range but the step formula handles it
    assert exact_line_search(d.apply(Gamma), G, Gamma, d, 0.0) == pytest.approx(1.0)


def _phi(Y, G, Gamma, d, mu, g):
    R = Y - d.apply(G + g * (Gamma - G))
    nG = svd_values(G).sum()
    return 0.5 * np.vdot(R, R).real + mu * nG + g * mu * (svd_values(Gamma).sum() - nG)


@given(st.integers(0, 2**31))
def test_line_search_beats_grid(seed):
    d, Y = instance(seed % 1000)
    rng = np.random.default_rng(seed)
    mu = rng.uniform(0.05, 1.0) * mu_max(Y, d)
    G = crandn(rng, d.Q, 4, 3) * rng.uniform(0, 0.3)
    Gamma = best_response(Y, G, d, mu)
    g = exact_line_search(Y, G, Gamma, d, mu)
    assert 0.0 <= g <= 1.0
    grid = np.linspace(0, 1, 10**4)
    vals = np.array([_phi(Y, G, Gamma, d, mu, x) for x in grid[::50]])
    assert _phi(Y, G, Gamma, d, mu, g) <= vals.min() + 1e-12 * max(1, abs(vals.min()))


def test_smooth_gradient_finite_differences():
    d, Y = instance(9)
    rng = np.random.default_rng(9)
    G = crandn(rng, d.Q, 4, 3)
    f = lambda X: 0.5 * np.linalg.norm(Y - d.apply(X)) ** 2
    grad = -d.adjoint(Y - d.apply(G))
    E = crandn(rng, d.Q, 4, 3)
    h = 1e-6
    fd = (f(G + h * E) - f(G - h * E)) / (2 * h)
    assert fd == pytest.approx(np.vdot(grad, E).real, rel=1e-6)


# solvers

def test_zero_data_gives_zero_solution():
    d = uniform_grid(6, OFDM8, 4)
    G, tr = stela_solve(np.zeros((32, 3)), d, SolverConfig(0.1))
    assert not np.any(G) and tr.iterations == 1 and tr.converged
    G, tr = bcd_solve(np.zeros((32, 3)), d, SolverConfig(0.1))
    assert not np.any(G) and tr.iterations == d.Q


@pytest.mark.parametrize("seed", range(4))
def test_stela_descent_and_agreement_with_bcd(seed):
    d, Y = instance(seed)
    mu = 0.3 * mu_max(Y, d)
    Gs, ts = stela_solve(Y, d, SolverConfig(mu, 20000, 1e-12))
    Gb, tb = bcd_solve(Y, d, SolverConfig(mu, 20000 * d.Q, 1e-12))
    assert np.all(np.diff(ts.objective) <= 1e-12)
    assert np.all(np.diff(tb.objective) <= 1e-12)
    assert all(0 <= g <= 1 for g in ts.gamma[1:])
    fs, fb = objective(Y, Gs, d, mu), objective(Y, Gb, d, mu)
    assert fs == pytest.approx(fb, rel=1e-6)
    assert ts.objective[-1] == pytest.approx(fs, rel=1e-9)
    assert optimality_violation(Y, Gs, d, mu) <= 1e-6
    assert optimality_violation(Y, Gb, d, mu) <= 1e-6


def test_two_separated_paths_support():
    g = ArrayGeometry.ula(4)
    d = uniform_grid(16, OFDM8, 4)
    sc = Scenario(g, OFDM8, (PathParams(d.grid[2], 50.0, 1.0), PathParams(d.grid[11], 120.0, 0.8)))
    data, _ = synthesize(sc, make_rng(4))
    mu = mu_max(data.Y, d) / 10
    G, tr = stela_solve(data.Y, d, SolverConfig(mu, 20000, 1e-10))
    Gb, _ = bcd_solve(data.Y, d, SolverConfig(mu, 400000, 1e-12))
    assert [list(s) for s in support_groups(G)] == [[2], [11]]
    assert [list(s) for s in support_groups(Gb)] == [[2], [11]]


def test_max_iters_flags_not_raises():
    d, Y = instance(1)
    G, tr = stela_solve(Y, d, SolverConfig(0.01 * mu_max(Y, d), max_iters=3))
    assert tr.iterations == 3 and not tr.converged


def test_solver_input_validation():
    d = uniform_grid(4, OFDM8, 4)
    with pytest.raises(ValueError):
        SolverConfig(0.0)
    with pytest.raises(ValueError):
        SolverConfig(1.0, tol=0)
    with pytest.raises(ValueError):
        stela_solve(np.zeros((31, 2)), d, SolverConfig(1.0))
    with pytest.raises(ValueError):
        stela_solve(np.zeros((32, 2)), d, SolverConfig(1.0, G0=np.zeros((3, 4, 2))))


def test_trace_csv(tmp_path):
    d, Y = instance(0)
    _, tr = stela_solve(Y, d, SolverConfig(0.5 * mu_max(Y, d), 50))
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == f"# schema: {TRACE_SCHEMA}"
    assert lines[1] == "iter,objective,gamma,step_norm,wall_ms"
    assert len(lines) == 2 + tr.iterations + 1


# mu_max

def test_mu_max_examples():
    d = uniform_grid(8, OFDM8, 4)
    assert mu_max(np.zeros((32, 2)), d) == 0.0
    G = d.zeros(3)
    G[4] = np.outer(steering_vector(80.0, ArrayGeometry.ula(4)), np.ones(3))
    Y = d.apply(G)
    brute = max(np.linalg.norm(d.adjoint(Y)[q], 2) for q in range(8))
    assert mu_max(Y, d) == pytest.approx(brute, rel=1e-12)
    assert mu_max(Y, d) == pytest.approx(np.linalg.norm(G[4], 2), rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_mu_max_zero_solution_boundary(seed):
    d, Y = instance(seed)
    mu1 = mu_max(Y, d)
    G, _ = stela_solve(Y, d, SolverConfig(1.001 * mu1))
    assert not np.any(G)
    G, _ = stela_solve(Y, d, SolverConfig(0.99 * mu1))
    assert np.any(G)


# schedule, path and selection

def test_schedule():
    s = RegSchedule.geometric(2.0)
    assert s.kappa_max == 40 and s.mus[0] == 2.0
    assert s.mus[-1] == pytest.approx(2.0 * 0.85**39)
    with pytest.raises(ValueError):
        RegSchedule((1.0, 1.0))
    with pytest.raises(ValueError):
        RegSchedule((1.0, -0.5))
    with pytest.raises(ValueError):
        RegSchedule.geometric(1.0, decay=1.0)


def test_path_single_zero_solution():
    d, Y = instance(0)
    path = solution_path(Y, d, RegSchedule((mu_max(Y, d),)))
    assert len(path) == 1 and not np.any(path[0].G) and path[0].support_size == 0


def test_warm_start_saves_iterations():
    sc = paper_scenario(20.0, snr_reference="element")
    data, _ = synthesize(sc, make_rng(8))
    d = uniform_grid(160, sc.ofdm, 4)
    sched = RegSchedule.geometric(mu_max(data.Y, d), 0.85, 12)
    cfg = SolverConfig(1.0, 5000, 1e-4)
    warm = solution_path(data.Y, d, sched, cfg, warm_start=True)
    cold = solution_path(data.Y, d, sched, cfg, warm_start=False)
    assert sum(p.trace.iterations for p in warm) < sum(p.trace.iterations for p in cold)


def test_support_groups_merge_neighbours():
    G = np.zeros((12, 2, 1), dtype=complex)
    for q, v in [(1, 1.0), (2, 0.5), (5, 2.0), (7, 1.0), (8, 1e-5), (10, 1.0)]:
        G[q, 0, 0] = v
    groups = [g.tolist() for g in support_groups(G)]
    # 8 is below 1e-3 of the peak, 5 and 7 sit two cells apart
    assert groups == [[1, 2], [5], [7], [10]]
    assert support_groups(np.zeros((3, 2, 1))) == []


def _point(mu, size):
    return PathPoint(mu, None, SolveTrace("stela"), [[i] for i in range(size)])


def test_select_model_rules():
    path = [_point(1.0, 1), _point(0.8, 2), _point(0.6, 2), _point(0.4, 3)]
    c = select_model(path, 2)
    assert c.exact and c.point.mu == 0.6
    c = select_model([_point(1.0, 0)], 1)
    assert not c.exact and c.point.support_size == 0
    c = select_model([_point(1.0, 1), _point(0.5, 3), _point(0.2, 4)], 2)
    assert not c.exact and c.point.mu == 1.0
    with pytest.raises(ValueError):
        select_model([], 1)
    with pytest.raises(ValueError):
        select_model(path, 0)


def test_selected_support_at_20db():
    sc = paper_scenario(20.0, snr_reference="element")
    data, _ = synthesize(sc, make_rng(21))
    d = uniform_grid(160, sc.ofdm, 4)
    path = solution_path(data.Y, d, RegSchedule.geometric(mu_max(data.Y, d)),
                         SolverConfig(1.0, 5000, 1e-4), stop_above=5)
    sizes = [p.support_size for p in path]
    choice = select_model(path, 5)
    assert choice.exact and choice.point.support_size == 5
    print("support sizes along the path:", sizes)
