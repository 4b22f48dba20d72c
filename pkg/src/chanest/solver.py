"""Block nuclear-norm regularized least squares.

Solves ::

    min_G  0.5 * ||Y - C G||_F^2 + mu * sum_q ||G_q||_*

for a dictionary ``C`` with unitary blocks (see :mod:`chanest.dictionary`),
either by STELA (parallel best responses with an exact line search) or by
cyclic block coordinate descent.
"""
import csv
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .constants import (
    DEFAULT_MAX_SWEEPS,
    DEFAULT_TOL,
    SCHEDULE_DECAY,
    SCHEDULE_LENGTH,
    SUPPORT_REL_THRESHOLD,
)
from .dictionary import block_norms
from ._kernels import bcd_updates, nuclear_stack, svt_stack
from .numerics import compact_svd, spectral_norm, svd_values

TRACE_SCHEMA = "chanest.solve_trace/v1"


def svt(X, mu, return_values=False):
    """Singular value thresholding ``U (S - mu)_+ V^H``; works on stacks."""
    if mu < 0:
        raise ValueError("threshold must be non-negative")
    U, S, V = compact_svd(X)
    # shrinkage below rounding of the largest value counts as zero
    floor = 4 * np.finfo(float).eps * S[..., :1]
    S = np.where(S - mu > floor, S - mu, 0.0)
    out = (U * S[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))
    out[~np.any(S > 0, axis=-1)] = 0.0
    if return_values:
        return out, S
    return out


def nuclear_norms(G):
    return svd_values(G).sum(axis=-1)


def objective(Y, G, dictionary, mu):
    R = Y - dictionary.apply(G)
    return 0.5 * np.vdot(R, R).real + mu * nuclear_norms(G).sum()


@dataclass
class SolverConfig:
    mu: float
    max_iters: Optional[int] = None
    tol: float = DEFAULT_TOL
    G0: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")


@dataclass
class SolveTrace:
    """Per-iteration record; entry 0 is the initial point.

    STELA counts one parallel sweep as an iteration, BCD one block update.
    ``ref_error`` is only filled when a reference solution was supplied.
    ``stalled`` marks a STELA run that stopped because the line search
    returned zero: at that point the best-response direction is no longer
    a descent direction within rounding, so no further progress is possible.
    """

    method: str
    objective: List[float] = field(default_factory=list)
    gamma: List[float] = field(default_factory=list)
    step_norm: List[float] = field(default_factory=list)
    wall_ms: List[float] = field(default_factory=list)
    ref_error: List[float] = field(default_factory=list)
    converged: bool = False
    stalled: bool = False

    @property
    def iterations(self):
        return len(self.objective) - 1

    def record(self, obj, gamma, step, t0, err=None):
        self.objective.append(float(obj))
        self.gamma.append(float(gamma))
        self.step_norm.append(float(step))
        self.wall_ms.append(1e3 * (time.perf_counter() - t0))
        if err is not None:
            self.ref_error.append(float(err))

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(f"# schema: {TRACE_SCHEMA}\n")
            w = csv.writer(f)
            w.writerow(["iter", "objective", "gamma", "step_norm", "wall_ms"])
            for i, row in enumerate(
                zip(self.objective, self.gamma, self.step_norm, self.wall_ms)
            ):
                w.writerow([i, *(repr(v) for v in row)])


def _check_data(Y, dictionary):
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[0] != dictionary.M * dictionary.N:
        raise ValueError(f"measurement shape {Y.shape} does not match dictionary")
    return Y


def best_response(Y, G, dictionary, mu, R=None):
    """All ``Q`` best-response blocks ``S_mu(C_q^H (Y - C_{-q} G_{-q}))``.

    Uses one residual: since ``C_q^H C_q = I`` the per-block least-squares
    estimate equals ``[C^H R]_q + G_q`` with ``R = Y - C G``.
    """
    if R is None:
        R = _check_data(Y, dictionary) - dictionary.apply(G)
    return svt(dictionary.adjoint(R) + G, mu)


def _step_size(R, CD, nuc_gain, mu):
    # R = Y - C G, CD = C (Gamma - G), nuc_gain = sum ||Gamma_q||_* - ||G_q||_*
    denom = np.vdot(CD, CD).real
    if denom <= 0.0:
        return 0.0
    num = -np.vdot(R, CD).real + mu * nuc_gain
    return float(np.clip(-num / denom, 0.0, 1.0))


def exact_line_search(Y, G, Gamma, dictionary, mu):
    """Minimiser over ``[0, 1]`` of the objective along ``G + g (Gamma - G)``.

    The nuclear-norm term is replaced by its linear interpolation in ``g``
    (an upper bound by convexity), so the minimiser has a closed form. A
    zero direction returns 0.
    """
    R = _check_data(Y, dictionary) - dictionary.apply(G)
    CD = dictionary.apply(Gamma - G)
    gain = nuclear_norms(Gamma).sum() - nuclear_norms(G).sum()
    return _step_size(R, CD, gain, mu)


def _initial(Y, dictionary, config):
    L = Y.shape[1]
    if config.G0 is None:
        return dictionary.zeros(L)
    G = np.array(config.G0, dtype=complex)
    if G.shape != (dictionary.Q, dictionary.block_rows, L):
        raise ValueError(f"initial point has shape {G.shape}")
    return G


def _ref_error(reference, G):
    if reference is None:
        return None
    return np.linalg.norm(reference - G)


def stela_solve(Y, dictionary, config, reference=None):
    """STELA iterations ``G <- G + gamma (Gamma - G)``.

    Stops once both the relative objective decrease and
    ``||Gamma - G|| / max(1, ||G||)`` fall below ``config.tol``, when the
    line search returns zero (``trace.stalled``), or after
    ``config.max_iters`` sweeps.
    """
    Y = _check_data(Y, dictionary)
    mu = config.mu
    max_iters = config.max_iters or DEFAULT_MAX_SWEEPS
    t0 = time.perf_counter()
    G = _initial(Y, dictionary, config)
    R = Y - dictionary.apply(G)
    nuc = nuclear_stack(G).sum()
    obj = 0.5 * np.vdot(R, R).real + mu * nuc
    trace = SolveTrace("stela")
    trace.record(obj, np.nan, np.nan, t0, _ref_error(reference, G))

    for _ in range(max_iters):
        Gamma, nuc_gamma = svt_stack(dictionary.adjoint(R) + G, mu)
        D = Gamma - G
        CD = dictionary.apply(D)
        gamma = _step_size(R, CD, nuc_gamma.sum() - nuc, mu)
        if gamma == 1.0:
            G, nuc = Gamma, nuc_gamma.sum()
            R = R - CD
        elif gamma > 0:
            G = G + gamma * D
            R = R - gamma * CD
            nuc = nuclear_stack(G).sum()
        new_obj = 0.5 * np.vdot(R, R).real + mu * nuc
        step = np.linalg.norm(D)
        trace.record(new_obj, gamma, step, t0, _ref_error(reference, G))
        decrease = obj - new_obj
        obj = new_obj
        if decrease <= config.tol * abs(obj + decrease) and step <= config.tol * max(
            1.0, np.linalg.norm(G)
        ):
            trace.converged = True
            break
        if gamma == 0.0:
            trace.stalled = True
            break
    return G, trace


def bcd_solve(Y, dictionary, config, reference=None):
    """Cyclic block coordinate descent, one block update per iteration.

    Convergence is checked after every full sweep with the same criterion as
    :func:`stela_solve`, applied to the sweep's objective decrease and total
    block change. ``config.max_iters`` counts block updates. Wall times are
    sampled once per sweep.
    """
    Y = _check_data(Y, dictionary)
    mu = config.mu
    Q = dictionary.Q
    max_iters = config.max_iters or DEFAULT_MAX_SWEEPS * Q
    t0 = time.perf_counter()
    G = np.ascontiguousarray(_initial(Y, dictionary, config))
    Rg = np.ascontiguousarray(dictionary.to_gridded(Y - dictionary.apply(G)))
    atoms = np.ascontiguousarray(dictionary.atoms)
    nuc_q = nuclear_stack(G)
    obj = 0.5 * np.vdot(Rg, Rg).real + mu * nuc_q.sum()
    if reference is None:
        ref = np.zeros((0, 1, 1), dtype=complex)
        err_q = np.zeros(Q)
    else:
        ref = np.ascontiguousarray(reference, dtype=complex)
        err_q = np.sum(np.abs(ref - G) ** 2, axis=(1, 2))
    trace = SolveTrace("bcd")
    trace.record(obj, np.nan, np.nan, t0, None if reference is None else np.sqrt(err_q.sum()))

    done = 0
    while done < max_iters:
        count = min(Q, max_iters - done)
        objs, steps, errs = np.empty(count), np.empty(count), np.empty(count)
        bcd_updates(Rg, atoms, G, nuc_q, mu, done % Q, count, ref, err_q, objs, steps, errs)
        done += count
        ms = 1e3 * (time.perf_counter() - t0)
        trace.objective.extend(objs.tolist())
        trace.gamma.extend([1.0] * count)
        trace.step_norm.extend(steps.tolist())
        trace.wall_ms.extend([ms] * count)
        if reference is not None:
            trace.ref_error.extend(errs.tolist())
        if count == Q and done % Q == 0:
            decrease = obj - objs[-1]
            sweep_step = np.sqrt(np.sum(steps**2))
            obj = objs[-1]
            if decrease <= config.tol * abs(obj + decrease) and sweep_step <= config.tol * max(
                1.0, np.linalg.norm(G)
            ):
                trace.converged = True
                break
    return G, trace


def mu_max(Y, dictionary):
    """Smallest ``mu`` with an all-zero solution: ``max_q ||C_q^H Y||_2``.

    The spectral norm is the dual of the nuclear norm, so for any
    ``mu >= mu_max`` the zero matrix satisfies the optimality conditions.
    """
    Y = _check_data(Y, dictionary)
    return float(np.max(spectral_norm(dictionary.adjoint(Y))))


def optimality_violation(Y, G, dictionary, mu):
    """Largest violation of the nuclear-norm subgradient conditions.

    For a zero block, ``||C_q^H R||_2 - mu`` (clipped at 0); for a nonzero
    block ``G_q = U S V^H``, ``||C_q^H R - mu U V^H||_2`` after projecting
    out the part allowed by the subdifferential on the complement.
    """
    Y = _check_data(Y, dictionary)
    Z = dictionary.adjoint(Y - dictionary.apply(G))
    worst = 0.0
    for q in range(dictionary.Q):
        Gq = G[q]
        nrm = np.linalg.norm(Gq)
        if nrm == 0:
            worst = max(worst, spectral_norm(Z[q]) - mu)
            continue
        U, S, V = compact_svd(Gq)
        r = int(np.sum(S > 1e-10 * S[0]))
        U, V = U[:, :r], V[:, :r]
        Zq = Z[q]
        E = Zq - mu * U @ V.conj().T
        # subgradient allows (I - UU^H) W (I - VV^H) with spectral norm <= mu
        Pu = np.eye(Gq.shape[0]) - U @ U.conj().T
        Pv = np.eye(Gq.shape[1]) - V @ V.conj().T
        W = Pu @ E @ Pv
        E_fixed = E - W
        worst = max(worst, spectral_norm(E_fixed), spectral_norm(W) - mu)
    return float(worst)


@dataclass(frozen=True)
class RegSchedule:
    mus: tuple

    def __post_init__(self):
        mus = tuple(float(m) for m in self.mus)
        object.__setattr__(self, "mus", mus)
        if not mus:
            raise ValueError("schedule must not be empty")
        if any(m <= 0 for m in mus):
            raise ValueError("regularization parameters must be positive")
        if any(b >= a for a, b in zip(mus, mus[1:])):
            raise ValueError("schedule must be strictly decreasing")

    @classmethod
    def geometric(cls, mu1, decay=SCHEDULE_DECAY, length=SCHEDULE_LENGTH):
        if not 0 < decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        return cls(tuple(mu1 * decay ** np.arange(length)))

    @property
    def kappa_max(self):
        return len(self.mus)


def support_groups(G, rel_threshold=SUPPORT_REL_THRESHOLD, max_gap=1):
    """Indices of nonzero blocks, split into runs of neighbouring grid cells.

    A block is in the support when its Frobenius norm exceeds
    ``rel_threshold`` times the largest block norm. Support indices closer
    than ``max_gap + 1`` cells end up in the same group.
    """
    norms = block_norms(G)
    top = norms.max() if norms.size else 0.0
    if top == 0:
        return []
    idx = np.flatnonzero(norms > rel_threshold * top)
    breaks = np.flatnonzero(np.diff(idx) > max_gap) + 1
    return [g for g in np.split(idx, breaks)]


@dataclass
class PathPoint:
    mu: float
    G: np.ndarray
    trace: SolveTrace
    groups: list

    @property
    def support_size(self):
        return len(self.groups)


def solution_path(Y, dictionary, schedule, config=None, warm_start=True, stop_above=None,
                  patience=3):
    """Solve along a decreasing ``mu`` schedule with STELA.

    Each solve starts from the previous solution when ``warm_start`` is set.
    If ``stop_above`` is given, the sweep ends early once the number of
    support groups has exceeded it for ``patience`` consecutive values.
    """
    config = config or SolverConfig(mu=1.0)
    G = config.G0
    out = []
    over = 0
    for mu in schedule.mus:
        cfg = SolverConfig(mu, config.max_iters, config.tol, G if warm_start else None)
        G, trace = stela_solve(Y, dictionary, cfg)
        point = PathPoint(mu, G, trace, support_groups(G))
        out.append(point)
        if stop_above is not None:
            over = over + 1 if point.support_size > stop_above else 0
            if over >= patience:
                break
    return out


@dataclass
class ModelChoice:
    index: int
    point: PathPoint
    exact: bool


def select_model(path, P):
    """Smallest ``mu`` whose solution has exactly ``P`` support groups.

    Falls back (``exact=False``) to the largest group count below ``P``,
    again at the smallest such ``mu``.
    """
    if not path:
        raise ValueError("empty solution path")
    if P < 1:
        raise ValueError("P must be at least 1")
    order = np.argsort([-p.mu for p in path], kind="stable")
    counts = [path[i].support_size for i in order]
    hits = [i for i, c in zip(order, counts) if c == P]
    if hits:
        i = hits[-1]
        return ModelChoice(int(i), path[i], True)
    below = [c for c in counts if c < P]
    target = max(below) if below else min(counts)
    i = [i for i, c in zip(order, counts) if c == target][-1]
    return ModelChoice(int(i), path[i], False)
