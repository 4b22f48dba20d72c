"""Turn a solved block matrix into paired (delay, AoA, gains) estimates."""
import csv
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from . import constants as C
from .dictionary import block_norms, delay_dictionary, uniform_grid
from .numerics import compact_svd
from .signal_model import freq_response_matrix, steering_matrix
from .solver import (
    RegSchedule,
    SolverConfig,
    mu_max,
    select_model,
    solution_path,
    stela_solve,
    support_groups,
)

ESTIMATES_SCHEMA = "chanest.path_estimates/v1"


class RankError(ValueError):
    """Block is not numerically rank one."""


@dataclass(frozen=True)
class PathEstimate:
    tau: float
    theta: float
    gains: np.ndarray = field(repr=False)


@dataclass
class PathEstimates:
    entries: Tuple[PathEstimate, ...] = ()
    flagged: bool = False
    info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.entries = tuple(sorted(self.entries, key=lambda e: e.tau))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def P_hat(self):
        return len(self.entries)

    @property
    def taus(self):
        return np.array([e.tau for e in self.entries])

    @property
    def thetas(self):
        return np.array([e.theta for e in self.entries])

    @property
    def gains(self):
        if not self.entries:
            return np.zeros((0, 0), dtype=complex)
        return np.vstack([e.gains for e in self.entries])

    def to_csv(self, path, T_s=1.0):
        L = len(self.entries[0].gains) if self.entries else 0
        with open(path, "w", newline="") as f:
            f.write(f"# schema: {ESTIMATES_SCHEMA}\n")
            w = csv.writer(f)
            header = ["path_index", "tau_over_Ts", "theta_deg"]
            for l in range(1, L + 1):
                header += [f"gain_re_{l}", f"gain_im_{l}"]
            w.writerow(header)
            for i, e in enumerate(self.entries):
                row = [i, repr(e.tau / T_s), repr(e.theta)]
                for g in e.gains:
                    row += [repr(g.real), repr(g.imag)]
                w.writerow(row)


@dataclass(frozen=True)
class SupportGroup:
    anchor: int
    members: Tuple[int, ...]


def support_set(G, rel_threshold=C.SUPPORT_REL_THRESHOLD, max_gap=1):
    """Support groups of ``G``, each anchored at its largest block."""
    norms = block_norms(G)
    out = []
    for g in support_groups(G, rel_threshold, max_gap):
        out.append(SupportGroup(int(g[np.argmax(norms[g])]), tuple(int(i) for i in g)))
    return out


def aoa_grid(step=C.AOA_GRID_STEP_DEG):
    """Uniform AoA grid strictly inside (0, 180) degrees."""
    return np.arange(step, 180.0 - step / 2, step)


def _parabolic_offset(ym, y0, yp):
    den = ym - 2 * y0 + yp
    if den == 0:
        return 0.0
    return float(np.clip(0.5 * (ym - yp) / den, -0.5, 0.5))


def estimate_aoa(block, geometry, theta_grid=None):
    """AoA maximising ``|a(theta)^H u_1|`` for the principal left vector ``u_1``.

    Grid search followed by three-point parabolic interpolation; the
    interpolated angle is kept only if it does not lower the objective.
    """
    block = np.asarray(block)
    if not np.any(block):
        raise ValueError("cannot estimate an AoA from a zero block")
    thetas = aoa_grid() if theta_grid is None else np.asarray(theta_grid)
    u = compact_svd(block).U[:, 0]
    return _peak_aoa(u, geometry, thetas)


def _peak_aoa(u, geometry, thetas):
    def f(th):
        return np.abs(steering_matrix(th, geometry).conj().T @ u) ** 2

    spec = f(thetas)
    i = int(np.argmax(spec))
    best = float(thetas[i])
    if 0 < i < len(thetas) - 1:
        step = thetas[i + 1] - thetas[i]
        cand = best + step * _parabolic_offset(spec[i - 1], spec[i], spec[i + 1])
        if f([cand])[0] >= spec[i]:
            best = float(cand)
    return best


def estimate_gains(block, svd=None, literal=False, rank_ratio=C.RANK_RATIO):
    """Gains ``sigma_1 conj(v_1)`` of a rank-one block ``a(theta) h^T``.

    ``literal=True`` additionally divides by ``sqrt(M L)``. Raises
    :class:`RankError` when ``sigma_2 / sigma_1 >= rank_ratio``.
    """
    block = np.asarray(block)
    U, S, V = svd if svd is not None else compact_svd(block)
    if S[0] == 0:
        raise ValueError("zero block has no gains")
    if len(S) > 1 and S[1] / S[0] >= rank_ratio:
        raise RankError(f"block is not rank one (sigma2/sigma1 = {S[1] / S[0]:.3f})")
    h = S[0] * V[:, 0].conj()
    if literal:
        h = h / np.sqrt(block.shape[0] * block.shape[1])
    return h


def resolve_higher_rank(block, rank, geometry, theta_grid=None):
    """Several AoAs sharing one delay, from the column space of ``block``.

    MUSIC on the span of the ``rank`` principal left singular vectors: the
    AoAs are the deepest local minima of ``||(I - U U^H) a(theta)||^2``.
    Gains are the least-squares fit of the selected steering vectors.
    Returns ``(thetas, gains)`` with ``gains`` of shape ``(rank, L)``.
    """
    block = np.asarray(block)
    M, L = block.shape
    if rank >= M:
        raise ValueError(f"cannot resolve {rank} directions with {M} antennas")
    if rank > L:
        raise ValueError(f"rank {rank} exceeds snapshot count {L}")
    thetas = aoa_grid() if theta_grid is None else np.asarray(theta_grid)
    U = compact_svd(block).U[:, :rank]

    def null_power(th):
        A = steering_matrix(th, geometry)
        return np.sum(np.abs(A - U @ (U.conj().T @ A)) ** 2, axis=0)

    d = null_power(thetas)
    inner = (d[1:-1] < d[:-2]) & (d[1:-1] <= d[2:])
    minima = list(np.flatnonzero(inner) + 1)
    if d[0] < d[1]:
        minima.append(0)
    if d[-1] < d[-2]:
        minima.append(len(d) - 1)
    minima = sorted(minima, key=lambda i: (d[i], thetas[i]))[:rank]
    if len(minima) < rank:
        raise ValueError(f"found only {len(minima)} spectrum peaks for rank {rank}")
    est = []
    for i in minima:
        th = float(thetas[i])
        if 0 < i < len(thetas) - 1:
            step = thetas[i + 1] - thetas[i]
            cand = th - step * _parabolic_offset(-d[i - 1], -d[i], -d[i + 1])
            if null_power([cand])[0] <= d[i]:
                th = float(cand)
        est.append(th)
    est = np.sort(est)
    gains = np.linalg.lstsq(steering_matrix(est, geometry), block, rcond=None)[0]
    return est, gains


def ls_blocks(Y, taus, ofdm, M):
    """Least-squares ``M x L`` blocks for fixed delays (unshrunk ``G_q``)."""
    B = freq_response_matrix(taus, ofdm)
    N, L = ofdm.N, Y.shape[1]
    Yc = Y.reshape(N, M, L)
    coef = np.linalg.pinv(B)
    return np.einsum("qn,nml->qml", coef, Yc)


def path_atoms(taus, thetas, geometry, ofdm):
    """Columns ``b(tau_p) kron a(theta_p)`` in the measurement stacking."""
    B = freq_response_matrix(taus, ofdm)
    A = steering_matrix(thetas, geometry)
    return (B[:, None, :] * A[None, :, :]).reshape(-1, len(taus))


def fit_gains(Y, taus, thetas, geometry, ofdm):
    """Least-squares gains ``(P, L)`` for fixed delays and AoAs."""
    Phi = path_atoms(taus, thetas, geometry, ofdm)
    return np.linalg.lstsq(Phi, Y, rcond=None)[0]


def ls_residual(Y, taus, thetas, geometry, ofdm):
    if len(taus) == 0:
        return float(np.linalg.norm(Y))
    Phi = path_atoms(taus, thetas, geometry, ofdm)
    H = np.linalg.lstsq(Phi, Y, rcond=None)[0]
    return float(np.linalg.norm(Y - Phi @ H))


def extract_paths(Y, taus, solver_blocks, geometry, ofdm, theta_grid=None, debias=True,
                  literal=False, rank_ratio=C.RANK_RATIO):
    """Paired estimates for the delays ``taus`` (one per support group).

    ``solver_blocks`` holds the regularized solution's block for each delay;
    its singular values decide the block rank (soft thresholding has already
    removed the noise-level ones). With ``debias`` the AoAs and gains are
    taken from least-squares blocks on the same delays instead, and the
    final gains are refit jointly on the data.
    """
    taus = np.asarray(taus, dtype=float)
    if len(taus) == 0:
        return PathEstimates(())
    M, L = geometry.M, Y.shape[1]
    thetas = aoa_grid() if theta_grid is None else theta_grid
    blocks = ls_blocks(Y, taus, ofdm, M) if debias else np.asarray(solver_blocks)
    out_tau, out_theta, out_gain = [], [], []
    for tau, sblock, block in zip(taus, solver_blocks, blocks):
        S = compact_svd(sblock).S
        if S[0] == 0:
            continue
        rank = min(int(np.sum(S / S[0] >= rank_ratio)), M - 1, L)
        if rank > 1:
            try:
                ths, hs = resolve_higher_rank(block, rank, geometry, thetas)
            except ValueError:
                # too few spectrum minima: keep the dominant direction only
                rank = 1
            else:
                out_tau += [tau] * rank
                out_theta += list(ths)
                out_gain += list(hs)
                continue
        svd = compact_svd(block)
        out_tau.append(tau)
        out_theta.append(_peak_aoa(svd.U[:, 0], geometry, thetas))
        h = svd.S[0] * svd.V[:, 0].conj()
        if literal:
            h = h / np.sqrt(M * L)
        out_gain.append(h)
    if debias and out_tau:
        H = fit_gains(Y, out_tau, out_theta, geometry, ofdm)
        out_gain = list(H)
    entries = [PathEstimate(float(t), float(th), np.asarray(h))
               for t, th, h in zip(out_tau, out_theta, out_gain)]
    return PathEstimates(tuple(entries))


def local_grid(groups, dictionary, factor=C.REFINE_FACTOR,
               half_width=C.REFINE_HALF_WIDTH_CELLS, T_cp=None):
    """Fine delay grid around each support group.

    Returns ``(taus, windows)`` where ``windows[i]`` is the slice of
    ``taus`` belonging to group ``i``.
    """
    grid = dictionary.grid
    step = dictionary.spacing
    fine = step / factor
    pieces = []
    for g in groups:
        lo = grid[min(g.members)] - half_width * step
        hi = grid[max(g.members)] + half_width * step
        k = np.arange(int(round((hi - lo) / fine)) + 1)
        pts = lo + k * fine
        pts = pts[pts >= 0]
        if T_cp is not None:
            pts = pts[pts < T_cp]
        pieces.append(pts)
    allpts = np.unique(np.round(np.concatenate(pieces), 12))
    windows = [np.flatnonzero((allpts >= p.min() - 1e-12) & (allpts <= p.max() + 1e-12))
               for p in pieces]
    return allpts, windows


def _block_residual(Yf, taus, ofdm):
    # Data left over after a joint least-squares fit of unstructured blocks
    # on the given delays; Yf is the measurement cube flattened to N x (M L).
    B = freq_response_matrix(taus, ofdm)
    coef = np.linalg.lstsq(B, Yf, rcond=None)[0]
    return float(np.linalg.norm(Yf - B @ coef))


def _window_peaks(Y, taus, windows, start, ofdm, M, passes=5):
    # Coordinate descent over the fine windows on the joint block LS residual.
    Yf = Y.reshape(ofdm.N, -1)
    est = np.array(start, dtype=float)
    for _ in range(passes):
        moved = False
        for i, w in enumerate(windows):
            trial = est.copy()
            best, best_tau = np.inf, est[i]
            for t in taus[w]:
                trial[i] = t
                r = _block_residual(Yf, trial, ofdm)
                if r < best:
                    best, best_tau = r, t
            moved |= best_tau != est[i]
            est[i] = best_tau
        if not moved:
            break
    return est


def refine(Y, groups, G, dictionary, mu, geometry, ofdm, config=None, theta_grid=None,
           debias=True, literal=False, rank_ratio=C.RANK_RATIO):
    """Re-solve on a 10x finer local delay grid around each support group.

    The local problem is warm-started from the coarse solution (coarse grid
    points are part of the fine grid). Each group's delay is the largest
    block of the local solution in its window; with ``debias`` it is then
    re-picked on the window by least-squares peak search. The refined
    estimates are kept only if their least-squares data residual does not
    exceed that of the coarse estimates.
    """
    if not groups:
        raise ValueError("refinement needs a nonempty support")
    coarse_taus = np.array([dictionary.grid[g.anchor] for g in groups])
    coarse_blocks = [G[g.anchor] for g in groups]
    taus, windows = local_grid(groups, dictionary, T_cp=ofdm.T_cp)
    local = delay_dictionary(taus, ofdm, geometry.M)
    G0 = local.zeros(Y.shape[1])
    pos = np.searchsorted(taus, dictionary.grid - 1e-9)
    hit = (pos < len(taus)) & (np.abs(taus[np.minimum(pos, len(taus) - 1)] - dictionary.grid) < 1e-9)
    G0[pos[hit]] = G[hit]
    cfg = config or SolverConfig(mu)
    Gl, trace = stela_solve(Y, local, SolverConfig(mu, cfg.max_iters, cfg.tol, G0))
    norms = block_norms(Gl)
    fine_taus = coarse_taus.copy()
    fine_blocks = []
    for i, w in enumerate(windows):
        j = w[np.argmax(norms[w])]
        if norms[j] > 0:
            fine_taus[i] = taus[j]
        fine_blocks.append(Gl[j] if norms[j] > 0 else coarse_blocks[i])
    if debias:
        fine_taus = _window_peaks(Y, taus, windows, fine_taus, ofdm, geometry.M)
    coarse = extract_paths(Y, coarse_taus, coarse_blocks, geometry, ofdm, theta_grid,
                           debias, literal, rank_ratio)
    fine = extract_paths(Y, fine_taus, fine_blocks, geometry, ofdm, theta_grid,
                         debias, literal, rank_ratio)
    fine.info["refine_iterations"] = trace.iterations
    if len(coarse) == len(fine):
        r_c = ls_residual(Y, coarse.taus, coarse.thetas, geometry, ofdm)
        r_f = ls_residual(Y, fine.taus, fine.thetas, geometry, ofdm)
        if r_f > r_c:
            coarse.info["refine_iterations"] = trace.iterations
            coarse.info["refine_rejected"] = True
            return coarse
    return fine


@dataclass
class EstimatorConfig:
    """Settings of the delay-gridded nuclear-norm estimator."""

    Q: int = 160
    decay: float = C.SCHEDULE_DECAY
    length: int = C.SCHEDULE_LENGTH
    # per-solve tolerance along the path; the support settles long before
    # the objective does, and refinement re-fits everything afterwards
    tol: float = C.PATH_TOL
    max_iters: int = C.DEFAULT_MAX_SWEEPS
    refine: bool = True
    debias: bool = True
    literal_gains: bool = False
    aoa_step: float = C.AOA_GRID_STEP_DEG
    rank_ratio: float = C.RANK_RATIO
    # stop the path once the support exceeds P for this many steps; 0 = never
    patience: int = 3
    # sweep cap for the local re-solve; it only seeds the window search
    refine_iters: int = C.REFINE_MAX_SWEEPS


def estimate_paths(Y, geometry, ofdm, P, config=None):
    """Full estimator: solution path, model selection, extraction, refinement."""
    cfg = config or EstimatorConfig()
    Y = np.asarray(Y)
    dictionary = uniform_grid(cfg.Q, ofdm, geometry.M)
    thetas = aoa_grid(cfg.aoa_step)
    mu1 = mu_max(Y, dictionary)
    if mu1 == 0:
        return PathEstimates((), flagged=True, info={"iterations": 0})
    schedule = RegSchedule.geometric(mu1, cfg.decay, cfg.length)
    solver_cfg = SolverConfig(mu1, cfg.max_iters, cfg.tol)
    path = solution_path(Y, dictionary, schedule, solver_cfg,
                         stop_above=P if cfg.patience else None,
                         patience=cfg.patience or 1)
    choice = select_model(path, P)
    G = choice.point.G
    groups = support_set(G)
    iters = sum(p.trace.iterations for p in path)
    if not groups:
        return PathEstimates((), flagged=True, info={"iterations": iters})
    if cfg.refine:
        local_cfg = SolverConfig(mu1, cfg.refine_iters, cfg.tol)
        est = refine(Y, groups, G, dictionary, choice.point.mu, geometry, ofdm,
                     local_cfg, thetas, cfg.debias, cfg.literal_gains, cfg.rank_ratio)
        iters += est.info.get("refine_iterations", 0)
    else:
        taus = [dictionary.grid[g.anchor] for g in groups]
        est = extract_paths(Y, taus, [G[g.anchor] for g in groups], geometry, ofdm,
                            thetas, cfg.debias, cfg.literal_gains, cfg.rank_ratio)
    est.flagged = not choice.exact
    est.info.update(iterations=iters, mu=choice.point.mu, kappa=choice.index, mu1=mu1,
                    path=[(p.mu, p.support_size, p.trace.objective[-1]) for p in path])
    return est
