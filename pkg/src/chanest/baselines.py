"""Comparison estimators on a joint (delay, AoA) grid.

``omp_2d`` is a plain multiple-measurement OMP over the joint grid; it is a
simplified stand-in for space-alternating OMP and is labelled
"OMP-2D (simplified)" wherever results are reported. ``music_2d`` is 2D
spectral MUSIC with subband smoothing across subcarriers and optional
forward-backward averaging.
"""
from dataclasses import dataclass

import numpy as np

from . import constants as C
from .numerics import hermitian_eig
from .recovery import PathEstimate, PathEstimates, aoa_grid
from .signal_model import freq_response_matrix, steering_matrix

OMP_LABEL = "OMP-2D (simplified)"
MUSIC_LABEL = "MUSIC-2D"


@dataclass(frozen=True, eq=False)
class JointGrid:
    """Delay x AoA grid; atom ``(i, j)`` is ``b(tau_i) kron a(theta_j)``."""

    taus: np.ndarray
    thetas: np.ndarray
    geometry: object
    ofdm: object

    def __post_init__(self):
        object.__setattr__(self, "taus", np.asarray(self.taus, dtype=float))
        object.__setattr__(self, "thetas", np.asarray(self.thetas, dtype=float))
        if self.taus.size < 1 or self.thetas.size < 1:
            raise ValueError("joint grid needs at least one point per axis")

    @classmethod
    def default(cls, geometry, ofdm, Q=160, aoa_step=C.AOA_GRID_STEP_DEG):
        """Same delay grid as the proposed estimator and a uniform AoA grid."""
        return cls(np.arange(Q) * (ofdm.T_cp / Q), aoa_grid(aoa_step), geometry, ofdm)

    @property
    def shape(self):
        return (self.taus.size, self.thetas.size)

    @property
    def size(self):
        return self.taus.size * self.thetas.size

    @property
    def B(self):
        return freq_response_matrix(self.taus, self.ofdm)

    @property
    def A(self):
        return steering_matrix(self.thetas, self.geometry)

    def atom(self, i, j):
        return np.kron(self.B[:, i], self.A[:, j])

    def correlate(self, R):
        """``atom^H R`` for every cell, shape ``(Q_tau, Q_theta, L)``."""
        M, N = self.geometry.M, self.ofdm.N
        Rc = np.asarray(R).reshape(N, M, -1)
        left = np.einsum("ni,nml->iml", self.B.conj(), Rc)
        return np.einsum("iml,mj->ijl", left, self.A.conj())


def _atoms(taus, thetas, geometry, ofdm):
    B = freq_response_matrix(taus, ofdm)
    A = steering_matrix(thetas, geometry)
    return (B[:, None, :] * A[None, :, :]).reshape(-1, len(taus))


def _estimates(Y, taus, thetas, geometry, ofdm, flagged=False, info=None):
    if len(taus) == 0:
        return PathEstimates((), flagged, info or {})
    Phi = _atoms(taus, thetas, geometry, ofdm)
    H = np.linalg.lstsq(Phi, Y, rcond=None)[0]
    entries = tuple(PathEstimate(float(t), float(th), H[p])
                    for p, (t, th) in enumerate(zip(taus, thetas)))
    return PathEstimates(entries, flagged, info or {})


def omp_2d(Y, grid, P):
    """Greedy MMV-OMP: pick the atom best correlated with the residual, refit.

    Each iteration selects the cell maximising ``||atom^H R||_2`` and refits
    all selected atoms by least squares. Returns ``P`` estimates with their
    LS gains; ``info["residual_norms"]`` holds the residual after each step.
    """
    Y = np.asarray(Y)
    if P < 0:
        raise ValueError("P must be non-negative")
    if P > grid.size:
        raise ValueError(f"cannot pick {P} atoms from a grid of {grid.size}")
    if Y.shape[0] != grid.geometry.M * grid.ofdm.N:
        raise ValueError(f"expected {grid.geometry.M * grid.ofdm.N} rows, got {Y.shape[0]}")
    picked = []
    R = Y
    norms = [float(np.linalg.norm(Y))]
    for _ in range(P):
        score = np.linalg.norm(grid.correlate(R), axis=2)
        for i, j in picked:
            score[i, j] = -1.0
        i, j = np.unravel_index(int(np.argmax(score)), score.shape)
        picked.append((int(i), int(j)))
        Phi = np.column_stack([grid.atom(a, b) for a, b in picked])
        H = np.linalg.lstsq(Phi, Y, rcond=None)[0]
        R = Y - Phi @ H
        norms.append(float(np.linalg.norm(R)))
    taus = [grid.taus[i] for i, _ in picked]
    thetas = [grid.thetas[j] for _, j in picked]
    return _estimates(Y, taus, thetas, grid.geometry, grid.ofdm,
                      info={"residual_norms": norms, "cells": picked, "label": OMP_LABEL})


@dataclass(frozen=True)
class SmoothingConfig:
    """Subband length for frequency smoothing and the forward-backward switch."""

    N_sub: int = C.DEFAULT_SUBBAND
    forward_backward: bool = True

    def __post_init__(self):
        if self.N_sub < 1:
            raise ValueError("subband length must be at least 1")

    def snapshots(self, N, L):
        return (N - self.N_sub + 1) * L * (2 if self.forward_backward else 1)

    def validate(self, M, N, L):
        if self.N_sub > N:
            raise ValueError(f"subband length {self.N_sub} exceeds N = {N}")
        if self.snapshots(N, L) < M * self.N_sub:
            raise ValueError(
                f"{self.snapshots(N, L)} smoothed snapshots cannot give a full-rank "
                f"{M * self.N_sub}-dimensional covariance"
            )


def smoothed_covariance(Y, M, N, smoothing):
    """Sample covariance over all subbands and snapshots.

    Subband ``k`` takes subcarriers ``k .. k + N_sub - 1`` of every antenna,
    stacked antenna-fastest. With forward-backward averaging the result is
    ``(R + J conj(R) J) / 2`` for the exchange matrix ``J``.
    """
    Y = np.asarray(Y)
    L = Y.shape[1]
    ns = smoothing.N_sub
    Yc = Y.reshape(N, M, L)
    K = N - ns + 1
    X = np.stack([Yc[k:k + ns].reshape(ns * M, L) for k in range(K)], axis=1)
    X = X.reshape(ns * M, K * L)
    R = X @ X.conj().T / X.shape[1]
    if smoothing.forward_backward:
        R = 0.5 * (R + R.conj()[::-1, ::-1])
    return R


def _strict_peaks(S):
    # strict local maxima over the 8-neighbourhood; outside cells count as -inf
    Qt, Qa = S.shape
    pad = np.full((Qt + 2, Qa + 2), -np.inf)
    pad[1:-1, 1:-1] = S
    ok = np.ones_like(S, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            ok &= S > pad[1 + di:1 + di + Qt, 1 + dj:1 + dj + Qa]
    return np.argwhere(ok)


def music_2d(Y, smoothing, grid, P):
    """Joint (delay, AoA) MUSIC on the smoothed covariance.

    The pseudo-spectrum ``1 / ||E_n^H (b_sub(tau) kron a(theta))||^2`` is
    evaluated on ``grid`` and its ``P`` largest strict local maxima are
    returned, with gains fit by least squares on the full-band data. The
    result is flagged when the covariance has numerical rank below ``P`` or
    fewer than ``P`` peaks exist.
    """
    Y = np.asarray(Y)
    M, N, L = grid.geometry.M, grid.ofdm.N, Y.shape[1]
    if Y.shape[0] != M * N:
        raise ValueError(f"expected {M * N} rows, got {Y.shape[0]}")
    if P < 0:
        raise ValueError("P must be non-negative")
    smoothing.validate(M, N, L)
    if smoothing.forward_backward and not grid.geometry.is_uniform:
        raise ValueError("forward-backward averaging needs a uniform linear array")
    if P == 0:
        return PathEstimates((), info={"label": MUSIC_LABEL})
    ns = smoothing.N_sub
    dim = M * ns
    if P >= dim:
        raise ValueError(f"P = {P} leaves no noise subspace in dimension {dim}")
    R = smoothed_covariance(Y, M, N, smoothing)
    w, V = hermitian_eig(R)
    top = w[0] if w[0] > 0 else 1.0
    rank = int(np.sum(w > 1e-10 * top))
    Es = V[:, :P]
    # ||E_n^H x||^2 = 1 - ||E_s^H x||^2 for unit-norm x
    Bs = freq_response_matrix(grid.taus, grid.ofdm)[:ns] * np.sqrt(N / ns)
    S = Es.T.reshape(P, ns, M).conj()
    proj = np.einsum("ni,pnm,mj->pij", Bs, S, grid.A)
    null = np.clip(1.0 - np.sum(np.abs(proj) ** 2, axis=0), 1e-15, None)
    spectrum = 1.0 / null
    peaks = _strict_peaks(spectrum)
    order = np.argsort(-spectrum[peaks[:, 0], peaks[:, 1]], kind="stable")[:P]
    cells = [tuple(int(v) for v in peaks[k]) for k in order]
    taus = [grid.taus[i] for i, _ in cells]
    thetas = [grid.thetas[j] for _, j in cells]
    flagged = rank < P or len(cells) < P
    info = {"rank": rank, "cells": cells, "label": MUSIC_LABEL, "spectrum": spectrum}
    return _estimates(Y, taus, thetas, grid.geometry, grid.ofdm, flagged, info)
