"""Kronecker-structured dictionaries, applied without being materialised.

A block matrix ``G`` is stored as an ndarray of shape ``(Q, K, L)``: ``Q``
blocks of ``K x L``. Its stacked ``QK x L`` form is ``G.reshape(-1, L)``.

For a delay grid the dictionary is ``C = B kron I_M`` and block ``q`` maps
to ``b(tau_q) kron I_M``. For an AoA grid the roles swap: block ``q`` maps
through ``I_N kron a(theta_q)`` (the permuted factorization), and blocks
are ``N x L``. Both act on measurements reshaped to ``(N, M, L)``.
"""
from dataclasses import dataclass, field

import numpy as np

from .signal_model import freq_response_matrix, steering_matrix

DELAY = "delay"
ANGLE = "angle"


@dataclass(frozen=True, eq=False)
class StructuredDictionary:
    """Dictionary ``[C_1, ..., C_Q]`` with unitary blocks ``C_q^H C_q = I``.

    ``atoms`` holds the gridded factor (``N x Q`` for delays, ``M x Q`` for
    AoAs), ``grid`` the parameter values, and ``M``/``N`` the array and
    subcarrier counts.
    """

    grid: np.ndarray
    atoms: np.ndarray = field(repr=False)
    M: int
    N: int
    gridded: str = DELAY

    def __post_init__(self):
        if self.gridded not in (DELAY, ANGLE):
            raise ValueError(f"unknown gridded axis {self.gridded!r}")
        if len(self.grid) < 1:
            raise ValueError("dictionary needs at least one grid point")
        expected = self.N if self.gridded == DELAY else self.M
        if self.atoms.shape != (expected, len(self.grid)):
            raise ValueError(f"atoms have shape {self.atoms.shape}")

    @property
    def Q(self):
        return len(self.grid)

    @property
    def block_rows(self):
        return self.M if self.gridded == DELAY else self.N

    @property
    def spacing(self):
        return float(self.grid[1] - self.grid[0]) if self.Q > 1 else np.inf

    def _cube(self, R):
        R = np.asarray(R)
        if R.ndim != 2 or R.shape[0] != self.M * self.N:
            raise ValueError(f"expected {self.M * self.N} rows, got shape {R.shape}")
        return R.reshape(self.N, self.M, R.shape[1])

    def apply(self, G):
        """``C @ G`` for a block matrix of shape ``(Q, K, L)``."""
        G = np.asarray(G)
        if G.ndim != 3 or G.shape[:2] != (self.Q, self.block_rows):
            raise ValueError(f"block matrix shape {G.shape} does not match dictionary")
        L = G.shape[2]
        Yg = (self.atoms @ G.reshape(self.Q, -1)).reshape(-1, self.block_rows, L)
        return self.from_gridded(Yg)

    def adjoint(self, R):
        """``C^H @ R`` as a block matrix; block ``q`` is ``C_q^H R``."""
        Rg = self.to_gridded(R)
        L = Rg.shape[2]
        out = self.atoms.conj().T @ Rg.reshape(Rg.shape[0], -1)
        return out.reshape(self.Q, self.block_rows, L)

    def to_gridded(self, R):
        """Measurements as ``(gridded, block_rows, L)``: ``(N, M, L)`` or ``(M, N, L)``."""
        Rc = self._cube(R)
        if self.gridded == DELAY:
            return Rc
        return np.ascontiguousarray(Rc.transpose(1, 0, 2))

    def from_gridded(self, Rg):
        L = Rg.shape[2]
        if self.gridded == ANGLE:
            Rg = Rg.transpose(1, 0, 2)
        return np.ascontiguousarray(Rg).reshape(self.M * self.N, L)

    def apply_block(self, q, Gq):
        """``C_q @ G_q`` for a single ``K x L`` block."""
        if self.gridded == DELAY:
            Y = self.atoms[:, q, None, None] * Gq[None, :, :]
        else:
            Y = self.atoms[None, :, q, None] * Gq[:, None, :]
        return Y.reshape(self.M * self.N, Gq.shape[1])

    def adjoint_block(self, q, R):
        """``C_q^H @ R`` for a single block index."""
        Rc = self._cube(R)
        if self.gridded == DELAY:
            return np.tensordot(self.atoms[:, q].conj(), Rc, axes=(0, 0))
        return np.tensordot(Rc, self.atoms[:, q].conj(), axes=(1, 0))

    def zeros(self, L):
        return np.zeros((self.Q, self.block_rows, L), dtype=complex)

    def dense(self):
        """Materialised ``MN x QK`` matrix. Meant for small checks only."""
        if self.gridded == DELAY:
            return np.kron(self.atoms, np.eye(self.M))
        cols = [np.kron(np.eye(self.N), self.atoms[:, [q]]) for q in range(self.Q)]
        return np.hstack(cols)


def delay_dictionary(taus, ofdm, M):
    taus = np.asarray(taus, dtype=float)
    if taus.size > 1 and np.any(np.diff(taus) <= 0):
        raise ValueError("delay grid must be strictly increasing")
    if np.any(taus >= ofdm.T_cp):
        raise ValueError("delay grid points must lie below the cyclic prefix")
    return StructuredDictionary(taus, freq_response_matrix(taus, ofdm), M, ofdm.N, DELAY)


def uniform_grid(Q, ofdm, M):
    """Delay grid ``tau_q = q * T_cp / Q`` for ``q = 0..Q-1`` (CP endpoint excluded)."""
    if Q < 1:
        raise ValueError("Q must be at least 1")
    return delay_dictionary(np.arange(Q) * (ofdm.T_cp / Q), ofdm, M)


def angle_dictionary(thetas, geometry, N):
    thetas = np.asarray(thetas, dtype=float)
    return StructuredDictionary(
        thetas, steering_matrix(thetas, geometry), geometry.M, N, ANGLE
    )


def block_norms(G):
    """Frobenius norm of every block."""
    return np.sqrt(np.sum(np.abs(G) ** 2, axis=(1, 2)))


def stack(G):
    return G.reshape(-1, G.shape[-1])
