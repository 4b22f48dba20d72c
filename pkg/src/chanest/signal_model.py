"""Scenario description and multi-snapshot OFDM array measurements.

Time quantities (path delays, ``T_s``, ``T_cp``, grid points) share one
unit; with the default ``T_s = 1`` every delay reads directly in samples.
Angles are in degrees at the API boundary.

Measurements are stacked antenna-fastest: row ``m + M * n`` of the
``(M * N) x L`` matrix holds antenna ``m`` on subcarrier ``n``, i.e. the
column-major vectorisation of the ``M x N`` receive matrix.
"""
from dataclasses import asdict, dataclass, field, replace
from typing import Tuple

import numpy as np

from .numerics import khatri_rao, sample_complex_gaussian

SNR_REFERENCES = ("entry", "element")
QPSK = np.exp(1j * np.pi * (2 * np.arange(4) + 1) / 4)


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna positions in carrier wavelengths, first element at 0."""

    positions: Tuple[float, ...]

    def __post_init__(self):
        pos = tuple(float(p) for p in self.positions)
        object.__setattr__(self, "positions", pos)
        if len(pos) < 2:
            raise ValueError("array needs at least two antennas")
        if not np.all(np.isfinite(pos)):
            raise ValueError("antenna positions must be finite")
        if pos[0] != 0.0:
            raise ValueError("first antenna must sit at position 0")

    @classmethod
    def ula(cls, M, spacing=0.5):
        return cls(tuple(spacing * m for m in range(M)))

    @property
    def M(self):
        return len(self.positions)

    @property
    def is_uniform(self):
        d = np.diff(self.positions)
        return bool(np.allclose(d, d[0]))


@dataclass(frozen=True)
class OfdmConfig:
    N: int = 16
    T_s: float = 1.0
    T_cp: float = 8.0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("need at least two subcarriers")
        if self.T_s <= 0 or self.T_cp <= 0:
            raise ValueError("T_s and T_cp must be positive")


@dataclass(frozen=True)
class PathParams:
    tau: float
    theta: float
    gain_magnitude: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.theta < 180.0:
            raise ValueError(f"AoA must lie in (0, 180) degrees, got {self.theta}")
        if self.tau < 0:
            raise ValueError(f"delay must be non-negative, got {self.tau}")
        if self.gain_magnitude <= 0:
            raise ValueError("gain magnitude must be positive")


@dataclass(frozen=True)
class Scenario:
    geometry: ArrayGeometry
    ofdm: OfdmConfig
    paths: Tuple[PathParams, ...]
    L: int = 3
    noise_variance: float = 0.0
    # "entry": sigma_w^2 is the noise variance of every entry of Y.
    # "element": SNR per antenna element and subcarrier with unit-modulus path
    # responses, i.e. entry noise variance sigma_w^2 / (M N) for the
    # normalized atoms used here.
    snr_reference: str = "entry"

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if self.snr_reference not in SNR_REFERENCES:
            raise ValueError(f"unknown SNR reference {self.snr_reference!r}")
        if not self.paths:
            raise ValueError("scenario needs at least one path")
        if self.L < 1:
            raise ValueError("need at least one snapshot")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be non-negative")
        for p in self.paths:
            if p.tau >= self.ofdm.T_cp:
                raise ValueError(
                    f"path delay {p.tau} not below cyclic prefix {self.ofdm.T_cp}"
                )

    @property
    def M(self):
        return self.geometry.M

    @property
    def N(self):
        return self.ofdm.N

    @property
    def P(self):
        return len(self.paths)

    @property
    def snr_db(self):
        if self.noise_variance == 0:
            return np.inf
        return -10.0 * np.log10(self.noise_variance)

    @property
    def entry_noise_variance(self):
        """Noise variance of each entry of the stacked measurements."""
        if self.snr_reference == "element":
            return self.noise_variance / (self.M * self.N)
        return self.noise_variance

    def with_snr_db(self, snr_db):
        """Copy with ``noise_variance = 1 / SNR``; ``inf`` means noise-free."""
        nv = 0.0 if np.isinf(snr_db) else 10.0 ** (-snr_db / 10.0)
        return replace(self, noise_variance=nv)

    def to_dict(self):
        return {
            "positions": list(self.geometry.positions),
            "N": self.ofdm.N,
            "T_s": self.ofdm.T_s,
            "T_cp": self.ofdm.T_cp,
            "paths": [asdict(p) for p in self.paths],
            "L": self.L,
            "noise_variance": self.noise_variance,
            "snr_reference": self.snr_reference,
        }

    @classmethod
    def from_dict(cls, d):
        if "positions" in d:
            geometry = ArrayGeometry(tuple(d["positions"]))
        else:
            geometry = ArrayGeometry.ula(int(d["M"]), float(d.get("spacing", 0.5)))
        ofdm = OfdmConfig(
            int(d.get("N", 16)), float(d.get("T_s", 1.0)), float(d.get("T_cp", 8.0))
        )
        paths = tuple(PathParams(**p) for p in d["paths"])
        return cls(
            geometry, ofdm, paths, int(d.get("L", 3)), float(d.get("noise_variance", 0.0)),
            str(d.get("snr_reference", "entry")),
        )


@dataclass(frozen=True)
class MmvData:
    """Stacked measurements after removing the reference signal."""

    Y: np.ndarray = field(repr=False)
    M: int
    N: int

    @property
    def L(self):
        return self.Y.shape[1]


# The five-path scenario: (|h|, tau / T_s, theta / deg).
PAPER_PATHS = (
    (1.12, 0.10, 64.98),
    (0.85, 1.23, 46.54),
    (0.71, 1.97, 94.71),
    (0.52, 3.57, 121.17),
    (0.41, 5.02, 105.32),
)


def paper_scenario(snr_db=np.inf, M=4, N=16, L=3, spacing=0.5, T_cp=8.0,
                   snr_reference="entry"):
    paths = tuple(PathParams(tau, theta, g) for g, tau, theta in PAPER_PATHS)
    sc = Scenario(ArrayGeometry.ula(M, spacing), OfdmConfig(N, 1.0, T_cp), paths, L,
                  snr_reference=snr_reference)
    return sc.with_snr_db(snr_db)


def steering_matrix(thetas, geometry):
    """Columns ``a(theta) = exp(-j 2 pi r_m cos(theta)) / sqrt(M)``."""
    th = np.deg2rad(np.atleast_1d(np.asarray(thetas, dtype=float)))
    r = np.asarray(geometry.positions)
    return np.exp(-2j * np.pi * np.outer(r, np.cos(th))) / np.sqrt(len(r))


def steering_vector(theta, geometry):
    if not np.isfinite(theta):
        raise ValueError("AoA must be finite")
    return steering_matrix([theta], geometry)[:, 0]


def freq_response_matrix(taus, ofdm):
    """Columns ``b(tau)`` with entry ``exp(-j 2 pi n tau / (N T_s)) / sqrt(N)``."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    n = np.arange(ofdm.N)
    return np.exp(-2j * np.pi * np.outer(n, taus) / (ofdm.N * ofdm.T_s)) / np.sqrt(ofdm.N)


def freq_response_vector(tau, ofdm):
    if not np.isfinite(tau):
        raise ValueError("delay must be finite")
    return freq_response_matrix([tau], ofdm)[:, 0]


def path_matrices(scenario):
    """True steering ``A`` (M x P) and frequency-response ``B`` (N x P)."""
    A = steering_matrix([p.theta for p in scenario.paths], scenario.geometry)
    B = freq_response_matrix([p.tau for p in scenario.paths], scenario.ofdm)
    return A, B


def synthesize(scenario, rng):
    """Draw one batch of ``L`` snapshots.

    Gains keep their configured magnitude and get an independent uniform
    phase per path and snapshot. Each snapshot uses fresh QPSK reference
    symbols, which are removed again by multiplying with their conjugate.

    Returns ``(MmvData, H)`` with ``H`` the ``P x L`` matrix of true gains.
    """
    M, N, P, L = scenario.M, scenario.N, scenario.P, scenario.L
    A, B = path_matrices(scenario)
    mags = np.array([p.gain_magnitude for p in scenario.paths])
    phases = rng.uniform(0.0, 2 * np.pi, size=(P, L))
    H = mags[:, None] * np.exp(1j * phases)
    X = QPSK[rng.integers(0, 4, size=(N, L))]

    Y = np.empty((M * N, L), dtype=complex)
    for l in range(L):
        W = sample_complex_gaussian(rng, M, N, scenario.entry_noise_variance)
        Yl = (A * H[:, l]) @ B.T * X[:, l] + W
        # X is diagonal with unit-modulus entries, so X^{-1} = conj(X)
        Y[:, l] = (Yl * X[:, l].conj()).reshape(-1, order="F")
    return MmvData(Y, M, N), H


def noise_free_measurements(scenario, H):
    """``(B * A) @ H`` via the Khatri-Rao product."""
    A, B = path_matrices(scenario)
    return khatri_rao(B, A) @ H


def shuffle_permutation(N, P):
    """Index map ``perm`` with ``(I_P * B) == (B * I_P)[perm]``.

    ``perm[p * N + n] = n * P + p``; the corresponding permutation matrix
    ``J`` satisfies ``J.T @ (B * I_P) == I_P * B``.
    """
    p, n = np.meshgrid(np.arange(P), np.arange(N), indexing="ij")
    return (n * P + p).reshape(-1)


def permutation_matrix(N, P):
    """Dense ``J`` (NP x NP) such that ``J.T @ (B * I_P) = I_P * B``."""
    perm = shuffle_permutation(N, P)
    Jt = np.zeros((N * P, N * P))
    Jt[np.arange(N * P), perm] = 1.0
    return Jt.T
