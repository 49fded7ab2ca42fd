"""Constellations, the IQ-imbalance channel, grid discretization, metrics.

The channel model is a 2-D real AWGN channel Y = H X + Z with a square-QAM
constellation at the input. The continuous output is truncated to a square
region and replaced by a uniform grid, which turns the channel into a
discrete memoryless one. The decoder scores candidates by squared Euclidean
distance under an assumed channel matrix, so the decoding-metric matrix is
d_ij = ||y_j - H_hat x_i||^2 (the negative log of the metric q = e^{-d}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import TransitionMatrix, _freeze

# Per-axis level count for the built-in square constellations.
SCHEMES = {"qpsk": 2, "qam16": 4, "qam64": 8, "qam256": 16}

_POWER_TOL = 1e-12


class DiscretizationError(ValueError):
    """A channel row could not be normalized on the chosen output grid."""


@dataclass(frozen=True)
class Constellation:
    """Unit-power square constellation in 2-D real coordinates."""

    points: np.ndarray  # (M, 2)
    scheme: str
    average_power: float  # mean of ||x||^2 under uniform weighting

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must be an (M, 2) array")
        if pts.shape[0] not in (4, 16, 64, 256):
            raise ValueError(f"unsupported constellation size {pts.shape[0]}")
        if abs(self.average_power - 1.0) > _POWER_TOL:
            raise ValueError(f"average power {self.average_power!r} is not 1")
        object.__setattr__(self, "points", _freeze(pts))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def powers(self) -> np.ndarray:
        """Per-point power ||x_i||^2."""
        return (self.points**2).sum(axis=1)


@dataclass(frozen=True)
class OutputGrid:
    """Uniform square grid truncating the channel output plane."""

    points: np.ndarray  # (N, 2)
    spacing: float
    bound: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        n = pts.shape[0]
        side = math.isqrt(n)
        if side * side != n:
            raise ValueError(f"grid size {n} is not a perfect square")
        expected = 2.0 * self.bound / (side - 1) if side > 1 else 0.0
        if abs(self.spacing - expected) > 1e-12:
            raise ValueError("spacing is inconsistent with size and bound")
        if np.any(np.abs(pts) > self.bound + 1e-12):
            raise ValueError("grid points exceed the stated bound")
        object.__setattr__(self, "points", _freeze(pts))

    @property
    def size(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ChannelMatrixH:
    """Scaling-plus-rotation channel matrix modeling IQ imbalance."""

    matrix: np.ndarray  # (2, 2)
    eta1: float
    eta2: float
    theta: float

    def __post_init__(self):
        h = np.array(self.matrix, dtype=float)
        if h.shape != (2, 2):
            raise ValueError("matrix must be 2x2")
        expected = np.diag([self.eta1, self.eta2]) @ _rotation(self.theta)
        if not np.array_equal(h, expected):
            raise ValueError("matrix is not diag(eta1, eta2) times the rotation block")
        object.__setattr__(self, "matrix", _freeze(h))


@dataclass(frozen=True)
class MetricMatrix:
    """Decoding-metric matrix d_ij = -log q(x_i, y_j), nonnegative entries."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.ndim != 2 or e.size == 0:
            raise ValueError("entries must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise ValueError("entries must be finite and nonnegative")
        object.__setattr__(self, "entries", _freeze(e))


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def build_constellation(scheme: str) -> Constellation:
    """Build a unit-average-power square constellation.

    Per-axis amplitude levels are the odd integers {+-1, +-3, ...}, scaled so
    that the uniform-weight mean of ||x||^2 equals 1.
    """
    key = scheme.lower()
    if key not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {sorted(SCHEMES)}")
    half = SCHEMES[key]
    levels = np.arange(-(half - 1), half, 2, dtype=float)
    a = np.repeat(levels, half)
    b = np.tile(levels, half)
    pts = np.column_stack([a, b])
    scale = math.sqrt(float((pts**2).sum(axis=1).mean()))
    pts /= scale
    return Constellation(points=pts, scheme=key, average_power=float((pts**2).sum(axis=1).mean()))


def iq_channel(eta: float, theta: float) -> ChannelMatrixH:
    """IQ-imbalance channel with unit in-phase gain, quadrature gain eta,
    and rotation angle theta (radians)."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    h = np.diag([1.0, eta]) @ _rotation(theta)
    return ChannelMatrixH(matrix=h, eta1=1.0, eta2=eta, theta=theta)


def output_grid(n: int, bound: float) -> OutputGrid:
    """Uniform sqrt(n) x sqrt(n) grid spanning [-bound, bound]^2 inclusive.

    Enumeration is row-major with the first coordinate varying slowest, so
    point r*sqrt(n) + s (0-based) sits at (-bound + r*dy, -bound + s*dy).
    """
    side = math.isqrt(int(n))
    if side * side != n or n < 4:
        raise ValueError(f"grid size {n} must be a perfect square >= 4")
    if bound <= 0:
        raise ValueError("bound must be positive")
    dy = 2.0 * bound / (side - 1)
    axis = -bound + dy * np.arange(side)
    first = np.repeat(axis, side)
    second = np.tile(axis, side)
    return OutputGrid(points=np.column_stack([first, second]), spacing=dy, bound=float(bound))


def sigma2_from_snr_db(snr_db: float) -> float:
    """Per-axis noise variance from SNR in dB, with SNR defined as 1/(2 sigma^2)."""
    return 1.0 / (2.0 * 10.0 ** (snr_db / 10.0))


def squared_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, shape (len(x), len(y)).

    Uses the dot-product expansion to avoid an (M, N, 2) temporary; tiny
    negative rounding artifacts are clipped to zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sq = (x**2).sum(axis=1)[:, None] - 2.0 * (x @ y.T) + (y**2).sum(axis=1)[None, :]
    return np.maximum(sq, 0.0)


def discretize_awgn(
    h: ChannelMatrixH, sigma2: float, constellation: Constellation, grid: OutputGrid
) -> TransitionMatrix:
    """Discretized AWGN transition law on the output grid.

    Row i is proportional to the isotropic Gaussian density of variance
    sigma2 per axis centered at H x_i, evaluated at the grid points and
    normalized to sum to one.

    Raises DiscretizationError when a row underflows entirely, which means
    the grid is too small or sigma2 too small for the grid spacing.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    means = constellation.points @ np.asarray(h.matrix).T
    z = squared_distances(means, grid.points) / (2.0 * sigma2)
    zmin = z.min(axis=1)
    # Unshifted exp underflows the whole row exactly when its largest entry does.
    dead = np.exp(-zmin) == 0.0
    if np.any(dead):
        i = int(np.argmax(dead))
        raise DiscretizationError(
            f"row {i} underflows: nearest grid point is {zmin[i]:.3g} noise units away; "
            "enlarge the grid bound or refine the grid"
        )
    rows = np.exp(-(z - zmin[:, None]))
    rows /= rows.sum(axis=1, keepdims=True)
    return TransitionMatrix(rows)


def metric_matrix(constellation: Constellation, grid: OutputGrid, h_hat) -> MetricMatrix:
    """Squared-distance decoding metric d_ij = ||y_j - H_hat x_i||^2.

    h_hat is the channel matrix the decoder assumes: the identity for a
    decoder that ignores the IQ imbalance, or a ChannelMatrixH / 2x2 array.
    """
    hm = np.asarray(getattr(h_hat, "matrix", h_hat), dtype=float)
    if hm.shape != (2, 2):
        raise ValueError("h_hat must be a 2x2 matrix")
    means = constellation.points @ hm.T
    return MetricMatrix(squared_distances(means, grid.points))
