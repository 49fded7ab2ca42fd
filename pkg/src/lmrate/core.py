"""Finite-alphabet probability types and information measures.

All information quantities are computed and returned in nats. Callers that
need bits divide by ln 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

# Weights below this floor are treated as exact zeros inside entropy-style
# sums, so underflowed grid probabilities cannot poison a sum through 0*log 0.
ZERO_FLOOR = 1e-300

_SIMPLEX_TOL = 1e-12
_JOINT_TOL = 1e-9


def as_weights(p) -> np.ndarray:
    """Return the weight vector of a ProbabilityVector, or coerce an array-like."""
    if isinstance(p, ProbabilityVector):
        return p.weights
    return np.asarray(p, dtype=float)


def as_matrix(x) -> np.ndarray:
    """Return the entries of a matrix-valued domain type, or coerce an array-like."""
    return np.asarray(getattr(x, "entries", x), dtype=float)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ProbabilityVector:
    """Point on the probability simplex: nonnegative weights summing to one."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        total = w.sum()
        if abs(total - 1.0) > _SIMPLEX_TOL:
            raise ValueError(f"weights sum to {total!r}, expected 1 within {_SIMPLEX_TOL}")
        object.__setattr__(self, "weights", _freeze(w))

    @classmethod
    def uniform(cls, n: int) -> "ProbabilityVector":
        return cls(np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic conditional law of a discrete memoryless channel.

    Row i holds the output distribution given input i, so entries[i, j] is
    the probability of output j under input i.
    """

    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.ndim != 2 or e.size == 0:
            raise ValueError("entries must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise ValueError("entries must be finite and nonnegative")
        rows = e.sum(axis=1)
        bad = np.abs(rows - 1.0) > _SIMPLEX_TOL
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValueError(f"row {i} sums to {rows[i]!r}, expected 1 within {_SIMPLEX_TOL}")
        object.__setattr__(self, "entries", _freeze(e))

    @property
    def input_size(self) -> int:
        return self.entries.shape[0]

    @property
    def output_size(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class JointDistribution:
    """Joint probability matrix over an input/output alphabet pair."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.ndim != 2 or e.size == 0:
            raise ValueError("entries must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise ValueError("entries must be finite and nonnegative")
        total = e.sum()
        if abs(total - 1.0) > _JOINT_TOL:
            raise ValueError(f"entries sum to {total!r}, expected 1 within {_JOINT_TOL}")
        object.__setattr__(self, "entries", _freeze(e))

    def row_marginal(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    def column_marginal(self) -> np.ndarray:
        return self.entries.sum(axis=0)


def entropy(p) -> float:
    """Shannon entropy -sum p log p in nats, with the convention 0 log 0 = 0."""
    w = as_weights(p)
    w = np.where(w < ZERO_FLOOR, 0.0, w)
    return float(-xlogy(w, w).sum())


def mutual_information(p, s) -> float:
    """Mutual information in nats between an input with weights p and the
    output of the channel s.

    Evaluated directly as sum_ij p_i s_ij log(s_ij / q_j) with q = p @ s.
    Terms with zero joint mass are dropped, so zero rows or underflowed
    entries are harmless.
    """
    w = as_weights(p)
    t = as_matrix(s)
    q = w @ t
    joint = w[:, None] * t
    joint = np.where(joint < ZERO_FLOOR, 0.0, joint)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(joint > 0, t / q[None, :], 1.0)
    value = float(xlogy(joint, ratio).sum())
    return max(value, 0.0)


def joint_from_input(p, s) -> JointDistribution:
    """Joint law induced by input weights p through the channel s."""
    w = as_weights(p)
    t = as_matrix(s)
    if w.size != t.shape[0]:
        raise ValueError(f"input size {w.size} does not match channel rows {t.shape[0]}")
    return JointDistribution(w[:, None] * t)
