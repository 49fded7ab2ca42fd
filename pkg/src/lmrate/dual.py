"""Log-domain kernels and closed-form updates for the dual ascent.

The dual of the fixed-input rate problem maximizes, over positive scaling
vectors phi (input side) and psi_tilde (output side, already divided by the
output law q) and a metric multiplier zeta >= 0,

    g(p, phi, psi_tilde, zeta) = -sum_i p_i log p_i + sum_i p_i log T_i + 1,

where T_i aggregates the kernel e^{-zeta d} column sums, log psi_tilde and
the metric row means (see log_T). Optimizing the input adds a power
multiplier lambda >= 0. Every block update below is an exact coordinate
maximization of g, so alternating them ascends monotonically.

Metric values on a truncated output grid reach a few hundred, so e^{-zeta d}
underflows float64 long before its weighted sums become negligible. All
reductions therefore run in the log domain with max-subtracted log-sum-exp,
and DualState carries log phi / log psi_tilde, exposing linear views only
for inspection.

Output columns whose induced probability q_j falls below PRUNE_FLOOR are
excluded from all sums for the current iteration: every term they enter is
q-weighted (or bounded by q through the channel rows), so their contribution
is far below any tolerance in use, while keeping them invites 0 * inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from .core import ProbabilityVector, ZERO_FLOOR, as_matrix, as_weights

# Output columns with q_j below this are dropped from the iteration's sums.
PRUNE_FLOOR = 1e-250
# Scalar root solves stop at this function-value tolerance.
ROOT_TOL = 1e-12
# Multiplier bracket expansion gives up beyond this cap.
MULTIPLIER_CAP = 1e6

_DERIV_FLOOR = 1e-300


class NumericalFailure(RuntimeError):
    """A kernel reduction or scalar solve left the representable range."""


@dataclass
class DualState:
    """Dual iterate: input/output log scalings plus the two multipliers."""

    log_phi: np.ndarray
    log_psi: np.ndarray  # log of psi_tilde
    zeta: float
    lam: float

    def __post_init__(self):
        self.log_phi = np.asarray(self.log_phi, dtype=float)
        self.log_psi = np.asarray(self.log_psi, dtype=float)
        self.validate()

    def validate(self):
        if not np.all(np.isfinite(self.log_phi)) or not np.all(np.isfinite(self.log_psi)):
            raise ValueError("log scalings must be finite (scalings strictly positive)")
        if not (self.zeta >= 0 and self.lam >= 0):
            raise ValueError("multipliers must be nonnegative")

    @classmethod
    def from_linear(cls, phi, psi_tilde, zeta: float, lam: float) -> "DualState":
        phi = np.asarray(phi, dtype=float)
        psi = np.asarray(psi_tilde, dtype=float)
        if np.any(phi <= 0) or np.any(psi <= 0):
            raise ValueError("phi and psi_tilde must be strictly positive")
        return cls(np.log(phi), np.log(psi), zeta, lam)

    @property
    def phi(self) -> np.ndarray:
        return np.exp(self.log_phi)

    @property
    def psi_tilde(self) -> np.ndarray:
        return np.exp(self.log_psi)

    def copy(self) -> "DualState":
        return DualState(self.log_phi.copy(), self.log_psi.copy(), self.zeta, self.lam)


def initial_state(m: int, n: int) -> DualState:
    """Unit scalings and unit multipliers."""
    return DualState(np.zeros(m), np.zeros(n), 1.0, 1.0)


def log_kernel(zeta: float, d) -> np.ndarray:
    """Log-domain kernel exponents -zeta * d_ij."""
    return -zeta * as_matrix(d)


def active_columns(q: np.ndarray) -> np.ndarray:
    """Mask of output columns kept in the current iteration's sums."""
    return q > PRUNE_FLOOR


def _finite_or_fail(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericalFailure(f"{what} left the float range")
    return a


def _safe_log(q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(q)


def _column_lse(log_phi: np.ndarray, zeta: float, d: np.ndarray) -> np.ndarray:
    """Per-column log sum_k phi_k e^{-zeta d_kj}."""
    return logsumexp(log_phi[:, None] - zeta * d, axis=0)


def log_T(state: DualState, s, d, *, active=None, sd_rowsum=None, col_lse=None) -> np.ndarray:
    """Log of the per-input aggregate driving the input update.

    log T_i = log phi_i + sum_j s_ij [ -A_j + log psi_j - zeta d_ij ],
    with A_j = psi_j * sum_k phi_k e^{-zeta d_kj} evaluated through logs.

    Optional precomputed pieces (the solver's hot loop passes them):
    active column mask, per-row sum of s*d over active columns, and the
    per-column kernel log-sums.
    """
    s = as_matrix(s)
    d = as_matrix(d)
    if active is None:
        active = np.ones(s.shape[1], dtype=bool)
    s_act = s[:, active]
    if sd_rowsum is None:
        sd_rowsum = (s_act * d[:, active]).sum(axis=1)
    if col_lse is None:
        col_lse = _column_lse(state.log_phi, state.zeta, d[:, active])
    log_psi_act = state.log_psi[active]
    with np.errstate(over="raise"):
        try:
            a = np.exp(log_psi_act + col_lse)
        except FloatingPointError as exc:
            raise NumericalFailure("kernel column sums overflowed in log_T") from exc
    out = state.log_phi + s_act @ (log_psi_act - a) - state.zeta * sd_rowsum
    return _finite_or_fail(out, "log_T")


def dual_objective(state: DualState, p, s, d, *, active=None, log_t=None, sd_rowsum=None) -> float:
    """Dual ascent objective in nats at an arbitrary state.

    At a converged fixed point this equals the rate. Raises
    NumericalFailure when the value escapes the float range.
    """
    w = as_weights(p)
    if log_t is None:
        if active is None:
            q = w @ as_matrix(s)
            active = active_columns(q)
        log_t = log_T(state, s, d, active=active, sd_rowsum=sd_rowsum)
    mask = w > ZERO_FLOOR
    value = float(-xlogy(w[mask], w[mask]).sum() + w[mask] @ log_t[mask] + 1.0)
    if not np.isfinite(value):
        raise NumericalFailure("dual objective left the float range")
    return value


def _power_weights(lam: float, log_t: np.ndarray, powers: np.ndarray) -> np.ndarray:
    z = log_t - lam * powers
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def eval_F(lam: float, log_t, powers, power_budget) -> float:
    """Power-constraint slack: mean of ||x||^2 under weights T_i e^{-lam ||x_i||^2},
    minus the budget. Monotone non-increasing in lam.

    An unconstrained budget (None or +inf) returns -inf, so the
    complementary-slackness residual max(0, F(0)) is zero.
    """
    if power_budget is None or np.isinf(power_budget):
        return -np.inf
    log_t = np.asarray(log_t, dtype=float)
    powers = np.asarray(powers, dtype=float)
    w = _power_weights(lam, log_t, powers)
    return float(powers @ w - power_budget)


def _f_with_derivative(lam: float, log_t, powers, power_budget):
    w = _power_weights(lam, log_t, powers)
    mean = float(powers @ w)
    var = float((powers - mean) ** 2 @ w)
    return mean - power_budget, -var


def _monotone_decreasing_root(fun, x0: float, *, what: str, cap: float = MULTIPLIER_CAP) -> float:
    """Root of a monotone non-increasing scalar function on [0, inf).

    fun(x) returns (value, derivative). Returns 0 when fun(0) <= 0
    (constraint already slack). Otherwise maintains a sign-change bracket,
    expanding the upper end by doubling up to `cap`, and runs Newton steps
    with bisection whenever a step leaves the bracket or the derivative
    degenerates. Stops at |f| <= ROOT_TOL or when the bracket collapses to
    machine width.
    """
    f0, _ = fun(0.0)
    if f0 <= 0.0:
        return 0.0
    lo = 0.0
    x = x0 if x0 > 0 else 1.0
    fx, dfx = fun(x)
    while fx > 0.0:
        lo = x
        if x >= cap:
            raise NumericalFailure(f"{what}: no sign change up to {cap:g}; constraint infeasible")
        x = min(2.0 * x, cap)
        fx, dfx = fun(x)
    hi = x
    eps = np.finfo(float).eps
    for _ in range(200):
        if abs(fx) <= ROOT_TOL:
            return x
        if hi - lo <= 4.0 * eps * max(1.0, hi):
            return x
        if np.isfinite(dfx) and dfx < -_DERIV_FLOOR:
            step = x - fx / dfx
        else:
            step = 0.5 * (lo + hi)
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        x = step
        fx, dfx = fun(x)
        if fx > 0.0:
            lo = x
        else:
            hi = x
    return x


def solve_lambda(log_t, powers, power_budget, *, lam0: float = 1.0) -> float:
    """Power multiplier: 0 when the constraint is slack at lam = 0, else the
    root of the slack function, warm-started at lam0."""
    log_t = np.asarray(log_t, dtype=float)
    powers = np.asarray(powers, dtype=float)

    def fun(lam):
        return _f_with_derivative(lam, log_t, powers, power_budget)

    return _monotone_decreasing_root(fun, lam0, what="power multiplier")


def update_p(log_t, powers, power_budget, *, lam0: float = 1.0):
    """Input update: p_i proportional to T_i e^{-lam ||x_i||^2} on the simplex.

    Returns (ProbabilityVector, lam). A budget of None or +inf skips the
    multiplier solve and uses lam = 0.
    """
    log_t = np.asarray(log_t, dtype=float)
    powers = np.asarray(powers, dtype=float)
    if power_budget is None or np.isinf(power_budget):
        lam = 0.0
    else:
        lam = solve_lambda(log_t, powers, power_budget, lam0=lam0)
    w = _power_weights(lam, log_t, powers)
    return ProbabilityVector(w), lam


def _phi_update(p, log_psi, zeta, s, d, *, log_q=None, active=None):
    """Returns (new log_phi, per-row log denominator over active columns)."""
    w = as_weights(p)
    s = as_matrix(s)
    d = as_matrix(d)
    if log_q is None or active is None:
        q = w @ s
        active = active_columns(q)
        log_q = _safe_log(q)
    shift = (log_psi + log_q)[active]
    denom = logsumexp(-zeta * d[:, active] + shift[None, :], axis=1)
    with np.errstate(divide="ignore"):
        log_phi = np.log(w) - denom
    return _finite_or_fail(log_phi, "phi update"), denom


def update_phi(p, log_psi, zeta: float, s, d, *, log_q=None, active=None) -> np.ndarray:
    """Input-scaling update: phi_i = p_i / sum_j e^{-zeta d_ij} psi_j q_j.

    Operates on and returns log-domain vectors. A zero denominator (all
    active columns unreachable from input i) marks a grid/metric pathology
    and raises NumericalFailure.
    """
    log_phi, _ = _phi_update(p, log_psi, zeta, s, d, log_q=log_q, active=active)
    return log_phi


def _psi_update(log_phi, zeta, d):
    """Returns (new log_psi over all columns, the column kernel log-sums)."""
    col = _column_lse(np.asarray(log_phi, dtype=float), zeta, as_matrix(d))
    return _finite_or_fail(-col, "psi update"), col


def update_psi(log_phi, zeta: float, d) -> np.ndarray:
    """Output-scaling update: psi_j = 1 / sum_i phi_i e^{-zeta d_ij}.

    Computed for every column in the log domain, so far columns cannot
    underflow the division.
    """
    log_psi, _ = _psi_update(log_phi, zeta, d)
    return log_psi


def _metric_pieces(p, s, d, *, log_q=None, active=None, log_d=None, dsp=None):
    w = as_weights(p)
    s = as_matrix(s)
    d = as_matrix(d)
    if log_q is None or active is None:
        q = w @ s
        active = active_columns(q)
        log_q = _safe_log(q)
    if log_d is None:
        log_d = _safe_log(d)
    if dsp is None:
        dsp = float(w @ (s[:, active] * d[:, active]).sum(axis=1))
    return w, s, d, log_q, active, log_d, dsp


def _g_with_derivative(zeta, log_phi, log_psi, d, log_q, active, log_d, dsp):
    base = (
        np.asarray(log_phi, dtype=float)[:, None]
        - zeta * d[:, active]
        + (np.asarray(log_psi, dtype=float) + log_q)[active][None, :]
    )
    ld = log_d[:, active]
    with np.errstate(invalid="ignore"):
        value = float(np.exp(logsumexp(base + ld))) - dsp
        deriv = -float(np.exp(logsumexp(base + 2.0 * ld)))
    return value, deriv


def eval_G(zeta: float, log_phi, log_psi, p, s, d, *, log_q=None, active=None, log_d=None, dsp=None) -> float:
    """Metric-constraint slack: kernel-weighted metric mass at zeta minus the
    channel's metric mean sum_kj d_kj s_kj p_k. Monotone non-increasing."""
    w, s, d, log_q, active, log_d, dsp = _metric_pieces(
        p, s, d, log_q=log_q, active=active, log_d=log_d, dsp=dsp
    )
    value, _ = _g_with_derivative(zeta, log_phi, log_psi, d, log_q, active, log_d, dsp)
    return value


def solve_zeta(log_phi, log_psi, p, s, d, *, zeta0: float = 1.0, log_q=None, active=None, log_d=None, dsp=None) -> float:
    """Metric multiplier: 0 when the slack function is nonpositive at 0,
    else its unique positive root, warm-started at zeta0."""
    w, s, d, log_q, active, log_d, dsp = _metric_pieces(
        p, s, d, log_q=log_q, active=active, log_d=log_d, dsp=dsp
    )

    def fun(zeta):
        return _g_with_derivative(zeta, log_phi, log_psi, d, log_q, active, log_d, dsp)

    return _monotone_decreasing_root(fun, zeta0, what="metric multiplier")
