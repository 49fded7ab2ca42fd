"""Alternating double maximization: input-optimized and fixed-input rates.

One iteration performs four exact block maximizations in this order:

  1. solve the power multiplier and update the input weights p, using the
     per-input aggregate T carried from the previous dual state;
  2. update the input scaling phi with the new p (previous zeta);
  3. update the output scaling psi_tilde with the new phi (previous zeta);
  4. solve the metric multiplier zeta against the new (phi, psi_tilde, p).

The loop stops when the dual objective changes by less than rate_tol
between consecutive iterations, or at max_iter. Residuals are recorded
diagnostics, never stop criteria.

The residual trajectory samples each component just before its own block
update (the natural measure of how far that block sits from its optimal
response to the others); the report's final_residuals re-evaluate all four
at the terminal state in one coherent snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dual
from .core import ProbabilityVector, ZERO_FLOOR, as_matrix, as_weights, entropy
from .dual import DualState, NumericalFailure

TERM_RATE_TOL = "rate_tol"
TERM_MAX_ITER = "max_iter"
TERM_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverConfig:
    """Iteration budget, tolerances and the power budget.

    power_budget is the average-power cap (None for unconstrained).
    residual_tol is a diagnostic threshold only; termination uses rate_tol.
    """

    max_iter: int = 3000
    rate_tol: float = 1e-10
    residual_tol: float = 1e-6
    power_budget: float | None = 1.0
    record_trajectory: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not (self.rate_tol > 0 and self.residual_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.power_budget is not None and not self.power_budget > 0:
            raise ValueError("power_budget must be positive or None")


@dataclass
class SolveReport:
    """Outcome of a solve.

    rate equals the final entry of objective_trajectory. The objective
    trajectory starts with the value at the initial state (index 0) and has
    one entry per iteration thereafter; it is non-decreasing up to rounding.
    residual_trajectory has one (r_phi, r_psi, r_zeta, r_lambda) row per
    iteration when trajectories are recorded, otherwise it is empty.
    """

    rate: float
    input_distribution: ProbabilityVector
    dual_state: DualState
    iterations: int
    termination: str
    residual_trajectory: np.ndarray
    objective_trajectory: np.ndarray
    final_residuals: tuple[float, float, float, float]
    diagnostic: str = ""


def _objective(p: np.ndarray, log_t: np.ndarray) -> float:
    mask = p > ZERO_FLOOR
    value = float(entropy(p) + p[mask] @ log_t[mask] + 1.0)
    if not np.isfinite(value):
        raise NumericalFailure("objective left the float range")
    return value


def _lambda_residual(lam: float, log_t, powers, power_budget) -> float:
    if lam > 0:
        return abs(dual.eval_F(lam, log_t, powers, power_budget))
    return max(0.0, dual.eval_F(0.0, log_t, powers, power_budget))


def _zeta_residual(zeta, log_phi, log_psi, p, s, d, **kw) -> float:
    if zeta > 0:
        return abs(dual.eval_G(zeta, log_phi, log_psi, p, s, d, **kw))
    return max(0.0, dual.eval_G(0.0, log_phi, log_psi, p, s, d, **kw))


def residuals(state: DualState, p, s, d, power_budget, powers, *, log_q=None, active=None):
    """Block-optimality residuals (r_phi, r_psi, r_zeta, r_lambda) at a state.

    r_phi and r_psi measure how far the two scaling vectors are from their
    own closed-form updates, in L1 weighted by the input/output laws. The
    multiplier residuals use the complementary-slackness form: the absolute
    slack at a positive multiplier, max(0, slack at 0) otherwise.
    """
    w = as_weights(p)
    s_m = as_matrix(s)
    d_m = as_matrix(d)
    if log_q is None or active is None:
        q = w @ s_m
        active = dual.active_columns(q)
        log_q = dual._safe_log(q)
    q_act = np.exp(log_q[active])

    _, denom = dual._phi_update(w, state.log_psi, state.zeta, s_m, d_m, log_q=log_q, active=active)
    r_phi = float(np.abs(np.exp(state.log_phi + denom) - w).sum())

    col = dual._column_lse(state.log_phi, state.zeta, d_m[:, active])
    r_psi = float((np.abs(np.exp(state.log_psi[active] + col) - 1.0) * q_act).sum())

    r_zeta = _zeta_residual(
        state.zeta, state.log_phi, state.log_psi, w, s_m, d_m, log_q=log_q, active=active
    )

    log_t = dual.log_T(state, s_m, d_m, active=active)
    r_lam = _lambda_residual(state.lam, log_t, np.asarray(powers, float), power_budget)
    return (r_phi, r_psi, r_zeta, r_lam)


def reconstruct_primal(state: DualState, p, s, d):
    """Primal coupling gamma_ij = phi_i e^{-zeta d_ij} psi_j q_j and its rate.

    The reconstruction carries the dual residual as a small mass defect, so
    gamma is normalized by its total before wrapping; near a fixed point the
    correction is of the order of the residuals. Returns
    (JointDistribution, primal rate in nats), the rate being the mutual
    information of the coupling with respect to its own marginals.
    """
    from .core import JointDistribution
    from scipy.special import xlogy

    w = as_weights(p)
    s_m = as_matrix(s)
    d_m = as_matrix(d)
    q = w @ s_m
    active = dual.active_columns(q)
    log_q = dual._safe_log(q)
    gamma = np.zeros_like(s_m)
    log_g = (
        state.log_phi[:, None]
        - state.zeta * d_m[:, active]
        + (state.log_psi + log_q)[active][None, :]
    )
    gamma[:, active] = np.exp(log_g)
    gamma /= gamma.sum()
    r = gamma.sum(axis=1)
    c = gamma.sum(axis=0)
    rate = float(xlogy(gamma, gamma).sum() - xlogy(r, r).sum() - xlogy(c, c).sum())
    return JointDistribution(gamma), rate


def solve_clm(s, d, powers, config: SolverConfig | None = None) -> SolveReport:
    """Input-optimized rate under the average power budget in config.

    Requires min(powers) <= power_budget when the budget is finite, since
    no input distribution can otherwise satisfy the constraint.
    """
    config = config or SolverConfig()
    s_m = as_matrix(s)
    powers = np.asarray(powers, dtype=float)
    if powers.shape != (s_m.shape[0],):
        raise ValueError("powers must have one entry per channel input")
    budget = config.power_budget
    if budget is not None and not np.isinf(budget) and powers.min() > budget:
        raise ValueError(
            f"power budget {budget} is below the smallest point power {powers.min():.6g}"
        )
    p0 = np.full(s_m.shape[0], 1.0 / s_m.shape[0])
    return _run(s_m, as_matrix(d), powers, p0, config, optimize_input=True)


def solve_lm_fixed_input(p, s, d, config: SolverConfig | None = None) -> SolveReport:
    """Rate of a fixed input distribution (dual ascent over the scalings and
    the metric multiplier only).

    The power multiplier never acts on a frozen input, so it stays at zero
    and its residual is reported as zero.
    """
    config = config or SolverConfig()
    s_m = as_matrix(s)
    w = as_weights(p)
    if isinstance(p, ProbabilityVector):
        pass
    else:
        ProbabilityVector(w)  # validate
    if w.size != s_m.shape[0]:
        raise ValueError("input distribution does not match the channel input size")
    return _run(s_m, as_matrix(d), np.zeros(w.size), w.copy(), config, optimize_input=False)


def _run(s, d, powers, p0, config, optimize_input: bool) -> SolveReport:
    m, n = s.shape
    if d.shape != (m, n):
        raise ValueError(f"metric shape {d.shape} does not match channel shape {(m, n)}")
    sd = s * d
    log_d = dual._safe_log(d)
    budget = config.power_budget if optimize_input else None
    record = config.record_trajectory

    state = dual.initial_state(m, n)
    if not optimize_input:
        state.lam = 0.0  # the power multiplier never acts on a frozen input
    p = p0
    q = p @ s
    active = dual.active_columns(q)
    log_q = dual._safe_log(q)
    sd_rowsum = sd[:, active].sum(axis=1)
    log_t = dual.log_T(state, s, d, active=active, sd_rowsum=sd_rowsum)

    objective = [_objective(p, log_t)]
    residual_rows: list[tuple[float, float, float, float]] = []
    termination = TERM_MAX_ITER
    iterations = 0
    diagnostic = ""

    try:
        for it in range(1, config.max_iter + 1):
            iterations = it
            if optimize_input:
                r_lam = _lambda_residual(state.lam, log_t, powers, budget) if record else 0.0
                pv, state.lam = dual.update_p(log_t, powers, budget, lam0=state.lam)
                p = pv.weights
                q = p @ s
                active = dual.active_columns(q)
                log_q = dual._safe_log(q)
                sd_rowsum = sd[:, active].sum(axis=1)
            else:
                r_lam = 0.0

            dsp = float(p @ sd_rowsum)

            new_log_phi, denom = dual._phi_update(
                p, state.log_psi, state.zeta, s, d, log_q=log_q, active=active
            )
            if record:
                r_phi = float(np.abs(np.exp(state.log_phi + denom) - p).sum())
            state.log_phi = new_log_phi

            new_log_psi, col = dual._psi_update(state.log_phi, state.zeta, d)
            if record:
                q_act = np.exp(log_q[active])
                r_psi = float(
                    (np.abs(np.exp(state.log_psi[active] + col[active]) - 1.0) * q_act).sum()
                )
            state.log_psi = new_log_psi

            if record:
                r_zeta = _zeta_residual(
                    state.zeta, state.log_phi, state.log_psi, p, s, d,
                    log_q=log_q, active=active, log_d=log_d, dsp=dsp,
                )
                residual_rows.append((r_phi, r_psi, r_zeta, r_lam))
            state.zeta = dual.solve_zeta(
                state.log_phi, state.log_psi, p, s, d,
                zeta0=state.zeta, log_q=log_q, active=active, log_d=log_d, dsp=dsp,
            )

            col_new = dual._column_lse(state.log_phi, state.zeta, d[:, active])
            log_t = dual.log_T(
                state, s, d, active=active, sd_rowsum=sd_rowsum, col_lse=col_new
            )
            rate = _objective(p, log_t)
            objective.append(rate)
            if abs(rate - objective[-2]) < config.rate_tol:
                termination = TERM_RATE_TOL
                break
    except NumericalFailure as exc:
        termination = TERM_FAILURE
        diagnostic = str(exc)

    pv = ProbabilityVector(p)
    try:
        final = residuals(state, pv, s, d, budget, powers, log_q=log_q, active=active)
    except NumericalFailure as exc:
        final = (np.nan, np.nan, np.nan, np.nan)
        if not diagnostic:
            diagnostic = f"residual evaluation failed: {exc}"

    return SolveReport(
        rate=objective[-1],
        input_distribution=pv,
        dual_state=state,
        iterations=iterations,
        termination=termination,
        residual_trajectory=np.array(residual_rows, dtype=float).reshape(-1, 4),
        objective_trajectory=np.asarray(objective, dtype=float),
        final_residuals=final,
        diagnostic=diagnostic,
    )
