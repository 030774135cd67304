"""
Feasible direction algorithm for the planning problem.

Every iterate is feasible: candidate controls are projected forward in
time, u(k) clamped into the box induced by the already updated x(k), so the
state-dependent constraints hold at every step. Directions are Polak-Ribiere
(PR+) on the projected reduced gradient, obtained from a backward costate
sweep.
"""

import logging
import math
import time

import numpy as np

from lanefree.core.classes import Plan
from lanefree.core.dynamics import reach_envelope, rollout_array
from lanefree.core.errors import NonFiniteCost
from lanefree.core.objective import (
    ObstacleStack,
    StageTerms,
    prune_stack,
    stage_partials,
    stage_terms,
)
from lanefree.solver.classes import (
    OcpSpec,
    SolverReport,
    SolverSettings,
    SolverWorkspace,
    StopReason,
)

logger = logging.getLogger(__name__)

BOUND_TOL = 1e-9


def _track_columns(spec: OcpSpec) -> tuple[list[float], list[float], list[float]] | None:
    track = spec.bounds.boundary_track
    if track is None:
        return None
    track = track[: spec.horizon]
    return (
        [m.x1_hat for m in track],
        [m.x3_hat for m in track],
        [m.u1_hat for m in track],
    )


def project_controls(
    controls: np.ndarray, spec: OcpSpec
) -> tuple[np.ndarray, np.ndarray, int]:
    """
    Forward-sequential projection.
    Returns (projected controls, states, number of steps with an empty box).
    The box of step k depends on the projected u(k-1), so the clamp runs as a
    scalar loop; it matches bounds.box_values and bounds.clamp_values
    operation for operation
    """
    dt = spec.dt
    half_dt2 = 0.5 * dt * dt
    b = spec.bounds
    u_min1, u_max1 = b.u_min1, b.u_max1
    k_long1, k_long2 = b.gains.k_long1, b.gains.k_long2
    k_lat1, k_lat2 = b.gains.k_lat1, b.gains.k_lat2
    right, left = b.corridor.x2_right, b.corridor.x2_left
    track = _track_columns(spec)

    x1, x2, x3, x4 = spec.x0.x1, spec.x0.x2, spec.x0.x3, spec.x0.x4
    out = []
    states = [(x1, x2, x3, x4)]
    n_empty = 0
    for k, (u1, u2) in enumerate(controls[: spec.horizon].tolist()):
        lo1 = max(-x3 / dt, u_min1)
        hi1 = u_max1
        if track is not None:
            hi1 = min(
                hi1,
                -k_long1 * (x1 - track[0][k]) - k_long2 * (x3 - track[1][k]) + track[2][k],
            )
        lo2 = -k_lat1 * (x2 - right) - k_lat2 * x4
        hi2 = -k_lat1 * (x2 - left) - k_lat2 * x4

        empty = False
        if hi1 < lo1:
            empty = True
            u1 = lo1
        else:
            u1 = min(max(u1, lo1), hi1)
        if hi2 < lo2:
            empty = True
            u2 = 0.5 * (lo2 + hi2)
        else:
            u2 = min(max(u2, lo2), hi2)
        n_empty += empty
        out.append((u1, u2))
        # Same evaluation order as dynamics.step_array
        x1, x2, x3, x4 = (
            x1 + dt * x3 + half_dt2 * u1,
            x2 + dt * x4 + half_dt2 * u2,
            x3 + dt * u1,
            x4 + dt * u2,
        )
        states.append((x1, x2, x3, x4))
    return np.array(out, dtype=float).reshape(-1, 2), np.array(states, dtype=float), n_empty


def state_boxes(states: np.ndarray, spec: OcpSpec) -> np.ndarray:
    """(K, 4) boxes lo1, hi1, lo2, hi2 induced by states[0..K-1]"""
    b = spec.bounds
    g = b.gains
    xs = states[: spec.horizon]
    x1, x2, x3, x4 = xs[:, 0], xs[:, 1], xs[:, 2], xs[:, 3]

    boxes = np.empty((spec.horizon, 4))
    boxes[:, 0] = np.maximum(-x3 / spec.dt, b.u_min1)
    boxes[:, 1] = b.u_max1
    track = _track_columns(spec)
    if track is not None:
        x1_hat, x3_hat, u1_hat = (np.array(column) for column in track)
        boxes[:, 1] = np.minimum(
            b.u_max1, -g.k_long1 * (x1 - x1_hat) - g.k_long2 * (x3 - x3_hat) + u1_hat
        )
    boxes[:, 2] = -g.k_lat1 * (x2 - b.corridor.x2_right) - g.k_lat2 * x4
    boxes[:, 3] = -g.k_lat1 * (x2 - b.corridor.x2_left) - g.k_lat2 * x4
    return boxes


def solver_stack(spec: OcpSpec, prune_tol: float = 0.0) -> ObstacleStack:
    """
    The obstacle stack a solve works on: obstacles that stay negligible
    for every reachable ego state are left out
    """
    stack = ObstacleStack.from_predictions(spec.obstacles, spec.horizon)
    if prune_tol <= 0 or not stack.n:
        return stack
    x1_range, x3_range = reach_envelope(
        spec.x0, spec.horizon, spec.dt, spec.bounds.u_min1, spec.bounds.u_max1
    )
    pruned = prune_stack(
        stack, x1_range, x3_range, spec.ego_length, spec.ellipsoid, spec.weights.w5, prune_tol
    )
    if pruned.n < stack.n:
        logger.debug(
            f"Plan at t={spec.t0:.2f}: {stack.n - pruned.n} of {stack.n} obstacles negligible"
        )
    return pruned


def pinned_mask(controls: np.ndarray, gradient: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Components sitting on a bound with the gradient pointing outward"""
    lo = boxes[:, [0, 2]]
    hi = boxes[:, [1, 3]]
    at_lo = controls <= lo + BOUND_TOL * np.maximum(1.0, np.abs(lo))
    at_hi = controls >= hi - BOUND_TOL * np.maximum(1.0, np.abs(hi))
    return (at_lo & (gradient > 0)) | (at_hi & (gradient < 0))


def projected_gradient(
    controls: np.ndarray, gradient: np.ndarray, boxes: np.ndarray
) -> np.ndarray:
    """The reduced gradient with pinned components zeroed"""
    return np.where(pinned_mask(controls, gradient, boxes), 0.0, gradient)


def _terms(
    controls: np.ndarray, states: np.ndarray, spec: OcpSpec, stack: ObstacleStack
) -> StageTerms:
    return stage_terms(
        states,
        controls,
        stack,
        spec.weights,
        spec.targets,
        spec.ellipsoid,
        spec.beta,
        spec.u1_prev,
        spec.ego_length,
        spec.ego_width,
    )


def costate_sweep(
    ws: SolverWorkspace, spec: OcpSpec, stack: ObstacleStack | None = None
) -> np.ndarray:
    """
    Backward sweep lambda(K) = 0, lambda(k) = dPhi/dx(k) + A^T lambda(k+1).
    Also refreshes ws.cost and ws.dphi_du. Stage terms left in ws by the
    line search are reused when they belong to ws.controls
    """
    terms = ws.terms
    if terms is None or terms.controls is not ws.controls:
        if stack is None:
            stack = ObstacleStack.from_predictions(spec.obstacles, spec.horizon)
        terms = _terms(ws.controls, ws.states, spec, stack)
    dx, du = stage_partials(terms)

    lam = ws.costates
    lam[spec.horizon] = 0.0
    # lambda1,2 sum dPhi/dx1,2 over the remaining steps; lambda3,4 also
    # collect dt * lambda1,2(k+1)
    lam[:-1, :2] = np.cumsum(dx[::-1, :2], axis=0)[::-1]
    lam[:-1, 2:] = np.cumsum((dx[:, 2:] + spec.dt * lam[1:, :2])[::-1], axis=0)[::-1]
    ws.cost = terms.total
    ws.dphi_du = du
    ws.terms = terms
    return lam


def reduced_gradient(ws: SolverWorkspace, spec: OcpSpec) -> np.ndarray:
    """g(k) = B^T lambda(k+1) + dPhi/du(k)"""
    dt = spec.dt
    half_dt2 = 0.5 * dt * dt
    nxt = ws.costates[1:]
    g = np.empty((spec.horizon, 2))
    g[:, 0] = half_dt2 * nxt[:, 0] + dt * nxt[:, 2] + ws.dphi_du[:, 0]
    g[:, 1] = half_dt2 * nxt[:, 1] + dt * nxt[:, 3] + ws.dphi_du[:, 1]
    ws.gradient = g
    return g


def search_direction(
    g: np.ndarray,
    g_prev: np.ndarray | None,
    d_prev: np.ndarray | None,
    restart: bool,
) -> np.ndarray:
    """
    Polak-Ribiere with non-negative beta:
    d = -g + max(0, <g, g - g_prev> / <g_prev, g_prev>) * d_prev
    """
    if restart or g_prev is None or d_prev is None:
        return -g
    denom = float(np.vdot(g_prev, g_prev))
    if denom == 0.0:
        return -g
    beta = max(0.0, float(np.vdot(g, g - g_prev)) / denom)
    d = -g + beta * d_prev
    if float(np.vdot(d, g)) >= 0.0:
        return -g
    return d


def projected_line_search(
    ws: SolverWorkspace,
    d: np.ndarray,
    spec: OcpSpec,
    settings: SolverSettings | None = None,
    stack: ObstacleStack | None = None,
) -> float:
    """
    Backtracking on alpha with forward projection of u + alpha*d.
    Accepts J(alpha) <= J0 + c*<g, U(alpha) - U> with J(alpha) < J0 and
    updates ws in place, keeping the accepted trial's stage terms for the
    next costate sweep. Returns the accepted alpha, 0.0 if none down to
    alpha_min decreases J
    """
    if settings is None:
        settings = SolverSettings()
    if stack is None:
        stack = ObstacleStack.from_predictions(spec.obstacles, spec.horizon)

    d_max = float(np.max(np.abs(d))) if d.size else 0.0
    if d_max == 0.0:
        return 0.0

    if ws.alpha_prev is None:
        alpha = 1.0 / d_max
    else:
        alpha = 2.0 * ws.alpha_prev

    j0 = ws.cost
    while alpha >= settings.alpha_min:
        candidate, states, _ = project_controls(ws.controls + alpha * d, spec)
        terms = _terms(candidate, states, spec, stack)
        j = terms.total
        decrease = float(np.vdot(ws.gradient, candidate - ws.controls))
        if j < j0 and j <= j0 + settings.armijo_c * decrease:
            ws.controls = candidate
            ws.states = states
            ws.cost = j
            ws.terms = terms
            ws.alpha_prev = alpha
            return alpha
        alpha *= 0.5
    return 0.0


def check_feasible(plan: Plan, spec: OcpSpec, tol: float = 1e-9) -> bool:
    """
    True if plan.states is the rollout of plan.controls from spec.x0 and every
    control lies inside the box of its state (empty boxes: u1 at the lower bound)
    """
    if plan.horizon != spec.horizon:
        return False
    expected = rollout_array(spec.x0.as_array(), plan.controls, spec.dt)
    if not np.allclose(plan.states, expected, rtol=0.0, atol=tol * 1e3):
        return False
    boxes = state_boxes(plan.states, spec)
    for k in range(spec.horizon):
        lo1, hi1, lo2, hi2 = boxes[k]
        u1, u2 = plan.controls[k]
        if hi1 < lo1:
            if abs(u1 - lo1) > tol * max(1.0, abs(lo1)):
                return False
        elif not lo1 - tol * max(1.0, abs(lo1)) <= u1 <= hi1 + tol * max(1.0, abs(hi1)):
            return False
        if not lo2 - tol * max(1.0, abs(lo2)) <= u2 <= hi2 + tol * max(1.0, abs(hi2)):
            return False
    return True


def solve(
    spec: OcpSpec,
    initial_guess: np.ndarray | None = None,
    settings: SolverSettings | None = None,
) -> tuple[Plan, SolverReport]:
    """
    Anytime solve: the returned plan is feasible whenever it stops.
    The reported cost leaves out obstacles pruned by settings.prune_tol
    """
    if settings is None:
        settings = SolverSettings()
    start = time.perf_counter()
    stack = solver_stack(spec, settings.prune_tol)

    ws = SolverWorkspace.empty(spec.horizon)
    guess = (
        np.zeros((spec.horizon, 2))
        if initial_guess is None
        else np.asarray(initial_guess, dtype=float).reshape(spec.horizon, 2)
    )
    ws.controls, ws.states, _ = project_controls(guess, spec)

    costate_sweep(ws, spec, stack)
    if not math.isfinite(ws.cost):
        raise NonFiniteCost(f"Objective is {ws.cost} at the initial guess")
    reduced_gradient(ws, spec)
    ws.history.append(ws.cost)

    stop_reason = StopReason.ITERATION_CAP
    grad_norm = float("inf")
    while True:
        boxes = state_boxes(ws.states, spec)
        pinned = pinned_mask(ws.controls, ws.gradient, boxes)
        free_gradient = np.where(pinned, 0.0, ws.gradient)
        grad_norm = float(np.max(np.abs(free_gradient)))

        if grad_norm < settings.tol:
            stop_reason = StopReason.GRADIENT_TOL
            break
        if ws.iteration >= settings.max_iter:
            stop_reason = StopReason.ITERATION_CAP
            break
        if (
            settings.time_budget is not None
            and time.perf_counter() - start >= settings.time_budget
        ):
            stop_reason = StopReason.TIME_BUDGET
            break

        restart = ws.prev_pinned is None or not np.array_equal(pinned, ws.prev_pinned)
        d = search_direction(free_gradient, ws.prev_gradient, ws.prev_direction, restart)
        d = np.where(pinned, 0.0, d)

        alpha = projected_line_search(ws, d, spec, settings, stack)
        if alpha == 0.0 and ws.prev_direction is not None and not restart:
            # Conjugate step failed, retry once along steepest descent
            d = -free_gradient
            alpha = projected_line_search(ws, d, spec, settings, stack)
        if alpha == 0.0:
            stop_reason = StopReason.LINE_SEARCH_STALL
            break

        ws.iteration += 1
        ws.prev_gradient = free_gradient
        ws.prev_direction = d
        ws.prev_pinned = pinned
        costate_sweep(ws, spec, stack)
        reduced_gradient(ws, spec)
        ws.history.append(ws.cost)

    _, _, n_empty = project_controls(ws.controls, spec)
    if n_empty:
        logger.warning(
            f"Plan at t={spec.t0:.2f} has {n_empty} steps with an empty control box"
        )

    plan = Plan(t0=spec.t0, dt=spec.dt, controls=ws.controls, states=ws.states)
    report = SolverReport(
        converged=stop_reason in (StopReason.GRADIENT_TOL, StopReason.LINE_SEARCH_STALL),
        iterations=ws.iteration,
        cost=ws.cost,
        grad_norm=grad_norm,
        wall_time=time.perf_counter() - start,
        stop_reason=stop_reason,
        history=ws.history,
        empty_box_steps=n_empty,
    )
    return plan, report
