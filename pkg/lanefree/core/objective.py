"""
Stage costs of the trajectory planning problem and their analytic partials.

All functions work on whole horizons at once: ego states (K, 4), controls
(K, 2) and obstacle samples stacked as (N, K, 4).
"""

from dataclasses import dataclass

import numpy as np

from lanefree.core.classes import (
    EllipsoidParams,
    ObstaclePrediction,
    Plan,
    SpeedTargets,
    VehicleState,
    Weights,
)
from lanefree.core.errors import HorizonMismatch

TANH_CLAMP = 40.0


@dataclass(eq=False)
class ObstacleStack:
    """Obstacle predictions stacked for vectorised evaluation"""

    ids: list[int]
    lengths: np.ndarray  # (N,)
    widths: np.ndarray  # (N,)
    traj: np.ndarray  # (N, K, 4)

    @property
    def n(self) -> int:
        return len(self.ids)

    @classmethod
    def from_predictions(
        cls, obstacles: list[ObstaclePrediction], horizon: int
    ) -> "ObstacleStack":
        for obs in obstacles:
            if obs.n_samples < horizon:
                raise HorizonMismatch(
                    f"Obstacle {obs.id} has {obs.n_samples} samples, horizon is {horizon}"
                )
        if not obstacles:
            return cls([], np.zeros(0), np.zeros(0), np.zeros((0, horizon, 4)))
        return cls(
            ids=[obs.id for obs in obstacles],
            lengths=np.array([obs.length for obs in obstacles], dtype=float),
            widths=np.array([obs.width for obs in obstacles], dtype=float),
            traj=np.stack([obs.traj[:horizon] for obs in obstacles]).astype(float),
        )

    def select(self, keep: np.ndarray) -> "ObstacleStack":
        """The obstacles where keep (N,) is True"""
        keep = np.asarray(keep, dtype=bool)
        return ObstacleStack(
            ids=[i for i, k in zip(self.ids, keep, strict=True) if k],
            lengths=self.lengths[keep],
            widths=self.widths[keep],
            traj=self.traj[keep],
        )


def ellipsoid_center(o1, x3, o3, omega1: float):
    return o1 - omega1 * (x3 - o3) / 2


def axis_lengths(
    ego_length,
    ego_width,
    obs_length,
    obs_width,
    x2,
    x4,
    o2,
    o4,
    x3,
    o3,
    p: EllipsoidParams,
):
    """
    (d1, d2) of the obstacle ellipsoid.
    d1 grows with both speeds, d2 with the lateral approach rate
    """
    d1 = p.mu_x * (ego_length + obs_length) + p.omega1 * x3 + p.omega1 * o3
    a = np.tanh(o2 - x2) * (x4 - o4)
    d2 = p.mu_y * (ego_width + obs_width) + p.omega2 * (a + np.sqrt(a * a + p.eps_w))
    return d1, d2


def power(x: np.ndarray, n) -> np.ndarray:
    """x**n, by repeated squaring when n is a small non-negative integer"""
    if n < 0 or n != int(n) or n > 64:
        return x**n
    n = int(n)
    if n == 0:
        return np.ones_like(x)
    result = None
    base = x
    while True:
        if n & 1:
            result = base if result is None else result * base
        n >>= 1
        if not n:
            return result  # type: ignore
        base = base * base


@dataclass(eq=False)
class EllipsoidCache:
    """Intermediate arrays of ellipsoid_values, reused by ellipsoid_gradient"""

    big_x: np.ndarray
    big_y: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    th: np.ndarray
    a: np.ndarray
    sq: np.ndarray
    dx4: np.ndarray  # x4 - o4
    tanh_s: np.ndarray
    saturated: np.ndarray
    q: np.ndarray
    r: np.ndarray
    inner: np.ndarray


def ellipsoid_values(
    xs: np.ndarray,
    samples: np.ndarray,
    lengths: np.ndarray,
    widths: np.ndarray,
    ego_length: float,
    ego_width: float,
    p: EllipsoidParams,
) -> tuple[np.ndarray, EllipsoidCache]:
    """
    Obstacle potentials c (N, M) for ego states xs (M, 4) against obstacle
    samples (N, M, 4)
    """
    x1, x2, x3, x4 = (xs[None, :, i] for i in range(4))
    o1, o2, o3, o4 = (samples[..., i] for i in range(4))
    lo = lengths[:, None]
    wo = widths[:, None]

    delta = ellipsoid_center(o1, x3, o3, p.omega1)
    d1 = p.mu_x * (ego_length + lo) + p.omega1 * x3 + p.omega1 * o3
    th = np.tanh(o2 - x2)
    dx4 = x4 - o4
    a = th * dx4
    sq = np.sqrt(a * a + p.eps_w)
    d2 = p.mu_y * (ego_width + wo) + p.omega2 * (a + sq)

    big_x = 2 * (x1 - delta) / d1
    big_y = 2 * (x2 - o2) / d2

    with np.errstate(over="ignore", invalid="ignore"):
        s = power(big_x, p.p1) + power(big_y, p.p2)
        saturated = ~(s < TANH_CLAMP)
        tanh_s = np.tanh(np.minimum(s, TANH_CLAMP))
        q = power(2 * big_x, p.p3) + power(2 * big_y, p.p4)
        r = power(q, p.p5)
        inner = 1.0 / (r + 1.0)
    cost = (1.0 - tanh_s) + inner
    return cost, EllipsoidCache(
        big_x, big_y, d1, d2, th, a, sq, dx4, tanh_s, saturated, q, r, inner
    )


def ellipsoid_gradient(cache: EllipsoidCache, p: EllipsoidParams) -> np.ndarray:
    """Gradients (N, M, 4) of the potentials w.r.t. the ego state"""
    c = cache
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        dt1_ds = np.where(c.saturated, 0.0, -(1.0 - c.tanh_s * c.tanh_s))
        live = np.isfinite(c.r) & (c.q > 0)
        dt2_dq = np.where(live, -p.p5 * power(c.q, p.p5 - 1) * c.inner * c.inner, 0.0)

        dc_dx = np.where(
            c.saturated, 0.0, dt1_ds * p.p1 * power(c.big_x, p.p1 - 1)
        ) + np.where(live, dt2_dq * 2 * p.p3 * power(2 * c.big_x, p.p3 - 1), 0.0)
        dc_dy = np.where(
            c.saturated, 0.0, dt1_ds * p.p2 * power(c.big_y, p.p2 - 1)
        ) + np.where(live, dt2_dq * 2 * p.p4 * power(2 * c.big_y, p.p4 - 1), 0.0)

    # Chain rule through delta, d1 (depend on x3) and d2 (depends on x2, x4)
    dx_dx1 = 2 / c.d1
    dx_dx3 = (p.omega1 / c.d1) * (1 - c.big_x)
    dd2_da = p.omega2 * (1 + c.a / c.sq)
    dd2_dx2 = dd2_da * (-(1 - c.th * c.th) * c.dx4)
    dd2_dx4 = dd2_da * c.th
    dy_dx2 = (2 - c.big_y * dd2_dx2) / c.d2
    dy_dx4 = -(c.big_y / c.d2) * dd2_dx4

    grad = np.empty(c.big_x.shape + (4,))
    grad[..., 0] = dc_dx * dx_dx1
    grad[..., 1] = dc_dy * dy_dx2
    grad[..., 2] = dc_dx * dx_dx3
    grad[..., 3] = dc_dy * dy_dx4
    return grad


def ellipsoid_terms(
    xs: np.ndarray,
    samples: np.ndarray,
    lengths: np.ndarray,
    widths: np.ndarray,
    ego_length: float,
    ego_width: float,
    p: EllipsoidParams,
    need_grad: bool = True,
) -> tuple[np.ndarray, np.ndarray | None]:
    """
    Obstacle potentials c (N, M) for ego states xs (M, 4) against obstacle
    samples (N, M, 4), and their gradients (N, M, 4) w.r.t. the ego state
    """
    cost, cache = ellipsoid_values(xs, samples, lengths, widths, ego_length, ego_width, p)
    if not need_grad:
        return cost, None
    return cost, ellipsoid_gradient(cache, p)


def obstacle_cost(
    x: VehicleState,
    o,
    p: EllipsoidParams,
    ego_length: float,
    ego_width: float,
    obs_length: float,
    obs_width: float,
) -> float:
    """Potential of one obstacle sample o = (o1, o2, o3, o4) at ego state x"""
    cost, _ = ellipsoid_terms(
        x.as_array()[None, :],
        np.asarray(o, dtype=float).reshape(1, 1, 4),
        np.array([obs_length]),
        np.array([obs_width]),
        ego_length,
        ego_width,
        p,
        need_grad=False,
    )
    return float(cost[0, 0])


def coupling_cost(x3, x4, beta: float):
    """Penalises lateral speed outside the cone |x4| <= beta*x3"""
    excess = np.abs(x4) - beta * x3
    return np.where(excess > 0, excess * excess, 0.0)


def deviation_cost(u1_first: float, u1_prev: float) -> float:
    return (u1_first - u1_prev) ** 2


def potential_bound(x_min: np.ndarray, p: EllipsoidParams) -> np.ndarray:
    """
    Upper bound on the potential wherever |X| >= x_min. The Y terms only add
    to s and q (even exponents), so dropping them bounds both parts
    """
    x_min = np.asarray(x_min, dtype=float)
    with np.errstate(over="ignore"):
        first = 1.0 - np.tanh(np.minimum(power(x_min, p.p1), TANH_CLAMP))
        second = 1.0 / (power(power(2 * x_min, p.p3), p.p5) + 1.0)
    return first + second


def prune_stack(
    stack: ObstacleStack,
    x1_range: tuple[np.ndarray, np.ndarray],
    x3_range: tuple[np.ndarray, np.ndarray],
    ego_length: float,
    p: EllipsoidParams,
    w5: float,
    tol: float,
) -> ObstacleStack:
    """
    Drops obstacles whose weighted potential is below tol at every step for
    any ego state inside the reach envelope (x1_range, x3_range), each a pair
    of (K,) arrays. Gradient tails decay one power of X faster than the
    potential, so they are negligible too
    """
    if not stack.n or tol <= 0:
        return stack
    horizon = x1_range[0].shape[0]
    traj = stack.traj[:, :horizon]
    o1 = traj[..., 0]
    o3 = traj[..., 2]
    x1_lo, x1_hi = (b[None, :] for b in x1_range)
    x3_lo, x3_hi = (b[None, :] for b in x3_range)

    # delta decreases in x3, d1 increases in x3
    delta_lo = ellipsoid_center(o1, x3_hi, o3, p.omega1)
    delta_hi = ellipsoid_center(o1, x3_lo, o3, p.omega1)
    d1_max = p.mu_x * (ego_length + stack.lengths[:, None]) + p.omega1 * (x3_hi + o3)
    gap = np.maximum(0.0, np.maximum(delta_lo - x1_hi, x1_lo - delta_hi))
    bound = w5 * potential_bound(2 * gap / d1_max, p)
    keep = np.max(bound, axis=1) >= tol
    return stack.select(keep)


@dataclass(eq=False)
class StageTerms:
    """
    Stage costs of one trajectory. Keeps what the partials need so a line
    search trial that is accepted does not have to be evaluated again
    """

    total: float
    states: np.ndarray
    controls: np.ndarray
    excess: np.ndarray
    active: np.ndarray
    ellipsoid: EllipsoidCache | None
    w: Weights
    t: SpeedTargets
    p: EllipsoidParams
    beta: float
    u1_prev: float


def stage_terms(
    states: np.ndarray,
    controls: np.ndarray,
    stack: ObstacleStack,
    w: Weights,
    t: SpeedTargets,
    p: EllipsoidParams,
    beta: float,
    u1_prev: float,
    ego_length: float,
    ego_width: float,
) -> StageTerms:
    """Total cost J; stage k uses states[k] for k = 0..K-1"""
    horizon = controls.shape[0]
    if stack.traj.shape[1] < horizon:
        raise HorizonMismatch(
            f"Obstacle samples cover {stack.traj.shape[1]} steps, horizon is {horizon}"
        )
    xs = states[:horizon]
    x3 = xs[:, 2]
    x4 = xs[:, 3]
    u1 = controls[:, 0]
    u2 = controls[:, 1]

    excess = np.abs(x4) - beta * x3
    active = excess > 0
    f_c = np.where(active, excess * excess, 0.0)

    stage = (
        w.w1 * u1 * u1
        + w.w2 * u2 * u2
        + w.w3 * (x3 - t.vd1) ** 2
        + w.w4 * (x4 - t.vd2) ** 2
        + w.w6 * f_c
    )

    cache = None
    if stack.n:
        c, cache = ellipsoid_values(
            xs,
            stack.traj[:, :horizon],
            stack.lengths,
            stack.widths,
            ego_length,
            ego_width,
            p,
        )
        stage = stage + w.w5 * c.sum(axis=0)

    total = float(stage.sum() + w.w7 * (u1[0] - u1_prev) ** 2)
    return StageTerms(total, states, controls, excess, active, cache, w, t, p, beta, u1_prev)


def stage_partials(terms: StageTerms) -> tuple[np.ndarray, np.ndarray]:
    """Stage partials dPhi/dx (K, 4) and dPhi/du (K, 2)"""
    w, t, beta = terms.w, terms.t, terms.beta
    controls = terms.controls
    horizon = controls.shape[0]
    xs = terms.states[:horizon]
    x3 = xs[:, 2]
    x4 = xs[:, 3]
    u1 = controls[:, 0]
    u2 = controls[:, 1]
    excess, active = terms.excess, terms.active

    dx = np.zeros((horizon, 4))
    dx[:, 2] = 2 * w.w3 * (x3 - t.vd1) - 2 * w.w6 * beta * np.where(active, excess, 0.0)
    # sign(0) = 0 is the subgradient used at x4 = 0
    dx[:, 3] = 2 * w.w4 * (x4 - t.vd2) + 2 * w.w6 * np.where(
        active, excess * np.sign(x4), 0.0
    )
    if terms.ellipsoid is not None:
        dx += w.w5 * ellipsoid_gradient(terms.ellipsoid, terms.p).sum(axis=0)

    du = np.empty((horizon, 2))
    du[:, 0] = 2 * w.w1 * u1
    du[:, 1] = 2 * w.w2 * u2
    du[0, 0] += 2 * w.w7 * (u1[0] - terms.u1_prev)
    return dx, du


def evaluate(
    states: np.ndarray,
    controls: np.ndarray,
    stack: ObstacleStack,
    w: Weights,
    t: SpeedTargets,
    p: EllipsoidParams,
    beta: float,
    u1_prev: float,
    ego_length: float,
    ego_width: float,
    need_grad: bool = True,
) -> tuple[float, np.ndarray | None, np.ndarray | None]:
    """
    Total cost J and, if need_grad, the stage partials dPhi/dx (K, 4) and
    dPhi/du (K, 2). Stage k uses states[k] for k = 0..K-1
    """
    terms = stage_terms(
        states, controls, stack, w, t, p, beta, u1_prev, ego_length, ego_width
    )
    if not need_grad:
        return terms.total, None, None
    dx, du = stage_partials(terms)
    return terms.total, dx, du


def total_cost(
    plan: Plan,
    obstacles: list[ObstaclePrediction],
    w: Weights,
    t: SpeedTargets,
    p: EllipsoidParams,
    beta: float,
    u1_prev: float,
    *,
    ego_length: float,
    ego_width: float,
) -> float:
    stack = ObstacleStack.from_predictions(obstacles, plan.horizon)
    total, _, _ = evaluate(
        plan.states,
        plan.controls,
        stack,
        w,
        t,
        p,
        beta,
        u1_prev,
        ego_length,
        ego_width,
        need_grad=False,
    )
    return total


def stage_gradients(
    k: int,
    plan: Plan,
    obstacles: list[ObstaclePrediction],
    w: Weights,
    t: SpeedTargets,
    p: EllipsoidParams,
    beta: float,
    u1_prev: float,
    *,
    ego_length: float,
    ego_width: float,
) -> tuple[np.ndarray, np.ndarray]:
    """(dPhi/dx(k), dPhi/du(k)) for a single stage"""
    if not 0 <= k < plan.horizon:
        raise IndexError(f"Stage {k} outside horizon {plan.horizon}")
    stack = ObstacleStack.from_predictions(obstacles, plan.horizon)
    _, dx, du = evaluate(
        plan.states,
        plan.controls,
        stack,
        w,
        t,
        p,
        beta,
        u1_prev,
        ego_length,
        ego_width,
    )
    return dx[k], du[k]  # type: ignore


def cost_field(
    grid_x1: np.ndarray,
    grid_x2: np.ndarray,
    ego: VehicleState,
    obstacles: list[ObstaclePrediction],
    p: EllipsoidParams,
    ego_length: float,
    ego_width: float,
) -> tuple[np.ndarray, list[dict]]:
    """
    Summed obstacle potential seen by the ego (speeds held at ego.x3, ego.x4)
    on a grid, shape (len(grid_x2), len(grid_x1)), using each obstacle's
    first sample. Also returns each obstacle's ellipsoid box
    (delta, o2, d1, d2) evaluated at the ego's actual state
    """
    mesh_x1, mesh_x2 = np.meshgrid(grid_x1, grid_x2)
    m = mesh_x1.size
    xs = np.empty((m, 4))
    xs[:, 0] = mesh_x1.ravel()
    xs[:, 1] = mesh_x2.ravel()
    xs[:, 2] = ego.x3
    xs[:, 3] = ego.x4

    field = np.zeros(m)
    boxes = []
    for obs in obstacles:
        sample = obs.traj[0]
        c, _ = ellipsoid_terms(
            xs,
            np.broadcast_to(sample, (1, m, 4)),
            np.array([obs.length]),
            np.array([obs.width]),
            ego_length,
            ego_width,
            p,
            need_grad=False,
        )
        field += c[0]
        d1, d2 = axis_lengths(
            ego_length,
            ego_width,
            obs.length,
            obs.width,
            ego.x2,
            ego.x4,
            sample[1],
            sample[3],
            ego.x3,
            sample[2],
            p,
        )
        boxes.append(
            {
                "id": obs.id,
                "delta": float(ellipsoid_center(sample[0], ego.x3, sample[2], p.omega1)),
                "o2": float(sample[1]),
                "d1": float(d1),
                "d2": float(d2),
            }
        )
    return field.reshape(mesh_x1.shape), boxes
