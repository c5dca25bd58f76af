"""Fairness-weighted matching-integrated vehicle rebalancing (MIVR).

The LP couples rebalancing flows ``x[k, i, j]`` (idle vehicles moved from
zone i to zone j in horizon step k, self-loops included) with matches
``y[k, i, j]`` (requests of zone i served by vehicles standing in zone j):

    min  sum x d_ij + alpha sum w_i y_ij d_ji + beta sum w_i (r_i - sum_j y_ij)

    sum_j x[k, i, j] = V[k, i]                      every idle vehicle is assigned
    sum_i y[k, i, j] <= P[k, j]                     matches use post-rebalance supply
    sum_j y[k, i, j] <= r[k, i]                     no more matches than demand
    V[k+1, j] = P[k, j] - sum_i y[k, i, j]          matched vehicles leave the pool

with P[k, j] = sum_i x[k, i, j] + incoming[k, j], where ``incoming`` (zero
unless given) counts busy vehicles expected to become idle in zone j during
step k.

Only the first step's flows are executed (rolling horizon).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .lp import LpProblem, LpSolution, solve_lp

METERS_PER_MILE = 1609.344


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class FleetState:
    """Idle vehicles per zone at decision time.

    ``incoming[k, j]`` optionally counts busy vehicles expected to turn idle
    in zone j during horizon step k; they join that step's supply.
    """

    idle: np.ndarray
    interval_index: int = 0
    incoming: np.ndarray | None = None

    def __post_init__(self):
        idle = np.asarray(self.idle, dtype=float)
        if np.any(idle < 0):
            raise PlanError("idle vehicle counts must be nonnegative")
        object.__setattr__(self, "idle", idle)
        if self.incoming is not None:
            inc = np.atleast_2d(np.asarray(self.incoming, dtype=float))
            if np.any(inc < 0) or inc.shape[1] != idle.size:
                raise PlanError("incoming vehicles must be a nonnegative (steps, zones) array")
            object.__setattr__(self, "incoming", inc)

    def incoming_supply(self, horizon: int) -> np.ndarray:
        out = np.zeros((horizon, self.idle.size))
        if self.incoming is not None:
            k = min(horizon, self.incoming.shape[0])
            out[:k] = self.incoming[:k]
        return out


@dataclass(frozen=True)
class MivrParams:
    distance: np.ndarray  # (n, n) miles
    weights: np.ndarray  # (n,) fairness weights
    alpha: float = 1.0
    beta: float = 100.0
    horizon: int = 6
    max_match_distance: float = math.inf  # miles; pairs farther apart cannot be matched

    def __post_init__(self):
        d = np.asarray(self.distance, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise PlanError("distance matrix must be square")
        if not np.allclose(d, d.T) or np.any(np.diag(d) != 0):
            raise PlanError("distance matrix must be symmetric with a zero diagonal")
        if w.shape != (d.shape[0],):
            raise PlanError("one fairness weight per zone is required")
        if self.alpha < 0 or self.beta < 0:
            raise PlanError("alpha and beta must be nonnegative")
        if self.horizon < 1:
            raise PlanError("horizon must be at least one interval")
        object.__setattr__(self, "distance", d)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.distance.shape[0]

    def with_weights(self, weights) -> "MivrParams":
        return MivrParams(self.distance, np.asarray(weights, dtype=float), self.alpha, self.beta, self.horizon,
                          self.max_match_distance)


@dataclass
class MivrLayout:
    """Index bookkeeping for the flattened (x, y) variable vector."""

    n: int
    horizon: int

    @property
    def block(self) -> int:
        return self.horizon * self.n * self.n

    def x(self, k, i, j) -> int:
        return (k * self.n + i) * self.n + j

    def y(self, k, i, j) -> int:
        return self.block + self.x(k, i, j)

    def split(self, v) -> tuple[np.ndarray, np.ndarray]:
        shape = (self.horizon, self.n, self.n)
        return v[: self.block].reshape(shape), v[self.block :].reshape(shape)


def build_mivr_lp(state: FleetState, forecast, params: MivrParams) -> tuple[LpProblem, MivrLayout]:
    r = np.atleast_2d(np.asarray(forecast, dtype=float))
    n, K = params.n, params.horizon
    if r.shape != (K, n):
        raise PlanError(f"forecast must have shape ({K}, {n}), got {r.shape}")
    if np.any(r < 0):
        raise PlanError("forecast demand must be nonnegative")
    if state.idle.shape != (n,):
        raise PlanError("idle vector does not match the zone count")
    lay = MivrLayout(n, K)
    nv = 2 * lay.block
    inc = state.incoming_supply(K)
    d, w = params.distance, params.weights

    c = np.empty(nv)
    c[: lay.block] = np.tile(d, (K, 1, 1)).ravel()
    match_cost = params.alpha * w[:, None] * d.T - params.beta * w[:, None]
    c[lay.block :] = np.tile(match_cost, (K, 1, 1)).ravel()
    constant = params.beta * float(np.sum(w[None, :] * r))

    eq_rows, eq_rhs, eq_names = [], [], []
    for k in range(K):
        for i in range(n):
            row = np.zeros(nv)
            for j in range(n):
                row[lay.x(k, i, j)] += 1.0
            if k > 0:
                for l in range(n):
                    row[lay.x(k - 1, l, i)] -= 1.0
                    row[lay.y(k - 1, l, i)] += 1.0
            eq_rows.append(row)
            eq_rhs.append(state.idle[i] if k == 0 else inc[k - 1, i])
            eq_names.append(f"supply_{k}_{i}")

    ub_rows, ub_rhs, ub_names = [], [], []
    for k in range(K):
        for j in range(n):
            row = np.zeros(nv)
            for i in range(n):
                row[lay.y(k, i, j)] += 1.0
                row[lay.x(k, i, j)] -= 1.0
            ub_rows.append(row)
            ub_rhs.append(inc[k, j])
            ub_names.append(f"vehicles_{k}_{j}")
        for i in range(n):
            row = np.zeros(nv)
            for j in range(n):
                row[lay.y(k, i, j)] = 1.0
            ub_rows.append(row)
            ub_rhs.append(r[k, i])
            ub_names.append(f"demand_{k}_{i}")
    far = np.argwhere(d.T > params.max_match_distance)
    for k in range(K):
        for i, j in far:
            row = np.zeros(nv)
            row[lay.y(k, i, j)] = 1.0
            ub_rows.append(row)
            ub_rhs.append(0.0)
            ub_names.append(f"nomatch_{k}_{i}_{j}")

    names = [f"x_{k}_{i}_{j}" for k in range(K) for i in range(n) for j in range(n)]
    names += [f"y_{k}_{i}_{j}" for k in range(K) for i in range(n) for j in range(n)]
    problem = LpProblem(c, np.array(ub_rows).reshape(-1, nv), np.array(ub_rhs), np.array(eq_rows), np.array(eq_rhs),
                        constant=constant, names=names, row_names=ub_names + eq_names)
    return problem, lay


@dataclass
class RebalancePlan:
    interval_index: int
    flows: np.ndarray  # (n, n) first-step moves, diagonal zeroed
    objective: float
    x: np.ndarray = field(repr=False)  # (K, n, n) full horizon, self-loops included
    y: np.ndarray = field(repr=False)
    solution: LpSolution | None = field(default=None, repr=False)

    def matched(self) -> float:
        return float(self.y.sum())

    def to_json(self, zone_ids=None) -> dict:
        ids = list(range(self.flows.shape[0])) if zone_ids is None else list(zone_ids)
        flows = [
            {"from": ids[i], "to": ids[j], "vehicles": float(self.flows[i, j])}
            for i, j in np.argwhere(self.flows > 1e-9)
        ]
        return {"interval_index": int(self.interval_index), "flows": flows, "objective": float(self.objective)}

    def dumps(self, zone_ids=None) -> str:
        return json.dumps(self.to_json(zone_ids), indent=1, sort_keys=True)


def solve_mivr(state: FleetState, forecast, params: MivrParams) -> RebalancePlan:
    problem, lay = build_mivr_lp(state, forecast, params)
    sol = solve_lp(problem)
    x, y = lay.split(sol.x)
    flows = x[0].copy()
    np.fill_diagonal(flows, 0.0)
    flows[flows < 1e-9] = 0.0
    return RebalancePlan(state.interval_index, flows, sol.objective, x, y, sol)


def plan_rebalancing(state: FleetState, forecaster, history, params: MivrParams) -> RebalancePlan:
    """Forecast ``params.horizon`` steps from ``history`` and solve the MIVR LP.

    ``history`` holds the last ``forecaster.lags`` observed intervals,
    oldest first; ``state.interval_index`` is the absolute index of the
    interval being planned.
    """
    forecast = forecaster.forecast(history, state.interval_index, params.horizon)
    return solve_mivr(state, forecast, params)
