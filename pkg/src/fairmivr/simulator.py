"""Discrete-event ride-hailing simulator.

Requests arrive from trip records, a matching engine assigns idle vehicles
every ``match_epoch`` seconds, and a rebalancing hook moves idle vehicles
every ``rebalance_epoch`` seconds. Vehicles travel in straight lines at a
constant speed.
"""

from __future__ import annotations

import csv
import heapq
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .rebalancer import METERS_PER_MILE, FleetState, RebalancePlan
from .socio_graph import ZoneSet

logger = logging.getLogger(__name__)

EXACT_MATCH_LIMIT = 64

# same-time event order: legs finish, then requests arrive, then matching, then rebalancing
LEG_END, ARRIVAL, MATCH_TICK, REBALANCE_TICK = range(4)


class SimError(ValueError):
    pass


class Status(str, Enum):
    IDLE = "idle"
    REBALANCING = "rebalancing"
    PICKUP = "pickup"
    OCCUPIED = "occupied"


@dataclass(frozen=True)
class SimConfig:
    fleet_size: int = 2000
    match_epoch: float = 30.0
    rebalance_epoch: float = 300.0
    speed: float = 6.0  # m/s
    max_wait: float = 600.0
    zone_radius: float = 300.0  # request points are jittered within this radius of the centroid
    seed: int = 0

    def __post_init__(self):
        if self.fleet_size < 1:
            raise SimError("fleet_size must be at least 1")
        if self.match_epoch <= 0 or self.rebalance_epoch <= 0:
            raise SimError("epochs must be positive")
        ratio = self.rebalance_epoch / self.match_epoch
        if abs(ratio - round(ratio)) > 1e-9:
            raise SimError("rebalance_epoch must be a multiple of match_epoch")
        if self.speed <= 0:
            raise SimError("speed must be positive")
        if self.max_wait <= 0 or self.zone_radius < 0:
            raise SimError("max_wait must be positive and zone_radius nonnegative")


@dataclass
class Request:
    id: int
    arrival: float
    origin: int  # zone index
    dest: int
    origin_xy: tuple[float, float]
    dest_xy: tuple[float, float]
    match_time: float | None = None
    pickup_time: float | None = None
    dropoff_time: float | None = None
    vehicle: int | None = None
    abandoned: bool = False

    @property
    def outcome(self) -> str:
        if self.pickup_time is not None:
            return "served"
        return "abandoned" if self.abandoned else "waiting"

    @property
    def wait(self) -> float | None:
        return None if self.pickup_time is None else self.pickup_time - self.arrival


@dataclass
class Leg:
    vehicle: int
    kind: Status
    start: float
    end: float
    origin: tuple[float, float]
    dest: tuple[float, float]
    dest_zone: int
    request: int | None = None

    @property
    def length(self) -> float:
        return math.dist(self.origin, self.dest)


@dataclass
class Vehicle:
    id: int
    zone: int
    position: tuple[float, float]
    status: Status = Status.IDLE
    odometer_total: float = 0.0  # miles
    odometer_occupied: float = 0.0
    rebalance_trips: int = 0
    leg: Leg | None = None


@dataclass
class SimReport:
    unsatisfaction_rate: float
    wait_avg: float
    wait_std_across_zones: float
    nonoccupied_vmt_avg: float
    rebalancing_trips_avg: float
    total_requests: int
    served: int
    abandoned: int
    waiting: int
    zone_wait_means: dict = field(default_factory=dict)
    requests: list[Request] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "unsatisfaction_rate": self.unsatisfaction_rate,
            "wait_avg_s": self.wait_avg,
            "wait_std_across_zones_s": self.wait_std_across_zones,
            "nonoccupied_vmt_avg_miles": self.nonoccupied_vmt_avg,
            "rebalancing_trips_avg": self.rebalancing_trips_avg,
            "requests": {"total": self.total_requests, "served": self.served, "abandoned": self.abandoned,
                         "waiting": self.waiting},
            "zone_wait_means_s": {str(k): v for k, v in self.zone_wait_means.items()},
        }

    def write_request_log(self, path, zone_ids=None) -> None:
        ids = zone_ids
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["request_id", "arrival_s", "origin_zone", "dest_zone", "outcome", "match_s", "pickup_s",
                        "wait_s"])
            for r in self.requests:
                w.writerow([r.id, r.arrival, ids[r.origin] if ids else r.origin, ids[r.dest] if ids else r.dest,
                            r.outcome, r.match_time, r.pickup_time, r.wait])


Controller = Callable[[FleetState], "np.ndarray | RebalancePlan | None"]


def largest_remainder_round(flows, idle=None) -> np.ndarray:
    """Round fractional flows to integers, preserving the rounded total.

    The diagonal is ignored. With ``idle`` given, row totals are then capped
    at the available vehicles by trimming the smallest flows first.
    """
    f = np.array(flows, dtype=float)
    np.fill_diagonal(f, 0.0)
    f = np.maximum(f, 0.0)
    total = int(math.floor(f.sum() + 0.5 + 1e-9))
    base = np.floor(f + 1e-9)
    short = total - int(base.sum())
    if short > 0:
        rem = (f - base).ravel()
        order = np.argsort(-rem, kind="stable")[:short]
        base.ravel()[order] += 1
    out = base.astype(int)
    if idle is not None:
        for i, cap in enumerate(np.asarray(idle, dtype=int)):
            excess = out[i].sum() - cap
            while excess > 0:
                nz = np.flatnonzero(out[i])
                j = nz[np.argmin(out[i, nz])]
                out[i, j] -= 1
                excess -= 1
    return out


class SimState:
    """Mutable simulation state; advance it with :meth:`step` or :func:`run`."""

    def __init__(self, config: SimConfig, zones: ZoneSet, requests: list[Request], start: float,
                 delta: int = 300, record_legs: bool = False):
        self.config = config
        self.zones = zones
        self.delta = delta
        self.now = float(start)
        self.start = float(start)
        self.requests = requests
        self.requests_by_id = {r.id: r for r in requests}
        self.arrived: list[Request] = []
        self.vehicles = [
            Vehicle(v, v % zones.n, tuple(zones.xy[v % zones.n])) for v in range(config.fleet_size)
        ]
        self.queue: list = []
        self._seq = 0
        self.unmatched: dict[int, Request] = {}
        self.legs: list[Leg] | None = [] if record_legs else None
        self.controller: Controller | None = None
        self.rebalance_log: list[dict] = []
        for r in requests:
            self._push(r.arrival, ARRIVAL, r.id)
        self._push(self._next_tick(start, config.match_epoch), MATCH_TICK, None)
        self._push(self._next_tick(start, config.rebalance_epoch), REBALANCE_TICK, None)

    @staticmethod
    def _next_tick(t: float, epoch: float) -> float:
        return math.ceil(t / epoch - 1e-12) * epoch

    def _push(self, t, kind, payload) -> None:
        heapq.heappush(self.queue, (t, kind, self._seq, payload))
        self._seq += 1

    # -- accounting ---------------------------------------------------------

    def counts(self) -> dict:
        served = sum(1 for r in self.arrived if r.pickup_time is not None)
        abandoned = sum(1 for r in self.arrived if r.abandoned)
        n = len(self.arrived)
        return {"arrived": n, "served": served, "abandoned": abandoned, "waiting": n - served - abandoned}

    def incoming_counts(self) -> np.ndarray:
        """Busy vehicles per (interval ahead, zone) by when and where they turn idle."""
        free = []
        for v in self.vehicles:
            leg = v.leg
            if leg is None:
                continue
            if leg.kind is Status.PICKUP:
                req = self.requests_by_id[leg.request]
                t = leg.end + math.dist(req.origin_xy, req.dest_xy) / self.config.speed
                free.append((t, req.dest))
            else:
                free.append((leg.end, leg.dest_zone))
        steps = 1 + max((int((t - self.now) // self.delta) for t, _ in free), default=0)
        out = np.zeros((steps, self.zones.n))
        for t, z in free:
            out[int((t - self.now) // self.delta), z] += 1
        return out

    def idle_counts(self) -> np.ndarray:
        idle = np.zeros(self.zones.n, dtype=int)
        for v in self.vehicles:
            if v.status is Status.IDLE:
                idle[v.zone] += 1
        return idle

    # -- movement -----------------------------------------------------------

    def _start_leg(self, v: Vehicle, kind: Status, dest_xy, dest_zone: int, request: int | None = None) -> None:
        leg = Leg(v.id, kind, self.now, 0.0, v.position, tuple(dest_xy), dest_zone, request)
        leg.end = self.now + leg.length / self.config.speed
        v.status = kind
        v.leg = leg
        self._push(leg.end, LEG_END, v.id)

    def _credit(self, v: Vehicle, leg: Leg, meters: float) -> None:
        miles = meters / METERS_PER_MILE
        v.odometer_total += miles
        if leg.kind is Status.OCCUPIED:
            v.odometer_occupied += miles

    def _finish_leg(self, vid: int) -> None:
        v = self.vehicles[vid]
        leg = v.leg
        self._credit(v, leg, leg.length)
        v.position = leg.dest
        v.leg = None
        if self.legs is not None:
            self.legs.append(leg)
        if leg.kind is Status.PICKUP:
            req = self.requests_by_id[leg.request]
            req.pickup_time = self.now
            self._start_leg(v, Status.OCCUPIED, req.dest_xy, req.dest, req.id)
        elif leg.kind is Status.OCCUPIED:
            self.requests_by_id[leg.request].dropoff_time = self.now
            v.zone = leg.dest_zone
            v.status = Status.IDLE
        else:
            v.zone = leg.dest_zone
            v.status = Status.IDLE

    # -- engines ------------------------------------------------------------

    def matching_step(self) -> list[tuple[int, int]]:
        """Abandon stale requests, then assign idle vehicles by minimum total pickup distance."""
        now = self.now
        for rid in [rid for rid, r in self.unmatched.items() if now - r.arrival > self.config.max_wait]:
            self.unmatched.pop(rid).abandoned = True
        reqs = sorted(self.unmatched.values(), key=lambda r: (r.arrival, r.id))
        idle = [v for v in self.vehicles if v.status is Status.IDLE]
        if not reqs or not idle:
            return []
        R = np.array([r.origin_xy for r in reqs])
        V = np.array([v.position for v in idle])
        cost = np.sqrt(((R[:, None, :] - V[None, :, :]) ** 2).sum(axis=-1))
        if min(cost.shape) <= EXACT_MATCH_LIMIT:
            rows, cols = linear_sum_assignment(cost)
        else:
            logger.info("matching batch %s exceeds exact limit, using greedy", cost.shape)
            rows, cols = _greedy_assignment(cost)
        pairs = []
        for ri, vi in zip(rows, cols):
            req, v = reqs[ri], idle[vi]
            req.match_time = now
            req.vehicle = v.id
            del self.unmatched[req.id]
            self._start_leg(v, Status.PICKUP, req.origin_xy, req.origin, req.id)
            pairs.append((req.id, v.id))
        return pairs

    def rebalancing_step(self, controller: Controller | None = None) -> np.ndarray:
        """Ask the controller for flows and dispatch idle vehicles accordingly."""
        controller = controller or self.controller
        n = self.zones.n
        if controller is None:
            return np.zeros((n, n), dtype=int)
        idle = self.idle_counts()
        state = FleetState(idle, int(self.now // self.delta), self.incoming_counts())
        try:
            plan = controller(state)
        except Exception:
            logger.exception("controller failed at t=%s; applying an empty plan", self.now)
            plan = None
        if plan is None:
            flows = np.zeros((n, n))
        elif isinstance(plan, RebalancePlan):
            flows = plan.flows
        else:
            flows = np.asarray(plan, dtype=float)
        moves = largest_remainder_round(flows, idle)
        centroids = self.zones.xy
        for i, j in np.argwhere(moves > 0):
            cands = [v for v in self.vehicles if v.status is Status.IDLE and v.zone == i]
            cands.sort(key=lambda v: (math.dist(v.position, centroids[j]), v.id))
            for v in cands[: moves[i, j]]:
                v.rebalance_trips += 1
                self._start_leg(v, Status.REBALANCING, centroids[j], int(j))
        self.rebalance_log.append({"t": self.now, "moves": int(moves.sum())})
        return moves

    # -- event loop ---------------------------------------------------------

    def step(self, until: float) -> bool:
        """Process the next event strictly before ``until``; False when none remain."""
        if not self.queue or self.queue[0][0] >= until:
            return False
        t, kind, _, payload = heapq.heappop(self.queue)
        self.now = t
        if kind == LEG_END:
            self._finish_leg(payload)
        elif kind == ARRIVAL:
            req = self.requests_by_id[payload]
            self.arrived.append(req)
            self.unmatched[payload] = req
        elif kind == MATCH_TICK:
            self.matching_step()
            self._push(t + self.config.match_epoch, MATCH_TICK, None)
        elif kind == REBALANCE_TICK:
            self.rebalancing_step()
            self._push(t + self.config.rebalance_epoch, REBALANCE_TICK, None)
        return True

    def finalize(self, end: float) -> None:
        """Credit distance already covered on legs still in progress at ``end``."""
        for v in self.vehicles:
            if v.leg is not None:
                frac = min(1.0, max(0.0, (end - v.leg.start) * self.config.speed / max(v.leg.length, 1e-12)))
                self._credit(v, v.leg, frac * v.leg.length)
        self.now = end

    def report(self) -> SimReport:
        c = self.counts()
        served = [r for r in self.arrived if r.pickup_time is not None]
        waits = np.array([r.wait for r in served])
        per_zone: dict[int, list[float]] = {}
        for r in served:
            per_zone.setdefault(self.zones.zone_ids[r.origin], []).append(r.wait)
        zone_means = {z: float(np.mean(w)) for z, w in sorted(per_zone.items())}
        fleet = len(self.vehicles)
        return SimReport(
            unsatisfaction_rate=c["abandoned"] / c["arrived"] if c["arrived"] else 0.0,
            wait_avg=float(waits.mean()) if waits.size else 0.0,
            wait_std_across_zones=float(np.std(list(zone_means.values()))) if zone_means else 0.0,
            nonoccupied_vmt_avg=sum(v.odometer_total - v.odometer_occupied for v in self.vehicles) / fleet,
            rebalancing_trips_avg=sum(v.rebalance_trips for v in self.vehicles) / fleet,
            total_requests=c["arrived"],
            served=c["served"],
            abandoned=c["abandoned"],
            waiting=c["waiting"],
            zone_wait_means=zone_means,
            requests=list(self.arrived),
        )


def _greedy_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Repeatedly take the globally cheapest remaining pair."""
    order = np.argsort(cost, axis=None, kind="stable")
    used_r, used_c = set(), set()
    rows, cols = [], []
    limit = min(cost.shape)
    for flat in order:
        r, c = divmod(int(flat), cost.shape[1])
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        rows.append(r)
        cols.append(c)
        if len(rows) == limit:
            break
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def _jitter(rng: np.random.Generator, center, radius: float) -> tuple[float, float]:
    rho = radius * math.sqrt(rng.random())
    phi = 2.0 * math.pi * rng.random()
    return (float(center[0] + rho * math.cos(phi)), float(center[1] + rho * math.sin(phi)))


def build_requests(trips, zones: ZoneSet, config: SimConfig) -> list[Request]:
    """Turn ``(request_id, arrival_s, origin_zone_id, dest_zone_id)`` rows into jittered requests."""
    rng = np.random.default_rng(config.seed)
    out = []
    for rid, t, o, d in sorted(trips, key=lambda row: (row[1], row[0])):
        oi, di = zones.index(o), zones.index(d)
        oxy = _jitter(rng, zones.xy[oi], config.zone_radius)
        dxy = _jitter(rng, zones.xy[di], config.zone_radius)
        out.append(Request(int(rid), float(t), oi, di, oxy, dxy))
    return out


def init_sim(config: SimConfig, zones: ZoneSet, trips, start: float | None = None, delta: int = 300,
             record_legs: bool = False) -> SimState:
    """Place the fleet round-robin over zone centroids and queue request arrivals."""
    if zones.n < 1:
        raise SimError("empty zone set")
    requests = build_requests(trips, zones, config)
    if start is None:
        start = min((r.arrival for r in requests), default=0.0)
        start = math.floor(start / config.rebalance_epoch) * config.rebalance_epoch
    return SimState(config, zones, requests, start, delta=delta, record_legs=record_legs)


def run(state: SimState, controller: Controller | None, horizon: float) -> SimReport:
    """Advance the simulation ``horizon`` seconds past its start and report."""
    state.controller = controller
    end = state.start + horizon
    while state.step(end):
        pass
    state.finalize(end)
    return state.report()
