"""Synthetic two-cluster city for tests and demos.

A compact, well-off core of zones sits inside a ring of poorer peripheral
zones. Requests follow inhomogeneous Poisson arrivals with morning and
evening peaks; most trips end in the core, so vehicles drain out of the
periphery unless they are rebalanced.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .forecaster import SECONDS_PER_DAY

START_EPOCH = 1_559_520_000  # Monday 2019-06-03 00:00 UTC


@dataclass(frozen=True)
class SynthSpec:
    n_core: int = 4
    n_periphery: int = 4
    days: int = 26  # ends on a Friday
    core_spacing: float = 1200.0  # m
    ring_radius: float = 4500.0  # m
    core_rate: float = 3.0  # peak requests per zone per 5 min
    periphery_rate: float = 1.0
    to_core: float = 0.75  # probability a trip ends in the core
    years: int = 3
    seed: int = 7
    start_epoch: int = START_EPOCH


@dataclass
class Scenario:
    zone_ids: list[int]
    xy: np.ndarray
    is_core: np.ndarray
    demographics: list[tuple[int, int, float, float]]  # zone_id, year, minority, poverty
    trips: list[tuple[int, int, int, int]]  # request_id, arrival_s, origin, dest
    spec: SynthSpec

    def write(self, directory) -> dict[str, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {"zones": d / "zones.csv", "demographics": d / "demographics.csv", "trips": d / "trips.csv"}
        with open(paths["zones"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["zone_id", "x_m", "y_m"])
            for z, (x, y) in zip(self.zone_ids, self.xy):
                w.writerow([z, f"{x:.3f}", f"{y:.3f}"])
        with open(paths["demographics"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["zone_id", "year", "minority_ratio", "poverty_ratio"])
            for z, year, m, p in self.demographics:
                w.writerow([z, year, f"{m:.4f}", f"{p:.4f}"])
        with open(paths["trips"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["request_id", "arrival_epoch_s", "origin_zone", "dest_zone"])
            w.writerows(self.trips)
        return paths


def daily_profile(hour: np.ndarray) -> np.ndarray:
    """Relative intensity over the day, peaking at 1.0 around 08:30."""
    h = np.asarray(hour, dtype=float)
    raw = 0.15 + np.exp(-((h - 8.5) ** 2) / 2.0) + 0.8 * np.exp(-((h - 18.0) ** 2) / 3.0)
    return raw / raw.max()


def _layout(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    side = math.ceil(math.sqrt(spec.n_core))
    core = [((k % side) - (side - 1) / 2, (k // side) - (side - 1) / 2) for k in range(spec.n_core)]
    core = np.array(core, dtype=float).reshape(-1, 2) * spec.core_spacing
    ang = 2 * math.pi * np.arange(spec.n_periphery) / max(spec.n_periphery, 1)
    ring = spec.ring_radius * np.column_stack([np.cos(ang), np.sin(ang)])
    xy = np.vstack([core, ring])
    is_core = np.r_[np.ones(spec.n_core, bool), np.zeros(spec.n_periphery, bool)]
    return xy, is_core


def generate(spec: SynthSpec = SynthSpec()) -> Scenario:
    rng = np.random.default_rng(spec.seed)
    xy, is_core = _layout(spec)
    n = len(xy)
    zone_ids = list(range(1, n + 1))

    demo = []
    for z, core in zip(zone_ids, is_core):
        m0, p0 = (0.18, 0.08) if core else (0.42, 0.55)
        dm, dp = (-0.01, -0.005) if core else (0.015, 0.02)
        for y in range(spec.years):
            m = np.clip(m0 + dm * y + rng.normal(0, 0.01), 0, 1)
            p = np.clip(p0 + dp * y + rng.normal(0, 0.01), 0, 1)
            demo.append((z, 2015 + y, float(m), float(p)))

    slots = SECONDS_PER_DAY // 300
    peak = np.where(is_core, spec.core_rate, spec.periphery_rate) * rng.uniform(0.85, 1.15, n)
    core_idx = np.flatnonzero(is_core)
    peri_idx = np.flatnonzero(~is_core)
    trips = []
    rid = 0
    for day in range(spec.days):
        dow = day % 7
        day_factor = 0.75 if dow >= 5 else 1.0
        for s in range(slots):
            hour = (s + 0.5) * 300 / 3600.0
            lam = peak * daily_profile(hour) * day_factor
            counts = rng.poisson(lam)
            t0 = spec.start_epoch + day * SECONDS_PER_DAY + s * 300
            for o in range(n):
                for _ in range(counts[o]):
                    pool = core_idx if (rng.random() < spec.to_core or peri_idx.size == 0) else peri_idx
                    dest = int(rng.choice(pool))
                    if dest == o and pool.size > 1:
                        dest = int(rng.choice(pool[pool != o]))
                    t = t0 + int(rng.integers(0, 300))
                    trips.append((rid, t, zone_ids[o], zone_ids[dest]))
                    rid += 1
    trips.sort(key=lambda r: (r[1], r[0]))
    trips = [(i, t, o, d) for i, (_, t, o, d) in enumerate(trips)]
    return Scenario(zone_ids, xy, is_core, demo, trips, spec)
