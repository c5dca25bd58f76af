"""CSV readers for zones, demographics, trips and prediction files."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from .forecaster import DEFAULT_DELTA, DemandSeries
from .socio_graph import ZoneSet


class DataError(ValueError):
    pass


def _reader(path, required: list[str]):
    fh = open(path, newline="")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if header and missing:
        fh.close()
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
    return fh, reader


def load_zones(path) -> ZoneSet:
    fh, reader = _reader(path, ["zone_id", "x_m", "y_m"])
    ids, xy = [], []
    with fh:
        for row in reader:
            try:
                ids.append(int(row["zone_id"]))
                xy.append((float(row["x_m"]), float(row["y_m"])))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{reader.line_num}: {exc}") from None
    if not ids:
        raise DataError(f"{path}: no zones")
    try:
        return ZoneSet(tuple(ids), np.array(xy))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def load_demographics(path, zones: ZoneSet) -> np.ndarray:
    """Per-zone vectors ordered by year, minority ratio before poverty ratio."""
    fh, reader = _reader(path, ["zone_id", "year", "minority_ratio", "poverty_ratio"])
    table: dict[int, dict[int, tuple[float, float]]] = defaultdict(dict)
    with fh:
        for row in reader:
            try:
                z, year = int(row["zone_id"]), int(row["year"])
                m, p = float(row["minority_ratio"]), float(row["poverty_ratio"])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{reader.line_num}: {exc}") from None
            if z not in zones.zone_ids:
                raise DataError(f"{path}:{reader.line_num}: unknown zone id {z}")
            if not (0.0 <= m <= 1.0 and 0.0 <= p <= 1.0):
                raise DataError(f"{path}:{reader.line_num}: ratios must lie in [0, 1]")
            table[z][year] = (m, p)
    years = sorted({y for per in table.values() for y in per})
    out = np.zeros((zones.n, 2 * len(years)))
    for i, z in enumerate(zones.zone_ids):
        if set(table.get(z, {})) != set(years):
            raise DataError(f"{path}: zone {z} does not cover years {years}")
        out[i] = [v for y in years for v in table[z][y]]
    return out


def read_trips(path, zones: ZoneSet) -> list[tuple[int, float, int, int]]:
    fh, reader = _reader(path, ["request_id", "arrival_epoch_s", "origin_zone", "dest_zone"])
    known = set(zones.zone_ids)
    trips = []
    with fh:
        for row in reader:
            line = reader.line_num
            try:
                rid = int(row["request_id"])
                t = float(row["arrival_epoch_s"])
                o, d = int(row["origin_zone"]), int(row["dest_zone"])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{line}: malformed row {dict(row)}") from None
            if not math.isfinite(t):
                raise DataError(f"{path}:{line}: malformed timestamp {row['arrival_epoch_s']!r}")
            for z in (o, d):
                if z not in known:
                    raise DataError(f"{path}:{line}: unknown zone id {z}")
            trips.append((rid, t, o, d))
    return trips


def aggregate_trips(trips, zones: ZoneSet, delta: int = DEFAULT_DELTA, start: int | None = None,
                    end: int | None = None) -> DemandSeries:
    """Count trips per origin zone on half-open ``[start + k*delta, start + (k+1)*delta)`` bins.

    ``start`` defaults to the first arrival floored to the grid; ``end`` to
    the grid edge after the last arrival. Trips outside ``[start, end)`` are
    ignored.
    """
    if start is None:
        start = int(min((t for _, t, _, _ in trips), default=0) // delta * delta)
    if end is None:
        last = max((t for _, t, _, _ in trips), default=start - 1)
        end = int((last - start) // delta + 1) * delta + start if trips else start
    n_int = max(0, (end - start) // delta)
    counts = np.zeros((n_int, zones.n), dtype=np.int64)
    col = {z: i for i, z in enumerate(zones.zone_ids)}
    for _, t, o, _ in trips:
        k = int((t - start) // delta)
        if 0 <= k < n_int:
            counts[k, col[o]] += 1
    return DemandSeries(int(start), counts, zones.zone_ids, delta)


def load_trips(path, zones: ZoneSet, delta: int = DEFAULT_DELTA, start: int | None = None,
               end: int | None = None) -> tuple[DemandSeries, list]:
    trips = read_trips(path, zones)
    return aggregate_trips(trips, zones, delta, start, end), trips


def load_predictions(path) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Read a long-format ``interval_index,zone_id,actual,predicted`` file into matrices."""
    fh, reader = _reader(path, ["interval_index", "zone_id", "actual", "predicted"])
    cells = {}
    with fh:
        for row in reader:
            try:
                key = (int(row["interval_index"]), int(row["zone_id"]))
                cells[key] = (float(row["actual"]), float(row["predicted"]))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{reader.line_num}: {exc}") from None
    if not cells:
        raise DataError(f"{path}: no predictions")
    intervals = sorted({k for k, _ in cells})
    zone_ids = sorted({z for _, z in cells})
    actual = np.full((len(intervals), len(zone_ids)), np.nan)
    pred = np.full_like(actual, np.nan)
    ki = {k: i for i, k in enumerate(intervals)}
    zi = {z: i for i, z in enumerate(zone_ids)}
    for (k, z), (a, p) in cells.items():
        actual[ki[k], zi[z]] = a
        pred[ki[k], zi[z]] = p
    if np.isnan(actual).any():
        raise DataError(f"{path}: every (interval, zone) pair needs a row")
    return actual, pred, zone_ids


def write_predictions(path, series: DemandSeries, predicted: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["interval_index", "zone_id", "actual", "predicted"])
        for k in range(series.n_intervals):
            if np.isnan(predicted[k]).any():
                continue
            for i, z in enumerate(series.zone_ids):
                w.writerow([series.first_index + k, z, int(series.values[k, i]), repr(float(predicted[k, i]))])
