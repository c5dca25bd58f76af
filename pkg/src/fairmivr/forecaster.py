"""One-step zone demand forecasters and the fairness-regularized loss.

Two model kinds are provided: a historical average keyed by
(day-of-week, interval-of-day), and a graph-smoothed linear autoregression

    r_hat[k, i] = max(0, bias[i] + sum_l theta[l] * (A_hat @ r[k - l])[i])

trained by full-batch subgradient descent on squared error plus an optional
SAPE-variance penalty and an overestimation hinge.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_DELTA = 300
DEFAULT_LAGS = 12
SECONDS_PER_DAY = 86_400


class ForecastError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# demand series
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DemandSeries:
    """Per-interval, per-zone demand counts on a regular grid.

    ``start_epoch`` must be a multiple of ``delta`` so that every row maps
    to an absolute interval index ``start_epoch // delta + row``.
    """

    start_epoch: int
    values: np.ndarray
    zone_ids: tuple[int, ...]
    delta: int = DEFAULT_DELTA

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ForecastError("demand values must be (intervals, zones)")
        if v.shape[1] != len(self.zone_ids):
            raise ForecastError("zone count mismatch")
        if np.any(v < 0):
            raise ForecastError("demand counts must be nonnegative")
        if self.delta <= 0 or self.start_epoch % self.delta:
            raise ForecastError("start_epoch must be aligned to the interval grid")
        object.__setattr__(self, "values", v)

    @property
    def n_intervals(self) -> int:
        return self.values.shape[0]

    @property
    def n_zones(self) -> int:
        return self.values.shape[1]

    @property
    def first_index(self) -> int:
        return self.start_epoch // self.delta

    def index_of(self, epoch: float) -> int:
        """Row holding ``epoch`` (half-open bins)."""
        return int((epoch - self.start_epoch) // self.delta)

    def slice(self, start: int, stop: int) -> "DemandSeries":
        start = max(0, start)
        stop = min(self.n_intervals, stop)
        return DemandSeries(self.start_epoch + start * self.delta, self.values[start:stop], self.zone_ids, self.delta)

    def split(self, fractions=(0.7, 0.15, 0.15)) -> tuple["DemandSeries", ...]:
        """Chronological split; the last part takes the remainder."""
        bounds = np.floor(np.cumsum(fractions)[:-1] * self.n_intervals).astype(int)
        edges = [0, *bounds.tolist(), self.n_intervals]
        return tuple(self.slice(a, b) for a, b in zip(edges[:-1], edges[1:]))


def calendar_keys(index, delta: int = DEFAULT_DELTA) -> tuple[np.ndarray, np.ndarray]:
    """(day_of_week, interval_of_day) for absolute interval indices. Monday = 0."""
    sec = np.asarray(index, dtype=np.int64) * delta
    days = sec // SECONDS_PER_DAY
    dow = (days + 3) % 7  # 1970-01-01 was a Thursday
    slot = (sec % SECONDS_PER_DAY) // delta
    return dow, slot


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossParams:
    lam: float = 0.0  # SAPE-variance weight
    gamma: float = 0.0  # overestimation weight

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ForecastError("loss weights must be nonnegative")


def sape(actual, predicted):
    r = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    denom = np.abs(r) + np.abs(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom != 0, np.abs(r - p) / np.where(denom != 0, denom, 1.0), 0.0)
    return out if out.ndim else float(out)


def _check_loss_inputs(pred, actual, params: LossParams):
    p = np.atleast_2d(np.asarray(pred, dtype=float))
    r = np.atleast_2d(np.asarray(actual, dtype=float))
    if p.shape != r.shape:
        raise ForecastError(f"shape mismatch: {p.shape} vs {r.shape}")
    if params.lam > 0 and p.shape[1] < 2:
        raise ForecastError("SAPE variance needs at least two zones")
    return p, r


def composite_loss(pred, actual, params: LossParams) -> float:
    """Squared error + lam * sum of per-period SAPE variances + gamma * overestimation."""
    p, r = _check_loss_inputs(pred, actual, params)
    loss = float(np.sum((r - p) ** 2))
    if params.lam > 0:
        loss += params.lam * float(np.sum(np.var(sape(r, p), axis=1, ddof=1)))
    if params.gamma > 0:
        loss += params.gamma * float(np.sum(np.maximum(0.0, p - r)))
    return loss


def composite_loss_grad(pred, actual, params: LossParams) -> np.ndarray:
    """Subgradient of :func:`composite_loss` w.r.t. ``pred`` (0 at every kink)."""
    p, r = _check_loss_inputs(pred, actual, params)
    g = 2.0 * (p - r)
    if params.lam > 0:
        n = p.shape[1]
        s = sape(r, p)
        dvar_ds = 2.0 * (s - s.mean(axis=1, keepdims=True)) / (n - 1)
        ar, ap = np.abs(r), np.abs(p)
        denom = ar + ap
        num = np.abs(r - p)
        safe = np.where(denom != 0, denom, 1.0)
        ds_dp = (np.sign(p - r) * denom - num * np.sign(p)) / safe**2
        ds_dp = np.where(denom != 0, ds_dp, 0.0)
        g = g + params.lam * dvar_ds * ds_dp
    if params.gamma > 0:
        g = g + params.gamma * (p > r)
    return g


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainOptions:
    lags: int = DEFAULT_LAGS
    step: float = 1.0
    max_iter: int = 5_000
    rel_tol: float = 1e-8
    min_step: float = 1e-30


@dataclass
class Forecaster:
    kind: str
    lags: int
    delta: int = DEFAULT_DELTA
    zone_ids: tuple[int, ...] = ()
    theta: np.ndarray | None = None
    bias: np.ndarray | None = None
    a_hat: np.ndarray | None = None
    table: np.ndarray | None = None  # (7, slots_per_day, n) for historical_average
    info: dict = field(default_factory=dict)

    @property
    def n_zones(self) -> int:
        return len(self.zone_ids)

    def predict(self, window, clock: int | None = None) -> np.ndarray:
        """Forecast the interval after ``window``.

        ``window`` holds the last ``lags`` observations, oldest first.
        ``clock`` is the absolute interval index of the target interval;
        only the historical average uses it.
        """
        if self.kind == "historical_average":
            if clock is None:
                raise ForecastError("historical average needs the target interval index")
            dow, slot = calendar_keys(clock, self.delta)
            return self.table[int(dow), int(slot)].copy()
        w = np.asarray(window, dtype=float)
        if w.shape != (self.lags, self.n_zones):
            raise ForecastError(f"window must have shape ({self.lags}, {self.n_zones}), got {w.shape}")
        smoothed = w[::-1] @ self.a_hat.T  # row l-1 is lag l
        return np.maximum(0.0, self.bias + self.theta @ smoothed)

    def forecast(self, window, clock: int | None, steps: int) -> np.ndarray:
        """``steps`` consecutive forecasts, feeding each prediction back as the newest lag."""
        out = np.empty((steps, self.n_zones))
        w = None if window is None else np.asarray(window, dtype=float).copy()
        for s in range(steps):
            c = None if clock is None else clock + s
            out[s] = self.predict(w, c)
            if w is not None and len(w):
                w = np.vstack([w[1:], out[s]])
        return out

    def predict_series(self, series: DemandSeries, history: DemandSeries | None = None) -> np.ndarray:
        """One-step forecasts for every row of ``series``.

        Lags reaching before ``series`` are taken from ``history`` (which must
        end right where ``series`` starts); rows without a full window are NaN.
        """
        if self.kind == "historical_average":
            idx = series.first_index + np.arange(series.n_intervals)
            dow, slot = calendar_keys(idx, self.delta)
            return self.table[dow, slot]
        vals = series.values.astype(float)
        pad = 0
        if history is not None:
            if history.first_index + history.n_intervals != series.first_index:
                raise ForecastError("history does not end where the series starts")
            hv = history.values[-self.lags :].astype(float)
            pad = hv.shape[0]
            vals = np.vstack([hv, vals])
        X = lag_features(vals, self.a_hat, self.lags)
        preds = np.maximum(0.0, self.bias + np.einsum("l,kli->ki", self.theta, X))
        out = np.full(series.values.shape, np.nan)
        first = self.lags - pad
        out[max(first, 0) :] = preds[max(0, -first) :]
        return out

    def to_json(self) -> dict:
        doc = {
            "kind": self.kind,
            "M": self.lags,
            "delta": self.delta,
            "zone_ids": list(self.zone_ids),
            "info": self.info,
        }
        if self.kind == "graph_linear":
            doc.update(theta=self.theta.tolist(), bias=self.bias.tolist(), a_hat=self.a_hat.tolist())
        else:
            doc["table"] = self.table.tolist()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Forecaster":
        kind = doc["kind"]
        common = dict(kind=kind, lags=int(doc["M"]), delta=int(doc["delta"]), zone_ids=tuple(doc["zone_ids"]), info=doc.get("info", {}))
        if kind == "graph_linear":
            return cls(**common, theta=np.array(doc["theta"]), bias=np.array(doc["bias"]), a_hat=np.array(doc["a_hat"]))
        if kind == "historical_average":
            return cls(**common, table=np.array(doc["table"]))
        raise ForecastError(f"unknown forecaster kind {kind!r}")

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Forecaster":
        return cls.from_json(json.loads(Path(path).read_text()))


def fit_historical_average(train: DemandSeries) -> Forecaster:
    if train.n_intervals == 0:
        raise ForecastError("empty training series")
    if train.n_intervals * train.delta < 7 * SECONDS_PER_DAY:
        logger.warning("historical average trained on less than one week; unseen slots predict 0")
    slots = SECONDS_PER_DAY // train.delta
    idx = train.first_index + np.arange(train.n_intervals)
    dow, slot = calendar_keys(idx, train.delta)
    sums = np.zeros((7, slots, train.n_zones))
    counts = np.zeros((7, slots))
    np.add.at(sums, (dow, slot), train.values.astype(float))
    np.add.at(counts, (dow, slot), 1.0)
    table = np.divide(sums, counts[..., None], out=np.zeros_like(sums), where=counts[..., None] > 0)
    return Forecaster("historical_average", lags=0, delta=train.delta, zone_ids=train.zone_ids, table=table)


def lag_features(values: np.ndarray, a_hat: np.ndarray, lags: int) -> np.ndarray:
    """Smoothed lag tensor ``X[k, l-1, i] = (A_hat @ values[k + lags - l])[i]``.

    Row ``k`` of the result corresponds to target row ``k + lags``.
    """
    smoothed = values @ a_hat.T
    T = values.shape[0]
    if T <= lags:
        return np.empty((0, lags, values.shape[1]))
    return np.stack([smoothed[lags - l : T - l] for l in range(1, lags + 1)], axis=1)


def model_loss_and_grad(theta, bias, X, Y, params: LossParams):
    """Composite loss of the clamped linear model and its parameter subgradient."""
    z = bias + np.einsum("l,kli->ki", theta, X)
    p = np.maximum(0.0, z)
    loss = composite_loss(p, Y, params)
    gp = composite_loss_grad(p, Y, params) * (z > 0)
    return loss, np.einsum("ki,kli->l", gp, X), gp.sum(axis=0)


def _gauss_newton(X: np.ndarray) -> np.ndarray:
    """Hessian of the squared-error term w.r.t. (theta, bias), ignoring the clamp."""
    K, M, n = X.shape
    H = np.zeros((M + n, M + n))
    H[:M, :M] = 2.0 * np.einsum("kli,kmi->lm", X, X)
    cross = 2.0 * X.sum(axis=0)  # (M, n)
    H[:M, M:] = cross
    H[M:, :M] = cross.T
    H[M:, M:] = 2.0 * K * np.eye(n)
    H += 1e-10 * np.trace(H) / (M + n) * np.eye(M + n)
    return H


def fit_graph_linear(train: DemandSeries, a_hat, params: LossParams = LossParams(), opts: TrainOptions = TrainOptions()) -> Forecaster:
    """Fit shared lag weights and per-zone biases by preconditioned subgradient descent.

    Each direction is the loss subgradient scaled by the inverse of the
    squared-error Gauss-Newton matrix. A step that raises the loss is
    rejected and the step halved; an accepted step lets the next trial
    double, up to ``opts.step``. Initialization is deterministic: zero lag
    weights, biases at the per-zone training means.
    """
    a_hat = np.asarray(a_hat, dtype=float)
    M = opts.lags
    if train.n_intervals <= M:
        raise ForecastError(f"training series needs more than {M} intervals")
    if not np.allclose(a_hat.sum(axis=1), 1.0):
        raise ForecastError("A_hat must be row-stochastic")
    vals = train.values.astype(float)
    X = lag_features(vals, a_hat, M)
    Y = vals[M:]
    H = _gauss_newton(X)

    theta = np.zeros(M)
    bias = Y.mean(axis=0)
    loss, g_t, g_b = model_loss_and_grad(theta, bias, X, Y, params)
    d = np.linalg.solve(H, np.concatenate([g_t, g_b]))
    step = opts.step
    it = accepted = 0
    for it in range(1, opts.max_iter + 1):
        cand_t = theta - step * d[:M]
        cand_b = bias - step * d[M:]
        cand_loss, cg_t, cg_b = model_loss_and_grad(cand_t, cand_b, X, Y, params)
        if not np.isfinite(cand_loss):
            raise TrainingError(f"loss became non-finite at iteration {it}")
        if cand_loss > loss:
            step *= 0.5
            if step < opts.min_step:
                break
            continue
        rel = (loss - cand_loss) / max(abs(loss), 1e-300)
        theta, bias, loss = cand_t, cand_b, cand_loss
        d = np.linalg.solve(H, np.concatenate([cg_t, cg_b]))
        accepted += 1
        step = min(opts.step, 2.0 * step)
        if rel < opts.rel_tol:
            break
    info = {"iterations": it, "accepted_steps": accepted, "final_loss": loss, "final_step": step,
            "lam": params.lam, "gamma": params.gamma}
    logger.info("graph_linear fit: %s", info)
    return Forecaster("graph_linear", lags=M, delta=train.delta, zone_ids=train.zone_ids,
                      theta=theta, bias=bias, a_hat=a_hat, info=info)
