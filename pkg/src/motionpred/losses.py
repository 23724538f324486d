"""Training objectives and evaluation metrics for pose-sequence prediction.

Every loss is built on the per-frame error ``e_t``: the Euclidean distance
between predicted and true joint positions, averaged over joints (and over
any leading batch axes). With learnable log-uncertainties ``s_t``:

    adaptive  = sum_t exp(-2 s_t) / 2 * e_t + s_t
    salient   = omega * T_out * e_1 + sum_t e_t
    combined  = lam * adaptive + (1 - lam) * salient
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, ShapeError, Tensor

DEFAULT_JITTER_WINDOWS_MS = ((0, 1000), (400, 1000), (800, 1000))
_TO_METERS = {"mm": 1e-3, "m": 1.0}


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.3
    omega: float = 10.0
    # use squared joint distances inside the adaptive term instead of plain distances
    squared_error: bool = False

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not (self.omega >= 0.0 and math.isfinite(self.omega)):
            raise ValueError(f"omega must be a non-negative finite number, got {self.omega}")


class UncertaintyParams:
    """Per-output-frame log standard deviations, initialised to zero (sigma = 1)."""

    NAME = "uncertainty.log_sigma"

    def __init__(self, out_frames: int, init=None):
        self.params = ParamStore()
        values = np.zeros(out_frames) if init is None else np.asarray(init, dtype=np.float64)
        if values.shape != (out_frames,):
            raise ShapeError(f"log sigma must have shape ({out_frames},), got {values.shape}")
        self.log_sigma = self.params.add(self.NAME, values)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.data)

    def __len__(self) -> int:
        return self.log_sigma.shape[0]


def _pair(pred, target) -> tuple[Tensor, Tensor]:
    pred, target = ad._as_tensor(pred), ad._as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    if pred.ndim < 3 or pred.shape[-1] != 3:
        raise ShapeError(f"expected (..., T, N, 3) poses, got {pred.shape}")
    return pred, target


def frame_errors(pred, target, squared: bool = False) -> Tensor:
    """Mean per-joint distance for each frame, ``(..., T, N, 3) -> (..., T)``."""
    pred, target = _pair(pred, target)
    sq = ad.reduce("sum", ad.elementwise("square", pred - target), axis=-1)
    dist = sq if squared else ad.elementwise("sqrt", sq)
    return ad.reduce("mean", dist, axis=-1)


def _batch_frame_errors(pred, target, squared: bool = False) -> Tensor:
    e = frame_errors(pred, target, squared)
    return ad.reduce("mean", e, axis=tuple(range(e.ndim - 1))) if e.ndim > 1 else e


def mpjpe(pred, target) -> Tensor:
    return ad.reduce("mean", frame_errors(pred, target))


def horizon_frame(horizon_ms: float, fps: float) -> int:
    """1-based predicted-frame index for a horizon; must land on a whole frame."""
    exact = horizon_ms * fps / 1000.0
    idx = round(exact)
    if abs(exact - idx) > 1e-9:
        raise ValueError(f"{horizon_ms} ms is not a whole number of frames at {fps} fps")
    return idx


def mpjpe_at_horizons(pred, target, fps: float, horizons_ms) -> dict[float, float]:
    e = _batch_frame_errors(pred, target).data
    out = {}
    for h in horizons_ms:
        idx = horizon_frame(h, fps)
        if not 1 <= idx <= e.shape[0]:
            raise ValueError(f"horizon {h} ms maps to frame {idx}, outside 1..{e.shape[0]}")
        out[h] = float(e[idx - 1])
    return out


def _log_sigma(u) -> Tensor:
    return u.log_sigma if isinstance(u, UncertaintyParams) else ad._as_tensor(u)


def adaptive_loss(pred, target, u, squared: bool = False) -> Tensor:
    s = _log_sigma(u)
    e = _batch_frame_errors(pred, target, squared)
    if s.shape != e.shape:
        raise ShapeError(f"{s.shape[0]} uncertainties for {e.shape[0]} output frames")
    weight = ad.elementwise("exp", s * -2.0) * 0.5
    return ad.reduce("sum", weight * e + s)


def salient_loss(pred, target, omega: float) -> Tensor:
    e = _batch_frame_errors(pred, target)
    t_out = e.shape[0]
    return e[0] * (omega * t_out) + ad.reduce("sum", e)


def loss_terms(pred, target, cfg: LossConfig, u) -> tuple[Tensor, Tensor, Tensor]:
    """``(combined, adaptive, salient)``."""
    adaptive = adaptive_loss(pred, target, u, cfg.squared_error)
    salient = salient_loss(pred, target, cfg.omega)
    return adaptive * cfg.lam + salient * (1.0 - cfg.lam), adaptive, salient


def combined_loss(pred, target, cfg: LossConfig, u) -> Tensor:
    return loss_terms(pred, target, cfg, u)[0]


def jitter_from_errors(errors, fps: float, absolute: bool = False) -> float:
    """Jitter of an error trajectory ``dx_0 .. dx_T``.

    ``fps**3 / (T - 3) * sum_{t=0}^{T-3} (dx[t+3] - 3 dx[t+2] + 3 dx[t+1] - dx[t])``
    with ``T = len(errors) - 1``. ``absolute`` takes the magnitude of every
    third difference before summing.
    """
    dx = np.asarray(errors, dtype=np.float64)
    if dx.ndim != 1:
        raise ShapeError("errors must be one-dimensional")
    T = dx.shape[0] - 1
    if T < 4:
        raise ValueError(f"jitter needs at least 5 error values, got {dx.shape[0]}")
    third = dx[3:] - 3.0 * dx[2:-1] + 3.0 * dx[1:-2] - dx[:-3]
    if absolute:
        third = np.abs(third)
    return float(fps ** 3 / (T - 3) * third.sum())


def jitter(pred, target, fps: float, units: str = "mm", absolute: bool = False) -> float:
    """Jitter in m/s^3 of the per-frame error trajectory of a prediction."""
    e = _batch_frame_errors(pred, target).data * _TO_METERS[units]
    if e.shape[0] < 5:
        raise ValueError(f"jitter needs T_out >= 5, got {e.shape[0]}")
    return jitter_from_errors(e, fps, absolute)


def jitter_windows(pred, target, fps: float, windows_ms=DEFAULT_JITTER_WINDOWS_MS,
                   units: str = "mm") -> dict[str, tuple[float, float]]:
    """Jitter over horizon windows; each value is ``(signed, absolute)``.

    Window ``(a, b)`` keeps predicted frames ``max(1, a*fps/1000) .. b*fps/1000``.
    """
    e = _batch_frame_errors(pred, target).data * _TO_METERS[units]
    out = {}
    for lo, hi in windows_ms:
        first = max(1, horizon_frame(lo, fps))
        last = horizon_frame(hi, fps)
        if last > e.shape[0] or last - first < 4:
            raise ValueError(f"window {lo}-{hi} ms does not fit in {e.shape[0]} predicted frames")
        part = e[first - 1:last]
        out[f"{lo:g}-{hi:g}ms"] = (jitter_from_errors(part, fps), jitter_from_errors(part, fps, absolute=True))
    return out


def zero_velocity_baseline(obs, out_frames: int) -> np.ndarray:
    obs = np.asarray(obs.data if isinstance(obs, Tensor) else obs, dtype=np.float64)
    if obs.ndim < 3 or obs.shape[-3] < 1:
        raise ShapeError(f"observation must be (..., T_in, N, 3) with T_in >= 1, got {obs.shape}")
    last = obs[..., -1:, :, :]
    return np.repeat(last, out_frames, axis=-3)


@dataclass
class MetricsReport:
    mpjpe_by_horizon: dict[float, float]
    mpjpe: float
    jitter: dict[str, float] = field(default_factory=dict)
    jitter_abs: dict[str, float] = field(default_factory=dict)
    per_action: dict[str, dict[float, float]] = field(default_factory=dict)

    def flat(self, prefix: str = "") -> dict[str, float]:
        out = {f"{prefix}mpjpe": self.mpjpe}
        for h, v in self.mpjpe_by_horizon.items():
            out[f"{prefix}mpjpe@{h:g}ms"] = v
        for w, v in self.jitter.items():
            out[f"{prefix}jitter_{w}"] = v
        for w, v in self.jitter_abs.items():
            out[f"{prefix}jitter_abs_{w}"] = v
        for action, table in self.per_action.items():
            for h, v in table.items():
                out[f"{prefix}{action}/mpjpe@{h:g}ms"] = v
        return out

    def to_json(self, prefix: str = "") -> str:
        return json.dumps(self.flat(prefix), indent=2)


def evaluate(pred, target, fps: float, horizons_ms, windows_ms=DEFAULT_JITTER_WINDOWS_MS,
             units: str = "mm") -> MetricsReport:
    """Full metric report. Horizons and Jitter windows reaching past the
    predicted frames are left out rather than raising."""
    t_out = np.shape(getattr(pred, "data", pred))[-3]
    horizons_ms = [h for h in horizons_ms if horizon_frame(h, fps) <= t_out]
    windows_ms = [(a, b) for a, b in windows_ms or ()
                  if horizon_frame(b, fps) <= t_out and horizon_frame(b, fps) - max(1, horizon_frame(a, fps)) >= 4]
    jw = jitter_windows(pred, target, fps, windows_ms, units) if windows_ms else {}
    return MetricsReport(
        mpjpe_by_horizon=mpjpe_at_horizons(pred, target, fps, horizons_ms) if horizons_ms else {},
        mpjpe=float(mpjpe(pred, target).data),
        jitter={k: v[0] for k, v in jw.items()},
        jitter_abs={k: v[1] for k, v in jw.items()},
    )
