"""Pose-sequence storage, preprocessing, windowing and synthetic motion.

On-disk format
--------------
A sequence ``NAME`` is two files side by side:

``NAME.csv``
    One line per frame, no header. Each line holds ``3 * N`` comma-separated
    values ordered joint-major: ``j0x,j0y,j0z,j1x,...``. Values are written
    with Python's ``format(v, ".17g")`` (17 significant digits), which
    round-trips every float64 exactly. Lines end with ``\\n``.

``NAME.json``
    Manifest ``{"fps": float, "units": "mm"|"m", "joint_names": [str, ...],
    "n_frames": int}``, keys sorted, two-space indent.

A dataset index is a JSON file ``{"sequences": [{"path": "walk.csv",
"action": "walking"}, ...]}``; relative paths resolve against the index's
directory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    reason = "data-error"


@dataclass
class MotionSequence:
    fps: float
    units: str
    joint_names: list[str]
    frames: np.ndarray  # (T, N, 3)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise DataError(f"fps must be positive, got {self.fps}")
        if self.units not in ("mm", "m"):
            raise DataError(f"units must be 'mm' or 'm', got {self.units!r}")
        if self.frames.ndim != 3 or self.frames.shape[2] != 3 or self.frames.shape[0] < 1:
            raise DataError(f"frames must be (T>=1, N, 3), got {self.frames.shape}")
        if len(self.joint_names) != self.frames.shape[1]:
            raise DataError(f"{len(self.joint_names)} joint names for {self.frames.shape[1]} joints")
        if not np.all(np.isfinite(self.frames)):
            raise DataError("coordinates must be finite")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_joints(self) -> int:
        return self.frames.shape[1]

    def replace(self, **changes) -> "MotionSequence":
        kw = dict(fps=self.fps, units=self.units, joint_names=list(self.joint_names), frames=self.frames)
        kw.update(changes)
        return MotionSequence(**kw)


@dataclass
class WindowPair:
    obs: np.ndarray      # (T_in, N, 3)
    target: np.ndarray   # (T_out, N, 3)
    source_id: str
    start_frame: int


def _manifest_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_sequence(seq: MotionSequence, path) -> None:
    path = Path(path)
    rows = seq.frames.reshape(seq.n_frames, -1)
    text = "".join(",".join(format(v, ".17g") for v in row) + "\n" for row in rows.tolist())
    manifest = {"fps": float(seq.fps), "units": seq.units,
                "joint_names": list(seq.joint_names), "n_frames": seq.n_frames}
    try:
        path.write_text(text)
        _manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


def load_sequence(path) -> MotionSequence:
    path = Path(path)
    mpath = _manifest_path(path)
    if not mpath.exists():
        raise DataError(f"{path}: missing manifest {mpath.name}")
    try:
        manifest = json.loads(mpath.read_text())
        fps = float(manifest["fps"])
        units = manifest["units"]
        names = list(manifest["joint_names"])
        n_frames = int(manifest["n_frames"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{mpath}: bad manifest ({exc})") from None
    if not fps > 0:
        raise DataError(f"{mpath}: fps must be positive, got {fps}")
    width = 3 * len(names)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            cells = line.rstrip("\n").split(",")
            if len(cells) != width:
                raise DataError(f"{path}:{lineno}: expected {width} values, found {len(cells)}")
            try:
                values = [float(c) for c in cells]
            except ValueError:
                bad = next(i for i, c in enumerate(cells) if not _is_float(c))
                raise DataError(f"{path}:{lineno}: non-numeric value {cells[bad]!r} in column {bad + 1}") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}:{lineno}: non-finite value")
            rows.append(values)
    if len(rows) != n_frames:
        raise DataError(f"{path}: manifest says {n_frames} frames, file has {len(rows)}")
    if not rows:
        raise DataError(f"{path}: empty sequence")
    frames = np.array(rows, dtype=np.float64).reshape(len(rows), len(names), 3)
    return MotionSequence(fps=fps, units=units, joint_names=names, frames=frames)


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_index(path) -> list[tuple[MotionSequence, str, str]]:
    """Read a dataset index; returns ``(sequence, action, source_id)`` triples."""
    path = Path(path)
    try:
        entries = json.loads(path.read_text())["sequences"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: bad dataset index ({exc})") from None
    out = []
    for entry in entries:
        p = path.parent / entry["path"]
        out.append((load_sequence(p), entry.get("action", ""), str(entry["path"])))
    return out


def remove_global_translation(seq: MotionSequence, root_joint: int = 0) -> MotionSequence:
    if not 0 <= root_joint < seq.n_joints:
        raise DataError(f"root joint {root_joint} out of range for {seq.n_joints} joints")
    frames = seq.frames - seq.frames[:, root_joint:root_joint + 1, :]
    return seq.replace(frames=frames)


def downsample(seq: MotionSequence, target_fps: float) -> MotionSequence:
    ratio = seq.fps / target_fps
    r = round(ratio)
    if r < 1 or abs(ratio - r) > 1e-9:
        raise DataError(f"cannot downsample {seq.fps} fps to {target_fps} fps (ratio {ratio:g})")
    return seq.replace(fps=float(target_fps), frames=seq.frames[::r])


def window_count(n_frames: int, in_frames: int, out_frames: int, stride: int) -> int:
    return max(0, (n_frames - (in_frames + out_frames)) // stride + 1)


def window_split(seq: MotionSequence, in_frames: int, out_frames: int, stride: int = 1,
                 source_id: str = "") -> list[WindowPair]:
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    span = in_frames + out_frames
    out = []
    for start in range(0, seq.n_frames - span + 1, stride):
        out.append(WindowPair(
            obs=seq.frames[start:start + in_frames].copy(),
            target=seq.frames[start + in_frames:start + span].copy(),
            source_id=source_id,
            start_frame=start,
        ))
    return out


def split_train_val(pairs: list, fraction: float, seed: int = 0) -> tuple[list, list]:
    """Seeded shuffle, then the first ``round(fraction * n)`` items go to training."""
    if not 0.0 < fraction < 1.0:
        raise DataError(f"train fraction must be in (0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(pairs))
    n_train = int(round(fraction * len(pairs)))
    return [pairs[i] for i in order[:n_train]], [pairs[i] for i in order[n_train:]]


FAMILIES = ("sinusoid", "lissajous", "piecewise-linear")


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic motion recipe.

    ``amplitude_range`` and ``bone_length`` are millimetres; they are divided
    by 1000 when ``units == "m"``. Frequencies are in Hz.
    """

    n_joints: int = 8
    n_frames: int = 100
    fps: float = 25.0
    motion_family: str = "sinusoid"
    amplitude_range: tuple[float, float] = (20.0, 80.0)
    frequency_range: tuple[float, float] = (0.1, 0.5)
    units: str = "mm"
    bone_length: float = 150.0

    def __post_init__(self):
        if self.n_joints < 1 or self.n_frames < 1:
            raise DataError("n_joints and n_frames must be positive")
        if not self.fps > 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        if self.motion_family not in FAMILIES:
            raise DataError(f"unknown motion family {self.motion_family!r}; choose from {FAMILIES}")
        a_lo, a_hi = self.amplitude_range
        f_lo, f_hi = self.frequency_range
        if not (0 <= a_lo <= a_hi):
            raise DataError(f"bad amplitude range {self.amplitude_range}")
        if not (0 < f_lo <= f_hi):
            raise DataError(f"bad frequency range {self.frequency_range}")
        if f_hi >= self.fps / 2:
            raise DataError(f"frequencies must stay below Nyquist ({self.fps / 2} Hz)")
        if self.units not in ("mm", "m"):
            raise DataError(f"units must be 'mm' or 'm', got {self.units!r}")


@dataclass
class SynthParameters:
    base: np.ndarray        # (N, 3) rest skeleton
    amplitude: np.ndarray   # (N, 3)
    frequency: np.ndarray   # (N,) Hz, one per joint
    phase: np.ndarray       # (N, 3)
    extra: dict = field(default_factory=dict)


def synth_parameters(spec: SynthSpec, seed: int) -> SynthParameters:
    """The random draws behind :func:`synth_generate` for ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    n = spec.n_joints
    bones = rng.normal(size=(n, 3))
    bones /= np.linalg.norm(bones, axis=1, keepdims=True)
    base = np.cumsum(bones * spec.bone_length, axis=0)
    base -= base[0]
    amplitude = rng.uniform(*spec.amplitude_range, size=(n, 3))
    frequency = rng.uniform(*spec.frequency_range, size=n)
    phase = rng.uniform(0.0, 2 * np.pi, size=(n, 3))
    extra = {}
    if spec.motion_family == "lissajous":
        # second frequency for the y axis, as a small-integer ratio of the first
        extra["ratio"] = rng.choice([0.5, 1.5, 2.0], size=n)
    elif spec.motion_family == "piecewise-linear":
        duration = spec.n_frames / spec.fps
        extra["knots"] = [rng.uniform(-1.0, 1.0, size=(int(np.ceil(duration * f)) + 2, 3)) for f in frequency]
    return SynthParameters(base, amplitude, frequency, phase, extra)


def synth_generate(spec: SynthSpec, seed: int) -> MotionSequence:
    """Smooth synthetic motion around a random rest skeleton; pure in ``(spec, seed)``."""
    p = synth_parameters(spec, seed)
    t = np.arange(spec.n_frames) / spec.fps
    n = spec.n_joints
    frames = np.empty((spec.n_frames, n, 3))
    for j in range(n):
        f = p.frequency[j]
        if spec.motion_family == "sinusoid":
            wave = np.sin(2 * np.pi * f * t[:, None] + p.phase[j])
        elif spec.motion_family == "lissajous":
            freqs = np.array([f, f * p.extra["ratio"][j], f])
            freqs = np.minimum(freqs, spec.frequency_range[1])
            wave = np.sin(2 * np.pi * freqs * t[:, None] + p.phase[j])
        else:
            knots = p.extra["knots"][j]
            pos = t * f
            wave = np.stack([np.interp(pos, np.arange(len(knots)), knots[:, c]) for c in range(3)], axis=1)
        frames[:, j, :] = p.base[j] + p.amplitude[j] * wave
    if spec.units == "m":
        frames *= 1e-3
    names = [f"joint{j}" for j in range(n)]
    return MotionSequence(fps=float(spec.fps), units=spec.units, joint_names=names, frames=frames)
