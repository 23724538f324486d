"""Config-driven experiments: train, evaluate, predict and gradient-check.

Run configs are YAML files with the sections ``model``, ``loss``,
``optimizer``, ``training``, ``data`` and ``eval``. Only ``data`` is
required; every key is validated and unknown keys are rejected. See the
README for the full key list.

Training log (``train.log``) columns, tab separated, one line per step,
values rendered with ``%.17g``::

    step  loss  adaptive  salient  mean_sigma  batch_mpjpe

``step`` is the number of optimizer updates already applied when the batch
was evaluated. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .checkpoint import CheckpointError, read_tensors, write_tensors
from .data import (
    DataError,
    SynthSpec,
    WindowPair,
    downsample,
    load_index,
    load_sequence,
    remove_global_translation,
    save_sequence,
    split_train_val,
    synth_generate,
    window_split,
)
from .losses import (
    DEFAULT_JITTER_WINDOWS_MS,
    LossConfig,
    MetricsReport,
    UncertaintyParams,
    evaluate,
    loss_terms,
    mpjpe,
    mpjpe_at_horizons,
    zero_velocity_baseline,
)
from .model import ModelConfig, Predictor, init_model, load_params_into, param_count, predict, predict_global

LOG_COLUMNS = ("step", "loss", "adaptive", "salient", "mean_sigma", "batch_mpjpe")


class ConfigError(ValueError):
    reason = "config-error"


class TrainingError(RuntimeError):
    reason = "training-error"


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 2000
    batch_size: int = 16
    seed: int = 0
    checkpoint_every: int = 0  # 0 writes only the final checkpoint

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.checkpoint_every < 0:
            raise ValueError("steps and checkpoint_every must be >= 0, batch_size >= 1")


@dataclass(frozen=True)
class DataConfig:
    source: str
    synthetic: SynthSpec | None = None
    n_sequences: int = 16
    synth_seed: int = 0
    paths: tuple[str, ...] = ()
    index: str | None = None
    stride: int = 1
    val_fraction: float = 0.2
    root_joint: int = 0
    target_fps: float | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "files"):
            raise ValueError(f"source must be 'synthetic' or 'files', got {self.source!r}")
        if self.source == "synthetic" and self.synthetic is None:
            raise ValueError("synthetic source needs a 'synthetic' block")
        if self.source == "files" and not self.paths and self.index is None:
            raise ValueError("files source needs 'paths' or 'index'")
        if self.stride < 1 or self.n_sequences < 1:
            raise ValueError("stride and n_sequences must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.root_joint < 0:
            raise ValueError("root_joint must be >= 0")


@dataclass(frozen=True)
class EvalConfig:
    horizons_ms: tuple[float, ...] = (80, 160, 320, 400, 560, 1000)
    jitter_windows_ms: tuple[tuple[float, float], ...] = DEFAULT_JITTER_WINDOWS_MS


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    base_dir: str = "."

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        d["loss"]["lambda"] = d["loss"].pop("lam")
        return d

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, training=dataclasses.replace(self.training, seed=seed))


_SECTIONS = {"model", "loss", "optimizer", "training", "data", "eval"}
_DATA_REQUIRED = ("source",)


def _build(cls, section: str, raw, renames: dict | None = None, convert: dict | None = None):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"[{section}] must be a mapping")
    renames = renames or {}
    known = {renames.get(f.name, f.name) for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in [{section}]")
    inverse = {v: k for k, v in renames.items()}
    kwargs = {inverse.get(k, k): v for k, v in raw.items()}
    for key, fn in (convert or {}).items():
        if key in kwargs and kwargs[key] is not None:
            kwargs[key] = fn(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _synth_spec(raw) -> SynthSpec:
    raw = dict(raw)
    for key in ("amplitude_range", "frequency_range"):
        if key in raw:
            raw[key] = tuple(float(v) for v in raw[key])
    try:
        return _build(SynthSpec, "data.synthetic", raw)
    except DataError as exc:
        raise ConfigError(f"[data.synthetic] {exc}") from None


def config_from_dict(raw: dict, base_dir=".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections")
    unknown = sorted(set(raw) - _SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s) {unknown}")
    if "data" not in raw:
        raise ConfigError("missing required section [data]")
    data_raw = raw["data"] or {}
    missing = [k for k in _DATA_REQUIRED if k not in data_raw]
    if missing:
        raise ConfigError(f"[data] missing required key(s) {missing}")
    data = _build(DataConfig, "data", data_raw, convert={
        "synthetic": _synth_spec, "paths": lambda p: tuple(str(x) for x in p)})
    return RunConfig(
        data=data,
        model=_build(ModelConfig, "model", raw.get("model")),
        loss=_build(LossConfig, "loss", raw.get("loss"), renames={"lam": "lambda"}),
        optimizer=_build(OptimizerConfig, "optimizer", raw.get("optimizer")),
        training=_build(TrainingConfig, "training", raw.get("training")),
        eval=_build(EvalConfig, "eval", raw.get("eval"), convert={
            "horizons_ms": lambda v: tuple(float(x) for x in v),
            "jitter_windows_ms": lambda v: tuple((float(a), float(b)) for a, b in v)}),
        base_dir=str(base_dir),
    )


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    return config_from_dict(raw or {}, base_dir=path.parent)


def config_from_checkpoint_header(header: dict) -> RunConfig:
    return config_from_dict(header["run_config"], base_dir=header.get("base_dir", "."))


# data -------------------------------------------------------------------------

@dataclass
class Dataset:
    train: list[WindowPair]
    val: list[WindowPair]
    fps: float
    units: str
    joint_names: list[str]
    actions: dict[str, str] = field(default_factory=dict)  # source_id -> action

    def split(self, name: str) -> list[WindowPair]:
        if name == "train":
            return self.train
        if name == "val":
            return self.val
        if name == "all":
            return self.train + self.val
        raise ValueError(f"unknown split {name!r}")


def _load_sequences(cfg: RunConfig):
    d = cfg.data
    if d.source == "synthetic":
        return [(synth_generate(d.synthetic, d.synth_seed + i), "", f"synth-{d.synth_seed + i}")
                for i in range(d.n_sequences)]
    base = Path(cfg.base_dir)
    seqs = [(load_sequence(base / p), "", str(p)) for p in d.paths]
    if d.index is not None:
        seqs += load_index(base / d.index)
    return seqs


def build_dataset(cfg: RunConfig) -> Dataset:
    m, d = cfg.model, cfg.data
    seqs = _load_sequences(cfg)
    pairs, actions = [], {}
    fps = units = names = None
    for seq, action, sid in seqs:
        if d.target_fps is not None:
            seq = downsample(seq, d.target_fps)
        if seq.n_joints != m.n_joints:
            raise DataError(f"{sid}: {seq.n_joints} joints but model expects {m.n_joints}")
        if fps is None:
            fps, units, names = seq.fps, seq.units, seq.joint_names
        elif seq.fps != fps or seq.units != units:
            raise DataError(f"{sid}: fps/units differ from the first sequence")
        seq = remove_global_translation(seq, d.root_joint)
        pairs += window_split(seq, m.in_frames, m.out_frames, d.stride, source_id=sid)
        actions[sid] = action
    if not pairs:
        raise DataError("no training windows: sequences shorter than in_frames + out_frames")
    if d.val_fraction > 0:
        train, val = split_train_val(pairs, 1.0 - d.val_fraction, cfg.training.seed)
    else:
        train, val = pairs, []
    return Dataset(train, val, fps, units, names, actions)


def stack(pairs: list[WindowPair]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([p.obs for p in pairs]), np.stack([p.target for p in pairs])


# training ------------------------------------------------------------------------

@dataclass
class TrainState:
    predictor: Predictor
    uncertainty: UncertaintyParams
    adam: AdamState
    step: int = 0
    initial_train_mpjpe: float = float("nan")

    @property
    def store(self) -> ad.ParamStore:
        return self.predictor.params.merged(self.uncertainty.params)


def new_state(cfg: RunConfig) -> TrainState:
    predictor = init_model(cfg.model, cfg.training.seed)
    unc = UncertaintyParams(cfg.model.out_frames)
    o = cfg.optimizer
    adam = AdamState.for_store(predictor.params.merged(unc.params), lr=o.lr, beta1=o.beta1, beta2=o.beta2,
                               epsilon=o.epsilon)
    return TrainState(predictor, unc, adam)


def save_training_checkpoint(path, cfg: RunConfig, state: TrainState) -> None:
    tensors = {f"model/{n}": t.data for n, t in state.predictor.params.items()}
    tensors[f"uncertainty/{UncertaintyParams.NAME}"] = state.uncertainty.log_sigma.data
    for n in state.adam.m:
        tensors[f"adam.m/{n}"] = state.adam.m[n]
        tensors[f"adam.v/{n}"] = state.adam.v[n]
    header = {
        "kind": "training",
        "model_config": cfg.model.to_dict(),
        "run_config": cfg.to_dict(),
        "base_dir": cfg.base_dir,
        "step": state.step,
        "adam_step_count": state.adam.step_count,
        "initial_train_mpjpe": state.initial_train_mpjpe,
    }
    write_tensors(path, header, tensors)


def load_training_checkpoint(path, cfg: RunConfig | None = None) -> tuple[RunConfig, TrainState]:
    header, tensors = read_tensors(path)
    if header.get("kind") != "training":
        raise CheckpointError(f"{path}: not a training checkpoint")
    saved = config_from_checkpoint_header(header)
    cfg = cfg or saved
    if saved.model != cfg.model:
        raise CheckpointError(f"{path}: model config differs from the run config")
    state = new_state(cfg)
    load_params_into(state.predictor, {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")})
    state.uncertainty.log_sigma.data[...] = tensors[f"uncertainty/{UncertaintyParams.NAME}"]
    for n in state.adam.m:
        state.adam.m[n][...] = tensors[f"adam.m/{n}"]
        state.adam.v[n][...] = tensors[f"adam.v/{n}"]
    state.adam.step_count = int(header["adam_step_count"])
    state.step = int(header["step"])
    state.initial_train_mpjpe = float(header["initial_train_mpjpe"])
    return cfg, state


def load_any_checkpoint(path) -> tuple[Predictor, dict]:
    """Predictor from either a training or a bare predictor checkpoint."""
    header, tensors = read_tensors(path)
    try:
        model_cfg = ModelConfig.from_dict(header["model_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model config ({exc})") from None
    predictor = init_model(model_cfg, 0)
    load_params_into(predictor, {k.removeprefix("model/"): v for k, v in tensors.items()})
    return predictor, header


def dataset_mpjpe(predictor: Predictor, pairs: list[WindowPair], chunk: int = 512) -> float:
    """Mean MPJPE over windows, reduced in a fixed order."""
    total, count = 0.0, 0
    for i in range(0, len(pairs), chunk):
        obs, tgt = stack(pairs[i:i + chunk])
        e = mpjpe(predict(predictor, Tensor(obs)), tgt).item()
        total += e * len(obs)
        count += len(obs)
    return total / count


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class TrainResult:
    state: TrainState
    checkpoint: Path
    final_train_mpjpe: float
    log_path: Path


def cmd_train(cfg: RunConfig, out_dir, resume=None, dataset: Dataset | None = None,
              echo: Callable[[str], None] | None = None) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = dataset or build_dataset(cfg)
    if resume is not None:
        cfg, state = load_training_checkpoint(resume, cfg)
    else:
        state = new_state(cfg)
        state.initial_train_mpjpe = dataset_mpjpe(state.predictor, ds.train)
    store = state.store
    obs_all, tgt_all = stack(ds.train)
    n = len(obs_all)
    batch = min(cfg.training.batch_size, n)
    log_path = out / "train.log"
    mode = "a" if resume is not None and log_path.exists() else "w"
    every = cfg.training.checkpoint_every
    with open(log_path, mode) as log:
        if mode == "w":
            log.write("# " + "\t".join(LOG_COLUMNS) + "\n")
        while state.step < cfg.training.steps:
            rng = np.random.default_rng([cfg.training.seed, state.step])
            idx = rng.choice(n, size=batch, replace=False)
            pred = predict(state.predictor, Tensor(obs_all[idx]))
            total, adaptive, salient = loss_terms(pred, tgt_all[idx], cfg.loss, state.uncertainty)
            if not np.isfinite(total.data):
                raise TrainingError(f"non-finite loss at step {state.step}")
            batch_err = mpjpe(pred.detach(), tgt_all[idx]).item()
            ad.backward(total, store)
            ad.adam_step(store, state.adam)
            row = (state.step, total.item(), adaptive.item(), salient.item(),
                   float(state.uncertainty.sigma.mean()), batch_err)
            line = "\t".join([str(row[0])] + [_fmt(v) for v in row[1:]])
            log.write(line + "\n")
            if echo:
                echo(line)
            state.step += 1
            if every and state.step % every == 0 and state.step < cfg.training.steps:
                save_training_checkpoint(out / f"step-{state.step:06d}.ckpt", cfg, state)
        final = dataset_mpjpe(state.predictor, ds.train)
        log.write(f"# final_train_mpjpe\t{_fmt(final)}\n")
    ckpt = out / "final.ckpt"
    save_training_checkpoint(ckpt, cfg, state)
    summary = {
        "steps": state.step,
        "param_count": param_count(state.predictor),
        "initial_train_mpjpe": state.initial_train_mpjpe,
        "final_train_mpjpe": final,
        "n_train_windows": len(ds.train),
        "n_val_windows": len(ds.val),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return TrainResult(state, ckpt, final, log_path)


# evaluation ---------------------------------------------------------------------------

def evaluate_predictor(predictor: Predictor, pairs: list[WindowPair], cfg: RunConfig, fps: float,
                       units: str, actions: dict[str, str] | None = None) -> dict[str, MetricsReport]:
    if not pairs:
        raise DataError("no windows to evaluate")
    obs, tgt = stack(pairs)
    preds = np.concatenate([predict(predictor, Tensor(obs[i:i + 512])).data for i in range(0, len(obs), 512)])
    rows = {"model": preds, "zero_velocity": zero_velocity_baseline(obs, cfg.model.out_frames)}
    out = {}
    for name, p in rows.items():
        report = evaluate(p, tgt, fps, cfg.eval.horizons_ms, cfg.eval.jitter_windows_ms, units)
        for action in sorted(set((actions or {}).values()) - {""}):
            sel = [i for i, w in enumerate(pairs) if actions.get(w.source_id) == action]
            if sel:
                report.per_action[action] = mpjpe_at_horizons(p[sel], tgt[sel], fps, list(report.mpjpe_by_horizon))
        out[name] = report
    return out


def report_dict(reports: dict[str, MetricsReport]) -> dict[str, float]:
    flat = {}
    for name, rep in reports.items():
        flat.update(rep.flat(prefix=f"{name}."))
    return flat


def format_table(flat: dict[str, float]) -> str:
    rows = sorted({k.split(".", 1)[0] for k in flat})
    cols = []
    for k in flat:
        c = k.split(".", 1)[1]
        if c not in cols:
            cols.append(c)
    lines = ["metric\t" + "\t".join(rows)]
    for c in cols:
        lines.append(c + "\t" + "\t".join(_fmt(flat.get(f"{r}.{c}", float("nan"))) for r in rows))
    return "\n".join(lines)


def cmd_eval(cfg: RunConfig, checkpoint, split: str = "val", dataset: Dataset | None = None) -> dict[str, float]:
    predictor, _ = load_any_checkpoint(checkpoint)
    if predictor.config != cfg.model:
        raise CheckpointError(f"{checkpoint}: model config does not match the run config")
    ds = dataset or build_dataset(cfg)
    return report_dict(evaluate_predictor(predictor, ds.split(split), cfg, ds.fps, ds.units, ds.actions))


# prediction ---------------------------------------------------------------------------

def cmd_predict(checkpoint, input_path, output_path, root_joint: int | None = None) -> np.ndarray:
    predictor, header = load_any_checkpoint(checkpoint)
    if root_joint is None:
        root_joint = int(header.get("run_config", {}).get("data", {}).get("root_joint", 0))
    seq = load_sequence(input_path)
    c = predictor.config
    if seq.n_joints != c.n_joints:
        raise DataError(f"{input_path}: {seq.n_joints} joints, checkpoint expects {c.n_joints}")
    if seq.n_frames < c.in_frames:
        raise DataError(f"{input_path}: {seq.n_frames} frames, need at least {c.in_frames}")
    frames = predict_global(predictor, seq.frames[-c.in_frames:], root_joint)
    save_sequence(seq.replace(frames=frames), output_path)
    return frames


# gradient check ------------------------------------------------------------------------

TOY_MODEL = ModelConfig(n_joints=4, in_frames=5, out_frames=6, feature_dim=8, n_blocks=2, key_dim=4,
                        coord_scale=1.0)


def gradcheck_errors(seed: int = 0, loss_cfg: LossConfig | None = None, model_cfg: ModelConfig = TOY_MODEL,
                     batch: int = 2, h: float = 1e-5) -> dict[str, float]:
    """Relative analytic-vs-central-difference error for every parameter tensor and the uncertainties."""
    loss_cfg = loss_cfg or LossConfig()
    rng = np.random.default_rng(seed)
    predictor = init_model(model_cfg, seed)
    for _, t in predictor.params.items():
        t.data[...] += rng.uniform(-0.1, 0.1, t.shape)
    unc = UncertaintyParams(model_cfg.out_frames, rng.uniform(-1, 1, model_cfg.out_frames))
    obs = rng.uniform(-1, 1, (batch, model_cfg.in_frames, model_cfg.n_joints, 3))
    tgt = rng.uniform(-1, 1, (batch, model_cfg.out_frames, model_cfg.n_joints, 3))
    store = predictor.params.merged(unc.params)

    def f(_):
        return loss_terms(predict(predictor, Tensor(obs)), tgt, loss_cfg, unc)[0]

    return ad.grad_check(f, store, h)


def cmd_gradcheck(cfg: RunConfig | None = None, seed: int = 0, tol: float = 1e-4,
                  echo: Callable[[str], None] = print) -> int:
    errors = gradcheck_errors(seed, cfg.loss if cfg else None)
    worst = 0.0
    for name, err in errors.items():
        echo(f"{name}\t{err:.3e}\t{'ok' if err < tol else 'FAIL'}")
        worst = max(worst, err)
    ok = all(e < tol for e in errors.values()) and all(math.isfinite(e) for e in errors.values())
    echo(f"max relative error {worst:.3e} -> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1
