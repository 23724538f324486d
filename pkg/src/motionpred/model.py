"""Encoder-decoder motion predictor with self-attention generated pose graphs.

The encoder lifts every joint's coordinates to ``feature_dim`` channels and
runs a stack of residual blocks. Each block builds a joint-by-joint graph per
frame by attention, sums those graphs over the observed frames into a single
per-sample graph, propagates features through it, then applies a temporal
convolution. The decoder treats time as the channel axis: four linear maps
along time (``T_in -> T_out -> T_out -> T_out -> T_out``) followed by a
per-joint projection back to 3D offsets, which are added to the last observed
pose.

All functions accept optional leading batch axes in front of the documented
``(T, N, C)`` shapes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, ShapeError, Tensor
from .checkpoint import CheckpointError, read_tensors, write_tensors


@dataclass(frozen=True)
class ModelConfig:
    n_joints: int = 22
    in_frames: int = 10
    out_frames: int = 25
    feature_dim: int = 128
    key_dim: int = 32
    n_blocks: int = 6
    tcn_kernel: int = 3
    coord_dim: int = 3
    # inputs are multiplied by this before the encoder, offsets divided by it
    # after the decoder; 0.1 suits millimetre data
    coord_scale: float = 0.1

    def __post_init__(self):
        for name in ("n_joints", "in_frames", "out_frames", "feature_dim", "key_dim", "tcn_kernel"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.n_blocks, (int, np.integer)) or self.n_blocks < 0:
            raise ValueError(f"n_blocks must be a non-negative integer, got {self.n_blocks!r}")
        if self.tcn_kernel % 2 == 0:
            raise ValueError(f"tcn_kernel must be odd, got {self.tcn_kernel}")
        if self.coord_dim != 3:
            raise ValueError("coord_dim is fixed at 3")
        if not (math.isfinite(self.coord_scale) and self.coord_scale > 0):
            raise ValueError(f"coord_scale must be positive, got {self.coord_scale}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class SaggbLayer:
    w_query: Tensor
    w_key: Tensor
    w_graph: Tensor

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.w_query.shape[1])


@dataclass
class EncoderBlock:
    saggb: SaggbLayer
    tcn_kernels: Tensor
    tcn_bias: Tensor


@dataclass
class Decoder:
    time_weights: list[Tensor]
    time_biases: list[Tensor]
    mlp_weight: Tensor
    mlp_bias: Tensor


@dataclass
class Predictor:
    config: ModelConfig
    params: ParamStore
    input_weight: Tensor
    input_bias: Tensor
    blocks: list[EncoderBlock]
    decoder: Decoder


def _xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(config: ModelConfig, seed: int = 0) -> Predictor:
    """Xavier-uniform weights and zero biases from a seeded generator."""
    if not isinstance(config, ModelConfig):
        raise TypeError("config must be a ModelConfig")
    rng = np.random.default_rng(seed)
    c, d, cf, dk, K = config.coord_dim, config.coord_dim, config.feature_dim, config.key_dim, config.tcn_kernel
    t_in, t_out = config.in_frames, config.out_frames
    store = ParamStore()

    w_in = store.add("input_proj.weight", _xavier(rng, (d, cf), d, cf))
    b_in = store.add("input_proj.bias", np.zeros(cf))

    blocks = []
    for i in range(config.n_blocks):
        p = f"blocks.{i}"
        layer = SaggbLayer(
            w_query=store.add(f"{p}.saggb.w_query", _xavier(rng, (cf, dk), cf, dk)),
            w_key=store.add(f"{p}.saggb.w_key", _xavier(rng, (cf, dk), cf, dk)),
            w_graph=store.add(f"{p}.saggb.w_graph", _xavier(rng, (cf, cf), cf, cf)),
        )
        kern = store.add(f"{p}.tcn.kernels", _xavier(rng, (K, cf, cf), K * cf, K * cf))
        bias = store.add(f"{p}.tcn.bias", np.zeros(cf))
        blocks.append(EncoderBlock(layer, kern, bias))

    time_w, time_b = [], []
    for j in range(4):
        n_in = t_in if j == 0 else t_out
        time_w.append(store.add(f"decoder.time{j + 1}.weight", _xavier(rng, (n_in, t_out), n_in, t_out)))
        time_b.append(store.add(f"decoder.time{j + 1}.bias", np.zeros(t_out)))
    mlp_w = store.add("decoder.mlp.weight", _xavier(rng, (cf, c), cf, c))
    mlp_b = store.add("decoder.mlp.bias", np.zeros(c))

    return Predictor(config, store, w_in, b_in, blocks, Decoder(time_w, time_b, mlp_w, mlp_b))


def param_count(predictor: Predictor) -> int:
    return predictor.params.num_scalars()


def analytic_param_count(config: ModelConfig) -> int:
    """Closed-form parameter count from the layer shapes."""
    d, cf, dk, K = config.coord_dim, config.feature_dim, config.key_dim, config.tcn_kernel
    t_in, t_out = config.in_frames, config.out_frames
    per_block = 2 * cf * dk + cf * cf + K * cf * cf + cf
    decoder = (t_in * t_out + t_out) + 3 * (t_out * t_out + t_out) + (cf * d + d)
    return (d * cf + cf) + config.n_blocks * per_block + decoder


def _check_features(x: Tensor, n_channels: int, what: str) -> None:
    if x.ndim < 2 or x.shape[-1] != n_channels:
        raise ShapeError(f"{what}: expected trailing feature dim {n_channels}, got shape {x.shape}")


def saggb_pose_graph(layer: SaggbLayer, frame_features) -> Tensor:
    """Attention graph over joints for one frame: ``(..., N, C) -> (..., N, N)``."""
    x = ad._as_tensor(frame_features)
    _check_features(x, layer.w_query.shape[0], "saggb_pose_graph")
    q = ad.matmul(x, layer.w_query)
    k = ad.matmul(x, layer.w_key)
    logits = ad.matmul(q, ad.transpose(k, _swap_last(k.ndim))) * layer.scale
    return ad.softmax_rows(logits)


def saggb_sample_graph(layer: SaggbLayer, features) -> Tensor:
    """Sum of per-frame graphs over the frame axis: ``(..., T, N, C) -> (..., N, N)``."""
    x = ad._as_tensor(features)
    if x.ndim < 3:
        raise ShapeError(f"saggb_sample_graph expects (..., T, N, C), got {x.shape}")
    if x.shape[-3] == 0:
        raise ShapeError("saggb_sample_graph needs at least one frame")
    return ad.reduce("sum", saggb_pose_graph(layer, x), axis=-3)


def saggb_forward(layer: SaggbLayer, features) -> Tensor:
    """tanh(A_sample X W) with one shared graph per sample across all frames."""
    x = ad._as_tensor(features)
    graph = saggb_sample_graph(layer, x)
    n = graph.shape[-1]
    graph = ad.reshape(graph, graph.shape[:-2] + (1, n, n))
    return ad.elementwise("tanh", ad.matmul(ad.matmul(graph, x), layer.w_graph))


def tcn_forward(block: EncoderBlock, features) -> Tensor:
    return ad.elementwise("tanh", ad.conv_time(features, block.tcn_kernels, block.tcn_bias))


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _check_input(predictor: Predictor, obs: Tensor) -> None:
    cfg = predictor.config
    want = (cfg.in_frames, cfg.n_joints, cfg.coord_dim)
    if obs.ndim < 3 or obs.shape[-3:] != want:
        raise ShapeError(f"observation must end in {want}, got {obs.shape}")


def encoder_forward(predictor: Predictor, obs) -> Tensor:
    """``(..., T_in, N, 3) -> (..., T_in, N, C_f)``."""
    obs = ad._as_tensor(obs)
    _check_input(predictor, obs)
    x = ad.matmul(obs * predictor.config.coord_scale, predictor.input_weight) + predictor.input_bias
    for block in predictor.blocks:
        x = x + tcn_forward(block, saggb_forward(block.saggb, x))
    return x


def decode_offsets(predictor: Predictor, fmap) -> Tensor:
    """Displacements from the last observed pose, ``(..., T_out, N, 3)``, in input units."""
    cfg = predictor.config
    fmap = ad._as_tensor(fmap)
    want = (cfg.in_frames, cfg.n_joints, cfg.feature_dim)
    if fmap.ndim < 3 or fmap.shape[-3:] != want:
        raise ShapeError(f"feature map must end in {want}, got {fmap.shape}")
    lead = fmap.ndim - 3
    # (..., T, N, C) -> (..., N, C, T): time becomes the channel axis
    to_time_last = tuple(range(lead)) + (lead + 1, lead + 2, lead)
    h = ad.transpose(fmap, to_time_last)
    dec = predictor.decoder
    for j, (w, b) in enumerate(zip(dec.time_weights, dec.time_biases)):
        h = ad.matmul(h, w) + b
        if j < 3:
            h = ad.elementwise("tanh", h)
    to_time_first = tuple(range(lead)) + (lead + 2, lead, lead + 1)
    h = ad.transpose(h, to_time_first)
    offsets = ad.matmul(h, dec.mlp_weight) + dec.mlp_bias
    return offsets * (1.0 / cfg.coord_scale)


def decoder_forward(predictor: Predictor, fmap, last_obs) -> Tensor:
    """``last_obs`` broadcast over the output frames plus decoded offsets."""
    last = ad._as_tensor(last_obs)
    cfg = predictor.config
    if last.shape[-2:] != (cfg.n_joints, cfg.coord_dim):
        raise ShapeError(f"last_obs must end in ({cfg.n_joints}, 3), got {last.shape}")
    last = ad.reshape(last, last.shape[:-2] + (1,) + last.shape[-2:])
    return decode_offsets(predictor, fmap) + last


def predict(predictor: Predictor, obs) -> Tensor:
    obs = ad._as_tensor(obs)
    _check_input(predictor, obs)
    return decoder_forward(predictor, encoder_forward(predictor, obs), obs[..., -1, :, :])


def predict_global(predictor: Predictor, obs, root_joint: int = 0) -> np.ndarray:
    """Predict from un-centred poses.

    The encoder sees root-centred input; decoded offsets are added to the raw
    last observed pose, so a global translation of ``obs`` translates the
    prediction by the same amount.
    """
    obs = np.asarray(obs.data if isinstance(obs, Tensor) else obs, dtype=np.float64)
    if not 0 <= root_joint < obs.shape[-2]:
        raise IndexError(f"root joint {root_joint} out of range")
    centred = obs - obs[..., root_joint:root_joint + 1, :]
    offsets = decode_offsets(predictor, encoder_forward(predictor, Tensor(centred)))
    return offsets.data + obs[..., -1:, :, :]


def zero_decoder(predictor: Predictor) -> None:
    """Set every decoder weight and bias to zero (prediction becomes zero-velocity)."""
    for name, t in predictor.params.items():
        if name.startswith("decoder."):
            t.data[...] = 0.0


def save_predictor(path, predictor: Predictor, extra: dict | None = None) -> None:
    header = {"kind": "predictor", "model_config": predictor.config.to_dict()}
    if extra:
        header.update(extra)
    write_tensors(path, header, {name: t.data for name, t in predictor.params.items()})


def load_params_into(predictor: Predictor, tensors: dict[str, np.ndarray]) -> None:
    names = predictor.params.names()
    missing = [n for n in names if n not in tensors]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters {missing[:3]}")
    for name in names:
        arr = tensors[name]
        t = predictor.params[name]
        if arr.shape != t.shape:
            raise CheckpointError(f"parameter {name!r} has shape {arr.shape}, expected {t.shape}")
        t.data[...] = arr


def load_predictor(path, expected: ModelConfig | None = None) -> tuple[Predictor, dict]:
    """Load a predictor; reject the file if its config differs from ``expected``."""
    header, tensors = read_tensors(path)
    try:
        config = ModelConfig.from_dict(header["model_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model config ({exc})") from None
    if expected is not None and config != expected:
        raise CheckpointError(f"{path}: model config {config} does not match {expected}")
    predictor = init_model(config, seed=0)
    load_params_into(predictor, {k.removeprefix("model/"): v for k, v in tensors.items()})
    return predictor, header
