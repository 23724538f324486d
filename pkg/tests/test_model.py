import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionpred import autodiff as ad
from motionpred import losses
from motionpred.autodiff import ShapeError, Tensor
from motionpred.checkpoint import CheckpointError
from motionpred.model import (
    ModelConfig,
    analytic_param_count,
    decoder_forward,
    encoder_forward,
    init_model,
    load_predictor,
    param_count,
    predict,
    predict_global,
    saggb_forward,
    saggb_pose_graph,
    saggb_sample_graph,
    save_predictor,
    tcn_forward,
    zero_decoder,
)

FULL_SIZE = ModelConfig(n_joints=22, in_frames=10, out_frames=25, feature_dim=128, n_blocks=6, key_dim=32, tcn_kernel=3)
TOY = ModelConfig(n_joints=4, in_frames=5, out_frames=6, feature_dim=8, n_blocks=2, key_dim=4, coord_scale=1.0)


def softmax_oracle(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@pytest.fixture
def toy():
    return init_model(TOY, seed=3)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(tcn_kernel=2)
    with pytest.raises(ValueError):
        ModelConfig(feature_dim=0)
    with pytest.raises(ValueError):
        ModelConfig(coord_dim=2)


def test_init_deterministic():
    a, b = init_model(TOY, 7), init_model(TOY, 7)
    for name in a.params:
        assert a.params[name].data.tobytes() == b.params[name].data.tobytes()
    c = init_model(TOY, 8)
    assert any(not np.array_equal(a.params[n].data, c.params[n].data) for n in a.params)


def test_biases_start_at_zero(toy):
    for name, t in toy.params.items():
        if name.endswith("bias"):
            assert not t.data.any(), name


# graph generation ------------------------------------------------------------

def test_pose_graph_matches_direct_oracle(toy):
    rng = np.random.default_rng(0)
    layer = toy.blocks[0].saggb
    x = rng.uniform(-1, 1, (4, 8))
    q, k = x @ layer.w_query.data, x @ layer.w_key.data
    expected = softmax_oracle(q @ k.T / np.sqrt(4))
    got = saggb_pose_graph(layer, Tensor(x)).data
    np.testing.assert_allclose(got, expected, atol=1e-14)
    np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-9)


def test_identical_joints_give_uniform_graph(toy):
    x = np.tile(np.random.default_rng(1).uniform(-1, 1, 8), (4, 1))
    np.testing.assert_allclose(saggb_pose_graph(toy.blocks[0].saggb, Tensor(x)).data, 0.25, atol=1e-15)


def test_single_joint_graph_is_one():
    model = init_model(ModelConfig(n_joints=1, in_frames=3, out_frames=2, feature_dim=5, key_dim=2, n_blocks=1), 0)
    g = saggb_pose_graph(model.blocks[0].saggb, Tensor(np.ones((1, 5))))
    np.testing.assert_array_equal(g.data, [[1.0]])


def test_sample_graph_reductions(toy):
    rng = np.random.default_rng(2)
    layer = toy.blocks[0].saggb
    one = rng.uniform(-1, 1, (1, 4, 8))
    np.testing.assert_allclose(saggb_sample_graph(layer, Tensor(one)).data,
                               saggb_pose_graph(layer, Tensor(one[0])).data, atol=1e-15)
    repeated = np.repeat(one, 7, axis=0)
    np.testing.assert_allclose(saggb_sample_graph(layer, Tensor(repeated)).data,
                               7 * saggb_pose_graph(layer, Tensor(one[0])).data, atol=1e-13)
    with pytest.raises(ShapeError):
        saggb_sample_graph(layer, Tensor(np.ones((4, 8))))


def test_sample_graph_row_sums():
    model = init_model(ModelConfig(n_joints=5, in_frames=10, out_frames=3, feature_dim=6, key_dim=3, n_blocks=1), 0)
    rng = np.random.default_rng(4)
    for _ in range(10):
        a = saggb_sample_graph(model.blocks[0].saggb, Tensor(rng.uniform(-3, 3, (10, 5, 6)))).data
        np.testing.assert_allclose(a.sum(axis=1), 10.0, atol=1e-8)


def test_saggb_zero_weight_gives_zero(toy):
    layer = toy.blocks[0].saggb
    layer.w_graph.data[...] = 0
    out = saggb_forward(layer, Tensor(np.random.default_rng(0).uniform(-1, 1, (5, 4, 8))))
    assert not out.data.any()


def test_saggb_single_joint_closed_form():
    cfg = ModelConfig(n_joints=1, in_frames=4, out_frames=2, feature_dim=3, key_dim=2, n_blocks=1)
    layer = init_model(cfg, 5).blocks[0].saggb
    x = np.random.default_rng(5).uniform(-1, 1, (4, 1, 3))
    expected = np.tanh(4 * x @ layer.w_graph.data)
    out = saggb_forward(layer, Tensor(x)).data
    np.testing.assert_allclose(out, expected, atol=1e-14)
    assert np.all(np.abs(out) < 1)


# tcn -------------------------------------------------------------------------

def test_tcn_identity_kernel(toy):
    block = toy.blocks[0]
    block.tcn_kernels.data[...] = 0
    block.tcn_kernels.data[1] = np.eye(8)
    x = np.random.default_rng(0).uniform(-2, 2, (5, 4, 8))
    np.testing.assert_allclose(tcn_forward(block, Tensor(x)).data, np.tanh(x), atol=1e-15)


def test_tcn_matches_loop_oracle(toy):
    block = toy.blocks[1]
    rng = np.random.default_rng(9)
    block.tcn_bias.data[...] = rng.uniform(-1, 1, 8)
    x = rng.uniform(-1, 1, (5, 4, 8))
    w, b = block.tcn_kernels.data, block.tcn_bias.data
    expected = np.empty((5, 4, 8))
    for t in range(5):
        acc = np.tile(b, (4, 1))
        for k in range(3):
            src = t + k - 1
            if 0 <= src < 5:
                acc = acc + x[src] @ w[k]
        expected[t] = np.tanh(acc)
    np.testing.assert_allclose(tcn_forward(block, Tensor(x)).data, expected, atol=1e-12)


def test_tcn_shape_full_size():
    block = init_model(FULL_SIZE, 0).blocks[0]
    out = tcn_forward(block, Tensor(np.zeros((10, 22, 128))))
    assert out.shape == (10, 22, 128)


# encoder / decoder -------------------------------------------------------------

def test_full_size_shapes():
    model = init_model(FULL_SIZE, 0)
    obs = np.random.default_rng(0).uniform(-500, 500, (10, 22, 3))
    fmap = encoder_forward(model, Tensor(obs))
    assert fmap.shape == (10, 22, 128)
    out = decoder_forward(model, fmap, Tensor(obs[-1]))
    assert out.shape == (25, 22, 3)
    assert np.all(np.isfinite(out.data))


def test_zero_input_zero_features(toy):
    fmap = encoder_forward(toy, Tensor(np.zeros((5, 4, 3))))
    assert not fmap.data.any()


def test_no_blocks_is_input_projection():
    cfg = ModelConfig(n_joints=3, in_frames=4, out_frames=2, feature_dim=5, key_dim=2, n_blocks=0, coord_scale=0.5)
    model = init_model(cfg, 1)
    obs = np.random.default_rng(1).uniform(-1, 1, (4, 3, 3))
    expected = (obs * 0.5) @ model.input_weight.data + model.input_bias.data
    np.testing.assert_allclose(encoder_forward(model, Tensor(obs)).data, expected, atol=1e-15)


def test_zeroed_decoder_is_zero_velocity(toy):
    zero_decoder(toy)
    obs = np.random.default_rng(2).uniform(-1, 1, (3, 5, 4, 3))
    out = predict(toy, Tensor(obs)).data
    np.testing.assert_array_equal(out, losses.zero_velocity_baseline(obs, 6))


def test_predict_is_pure(toy):
    obs = Tensor(np.random.default_rng(3).uniform(-1, 1, (5, 4, 3)))
    assert predict(toy, obs).data.tobytes() == predict(toy, obs).data.tobytes()


def test_batched_matches_single(toy):
    obs = np.random.default_rng(4).uniform(-1, 1, (3, 5, 4, 3))
    batched = predict(toy, Tensor(obs)).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], predict(toy, Tensor(obs[i])).data, atol=1e-13)


def test_global_translation_carries_through(toy):
    rng = np.random.default_rng(5)
    obs = rng.uniform(-1, 1, (5, 4, 3))
    c = np.array([10.0, -3.0, 0.25])
    base = predict_global(toy, obs, root_joint=0)
    shifted = predict_global(toy, obs + c, root_joint=0)
    np.testing.assert_allclose(shifted - base, np.broadcast_to(c, base.shape), atol=1e-9)


def test_shape_errors(toy):
    with pytest.raises(ShapeError):
        predict(toy, Tensor(np.zeros((4, 4, 3))))
    with pytest.raises(ShapeError):
        decoder_forward(toy, Tensor(np.zeros((5, 4, 7))), Tensor(np.zeros((4, 3))))


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 5), t_in=st.integers(1, 6), t_out=st.integers(1, 6), cf=st.integers(1, 6),
       dk=st.integers(1, 4), blocks=st.integers(0, 2), k=st.sampled_from([1, 3, 5]), batch=st.integers(0, 2))
def test_shapes_over_random_configs(n, t_in, t_out, cf, dk, blocks, k, batch):
    cfg = ModelConfig(n_joints=n, in_frames=t_in, out_frames=t_out, feature_dim=cf, key_dim=dk,
                      n_blocks=blocks, tcn_kernel=k, coord_scale=1.0)
    model = init_model(cfg, 0)
    lead = (batch,) if batch else ()
    obs = Tensor(np.random.default_rng(0).uniform(-1, 1, lead + (t_in, n, 3)))
    assert encoder_forward(model, obs).shape == lead + (t_in, n, cf)
    assert predict(model, obs).shape == lead + (t_out, n, 3)
    assert param_count(model) == analytic_param_count(cfg)


# parameter count ------------------------------------------------------------------

def test_minimal_config_hand_count():
    cfg = ModelConfig(n_joints=1, in_frames=1, out_frames=1, feature_dim=1, key_dim=1, n_blocks=0)
    # input 3x1 + 1; time maps 4 x (1x1 + 1); mlp 1x3 + 3
    assert param_count(init_model(cfg, 0)) == 4 + 8 + 6


def test_block_weights_scale_quadratically():
    def block_weights(cf):
        model = init_model(ModelConfig(feature_dim=cf, key_dim=32, n_blocks=1), 0)
        return sum(t.data.size for name, t in model.params.items() if name.startswith("blocks."))

    ratio = block_weights(256) / block_weights(128)
    assert 3.5 < ratio < 4.0


def test_full_size_config_is_lightweight():
    count = param_count(init_model(FULL_SIZE, 0))
    assert count == analytic_param_count(FULL_SIZE) == 446260
    assert count < 1.2e6


# end-to-end gradients ------------------------------------------------------------

def test_end_to_end_gradients(toy):
    rng = np.random.default_rng(11)
    for name, t in toy.params.items():
        t.data[...] += rng.uniform(-0.1, 0.1, t.shape)
    u = losses.UncertaintyParams(6, rng.uniform(-1, 1, 6))
    store = toy.params.merged(u.params)
    obs = rng.uniform(-1, 1, (2, 5, 4, 3))
    target = rng.uniform(-1, 1, (2, 6, 4, 3))
    cfg = losses.LossConfig()
    errors = ad.grad_check(lambda s: losses.combined_loss(predict(toy, Tensor(obs)), target, cfg, u), store)
    assert set(errors) == set(store.names())
    assert max(errors.values()) < 1e-4


# checkpoints ---------------------------------------------------------------------

def test_checkpoint_roundtrip(toy, tmp_path):
    path = tmp_path / "m.bin"
    save_predictor(path, toy)
    loaded, header = load_predictor(path, expected=TOY)
    assert header["kind"] == "predictor"
    for name in toy.params:
        assert loaded.params[name].data.tobytes() == toy.params[name].data.tobytes()


def test_checkpoint_rejects_mismatch(toy, tmp_path):
    path = tmp_path / "m.bin"
    save_predictor(path, toy)
    with pytest.raises(CheckpointError):
        load_predictor(path, expected=ModelConfig(**{**TOY.to_dict(), "feature_dim": 16}))
    path.write_bytes(b"garbage-bytes-here")
    with pytest.raises(CheckpointError):
        load_predictor(path)


def test_checkpoint_layout(toy, tmp_path):
    import json
    import struct

    path = tmp_path / "m.bin"
    save_predictor(path, toy)
    raw = path.read_bytes()
    magic, version, hlen = struct.unpack_from("<8sII", raw)
    assert magic == b"MOTPRED\x00" and version == 1
    header = json.loads(raw[16:16 + hlen])
    assert [n for n, _ in header["tensors"]] == toy.params.names()
    payload = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    assert payload.size == param_count(toy)
    np.testing.assert_array_equal(payload[:24], toy.params["input_proj.weight"].data.ravel())
