"""What the attention graph layer produces for one sample.

Each observed frame gets a row-stochastic joint-to-joint matrix; the
per-sample graph is their sum over time, so its rows add up to T_in.
"""

import numpy as np

from motionpred import model as M
from motionpred.data import SynthSpec, remove_global_translation, synth_generate

cfg = M.ModelConfig(n_joints=8, in_frames=10, out_frames=25, feature_dim=16, key_dim=8, n_blocks=1)
predictor = M.init_model(cfg, seed=0)
layer = predictor.blocks[0].saggb

seq = remove_global_translation(synth_generate(SynthSpec(), seed=3), root_joint=0)
obs = seq.frames[:cfg.in_frames]

# The layer sees projected features, just as inside the encoder.
features = obs * cfg.coord_scale @ predictor.input_weight.data + predictor.input_bias.data
per_frame = M.saggb_pose_graph(layer, features).data
sample = M.saggb_sample_graph(layer, features).data

np.set_printoptions(precision=2, suppress=True)
print("frame 0 graph (rows sum to 1):\n", per_frame[0])
print("row sums, frame 0:", per_frame[0].sum(-1))
print("sample graph row sums (= T_in):", sample.sum(-1))
print("strongest neighbour of each joint:", sample.argmax(-1))
