"""Training objectives and evaluation metrics side by side.

A noisy copy of the ground truth plays the role of a prediction. The
uncertainty-weighted loss, the first-frame-weighted loss and their blend are
printed, followed by MPJPE at fixed horizons and Jitter over time windows.
"""

import numpy as np

from motionpred import losses as L
from motionpred.data import SynthSpec, remove_global_translation, synth_generate, window_split

fps = 25
seq = remove_global_translation(synth_generate(SynthSpec(n_frames=60), seed=1), root_joint=0)
pairs = window_split(seq, 10, 25, stride=5)
obs = np.stack([p.obs for p in pairs])
target = np.stack([p.target for p in pairs])

rng = np.random.default_rng(0)
drift = np.linspace(0.5, 12.0, 25)[None, :, None, None]  # error grows with the horizon
pred = target + rng.normal(size=target.shape) * drift

u = L.UncertaintyParams(25)
cfg = L.LossConfig()  # lambda 0.3, omega 10
combined, adaptive, salient = L.loss_terms(pred, target, cfg, u)
print(f"adaptive {adaptive.item():.2f}   salient {salient.item():.2f}   combined {combined.item():.2f}")

for name, p in [("noisy", pred), ("zero-velocity", L.zero_velocity_baseline(obs, 25))]:
    report = L.evaluate(p, target, fps, horizons_ms=(80, 160, 320, 400, 560, 1000))
    print(f"\n{name}")
    for key, value in report.flat().items():
        print(f"  {key:22s} {value:10.3f}")

# Jitter is a third difference: it vanishes on smooth error curves.
t = np.arange(26.0)
print("\njitter of a quadratic error curve:", L.jitter_from_errors(0.5 * t ** 2 - 2 * t + 3, fps))
print("jitter of t^3 at 1 fps, 6 values:", L.jitter_from_errors(np.arange(6.0) ** 3, 1.0))
