"""Registering jittered noisy frames with a single-cluster TMG.

Fifty shifted, noisy copies of one template; plain averaging blurs the
structure, while a TMG with a shift grid infers each frame's translation and
recovers a sharp template with low per-pixel uncertainty (the microscopy
use-case: same parameter count as averaging, tied sensor variances).
"""

import numpy as np

from transmix import EmOptions, ImageShape, apply, build_translation_set
from transmix.synthgen import gen_shifted_template
from transmix.tmg import fit, init_tmg

rng = np.random.default_rng(0)
template = np.zeros((7, 7))
template[1:6, 2] = 1.0
template[5, 2:5] = 1.0
frames, truth = gen_shifted_template(seed=1, template=template, T=50,
                                     shift_range=1, sensor_noise=0.08)
shape = truth.params["shape"]

plain_mean = frames.mean(axis=0)
ts = build_translation_set(shape, 3, 3)
model = init_tmg(ts, 1, frames, seed=2, init="mean")
model, reports = fit(model, frames, 40, EmOptions(tie_psi=True), tol=0.0)

best = min(np.abs(model.mu[0] - apply(op, template.reshape(-1))).mean()
           for op in ts)
print(f"final log-likelihood: {reports[-1].loglik:.1f}")
print(f"per-pixel MAE, plain average : "
      f"{np.abs(plain_mean - template.reshape(-1)).mean():.4f}")
print(f"per-pixel MAE, TMG template  : {best:.4f} (best gauge alignment)")
print(f"learned tied sensor sigma    : {np.sqrt(model.psi[0]):.4f} "
      f"(true 0.08)")

print("\nrecovered template (rounded):")
print(np.round(model.mu[0].reshape(7, 7), 1))
