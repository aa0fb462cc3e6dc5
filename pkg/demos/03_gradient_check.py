"""Verify the hand-written backward pass against central finite differences.

Runs a small dual-input model, compares every parameter's analytic gradient
of the soft Jaccard loss with (L(w+h) - L(w-h)) / 2h, and prints the worst
relative disagreement.
"""

import time

import numpy as np

import histoseg as hs
from histoseg.training import jaccard_distance_loss

config = hs.ModelConfig(patch_size=16, levels=1, base_channels=2, seed=11)
model = hs.build_model(config)
print(f"model: levels={config.levels}, base_channels={config.base_channels}, "
      f"{hs.count_parameters(model)} parameters")

rng = hs.SeededRng(3)
local = rng.uniform(0, 255, (1, 16, 16, 3))
glob = rng.uniform(0, 255, (1, 24, 24, 3))
target = (rng.uniform(0, 1, (1, 16, 16, 1)) < 0.4).astype(float)

probs, cache = hs.forward(model, local, glob)
loss, dpred = jaccard_distance_loss(probs, target)
grads = hs.backward(model, cache, dpred)
print(f"loss at the initial point: {loss:.6f}")

h = 1e-5
worst = 0.0
worst_name = ""
start = time.monotonic()
for name, tensor, analytic in zip(model.parameter_names(), model.parameters(), grads):
    flat = tensor.data.ravel()
    flat_grad = analytic.ravel()
    for k in range(flat.size):
        original = flat[k]
        flat[k] = original + h
        up, _ = jaccard_distance_loss(hs.forward(model, local, glob)[0], target)
        flat[k] = original - h
        down, _ = jaccard_distance_loss(hs.forward(model, local, glob)[0], target)
        flat[k] = original
        fd = (up - down) / (2 * h)
        rel = abs(flat_grad[k] - fd) / max(abs(flat_grad[k]), abs(fd), 1e-12)
        if rel > worst:
            worst, worst_name = rel, f"{name}[{k}]"
elapsed = time.monotonic() - start

print(f"checked every parameter in {elapsed:.1f}s")
print(f"worst relative error {worst:.3e} at {worst_name} (tolerance 1e-4)")
print("PASS" if worst < 1e-4 else "FAIL")
