"""Learning-rate schedule and LAMB on a quadratic bowl."""

import numpy as np

from filigrain import Tensor, lamb_step, lr_at, peak_lr
from filigrain.optim import LambState, ScheduleConfig

sched = ScheduleConfig(base_lr=6e-3, total_batch_size=8192, warmup_iters=3000, total_iters=100_000)
print(f"peak lr for batch 8192: {peak_lr(6e-3, 8192)}")
for step in (0, 1500, 2999, 3000, 50_000, 99_999):
    print(f"  step {step:6d}: {lr_at(step, sched):.6f}")

rng = np.random.default_rng(0)
target = rng.normal(size=10)
w = {"w": Tensor(rng.normal(size=10))}
state = LambState()
bowl = ScheduleConfig(0.05, 512, 10, 5000)
for step in range(5000):
    lamb_step(w, state, lr_at(step, bowl), grads={"w": w["w"].data - target})
    if step % 1000 == 999:
        print(f"step {step + 1}: |w - w*| = {np.linalg.norm(w['w'].data - target):.2e}, "
              f"trust ratio {state.trust_ratios['w']:.3f}")
