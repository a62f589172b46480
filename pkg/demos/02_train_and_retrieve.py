"""Train the token-wise model and the pooled baseline on synthetic scenes,
then compare held-out retrieval.

Held-out scenes always contain a colour/shape pair the models never saw
during training. The default run is short so it finishes in about a minute.
Pass a step count (2000 matches the acceptance setting) to get the full gap.

    python demos/02_train_and_retrieve.py 400
"""

import sys
import time

from filigrain import TrainConfig
from filigrain.experiments import heldout_gallery, heldout_retrieval
from filigrain.training import train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 400

for mode in ("filip", "global-baseline"):
    cfg = TrainConfig(mode=mode, steps=steps)
    t0 = time.perf_counter()
    result = train(cfg)
    first, last = result.log[0], result.log[-1]
    rep = heldout_retrieval(result.model, cfg, heldout_gallery(cfg))
    print(f"{mode:16s} loss {first[2]:.3f} -> {last[2]:.3f}  tau {last[3]:.4f}  "
          f"({time.perf_counter() - t0:.0f}s)")
    print(" " * 17 + "  ".join(f"{k} {100 * v:5.1f}" for k, v in rep.metrics().items()))
