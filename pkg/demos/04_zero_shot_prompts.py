"""Zero-shot shape classification with a prompt ensemble.

Each class score is the mean image-to-text score over every rendered
template. Even without training, the ensemble is a well-defined classifier;
after a few hundred steps it is far above the 1-in-4 chance level.
"""

import numpy as np

from filigrain import TrainConfig
from filigrain.evaluation import zero_shot_predict
from filigrain.prompts import expand_grid, generic_grid
from filigrain.synth import generate_dataset
from filigrain.training import build_model, train

cfg = TrainConfig(steps=300)
grid = generic_grid()
shapes = list(cfg.scene_config().shapes)
prompts, owner = [], []
for c, shape in enumerate(shapes):
    rendered = expand_grid(grid, shape, dedupe=True)
    prompts += rendered
    owner += [c] * len(rendered)
print(f"{len(prompts)} prompts, e.g. {prompts[:3]}")

items = generate_dataset(99, 200, cfg.scene_config(min_objects=1, max_objects=1), "test")
truth = np.array([shapes.index(s.objects[0].shape) for s, _ in items])
images = np.stack([s.image for s, _ in items])

for label, model in (("untrained", build_model(cfg, generate_dataset(cfg.seed, cfg.train_size, cfg.scene_config()))),
                     (f"after {cfg.steps} steps", train(cfg).model)):
    pred, _ = zero_shot_predict(model.embed_images(images), model.embed_texts(prompts), owner, len(shapes))
    print(f"{label:18s} shape accuracy {np.mean(pred == truth):.3f}")
