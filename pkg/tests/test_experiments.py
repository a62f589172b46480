"""Short end-to-end runs on the default toy configuration."""

import numpy as np

from filigrain import TrainConfig
from filigrain.evaluation import zero_shot_predict
from filigrain.prompts import expand_grid, generic_grid
from filigrain.synth import generate_dataset
from filigrain.training import build_model, train


def test_loss_drops_within_200_steps():
    result = train(TrainConfig(seed=0, steps=201))
    losses = {step: loss for step, _, loss, _ in result.log}
    assert losses[200] < losses[0]


def test_untrained_zero_shot_near_chance():
    cfg = TrainConfig(seed=0)
    model = build_model(cfg, generate_dataset(cfg.seed, cfg.train_size, cfg.scene_config()))
    shapes = list(cfg.scene_config().shapes)
    prompts, owner = [], []
    for c, shape in enumerate(shapes):
        rendered = expand_grid(generic_grid(), shape, dedupe=True)
        prompts += rendered
        owner += [c] * len(rendered)
    items = generate_dataset(3, 200, cfg.scene_config(min_objects=1, max_objects=1), "test")
    truth = np.array([shapes.index(s.objects[0].shape) for s, _ in items])
    pred, _ = zero_shot_predict(model.embed_images(np.stack([s.image for s, _ in items])),
                                model.embed_texts(prompts), owner, len(shapes))
    assert abs(np.mean(pred == truth) - 0.25) <= 0.15
