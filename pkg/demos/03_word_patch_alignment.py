"""Which caption word does each image patch pick?

Trains a small token-wise model (or loads one: ``python demos/03_word_patch_alignment.py run/final.bin``),
renders a held-out single-object scene and prints, for each of the 4x4
patches, the index of the most similar caption token. Starred cells point at
the colour or shape word.
"""

import sys


from filigrain import TrainConfig, token_spans
from filigrain.evaluation import alignment_export
from filigrain.experiments import ALIGN_PROMPT, alignment_probe
from filigrain.synth import generate_dataset
from filigrain.training import load_model, train

if len(sys.argv) > 1:
    cfg, model = load_model(sys.argv[1])
else:
    cfg = TrainConfig(steps=600)
    model = train(cfg).model

scene, _ = generate_dataset(7, 1, cfg.scene_config(min_objects=1, max_objects=1), "test")[0]
words = scene.objects[0].words
prompt = ALIGN_PROMPT.format(words)
span = token_spans(prompt, words)
img = model.embed_images(scene.image[None])[0]
txt = model.embed_texts([prompt])[0]
amap = alignment_export(img, txt, span, cfg.include_special)

print(f"prompt: {prompt!r}; label tokens {sorted(span)}")
print("object patches:")
for row in scene.object_mask(cfg.patch_size)[0].reshape(4, 4):
    print(" ".join("#" if m else "." for m in row))
print()
print(amap.render_text())
probe = alignment_probe(model, cfg, 200)
print(f"hit rate over 200 held-out scenes: {probe.hit_rate:.3f} (chance {probe.chance:.3f})")
