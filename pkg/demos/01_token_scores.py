"""Token-wise scores by hand versus the batched kernel.

Two toy "images" with three patch features each and two toy "texts" with two
word features each. Image 0 holds a patch that lines up with each word of
text 0, so its late-interaction score sits well above what the pooled
(mean) vectors suggest.
"""

import numpy as np

from filigrain import EfficiencyConfig, EncodedFeatures, Tensor, batch_similarity


def feats(rows, modality):
    x = np.asarray(rows, dtype=float)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    n = len(x)
    return EncodedFeatures(Tensor(x), np.ones(n, bool), np.zeros(n, bool), modality, 0)


images = [feats([[1, 0, 0], [0, 1, 0], [1, 1, 1]], "image"), feats([[0, 0, 1], [1, 1, 1], [0, 1, 1]], "image")]
texts = [feats([[1, 0.1, 0], [0, 1, 0.1]], "text"), feats([[0, 0.2, 1], [0.3, 0, 1]], "text")]

pair = batch_similarity(images, texts)
print("image->text (mean over patches of best word):\n", np.round(pair.s_I.data, 4))
print("text->image (mean over words of best patch):\n", np.round(pair.s_T.data, 4))

pooled = np.array([[f.tokens.data.mean(0) @ g.tokens.data.mean(0) for g in texts] for f in images])
print("pooled-vector dot products for comparison:\n", np.round(pooled, 4))

# keep the top half of tokens per sample and round shared features to binary16;
# with one shard of two samples, selection costs as much as full scoring here
cheap = batch_similarity(images, texts, EfficiencyConfig(selection_ratio=0.5, comm_precision="half"))
print("efficient path:\n", np.round(cheap.s_I.data, 4))
print("dot-product counts:", cheap.stats)
