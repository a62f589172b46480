"""Independent reference implementations written with plain Python loops."""

import math


def dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def directional_scores(img_rows, txt_rows):
    """(image->text, text->image) scores from lists of candidate token vectors."""
    s_i = sum(max(dot(u, v) for v in txt_rows) for u in img_rows) / len(img_rows)
    s_t = sum(max(dot(u, v) for u in img_rows) for v in txt_rows) / len(txt_rows)
    return s_i, s_t


def batch_scores(imgs, txts):
    """Triple loop over (image, text, token) for lists of per-sample candidate rows."""
    b = len(imgs)
    s_I = [[0.0] * b for _ in range(b)]
    s_T = [[0.0] * b for _ in range(b)]
    for i in range(b):
        for j in range(b):
            s_I[i][j], s_T[i][j] = directional_scores(imgs[i], txts[j])
    return s_I, s_T


def contrastive_total(s_I, s_T, tau):
    """Half the sum of both directions' mean cross-entropies with diagonal targets."""
    b = len(s_I)
    li = 0.0
    for k in range(b):
        z = [s_I[k][j] / tau for j in range(b)]
        li -= (z[k] - math.log(sum(math.exp(x) for x in z))) / b
    lt = 0.0
    for k in range(b):
        z = [s_T[i][k] / tau for i in range(b)]
        lt -= (z[k] - math.log(sum(math.exp(x) for x in z))) / b
    return 0.5 * (li + lt)
