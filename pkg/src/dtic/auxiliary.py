"""Linear heads on the context vector: seventh-hour extrema and real/fake."""
import numpy as np

from . import gradcore as gc


def init_heads(rng, hidden, n_extrema=6):
    return {
        "Wreg": gc.init_uniform(rng, (hidden, n_extrema), hidden),
        "breg": gc.init_uniform(rng, (n_extrema,), hidden),
        "Wdis": gc.init_uniform(rng, (hidden, 1), hidden),
        "bdis": gc.init_uniform(rng, (1,), hidden),
    }


def predict_extrema(context, W, b):
    return gc.matmul(context, W) + b


def regression_loss(pred, labels):
    """Masked MSE; NaN labels are absent and leave both sum and count."""
    labels = np.asarray(labels, dtype=np.float64)
    mask = ~np.isnan(labels)
    n = int(mask.sum())
    if n == 0:
        return gc.const(0.0)
    diff = pred - gc.const(np.where(mask, labels, 0.0))
    return (gc.square(diff) * gc.const(mask.astype(np.float64))).sum() * (1.0 / n)


def discriminate(context, W, b):
    """Logit that the context came from a real record, shape (B,)."""
    return (gc.matmul(context, W) + b).reshape(-1)


def probability(logits):
    return gc.sigmoid(logits)


def bce_loss(logits, is_real):
    """Mean binary cross-entropy with real = 1, fake = 0, in logit form."""
    y = np.asarray(is_real, dtype=np.float64)
    return (gc.softplus(logits) - logits * gc.const(y)).mean()
