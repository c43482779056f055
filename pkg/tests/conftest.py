import numpy as np
import pytest

from tinydrift.core import LabeledSample


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_samples(X, y, t0=1):
    return [LabeledSample(x, int(lab), t0 + i) for i, (x, lab) in enumerate(zip(X, y))]


def blobs(rng, n_classes, per_class, dim=2, spread=6.0, sigma=1.0):
    centres = rng.standard_normal((n_classes, dim)) * spread
    y = np.repeat(np.arange(n_classes), per_class)
    rng.shuffle(y)
    X = centres[y] + sigma * rng.standard_normal((len(y), dim))
    return X, y
