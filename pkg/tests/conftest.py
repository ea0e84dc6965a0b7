import numpy as np
import pytest

from groupmix.noise import CorruptionRecord, NoisyDataset


def records_from_labels(labels, true_labels=None):
    """Clean records unless separate true labels are supplied."""
    true_labels = labels if true_labels is None else true_labels
    return [
        CorruptionRecord(index=i, true_label=int(t), given_label=int(g),
                         corrupted=bool(t != g))
        for i, (t, g) in enumerate(zip(true_labels, labels))
    ]


def dataset_from_labels(labels, num_classes, image_size=16, channels=3, seed=0):
    """Random-pixel dataset carrying the given (clean) labels."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    images = rng.random((labels.size, image_size, image_size, channels),
                        dtype=np.float32)
    return NoisyDataset(images=images, records=records_from_labels(labels),
                        num_classes=num_classes)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
