from __future__ import annotations

import math

import numpy as np

from .bundle import ANOMALOUS, read_bundle
from .manifest import DatasetManifest, NoiseProtocol


def inject_noise(train: DatasetManifest, test: DatasetManifest, protocol: NoiseProtocol,
                 seed: int, test_labels: list[str] | None = None):
    """Move ``ceil(fraction * |train|)`` anomalous test samples into the training set.

    Overlap keeps the moved samples in the test set, Non-Overlap drops them.
    The draw depends only on ``seed`` and the fraction, so both protocols
    share the same noisy training set.
    """
    if train.root != test.root:
        raise ValueError("train and test manifests must share a class directory")
    if protocol.kind == "clean" or protocol.fraction == 0.0:
        proto = NoiseProtocol("clean", 0.0) if protocol.fraction == 0.0 else protocol
        return (DatasetManifest(train.class_name, "train", train.samples, proto, seed, (), train.root),
                DatasetManifest(test.class_name, "test", test.samples, proto, seed, (), test.root))
    if test_labels is None:
        test_labels = [read_bundle(test.path(s)).label for s in test.samples]
    pool = [s for s, lab in zip(test.samples, test_labels) if lab == ANOMALOUS]
    n = math.ceil(protocol.fraction * len(train.samples))
    if n > len(pool):
        raise ValueError(f"need {n} anomalous test samples to inject, test set has {len(pool)}")
    rng = np.random.default_rng([seed, 0x401531])
    picked = [pool[i] for i in sorted(rng.choice(len(pool), size=n, replace=False))]
    noisy_train = DatasetManifest(train.class_name, "train", train.samples + tuple(picked),
                                  protocol, seed, tuple(picked), train.root)
    if protocol.kind == "overlap":
        test_out = test.samples
    else:
        gone = set(picked)
        test_out = tuple(s for s in test.samples if s not in gone)
    return noisy_train, DatasetManifest(test.class_name, "test", test_out, protocol, seed, tuple(picked), test.root)
