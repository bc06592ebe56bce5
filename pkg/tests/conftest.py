import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from cnnscope.model import ModelSpec, StageSpec, build_model

CACHE_DIR = Path(__file__).resolve().parent / "_cache"

# A model small enough that every forward/backward is milliseconds.
TINY_SPEC = ModelSpec(num_classes=2, input_shape=(3, 8, 8), stem_channels=8,
                      stages=(StageSpec(8, 1, 1), StageSpec(8, 1, 2),
                              StageSpec(16, 1, 2), StageSpec(16, 1, 2)))


@pytest.fixture(scope="session")
def tiny_model():
    """A fixed-seed untrained tiny model; treat as read-only."""
    return build_model(TINY_SPEC, seed=42)


def random_image(seed=0, shape=(3, 8, 8)):
    return np.random.default_rng(seed).normal(0.0, 0.5, size=shape)


def cifar_directory():
    """Where the real CIFAR-10 binary batches live, or None."""
    candidates = []
    env = os.environ.get("CNNSCOPE_CIFAR10")
    if env:
        candidates.append(Path(env))
    candidates.append(Path(__file__).resolve().parent.parent / "data" / "cifar-10-batches-bin")
    candidates.append(Path("/root/data/cifar-10-batches-bin"))
    for c in candidates:
        if (c / "data_batch_1.bin").exists():
            return c
    return None


@pytest.fixture(scope="session")
def cifar_dir():
    d = cifar_directory()
    if d is None:
        pytest.skip("CIFAR-10 binary batches not found; set CNNSCOPE_CIFAR10 or run "
                    "tools/fetch_cifar10.py (see README)")
    return d


def train_cached(tag, builder, trainer):
    """Train once and memoize weights plus run metadata under tests/_cache.

    builder() -> fresh Model; trainer(model) -> metadata dict. The recorded
    wall_seconds measures the actual training run that produced the weights.
    """
    from cnnscope.model import load_weights, save_weights

    CACHE_DIR.mkdir(exist_ok=True)
    weights = CACHE_DIR / f"{tag}.mcnn"
    meta_path = CACHE_DIR / f"{tag}.json"
    if weights.exists() and meta_path.exists():
        meta = json.loads(meta_path.read_text())
        return load_weights(weights), meta
    model = builder()
    t0 = time.time()
    meta = trainer(model)
    meta["wall_seconds"] = time.time() - t0
    save_weights(model, weights)
    meta_path.write_text(json.dumps(meta, indent=2))
    return model, meta
