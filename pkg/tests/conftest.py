import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hugloop import forest, sim
from hugloop.cli import dataset_subset, windows_dataset
from hugloop.core import EngineParams


@pytest.fixture(scope="session")
def small_corpus():
    return sim.generate_corpus(4, 8, seed=42)


@pytest.fixture(scope="session")
def small_model(small_corpus):
    data = windows_dataset(small_corpus, EngineParams())
    tr, _, _ = forest.split_indices(len(data), (0.7, 0.2, 0.1), 0)
    return forest.train(dataset_subset(data, tr), forest.ForestParams(n_trees=15, seed=1))


def random_recording(rng, n_samples=260, rate=45.0, max_intervals=3):
    """Small random recording with non-overlapping annotations, for oracles."""
    from hugloop.core import GestureClass, GestureInterval, SensorSample, make_recording

    t = np.arange(n_samples) / rate
    samples = [
        SensorSample(
            t=float(tk),
            pressure=float(1000 + 5 * rng.standard_normal()),
            mic=float(512 + 5 * rng.standard_normal()),
        )
        for tk in t
    ]
    annotations = []
    cursor = float(rng.uniform(0.0, 1.0))
    for _ in range(int(rng.integers(0, max_intervals + 1))):
        start = cursor + float(rng.uniform(0.0, 1.2))
        dur = float(rng.uniform(0.2, 2.0))
        end = start + dur
        if end >= float(t[-1]):
            break
        annotations.append(
            GestureInterval(
                label=GestureClass(int(rng.integers(1, 4))), t_start=start, t_end=end
            )
        )
        cursor = end
    return make_recording(samples, annotations=annotations)
