import numpy as np
import pytest

import fluence as fl


@pytest.fixture(scope="session")
def small_planted():
    """A small planted universe shared by fast tests."""
    gen = fl.PlantedGenerator(
        embed_dim=8,
        proj_dim=4,
        num_steps=24,
        batch_size=4,
        train_pool=40,
        test_pool=5,
        per_run=24,
    )
    runs, table, true_params = fl.generate_planted_runs(gen, 8, seed=42)
    return gen, runs, table, true_params


@pytest.fixture(scope="session")
def toy_world():
    """A small recorded toy training run with per-step dumps."""
    dataset = fl.make_toy_dataset(n_train=40, n_test=5, n_classes=3, n_features=8, seed=7)
    cfg = fl.ToyRunConfig(
        n_runs=2, num_steps=30, batch_size=4, per_run=30,
        learning_rate=1e-3, checkpoint_interval=1, seed=7,
    )
    runs, table, dumps = fl.train_toy_and_record(dataset, cfg)
    return dataset, cfg, runs, table, dumps


def make_run(values_by_test, batches, run_id="r1", metric="loss"):
    """Tiny Run builder for hand-written cases."""
    trajectories = {
        (tid, metric): fl.Trajectory(test_id=tid, metric=metric, values=np.asarray(vals, dtype=float))
        for tid, vals in values_by_test.items()
    }
    return fl.Run(
        run_id=run_id,
        curriculum=fl.Curriculum(tuple(tuple(b) for b in batches)),
        trajectories=trajectories,
    )
