"""Shared fixtures. The session-scoped trained artifacts are expensive
(full corpus + predictor training) and are built once, lazily, only when
an acceptance test first asks for them."""

import time

import pytest

from capsnav import capsnet as cn
from capsnav import episodes as ep
from capsnav import pipeline as pp

# full-scale corpus / training recipe used by the acceptance analogues;
# mirrors the defaults baked into the pipeline module
N_EPISODES_PER_POLICY = 130
COLLECT_MAX_STEPS = 80
TRAIN_EPOCHS = 40
LABEL_FRACTION = 0.01


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """Collect the off-policy circle-path corpus, train the detector and
    the predictor, and hand the lot to the acceptance tests."""
    root = tmp_path_factory.mktemp("trained")
    t0 = time.time()
    store = ep.DatasetStore(str(root / "store"))
    pp.collect(store, "random_exploration",
               n_episodes=N_EPISODES_PER_POLICY, seed=0,
               max_steps=COLLECT_MAX_STEPS)
    pp.collect(store, "scripted_path_follower",
               n_episodes=N_EPISODES_PER_POLICY, seed=1,
               max_steps=COLLECT_MAX_STEPS)
    art = pp.run_training(
        store, str(root / "artifacts"),
        label_fraction=LABEL_FRACTION,
        train_hyper=cn.TrainHyper(epochs=TRAIN_EPOCHS))
    art["store"] = store
    art["root"] = str(root)
    art["build_seconds"] = time.time() - t0
    return art
