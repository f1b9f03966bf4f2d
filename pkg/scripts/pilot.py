"""Pilot run: full-scale corpus, training, and closed-loop evaluation.

Used to pick the default hyperparameters; not part of the test suite.
"""

import sys
import time

import numpy as np

from capsnav import capsnet as cn
from capsnav import episodes as ep
from capsnav import pipeline as pp
from capsnav import planner as pl
from capsnav import worldsim as ws


def main(workdir, n_episodes=130, epochs=30, trials=8):
    t0 = time.time()
    store = ep.DatasetStore(workdir + "/store")
    if store.manifest["episode_count"] == 0:
        pp.collect(store, "random_exploration", n_episodes=n_episodes, seed=0)
        pp.collect(store, "scripted_path_follower", n_episodes=n_episodes,
                   seed=1)
        print("collect %.1fs" % (time.time() - t0), flush=True)
    man = store.manifest
    print("episodes", man["episode_count"], "steps", man["step_count"],
          "coll frac",
          np.mean([e["collided"] for e in man["entries"]]), flush=True)

    t0 = time.time()
    art = pp.run_training(store, workdir + "/artifacts",
                          train_hyper=cn.TrainHyper(epochs=epochs))
    print("training %.1fs" % (time.time() - t0), flush=True)
    print("detector:", art["detector_report"], flush=True)
    print("n_samples:", art["n_samples"], flush=True)
    for e in art["train_report"].epochs[-3:]:
        print("epoch", e["epoch"], "%.4f %.4f" % (e["train_loss"],
                                                  e["holdout_loss"]),
              {k: round(v, 4) for k, v in e["per_cue"].items()}, flush=True)
    model = art["model"]

    spec = pl.build_spec("forest")
    for pol, tag in [(model, "caps"), ("scripted", "scripted"),
                     ("random", "random")]:
        t0 = time.time()
        rep = pp.evaluate(pol, spec, "sinusoid", trials=trials, seed=5)
        agg = rep.aggregate()
        print(tag, "%.1fs" % (time.time() - t0),
              {k: round(agg["mean_" + k], 3) for k in
               ("success", "mean_dist", "mean_heading_err", "steps")},
              flush=True)


if __name__ == "__main__":
    main(sys.argv[1], *(int(a) for a in sys.argv[2:]))
