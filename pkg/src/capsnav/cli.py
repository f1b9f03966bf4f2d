"""Command line front end.

Every subcommand takes a JSON config file plus --seed / --out overrides
and exits nonzero with a stage-named diagnostic on failure. Reports are
written both as text/JSON and as CSV tables where applicable.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from capsnav import capsnet
from capsnav import episodes
from capsnav import labeling
from capsnav import pipeline
from capsnav import planner
from capsnav import worldsim as ws


def _load_cfg(path):
    with open(path) as f:
        return json.load(f)


def _sim_config(cfg):
    if "sim_config" in cfg:
        return ws.SimConfig.from_dict(cfg["sim_config"])
    return ws.SimConfig()


def _reward_spec(entry, targets=None):
    """Accept a preset name, a spec file path, or an inline spec dict."""
    if isinstance(entry, str):
        if entry in planner.PRESETS:
            return planner.build_spec(entry, targets=targets)
        return planner.RewardSpec.load(entry)
    spec = planner.RewardSpec.from_dict(entry)
    if targets:
        spec.targets.update(targets)
    return spec


def cmd_gen_world(cfg, seed, out):
    world = ws.generate_world(cfg.get("kind", "circle_path"),
                              cfg.get("params", {}), seed=seed)
    world.save(out)
    print("gen-world: %s markers=%d obstacles=%d beacons=%d -> %s"
          % (world.kind, len(world.path), len(world.obstacles),
             len(world.beacons), out))


def cmd_collect(cfg, seed, out):
    store = episodes.DatasetStore(out)
    logs = pipeline.collect(
        store, cfg.get("policy", "random_exploration"),
        world_kind=cfg.get("world_kind", "circle_path"),
        world_params=cfg.get("world_params"),
        n_episodes=int(cfg.get("episodes", 50)),
        seed=seed, cfg=_sim_config(cfg),
        max_steps=int(cfg.get("max_steps", 80)),
        model_checkpoint=cfg.get("model_checkpoint"),
    )
    man = store.manifest
    print("collect: +%d episodes (total %d, %d steps) -> %s"
          % (len(logs), man["episode_count"], man["step_count"], out))


def cmd_train_detector(cfg, seed, out):
    store = episodes.DatasetStore(cfg["store"])
    logs = [l for l in store.load_logs() if l.valid]
    hyper = dataclasses.replace(
        labeling.DetectorHyper(**cfg.get("hyper", {})), seed=seed)
    frames = labeling.select_labeled_frames(
        logs, float(cfg.get("label_fraction", 0.01)), seed=seed)
    det, report = labeling.train_detector(frames, hyper)
    os.makedirs(out, exist_ok=True)
    labeling.save_detector(os.path.join(out, "detector.bin"), det)
    labeling.save_labeled_frames(os.path.join(out, "labeled_frames.txt"),
                                 frames)
    with open(os.path.join(out, "detector_report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    print("train-detector: %d labeled frames, holdout acc %.3f -> %s"
          % (len(frames), report["holdout_accuracy"], out))


def cmd_label(cfg, seed, out):
    store = episodes.DatasetStore(cfg["store"])
    logs = store.load_logs()
    source = cfg.get("source", "detector")
    det = None
    if source == "detector":
        det = labeling.load_detector(cfg["detector"])
    labeling.label_dataset(logs, det, source=source)
    store.write_labels(logs, source)
    print("label: %d episodes labeled (%s)" % (len(logs), source))


def cmd_train(cfg, seed, out):
    store = episodes.DatasetStore(cfg["store"])
    # no explicit model section: defer to the training-pipeline default
    # (which carries the corpus-tuned cue weighting)
    model_cfg = (capsnet.ModelConfig(**cfg["model"])
                 if cfg.get("model") else None)
    hyper = dataclasses.replace(
        capsnet.TrainHyper(**cfg.get("hyper", {})), seed=seed)
    art = pipeline.run_training(
        store, out,
        label_fraction=float(cfg.get("label_fraction", 0.01)),
        model_cfg=model_cfg, train_hyper=hyper,
        label_source=cfg.get("label_source", "detector"),
        reuse_labels=bool(cfg.get("reuse_labels", False)))
    best = min(e["holdout_loss"] for e in art["train_report"].epochs)
    print("train: %d samples, best holdout loss %.4f -> %s"
          % (art["n_samples"], best, out))


def _policy_arg(cfg):
    model = cfg.get("model", "scripted")
    if model in ("random", "scripted"):
        return model
    return capsnet.CapsModel.load(model)


def cmd_eval(cfg, seed, out):
    policy = _policy_arg(cfg)
    spec = _reward_spec(cfg.get("spec", "forest"), cfg.get("targets"))
    provenance = None
    if cfg.get("provenance"):
        with open(cfg["provenance"]) as f:
            provenance = json.load(f)
    report = pipeline.evaluate(
        policy, spec, cfg.get("scenario", "sinusoid"),
        trials=int(cfg.get("trials", 20)), seed=seed,
        cfg=_sim_config(cfg),
        goal_speed=float(cfg.get("goal_speed", 1.0)),
        max_steps=int(cfg.get("max_steps", 220)),
        train_provenance=provenance)
    os.makedirs(out, exist_ok=True)
    report.to_csv(os.path.join(out, "eval.csv"))
    agg = report.aggregate()
    with open(os.path.join(out, "aggregate.json"), "w") as f:
        json.dump(agg, f, indent=2, sort_keys=True)
    print("eval: %s/%s success %.2f mean_dist %.3f -> %s"
          % (report.policy, report.scenario, agg["mean_success"],
             agg["mean_mean_dist"], out))


def cmd_compare(cfg, seed, out):
    model = _policy_arg(cfg)
    if isinstance(model, str):
        raise ValueError("compare requires a model checkpoint")
    spec_a = _reward_spec(cfg["spec_a"], cfg.get("targets"))
    spec_b = _reward_spec(cfg["spec_b"], cfg.get("targets"))
    result = pipeline.compare_specs(
        model, spec_a, spec_b, cfg.get("scenario", "beacon_corridor"),
        trials=int(cfg.get("trials", 20)), seed=seed,
        cfg=_sim_config(cfg),
        goal_speed=float(cfg.get("goal_speed", 1.0)))
    os.makedirs(out, exist_ok=True)
    result["report_a"].to_csv(os.path.join(out, "spec_a.csv"))
    result["report_b"].to_csv(os.path.join(out, "spec_b.csv"))
    summary = {"deltas": result["deltas"],
               "sign_tests": result["sign_tests"]}
    with open(os.path.join(out, "compare.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    print("compare: deltas %s -> %s"
          % ({k: round(v, 4) for k, v in result["deltas"].items()}, out))


def cmd_serve(cfg, seed, out, port=8000):
    import uvicorn

    from capsnav import service

    app = service.create_app(default_checkpoint=cfg.get("model"),
                             static_dir=cfg.get("static_dir"))
    host = os.environ.get("CAPSNAV_BIND", "127.0.0.1")
    uvicorn.run(app, host=host, port=port, log_level="warning")


COMMANDS = {
    "gen-world": cmd_gen_world,
    "collect": cmd_collect,
    "train-detector": cmd_train_detector,
    "label": cmd_label,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "serve": cmd_serve,
}


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="capsnav",
        description="action-conditioned predictor navigation toolkit")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", help="JSON config file for the stage")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out")
    ap.add_argument("--port", type=int, default=8000,
                    help="serve: listen port")
    args = ap.parse_args(argv)
    try:
        cfg = _load_cfg(args.config)
        if args.command == "serve":
            cmd_serve(cfg, args.seed, args.out, port=args.port)
        else:
            COMMANDS[args.command](cfg, args.seed, args.out)
    except Exception as exc:
        print("capsnav %s: error: %s" % (args.command, exc), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
