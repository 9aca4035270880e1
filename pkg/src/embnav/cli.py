"""Command-line entry point: train / eval / probe / sweep / zeroshot / sim-demo.

Exit codes: 0 success, 2 configuration or usage error, 3 missing artifact,
4 runtime failure. Each command takes --config and writes into one output
directory, guarded by a lockfile so concurrent runs cannot interleave.
Reports are CSV plus matplotlib figures rendered next to them.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_RUNTIME = 4


class MissingArtifact(Exception):
    pass


class _Lock:
    """Exclusive per-directory lockfile; concurrent commands in one output
    directory are refused rather than interleaved."""

    def __init__(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        self.path = os.path.join(out_dir, ".lock")
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory is locked by another command "
                f"({self.path}); remove the file if that run is dead")
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            os.unlink(self.path)
        return False


def _apply_thread_cap() -> None:
    cap = os.environ.get("EMBNAV_THREADS")
    if cap:
        import torch
        torch.set_num_threads(max(1, int(cap)))


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
        cfg.probe.seed = args.seed
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> str:
    if getattr(args, "out", None):
        return args.out
    if cfg.out_dir:
        return cfg.out_dir
    return os.path.join("runs", cfg.name)


def _require(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifact(f"{path} not found; {hint}")
    return path


# ---------------------------------------------------------------------------
# train / eval

def cmd_train(args) -> int:
    from .training import Trainer, PolicyActor, evaluate
    from .report import fig_training_curves, write_metrics_csv
    cfg = _load(args)
    out = _out_dir(args, cfg)
    with _Lock(out):
        trainer = Trainer(cfg, out)
        if args.resume:
            _require(os.path.join(out, "state", "trainer.json"),
                     "run `embnav train` without --resume first")
            trainer.load_state()
        trainer.run()
        actor = PolicyActor(trainer.policy, trainer.builder, mode="argmax")
        _, row = evaluate(actor, trainer.sampler, cfg.task.val_seeds)
        row["split"] = "val"
        write_metrics_csv(os.path.join(out, "eval.csv"), [row])
        fig_training_curves(os.path.join(out, "training.csv"),
                            os.path.join(out, "training.png"))
    print(f"trained {trainer.steps_done} steps; best val SR "
          f"{trainer.best_sr:.4f}; outputs in {out}")
    return EXIT_OK


def _pseudo_actor(name: str, cfg: ExperimentConfig):
    from .training import ExpertActor, RandomActor
    from .rng import stream_seed
    if name == "expert":
        return ExpertActor()
    if name == "random":
        return RandomActor(np.random.default_rng(
            stream_seed(cfg.train.seed, "random-actor")))
    return None


def cmd_eval(args) -> int:
    from .agents import load_checkpoint
    from .training import (InputBuilder, PolicyActor, evaluate,
                           build_backbone_from_config, sim_config_from_config,
                           task_params_from_config, _TASK_FOR_ARCH)
    from .sim import TaskSampler
    from .report import write_metrics_csv
    cfg = _load(args)
    out = _out_dir(args, cfg)
    actor = _pseudo_actor(args.checkpoint, cfg)
    if actor is None:
        _require(os.path.join(args.checkpoint, "manifest.json"),
                 "expected a checkpoint directory, or 'expert'/'random'")
        policy, manifest = load_checkpoint(args.checkpoint)
        arch = manifest["architecture"]
        if _TASK_FOR_ARCH.get(arch) != cfg.task.kind:
            raise ConfigError(
                f"checkpoint architecture {arch!r} does not drive task "
                f"{cfg.task.kind!r}")
        backbone = build_backbone_from_config(cfg)
        builder = InputBuilder(cfg.agent.architecture, backbone,
                               cfg.sim.category_count)
        actor = PolicyActor(policy, builder, mode="argmax")
        obs_mode = "state" if backbone.needs == "state" else "rgb"
    else:
        obs_mode = "state"
    sampler = TaskSampler(sim_config_from_config(cfg),
                          task_params_from_config(cfg), obs_mode=obs_mode)
    seeds = list(cfg.task.test_seeds)
    if args.episodes is not None:
        seeds = seeds[: args.episodes]
    with _Lock(out):
        records, row = evaluate(actor, sampler, seeds)
        row["split"] = "test"
        write_metrics_csv(os.path.join(out, "eval.csv"),
                          [row] if records else [],
                          comments=(f"episodes: {len(records)}",
                                    f"policy: {args.checkpoint}"))
    print(f"evaluated {len(records)} episodes; report in {out}/eval.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# probes

def _probe_scene_splits(cfg: ExperimentConfig) -> dict[str, list[int]]:
    return {"train": list(range(cfg.probe.train_scenes)),
            "val": list(range(10000, 10000 + cfg.probe.val_scenes)),
            "test": list(range(20000, 20000 + cfg.probe.test_scenes))}


def _probe_frames(cfg: ExperimentConfig) -> dict[str, int]:
    return {"train": cfg.probe.train_frames, "val": cfg.probe.eval_frames,
            "test": cfg.probe.eval_frames}


def _probe_backbones(cfg: ExperimentConfig):
    from .training import build_backbone_from_config
    import copy
    backbones = []
    for backbone_id in cfg.sweep.backbones:
        c = copy.deepcopy(cfg)
        c.agent.backbone = backbone_id
        backbones.append(build_backbone_from_config(c))
    return backbones


def _probe_dataset_dir(out: str, backbone_id: str, pooling: str) -> str:
    return os.path.join(out, "probe_data", backbone_id, pooling)


def _probe_model_dir(out: str, backbone_id: str, pooling: str,
                     task: str) -> str:
    return os.path.join(out, "probe_models", backbone_id, pooling, task)


def _valid_cells(cfg: ExperimentConfig):
    for pooling in cfg.probe.poolings:
        for task in cfg.probe.tasks:
            if task == "localization" and pooling != "avg3":
                continue
            yield pooling, task


def cmd_probe(args) -> int:
    from .io_bin import read_arrays, write_arrays
    from .probes import ProbeDataset, ProbeModel, generate_probe_dataset, \
        train_probe, eval_probe
    from .training import sim_config_from_config
    import torch
    cfg = _load(args)
    out = _out_dir(args, cfg)
    sim_cfg = sim_config_from_config(cfg)
    stage = args.stage
    with _Lock(out):
        if stage == "data":
            for backbone in _probe_backbones(cfg):
                for pooling in cfg.probe.poolings:
                    ds = generate_probe_dataset(
                        _probe_scene_splits(cfg), _probe_frames(cfg),
                        backbone, pooling, sim_config=sim_cfg,
                        seed=cfg.probe.seed)
                    ds.save(_probe_dataset_dir(out, backbone.spec.id, pooling))
            print(f"probe datasets written under {out}/probe_data")
            return EXIT_OK
        if stage == "train":
            for backbone in _probe_backbones(cfg):
                for pooling, task in _valid_cells(cfg):
                    d = _probe_dataset_dir(out, backbone.spec.id, pooling)
                    _require(os.path.join(d, "manifest.json"),
                             "run `embnav probe data` first")
                    ds = ProbeDataset.load(d)
                    model = train_probe(task, ds, cfg.probe)
                    mdir = _probe_model_dir(out, backbone.spec.id, pooling, task)
                    write_arrays(mdir, {
                        "kind": "probe-model", "task": task,
                        "backbone": backbone.spec.id, "pooling": pooling,
                        "feature_shape": list(ds.features.shape[1:]),
                        "category_count": ds.category_count,
                        "best_val": model.best_val,
                    }, {name: p.detach().numpy()
                        for name, p in model.state_dict().items()})
            print(f"probe models written under {out}/probe_models")
            return EXIT_OK
        if stage == "eval":
            rows = []
            for backbone in _probe_backbones(cfg):
                for pooling, task in _valid_cells(cfg):
                    mdir = _probe_model_dir(out, backbone.spec.id, pooling, task)
                    _require(os.path.join(mdir, "manifest.json"),
                             "run `embnav probe train` first")
                    manifest, arrays = read_arrays(mdir)
                    model = ProbeModel(manifest["task"],
                                       tuple(manifest["feature_shape"]),
                                       manifest["category_count"])
                    model.load_state_dict({k: torch.from_numpy(v)
                                           for k, v in arrays.items()})
                    ds = ProbeDataset.load(
                        _probe_dataset_dir(out, backbone.spec.id, pooling))
                    score = eval_probe(model, ds, "test")
                    rows.append({"task": task, "pretraining": backbone.spec.id,
                                 "pooling": pooling, "metric": score.metric,
                                 "score": score.value, "null": score.null})
            with open(os.path.join(out, "probe_eval.json"), "w",
                      encoding="utf-8") as fh:
                json.dump(rows, fh, indent=1, sort_keys=True)
                fh.write("\n")
            print(f"probe scores in {out}/probe_eval.json")
            return EXIT_OK
        # report
        from .report import fig_probe_bars, write_probe_csv
        path = _require(os.path.join(out, "probe_eval.json"),
                        "run `embnav probe eval` first")
        with open(path, encoding="utf-8") as fh:
            rows = json.load(fh)
        write_probe_csv(os.path.join(out, "probes.csv"), rows)
        fig_probe_bars(rows, os.path.join(out, "probes.png"))
        print(f"probe report in {out}/probes.csv and {out}/probes.png")
        return EXIT_OK


# ---------------------------------------------------------------------------
# encoder sweep

def cmd_sweep(args) -> int:
    import copy
    from .probes import generate_probe_dataset, train_probe, eval_probe
    from .report import fig_sweep, write_csv
    from .training import (Trainer, PolicyActor, evaluate,
                           build_backbone_from_config, sim_config_from_config)
    cfg = _load(args)
    if len(cfg.sweep.backbones) < 2:
        raise ConfigError("sweep needs at least 2 backbones")
    out = _out_dir(args, cfg)
    sim_cfg = sim_config_from_config(cfg)
    with _Lock(out):
        rows = []
        for backbone_id in cfg.sweep.backbones:
            c = copy.deepcopy(cfg)
            c.agent.backbone = backbone_id
            backbone = build_backbone_from_config(c)
            # Proxy score: free-space classification accuracy of a linear
            # readout, the desk analogue of ranking encoders by an external
            # classification benchmark.
            ds = generate_probe_dataset(
                _probe_scene_splits(cfg), _probe_frames(cfg), backbone,
                "avg1", sim_config=sim_cfg, seed=cfg.probe.seed)
            probe = train_probe("free_space", ds, cfg.probe)
            proxy = eval_probe(probe, ds, "test").value
            run_dir = os.path.join(out, f"train_{backbone_id}")
            trainer = Trainer(c, run_dir)
            trainer.run()
            actor = PolicyActor(trainer.policy, trainer.builder, mode="argmax")
            _, row = evaluate(actor, trainer.sampler, cfg.task.val_seeds)
            rows.append({"backbone": backbone_id, "proxy_score": proxy,
                         "sr": row["sr"], "spl": row["spl"]})
        write_csv(os.path.join(out, "sweep.csv"),
                  ["backbone", "proxy_score", "sr", "spl"],
                  [[r["backbone"], r["proxy_score"], r["sr"], r["spl"]]
                   for r in rows])
        fig_sweep(rows, os.path.join(out, "sweep.png"))
    print(f"sweep report in {out}/sweep.csv and {out}/sweep.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# zero-shot transfer

def cmd_zeroshot(args) -> int:
    import copy
    from .report import fig_zeroshot, write_csv
    from .rng import stream_seed
    from .sim import TaskSampler
    from .training import (Trainer, PolicyActor, RandomActor, evaluate,
                           task_params_from_config, sim_config_from_config)
    cfg = _load(args)
    cfg.validate_zeroshot()
    if cfg.agent.architecture != "zeroshot":
        raise ConfigError("zeroshot command needs agent.architecture = zeroshot")
    out = _out_dir(args, cfg)
    episodes = args.episodes or cfg.zeroshot.episodes
    with _Lock(out):
        trainer = Trainer(cfg, os.path.join(out, "train"),
                          goal_categories=list(cfg.zeroshot.seen))
        trainer.run()
        # Audit: every training episode's goal must be a seen category.
        log = trainer.envs.episode_log if trainer.envs else []
        bad = [g for _, g in log if g not in set(cfg.zeroshot.seen)]
        with open(os.path.join(out, "train_goals.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({"episodes": log, "unseen_leaks": bad}, fh)
            fh.write("\n")
        if bad:
            raise RuntimeError(f"unseen goal categories leaked into "
                               f"training: {sorted(set(bad))}")
        sim_cfg = sim_config_from_config(cfg)
        rows = []
        for split_name, cats in (("seen", cfg.zeroshot.seen),
                                 ("unseen", cfg.zeroshot.unseen)):
            params = task_params_from_config(cfg, list(cats))
            sampler = TaskSampler(sim_cfg, params, obs_mode=trainer.sampler.obs_mode)
            seeds = [100000 + i if split_name == "seen" else 200000 + i
                     for i in range(episodes)]
            for policy_name in ("trained", "random"):
                if policy_name == "trained":
                    actor = PolicyActor(trainer.policy, trainer.builder,
                                        mode="argmax")
                else:
                    actor = RandomActor(np.random.default_rng(
                        stream_seed(cfg.train.seed, f"zs-random/{split_name}")))
                _, row = evaluate(actor, sampler, seeds)
                sr = row["sr"]
                sigma = float(np.sqrt(max(sr * (1 - sr), 1e-12) / episodes))
                rows.append({"policy": policy_name, "categories": split_name,
                             "episodes": episodes, "sr": sr,
                             "spl": row["spl"], "sigma": sigma})
        write_csv(os.path.join(out, "zeroshot.csv"),
                  ["policy", "categories", "episodes", "sr", "spl", "sigma"],
                  [[r["policy"], r["categories"], r["episodes"], r["sr"],
                    r["spl"], r["sigma"]] for r in rows])
        fig_zeroshot(rows, os.path.join(out, "zeroshot.png"))
    print(f"zero-shot report in {out}/zeroshot.csv and {out}/zeroshot.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sim-demo

def cmd_sim_demo(args) -> int:
    from PIL import Image
    from .sim import TaskSampler, expert_action
    from .training import sim_config_from_config, task_params_from_config
    cfg = _load(args)
    out = _out_dir(args, cfg)
    with _Lock(out):
        sampler = TaskSampler(sim_config_from_config(cfg),
                              task_params_from_config(cfg), obs_mode="rgb")
        seed = cfg.task.train_seeds[0] if args.seed is None else args.seed
        sim = sampler.build(seed)
        transcript = []
        frames = [sim.observe().image]
        while not sim.done:
            action = expert_action(sim)
            res = sim.step(action)
            transcript.append({"t": sim.t, "action": action.label(),
                               "reward": res.reward, "done": res.done})
            frames.append(res.observation.image)
        for tag, img in (("first", frames[0]), ("mid", frames[len(frames) // 2]),
                         ("last", frames[-1])):
            arr = (np.transpose(img, (1, 2, 0)) * 255).astype(np.uint8)
            Image.fromarray(arr).save(os.path.join(out, f"frame_{tag}.png"))
        with open(os.path.join(out, "transcript.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({"seed": seed, "success": sim.success,
                       "steps": sim.t, "actions": transcript}, fh, indent=1)
            fh.write("\n")
    print(f"demo episode (seed {seed}): success={sim.success} in {sim.t} "
          f"steps; frames and transcript in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embnav",
        description="Desk-scale embodied-navigation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, episodes=False):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        if episodes:
            p.add_argument("--episodes", type=int, default=None,
                           help="episode count override")

    p = sub.add_parser("train", help="train one agent")
    common(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the saved trainer state")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(p, episodes=True)
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint directory, or 'expert'/'random'")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("probe", help="probe pipeline stages")
    p.add_argument("stage", choices=["data", "train", "eval", "report"])
    common(p)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("sweep", help="train one agent per backbone")
    common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("zeroshot", help="goal-text transfer protocol")
    common(p, episodes=True)
    p.set_defaults(fn=cmd_zeroshot)

    p = sub.add_parser("sim-demo", help="run one scripted episode, save frames")
    common(p)
    p.set_defaults(fn=cmd_sim_demo)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _apply_thread_cap()
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
