"""On-policy PPO and imitation trainers over vectorized simulator workers.

The encoder runs exactly once per frame: features are extracted when a frame
is observed, stored in the rollout buffer, and reused by every optimization
epoch. Recurrent updates re-unroll each minibatch from the hidden state saved
at rollout start, resetting at episode boundaries via done masks.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from .agents import build_policy, sample_actions, save_checkpoint, load_checkpoint
from .config import ExperimentConfig, TrainConfig
from .encoders import (
    Backbone, BackboneSpec, attention_pool, featurize, informative_channel_count,
    text_goal_embed,
)
from .io_bin import read_arrays, write_arrays
from .metrics import EpisodeRecord, episode_record, metric_row
from .rng import stream_seed
from .sim import ActionSpace, TaskParams, TaskSampler, expert_action
from .sim.types import CATEGORY_NAMES

__all__ = [
    "LossReport", "RolloutBuffer", "InputBuilder", "VecEnvs",
    "collect_rollout", "gae_returns", "ppo_update", "imitation_update",
    "collect_expert_batch", "PolicyActor", "RandomActor", "ExpertActor",
    "evaluate", "expert_agreement", "Trainer", "TrainConfig",
    "build_backbone_from_config", "policy_for_config",
]


@dataclass
class LossReport:
    loss_policy: float
    loss_value: float
    entropy: float


@dataclass
class RolloutBuffer:
    """T x N arrays for one synchronous rollout."""
    inputs: dict[str, np.ndarray]
    actions: np.ndarray          # (T, N) int64
    logprobs: np.ndarray         # (T, N) f32
    rewards: np.ndarray          # (T, N) f32
    values: np.ndarray           # (T, N) f32
    dones: np.ndarray            # (T, N) bool: episode ended at this step
    done_prev: np.ndarray        # (T, N) bool: hidden must reset before this step
    initial_hidden: np.ndarray   # (layers, N, H) f32
    bootstrap: np.ndarray        # (N,) f32 value of the post-rollout frame
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return self.actions.size


# ---------------------------------------------------------------------------
# Observation -> policy inputs

_INPUT_DTYPES = {"features": np.float32, "features2": np.float32,
                 "goal": np.int64, "polar": np.float32,
                 "prev_action": np.int64, "v": np.float32, "t": np.float32}


class InputBuilder:
    """Extracts per-frame policy inputs for one architecture. Feature
    extraction happens here and nowhere else."""

    def __init__(self, architecture: str, backbone: Backbone,
                 category_count: int):
        self.architecture = architecture
        self.backbone = backbone
        self.category_count = category_count
        if architecture == "zeroshot":
            self._text = {c: text_goal_embed(CATEGORY_NAMES[c])
                          for c in range(category_count)}
        self.encode_calls = 0

    def frame(self, sim, obs) -> dict[str, np.ndarray]:
        arch = self.architecture
        feats = featurize(obs, self.backbone)
        self.encode_calls += 1
        if arch == "objectnav":
            return {"features": feats.data,
                    "goal": np.int64(sim.task.goal_category)}
        if arch == "pointnav":
            prev = -1 if obs.prev_action is None else obs.prev_action
            return {"features": feats.data,
                    "polar": np.asarray(obs.goal_polar, dtype=np.float32),
                    "prev_action": np.int64(prev)}
        if arch == "rearrange":
            if self.backbone.needs == "state":
                f2 = self.backbone.encode_scene(obs.goal_scene, obs.pose)
            else:
                f2 = self.backbone.encode(obs.goal_image)
            self.encode_calls += 1
            return {"features": feats.data, "features2": f2.data}
        if arch == "zeroshot":
            v = attention_pool(feats, self.backbone)
            return {"v": v, "t": self._text[sim.task.goal_category]}
        raise ValueError(f"unknown architecture {arch!r}")

    @staticmethod
    def stack(frames: list[dict]) -> dict[str, torch.Tensor]:
        out = {}
        for key in frames[0]:
            arr = np.stack([f[key] for f in frames])
            out[key] = torch.from_numpy(arr.astype(_INPUT_DTYPES[key], copy=False))
        return out


# ---------------------------------------------------------------------------
# Vectorized environments

class VecEnvs:
    """N synchronous workers over a task sampler. Finished episodes restart
    immediately with the next seed from the cycle."""

    def __init__(self, sampler: TaskSampler, seeds, workers: int,
                 builder: InputBuilder):
        if workers < 1 or not seeds:
            raise ValueError("need >= 1 worker and a nonempty seed list")
        self.sampler = sampler
        self.seeds = list(seeds)
        self.builder = builder
        self.cursor = 0
        self.episodes_done = 0
        self.episode_log: list[tuple[int, Optional[int]]] = []
        self.sims = [self._fresh() for _ in range(workers)]
        self.frames = [builder.frame(sim, sim.observe()) for sim in self.sims]

    def _fresh(self):
        seed = self.seeds[self.cursor % len(self.seeds)]
        self.cursor += 1
        sim = self.sampler.build(seed)
        self.episode_log.append((seed, sim.task.goal_category))
        return sim

    @property
    def workers(self) -> int:
        return len(self.sims)

    def step(self, actions: np.ndarray):
        rewards = np.zeros(self.workers, np.float32)
        dones = np.zeros(self.workers, bool)
        for i, sim in enumerate(self.sims):
            res = sim.step(int(actions[i]))
            rewards[i] = res.reward
            dones[i] = res.done
            if res.done:
                self.episodes_done += 1
                self.sims[i] = self._fresh()
                self.frames[i] = self.builder.frame(self.sims[i],
                                                    self.sims[i].observe())
            else:
                self.frames[i] = self.builder.frame(sim, res.observation)
        return rewards, dones

    def state(self) -> dict:
        return {"cursor": self.cursor,
                "episodes_done": self.episodes_done,
                "episode_log": [list(e) for e in self.episode_log],
                "workers": [{"seed": sim.episode_seed, "snap": sim.snapshot()}
                            for sim in self.sims]}

    def restore(self, state: dict) -> None:
        self.cursor = state["cursor"]
        self.episodes_done = state["episodes_done"]
        self.episode_log = [tuple(e) for e in state["episode_log"]]
        self.sims = []
        for w in state["workers"]:
            sim = self.sampler.build(w["seed"])
            sim.restore(w["snap"])
            self.sims.append(sim)
        self.frames = [self.builder.frame(sim, sim.observe())
                       for sim in self.sims]


# ---------------------------------------------------------------------------
# Rollout collection and advantage estimation

def collect_rollout(envs: VecEnvs, agent, length: int,
                    hidden: torch.Tensor, rng: np.random.Generator,
                    done_prev0: np.ndarray) -> tuple[RolloutBuffer, torch.Tensor, np.ndarray]:
    """Steps every worker `length` times. Returns (buffer, live hidden,
    done flags of the final step) for the next rollout to continue from."""
    n = envs.workers
    frames_seq: list[list[dict]] = []
    actions = np.zeros((length, n), np.int64)
    logprobs = np.zeros((length, n), np.float32)
    rewards = np.zeros((length, n), np.float32)
    values = np.zeros((length, n), np.float32)
    dones = np.zeros((length, n), bool)
    done_prev = np.zeros((length, n), bool)
    initial_hidden = hidden.detach().numpy().copy()

    last_done = done_prev0.copy()
    with torch.no_grad():
        for t in range(length):
            done_prev[t] = last_done
            frames_seq.append(list(envs.frames))
            batch = envs.builder.stack(envs.frames)
            keep = torch.from_numpy((~last_done).astype(np.float32))
            hidden = hidden * keep.view(1, n, 1)
            out = agent.step(batch, hidden)
            hidden = out.hidden
            logits = out.logits.numpy()
            acts = sample_actions(logits, rng)
            z = logits - logits.max(axis=1, keepdims=True)
            logz = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            actions[t] = acts
            logprobs[t] = logz[np.arange(n), acts]
            values[t] = out.value.numpy()
            rewards[t], dones[t] = envs.step(acts)
            last_done = dones[t]

        batch = envs.builder.stack(envs.frames)
        keep = torch.from_numpy((~last_done).astype(np.float32))
        bootstrap = agent.step(batch, hidden * keep.view(1, n, 1)).value.numpy()

    inputs = {}
    for key in frames_seq[0][0]:
        rows = [np.stack([f[key] for f in step_frames])
                for step_frames in frames_seq]
        inputs[key] = np.stack(rows).astype(_INPUT_DTYPES[key], copy=False)

    buf = RolloutBuffer(inputs=inputs, actions=actions, logprobs=logprobs,
                        rewards=rewards, values=values, dones=dones,
                        done_prev=done_prev, initial_hidden=initial_hidden,
                        bootstrap=bootstrap.astype(np.float32))
    return buf, hidden, last_done


def gae_returns(buffer: RolloutBuffer, gamma: float, lam: float):
    """Generalized advantage estimation with bootstrap truncation at done.
    Fills and returns (advantages, returns)."""
    rewards, values, dones = buffer.rewards, buffer.values, buffer.dones
    t_len, n = rewards.shape
    adv = np.zeros((t_len, n), np.float32)
    next_value = buffer.bootstrap
    gae = np.zeros(n, np.float32)
    for t in range(t_len - 1, -1, -1):
        not_done = (~dones[t]).astype(np.float32)
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        gae = delta + gamma * lam * not_done * gae
        adv[t] = gae
        next_value = values[t]
    buffer.advantages = adv
    buffer.returns = adv + values
    return adv, buffer.returns


# ---------------------------------------------------------------------------
# PPO

def ppo_update(agent, buffer: RolloutBuffer, config: TrainConfig,
               optimizer: torch.optim.Optimizer,
               rng: np.random.Generator) -> LossReport:
    """Clipped-surrogate update. Minibatches are worker subsets unrolled over
    the full rollout so recurrence stays intact."""
    if buffer.advantages is None:
        gae_returns(buffer, config.gamma, config.gae_lambda)
    adv = buffer.advantages
    adv_norm = (adv - adv.mean()) / (adv.std() + 1e-8)

    n = buffer.actions.shape[1]
    groups = max(1, min(config.minibatches, n))
    p_losses, v_losses, ents = [], [], []
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for mb in np.array_split(perm, groups):
            idx = np.sort(mb)
            inputs = {k: torch.from_numpy(v[:, idx]) for k, v in buffer.inputs.items()}
            h0 = torch.from_numpy(buffer.initial_hidden[:, idx])
            dp = torch.from_numpy(buffer.done_prev[:, idx])
            logits, values, _ = agent.unroll(inputs, h0, dp)
            logp_all = torch.log_softmax(logits, dim=-1)
            acts = torch.from_numpy(buffer.actions[:, idx])
            new_logp = logp_all.gather(-1, acts.unsqueeze(-1)).squeeze(-1)
            old_logp = torch.from_numpy(buffer.logprobs[:, idx])
            a = torch.from_numpy(adv_norm[:, idx])
            ratio = torch.exp(new_logp - old_logp)
            clipped = torch.clamp(ratio, 1 - config.clip_eps, 1 + config.clip_eps)
            policy_loss = -torch.min(ratio * a, clipped * a).mean()
            ret = torch.from_numpy(buffer.returns[:, idx])
            value_loss = 0.5 * (values - ret).pow(2).mean()
            entropy = -(logp_all.exp() * logp_all).sum(-1).mean()
            loss = (policy_loss + config.value_coef * value_loss
                    - config.entropy_coef * entropy)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss: policy={policy_loss.item()} "
                    f"value={value_loss.item()} entropy={entropy.item()}")
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(agent.parameters(), 0.5)
            optimizer.step()
            p_losses.append(policy_loss.item())
            v_losses.append(value_loss.item())
            ents.append(entropy.item())
    return LossReport(float(np.mean(p_losses)), float(np.mean(v_losses)),
                      float(np.mean(ents)))


# ---------------------------------------------------------------------------
# Imitation

def collect_expert_batch(sampler: TaskSampler, seeds, builder: InputBuilder):
    """Rolls the scripted expert through each seed's episode and returns a
    padded teacher-forced batch: (inputs (T,B,...), actions (T,B),
    mask (T,B), total env steps)."""
    episodes = []
    for seed in seeds:
        sim = sampler.build(seed)
        frames, acts = [], []
        obs = sim.observe()
        while not sim.done:
            frames.append(builder.frame(sim, obs))
            a = expert_action(sim)
            acts.append(sim.action_space.index(a))
            obs = sim.step(a).observation
        episodes.append((frames, acts))
    t_max = max(len(a) for _, a in episodes)
    b = len(episodes)
    actions = np.zeros((t_max, b), np.int64)
    mask = np.zeros((t_max, b), bool)
    inputs = {k: np.zeros((t_max, b) + np.asarray(v).shape,
                          dtype=_INPUT_DTYPES[k])
              for k, v in episodes[0][0][0].items()}
    total = 0
    for j, (frames, acts) in enumerate(episodes):
        for t, (fr, a) in enumerate(zip(frames, acts)):
            for k, v in fr.items():
                inputs[k][t, j] = v
            actions[t, j] = a
            mask[t, j] = True
        total += len(acts)
    return inputs, actions, mask, total


def imitation_update(agent, expert_batch, config: TrainConfig,
                     optimizer: torch.optim.Optimizer) -> LossReport:
    """Teacher-forced cross-entropy against the expert's actions."""
    inputs, actions, mask = expert_batch[:3]
    t_len, b = actions.shape
    tensors = {k: torch.from_numpy(v) for k, v in inputs.items()}
    h0 = agent.initial_hidden(b)
    dp = torch.zeros(t_len, b, dtype=torch.bool)
    logits, _, _ = agent.unroll(tensors, h0, dp)
    m = torch.from_numpy(mask)
    flat_logits = logits[m]
    flat_actions = torch.from_numpy(actions)[m]
    loss = torch.nn.functional.cross_entropy(flat_logits, flat_actions)
    if not torch.isfinite(loss):
        raise RuntimeError(f"non-finite imitation loss {loss.item()}")
    optimizer.zero_grad()
    loss.backward()
    torch.nn.utils.clip_grad_norm_(agent.parameters(), 0.5)
    optimizer.step()
    with torch.no_grad():
        logp = torch.log_softmax(flat_logits, dim=-1)
        entropy = -(logp.exp() * logp).sum(-1).mean().item()
    return LossReport(loss.item(), 0.0, entropy)


# ---------------------------------------------------------------------------
# Evaluation actors

class PolicyActor:
    """Runs a trained policy, one episode at a time."""

    def __init__(self, policy, builder: InputBuilder, mode: str = "argmax",
                 rng: Optional[np.random.Generator] = None):
        self.policy = policy
        self.builder = builder
        self.mode = mode
        self.rng = rng
        self._hidden = None

    def reset(self, sim) -> None:
        self._hidden = self.policy.initial_hidden(1)

    def act(self, sim, obs) -> int:
        frame = self.builder.frame(sim, obs)
        batch = self.builder.stack([frame])
        with torch.no_grad():
            out = self.policy.step(batch, self._hidden)
        self._hidden = out.hidden
        logits = out.logits.numpy()
        if self.mode == "argmax":
            return int(np.argmax(logits[0]))
        return int(sample_actions(logits, self.rng)[0])


class RandomActor:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def reset(self, sim) -> None:
        pass

    def act(self, sim, obs) -> int:
        return int(self.rng.integers(0, len(sim.action_space.actions)))


class ExpertActor:
    def reset(self, sim) -> None:
        pass

    def act(self, sim, obs) -> int:
        return sim.action_space.index(expert_action(sim))


def evaluate(actor, sampler: TaskSampler, seeds, kind: Optional[str] = None):
    """Runs one episode per seed; returns (records, metric row dict).
    Zero seeds give an empty report."""
    records: list[EpisodeRecord] = []
    for seed in seeds:
        sim = sampler.build(seed)
        actor.reset(sim)
        obs = sim.observe()
        while not sim.done:
            obs = sim.step(actor.act(sim, obs)).observation
        records.append(episode_record(sim))
    if not records:
        return [], {k: float("nan") for k in
                    ("sr", "spl", "softspl", "goal_dist", "fs", "e", "m")}
    return records, metric_row(records, kind or sampler.params.kind)


def expert_agreement(policy, builder: InputBuilder, sampler: TaskSampler,
                     seeds) -> float:
    """Teacher-forced agreement: fraction of expert-trajectory steps where
    the policy's argmax equals the expert action."""
    match = 0
    total = 0
    for seed in seeds:
        sim = sampler.build(seed)
        hidden = policy.initial_hidden(1)
        obs = sim.observe()
        while not sim.done:
            frame = builder.frame(sim, obs)
            with torch.no_grad():
                out = policy.step(builder.stack([frame]), hidden)
            hidden = out.hidden
            expert = sim.action_space.index(expert_action(sim))
            match += int(np.argmax(out.logits.numpy()[0]) == expert)
            total += 1
            obs = sim.step(expert).observation
    return match / max(total, 1)


# ---------------------------------------------------------------------------
# Config plumbing

_TASK_FOR_ARCH = {"objectnav": "objectnav", "pointnav": "pointnav",
                  "rearrange": "rearrange", "zeroshot": "objectnav"}


def build_backbone_from_config(cfg: ExperimentConfig) -> Backbone:
    agent = cfg.agent
    source = agent.backbone
    channels = agent.channels
    if source == "stub-informative":
        channels = max(channels,
                       informative_channel_count(cfg.sim.category_count))
    spec = BackboneSpec(id=agent.backbone, channels=channels,
                        spatial=agent.spatial, source=_source_of(agent.backbone),
                        weights_file=agent.weights_file,
                        feature_dir=agent.feature_dir)
    return Backbone(spec)


def _source_of(backbone_id: str) -> str:
    for source in ("stub-informative", "stub-noise", "stub-random",
                   "file-weights", "external-pretrained"):
        if backbone_id.startswith(source):
            return source
    raise ValueError(f"cannot infer source from backbone id {backbone_id!r}")


def policy_for_config(cfg: ExperimentConfig, backbone: Backbone,
                      n_actions: int):
    arch = cfg.agent.architecture
    seed = stream_seed(cfg.train.seed, "policy-init")
    if arch == "objectnav":
        return build_policy(arch, channels=backbone.spec.channels,
                            n_actions=n_actions,
                            goal_rows=cfg.sim.category_count,
                            spatial=backbone.spec.spatial, seed=seed)
    if arch == "pointnav":
        return build_policy(arch, channels=backbone.spec.channels,
                            n_actions=n_actions, goal_mode="polar", seed=seed)
    if arch == "rearrange":
        return build_policy(arch, channels=backbone.spec.channels,
                            n_actions=n_actions,
                            spatial=backbone.spec.spatial, seed=seed)
    if arch == "zeroshot":
        return build_policy(arch, dim=1024, n_actions=n_actions, seed=seed)
    raise ValueError(f"unknown architecture {arch!r}")


def task_params_from_config(cfg: ExperimentConfig,
                            goal_categories=None) -> TaskParams:
    t = cfg.task
    cats = goal_categories if goal_categories is not None else t.goal_categories
    return TaskParams(kind=t.kind, shuffle_count=t.shuffle_count,
                      open_toggle_count=t.open_toggle_count,
                      goal_categories=list(cats) if cats is not None else None,
                      min_start_distance=t.min_start_distance,
                      start_in_view=t.start_in_view)


def sim_config_from_config(cfg: ExperimentConfig):
    from .sim import SimConfig
    s = cfg.sim
    return SimConfig(grid_height=s.grid_height, grid_width=s.grid_width,
                     object_count=s.object_count,
                     category_count=s.category_count, wall_count=s.wall_count,
                     surface_count=s.surface_count, max_steps=s.max_steps)


# ---------------------------------------------------------------------------
# Trainer

CSV_COLUMNS = ["step", "loss_policy", "loss_value", "entropy", "sr_val", "spl_val"]


class Trainer:
    """Drives one training run to total_steps with periodic validation,
    checkpointing, and exact resume."""

    def __init__(self, cfg: ExperimentConfig, out_dir: str,
                 goal_categories=None):
        cfg.validate()
        self.cfg = cfg
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.backbone = build_backbone_from_config(cfg)
        sim_cfg = sim_config_from_config(cfg)
        params = task_params_from_config(cfg, goal_categories)
        obs_mode = "state" if self.backbone.needs == "state" else "rgb"
        self.sampler = TaskSampler(sim_cfg, params, obs_mode=obs_mode)
        space = ActionSpace.for_task(params.kind, sim_cfg.category_count)
        self.n_actions = len(space.actions)
        self.policy = policy_for_config(cfg, self.backbone, self.n_actions)
        self.builder = InputBuilder(cfg.agent.architecture, self.backbone,
                                    sim_cfg.category_count)
        self.optimizer = torch.optim.Adam(self.policy.parameters(),
                                          lr=cfg.train.lr)
        self.rng = np.random.default_rng(stream_seed(cfg.train.seed, "rollout"))
        self.envs: Optional[VecEnvs] = None
        self.hidden: Optional[torch.Tensor] = None
        self.last_done: Optional[np.ndarray] = None
        self.steps_done = 0
        self.updates_done = 0
        self.best_sr = -1.0
        self.sr_val = float("nan")
        self.spl_val = float("nan")
        self.rows: list[list] = []

    # -- persistence ---------------------------------------------------------

    def _state_dir(self) -> str:
        return os.path.join(self.out_dir, "state")

    def save_state(self) -> None:
        arrays = {}
        for name, p in self.policy.state_dict().items():
            arrays[f"param/{name}"] = p.detach().numpy()
        for i, (name, p) in enumerate(self.policy.named_parameters()):
            st = self.optimizer.state.get(p)
            if st:
                arrays[f"opt/{name}/exp_avg"] = st["exp_avg"].numpy()
                arrays[f"opt/{name}/exp_avg_sq"] = st["exp_avg_sq"].numpy()
        if self.hidden is not None:
            arrays["hidden"] = self.hidden.detach().numpy()
        meta = {
            "steps_done": self.steps_done,
            "updates_done": self.updates_done,
            "best_sr": self.best_sr,
            "sr_val": None if math.isnan(self.sr_val) else self.sr_val,
            "spl_val": None if math.isnan(self.spl_val) else self.spl_val,
            "opt_steps": {name: int(self.optimizer.state[p]["step"].item())
                          for name, p in self.policy.named_parameters()
                          if p in self.optimizer.state},
            "rng": self.rng.bit_generator.state,
            "last_done": (self.last_done.tolist()
                          if self.last_done is not None else None),
            "envs": self.envs.state() if self.envs is not None else None,
        }
        write_arrays(self._state_dir(), {"kind": "trainer-state"}, arrays)
        with open(os.path.join(self._state_dir(), "trainer.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(meta, fh)

    def load_state(self) -> None:
        with open(os.path.join(self._state_dir(), "trainer.json"), "r",
                  encoding="utf-8") as fh:
            meta = json.load(fh)
        _, arrays = read_arrays(self._state_dir())
        state = {name[len("param/"):]: torch.from_numpy(arr)
                 for name, arr in arrays.items() if name.startswith("param/")}
        self.policy.load_state_dict(state)
        # Rebuild Adam moments exactly.
        self.optimizer = torch.optim.Adam(self.policy.parameters(),
                                          lr=self.cfg.train.lr)
        for name, p in self.policy.named_parameters():
            key = f"opt/{name}/exp_avg"
            if key in arrays:
                self.optimizer.state[p] = {
                    "step": torch.tensor(float(meta["opt_steps"][name])),
                    "exp_avg": torch.from_numpy(arrays[key].copy()),
                    "exp_avg_sq": torch.from_numpy(arrays[f"opt/{name}/exp_avg_sq"].copy()),
                }
        self.steps_done = meta["steps_done"]
        self.updates_done = meta["updates_done"]
        self.best_sr = meta["best_sr"]
        self.sr_val = meta["sr_val"] if meta["sr_val"] is not None else float("nan")
        self.spl_val = meta["spl_val"] if meta["spl_val"] is not None else float("nan")
        self.rng.bit_generator.state = meta["rng"]
        if meta["last_done"] is not None:
            self.last_done = np.array(meta["last_done"], dtype=bool)
        if meta["envs"] is not None:
            self._ensure_envs()
            self.envs.restore(meta["envs"])
        if "hidden" in arrays:
            self.hidden = torch.from_numpy(arrays["hidden"].copy())
        csv_path = os.path.join(self.out_dir, "training.csv")
        if os.path.exists(csv_path):
            with open(csv_path, newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))[1:]
            self.rows = rows[: self.updates_done]

    # -- loop ------------------------------------------------------------------

    def _ensure_envs(self) -> None:
        if self.envs is None:
            self.envs = VecEnvs(self.sampler, self.cfg.task.train_seeds,
                                self.cfg.train.workers, self.builder)
            self.hidden = self.policy.initial_hidden(self.envs.workers)
            self.last_done = np.zeros(self.envs.workers, bool)

    def _validate(self) -> None:
        actor = PolicyActor(self.policy, self.builder, mode="argmax")
        seeds = self.cfg.task.val_seeds[: self.cfg.train.eval_episodes]
        _, row = evaluate(actor, self.sampler, seeds)
        self.sr_val = row["sr"]
        self.spl_val = row["spl"]
        if row["sr"] > self.best_sr:
            self.best_sr = row["sr"]
            save_checkpoint(self.policy,
                            os.path.join(self.out_dir, "checkpoints", "best"),
                            step=self.steps_done,
                            extra={"sr_val": row["sr"]})

    def _write_csv(self) -> None:
        path = os.path.join(self.out_dir, "training.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            w.writerows(self.rows)

    def update_once(self) -> LossReport:
        """One rollout + one optimization pass (or one imitation batch)."""
        train = self.cfg.train
        if train.learner == "ppo":
            self._ensure_envs()
            buf, self.hidden, self.last_done = collect_rollout(
                self.envs, self.policy, train.rollout_length, self.hidden,
                self.rng, self.last_done)
            gae_returns(buf, train.gamma, train.gae_lambda)
            report = ppo_update(self.policy, buf, train, self.optimizer, self.rng)
            self.steps_done += buf.steps
        else:
            seeds = [self.cfg.task.train_seeds[
                (self.updates_done * train.workers + i)
                % len(self.cfg.task.train_seeds)] for i in range(train.workers)]
            batch = collect_expert_batch(self.sampler, seeds, self.builder)
            report = imitation_update(self.policy, batch, train, self.optimizer)
            self.steps_done += batch[3]
        self.updates_done += 1
        if self.updates_done == 1 or self.updates_done % train.eval_every == 0:
            self._validate()
        self.rows.append([self.steps_done, repr(report.loss_policy),
                          repr(report.loss_value), repr(report.entropy),
                          repr(self.sr_val), repr(self.spl_val)])
        return report

    def run(self, stop_sr: Optional[float] = None,
            progress: Optional[Callable[[int, LossReport], None]] = None) -> None:
        while self.steps_done < self.cfg.train.total_steps:
            report = self.update_once()
            if progress is not None:
                progress(self.steps_done, report)
            if stop_sr is not None and self.best_sr >= stop_sr:
                break
        self._write_csv()
        save_checkpoint(self.policy,
                        os.path.join(self.out_dir, "checkpoints", "last"),
                        step=self.steps_done)
        if self.best_sr < 0:
            self._validate()
        self.save_state()

    def finish(self) -> None:
        """Flush CSV and checkpoints without running further updates."""
        self._write_csv()
        save_checkpoint(self.policy,
                        os.path.join(self.out_dir, "checkpoints", "last"),
                        step=self.steps_done)
        self.save_state()
