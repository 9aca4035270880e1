"""Linear probing of frozen features for four scene primitives.

A probe is a single linear layer trained on pooled backbone features against
ground-truth labels computed from the simulator state. Scores measure what
the representation encodes, not what a deep readout could extract.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch

from .encoders import Backbone, average_pool
from .config import ProbeConfig
from .rng import stream_seed
from .sim import AgentPose, SimConfig, generate_scene, walkable_mask
from .sim.labels import ground_truth_labels
from .sim.render import render
from .sim.types import HORIZONS, REACH_REACHABLE, cell_center

__all__ = [
    "PROBE_TASKS", "ProbeRecord", "ProbeDataset", "ProbeModel", "ProbeScore",
    "generate_probe_dataset", "train_probe", "eval_probe", "probe_report",
    "micro_f1", "chance_score",
]

PROBE_TASKS = ("presence", "localization", "free_space", "reachability")
_POOL_SPATIAL = {"avg1": 1, "avg3": 3}


@dataclass
class ProbeRecord:
    frame_id: str
    pooled_features: np.ndarray   # (C,) or (C, 3, 3)
    labels: dict
    split: str


@dataclass
class ProbeDataset:
    """Pooled features plus every label family, with index-based splits."""
    backbone_id: str
    pooling: str
    category_count: int
    frame_ids: list[str]
    features: np.ndarray            # (N, C) or (N, C, 3, 3) float32
    presence: np.ndarray            # (N, K) uint8
    localization: np.ndarray        # (N, K, 3, 3) uint8
    free_space: np.ndarray          # (N,) int64
    reachability: np.ndarray        # (N, K) uint8, 1 = reachable
    reach_mask: np.ndarray          # (N, K) bool, balanced subset
    splits: dict[str, np.ndarray]   # split -> record indices

    def record(self, i: int) -> ProbeRecord:
        split = next(s for s, idx in self.splits.items() if i in idx)
        return ProbeRecord(
            frame_id=self.frame_ids[i], pooled_features=self.features[i],
            labels={"presence": self.presence[i],
                    "localization": self.localization[i],
                    "free_space": int(self.free_space[i]),
                    "reachability": self.reachability[i]},
            split=split)

    def split_indices(self, split: str) -> np.ndarray:
        if split not in self.splits:
            raise ValueError(f"unknown split {split!r}")
        return self.splits[split]

    # -- disk format: manifest.json + features.bin + labels.bin + splits.json

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        feats = np.ascontiguousarray(self.features, dtype="<f4")
        feats.tofile(os.path.join(directory, "features.bin"))
        label_arrays = [("presence", self.presence),
                        ("localization", self.localization),
                        ("free_space", self.free_space),
                        ("reachability", self.reachability),
                        ("reach_mask", self.reach_mask)]
        entries = {}
        offset = 0
        with open(os.path.join(directory, "labels.bin"), "wb") as fh:
            for name, arr in label_arrays:
                data = np.ascontiguousarray(arr, dtype="<f4")
                fh.write(data.tobytes())
                entries[name] = {"shape": list(arr.shape), "offset": offset}
                offset += data.nbytes
        manifest = {
            "kind": "probe-dataset", "dtype": "f32-le",
            "backbone": self.backbone_id, "pooling": self.pooling,
            "category_count": self.category_count,
            "features_shape": list(self.features.shape),
            "labels": entries, "frame_ids": self.frame_ids,
        }
        with open(os.path.join(directory, "manifest.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(directory, "splits.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({s: idx.tolist() for s, idx in self.splits.items()},
                      fh, indent=1, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(directory: str) -> "ProbeDataset":
        with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("dtype") != "f32-le":
            raise ValueError(f"unsupported dtype {manifest.get('dtype')!r}")
        shape = tuple(manifest["features_shape"])
        feats = np.fromfile(os.path.join(directory, "features.bin"),
                            dtype="<f4").reshape(shape)
        raw = np.fromfile(os.path.join(directory, "labels.bin"), dtype="<f4")
        out = {}
        for name, entry in manifest["labels"].items():
            lshape = tuple(entry["shape"])
            start = entry["offset"] // 4
            out[name] = raw[start:start + int(np.prod(lshape))].reshape(lshape)
        with open(os.path.join(directory, "splits.json"), encoding="utf-8") as fh:
            splits = {s: np.asarray(idx, dtype=np.int64)
                      for s, idx in json.load(fh).items()}
        return ProbeDataset(
            backbone_id=manifest["backbone"], pooling=manifest["pooling"],
            category_count=manifest["category_count"],
            frame_ids=list(manifest["frame_ids"]),
            features=feats.astype(np.float32),
            presence=out["presence"].astype(np.uint8),
            localization=out["localization"].astype(np.uint8),
            free_space=out["free_space"].astype(np.int64),
            reachability=out["reachability"].astype(np.uint8),
            reach_mask=out["reach_mask"].astype(bool),
            splits=splits)


# ---------------------------------------------------------------------------
# Dataset generation

def _valid_poses(scene) -> list[AgentPose]:
    mask = walkable_mask(scene.grid, {o.cell() for o in scene.objects})
    poses = []
    for cell in map(tuple, np.argwhere(mask)):
        for heading in range(0, 360, 30):
            for horizon in HORIZONS:
                poses.append(AgentPose(cell_center(cell), heading, horizon))
    return poses


def _frame_features(backbone: Backbone, scene, pose,
                    pooling: str) -> tuple[np.ndarray, np.ndarray | None]:
    """(pooled features, semantic buffer or None). Renders at most once."""
    semantic = None
    if backbone.needs == "state":
        fmap = backbone.encode_scene(scene, pose)
    else:
        rgb, semantic = render(scene, pose)
        fmap = backbone.encode(rgb)
    pooled = average_pool(fmap, _POOL_SPATIAL[pooling])
    return pooled.astype(np.float32), semantic


def _balance_mask(reach: np.ndarray, split_idx: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """Per category, keep an equal number of positive and negative (frame,
    category) pairs inside one split; everything else is masked out."""
    mask = np.zeros_like(reach, dtype=bool)
    for c in range(reach.shape[1]):
        pos = split_idx[reach[split_idx, c] == 1]
        neg = split_idx[reach[split_idx, c] == 0]
        n = min(len(pos), len(neg))
        if n == 0:
            continue
        keep_pos = rng.choice(pos, size=n, replace=False)
        keep_neg = rng.choice(neg, size=n, replace=False)
        mask[keep_pos, c] = True
        mask[keep_neg, c] = True
    return mask


def generate_probe_dataset(scene_splits: dict[str, list[int]],
                           frames_per_scene: Union[int, dict[str, int]],
                           backbone: Backbone, pooling: str,
                           sim_config: Optional[SimConfig] = None,
                           seed: int = 0) -> ProbeDataset:
    """Random valid poses from disjoint scene splits, featurized and pooled.

    `frames_per_scene` may be one count for every split or a per-split dict.
    Poses are drawn without replacement, so asking for more frames than a
    scene has distinct poses is an error.
    """
    if pooling not in _POOL_SPATIAL:
        raise ValueError(f"unknown pooling {pooling!r}")
    sim_config = sim_config or SimConfig()
    seen: set[int] = set()
    for split, seeds in scene_splits.items():
        overlap = seen & set(seeds)
        if overlap:
            raise ValueError(f"scene seeds {sorted(overlap)} appear in more "
                             f"than one split")
        seen |= set(seeds)

    feats, pres, loc, free, reach, ids = [], [], [], [], [], []
    split_slices: dict[str, list[int]] = {}
    for split, seeds in scene_splits.items():
        count = (frames_per_scene if isinstance(frames_per_scene, int)
                 else frames_per_scene[split])
        split_slices[split] = []
        for scene_seed in seeds:
            scene = generate_scene(scene_seed, sim_config)
            poses = _valid_poses(scene)
            if count > len(poses):
                raise ValueError(
                    f"scene {scene_seed} has {len(poses)} distinct poses, "
                    f"cannot sample {count} frames without replacement")
            rng = np.random.default_rng(
                stream_seed(seed, f"probe-frames/{split}/{scene_seed}"))
            picks = rng.choice(len(poses), size=count, replace=False)
            for k, pi in enumerate(picks):
                pose = poses[int(pi)]
                pooled, semantic = _frame_features(backbone, scene, pose, pooling)
                labels = ground_truth_labels(scene, pose, semantic)
                split_slices[split].append(len(ids))
                ids.append(f"{split}/{scene_seed}/{k}")
                feats.append(pooled)
                pres.append(labels.presence)
                loc.append(labels.localization)
                free.append(labels.free_space)
                reach.append((labels.reachability == REACH_REACHABLE)
                             .astype(np.uint8))

    reach_arr = np.stack(reach)
    splits = {s: np.asarray(idx, dtype=np.int64)
              for s, idx in split_slices.items()}
    mask = np.zeros_like(reach_arr, dtype=bool)
    bal_rng = np.random.default_rng(stream_seed(seed, "probe-balance"))
    for split in sorted(splits):
        mask |= _balance_mask(reach_arr, splits[split], bal_rng)

    return ProbeDataset(
        backbone_id=backbone.spec.id, pooling=pooling,
        category_count=sim_config.category_count, frame_ids=ids,
        features=np.stack(feats).astype(np.float32),
        presence=np.stack(pres), localization=np.stack(loc),
        free_space=np.asarray(free, dtype=np.int64),
        reachability=reach_arr, reach_mask=mask, splits=splits)


# ---------------------------------------------------------------------------
# Probe models

FREE_SPACE_CLASSES = 11


class ProbeModel(torch.nn.Module):
    """Exactly one linear map. Localization is a 1x1 convolution over the
    3x3 grid, i.e. the same kernel applied at every cell."""

    def __init__(self, task: str, feature_shape: tuple[int, ...],
                 category_count: int):
        super().__init__()
        if task not in PROBE_TASKS:
            raise ValueError(f"unknown probe task {task!r}")
        self.task = task
        self.feature_shape = tuple(feature_shape)
        self.category_count = category_count
        self.best_val = float("nan")
        if task == "localization":
            if len(feature_shape) != 3 or feature_shape[1:] != (3, 3):
                raise ValueError("localization requires 3x3 pooled features")
            self.linear = torch.nn.Conv2d(feature_shape[0], category_count,
                                          kernel_size=1)
        else:
            out = FREE_SPACE_CLASSES if task == "free_space" else category_count
            self.linear = torch.nn.Linear(int(np.prod(feature_shape)), out)
        # The problem is convex for a linear model, so zero init is exact
        # and keeps training deterministic with no rng.
        torch.nn.init.zeros_(self.linear.weight)
        torch.nn.init.zeros_(self.linear.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.task == "localization":
            return self.linear(x)
        return self.linear(x.reshape(x.shape[0], -1))


def _task_targets(dataset: ProbeDataset, task: str, idx: np.ndarray):
    """(targets tensor, mask tensor or None) for the given record indices."""
    if task == "presence":
        return torch.from_numpy(dataset.presence[idx].astype(np.float32)), None
    if task == "localization":
        y = dataset.localization[idx].astype(np.float32)
        return torch.from_numpy(y), None
    if task == "free_space":
        return torch.from_numpy(dataset.free_space[idx]), None
    if task == "reachability":
        y = torch.from_numpy(dataset.reachability[idx].astype(np.float32))
        return y, torch.from_numpy(dataset.reach_mask[idx])
    raise ValueError(f"unknown probe task {task!r}")


def _probe_loss(model: ProbeModel, x: torch.Tensor, y: torch.Tensor,
                mask: Optional[torch.Tensor]) -> Optional[torch.Tensor]:
    logits = model(x)
    if model.task == "free_space":
        return torch.nn.functional.cross_entropy(logits, y)
    if model.task == "reachability":
        if mask is None or not mask.any():
            return None
        return torch.nn.functional.binary_cross_entropy_with_logits(
            logits[mask], y[mask])
    return torch.nn.functional.binary_cross_entropy_with_logits(logits, y)


def train_probe(task: str, dataset: ProbeDataset,
                config: Optional[ProbeConfig] = None) -> ProbeModel:
    """Adam on batches of 128 at lr 0.001. Checkpoint selection and the
    early-stop plateau both track validation loss (smooth where thresholded
    scores sit flat for long stretches); the best checkpoint is returned."""
    config = config or ProbeConfig()
    feature_shape = dataset.features.shape[1:]
    model = ProbeModel(task, feature_shape, dataset.category_count)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)

    train_idx = dataset.split_indices("train")
    val_idx = dataset.split_indices("val")
    x_all = torch.from_numpy(dataset.features)
    y_train, m_train = _task_targets(dataset, task, train_idx)
    x_train = x_all[torch.from_numpy(train_idx)]
    y_val, m_val = _task_targets(dataset, task, val_idx)
    x_val = x_all[torch.from_numpy(val_idx)]
    rng = np.random.default_rng(
        stream_seed(config.seed, f"probe/{task}/{dataset.backbone_id}/{dataset.pooling}"))

    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    best_loss = float("inf")
    since_best = 0
    n = len(train_idx)
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            rows = torch.from_numpy(order[lo: lo + config.batch_size])
            loss = _probe_loss(model, x_train[rows], y_train[rows],
                               None if m_train is None else m_train[rows])
            if loss is None:
                continue
            opt.zero_grad()
            loss.backward()
            opt.step()
        with torch.no_grad():
            val_loss = _probe_loss(model, x_val, y_val, m_val)
        val_loss = float("inf") if val_loss is None else val_loss.item()
        if val_loss < best_loss - 1e-6:
            best_loss = val_loss
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    model.load_state_dict(best_state)
    model.best_val = eval_probe(model, dataset, "val").value
    return model


# ---------------------------------------------------------------------------
# Scoring

@dataclass
class ProbeScore:
    task: str
    metric: str    # "micro_f1" or "accuracy"
    value: float
    decisions: int
    null: float = float("nan")
    """Expected score of a label-independent predictor: for F1 tasks the
    null at the model's own positive rate q against base rate b, namely
    2qb/(q+b); for accuracy tasks the best constant predictor."""


def micro_f1(pred: np.ndarray, true: np.ndarray) -> float:
    """2TP / (2TP + FP + FN) over all binary decisions; 0 when degenerate."""
    pred = pred.astype(bool).ravel()
    true = true.astype(bool).ravel()
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def _f1_null(pred: np.ndarray, true: np.ndarray) -> float:
    """Expected micro-F1 when predictions carry no label information:
    positives land on true positives at the base rate, so with predicted
    rate q and base rate b, E[F1] = 2qb/(q+b)."""
    q = float(np.mean(pred))
    b = float(np.mean(true))
    return 2 * q * b / (q + b) if (q + b) > 0 else 0.0


def eval_probe(model: ProbeModel, dataset: ProbeDataset,
               split: str = "test") -> ProbeScore:
    idx = dataset.split_indices(split)
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    x = torch.from_numpy(dataset.features[idx])
    with torch.no_grad():
        logits = model(x).numpy()
    task = model.task
    if task in ("presence", "localization"):
        true = (dataset.presence if task == "presence"
                else dataset.localization)[idx]
        pred = 1 / (1 + np.exp(-logits)) > 0.5
        return ProbeScore(task, "micro_f1", micro_f1(pred, true), pred.size,
                          null=_f1_null(pred, true))
    if task == "free_space":
        pred = logits.argmax(axis=1)
        true = dataset.free_space[idx]
        counts = np.bincount(true, minlength=FREE_SPACE_CLASSES)
        return ProbeScore(task, "accuracy", float(np.mean(pred == true)),
                          len(idx), null=float(counts.max() / counts.sum()))
    mask = dataset.reach_mask[idx]
    if not mask.any():
        raise ValueError(f"no balanced reachability pairs in split {split!r}")
    pred = (1 / (1 + np.exp(-logits)) > 0.5)[mask]
    true = dataset.reachability[idx][mask].astype(bool)
    rate = float(true.mean())
    return ProbeScore(task, "accuracy", float(np.mean(pred == true)),
                      int(mask.sum()), null=max(rate, 1 - rate))


def chance_score(task: str, dataset: ProbeDataset, split: str = "test") -> float:
    """Score of the best label-independent constant predictor, the floor an
    uninformative backbone should sit near."""
    idx = dataset.split_indices(split)
    if task in ("presence", "localization"):
        true = (dataset.presence if task == "presence"
                else dataset.localization)[idx]
        flat = true.reshape(len(idx), dataset.category_count, -1)
        rate = flat.mean(axis=(0, 2))
        pred = np.broadcast_to((rate > 0.5)[None, :, None], flat.shape)
        return micro_f1(pred, flat)
    if task == "free_space":
        counts = np.bincount(dataset.free_space[idx],
                             minlength=FREE_SPACE_CLASSES)
        return float(counts.max() / counts.sum())
    mask = dataset.reach_mask[idx]
    true = dataset.reachability[idx][mask]
    if true.size == 0:
        return 0.5
    rate = true.mean()
    return float(max(rate, 1 - rate))


# ---------------------------------------------------------------------------
# Report grid

def probe_report(backbones: list[Backbone], poolings: list[str],
                 tasks: list[str], scene_splits: dict[str, list[int]],
                 frames_per_scene: Union[int, dict[str, int]],
                 sim_config: Optional[SimConfig] = None,
                 config: Optional[ProbeConfig] = None,
                 seed: int = 0) -> list[dict]:
    """Trains the full (task x backbone x pooling) grid and returns one row
    per trained cell: {task, pretraining, pooling, metric, score}.
    Localization is skipped for poolings without a spatial grid."""
    config = config or ProbeConfig()
    rows = []
    for backbone in backbones:
        for pooling in poolings:
            dataset = generate_probe_dataset(scene_splits, frames_per_scene,
                                             backbone, pooling,
                                             sim_config=sim_config, seed=seed)
            for task in tasks:
                if task == "localization" and _POOL_SPATIAL[pooling] != 3:
                    continue
                model = train_probe(task, dataset, config)
                score = eval_probe(model, dataset, "test")
                rows.append({"task": task, "pretraining": backbone.spec.id,
                             "pooling": pooling, "metric": score.metric,
                             "score": score.value})
    return rows
