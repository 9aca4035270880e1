"""Frozen visual backbones, pooling, and goal/action embeddings.

Backbones never receive gradients: their parameters are plain numpy arrays or
torch tensors with requires_grad=False, hashed before and after training to
prove it. Four sources:

  stub-random        fixed-seed strided conv stack over the RGB frame
  stub-noise         deterministic hash of the frame bytes, label-independent
  stub-informative   fixed linear function of privileged scene state
  file-weights       conv stack with parameters loaded from a weights file
  external-pretrained reader for precomputed per-frame feature files
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .io_bin import read_arrays, write_arrays
from .rng import stream_seed
from .sim.labels import ground_truth_labels
from .sim.types import FREE_SPACE_CLASSES, REACH_REACHABLE

__all__ = [
    "BackboneSpec", "FeatureMap", "Backbone", "build_backbone", "encode",
    "average_pool", "attention_pool", "AttentionPoolWeights",
    "goal_embed_category", "goal_embed_polar", "prev_action_embed",
    "make_embedding_table", "text_goal_embed", "parameter_hash",
    "informative_channel_count", "featurize",
    "write_feature_file", "FeatureStore",
]

IMG_SIDE = 64
ATTN_DIM = 1024
ATTN_HEADS = 8

SOURCES = ("stub-random", "stub-noise", "stub-informative",
           "file-weights", "external-pretrained")

# Goal and previous-action embeddings are 32-dim vectors; text goals 1024.
GoalEmbedding = torch.Tensor
ActionEmbedding = torch.Tensor


@dataclass(frozen=True)
class BackboneSpec:
    id: str
    channels: int = 64
    spatial: int = 7
    source: str = "stub-random"
    frozen: bool = True
    attn_pool: bool = True
    weights_file: Optional[str] = None
    feature_dir: Optional[str] = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown backbone source {self.source!r}")
        if not self.frozen:
            raise ValueError("backbones are frozen by contract")
        if self.channels < 1 or not (1 <= self.spatial <= 7):
            raise ValueError("bad channels/spatial")


@dataclass
class FeatureMap:
    data: np.ndarray           # C x H x W float32
    backbone_id: str

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"feature map must be CxHxW, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("non-finite feature values")


def informative_channel_count(category_count: int) -> int:
    """Channels the informative stub needs to carry scene state losslessly:
    localization + presence + reachable per category, plus free-space one-hot."""
    return 3 * category_count + FREE_SPACE_CLASSES


# ---------------------------------------------------------------------------
# Attention pooling (CLIP-style, frozen)

@dataclass
class AttentionPoolWeights:
    pos: np.ndarray    # (tokens+1, C)
    wq: np.ndarray     # (C, D)
    wk: np.ndarray
    wv: np.ndarray
    bq: np.ndarray     # (D,)
    bk: np.ndarray
    bv: np.ndarray
    wo: np.ndarray     # (D, out)
    bo: np.ndarray     # (out,)
    heads: int = ATTN_HEADS

    def arrays(self) -> dict[str, np.ndarray]:
        return {f"pool.{k}": getattr(self, k)
                for k in ("pos", "wq", "wk", "wv", "bq", "bk", "bv", "wo", "bo")}


def _make_pool_weights(backbone_id: str, channels: int, spatial: int,
                       out_dim: int = ATTN_DIM, heads: int = ATTN_HEADS) -> AttentionPoolWeights:
    rng = np.random.default_rng(stream_seed(0x0A77, f"{backbone_id}/pool"))
    n = spatial * spatial + 1
    d = out_dim
    s_in = 1.0 / math.sqrt(channels)
    s_d = 1.0 / math.sqrt(d)
    return AttentionPoolWeights(
        pos=rng.normal(0, s_in, (n, channels)).astype(np.float32),
        wq=rng.normal(0, s_in, (channels, d)).astype(np.float32),
        wk=rng.normal(0, s_in, (channels, d)).astype(np.float32),
        wv=rng.normal(0, s_in, (channels, d)).astype(np.float32),
        bq=np.zeros(d, np.float32), bk=np.zeros(d, np.float32),
        bv=np.zeros(d, np.float32),
        wo=rng.normal(0, s_d, (d, out_dim)).astype(np.float32),
        bo=np.zeros(out_dim, np.float32),
        heads=heads,
    )


def attention_pool(f: FeatureMap, spec) -> np.ndarray:
    """Multi-head attention over the spatial tokens with the mean token as
    query; frozen weights; returns a 1024-vector (or the weights' out dim)."""
    weights = spec
    if isinstance(spec, Backbone):
        if spec.pool_weights is None:
            raise ValueError(f"backbone {spec.spec.id!r} has no attention-pool weights")
        weights = spec.pool_weights
    data = f.data if isinstance(f, FeatureMap) else f
    c, h, w = data.shape
    tokens = data.reshape(c, h * w).T.astype(np.float64)     # (N, C)
    n = tokens.shape[0]
    if weights.pos.shape[0] != n + 1 or weights.pos.shape[1] != c:
        raise ValueError("feature shape does not match pool weights")
    mean_tok = tokens.mean(axis=0)
    seq = np.vstack([mean_tok[None, :], tokens]) + weights.pos
    q = seq[0] @ weights.wq + weights.bq
    k = seq @ weights.wk + weights.bk
    v = seq @ weights.wv + weights.bv
    d = q.shape[0]
    heads = weights.heads
    dh = d // heads
    out = np.empty(d)
    for i in range(heads):
        sl = slice(i * dh, (i + 1) * dh)
        logits = k[:, sl] @ q[sl] / math.sqrt(dh)
        logits -= logits.max()
        a = np.exp(logits)
        a /= a.sum()
        out[sl] = a @ v[:, sl]
    return (out @ weights.wo + weights.bo).astype(np.float32)


# ---------------------------------------------------------------------------
# Area-weighted average pooling

def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) row-stochastic overlap weights for 1-D area pooling."""
    w = np.zeros((n_out, n_in))
    bin_len = n_in / n_out
    for o in range(n_out):
        lo, hi = o * bin_len, (o + 1) * bin_len
        for i in range(n_in):
            overlap = min(hi, i + 1) - max(lo, i)
            if overlap > 0:
                w[o, i] = overlap / bin_len
    return w


def average_pool(f, out_spatial: int):
    """Area-weighted pooling of a CxHxW map. out_spatial=1 flattens to a
    C-vector; larger sizes return C x out x out."""
    data = f.data if isinstance(f, FeatureMap) else f
    c, h, w = data.shape
    if out_spatial > min(h, w):
        raise ValueError(f"cannot pool {h}x{w} up to {out_spatial}")
    if out_spatial < 1:
        raise ValueError("out_spatial must be >= 1")
    wr = _pool_matrix(h, out_spatial)
    wc = _pool_matrix(w, out_spatial)
    pooled = np.einsum("oi,cij,pj->cop", wr, data.astype(np.float64), wc)
    pooled = pooled.astype(np.float32)
    return pooled[:, 0, 0] if out_spatial == 1 else pooled


# ---------------------------------------------------------------------------
# Backbones

def _conv_stack(channels: int, seed_name: str,
                arrays: Optional[dict[str, np.ndarray]] = None) -> torch.nn.Sequential:
    """4-layer strided stack mapping 3x64x64 to channels x7x7."""
    mid = [16, 32, 64]
    layers: list[torch.nn.Module] = []
    specs = [(3, mid[0], 3, 2, 1), (mid[0], mid[1], 3, 2, 1),
             (mid[1], mid[2], 3, 2, 1), (mid[2], channels, 2, 1, 0)]
    for idx, (cin, cout, ksize, stride, pad) in enumerate(specs, start=1):
        conv = torch.nn.Conv2d(cin, cout, ksize, stride, pad)
        if arrays is None:
            rng = np.random.default_rng(stream_seed(0xB0B0, f"{seed_name}/conv{idx}"))
            fan_in = cin * ksize * ksize
            wgt = rng.normal(0, math.sqrt(2.0 / fan_in),
                             (cout, cin, ksize, ksize)).astype(np.float32)
            conv.weight.data = torch.from_numpy(wgt)
            conv.bias.data.zero_()
        else:
            conv.weight.data = torch.from_numpy(arrays[f"conv{idx}.weight"].copy())
            conv.bias.data = torch.from_numpy(arrays[f"conv{idx}.bias"].copy())
        layers.append(conv)
        if idx < len(specs):
            layers.append(torch.nn.ReLU())
    stack = torch.nn.Sequential(*layers)
    for p in stack.parameters():
        p.requires_grad_(False)
    return stack.eval()


class Backbone:
    """A frozen feature extractor. encode() is a pure function of the image;
    the informative stub instead exposes encode_scene() over privileged state."""

    def __init__(self, spec: BackboneSpec):
        self.spec = spec
        self._stack: Optional[torch.nn.Sequential] = None
        self._proj: Optional[np.ndarray] = None  # informative: state projection
        self._store: Optional[FeatureStore] = None
        if spec.source in ("stub-random", "file-weights"):
            if spec.source == "file-weights":
                if not spec.weights_file:
                    raise ValueError("file-weights backbone needs weights_file")
                manifest, arrays = read_arrays(spec.weights_file)
                if manifest.get("channels") != spec.channels:
                    raise ValueError("weights file channels mismatch")
                self._stack = _conv_stack(spec.channels, spec.id, arrays)
            else:
                self._stack = _conv_stack(spec.channels, spec.id)
        elif spec.source == "external-pretrained":
            if spec.feature_dir:
                self._store = FeatureStore(spec.feature_dir)
        self.pool_weights = (_make_pool_weights(spec.id, spec.channels, spec.spatial)
                             if spec.attn_pool else None)

    @property
    def needs(self) -> str:
        """Observation field this backbone consumes: image or privileged state."""
        return "state" if self.spec.source == "stub-informative" else "image"

    # -- encoding -------------------------------------------------------------

    def encode(self, image: np.ndarray) -> FeatureMap:
        spec = self.spec
        if spec.source == "stub-informative":
            raise ValueError("informative stub encodes scene state, not pixels; "
                             "use encode_scene")
        if spec.source == "external-pretrained":
            raise ValueError("external-pretrained features must be precomputed; "
                             "read them from the feature store")
        if image.shape != (3, IMG_SIDE, IMG_SIDE):
            raise ValueError(f"expected 3x{IMG_SIDE}x{IMG_SIDE} image, got {image.shape}")
        if spec.source == "stub-noise":
            payload = np.ascontiguousarray(image, dtype=np.float32).tobytes()
            digest = hashlib.blake2b(payload + spec.id.encode(), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            data = rng.standard_normal(
                (spec.channels, spec.spatial, spec.spatial)).astype(np.float32)
            return FeatureMap(data, spec.id)
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
            out = self._stack(x.unsqueeze(0)).squeeze(0).numpy()
        if spec.spatial != out.shape[-1]:
            out = average_pool(out, spec.spatial)
        return FeatureMap(np.ascontiguousarray(out, dtype=np.float32), spec.id)

    def encode_scene(self, scene, pose) -> FeatureMap:
        """Informative stub: a fixed linear image of the ground-truth labels,
        laid out so area pooling keeps every probe label threshold-separable."""
        if self.spec.source != "stub-informative":
            raise ValueError("encode_scene is only defined for the informative stub")
        labels = ground_truth_labels(scene, pose)
        k = scene.category_count
        s = self.spec.spatial
        state = np.zeros((informative_channel_count(k), s, s), dtype=np.float32)
        bin_of = _dominant_bins(s, 3)
        loc = labels.localization
        for c in range(k):
            state[c] = loc[c][np.ix_(bin_of, bin_of)]
        state[k:2 * k] = labels.presence[:, None, None]
        state[2 * k + labels.free_space] = 1.0
        state[2 * k + FREE_SPACE_CLASSES:] = (
            labels.reachability == REACH_REACHABLE).astype(np.float32)[:, None, None]
        if state.shape[0] == self.spec.channels:
            data = state
        elif state.shape[0] < self.spec.channels:
            data = np.zeros((self.spec.channels, s, s), dtype=np.float32)
            data[: state.shape[0]] = state
        else:
            if self._proj is None or self._proj.shape[1] != state.shape[0]:
                rng = np.random.default_rng(stream_seed(0x1F0, f"{self.spec.id}/proj"))
                self._proj = rng.normal(
                    0, 1.0 / math.sqrt(state.shape[0]),
                    (self.spec.channels, state.shape[0])).astype(np.float32)
            data = np.einsum("cs,sij->cij", self._proj, state)
        return FeatureMap(np.ascontiguousarray(data, dtype=np.float32), self.spec.id)

    # -- frozen-ness ----------------------------------------------------------

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self._stack is not None:
            idx = 1
            for mod in self._stack:
                if isinstance(mod, torch.nn.Conv2d):
                    out[f"conv{idx}.weight"] = mod.weight.detach().numpy()
                    out[f"conv{idx}.bias"] = mod.bias.detach().numpy()
                    idx += 1
        if self._proj is not None:
            out["proj"] = self._proj
        if self.pool_weights is not None:
            out.update(self.pool_weights.arrays())
        return out

    def save_weights(self, directory: str) -> None:
        """Write conv parameters in the file-weights format."""
        if self._stack is None:
            raise ValueError("only conv-stack backbones have weight files")
        write_arrays(directory,
                     {"backbone_id": self.spec.id, "channels": self.spec.channels,
                      "spatial": self.spec.spatial},
                     {k: v for k, v in self.parameter_arrays().items()
                      if k.startswith("conv")})


def _dominant_bins(n_in: int, n_out: int) -> np.ndarray:
    """For each input cell, the output bin holding most of its area."""
    w = _pool_matrix(n_in, n_out)
    return np.argmax(w, axis=0)


def build_backbone(spec: BackboneSpec) -> Backbone:
    return Backbone(spec)


def encode(image: np.ndarray, spec) -> FeatureMap:
    """Module-level convenience over Backbone.encode; accepts a Backbone or a
    BackboneSpec (building the backbone on the fly)."""
    backbone = spec if isinstance(spec, Backbone) else Backbone(spec)
    return backbone.encode(image)


def featurize(obs, backbone: Backbone) -> FeatureMap:
    """Features for the current frame of an Observation, routed by what the
    backbone consumes."""
    if backbone.needs == "state":
        return backbone.encode_scene(obs.scene, obs.pose)
    return backbone.encode(obs.image)


def parameter_hash(backbone: Backbone) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(backbone.spec.id.encode())
    arrays = backbone.parameter_arrays()
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arrays[name], dtype=np.float32).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Goal / action embeddings (trainable) and the frozen text-goal stub

def make_embedding_table(rows: int, dim: int = 32, seed: int = 0) -> torch.nn.Embedding:
    table = torch.nn.Embedding(rows, dim)
    rng = np.random.default_rng(stream_seed(0xE0B, f"table/{rows}/{dim}/{seed}"))
    table.weight.data = torch.from_numpy(
        rng.uniform(-0.1, 0.1, (rows, dim)).astype(np.float32))
    return table


def goal_embed_category(g: int, table: torch.nn.Embedding) -> GoalEmbedding:
    if not 0 <= g < table.num_embeddings:
        raise ValueError(f"goal index {g} out of range [0, {table.num_embeddings})")
    return table(torch.tensor(g))


def goal_embed_polar(coords, linear: torch.nn.Linear) -> GoalEmbedding:
    dist, angle = coords
    if dist < 0:
        raise ValueError("distance must be >= 0")
    return linear(torch.tensor([dist, angle], dtype=torch.float32))


def prev_action_embed(a: Optional[int], table: torch.nn.Embedding) -> ActionEmbedding:
    """Row a+1; row 0 is reserved for 'no previous action' at episode start."""
    idx = 0 if a is None else a + 1
    if not 0 <= idx < table.num_embeddings:
        raise ValueError(f"action index {a} out of range")
    return table(torch.tensor(idx))


def text_goal_embed(category_name: str, spec: Optional[BackboneSpec] = None) -> np.ndarray:
    """Frozen 1024-dim unit vector from a hash of the category name."""
    if not category_name:
        raise ValueError("empty category name")
    digest = hashlib.blake2b(category_name.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.standard_normal(ATTN_DIM)
    return (v / np.linalg.norm(v)).astype(np.float32)


# ---------------------------------------------------------------------------
# Per-frame feature files

def write_feature_file(directory: str, backbone_id: str, features: np.ndarray) -> None:
    """features: (count, C, S, S) float32, frame-major."""
    if features.ndim != 4 or features.shape[2] != features.shape[3]:
        raise ValueError(f"expected (count, C, S, S), got {features.shape}")
    count, channels, spatial, _ = features.shape
    os.makedirs(directory, exist_ok=True)
    data = np.ascontiguousarray(features, dtype="<f4")
    with open(os.path.join(directory, "features.bin"), "wb") as fh:
        fh.write(data.tobytes())
    manifest = {"backbone_id": backbone_id, "channels": channels,
                "spatial": spatial, "count": count, "dtype": "f32-le"}
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


class FeatureStore:
    """Read-only view over a feature file directory."""

    def __init__(self, directory: str):
        path = os.path.join(directory, "manifest.json")
        with open(path, "r", encoding="utf-8") as fh:
            m = json.load(fh)
        if m.get("dtype") != "f32-le":
            raise ValueError(f"unsupported feature dtype {m.get('dtype')!r}")
        self.backbone_id = m["backbone_id"]
        self.channels = int(m["channels"])
        self.spatial = int(m["spatial"])
        self.count = int(m["count"])
        self._data = np.fromfile(os.path.join(directory, "features.bin"),
                                 dtype="<f4")
        expect = self.count * self.channels * self.spatial * self.spatial
        if self._data.size != expect:
            raise ValueError(f"features.bin holds {self._data.size} floats, "
                             f"manifest implies {expect}")
        self._data = self._data.reshape(self.count, self.channels,
                                        self.spatial, self.spatial)

    def feature(self, index: int) -> FeatureMap:
        if not 0 <= index < self.count:
            raise IndexError(f"frame {index} out of range [0, {self.count})")
        return FeatureMap(self._data[index].copy(), self.backbone_id)

    def all(self) -> np.ndarray:
        return self._data
