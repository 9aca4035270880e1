"""Recurrent actor-critic policies over frozen features.

Four architectures share one interface: `_embed` maps per-step inputs to a
flat vector, a GRU carries episode state, and linear actor/critic heads emit
logits and a value. Hidden state is zero at episode start and is reset by the
caller (via done masks) between episodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from .encoders import FeatureMap
from .io_bin import read_arrays, write_arrays
from .rng import stream_seed

__all__ = [
    "PolicyOutput", "ObjectNavPolicy", "RearrangePolicy", "HabitatPolicy",
    "ZeroshotPolicy", "build_policy", "objectnav_forward", "rearrange_forward",
    "habitat_forward", "zeroshot_forward", "act", "sample_actions",
    "save_checkpoint", "load_checkpoint", "ARCHITECTURES",
]


@dataclass
class PolicyOutput:
    logits: torch.Tensor    # (B, A)
    value: torch.Tensor     # (B,)
    hidden: torch.Tensor    # (layers, B, H)


# ---------------------------------------------------------------------------
# Initialization: orthogonal recurrent weights, fan-in-scaled feedforward,
# zero biases, uniform(-0.1, 0.1) embeddings. All seeded by parameter name.

def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    q = q.T if rows < cols else q
    return q[:rows, :cols]


def _init_policy(policy: nn.Module, seed: int) -> None:
    for name, p in policy.named_parameters():
        rng = np.random.default_rng(stream_seed(seed, f"{policy.arch_id}/{name}"))
        if name.endswith("bias") or ".bias" in name or "bias" in name.split(".")[-1]:
            init = np.zeros(p.shape, np.float32)
        elif "weight_hh" in name:
            h = p.shape[1]
            blocks = [_orthogonal(rng, h, h) for _ in range(p.shape[0] // h)]
            init = np.vstack(blocks).astype(np.float32)
        elif "embed" in name:
            init = rng.uniform(-0.1, 0.1, p.shape).astype(np.float32)
        elif "actor" in name:
            fan_in = p.shape[-1] if p.ndim > 1 else 1
            init = (rng.standard_normal(p.shape) * 0.01
                    / math.sqrt(fan_in)).astype(np.float32)
        else:
            fan_in = int(np.prod(p.shape[1:])) if p.ndim > 1 else 1
            init = (rng.standard_normal(p.shape)
                    * math.sqrt(2.0 / max(fan_in, 1))).astype(np.float32)
        with torch.no_grad():
            p.copy_(torch.from_numpy(init.reshape(p.shape)))


class _RecurrentPolicy(nn.Module):
    """Shared GRU/actor/critic scaffolding. Subclasses define _embed()."""

    arch_id = "base"

    def __init__(self, embed_dim: int, hidden: int, layers: int, n_actions: int):
        super().__init__()
        self.hidden_size = hidden
        self.hidden_layers = layers
        self.n_actions = n_actions
        self.gru = nn.GRU(embed_dim, hidden, num_layers=layers)
        self.actor = nn.Linear(hidden, n_actions)
        self.critic = nn.Linear(hidden, 1)

    def initial_hidden(self, batch: int) -> torch.Tensor:
        p = next(self.parameters())
        return torch.zeros(self.hidden_layers, batch, self.hidden_size,
                           dtype=p.dtype)

    def _embed(self, inputs: dict) -> torch.Tensor:
        raise NotImplementedError

    def step(self, inputs: dict, hidden: torch.Tensor) -> PolicyOutput:
        x = self._embed(inputs)
        out, h = self.gru(x.unsqueeze(0), hidden)
        top = out.squeeze(0)
        return PolicyOutput(self.actor(top), self.critic(top).squeeze(-1), h)

    def unroll(self, inputs: dict, hidden: torch.Tensor,
               done_prev: torch.Tensor):
        """Run T steps with hidden reset where done_prev[t, b] is set.

        inputs hold (T, B, ...) tensors; done_prev marks steps whose
        predecessor ended an episode. Returns (logits (T,B,A), values (T,B),
        final hidden).
        """
        first = next(iter(inputs.values()))
        t_len, batch = first.shape[0], first.shape[1]
        flat = {k: v.reshape(t_len * batch, *v.shape[2:]) for k, v in inputs.items()}
        x_all = self._embed(flat).reshape(t_len, batch, -1)
        # One fused GRU call per reset-free segment; equivalent to stepping
        # t-by-t but with far fewer autograd nodes.
        cuts = [0] + [t for t in range(1, t_len)
                      if bool(done_prev[t].any())] + [t_len]
        outs = []
        h = hidden
        for a, b in zip(cuts, cuts[1:]):
            if a == b:
                continue
            keep = (~done_prev[a]).to(h.dtype).view(1, batch, 1)
            out, h = self.gru(x_all[a:b], h * keep)
            outs.append(out)
        top = torch.cat(outs)
        return self.actor(top), self.critic(top).squeeze(-1), h


class ObjectNavPolicy(_RecurrentPolicy):
    """Category-goal navigation head.

    Features are compressed by a 2-layer 1x1 conv stack, the tiled goal
    embedding is concatenated, a second 2-layer stack compresses again, and
    the flattened map feeds the GRU. At the full-size contract (channels
    2048, spatial 7, compress 32) the flatten is 1568-dim.
    """

    arch_id = "objectnav"

    def __init__(self, channels: int, n_actions: int = 6, goal_rows: int = 12,
                 spatial: int = 7, compress: int = 32, goal_dim: int = 32,
                 hidden: int = 512, seed: int = 0):
        self.ctor = dict(channels=channels, n_actions=n_actions,
                         goal_rows=goal_rows, spatial=spatial,
                         compress=compress, goal_dim=goal_dim, hidden=hidden,
                         seed=seed)
        super().__init__(compress * spatial * spatial, hidden, 1, n_actions)
        self.spatial = spatial
        self.conv_a = nn.Sequential(nn.Conv2d(channels, compress, 1), nn.ReLU(),
                                    nn.Conv2d(compress, compress, 1))
        self.goal_embed = nn.Embedding(goal_rows, goal_dim)
        self.conv_b = nn.Sequential(nn.Conv2d(compress + goal_dim, compress, 1),
                                    nn.ReLU(), nn.Conv2d(compress, compress, 1))
        _init_policy(self, seed)

    def _embed(self, inputs: dict) -> torch.Tensor:
        f, goal = inputs["features"], inputs["goal"]
        if f.shape[-1] != self.spatial or f.shape[-2] != self.spatial:
            raise ValueError(f"expected {self.spatial}x{self.spatial} features, "
                             f"got {tuple(f.shape)}")
        compressed = self.conv_a(f)
        g = self.goal_embed(goal)
        tiled = g[:, :, None, None].expand(-1, -1, self.spatial, self.spatial)
        both = torch.cat([compressed, tiled], dim=1)
        return self.conv_b(both).flatten(1)


class RearrangePolicy(_RecurrentPolicy):
    """Paired-view head: stacks [f1, f2, f1*f2], computes a 512-channel
    spatial attention mask (softmax over positions per channel) and a
    512-channel feature map, pools by the mask, and feeds the GRU."""

    arch_id = "rearrange"

    def __init__(self, channels: int, n_actions: int, spatial: int = 7,
                 width: int = 512, hidden: int = 512, seed: int = 0):
        self.ctor = dict(channels=channels, n_actions=n_actions,
                         spatial=spatial, width=width, hidden=hidden, seed=seed)
        super().__init__(width, hidden, 1, n_actions)
        self.spatial = spatial
        self.attn_conv = nn.Conv2d(3 * channels, width, 1)
        self.feat_conv = nn.Conv2d(3 * channels, width, 1)
        _init_policy(self, seed)

    def _embed(self, inputs: dict) -> torch.Tensor:
        f1, f2 = inputs["features"], inputs["features2"]
        if f1.shape != f2.shape:
            raise ValueError("paired views must share a shape")
        s = torch.cat([f1, f2, f1 * f2], dim=1)
        b, w = s.shape[0], self.attn_conv.out_channels
        mask = torch.softmax(self.attn_conv(s).reshape(b, w, -1), dim=-1)
        feat = self.feat_conv(s).reshape(b, w, -1)
        return (mask * feat).sum(dim=-1)

    def attention_mask(self, f1: torch.Tensor, f2: torch.Tensor) -> torch.Tensor:
        """(B, width, positions) softmax weights; rows sum to 1."""
        s = torch.cat([f1, f2, f1 * f2], dim=1)
        b, w = s.shape[0], self.attn_conv.out_channels
        return torch.softmax(self.attn_conv(s).reshape(b, w, -1), dim=-1)


class HabitatPolicy(_RecurrentPolicy):
    """Average-pooled visual vector + goal + previous action, 2-layer GRU.

    goal_mode selects a category-embedding goal or a 2-dim polar goal passed
    through a linear layer. Previous action -1 means none (episode start).
    """

    arch_id = "pointnav"

    def __init__(self, channels: int, n_actions: int = 4,
                 goal_mode: str = "polar", goal_rows: int = 21,
                 goal_dim: int = 32, act_dim: int = 32, hidden: int = 512,
                 layers: int = 2, seed: int = 0):
        if goal_mode not in ("polar", "category"):
            raise ValueError(f"goal_mode {goal_mode!r}")
        self.ctor = dict(channels=channels, n_actions=n_actions,
                         goal_mode=goal_mode, goal_rows=goal_rows,
                         goal_dim=goal_dim, act_dim=act_dim, hidden=hidden,
                         layers=layers, seed=seed)
        super().__init__(channels + goal_dim + act_dim, hidden, layers, n_actions)
        self.goal_mode = goal_mode
        if goal_mode == "polar":
            self.goal_linear = nn.Linear(2, goal_dim)
        else:
            self.goal_embed = nn.Embedding(goal_rows, goal_dim)
        self.action_embed = nn.Embedding(n_actions + 1, act_dim)
        _init_policy(self, seed)

    def _embed(self, inputs: dict) -> torch.Tensor:
        f = inputs["features"]
        v = f.mean(dim=(-2, -1)) if f.ndim == 4 else f
        if self.goal_mode == "polar":
            g = self.goal_linear(inputs["polar"])
        else:
            g = self.goal_embed(inputs["goal"])
        a = self.action_embed(inputs["prev_action"] + 1)
        return torch.cat([g, v, a], dim=-1)


class ZeroshotPolicy(_RecurrentPolicy):
    """Attention-pooled visual vector fused with a text goal vector by
    elementwise product of the unit-normalized pair; GRU plus linear heads
    are the only trainable parameters."""

    arch_id = "zeroshot"

    def __init__(self, dim: int = 1024, n_actions: int = 6, seed: int = 0):
        self.ctor = dict(dim=dim, n_actions=n_actions, seed=seed)
        super().__init__(dim, dim, 1, n_actions)
        _init_policy(self, seed)

    def _embed(self, inputs: dict) -> torch.Tensor:
        v, t = inputs["v"], inputs["t"]
        v = v / v.norm(dim=-1, keepdim=True).clamp_min(1e-8)
        t = t / t.norm(dim=-1, keepdim=True).clamp_min(1e-8)
        return v * t


ARCHITECTURES = {
    "objectnav": ObjectNavPolicy,
    "rearrange": RearrangePolicy,
    "pointnav": HabitatPolicy,
    "zeroshot": ZeroshotPolicy,
}


def build_policy(architecture: str, **kwargs):
    if architecture not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {architecture!r}")
    return ARCHITECTURES[architecture](**kwargs)


# ---------------------------------------------------------------------------
# Spec'd single-step forwards (convenience wrappers used heavily in tests)

def _fdata(f):
    return f.data if isinstance(f, FeatureMap) else f


def _single(policy, inputs: dict, hidden: Optional[torch.Tensor]) -> PolicyOutput:
    if hidden is None:
        hidden = policy.initial_hidden(1)
    batched = {}
    for k, v in inputs.items():
        t = torch.as_tensor(v)
        if k in ("goal", "prev_action"):
            t = t.to(torch.long)
        else:
            t = t.to(next(policy.parameters()).dtype)
        batched[k] = t.unsqueeze(0)
    out = policy.step(batched, hidden)
    return PolicyOutput(out.logits.squeeze(0), out.value.squeeze(0), out.hidden)


def objectnav_forward(policy: ObjectNavPolicy, f, g: int,
                      hidden: Optional[torch.Tensor] = None) -> PolicyOutput:
    return _single(policy, {"features": _fdata(f), "goal": g}, hidden)


def rearrange_forward(policy: RearrangePolicy, f1, f2,
                      hidden: Optional[torch.Tensor] = None) -> PolicyOutput:
    return _single(policy, {"features": _fdata(f1), "features2": _fdata(f2)},
                   hidden)


def habitat_forward(policy: HabitatPolicy, f, goal, prev_action: int,
                    hidden: Optional[torch.Tensor] = None) -> PolicyOutput:
    inputs = {"features": _fdata(f), "prev_action": prev_action}
    if policy.goal_mode == "polar":
        inputs["polar"] = goal
    else:
        inputs["goal"] = int(goal)
    return _single(policy, inputs, hidden)


def zeroshot_forward(policy: ZeroshotPolicy, v, t,
                     hidden: Optional[torch.Tensor] = None) -> PolicyOutput:
    return _single(policy, {"v": v, "t": t}, hidden)


# ---------------------------------------------------------------------------
# Action selection

def act(output: PolicyOutput, mode: str, rng: Optional[np.random.Generator] = None) -> int:
    """Pick an action from one policy output. sample draws from
    softmax(logits); argmax breaks ties toward the lowest index."""
    logits = output.logits.detach().numpy().reshape(-1)
    if not np.isfinite(logits).all():
        raise ValueError("non-finite logits")
    if mode == "argmax":
        return int(np.argmax(logits))
    if mode != "sample":
        raise ValueError(f"mode {mode!r}")
    if rng is None:
        raise ValueError("sampling needs an rng")
    return int(sample_actions(logits[None, :], rng)[0])


def sample_actions(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Multinomial draw per row of (B, A) logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    cum = np.cumsum(p, axis=1)
    u = rng.random((logits.shape[0], 1))
    return np.minimum((u < cum).argmax(axis=1), logits.shape[1] - 1)


# ---------------------------------------------------------------------------
# Checkpoints: manifest + named float32 arrays, bit-exact round trip

def save_checkpoint(policy, directory: str, step: int = 0,
                    extra: Optional[dict] = None) -> None:
    arrays = {name: p.detach().cpu().numpy()
              for name, p in policy.state_dict().items()}
    manifest = {"architecture": policy.arch_id, "ctor": policy.ctor,
                "step": int(step)}
    if extra:
        manifest.update(extra)
    write_arrays(directory, manifest, arrays)


def load_checkpoint(directory: str):
    """Returns (policy, manifest)."""
    manifest, arrays = read_arrays(directory)
    arch = manifest.get("architecture")
    if arch not in ARCHITECTURES:
        raise ValueError(f"checkpoint names unknown architecture {arch!r}")
    policy = ARCHITECTURES[arch](**manifest["ctor"])
    state = {name: torch.from_numpy(arr) for name, arr in arrays.items()}
    policy.load_state_dict(state)
    return policy, manifest
