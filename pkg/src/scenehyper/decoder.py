"""
Candidate decoder: self-attention among candidates, cross-attention into the
backbone point memory, a feed-forward block, then fusion with the
hypernetwork-generated parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError, ShapeError
from .hypernet import GeneratedParams, apply_scene_params

Tensor = torch.Tensor


@dataclass(frozen=True)
class DecoderConfig:
    num_layers: int = 3
    width: int = 32
    heads: int = 4
    ffn_width: int = 64

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigurationError("decoder needs at least one layer")
        if self.width % self.heads:
            raise ConfigurationError(
                f"decoder width {self.width} is not divisible by {self.heads} attention heads"
            )


def scaled_dot_product(q: Tensor, k: Tensor, v: Tensor):
    """Softmax attention over the key axis; returns (output, weights)."""
    scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(q.shape[-1])
    weights = torch.softmax(scores, dim=-1)
    return torch.matmul(weights, v), weights


class MultiHeadAttention(nn.Module):
    def __init__(self, width: int, heads: int, dtype=None):
        super().__init__()
        if width % heads:
            raise ConfigurationError(f"width {width} is not divisible by {heads} heads")
        self.width = width
        self.heads = heads
        self.q_proj = nn.Linear(width, width, dtype=dtype)
        self.k_proj = nn.Linear(width, width, dtype=dtype)
        self.v_proj = nn.Linear(width, width, dtype=dtype)
        self.out_proj = nn.Linear(width, width, dtype=dtype)

    def _split(self, x: Tensor) -> Tensor:
        *lead, length, _ = x.shape
        return x.reshape(*lead, length, self.heads, self.width // self.heads).transpose(-2, -3)

    def forward(self, queries: Tensor, keys: Tensor, values: Tensor, return_weights: bool = False):
        for name, t in (("queries", queries), ("keys", keys), ("values", values)):
            if t.shape[-1] != self.width:
                raise ShapeError(f"{name} width {t.shape[-1]} != attention width {self.width}")
        q = self._split(self.q_proj(queries))
        k = self._split(self.k_proj(keys))
        v = self._split(self.v_proj(values))
        out, weights = scaled_dot_product(q, k, v)
        out = out.transpose(-2, -3).flatten(start_dim=-2)
        out = self.out_proj(out)
        return (out, weights) if return_weights else out


def attention(queries: Tensor, keys: Tensor, values: Tensor, head_count: int,
              module: MultiHeadAttention | None = None):
    """Multi-head attention of ``queries`` over ``keys``/``values``.

    Builds a fresh randomly initialized layer when ``module`` is omitted.
    Returns (output, per-head weights).
    """
    if module is None:
        module = MultiHeadAttention(queries.shape[-1], head_count, dtype=queries.dtype)
    elif module.heads != head_count:
        raise ConfigurationError(f"module has {module.heads} heads, asked for {head_count}")
    return module(queries, keys, values, return_weights=True)


class DecoderLayer(nn.Module):
    def __init__(self, width: int, heads: int, ffn_width: int, dtype=None):
        super().__init__()
        self.self_attn = MultiHeadAttention(width, heads, dtype=dtype)
        self.cross_attn = MultiHeadAttention(width, heads, dtype=dtype)
        self.ffn = nn.Sequential(
            nn.Linear(width, ffn_width, dtype=dtype),
            nn.ReLU(),
            nn.Linear(ffn_width, width, dtype=dtype),
        )
        self.norm1 = nn.LayerNorm(width, dtype=dtype)
        self.norm2 = nn.LayerNorm(width, dtype=dtype)
        self.norm3 = nn.LayerNorm(width, dtype=dtype)

    def forward(self, x: Tensor, memory: Tensor, generated: GeneratedParams | None = None) -> Tensor:
        """Refine candidate features ``x`` (B, K, C).

        ``generated=None`` bypasses the scene fusion (``o_hat = o``).
        """
        x = self.norm1(x + self.self_attn(x, x, x))
        x = self.norm2(x + self.cross_attn(x, memory, memory))
        x = self.norm3(x + self.ffn(x))
        if generated is not None:
            x = apply_scene_params(x, generated)
        return x


class Decoder(nn.Module):
    """Stack of :class:`DecoderLayer` sharing one set of generated parameters.

    Candidate and memory coordinates are linearly embedded and added to their
    features once, before the first layer.
    """

    def __init__(self, config: DecoderConfig, in_width: int, dtype=None):
        super().__init__()
        self.config = config
        w = config.width
        self.cand_proj = nn.Linear(in_width, w, dtype=dtype)
        self.mem_proj = nn.Linear(in_width, w, dtype=dtype)
        self.cand_pos = nn.Linear(3, w, dtype=dtype)
        self.mem_pos = nn.Linear(3, w, dtype=dtype)
        self.layers = nn.ModuleList(
            DecoderLayer(w, config.heads, config.ffn_width, dtype=dtype)
            for _ in range(config.num_layers)
        )

    def forward(self, cand_features, cand_positions, mem_features, mem_positions,
                generated: GeneratedParams | None = None) -> Tensor:
        x = self.cand_proj(cand_features) + self.cand_pos(cand_positions)
        memory = self.mem_proj(mem_features) + self.mem_pos(mem_positions)
        for layer in self.layers:
            x = layer(x, memory, generated)
        return x
