"""
Scene-conditioned parameter generation.

A decoder fusion layer ``o_hat = W o + b`` does not own its ``W`` and ``b``;
they are produced per scene from two learned embedding banks:

* scene-agnostic rows ``W_a = h_a(Z_a)`` (two affine maps, no scene input),
* scene-specific rows ``W_s = tanh(W_f [z_s || flatten(W_p P_d)])`` where
  ``P_d`` is a small downsampled query of the current scene.

Their element-wise product is an ``n x C_ui`` unit block. A single bank (SSA)
tiles that block over the ``C_out x C_in`` weight; multiple independently
initialized banks (MSA) provide one block per grid cell instead.

The functions below are pure and accept extra leading batch/head dimensions;
:class:`SceneHyperNetwork` owns the parameters and wires them together.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import torch
from torch import nn

from .errors import ConfigurationError, ShapeError

Tensor = torch.Tensor


@dataclass(frozen=True)
class LayerShape:
    c_out: int
    c_in: int
    n: int
    c_ui: int
    heads: int = 1

    @property
    def grid(self) -> tuple[int, int]:
        """Block grid ``(C_out / n, C_in / C_ui)``."""
        return self.c_out // self.n, self.c_in // self.c_ui

    @property
    def grid_cells(self) -> int:
        rows, cols = self.grid
        return rows * cols

    @classmethod
    def for_mode(cls, c_out, c_in, n, c_ui, mode: str) -> "LayerShape":
        """Build and validate a shape for ``mode`` in {"ssa", "msa"}."""
        if mode not in ("ssa", "msa"):
            raise ConfigurationError(f"unknown attention mode {mode!r}")
        shape = validate_shape(cls(c_out, c_in, n, c_ui, 1))
        if mode == "msa":
            shape = validate_shape(cls(c_out, c_in, n, c_ui, shape.grid_cells))
        return shape


def validate_shape(shape: LayerShape) -> LayerShape:
    for name in ("c_out", "c_in", "n", "c_ui", "heads"):
        value = getattr(shape, name)
        if not isinstance(value, int) or value < 1:
            raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
    if shape.c_out % shape.n:
        raise ConfigurationError(
            f"C_out mod n must be 0 (C_out={shape.c_out}, n={shape.n})"
        )
    if shape.c_in % shape.c_ui:
        raise ConfigurationError(
            f"C_in mod C_ui must be 0 (C_in={shape.c_in}, C_ui={shape.c_ui})"
        )
    if shape.heads not in (1, shape.grid_cells):
        raise ConfigurationError(
            f"heads must be 1 (SSA) or (C_out/n)*(C_in/C_ui)={shape.grid_cells} (MSA), "
            f"got {shape.heads}"
        )
    return shape


@dataclass
class GeneratedParams:
    W: Tensor  # (..., C_out, C_in)
    b: Tensor  # (..., C_out)


class HeadwiseAffine(nn.Module):
    """One affine map per head: ``(..., H, rows, in) -> (..., H, rows, out)``.

    Weights are Xavier-uniform per head, biases zero.
    """

    def __init__(self, heads: int, in_features: int, out_features: int, dtype=None):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(heads, out_features, in_features, dtype=dtype))
        self.bias = nn.Parameter(torch.zeros(heads, out_features, dtype=dtype))
        for h in range(heads):
            nn.init.xavier_uniform_(self.weight.data[h])

    @property
    def in_features(self) -> int:
        return self.weight.shape[2]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        return torch.einsum("...hri,hoi->...hro", x, self.weight) + self.bias[:, None, :]


class AgnosticNet(nn.Module):
    """Two stacked affine maps ``C_a -> C_h -> C_ui`` (per head)."""

    def __init__(self, heads: int, c_a: int, c_h: int, c_ui: int, dtype=None):
        super().__init__()
        self.first = HeadwiseAffine(heads, c_a, c_h, dtype=dtype)
        self.second = HeadwiseAffine(heads, c_h, c_ui, dtype=dtype)

    def forward(self, z: Tensor) -> Tensor:
        return self.second(self.first(z))


class BiasNets(NamedTuple):
    agnostic: Callable[[Tensor], Tensor]
    fuse: Callable[[Tensor], Tensor]
    scene_proj: Tensor


def _check_last(t: Tensor, size: int, what: str):
    if t.shape[-1] != size:
        raise ShapeError(f"{what}: expected last dimension {size}, got {tuple(t.shape)}")


def scene_agnostic_weights(z_a: Tensor, agnostic_net: Callable[[Tensor], Tensor]) -> Tensor:
    """Map every scene-agnostic embedding row through ``agnostic_net``."""
    if z_a.dim() < 2:
        raise ShapeError(f"Z_a must be (n, C_a), got {tuple(z_a.shape)}")
    in_features = getattr(agnostic_net, "first", None)
    if in_features is not None:
        _check_last(z_a, in_features.in_features, "Z_a")
    out = agnostic_net(z_a)
    if out.shape[:-1] != z_a.shape[:-1]:
        raise ShapeError(f"agnostic net changed the row layout: {tuple(out.shape)}")
    return out


def scene_code(query: Tensor, scene_proj: Tensor) -> Tensor:
    """Flatten ``W_p P_d`` (``C_n x 3``) into a ``3 C_n`` vector per scene."""
    n_d = scene_proj.shape[-1]
    if query.dim() < 2 or query.shape[-2:] != (n_d, 3):
        raise ShapeError(f"scene query must be ({n_d}, 3), got {tuple(query.shape)}")
    projected = torch.matmul(scene_proj, query)
    return projected.flatten(start_dim=-2)


def scene_specific_scores(
    z_s: Tensor,
    query: Tensor,
    scene_proj: Tensor,
    fuse: Callable[[Tensor], Tensor],
) -> Tensor:
    """Scene-specific rows ``tanh(fuse(z_s_k || code))``.

    ``z_s`` is ``(*heads, n, C_s)`` and ``query`` is ``(*batch, N_d, 3)``; the
    result is ``(*batch, *heads, n, C_ui)`` with every entry in (-1, 1).
    """
    code = scene_code(query, scene_proj)
    batch = code.shape[:-1]
    lead = z_s.shape[:-1]
    code = code.reshape(*batch, *([1] * len(lead)), code.shape[-1])
    code = code.expand(*batch, *lead, code.shape[-1])
    zs = z_s.expand(*batch, *z_s.shape)
    return torch.tanh(fuse(torch.cat([zs, code], dim=-1)))


def fuse_unit(w_s: Tensor, w_a: Tensor) -> Tensor:
    if w_s.shape[-2:] != w_a.shape[-2:]:
        raise ShapeError(f"unit fusion shape mismatch: {tuple(w_s.shape)} vs {tuple(w_a.shape)}")
    return w_s * w_a


def assemble_ssa(w_u: Tensor, shape: LayerShape) -> Tensor:
    """Tile one unit block over the full weight."""
    if w_u.shape[-2:] != (shape.n, shape.c_ui):
        raise ShapeError(f"unit block must be ({shape.n}, {shape.c_ui}), got {tuple(w_u.shape)}")
    rows, cols = shape.grid
    reps = (1,) * (w_u.dim() - 2) + (rows, cols)
    return w_u.repeat(*reps)


def assemble_msa(blocks: Sequence[Tensor] | Tensor, shape: LayerShape) -> Tensor:
    """Place one unit block per grid cell, row-major over the block grid.

    ``blocks`` is a sequence of ``(..., n, C_ui)`` tensors or a single tensor
    stacked as ``(..., heads, n, C_ui)``.
    """
    if not isinstance(blocks, Tensor):
        if len(blocks) == 0:
            raise ConfigurationError("MSA needs at least one block")
        blocks = torch.stack(list(blocks), dim=-3)
    rows, cols = shape.grid
    if blocks.shape[-3] != rows * cols:
        raise ConfigurationError(
            f"MSA needs exactly {rows * cols} blocks for a {rows}x{cols} grid, got {blocks.shape[-3]}"
        )
    if blocks.shape[-2:] != (shape.n, shape.c_ui):
        raise ShapeError(f"unit blocks must be ({shape.n}, {shape.c_ui}), got {tuple(blocks.shape)}")
    lead = blocks.shape[:-3]
    grid = blocks.reshape(*lead, rows, cols, shape.n, shape.c_ui)
    grid = grid.transpose(-3, -2)  # (..., rows, n, cols, c_ui)
    return grid.reshape(*lead, shape.c_out, shape.c_in)


def generate_bias(
    z_a: Tensor,
    z_s: Tensor,
    query: Tensor,
    bias_nets: BiasNets,
    shape: LayerShape,
    use_agnostic: bool = True,
    use_specific: bool = True,
) -> Tensor:
    """Bias vector of length ``C_out``.

    Each head's agnostic and specific vectors are averaged over their feature
    dimension to scalars per row, multiplied, and laid out over the ``C_out/n``
    block-rows (SSA repeats its single head; MSA uses the head in the first
    column of each block-row).
    """
    rows, cols = shape.grid
    beta_a = beta_s = None
    if use_agnostic:
        beta_a = bias_nets.agnostic(z_a).mean(dim=-1)
    if use_specific:
        beta_s = scene_specific_scores(z_s, query, bias_nets.scene_proj, bias_nets.fuse).mean(dim=-1)
    if beta_a is None and beta_s is None:
        raise ConfigurationError("bias generation needs at least one branch")
    if beta_a is None:
        unit = beta_s
    elif beta_s is None:
        unit = beta_a
    else:
        unit = beta_s * beta_a

    if z_a.dim() == 2:
        # single bank without a head axis: unit is (..., n)
        return unit.repeat(*((1,) * (unit.dim() - 1)), rows)
    heads = unit.shape[-2]
    if heads == 1:
        return unit[..., 0, :].repeat(*((1,) * (unit.dim() - 2)), rows)
    if heads != rows * cols:
        raise ConfigurationError(f"bias generation got {heads} heads for a {rows}x{cols} grid")
    per_row = unit[..., ::cols, :]
    return per_row.flatten(start_dim=-2)


def apply_scene_params(o: Tensor, params: GeneratedParams) -> Tensor:
    """``o_hat = W o + b`` for every candidate row of ``o``."""
    W, b = params.W, params.b
    if o.shape[-1] != W.shape[-1] or W.shape[-2] != b.shape[-1]:
        raise ShapeError(
            f"cannot apply W {tuple(W.shape)}, b {tuple(b.shape)} to features {tuple(o.shape)}"
        )
    return torch.matmul(o, W.transpose(-1, -2)) + b.unsqueeze(-2)


class SceneHyperNetwork(nn.Module):
    """Embedding banks plus the hypernetworks that turn them into ``W`` and ``b``.

    ``forward(query)`` takes a ``(B, N_d, 3)`` batch of scene queries and
    returns :class:`GeneratedParams` with ``W`` of shape ``(B, C_out, C_in)``.
    Setting ``use_agnostic`` or ``use_specific`` to False replaces that branch
    by ones (the multiplicative identity), which is the ablation switch.
    """

    def __init__(
        self,
        shape: LayerShape,
        c_a: int,
        c_s: int,
        n_d: int,
        c_n: int = 1,
        c_h: int | None = None,
        use_agnostic: bool = True,
        use_specific: bool = True,
        dtype=None,
    ):
        super().__init__()
        self.shape = validate_shape(shape)
        if not (use_agnostic or use_specific):
            raise ConfigurationError("a scene hypernetwork needs the agnostic or the specific branch")
        self.use_agnostic = use_agnostic
        self.use_specific = use_specific
        self.n_d = n_d
        heads, n, c_ui = shape.heads, shape.n, shape.c_ui
        c_h = c_a if c_h is None else c_h

        self.z_a = nn.Parameter(torch.empty(heads, n, c_a, dtype=dtype))
        self.z_s = nn.Parameter(torch.empty(heads, n, c_s, dtype=dtype))
        for h in range(heads):
            nn.init.xavier_uniform_(self.z_a.data[h])
            nn.init.xavier_uniform_(self.z_s.data[h])
        self.scene_proj = nn.Parameter(torch.empty(c_n, n_d, dtype=dtype))
        nn.init.xavier_uniform_(self.scene_proj.data)

        self.agnostic = AgnosticNet(heads, c_a, c_h, c_ui, dtype=dtype)
        self.fuse = HeadwiseAffine(heads, c_s + 3 * c_n, c_ui, dtype=dtype)
        self.bias_agnostic = HeadwiseAffine(heads, c_a, c_ui, dtype=dtype)
        self.bias_fuse = HeadwiseAffine(heads, c_s + 3 * c_n, c_ui, dtype=dtype)

    @property
    def mode(self) -> str:
        return "ssa" if self.shape.heads == 1 else "msa"

    def unit_blocks(self, query: Tensor) -> Tensor:
        """``(B, heads, n, C_ui)`` fused unit blocks."""
        w_a = scene_agnostic_weights(self.z_a, self.agnostic) if self.use_agnostic else None
        w_s = (
            scene_specific_scores(self.z_s, query, self.scene_proj, self.fuse)
            if self.use_specific
            else None
        )
        if w_s is None:
            return w_a.expand(query.shape[0], *w_a.shape)
        if w_a is None:
            return w_s
        return fuse_unit(w_s, w_a)

    def forward(self, query: Tensor) -> GeneratedParams:
        blocks = self.unit_blocks(query)
        if self.shape.heads == 1:
            W = assemble_ssa(blocks[:, 0], self.shape)
        else:
            W = assemble_msa(blocks, self.shape)
        nets = BiasNets(self.bias_agnostic, self.bias_fuse, self.scene_proj)
        b = generate_bias(
            self.z_a, self.z_s, query, nets, self.shape,
            use_agnostic=self.use_agnostic, use_specific=self.use_specific,
        )
        if b.dim() == 1:
            b = b.expand(query.shape[0], -1)
        return GeneratedParams(W=W, b=b)
