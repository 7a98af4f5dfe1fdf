"""
Finite-difference gradient checks for the differentiable components.

Each check builds a small float64 instance (width at most 8), reduces its
outputs to a scalar with fixed random weights, and compares the autograd
gradient of every parameter against central differences.
"""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np
import torch
from torch import nn

from ..backbone import EncoderConfig, PointBackbone, build_plan, collate_plans
from ..decoder import Decoder, DecoderConfig
from ..errors import ConfigurationError
from ..head import DetectionHead
from ..hypernet import GeneratedParams, LayerShape, SceneHyperNetwork

DTYPE = torch.float64
STEP = 1e-5
COMPONENTS = ("hypernet", "head", "decoder", "backbone")
SCALE_FLOOR = 1e-3


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = SCALE_FLOOR) -> float:
    """``max|a - n| / max(max|n|, floor)`` over one tensor.

    The floor keeps parameters whose true gradient is zero (attention key
    biases cancel in the softmax) from turning rounding noise into a 100%
    error.
    """
    diff = (analytic - numeric).abs().max().item()
    return diff / max(numeric.abs().max().item(), floor)


def numeric_gradient(objective: Callable[[], torch.Tensor], param: torch.Tensor,
                     step: float = STEP) -> torch.Tensor:
    grad = torch.zeros_like(param)
    flat, gflat = param.data.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            keep = flat[i].item()
            flat[i] = keep + step
            up = objective().item()
            flat[i] = keep - step
            down = objective().item()
            flat[i] = keep
            gflat[i] = (up - down) / (2 * step)
    return grad


def check_gradients(objective: Callable[[], torch.Tensor], params: Iterable[torch.Tensor],
                    step: float = STEP) -> float:
    """Max relative error between autograd and central differences over ``params``."""
    params = list(params)
    for p in params:
        p.grad = None
    objective().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else torch.zeros_like(p)
        worst = max(worst, relative_error(analytic, numeric_gradient(objective, p, step)))
    return worst


def _readout(gen: torch.Generator, *tensors: torch.Tensor) -> Callable[..., torch.Tensor]:
    """Fixed random projection of several outputs onto a scalar."""
    weights = [torch.randn(t.shape, generator=gen, dtype=DTYPE) for t in tensors]

    def reduce(*outputs):
        return sum((w * o).sum() for w, o in zip(weights, outputs))

    return reduce


def _randomize(module: nn.Module, gen: torch.Generator, scale: float = 0.5) -> None:
    # zero-initialised layers (the quaternion regression) would leave whole
    # paths untested, so every parameter is redrawn
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=gen, dtype=DTYPE))


def _hypernet_case(gen):
    shape = LayerShape.for_mode(8, 8, 4, 4, "msa")
    net = SceneHyperNetwork(shape, c_a=4, c_s=5, n_d=4, dtype=DTYPE)
    _randomize(net, gen)
    query = torch.rand(2, 4, 3, generator=gen, dtype=DTYPE)
    probe = net(query)
    reduce = _readout(gen, probe.W, probe.b)

    def objective():
        out = net(query)
        return reduce(out.W, out.b)

    return objective, list(net.parameters())


def _head_case(gen):
    head = DetectionHead(8, 3, ddh=True, size_prior=0.5, dtype=DTYPE)
    _randomize(head, gen)
    positions = torch.rand(2, 5, 3, generator=gen, dtype=DTYPE)
    o_hat = torch.randn(2, 5, 8, generator=gen, dtype=DTYPE)
    probe = head(positions, o_hat)
    fields = ("centers", "log_sizes", "class_logits", "objectness_logits")
    reduce = _readout(gen, *(getattr(probe, f) for f in fields))

    def objective():
        pred = head(positions, o_hat)
        return reduce(*(getattr(pred, f) for f in fields))

    return objective, list(head.parameters())


def _decoder_case(gen):
    decoder = Decoder(DecoderConfig(num_layers=2, width=8, heads=2, ffn_width=8), 6, dtype=DTYPE)
    _randomize(decoder, gen)
    cand = torch.randn(2, 4, 6, generator=gen, dtype=DTYPE)
    cand_pos = torch.rand(2, 4, 3, generator=gen, dtype=DTYPE)
    mem = torch.randn(2, 7, 6, generator=gen, dtype=DTYPE)
    mem_pos = torch.rand(2, 7, 3, generator=gen, dtype=DTYPE)
    W = (0.5 * torch.randn(2, 8, 8, generator=gen, dtype=DTYPE)).requires_grad_()
    b = (0.5 * torch.randn(2, 8, generator=gen, dtype=DTYPE)).requires_grad_()
    reduce = _readout(gen, decoder(cand, cand_pos, mem, mem_pos, GeneratedParams(W, b)))

    def objective():
        return reduce(decoder(cand, cand_pos, mem, mem_pos, GeneratedParams(W, b)))

    return objective, list(decoder.parameters()) + [W, b]


def _backbone_case(gen):
    config = EncoderConfig(downsample_sizes=(16, 8, 4), radii=(0.3, 0.5, 0.8),
                           max_samples=(4, 4, 4), sa_widths=(6, 8, 8), fp_width=8,
                           num_candidates=4, n_d=4)
    backbone = PointBackbone(config, dtype=DTYPE)
    _randomize(backbone, gen)
    seed = int(torch.randint(0, 2**31 - 1, (1,), generator=gen))
    points = np.random.default_rng(seed).random((2, 40, 3))
    batch = collate_plans([build_plan(p, config) for p in points], dtype=DTYPE)
    probe = backbone(batch)
    reduce = _readout(gen, probe.candidates.features, probe.memory_features, probe.sampling_logits)

    def objective():
        out = backbone(batch)
        return reduce(out.candidates.features, out.memory_features, out.sampling_logits)

    return objective, list(backbone.parameters())


_CASES = {
    "hypernet": _hypernet_case,
    "head": _head_case,
    "decoder": _decoder_case,
    "backbone": _backbone_case,
}


def gradcheck(component: str, seed: int = 0, step: float = STEP) -> float:
    """Max relative gradient error of ``component`` (one of :data:`COMPONENTS`)."""
    if component not in _CASES:
        raise ConfigurationError(f"unknown component {component!r}; choose from {', '.join(COMPONENTS)}")
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    objective, params = _CASES[component](gen)
    return check_gradients(objective, params, step)
