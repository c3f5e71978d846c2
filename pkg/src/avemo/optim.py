"""Differentiable-computation contract: named parameter groups with a freeze
mechanism, reverse-mode gradients, a per-group ADAM update with explicit state,
and central finite-difference gradient checking.

Each parameter group owns its own ADAM state so freezing a group never advances
its moments or its step counter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import torch
from torch import Tensor, nn

logger = logging.getLogger(__name__)

GROUP_ACOUSTIC = "acoustic"
GROUP_VISUAL = "visual"
GROUP_SHARED = "shared"
GROUP_FUSION = "fusion"
GROUP_NAMES = (GROUP_ACOUSTIC, GROUP_VISUAL, GROUP_SHARED, GROUP_FUSION)


class NonFiniteLossError(RuntimeError):
    """Signals divergence: a loss or evaluation produced NaN/Inf."""


class ParameterGroup:
    """A named, ordered set of parameters that freezes and steps as a unit."""

    def __init__(self, name: str, params: dict[str, nn.Parameter]):
        self.name = name
        self.params = dict(params)
        self.trainable = True

    def freeze(self) -> None:
        self.trainable = False
        for p in self.params.values():
            p.requires_grad_(False)

    def unfreeze(self) -> None:
        self.trainable = True
        for p in self.params.values():
            p.requires_grad_(True)

    def names(self) -> list[str]:
        return list(self.params)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.params.values())

    def checksum(self) -> bytes:
        """Byte-level digest of all parameter payloads, for freeze audits."""
        import hashlib

        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.digest()


def check_partition(groups: dict[str, ParameterGroup], model: nn.Module) -> None:
    """Assert the groups are pairwise disjoint and together cover the model exactly."""
    seen: set[str] = set()
    for group in groups.values():
        overlap = seen & set(group.params)
        if overlap:
            raise ValueError(f"parameter groups overlap on {sorted(overlap)}")
        seen |= set(group.params)
    model_names = {name for name, _ in model.named_parameters()}
    if seen != model_names:
        missing = model_names - seen
        extra = seen - model_names
        raise ValueError(f"groups do not partition the model: missing={sorted(missing)} extra={sorted(extra)}")


def backward(loss: Tensor, groups: Iterable[ParameterGroup]) -> dict[str, Tensor]:
    """Reverse-mode gradients of a scalar loss over the trainable groups.

    Returns a name -> gradient map containing exactly the trainable parameters that
    participated in the loss's graph; frozen groups contribute nothing.
    """
    if loss.dim() != 0:
        raise ValueError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss: {float(loss)}")
    names, params = [], []
    for group in groups:
        if not group.trainable:
            continue
        for name, p in group.params.items():
            names.append(name)
            params.append(p)
    if not params:
        return {}
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return {name: g for name, g in zip(names, grads) if g is not None}


@dataclass
class AdamState:
    """Per-group ADAM state: first/second moments per parameter plus one step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def for_group(cls, group: ParameterGroup, lr: float, **kwargs) -> "AdamState":
        state = cls(lr=lr, **kwargs)
        for name, p in group.params.items():
            state.m[name] = torch.zeros_like(p, requires_grad=False)
            state.v[name] = torch.zeros_like(p, requires_grad=False)
        return state


def adam_update(group: ParameterGroup, grads: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected ADAM step over a group, in place; increments ``state.t`` once."""
    missing = [n for n in group.params if n not in grads]
    if missing:
        raise KeyError(f"gradients missing for {missing} in group {group.name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    with torch.no_grad():
        for name, p in group.params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
            m = state.m[name]
            v = state.v[name]
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(state.eps), value=-state.lr)


def finite_diff_check(f: Callable[[Tensor], Tensor], point: Tensor, h: float = 1e-5) -> float:
    """Max relative error between autograd and central finite differences of ``f`` at ``point``.

    ``f`` maps a 1-D tensor to a scalar and must be built from differentiable ops.
    Relative error per coordinate is |analytic - numeric| / max(1, |numeric|).
    Run in float64: central differences are unreliable in 32-bit.
    """
    point = point.detach().clone()
    leaf = point.clone().requires_grad_(True)
    value = f(leaf)
    if not torch.isfinite(value):
        raise NonFiniteLossError(f"non-finite evaluation at check point: {float(value)}")
    (analytic,) = torch.autograd.grad(value, leaf)

    numeric = torch.zeros_like(point)
    with torch.no_grad():
        for i in range(point.numel()):
            shift = torch.zeros_like(point)
            shift.view(-1)[i] = h
            hi = f(point + shift)
            lo = f(point - shift)
            if not (torch.isfinite(hi) and torch.isfinite(lo)):
                raise NonFiniteLossError(f"non-finite evaluation while probing coordinate {i}")
            numeric.view(-1)[i] = (hi - lo) / (2.0 * h)

    err = (analytic - numeric).abs() / torch.clamp(numeric.abs(), min=1.0)
    return float(err.max())


def finite_diff_check_module(
    module: nn.Module | Iterable[nn.Parameter],
    closure: Callable[[], Tensor],
    h: float = 1e-5,
) -> float:
    """Gradient-check parameters against central differences of ``closure``.

    ``module`` is either an nn.Module (all its trainable parameters are checked) or
    an explicit iterable of parameters participating in the closure. ``closure``
    evaluates a scalar loss from the current parameter values and must be
    deterministic (call ``module.eval()`` first so dropout is off).
    """
    if isinstance(module, nn.Module):
        params = [p for p in module.parameters() if p.requires_grad]
    else:
        params = [p for p in module if p.requires_grad]
    loss = closure()
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss at check point: {float(loss)}")
    analytic_parts = torch.autograd.grad(loss, params)

    worst = 0.0
    with torch.no_grad():
        for p, analytic in zip(params, analytic_parts):
            flat = p.view(-1)
            a_flat = analytic.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                hi = closure()
                flat[i] = orig - h
                lo = closure()
                flat[i] = orig
                numeric = (hi - lo).item() / (2.0 * h)
                rel = abs(a_flat[i].item() - numeric) / max(1.0, abs(numeric))
                worst = max(worst, rel)
    return worst
