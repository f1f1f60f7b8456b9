"""Central finite-difference gradient checks for torch modules (f64).

The numeric side never touches autograd: each parameter entry is nudged by
+-h and the loss re-evaluated. Perturbed evaluations are batched with
``torch.func.vmap`` for speed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
from torch import nn
from torch.func import functional_call, vmap


@dataclass
class TensorCheck:
    name: str
    numel: int
    rel_error: float
    max_abs_error: float

    def passed(self, tol: float) -> bool:
        return self.rel_error < tol


def relative_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-12) -> float:
    """``|a - b| / max(|a|, |b|)`` in the 2-norm, floored for all-zero gradients."""
    denom = max(float(a.norm()), float(b.norm()), floor)
    return float((a - b).norm()) / denom


def numeric_gradient(loss_fn: Callable[[], torch.Tensor], param: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Entry-by-entry central differences, perturbing ``param`` in place."""
    grad = torch.zeros_like(param)
    flat, gflat = param.data.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = float(loss_fn())
            flat[i] = orig - h
            down = float(loss_fn())
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
    return grad


def check_module_gradients(
    module: nn.Module,
    inputs: tuple,
    loss_of_output: Callable[[torch.Tensor], torch.Tensor],
    h: float = 1e-5,
    chunk: int = 256,
) -> list[TensorCheck]:
    """Autograd vs. finite differences for every parameter tensor of ``module``.

    The scalar objective is ``loss_of_output(module(*inputs))``.
    """
    module.zero_grad(set_to_none=True)
    loss_of_output(module(*inputs)).backward()
    analytic = {
        n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for n, p in module.named_parameters()
    }
    module.zero_grad(set_to_none=True)

    params = {n: p.detach() for n, p in module.named_parameters()}
    buffers = dict(module.named_buffers())
    results = []
    with torch.no_grad():
        for name, p in params.items():

            def loss_at(value, name=name):
                return loss_of_output(functional_call(module, ({**params, name: value}, buffers), inputs))

            batched = vmap(loss_at)
            n = p.numel()
            numeric = torch.empty(n, dtype=p.dtype)
            flat = p.reshape(-1)
            for lo in range(0, n, chunk):
                idx = torch.arange(lo, min(lo + chunk, n))
                step = torch.zeros(len(idx), n, dtype=p.dtype)
                step[torch.arange(len(idx)), idx] = h
                up = batched((flat + step).reshape(len(idx), *p.shape))
                down = batched((flat - step).reshape(len(idx), *p.shape))
                numeric[lo:lo + len(idx)] = (up - down) / (2.0 * h)
            numeric = numeric.reshape(p.shape)
            a = analytic[name]
            results.append(TensorCheck(name, n, relative_error(a, numeric), float((a - numeric).abs().max())))
    return results


def randomize_parameters(module: nn.Module, generator: torch.Generator, scale: float = 0.3) -> None:
    """Overwrite every parameter with Gaussian noise so no path is zero-initialized."""
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=generator, dtype=p.dtype) * scale)
