"""Dense kernels, reverse-mode gradients and a finite-difference checker.

Everything runs in float64 on top of torch tensors; torch's autograd tape
provides reverse mode, and :func:`grad_check` verifies it independently with
central differences.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
import torch

DTYPE = torch.float64


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def masked_softmax(x: torch.Tensor, mask: torch.Tensor | None = None, dim: int = -1) -> torch.Tensor:
    """Softmax over ``dim`` restricted to positions where ``mask`` is true.

    Masked entries come out as exactly 0. A row with no valid entry is an error.
    """
    if mask is None:
        mask = torch.ones_like(x, dtype=torch.bool)
    mask = mask.to(torch.bool).expand_as(x)
    if not mask.any(dim=dim).all():
        raise ValueError("masked_softmax: a row has no valid entries")
    z = x.masked_fill(~mask, -math.inf)
    z = z - z.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(z)
    return e / e.sum(dim=dim, keepdim=True)


def layer_norm(x: torch.Tensor, scale=None, shift=None, eps: float = 1e-5) -> torch.Tensor:
    """Normalize the last axis with the population variance."""
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    y = (x - mu) / torch.sqrt(var + eps)
    if scale is not None:
        y = y * scale
    if shift is not None:
        y = y + shift
    return y


def leaky_relu(x: torch.Tensor, slope: float = 0.2) -> torch.Tensor:
    return torch.where(x >= 0, x, slope * x)


def l2_normalize(x: torch.Tensor) -> torch.Tensor:
    """Unit Euclidean norm along the last axis; zero rows stay zero."""
    norm = torch.linalg.vector_norm(x, dim=-1, keepdim=True)
    zero = norm == 0
    safe = torch.where(zero, torch.ones_like(norm), norm)
    return torch.where(zero, torch.zeros_like(x), x / safe)


def backward(loss: torch.Tensor, params: Mapping[str, torch.Tensor] | Iterable[torch.Tensor]) -> None:
    """Write d(loss)/d(param) into ``param.grad``; unreachable params get zeros."""
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    plist = list(params.values()) if isinstance(params, Mapping) else list(params)
    grads = torch.autograd.grad(loss.reshape(()), plist, allow_unused=True)
    for p, g in zip(plist, grads):
        p.grad = torch.zeros_like(p) if g is None else g.detach().clone()


class NondeterministicForward(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    max_abs_error: dict[str, float] = field(default_factory=dict)
    failures: dict[str, int] = field(default_factory=dict)
    tolerance: float = 1e-4
    abs_tolerance: float = 1e-7

    @property
    def passed(self) -> bool:
        return not any(self.failures.values())

    def lines(self) -> list[str]:
        out = []
        for name in self.max_rel_error:
            status = "ok" if self.failures[name] == 0 else f"FAIL({self.failures[name]})"
            out.append(
                f"{name:48s} rel={self.max_rel_error[name]:.3e} abs={self.max_abs_error[name]:.3e} {status}"
            )
        return out


def grad_check(
    closure: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    tolerance: float = 1e-4,
    abs_tolerance: float = 1e-7,
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare reverse-mode gradients with central finite differences.

    ``closure`` must rebuild the scalar loss from the current parameter values.
    An entry passes when its relative error is within ``tolerance`` or its
    absolute error within ``abs_tolerance``.
    """
    with torch.no_grad():
        first, second = closure().item(), closure().item()
    if first != second:
        raise NondeterministicForward(f"forward gave {first!r} then {second!r}")
    backward(closure(), params)
    report = GradCheckReport(tolerance=tolerance, abs_tolerance=abs_tolerance)
    for name, p in params.items():
        analytic = p.grad.detach().reshape(-1)
        flat = p.data.view(-1)
        numeric = torch.empty_like(analytic)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = closure().item()
                flat[i] = orig - step
                down = closure().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * step)
        err = (analytic - numeric).abs()
        denom = torch.maximum(analytic.abs(), numeric.abs())
        rel = torch.where(denom > 0, err / torch.where(denom > 0, denom, torch.ones_like(denom)), torch.zeros_like(err))
        bad = (rel > tolerance) & (err > abs_tolerance)
        report.max_rel_error[name] = float(rel.max()) if rel.numel() else 0.0
        report.max_abs_error[name] = float(err.max()) if err.numel() else 0.0
        report.failures[name] = int(bad.sum())
    return report


# ----------------------------------------------------------------------------
# parameters


def make_param(*shape: int, init: str = "uniform", fan_in: int | None = None, noise: float = 0.0) -> torch.nn.Parameter:
    """Float64 parameter tagged with its initialization rule.

    ``init`` is one of ``uniform`` (U(-sqrt(1/fan_in), +sqrt(1/fan_in))),
    ``zeros``, ``ones`` or ``identity`` (batched eye plus ``noise`` * N(0, 1)).
    """
    p = torch.nn.Parameter(torch.zeros(*shape, dtype=DTYPE))
    p.init_rule = (init, fan_in if fan_in is not None else (shape[-1] if shape else 1), noise)
    return p


def _name_seed(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def initialize(module: torch.nn.Module, seed: int) -> None:
    """Fill every tagged parameter of ``module`` from a generator keyed on
    ``(seed, parameter name)``, so a parameter's initial value does not depend
    on which other parameters exist."""
    with torch.no_grad():
        for name, p in module.named_parameters():
            rule, fan_in, noise = getattr(p, "init_rule", ("uniform", p.shape[-1], 0.0))
            rng = np.random.default_rng([seed, _name_seed(name)])
            if rule == "uniform":
                bound = math.sqrt(1.0 / max(fan_in, 1))
                value = rng.uniform(-bound, bound, size=tuple(p.shape))
            elif rule == "zeros":
                value = np.zeros(tuple(p.shape))
            elif rule == "ones":
                value = np.ones(tuple(p.shape))
            elif rule == "identity":
                value = np.broadcast_to(np.eye(p.shape[-1]), tuple(p.shape)).copy()
                value += noise * rng.standard_normal(tuple(p.shape))
            else:
                raise ValueError(f"unknown init rule {rule!r} for {name}")
            p.copy_(torch.from_numpy(np.ascontiguousarray(value, dtype=np.float64)))
