"""
Gradients of design-path computations

A design-path function maps a DesignVector (or a bare parameter tensor) to a
scalar tensor. It is evaluated once under a guard that rejects the torch
primitives which silently cut the autograd graph, and the exact gradient is
then taken by reverse accumulation.
"""
from typing import Callable, List, Union

import numpy as np
import torch
from torch.overrides import TorchFunctionMode

from nlwg.errors import CompositionError, DomainError
from nlwg.models import GradientReport
from nlwg.stack import DesignVector
import logging

logger = logging.getLogger(__name__)

Design = Union[DesignVector, torch.Tensor]

# graph-cutting or piecewise-constant primitives
BLOCKED_PRIMITIVES = frozenset({
    "detach", "detach_", "numpy", "item", "tolist", "__array__",
    "round", "round_", "__round__", "floor", "floor_", "__floor__", "ceil", "ceil_", "__ceil__",
    "sign", "sign_", "argmax", "argmin",
})


class DifferentiabilityGuard(TorchFunctionMode):
    """Raises CompositionError when a blocked primitive is called inside the block"""

    def __torch_function__(self, func, types, args=(), kwargs=None):
        name = getattr(func, "__name__", repr(func))
        if name in BLOCKED_PRIMITIVES:
            raise CompositionError(name)
        return func(*args, **(kwargs or {}))


class DifferentiableScalar:
    """A design-path value with its gradient w.r.t. the design entries"""
    def __init__(self, value: float, gradient: np.ndarray):
        self.value = value
        self.gradient = gradient

    def __len__(self) -> int:
        return len(self.gradient)

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value) and np.all(np.isfinite(self.gradient)))


def _values(v: Design) -> torch.Tensor:
    return v.values if isinstance(v, DesignVector) else v


def _replace(v: Design, values: torch.Tensor) -> Design:
    return v.with_values(values) if isinstance(v, DesignVector) else values


def _plain(f: Callable[[Design], torch.Tensor], v: Design, values: torch.Tensor) -> float:
    with torch.no_grad():
        return float(f(_replace(v, values)))


def evaluate_with_gradient(f: Callable[[Design], torch.Tensor], v: Design) -> DifferentiableScalar:
    """Value and exact gradient of the scalar f at v.

    Gradients may be non-finite; callers that step on them check
    DifferentiableScalar.finite.
    """
    leaf = _values(v).detach().clone().to(torch.float64).requires_grad_(True)
    with DifferentiabilityGuard():
        out = f(_replace(v, leaf))
    if not isinstance(out, torch.Tensor):
        out = torch.as_tensor(out, dtype=torch.float64)
    if out.numel() != 1:
        raise DomainError(f"design-path function must return a scalar, got shape {tuple(out.shape)}")
    out = out.reshape(())

    if out.requires_grad:
        (gradient,) = torch.autograd.grad(out, leaf, allow_unused=True)
        if gradient is None:
            gradient = torch.zeros_like(leaf)
    else:
        gradient = torch.zeros_like(leaf)
    return DifferentiableScalar(float(out.detach()), gradient.detach().numpy().copy())


def _central_differences(f, v: Design, base: torch.Tensor, steps: np.ndarray) -> np.ndarray:
    fd = np.zeros(len(steps))
    for i, h in enumerate(steps):
        plus = base.clone()
        minus = base.clone()
        plus[i] += h
        minus[i] -= h
        fd[i] = (_plain(f, v, plus) - _plain(f, v, minus)) / (2.0 * h)
    return fd


def _relative(a: np.ndarray, b: np.ndarray, floor: float) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def finite_difference_check(
    f: Callable[[Design], torch.Tensor],
    v: Design,
    step: float = 1e-6,
    norm: str = "max_rel",
    tolerance: float = 1e-4,
) -> GradientReport:
    """Propagated gradient against central differences at relative steps h and h/2.

    Entry i is perturbed by step * max(|v_i|, 1). Relative discrepancies are
    floored at 1e-8 of the largest gradient entry so that vanishing components
    do not divide by rounding noise. The report is step-sensitive when the two
    difference quotients disagree by more than `tolerance`.
    """
    if step <= 0.0:
        raise DomainError(f"finite-difference step must be positive, got {step}")
    if norm != "max_rel":
        raise DomainError(f"unknown discrepancy norm {norm!r}")

    result = evaluate_with_gradient(f, v)
    base = _values(v).detach().clone().to(torch.float64)
    steps = step * np.maximum(np.abs(base.numpy()), 1.0)
    fd = _central_differences(f, v, base, steps)
    fd_half = _central_differences(f, v, base, 0.5 * steps)

    scale = max(np.abs(result.gradient).max(initial=0.0), np.abs(fd).max(initial=0.0))
    floor = max(1e-8 * scale, 1e-300)
    rel = _relative(result.gradient, fd, floor)
    rel_half = _relative(result.gradient, fd_half, floor)
    drift = _relative(fd, fd_half, floor)

    report = GradientReport(
        value=result.value,
        gradient=result.gradient.tolist(),
        fd_gradient=fd.tolist(),
        fd_gradient_half=fd_half.tolist(),
        rel_discrepancy=rel.tolist(),
        max_rel_discrepancy=float(rel.max(initial=0.0)),
        max_rel_discrepancy_half=float(rel_half.max(initial=0.0)),
        step=step,
        norm=norm,
        step_sensitive=bool(drift.max(initial=0.0) > tolerance),
    )
    if report.step_sensitive:
        logger.warning(f"Finite differences drift between h={step:g} and h/2 (max {drift.max():.3e})")
    return report


def gradient_table(report: GradientReport, names: List[str]) -> str:
    """Plain-text per-parameter comparison"""
    lines = [f"{'parameter':<40} {'propagated':>16} {'central':>16} {'rel':>10}"]
    for name, g, fd, rel in zip(names, report.gradient, report.fd_gradient, report.rel_discrepancy):
        lines.append(f"{name:<40} {g:>16.8e} {fd:>16.8e} {rel:>10.2e}")
    lines.append(f"max relative discrepancy {report.max_rel_discrepancy:.3e} "
                 f"(h/2: {report.max_rel_discrepancy_half:.3e}, step-sensitive: {report.step_sensitive})")
    return "\n".join(lines)
