"""Central finite-difference verification of autograd gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .exceptions import GradientCheckError


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    worst: tuple | None = None  # (tensor name, flat index)
    per_tensor: dict = field(default_factory=dict)
    evaluations: int = 0

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def __bool__(self):
        return self.passed


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps coordinates whose true gradient is ~0 from dominating
    through round-off in the numeric estimate.
    """
    denom = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()), torch.full_like(analytic, floor))
    return (analytic - numeric).abs() / denom


def gradient_check(op, x, params=(), tolerance=1e-4, step=1e-5, floor=1e-6):
    """Compare autograd gradients of ``sum(op(x, *params))`` with central differences.

    Every tensor is promoted to float64.  ``params`` may be a sequence of
    tensors or a mapping name -> tensor; gradients are checked for ``x`` and
    for every parameter.  Raises ``GradientCheckError`` naming the coordinate
    of the first non-finite gradient.
    """
    if isinstance(params, dict):
        names = ["input", *params]
        tensors = [x, *params.values()]
    else:
        names = ["input"] + [f"param{i}" for i in range(len(params))]
        tensors = [x, *params]
    leaves = [t.detach().to(torch.float64).clone().requires_grad_(True) for t in tensors]

    out = op(*leaves).sum()
    analytic = torch.autograd.grad(out, leaves, allow_unused=True)
    analytic = [torch.zeros_like(t) if g is None else g for t, g in zip(leaves, analytic)]

    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance)
    with torch.no_grad():
        values = [t.detach().clone() for t in leaves]
        for k, (name, base) in enumerate(zip(names, values)):
            flat = base.view(-1)
            numeric = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                f_plus = op(*values).sum().item()
                flat[i] = orig - step
                f_minus = op(*values).sum().item()
                flat[i] = orig
                numeric[i] = (f_plus - f_minus) / (2 * step)
                report.evaluations += 2
            grad = analytic[k].reshape(-1)
            for label, g in (("analytic", grad), ("numeric", numeric)):
                bad = (~torch.isfinite(g)).nonzero()
                if bad.numel():
                    idx = int(bad[0])
                    raise GradientCheckError(f"non-finite {label} gradient for {name} at flat index {idx}",
                                             coordinate=(name, idx))
            err = relative_error(grad, numeric, floor)
            worst = int(err.argmax())
            report.per_tensor[name] = float(err[worst])
            if err[worst] > report.max_rel_error or report.worst is None:
                report.max_rel_error = float(err[worst])
                report.worst = (name, worst)
    return report
