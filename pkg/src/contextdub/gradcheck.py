"""Central finite-difference verification of analytic gradients.

The checker perturbs parameter entries in place, re-evaluates a loss
closure, and compares the symmetric difference quotient against the
gradient produced by backpropagation. Loss closures must be pure given
the current parameter values: run models in evaluation mode, or note
that batch-norm running buffers never enter a training-mode loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLossError

# Relative error floor: when |fd| + |analytic| falls below this, the
# comparison is dominated by finite-difference roundoff (absolute noise
# around 1e-10 at the default epsilon), so such entries compare against
# the floor instead of amplifying noise. Genuine errors above 1e-9 in
# absolute size still register.
_DENOM_FLOOR = 1e-5


@dataclass
class ParameterCheck:
    name: str
    max_relative_error: float
    mean_relative_error: float
    entries_checked: int
    worst_entry: tuple = ()


@dataclass
class GradCheckReport:
    parameters: list = field(default_factory=list)

    @property
    def max_relative_error(self):
        return max((p.max_relative_error for p in self.parameters), default=0.0)

    @property
    def mean_relative_error(self):
        errs = [p.mean_relative_error for p in self.parameters]
        return float(np.mean(errs)) if errs else 0.0

    def passed(self, tolerance):
        return self.max_relative_error < tolerance

    def failing_parameters(self, tolerance):
        return [p.name for p in self.parameters if p.max_relative_error >= tolerance]

    def __str__(self):
        lines = [f"{'parameter':40s} {'max rel err':>12s} {'mean rel err':>12s} {'entries':>8s}"]
        for p in self.parameters:
            lines.append(
                f"{p.name:40s} {p.max_relative_error:12.3e} "
                f"{p.mean_relative_error:12.3e} {p.entries_checked:8d}"
            )
        lines.append(f"overall max {self.max_relative_error:.3e} "
                     f"mean {self.mean_relative_error:.3e}")
        return "\n".join(lines)


def _eval_loss(loss_fn, context):
    value = loss_fn()
    scalar = float(value.data if hasattr(value, "data") else value)
    if not np.isfinite(scalar):
        raise NonFiniteLossError(scalar, context)
    return scalar


def analytic_gradients(loss_fn, named_params):
    """Backpropagate the loss once and return {name: gradient array}."""
    params = dict(named_params)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    scalar = float(loss.data)
    if not np.isfinite(scalar):
        raise NonFiniteLossError(scalar, "analytic gradient pass")
    loss.backward()
    return {
        name: (np.zeros_like(p.data) if p.grad is None else np.array(p.grad))
        for name, p in params.items()
    }


def compare_gradients(loss_fn, named_params, analytic, epsilon=3e-5,
                      entries_per_param=None, rng=None):
    """Check provided analytic gradients against central differences.

    ``entries_per_param`` limits how many entries of each parameter are
    perturbed (sampled with ``rng``); every parameter tensor is always
    covered. Perturbation size scales with entry magnitude.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    if rng is None:
        rng = np.random.default_rng(0)
    report = GradCheckReport()
    for name, param in named_params:
        flat = param.data.reshape(-1)
        grad = analytic[name].reshape(-1)
        n = flat.size
        if entries_per_param is not None and entries_per_param < n:
            idx = rng.choice(n, size=entries_per_param, replace=False)
        else:
            idx = np.arange(n)
        errors = np.empty(len(idx))
        worst = ()
        for pos, i in enumerate(idx):
            original = flat[i]
            step = epsilon * max(1.0, abs(original))
            flat[i] = original + step
            plus = _eval_loss(loss_fn, f"{name}[{i}] + eps")
            flat[i] = original - step
            minus = _eval_loss(loss_fn, f"{name}[{i}] - eps")
            flat[i] = original
            fd = (plus - minus) / (2.0 * step)
            denom = max(abs(fd) + abs(grad[i]), _DENOM_FLOOR)
            errors[pos] = abs(fd - grad[i]) / denom
            if not worst or errors[pos] > worst[1]:
                worst = (int(i), float(errors[pos]), float(fd), float(grad[i]))
        report.parameters.append(ParameterCheck(
            name=name,
            max_relative_error=float(errors.max()),
            mean_relative_error=float(errors.mean()),
            entries_checked=len(idx),
            worst_entry=worst,
        ))
    return report


def gradient_check(loss_fn, named_params, epsilon=3e-5,
                   entries_per_param=None, rng=None):
    """Full check: backprop once, then finite-difference every parameter."""
    named_params = list(named_params)
    analytic = analytic_gradients(loss_fn, named_params)
    return compare_gradients(loss_fn, named_params, analytic, epsilon=epsilon,
                             entries_per_param=entries_per_param, rng=rng)
