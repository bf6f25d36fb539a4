"""Central finite-difference verification of autograd gradients.

Compares analytic parameter gradients of a scalar loss against central
differences, elementwise. The relative error uses a floored denominator
max(|analytic|, |numeric|, floor) so that near-zero gradients are judged
on an absolute scale instead of amplified difference noise. Checks run in
float64; call .double() on modules first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
import torch
import torch.nn as nn


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    n_checked: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def finite_difference_check(loss_fn: Callable[[], torch.Tensor],
                            named_params: Iterable[tuple[str, nn.Parameter]],
                            samples_per_param: int | None = None,
                            step: float = 1e-5,
                            denom_floor: float = 1e-3,
                            seed: int = 0) -> GradCheckResult:
    """Compare autograd gradients of loss_fn against central differences.

    samples_per_param limits the elements checked per tensor (seeded
    choice, always including the largest-gradient element); None checks
    every element. loss_fn must rebuild the forward pass on each call.
    """
    params = [(name, p) for name, p in named_params if p.requires_grad]
    if not params:
        raise ValueError("no parameters to check")

    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)

    rng = np.random.default_rng(seed)
    max_rel, worst, n_checked = 0.0, "", 0
    for (name, param), grad in zip(params, grads):
        flat = param.detach().reshape(-1)
        gflat = (torch.zeros_like(flat) if grad is None else grad.reshape(-1))
        n = flat.numel()
        if samples_per_param is None or n <= samples_per_param:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=samples_per_param, replace=False)
            top = int(torch.argmax(gflat.abs()))
            if top not in idx:
                idx = np.append(idx[:-1], top)
        for i in idx:
            i = int(i)
            orig = float(flat[i])
            h = step * max(1.0, abs(orig))
            with torch.no_grad():
                flat[i] = orig + h
                up = float(loss_fn())
                flat[i] = orig - h
                down = float(loss_fn())
                flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            analytic = float(gflat[i])
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), denom_floor)
            n_checked += 1
            if rel > max_rel:
                max_rel, worst = rel, f"{name}[{i}]"
    return GradCheckResult(max_rel_err=max_rel, worst_param=worst, n_checked=n_checked)
