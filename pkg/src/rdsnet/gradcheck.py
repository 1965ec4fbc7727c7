"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rdsnet.autograd import backward


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    parameter_name: str
    probe_count: int


def relative_error(analytic, numeric, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients from dividing by noise."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(loss_fn, params, probes=50, eps=1e-5, seed=0, floor=1e-6):
    """Compare analytic and central-difference gradients at random entries.

    ``loss_fn`` is called with no arguments and must return a scalar tensor
    built from ``params`` (a mapping of name to tensor). Entries are sampled
    uniformly without replacement over all parameter elements.
    """
    names = list(params)
    for t in params.values():
        t.zero_grad()
    backward(loss_fn())
    analytic = {n: (params[n].grad if params[n].grad is not None else np.zeros(params[n].shape))
                for n in names}

    sizes = np.array([params[n].size for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(probes, total), replace=False)
    offsets = np.cumsum(sizes)

    worst, worst_name = 0.0, names[0]
    for flat in picks:
        which = int(np.searchsorted(offsets, flat, side="right"))
        name = names[which]
        local = int(flat - (offsets[which] - sizes[which]))
        view = params[name].data.reshape(-1)
        orig = view[local]
        view[local] = orig + eps
        up = loss_fn().item()
        view[local] = orig - eps
        down = loss_fn().item()
        view[local] = orig
        numeric = (up - down) / (2.0 * eps)
        err = relative_error(analytic[name].reshape(-1)[local], numeric, floor)
        if err >= worst:
            worst, worst_name = err, f"{name}[{local}]"
    return GradCheckReport(max_relative_error=float(worst), parameter_name=worst_name,
                           probe_count=int(len(picks)))
