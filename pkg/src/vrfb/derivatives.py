"""Derivative engine for residual assembly and training.

First and second spatial derivatives of the composed
normalization -> subnet -> output-transform map come from nested
reverse-mode sweeps; gradients of scalar losses with respect to network
parameters use a single reverse sweep.  The self-adaptive weight gradient
has a closed form and never touches the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .physics import Side


@dataclass
class DiffBundle:
    """Per-sample values and spatial derivatives of one half-cell's outputs.

    Every tensor has the batch shape; derivatives are with respect to the
    physical coordinates (the input normalization's chain factors are
    already folded in by differentiating through the composed map).
    """

    c: torch.Tensor
    phi_l: torch.Tensor
    phi_s: torch.Tensor
    dc_dx: torch.Tensor
    dc_dy: torch.Tensor
    dphil_dx: torch.Tensor
    dphil_dy: torch.Tensor
    dphis_dx: torch.Tensor
    dphis_dy: torch.Tensor
    d2c_dx2: torch.Tensor
    d2c_dy2: torch.Tensor
    d2phil_dx2: torch.Tensor
    d2phil_dy2: torch.Tensor
    d2phis_dx2: torch.Tensor
    d2phis_dy2: torch.Tensor

    def check_finite(self, where: str = ""):
        for name, t in self.__dict__.items():
            if not torch.all(torch.isfinite(t)):
                bad = int(torch.nonzero(~torch.isfinite(t))[0, 0])
                raise FloatingPointError(
                    f"non-finite {name} at sample {bad} {where}".strip())


def eval_with_spatial_derivatives(net, side: Side, x: torch.Tensor,
                                  y: torch.Tensor, soc: torch.Tensor,
                                  second: bool = True,
                                  create_graph: bool = True) -> DiffBundle:
    """Values plus d/dx, d/dy and (optionally) d2/dx2, d2/dy2 of the three
    physical outputs of one subnet at a batch of (x, y, soc) points."""
    if x.numel() == 0:
        raise ValueError("empty batch")
    x = x.detach().clone().requires_grad_(True)
    y = y.detach().clone().requires_grad_(True)
    outputs = net.forward_physical(side, x, y, soc)

    def grad_or_zero(out, wrt, create):
        if not out.requires_grad:  # already constant in every input
            return tuple(torch.zeros_like(w) for w in wrt)
        gs = torch.autograd.grad(out.sum(), wrt, create_graph=create,
                                 retain_graph=True, allow_unused=True)
        return tuple(torch.zeros_like(w) if g is None else g
                     for g, w in zip(gs, wrt))

    firsts, seconds = [], []
    for out in outputs:
        out = out + 0.0 * x  # constant outputs still get zero-valued grads
        gx, gy = grad_or_zero(out, (x, y), create=True)
        firsts.append((gx, gy))
        if second:
            gxx, = grad_or_zero(gx, (x,), create=create_graph)
            gyy, = grad_or_zero(gy, (y,), create=create_graph)
            seconds.append((gxx, gyy))
        else:
            z = torch.zeros_like(out)
            seconds.append((z, z))

    (c, pl, ps) = outputs
    return DiffBundle(
        c=c, phi_l=pl, phi_s=ps,
        dc_dx=firsts[0][0], dc_dy=firsts[0][1],
        dphil_dx=firsts[1][0], dphil_dy=firsts[1][1],
        dphis_dx=firsts[2][0], dphis_dy=firsts[2][1],
        d2c_dx2=seconds[0][0], d2c_dy2=seconds[0][1],
        d2phil_dx2=seconds[1][0], d2phil_dy2=seconds[1][1],
        d2phis_dx2=seconds[2][0], d2phis_dy2=seconds[2][1],
    )


@dataclass(frozen=True)
class EvalRequest:
    """One batch of points to evaluate through one half-cell subnet."""
    key: str
    side: Side
    x: torch.Tensor
    y: torch.Tensor
    soc: torch.Tensor
    second: bool = False


def eval_many(net, requests) -> dict:
    """Evaluate several point batches and share backward sweeps across them.

    All requests' graphs are disjoint in their spatial leaves, so one
    reverse sweep per output component recovers every batch's derivative at
    once: 3 sweeps for first derivatives plus 6 for the second derivatives
    of the batches that ask for them, independent of the number of batches.
    Returns {key: DiffBundle}.
    """
    if not requests:
        raise ValueError("no evaluation requests")
    leaves, outputs = [], []
    for req in requests:
        if req.x.numel() == 0:
            raise ValueError(f"empty batch for request {req.key!r}")
        x = req.x.detach().clone().requires_grad_(True)
        y = req.y.detach().clone().requires_grad_(True)
        outs = net.forward_physical(req.side, x, y, req.soc)
        # constant outputs still participate in the shared sweeps
        outs = tuple(o + 0.0 * x for o in outs)
        leaves.append((x, y))
        outputs.append(outs)

    wrt = [t for pair in leaves for t in pair]

    def sweep(outs, inputs):
        gs = torch.autograd.grad([o.sum() for o in outs], inputs,
                                 create_graph=True, retain_graph=True,
                                 allow_unused=True)
        return [torch.zeros_like(t) if g is None else g
                for g, t in zip(gs, inputs)]

    firsts = []  # per output component: flat list alternating (gx, gy) per request
    for k in range(3):
        firsts.append(sweep([outs[k] for outs in outputs], wrt))

    second_idx = [i for i, req in enumerate(requests) if req.second]
    seconds = {k: {} for k in range(3)}
    if second_idx:
        xs = [leaves[i][0] for i in second_idx]
        ys = [leaves[i][1] for i in second_idx]
        for k in range(3):
            gxx = sweep([firsts[k][2 * i] for i in second_idx], xs)
            gyy = sweep([firsts[k][2 * i + 1] for i in second_idx], ys)
            for j, i in enumerate(second_idx):
                seconds[k][i] = (gxx[j], gyy[j])

    bundles = {}
    for i, req in enumerate(requests):
        z = torch.zeros_like(outputs[i][0])
        f = [(firsts[k][2 * i], firsts[k][2 * i + 1]) for k in range(3)]
        s = [seconds[k].get(i, (z, z)) for k in range(3)]
        bundles[req.key] = DiffBundle(
            c=outputs[i][0], phi_l=outputs[i][1], phi_s=outputs[i][2],
            dc_dx=f[0][0], dc_dy=f[0][1],
            dphil_dx=f[1][0], dphil_dy=f[1][1],
            dphis_dx=f[2][0], dphis_dy=f[2][1],
            d2c_dx2=s[0][0], d2c_dy2=s[0][1],
            d2phil_dx2=s[1][0], d2phil_dy2=s[1][1],
            d2phis_dx2=s[2][0], d2phis_dy2=s[2][1],
        )
    return bundles


def loss_gradient(loss: torch.Tensor, parameters) -> torch.Tensor:
    """Flat gradient of a scalar loss; detached parameters give explicit
    zeros rather than missing entries."""
    params = list(parameters)
    grads = torch.autograd.grad(loss, params, allow_unused=True,
                                retain_graph=False)
    flat = []
    for p, g in zip(params, grads):
        flat.append(torch.zeros_like(p).reshape(-1) if g is None else g.reshape(-1))
    return torch.cat(flat)


def sa_weight_gradient(residual_sq, weights):
    """Closed-form ascent gradient M'(w) * r^2 with mask M(x) = x^2."""
    return 2.0 * weights * residual_sq
