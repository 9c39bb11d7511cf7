"""Two-phase training loop: Adam with a stepped learning-rate decay and
simultaneous self-adaptive weight ascent, then L-BFGS with the weights
frozen at their final Adam values.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .loss import SAWeights, total_loss, VARIANT_PINN, VARIANT_EPINN_DATA, VARIANTS
from .network import CompositeNet
from .physics import CellParameters, Stage
from .sampling import SamplingConfig, SamplingPlan, LabeledSet, build_sampling_plan


@dataclass(frozen=True)
class TrainConfig:
    variant: str = VARIANT_PINN
    width: int = 50
    depth: int = 6
    adam_iters: int = 36000
    lbfgs_iters: int = 4000
    lr0: float = 1e-3
    lr_decay: float = 0.99
    lr_step: int = 200
    rho: float = 0.1            # self-adaptive ascent rate
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    lbfgs_history: int = 50
    lbfgs_tol_grad: float = 1e-9
    log_every: int = 100
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in ("adam_iters", "lbfgs_iters", "lr_step", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def desk_scale(cls, variant: str = VARIANT_PINN) -> "TrainConfig":
        """Small-budget preset that trains in minutes on a laptop CPU."""
        return cls(variant=variant, width=32, depth=2,
                   adam_iters=4000, lbfgs_iters=500,
                   sampling=SamplingConfig.desk_scale())

    def learning_rate(self, k: int) -> float:
        return self.lr0 * self.lr_decay ** (k // self.lr_step)


@dataclass
class TrainResult:
    net: CompositeNet
    weights: SAWeights
    history: list
    final_loss: float
    elapsed_s: float


def adam_phase(net: CompositeNet, plan: SamplingPlan, weights: SAWeights,
               config: TrainConfig, labeled: LabeledSet | None = None,
               log=None) -> list:
    """Adam on the network parameters and plain gradient ascent on the
    self-adaptive weights, interleaved every iteration."""
    opt = torch.optim.Adam(net.parameters(), lr=config.lr0,
                           betas=config.adam_betas, eps=config.adam_eps)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=config.lr_step,
                                            gamma=config.lr_decay)
    history = []
    for k in range(config.adam_iters):
        opt.zero_grad(set_to_none=True)
        loss, breakdown, r2 = total_loss(net, plan, weights,
                                         config.variant, labeled)
        loss.backward()
        lr_used = opt.param_groups[0]["lr"]
        opt.step()
        sched.step()
        weights.ascend(r2, config.rho)
        if k % config.log_every == 0 or k == config.adam_iters - 1:
            rec = {"phase": "adam", "iter": k, "loss": float(loss.detach()),
                   "lr": lr_used,
                   "epinn": breakdown.epinn, "data": breakdown.data}
            history.append(rec)
            if log:
                log(rec)
    return history


def lbfgs_phase(net: CompositeNet, plan: SamplingPlan, weights: SAWeights,
                config: TrainConfig, labeled: LabeledSet | None = None,
                log=None) -> list:
    """Full-batch L-BFGS with strong-Wolfe line search; the self-adaptive
    weights stay frozen.  Keeps the best-loss parameters seen, so a late
    line-search failure cannot hand back a worse model."""
    opt = torch.optim.LBFGS(net.parameters(), max_iter=config.lbfgs_iters,
                            history_size=config.lbfgs_history,
                            tolerance_grad=config.lbfgs_tol_grad,
                            tolerance_change=0.0,
                            line_search_fn="strong_wolfe")
    history = []
    frozen = {k: w.clone() for k, w in weights.weights.items()}
    best = {"loss": math.inf, "state": None}
    n_eval = [0]

    def closure():
        opt.zero_grad(set_to_none=True)
        loss, _, _ = total_loss(net, plan, weights, config.variant, labeled)
        loss.backward()
        val = float(loss.detach())
        if math.isfinite(val) and val < best["loss"]:
            best["loss"] = val
            best["state"] = [p.detach().clone() for p in net.parameters()]
        if n_eval[0] % config.log_every == 0:
            rec = {"phase": "lbfgs", "iter": n_eval[0], "loss": val}
            history.append(rec)
            if log:
                log(rec)
        n_eval[0] += 1
        return loss

    opt.step(closure)
    if best["state"] is not None:
        with torch.no_grad():
            for p, b in zip(net.parameters(), best["state"]):
                p.copy_(b)
    for k, w in weights.weights.items():
        if not torch.equal(w, frozen[k]):
            raise RuntimeError("self-adaptive weights changed during L-BFGS")
    history.append({"phase": "lbfgs", "iter": n_eval[0], "loss": best["loss"]})
    if log:
        log(history[-1])
    return history


def train(params: CellParameters, stage: Stage, config: TrainConfig,
          seed: int = 0, labeled: LabeledSet | None = None,
          log=None) -> TrainResult:
    """Build the point sets and network from `seed`, then run both phases."""
    if config.variant == VARIANT_EPINN_DATA and (labeled is None or len(labeled) == 0):
        raise ValueError("variant 'epinn-data' requires labeled data")
    t0 = time.perf_counter()
    torch.manual_seed(seed)
    plan = build_sampling_plan(params, config.sampling, seed)
    net = CompositeNet(params, stage, width=config.width, depth=config.depth,
                       seed=seed)
    n_data = len(labeled) if labeled is not None else 0
    weights = SAWeights(plan, n_data=n_data)
    history = adam_phase(net, plan, weights, config, labeled, log)
    history += lbfgs_phase(net, plan, weights, config, labeled, log)
    final = history[-1]["loss"]
    return TrainResult(net=net, weights=weights, history=history,
                       final_loss=final, elapsed_s=time.perf_counter() - t0)


class PINNModel:
    """Estimator-style wrapper: configure, fit, predict.

    Parameters mirror TrainConfig; `fit` trains from scratch and `predict`
    evaluates the fitted network at physical coordinates.
    """

    def __init__(self, variant: str = VARIANT_PINN, width: int = 50,
                 depth: int = 6, adam_iters: int = 36000,
                 lbfgs_iters: int = 4000, seed: int = 0,
                 desk_scale: bool = False):
        self.variant = variant
        self.width = width
        self.depth = depth
        self.adam_iters = adam_iters
        self.lbfgs_iters = lbfgs_iters
        self.seed = seed
        self.desk_scale = desk_scale

    def get_params(self, deep: bool = True) -> dict:
        return {"variant": self.variant, "width": self.width,
                "depth": self.depth, "adam_iters": self.adam_iters,
                "lbfgs_iters": self.lbfgs_iters, "seed": self.seed,
                "desk_scale": self.desk_scale}

    def set_params(self, **kw) -> "PINNModel":
        for k, v in kw.items():
            if k not in self.get_params():
                raise ValueError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def _config(self) -> TrainConfig:
        if self.desk_scale:
            base = TrainConfig.desk_scale(self.variant)
            return TrainConfig(variant=self.variant, width=base.width,
                               depth=base.depth, adam_iters=base.adam_iters,
                               lbfgs_iters=base.lbfgs_iters,
                               sampling=base.sampling)
        return TrainConfig(variant=self.variant, width=self.width,
                           depth=self.depth, adam_iters=self.adam_iters,
                           lbfgs_iters=self.lbfgs_iters)

    def fit(self, params: CellParameters, stage: Stage,
            labeled: LabeledSet | None = None, log=None) -> "PINNModel":
        self.result_ = train(params, Stage.from_string(stage)
                             if isinstance(stage, str) else stage,
                             self._config(), seed=self.seed,
                             labeled=labeled, log=log)
        self.net_ = self.result_.net
        return self

    def predict(self, side, x, y, soc):
        """(c, phi_l, phi_s) numpy arrays at physical points."""
        if not hasattr(self, "net_"):
            raise RuntimeError("call fit() first")
        from .network import DTYPE
        t = lambda v: torch.as_tensor(np.asarray(v, dtype=float), dtype=DTYPE)
        with torch.no_grad():
            out = self.net_.forward_physical(side, t(x), t(y), t(soc))
        return tuple(o.numpy() for o in out)
