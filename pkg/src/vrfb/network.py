"""Composite approximator: two gated feedforward subnets plus the input
normalization and the range-limiting output transforms.

Each subnet maps the normalized (x, y, SOC) to the three raw outputs of its
half cell; the smooth sine/affine transforms then pin concentrations and
potentials into their physically admissible ranges, so the network can never
leave the trust region the residuals are evaluated in.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .physics import CellParameters, Side, Stage

DTYPE = torch.float64

# Self-defined (min, max) normalization ranges for the potentials.
POTENTIAL_RANGES = {
    Stage.CHARGING: {
        "phil_neg": (0.25, 0.60), "phis_neg": (0.0, 0.30),
        "phil_pos": (0.30, 0.60), "phis_pos": (1.40, 2.20),
    },
    Stage.DISCHARGING: {
        "phil_neg": (-0.20, 0.25), "phis_neg": (-0.1, 0.0),
        "phil_pos": (-0.25, 0.20), "phis_pos": (0.30, 1.50),
    },
}


def swish(x):
    return x * torch.sigmoid(x)


class ModifiedFNN(nn.Module):
    """Feedforward net with two encoder streams blended into every layer.

    Forward pass:
        U = f(W_U x + b_U),  V = f(W_V x + b_V)
        y1 = f(W1 x + b1)
        Zl = f(Wl y_{l-1} + bl),  yl = (1 - Zl) * U + Zl * V   (l = 2..L)
        y  = W_{L+1} y_L + b_{L+1}
    """

    def __init__(self, n_in: int = 3, n_out: int = 3, width: int = 50,
                 depth: int = 6):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.n_in, self.n_out, self.width, self.depth = n_in, n_out, width, depth
        self.enc_u = nn.Linear(n_in, width, dtype=DTYPE)
        self.enc_v = nn.Linear(n_in, width, dtype=DTYPE)
        layers = [nn.Linear(n_in, width, dtype=DTYPE)]
        layers += [nn.Linear(width, width, dtype=DTYPE) for _ in range(depth - 1)]
        self.hidden = nn.ModuleList(layers)
        self.head = nn.Linear(width, n_out, dtype=DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        u = swish(self.enc_u(x))
        v = swish(self.enc_v(x))
        y = swish(self.hidden[0](x))
        for layer in self.hidden[1:]:
            z = swish(layer(y))
            y = (1.0 - z) * u + z * v
        return self.head(y)


def init_weights(net: ModifiedFNN, seed: int) -> ModifiedFNN:
    """Xavier-uniform weights (gain 1), zero biases; reproducible from seed."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, nn.Linear):
                fan_out, fan_in = module.weight.shape
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                module.weight.uniform_(-bound, bound, generator=g)
                module.bias.zero_()
    return net


class CompositeNet(nn.Module):
    """Two half-cell subnets plus the physical-unit transforms."""

    def __init__(self, params: CellParameters, stage: Stage, width: int = 50,
                 depth: int = 6, seed: int = 0):
        super().__init__()
        self.params = params
        self.stage = stage
        self.width, self.depth, self.seed = width, depth, seed
        self.subnet_neg = init_weights(ModifiedFNN(3, 3, width, depth), seed)
        self.subnet_pos = init_weights(ModifiedFNN(3, 3, width, depth), seed + 1)

    def subnet(self, side: Side) -> ModifiedFNN:
        return self.subnet_neg if side is Side.NEGATIVE else self.subnet_pos

    def normalize_input(self, side: Side, x, y, soc, validate: bool = True):
        """Affine map of physical (x, y, soc) onto [-1, 1]^3."""
        p = self.params
        x_lo, x_hi = side.x_range(p)
        if validate:
            for val, lo, hi, name in ((x, x_lo, x_hi, "x"), (y, 0.0, p.H, "y"),
                                      (soc, p.soc_min, p.soc_max, "soc")):
                arr = val.detach() if isinstance(val, torch.Tensor) else torch.as_tensor(val)
                if torch.any(arr < lo - 1e-9) or torch.any(arr > hi + 1e-9):
                    raise ValueError(f"{name} outside [{lo}, {hi}] for side {side.name}")
        xn = 2.0 * (x - x_lo) / (x_hi - x_lo) - 1.0
        yn = 2.0 * y / p.H - 1.0
        sn = 2.0 * (soc - p.soc_min) / (p.soc_max - p.soc_min) - 1.0
        return xn, yn, sn

    def transform_outputs(self, side: Side, raw: torch.Tensor, soc):
        """Map raw subnet outputs to (concentration, phi_l, phi_s) in
        physical units; concentrations use the stage-aware sine transform,
        potentials the affine map onto their predefined ranges."""
        p = self.params
        charge = float(self.stage.charge_flag)
        c_hat, pl_hat, ps_hat = raw[..., 0], raw[..., 1], raw[..., 2]
        s = torch.sin(c_hat * math.pi / 2.0)
        if side is Side.NEGATIVE:
            c = p.c0 * ((soc + charge) / 2.0 + (soc - charge) / 2.0 * s)
            lo_l, hi_l = POTENTIAL_RANGES[self.stage]["phil_neg"]
            lo_s, hi_s = POTENTIAL_RANGES[self.stage]["phis_neg"]
        else:
            c = p.c0 * ((2.0 - soc - charge) / 2.0 + (soc - charge) / 2.0 * s)
            lo_l, hi_l = POTENTIAL_RANGES[self.stage]["phil_pos"]
            lo_s, hi_s = POTENTIAL_RANGES[self.stage]["phis_pos"]
        # as defined, hat = +1 maps to the range minimum
        phi_l = (lo_l + hi_l) / 2.0 + (lo_l - hi_l) / 2.0 * pl_hat
        phi_s = (lo_s + hi_s) / 2.0 + (lo_s - hi_s) / 2.0 * ps_hat
        return c, phi_l, phi_s

    def forward_physical(self, side: Side, x, y, soc, validate: bool = False):
        """(c, phi_l, phi_s) in physical units at physical coordinates."""
        xn, yn, sn = self.normalize_input(side, x, y, soc, validate=validate)
        raw = self.subnet(side)(torch.stack([xn, yn, sn], dim=-1))
        return self.transform_outputs(side, raw, soc)

    def parameter_vector(self) -> np.ndarray:
        with torch.no_grad():
            return torch.cat([p.reshape(-1) for p in self.parameters()]).numpy().copy()


# --- checkpoint container ---------------------------------------------------

def save_model(net: CompositeNet, path, extra_metadata: dict | None = None):
    """Self-describing checkpoint: JSON manifest + little-endian float64 blob."""
    arrays = {name: t.detach().numpy().astype("<f8")
              for name, t in net.state_dict().items()}
    manifest = {
        "format": "vrfb-model-v1",
        "stage": net.stage.value,
        "width": net.width,
        "depth": net.depth,
        "seed": net.seed,
        "cell": net.params.to_dict(),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays.items()],
        "metadata": extra_metadata or {},
    }
    buf = io.BytesIO()
    for a in arrays.values():
        buf.write(a.tobytes())
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as z:
        z.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        z.writestr("arrays.bin", buf.getvalue())


def load_model(path) -> tuple[CompositeNet, dict]:
    with zipfile.ZipFile(path) as z:
        manifest = json.loads(z.read("manifest.json"))
        blob = z.read("arrays.bin")
    if manifest.get("format") != "vrfb-model-v1":
        raise ValueError(f"unrecognized model container {path}")
    params = CellParameters.from_dict(manifest["cell"])
    net = CompositeNet(params, Stage(manifest["stage"]), width=manifest["width"],
                       depth=manifest["depth"], seed=manifest["seed"])
    state = {}
    offset = 0
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += count * 8
        state[entry["name"]] = torch.from_numpy(arr.copy())
    net.load_state_dict(state)
    return net, manifest["metadata"]
