"""Conditional restoration super network.

Topology: strided 3->C head conv, B residual blocks (conv-ReLU-conv with a
task-conditioned channel-wise residual scale), a task-conditioned global
connection, and a pixel-shuffle upsampling tail with a global skip from the
input image.

Channel-selection (CS) sites sit at conv input/output ports, except the
head conv's input, the pixel-shuffle module's channels, and the last
conv's output. A conv output feeding the next conv inside a block shares
one site with that conv's input, so masks stay slice-consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class SuperNetConfig:
    blocks: int = 4
    channels: int = 16
    kernel: int = 3
    task_dim: int = 3
    upscale: int = 2  # matches the stride-2 head

    def __post_init__(self):
        if self.blocks < 1 or self.channels < 4:
            raise ValueError(f"invalid config: {self}")
        if self.channels % (self.upscale ** 2) != 0:
            raise ValueError("channels must be divisible by upscale^2")

    @property
    def num_sites(self) -> int:
        # head.out + 3 per block (conv1.in, mid, conv2.out) + tail mid
        return 3 * self.blocks + 2

    def to_dict(self):
        return {"blocks": self.blocks, "channels": self.channels,
                "kernel": self.kernel, "task_dim": self.task_dim,
                "upscale": self.upscale}

    @staticmethod
    def from_dict(d):
        return SuperNetConfig(**d)


@dataclass(frozen=True)
class CsSite:
    """One channel-selection site: which layer port(s) it gates."""
    index: int
    name: str
    width: int


def cs_sites(config: SuperNetConfig):
    """Ordered CS site descriptors, network-topological order."""
    sites = [CsSite(0, "head.out", config.channels)]
    i = 1
    for b in range(config.blocks):
        sites.append(CsSite(i, f"block{b}.conv1.in", config.channels)); i += 1
        sites.append(CsSite(i, f"block{b}.mid", config.channels)); i += 1
        sites.append(CsSite(i, f"block{b}.conv2.out", config.channels)); i += 1
    sites.append(CsSite(i, "tail.mid", config.channels))
    return sites


def _kaiming(rng, shape, fan_in, dtype):
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype),
                  requires_grad=True)


class SuperNet:
    """Parameter container plus the gated forward pass."""

    def __init__(self, config: SuperNetConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        C, k, D = config.channels, config.kernel, config.task_dim
        s = config.upscale

        def conv_param(cout, cin, name):
            w = _kaiming(rng, (cout, cin, k, k), cin * k * k, dtype)
            b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
            self.params[name + ".w"] = w
            self.params[name + ".b"] = b
            return w, b

        self.params: dict[str, Tensor] = {}
        self.head = conv_param(C, 3, "head")
        self.blocks = []
        for i in range(config.blocks):
            conv1 = conv_param(C, C, f"block{i}.conv1")
            conv2 = conv_param(C, C, f"block{i}.conv2")
            # bias-free 1x1 projection of the task vector to a residual scale
            scale_w = Tensor(rng.normal(0.0, 0.1, size=(C, D)).astype(dtype),
                            requires_grad=True)
            self.params[f"block{i}.scale.w"] = scale_w
            self.blocks.append((conv1, conv2, scale_w))
        gscale = Tensor(rng.normal(0.0, 0.1, size=(C, D)).astype(dtype),
                        requires_grad=True)
        self.params["global.scale.w"] = gscale
        self.global_scale = gscale
        self.tail1 = conv_param(C, C // (s * s), "tail1")
        self.tail2 = conv_param(3, C, "tail2")
        # near-zero last conv: the network starts at the identity mapping
        # (global skip only) instead of adding large random residuals that
        # optimization first has to unlearn
        self.tail2[0].data[:] *= 0.01

    def parameters(self):
        return list(self.params.values())

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    @staticmethod
    def _gate_scale(gate_row, n, dtype):
        """Tile a per-channel {0,1} (or probability) row into [N,C,1,1]."""
        return Tensor(np.broadcast_to(
            np.asarray(gate_row, dtype=dtype).reshape(1, -1, 1, 1),
            (n, len(gate_row), 1, 1)).copy())

    def _cond_scale(self, scale_w: Tensor, t: Tensor) -> Tensor:
        """[N,D] task batch -> [N,C,1,1] channel scale via 1x1 projection."""
        s = T.fully_connected(t, scale_w)
        n, c = s.shape
        out = Tensor(s.data.reshape(n, c, 1, 1), dtype=s.data.dtype)
        out.requires_grad = s.requires_grad
        out._parents = (s,)
        out._backward = lambda g: s._accumulate(g.reshape(n, c))
        return out

    def forward(self, x: Tensor, t: Tensor, gates=None,
                prefix_task_free: int = 0) -> Tensor:
        """Gated conditional forward.

        x: [N,3,H,W] with even H,W; t: [N,D] task batch; gates: optional
        list of per-site gate tensors, each [N,C,1,1] (values typically
        from ste_gate). `prefix_task_free` marks the number of leading CS
        sites whose conditioning is removed (task-agnostic prefix
        semantics); within that region residual scales are skipped.
        """
        cfg = self.config
        n, cin, h, w = x.shape
        if cin != 3 or h % 2 or w % 2:
            raise T.ShapeError(f"forward expects [N,3,even,even], got {x.shape}")

        def gated(z, site):
            if gates is None:
                return z
            return T.scale_channels(z, gates[site])

        trunk = T.conv2d(x, *self.head, stride=2, padding=cfg.kernel // 2)
        trunk = gated(trunk, 0)
        head_out = trunk
        site = 1
        for bi, (conv1, conv2, scale_w) in enumerate(self.blocks):
            z = gated(trunk, site)
            z = T.conv2d(z, *conv1, padding=cfg.kernel // 2)
            z = gated(T.relu(z), site + 1)
            z = T.conv2d(z, *conv2, padding=cfg.kernel // 2)
            z = gated(z, site + 2)
            if site + 2 >= prefix_task_free:
                z = T.scale_channels(z, self._cond_scale(scale_w, t))
            trunk = trunk + z
            site += 3
        if site - 1 >= prefix_task_free:
            gcond = T.scale_channels(trunk, self._cond_scale(self.global_scale, t))
            trunk = head_out + gcond
        else:
            trunk = head_out + trunk
        up = T.pixel_shuffle(trunk, cfg.upscale)
        z = T.relu(T.conv2d(up, *self.tail1, padding=cfg.kernel // 2))
        z = gated(z, site)
        out = T.conv2d(z, *self.tail2, padding=cfg.kernel // 2)
        return out + x


def conv_layers(config: SuperNetConfig):
    """Static per-conv descriptors for cost accounting: (name, cin, cout,
    kernel, stride, in_site, out_site, full_res) where sites are CS
    indices or None for ungated ports and full_res says whether the conv's
    output lives at input resolution (tail) or feature resolution."""
    C, k = config.channels, config.kernel
    s = config.upscale
    layers = [("head", 3, C, k, 2, None, 0, False)]
    site = 1
    for b in range(config.blocks):
        layers.append((f"block{b}.conv1", C, C, k, 1, site, site + 1, False))
        layers.append((f"block{b}.conv2", C, C, k, 1, site + 1, site + 2, False))
        site += 3
    layers.append(("tail1", C // (s * s), C, k, 1, None, site, True))
    layers.append(("tail2", C, 3, k, 1, site, None, True))
    return layers
